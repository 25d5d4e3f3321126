#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mtsmae/embedding.hpp"
#include "mtsmae/masking.hpp"
#include "mtsmae/ndarray.hpp"

namespace mtsmae {

struct ModelConfig {
  std::size_t d_model = 512;
  std::size_t n_heads = 8;
  std::size_t d_ff = 2048;
  std::size_t enc_layers = 3;
  std::size_t pretrain_dec_layers = 1;
  std::size_t finetune_dec_layers = 1;
  std::size_t patch_stride = 2;  // per stage; a patch spans patch_stride^2 steps
  double dropout = 0.05;
  std::size_t d_x = 7;
  std::size_t d_y = 7;
  std::size_t input_len = 784;
  std::size_t label_len = 48;
  std::size_t pred_len = 24;

  std::size_t patch_size() const { return patch_stride * patch_stride; }
  std::size_t num_patches() const { return input_len / patch_size(); }
  std::size_t label_tokens() const { return label_len / patch_size(); }
  std::size_t decoder_length() const { return label_tokens() + pred_len; }

  /// Throws a config error on the first violated constraint.
  void validate() const;

  /// Widths used for laptop-sized experiments and tests.
  static ModelConfig desk();
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

template <typename T>
struct NamedParameter {
  std::string name;
  NDArray<T> value;
};

template <typename T>
struct Linear {
  NDArray<T> weight;  // [in, out]
  NDArray<T> bias;    // [out]

  static Linear create(std::size_t in, std::size_t out, std::mt19937_64& rng);
  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "weight", weight);
    f(prefix + "bias", bias);
  }
};

template <typename T>
struct LayerNormParams {
  NDArray<T> gamma;
  NDArray<T> beta;

  static LayerNormParams create(std::size_t d);
  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "gamma", gamma);
    f(prefix + "beta", beta);
  }
};

// Projections are bias-free: a key bias cannot change any attention weight.
template <typename T>
struct AttentionParams {
  NDArray<T> wq, wk, wv, wo;  // [d_model, d_model]
  std::size_t n_heads = 1;

  static AttentionParams create(std::size_t d_model, std::size_t n_heads, std::mt19937_64& rng);
  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "wq", wq);
    f(prefix + "wk", wk);
    f(prefix + "wv", wv);
    f(prefix + "wo", wo);
  }
};

template <typename T>
struct MlpParams {
  Linear<T> fc1;  // d_model -> d_ff
  Linear<T> fc2;  // d_ff -> d_model

  static MlpParams create(std::size_t d_model, std::size_t d_ff, std::mt19937_64& rng);
  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    fc1.for_each(prefix + "fc1.", f);
    fc2.for_each(prefix + "fc2.", f);
  }
};

template <typename T>
struct EncoderBlockParams {
  AttentionParams<T> attn;
  LayerNormParams<T> norm1;
  MlpParams<T> mlp;
  LayerNormParams<T> norm2;

  static EncoderBlockParams create(const ModelConfig& cfg, std::mt19937_64& rng);
  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    attn.for_each(prefix + "attn.", f);
    norm1.for_each(prefix + "norm1.", f);
    mlp.for_each(prefix + "mlp.", f);
    norm2.for_each(prefix + "norm2.", f);
  }
};

template <typename T>
struct DecoderBlockParams {
  AttentionParams<T> self_attn;
  LayerNormParams<T> norm1;
  AttentionParams<T> cross_attn;
  LayerNormParams<T> norm2;
  MlpParams<T> mlp;
  LayerNormParams<T> norm3;

  static DecoderBlockParams create(const ModelConfig& cfg, std::mt19937_64& rng);
  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    self_attn.for_each(prefix + "self_attn.", f);
    norm1.for_each(prefix + "norm1.", f);
    cross_attn.for_each(prefix + "cross_attn.", f);
    norm2.for_each(prefix + "norm2.", f);
    mlp.for_each(prefix + "mlp.", f);
    norm3.for_each(prefix + "norm3.", f);
  }
};

/// Dropout state for one forward pass. Evaluation passes use the default.
struct ForwardMode {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
};

template <typename T>
NDArray<T> linear(const NDArray<T>& x, const Linear<T>& params);

/// Scaled dot-product attention split over heads (scale 1/sqrt(d_model/n_heads)).
/// With `causal`, query i only attends to keys j <= i.
template <typename T>
NDArray<T> multi_head_attention(const NDArray<T>& q_src, const NDArray<T>& kv_src,
                                const AttentionParams<T>& params, bool causal);

/// max(0, x W1 + b1) W2 + b2
template <typename T>
NDArray<T> mlp(const NDArray<T>& x, const MlpParams<T>& params);

/// z' = LN(z + MSA(z)); out = LN(z' + MLP(z'))
template <typename T>
NDArray<T> encoder_block(const NDArray<T>& z, const EncoderBlockParams<T>& params,
                         const ForwardMode& mode = {});

/// z' = LN(z + MMSA(z)); z'' = LN(z' + MSA(z', enc)); out = LN(z'' + MLP(z''))
template <typename T>
NDArray<T> decoder_block(const NDArray<T>& z, const NDArray<T>& enc_out,
                         const DecoderBlockParams<T>& params, const ForwardMode& mode = {});

/// Raw values grouped into consecutive windows of p^2 steps, each flattened
/// time-major into one row: [L_x / p^2, p^2 * d_x].
template <typename T>
NDArray<T> patchify(const NDArray<T>& x_raw, std::size_t patch_stride);

/// patchify() rows at the plan's masked ids.
template <typename T>
NDArray<T> reconstruction_targets(const NDArray<T>& x_raw, const MaskPlan& plan,
                                  std::size_t patch_stride);

template <typename T>
struct PretrainOutput {
  NDArray<T> reconstruction;  // [L, p^2 * d_x]
  NDArray<T> encoded;         // encoder output for visible tokens, [L_vis, d_model]
};

/// Encoder, reconstruction decoder and forecasting decoder with their heads.
/// Pretraining and fine-tuning share `embedding` and `encoder`.
template <typename T>
class MtsmaeModel {
 public:
  MtsmaeModel(const ModelConfig& config, std::uint64_t seed);
  MtsmaeModel(const MtsmaeModel&) = delete;
  MtsmaeModel& operator=(const MtsmaeModel&) = delete;
  MtsmaeModel(MtsmaeModel&&) = default;
  MtsmaeModel& operator=(MtsmaeModel&&) = default;

  const ModelConfig& config() const { return config_; }

  std::vector<NamedParameter<T>>& parameters() { return parameters_; }
  const std::vector<NamedParameter<T>>& parameters() const { return parameters_; }
  /// Parameters whose names start with `prefix`.
  std::vector<NamedParameter<T>> parameters(const std::string& prefix) const;
  std::size_t parameter_count() const;
  void zero_grad();

  NDArray<T> encode(const NDArray<T>& tokens, const ForwardMode& mode = {}) const;

  PretrainOutput<T> pretrain_forward(const NDArray<T>& x, const TimeMarks& marks,
                                     const MaskPlan& plan, const ForwardMode& mode = {}) const;

  /// Decoder input: patched label tokens followed by the non-patched zero placeholder.
  NDArray<T> decoder_tokens(const NDArray<T>& x_label, const TimeMarks& label_marks,
                            const TimeMarks& y_marks) const;

  /// Runs the forecasting decoder stack over every decoder position.
  NDArray<T> decode(const NDArray<T>& dec_tokens, const NDArray<T>& enc_out,
                    const ForwardMode& mode = {}) const;

  /// Forecast head on the last pred_len decoder positions: [pred_len, d_y].
  NDArray<T> forecast(const NDArray<T>& decoded) const;

  NDArray<T> finetune_forward(const NDArray<T>& x, const TimeMarks& marks,
                              const NDArray<T>& x_label, const TimeMarks& label_marks,
                              const TimeMarks& y_marks, const ForwardMode& mode = {}) const;

  EmbeddingParams<T> embedding;
  std::vector<EncoderBlockParams<T>> encoder;
  NDArray<T> mask_token;
  std::vector<EncoderBlockParams<T>> pretrain_decoder;
  Linear<T> pretrain_head;
  EmbeddingParams<T> decoder_embedding;
  std::vector<DecoderBlockParams<T>> finetune_decoder;
  Linear<T> forecast_head;

 private:
  ModelConfig config_;
  std::vector<NamedParameter<T>> parameters_;
};

}  // namespace mtsmae
