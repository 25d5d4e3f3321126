#include "mtsmae/model.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mtsmae/error.hpp"
#include "mtsmae/init.hpp"

namespace mtsmae {

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorKind::Config, what); }

template <typename T>
NDArray<T> maybe_dropout(const NDArray<T>& x, const ForwardMode& mode) {
  if (!mode.training || mode.dropout <= 0.0 || mode.rng == nullptr) return x;
  return dropout(x, static_cast<T>(mode.dropout), *mode.rng);
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model == 0 || d_model % 2 != 0) config_error(fmt::format("d_model={} must be even and positive", d_model));
  if (n_heads == 0 || d_model % n_heads != 0) {
    config_error(fmt::format("d_model={} is not divisible by n_heads={}", d_model, n_heads));
  }
  if (d_ff == 0) config_error("d_ff must be >= 1");
  if (enc_layers == 0) config_error("enc_layers must be >= 1");
  if (patch_stride == 0) config_error("patch_stride must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) config_error(fmt::format("dropout={} outside [0, 1)", dropout));
  if (d_x == 0 || d_y == 0) config_error("d_x and d_y must be >= 1");
  if (input_len < 3) config_error(fmt::format("input_len={} must be >= 3", input_len));
  if (input_len % patch_size() != 0) {
    config_error(fmt::format("input_len L_x={} not divisible by p^2 (p={})", input_len, patch_stride));
  }
  if (label_len == 0 || label_len % patch_size() != 0) {
    config_error(fmt::format("label_len={} must be a positive multiple of p^2 (p={})", label_len,
                             patch_stride));
  }
  if (label_len > input_len) {
    config_error(fmt::format("label_len={} exceeds input_len={}", label_len, input_len));
  }
  if (pred_len == 0) config_error("pred_len must be >= 1");
}

ModelConfig ModelConfig::desk() {
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.n_heads = 2;
  cfg.d_ff = 64;
  cfg.enc_layers = 1;
  cfg.pretrain_dec_layers = 1;
  cfg.finetune_dec_layers = 1;
  cfg.patch_stride = 2;
  cfg.input_len = 48;
  cfg.label_len = 24;
  cfg.pred_len = 12;
  return cfg;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.d_model == b.d_model && a.n_heads == b.n_heads && a.d_ff == b.d_ff &&
         a.enc_layers == b.enc_layers && a.pretrain_dec_layers == b.pretrain_dec_layers &&
         a.finetune_dec_layers == b.finetune_dec_layers && a.patch_stride == b.patch_stride &&
         a.dropout == b.dropout && a.d_x == b.d_x && a.d_y == b.d_y &&
         a.input_len == b.input_len && a.label_len == b.label_len && a.pred_len == b.pred_len;
}

// ---------------------------------------------------------------------------
// Parameter blocks

template <typename T>
Linear<T> Linear<T>::create(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {truncated_normal<T>({in, out}, kInitStd, rng), NDArray<T>::zeros({out}, true)};
}

template <typename T>
LayerNormParams<T> LayerNormParams<T>::create(std::size_t d) {
  return {NDArray<T>::full({d}, T(1), true), NDArray<T>::zeros({d}, true)};
}

template <typename T>
AttentionParams<T> AttentionParams<T>::create(std::size_t d_model, std::size_t n_heads,
                                              std::mt19937_64& rng) {
  if (n_heads == 0 || d_model % n_heads != 0) {
    config_error(fmt::format("d_model={} is not divisible by n_heads={}", d_model, n_heads));
  }
  AttentionParams p;
  p.wq = truncated_normal<T>({d_model, d_model}, kInitStd, rng);
  p.wk = truncated_normal<T>({d_model, d_model}, kInitStd, rng);
  p.wv = truncated_normal<T>({d_model, d_model}, kInitStd, rng);
  p.wo = truncated_normal<T>({d_model, d_model}, kInitStd, rng);
  p.n_heads = n_heads;
  return p;
}

template <typename T>
MlpParams<T> MlpParams<T>::create(std::size_t d_model, std::size_t d_ff, std::mt19937_64& rng) {
  auto fc1 = Linear<T>::create(d_model, d_ff, rng);
  auto fc2 = Linear<T>::create(d_ff, d_model, rng);
  return {std::move(fc1), std::move(fc2)};
}

template <typename T>
EncoderBlockParams<T> EncoderBlockParams<T>::create(const ModelConfig& cfg, std::mt19937_64& rng) {
  EncoderBlockParams p;
  p.attn = AttentionParams<T>::create(cfg.d_model, cfg.n_heads, rng);
  p.norm1 = LayerNormParams<T>::create(cfg.d_model);
  p.mlp = MlpParams<T>::create(cfg.d_model, cfg.d_ff, rng);
  p.norm2 = LayerNormParams<T>::create(cfg.d_model);
  return p;
}

template <typename T>
DecoderBlockParams<T> DecoderBlockParams<T>::create(const ModelConfig& cfg, std::mt19937_64& rng) {
  DecoderBlockParams p;
  p.self_attn = AttentionParams<T>::create(cfg.d_model, cfg.n_heads, rng);
  p.norm1 = LayerNormParams<T>::create(cfg.d_model);
  p.cross_attn = AttentionParams<T>::create(cfg.d_model, cfg.n_heads, rng);
  p.norm2 = LayerNormParams<T>::create(cfg.d_model);
  p.mlp = MlpParams<T>::create(cfg.d_model, cfg.d_ff, rng);
  p.norm3 = LayerNormParams<T>::create(cfg.d_model);
  return p;
}

// ---------------------------------------------------------------------------
// Blocks

template <typename T>
NDArray<T> linear(const NDArray<T>& x, const Linear<T>& params) {
  return add_bias(matmul(x, params.weight), params.bias);
}

template <typename T>
NDArray<T> multi_head_attention(const NDArray<T>& q_src, const NDArray<T>& kv_src,
                                const AttentionParams<T>& params, bool causal) {
  const std::size_t d = params.wq.dim(0);
  const std::size_t heads = params.n_heads;
  if (heads == 0 || d % heads != 0) {
    config_error(fmt::format("attention: d_model={} is not divisible by n_heads={}", d, heads));
  }
  if (q_src.rank() != 2 || q_src.dim(1) != d || kv_src.rank() != 2 || kv_src.dim(1) != d) {
    throw Error(ErrorKind::Dimension,
                fmt::format("attention: inputs {} / {} do not have width d_model={}",
                            shape_to_string(q_src.shape()), shape_to_string(kv_src.shape()), d));
  }
  const std::size_t head_dim = d / heads;
  const T score_scale = T(1) / std::sqrt(static_cast<T>(head_dim));

  NDArray<T> q = matmul(q_src, params.wq);
  NDArray<T> k = matmul(kv_src, params.wk);
  NDArray<T> v = matmul(kv_src, params.wv);

  std::vector<NDArray<T>> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * head_dim, hi = lo + head_dim;
    NDArray<T> qh = heads == 1 ? q : slice_cols(q, lo, hi);
    NDArray<T> kh = heads == 1 ? k : slice_cols(k, lo, hi);
    NDArray<T> vh = heads == 1 ? v : slice_cols(v, lo, hi);
    NDArray<T> scores = scale(matmul(qh, transpose(kh)), score_scale);
    if (causal) scores = causal_mask(scores);
    outputs.push_back(matmul(softmax(scores), vh));
  }
  NDArray<T> merged = heads == 1 ? outputs.front() : concat_cols(outputs);
  return matmul(merged, params.wo);
}

template <typename T>
NDArray<T> mlp(const NDArray<T>& x, const MlpParams<T>& params) {
  if (x.rank() != 2 || x.dim(1) != params.fc1.weight.dim(0)) {
    throw Error(ErrorKind::Dimension,
                fmt::format("mlp: input {} vs first layer {}", shape_to_string(x.shape()),
                            shape_to_string(params.fc1.weight.shape())));
  }
  return linear(relu(linear(x, params.fc1)), params.fc2);
}

template <typename T>
NDArray<T> encoder_block(const NDArray<T>& z, const EncoderBlockParams<T>& params,
                         const ForwardMode& mode) {
  NDArray<T> attended = maybe_dropout(multi_head_attention(z, z, params.attn, false), mode);
  NDArray<T> z1 = layer_norm(add(z, attended), params.norm1.gamma, params.norm1.beta);
  NDArray<T> fed = maybe_dropout(mlp(z1, params.mlp), mode);
  return layer_norm(add(z1, fed), params.norm2.gamma, params.norm2.beta);
}

template <typename T>
NDArray<T> decoder_block(const NDArray<T>& z, const NDArray<T>& enc_out,
                         const DecoderBlockParams<T>& params, const ForwardMode& mode) {
  NDArray<T> self = maybe_dropout(multi_head_attention(z, z, params.self_attn, true), mode);
  NDArray<T> z1 = layer_norm(add(z, self), params.norm1.gamma, params.norm1.beta);
  NDArray<T> cross = maybe_dropout(multi_head_attention(z1, enc_out, params.cross_attn, false), mode);
  NDArray<T> z2 = layer_norm(add(z1, cross), params.norm2.gamma, params.norm2.beta);
  NDArray<T> fed = maybe_dropout(mlp(z2, params.mlp), mode);
  return layer_norm(add(z2, fed), params.norm3.gamma, params.norm3.beta);
}

template <typename T>
NDArray<T> patchify(const NDArray<T>& x_raw, std::size_t patch_stride) {
  const std::size_t patch = patch_stride * patch_stride;
  if (x_raw.rank() != 2 || patch == 0 || x_raw.dim(0) % patch != 0) {
    config_error(fmt::format("patchify: length L_x={} not divisible by p^2 (p={})",
                             x_raw.rank() == 2 ? x_raw.dim(0) : 0, patch_stride));
  }
  // Row-major [L_x, d_x] is already time-major within each window.
  return reshape(x_raw, {x_raw.dim(0) / patch, patch * x_raw.dim(1)});
}

template <typename T>
NDArray<T> reconstruction_targets(const NDArray<T>& x_raw, const MaskPlan& plan,
                                  std::size_t patch_stride) {
  NDArray<T> windows = patchify(x_raw, patch_stride);
  if (windows.dim(0) != plan.length) {
    throw Error(ErrorKind::Dimension,
                fmt::format("targets: {} patches vs mask plan of length {}", windows.dim(0), plan.length));
  }
  return gather_rows(windows, std::span<const std::size_t>(plan.masked_ids));
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
MtsmaeModel<T>::MtsmaeModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  embedding = EmbeddingParams<T>::create(config_.d_x, config_.d_model, config_.patch_stride, rng);
  for (std::size_t i = 0; i < config_.enc_layers; ++i) {
    encoder.push_back(EncoderBlockParams<T>::create(config_, rng));
  }
  mask_token = truncated_normal<T>({config_.d_model}, kInitStd, rng);
  for (std::size_t i = 0; i < config_.pretrain_dec_layers; ++i) {
    pretrain_decoder.push_back(EncoderBlockParams<T>::create(config_, rng));
  }
  pretrain_head = Linear<T>::create(config_.d_model, config_.patch_size() * config_.d_x, rng);
  decoder_embedding =
      EmbeddingParams<T>::create(config_.d_x, config_.d_model, config_.patch_stride, rng);
  for (std::size_t i = 0; i < config_.finetune_dec_layers; ++i) {
    finetune_decoder.push_back(DecoderBlockParams<T>::create(config_, rng));
  }
  forecast_head = Linear<T>::create(config_.d_model, config_.d_y, rng);

  auto record = [this](const std::string& name, NDArray<T>& value) {
    parameters_.push_back({name, value});
  };
  embedding.for_each("embed.", record);
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    encoder[i].for_each(fmt::format("encoder.{}.", i), record);
  }
  record("pretrain.mask_token", mask_token);
  for (std::size_t i = 0; i < pretrain_decoder.size(); ++i) {
    pretrain_decoder[i].for_each(fmt::format("pretrain.decoder.{}.", i), record);
  }
  pretrain_head.for_each("pretrain.head.", record);
  decoder_embedding.for_each("finetune.embed.", record);
  for (std::size_t i = 0; i < finetune_decoder.size(); ++i) {
    finetune_decoder[i].for_each(fmt::format("finetune.decoder.{}.", i), record);
  }
  forecast_head.for_each("finetune.head.", record);
}

template <typename T>
std::vector<NamedParameter<T>> MtsmaeModel<T>::parameters(const std::string& prefix) const {
  std::vector<NamedParameter<T>> out;
  for (const auto& p : parameters_) {
    if (p.name.rfind(prefix, 0) == 0) out.push_back(p);
  }
  return out;
}

template <typename T>
std::size_t MtsmaeModel<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters_) total += p.value.size();
  return total;
}

template <typename T>
void MtsmaeModel<T>::zero_grad() {
  for (auto& p : parameters_) p.value.zero_grad();
}

template <typename T>
NDArray<T> MtsmaeModel<T>::encode(const NDArray<T>& tokens, const ForwardMode& mode) const {
  NDArray<T> z = tokens;
  for (const auto& block : encoder) z = encoder_block(z, block, mode);
  return z;
}

template <typename T>
PretrainOutput<T> MtsmaeModel<T>::pretrain_forward(const NDArray<T>& x, const TimeMarks& marks,
                                                   const MaskPlan& plan,
                                                   const ForwardMode& mode) const {
  if (x.rank() != 2 || x.dim(0) != config_.input_len || x.dim(1) != config_.d_x) {
    throw Error(ErrorKind::Dimension,
                fmt::format("pretrain: input {} vs configured [L_x={}, d_x={}]",
                            shape_to_string(x.shape()), config_.input_len, config_.d_x));
  }
  if (plan.length != config_.num_patches()) {
    throw Error(ErrorKind::Dimension,
                fmt::format("pretrain: mask plan length {} vs {} patches", plan.length,
                            config_.num_patches()));
  }
  NDArray<T> patches = patch_embed(embed(x, marks, embedding), embedding);
  NDArray<T> encoded = encode(select_visible(patches, plan), mode);
  NDArray<T> full = scatter_with_mask_tokens(encoded, plan, mask_token);
  full = add(full, positional_encoding<T>(plan.length, config_.d_model));
  for (const auto& block : pretrain_decoder) full = encoder_block(full, block, mode);
  return {linear(full, pretrain_head), encoded};
}

template <typename T>
NDArray<T> MtsmaeModel<T>::decoder_tokens(const NDArray<T>& x_label, const TimeMarks& label_marks,
                                          const TimeMarks& y_marks) const {
  if (x_label.rank() != 2 || x_label.dim(0) != config_.label_len || x_label.dim(1) != config_.d_x ||
      label_marks.size() != config_.label_len || y_marks.size() != config_.pred_len) {
    throw Error(ErrorKind::Dimension,
                fmt::format("decoder input: label {} with {} marks and {} forecast marks; expected "
                            "L_label={}, L_y={}, d_x={}",
                            shape_to_string(x_label.shape()), label_marks.size(), y_marks.size(),
                            config_.label_len, config_.pred_len, config_.d_x));
  }
  NDArray<T> label = patch_embed(embed(x_label, label_marks, decoder_embedding), decoder_embedding);
  NDArray<T> placeholder = NDArray<T>::zeros({config_.pred_len, config_.d_x});
  NDArray<T> future = nonpatch_embed(placeholder, y_marks, decoder_embedding, config_.label_len);
  return concat_rows<T>({label, future});
}

template <typename T>
NDArray<T> MtsmaeModel<T>::decode(const NDArray<T>& dec_tokens, const NDArray<T>& enc_out,
                                  const ForwardMode& mode) const {
  NDArray<T> z = dec_tokens;
  for (const auto& block : finetune_decoder) z = decoder_block(z, enc_out, block, mode);
  return z;
}

template <typename T>
NDArray<T> MtsmaeModel<T>::forecast(const NDArray<T>& decoded) const {
  const std::size_t n = decoded.dim(0);
  if (n < config_.pred_len) {
    throw Error(ErrorKind::Dimension,
                fmt::format("forecast: {} decoder positions < L_y={}", n, config_.pred_len));
  }
  std::vector<std::size_t> tail(config_.pred_len);
  std::iota(tail.begin(), tail.end(), n - config_.pred_len);
  return linear(gather_rows(decoded, std::span<const std::size_t>(tail)), forecast_head);
}

template <typename T>
NDArray<T> MtsmaeModel<T>::finetune_forward(const NDArray<T>& x, const TimeMarks& marks,
                                            const NDArray<T>& x_label, const TimeMarks& label_marks,
                                            const TimeMarks& y_marks, const ForwardMode& mode) const {
  if (x.rank() != 2 || x.dim(0) != config_.input_len || x.dim(1) != config_.d_x) {
    throw Error(ErrorKind::Dimension,
                fmt::format("finetune: encoder input {} vs configured [L_x={}, d_x={}]",
                            shape_to_string(x.shape()), config_.input_len, config_.d_x));
  }
  NDArray<T> enc_out = encode(patch_embed(embed(x, marks, embedding), embedding), mode);
  NDArray<T> dec = decode(decoder_tokens(x_label, label_marks, y_marks), enc_out, mode);
  return forecast(dec);
}

#define MTSMAE_INSTANTIATE_MODEL(T)                                                                \
  template struct Linear<T>;                                                                       \
  template struct LayerNormParams<T>;                                                              \
  template struct AttentionParams<T>;                                                              \
  template struct MlpParams<T>;                                                                    \
  template struct EncoderBlockParams<T>;                                                           \
  template struct DecoderBlockParams<T>;                                                           \
  template class MtsmaeModel<T>;                                                                   \
  template NDArray<T> linear(const NDArray<T>&, const Linear<T>&);                                 \
  template NDArray<T> multi_head_attention(const NDArray<T>&, const NDArray<T>&,                   \
                                           const AttentionParams<T>&, bool);                       \
  template NDArray<T> mlp(const NDArray<T>&, const MlpParams<T>&);                                 \
  template NDArray<T> encoder_block(const NDArray<T>&, const EncoderBlockParams<T>&,               \
                                    const ForwardMode&);                                           \
  template NDArray<T> decoder_block(const NDArray<T>&, const NDArray<T>&,                          \
                                    const DecoderBlockParams<T>&, const ForwardMode&);             \
  template NDArray<T> patchify(const NDArray<T>&, std::size_t);                                    \
  template NDArray<T> reconstruction_targets(const NDArray<T>&, const MaskPlan&, std::size_t);

MTSMAE_INSTANTIATE_MODEL(float)
MTSMAE_INSTANTIATE_MODEL(double)

}  // namespace mtsmae
