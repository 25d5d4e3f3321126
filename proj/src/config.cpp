#include "mtsmae/config.hpp"

#include <functional>

#include <fmt/format.h>

#include "mtsmae/error.hpp"

namespace mtsmae {

namespace {

struct KeySpec {
  const char* key;
  const char* description;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::size_t as_size(const std::string& v, const std::string& what) {
  const long long x = parse_int(v, what);
  if (x < 0) throw Error(ErrorKind::Config, fmt::format("{}: expected a non-negative integer, got '{}'", what, v));
  return static_cast<std::size_t>(x);
}

#define MTSMAE_SIZE_KEY(name, field, text)                                                       \
  KeySpec {                                                                                      \
    name, text, [](RunConfig& c, const std::string& v, const std::string& w) { c.field = as_size(v, w); }, \
        [](const RunConfig& c) { return fmt::format("{}", c.field); }                            \
  }
#define MTSMAE_DOUBLE_KEY(name, field, text)                                                     \
  KeySpec {                                                                                      \
    name, text, [](RunConfig& c, const std::string& v, const std::string& w) { c.field = parse_double(v, w); }, \
        [](const RunConfig& c) { return fmt::format("{}", c.field); }                            \
  }
#define MTSMAE_BOOL_KEY(name, field, text)                                                       \
  KeySpec {                                                                                      \
    name, text, [](RunConfig& c, const std::string& v, const std::string& w) { c.field = parse_bool(v, w); }, \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }               \
  }
#define MTSMAE_STRING_KEY(name, field, text)                                                     \
  KeySpec {                                                                                      \
    name, text, [](RunConfig& c, const std::string& v, const std::string&) { c.field = v; },     \
        [](const RunConfig& c) { return c.field; }                                               \
  }

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      KeySpec{"seed", "seed for every random choice of the run",
              [](RunConfig& c, const std::string& v, const std::string& w) {
                c.seed = parse_uint64(v, w);
              },
              [](const RunConfig& c) { return fmt::format("{}", c.seed); }},
      KeySpec{"dtype", "element type: float32 or float64",
              [](RunConfig& c, const std::string& v, const std::string&) { c.dtype = parse_dtype(v); },
              [](const RunConfig& c) { return dtype_name(c.dtype); }},
      MTSMAE_STRING_KEY("data.csv", data.csv, "dated CSV input (first column 'date')"),
      MTSMAE_STRING_KEY("data.synth", data.synth, "synthetic spec file used when data.csv is empty"),
      KeySpec{"data.split", "train/val/test split: ratio:a,b,c | rows:a,b,c | months:a,b,c",
              [](RunConfig& c, const std::string& v, const std::string&) { c.data.split = SplitSpec::parse(v); },
              [](const RunConfig& c) { return c.data.split.to_string(); }},
      MTSMAE_BOOL_KEY("data.standardize", data.standardize, "zero-mean, unit-variance scaling from the train split"),
      MTSMAE_SIZE_KEY("model.d_model", model.d_model, "token width"),
      MTSMAE_SIZE_KEY("model.n_heads", model.n_heads, "attention heads"),
      MTSMAE_SIZE_KEY("model.d_ff", model.d_ff, "hidden width of the position-wise MLP"),
      MTSMAE_SIZE_KEY("model.enc_layers", model.enc_layers, "encoder blocks"),
      MTSMAE_SIZE_KEY("model.pretrain_dec_layers", model.pretrain_dec_layers, "reconstruction decoder blocks"),
      MTSMAE_SIZE_KEY("model.finetune_dec_layers", model.finetune_dec_layers, "forecasting decoder blocks"),
      MTSMAE_SIZE_KEY("model.patch_stride", model.patch_stride, "per-stage patch stride p; a patch spans p^2 steps"),
      MTSMAE_DOUBLE_KEY("model.dropout", model.dropout, "dropout after attention and MLP sub-blocks"),
      MTSMAE_SIZE_KEY("model.input_len", model.input_len, "encoder window L_x"),
      MTSMAE_SIZE_KEY("model.label_len", model.label_len, "label segment L_label (suffix of the encoder window)"),
      MTSMAE_SIZE_KEY("model.pred_len", model.pred_len, "forecast horizon L_y"),
      MTSMAE_DOUBLE_KEY("pretrain.base_lr", pretrain.base_lr, "base learning rate (scaled by batch/256)"),
      MTSMAE_DOUBLE_KEY("pretrain.weight_decay", pretrain.weight_decay, "AdamW decoupled weight decay"),
      MTSMAE_DOUBLE_KEY("pretrain.beta1", pretrain.beta1, "AdamW beta1"),
      MTSMAE_DOUBLE_KEY("pretrain.beta2", pretrain.beta2, "AdamW beta2"),
      MTSMAE_DOUBLE_KEY("pretrain.eps", pretrain.eps, "AdamW epsilon"),
      MTSMAE_SIZE_KEY("pretrain.batch_size", pretrain.batch_size, "windows per optimizer step"),
      MTSMAE_SIZE_KEY("pretrain.epochs", pretrain.epochs, "passes over the training windows"),
      MTSMAE_SIZE_KEY("pretrain.warmup_epochs", pretrain.warmup_epochs, "linear warmup before cosine decay"),
      MTSMAE_DOUBLE_KEY("pretrain.mask_ratio", pretrain.mask_ratio, "fraction of patches hidden from the encoder"),
      MTSMAE_DOUBLE_KEY("pretrain.grad_clip", pretrain.grad_clip, "global gradient-norm clip, 0 disables"),
      MTSMAE_SIZE_KEY("pretrain.window_stride", pretrain.window_stride, "stride between training windows"),
      MTSMAE_DOUBLE_KEY("finetune.lr", finetune.lr, "initial learning rate"),
      MTSMAE_DOUBLE_KEY("finetune.lr_decay", finetune.lr_decay, "per-epoch learning-rate factor"),
      MTSMAE_DOUBLE_KEY("finetune.weight_decay", finetune.weight_decay, "decoupled weight decay (0 = plain Adam)"),
      MTSMAE_DOUBLE_KEY("finetune.beta1", finetune.beta1, "Adam beta1"),
      MTSMAE_DOUBLE_KEY("finetune.beta2", finetune.beta2, "Adam beta2"),
      MTSMAE_DOUBLE_KEY("finetune.eps", finetune.eps, "Adam epsilon"),
      MTSMAE_SIZE_KEY("finetune.batch_size", finetune.batch_size, "windows per optimizer step"),
      MTSMAE_SIZE_KEY("finetune.epochs", finetune.epochs, "maximum passes over the training windows"),
      MTSMAE_SIZE_KEY("finetune.patience", finetune.patience, "epochs without validation improvement before stopping"),
      MTSMAE_DOUBLE_KEY("finetune.grad_clip", finetune.grad_clip, "global gradient-norm clip, 0 disables"),
      MTSMAE_SIZE_KEY("finetune.window_stride", finetune.window_stride, "stride between training windows"),
      MTSMAE_SIZE_KEY("eval.plot_dim", eval.plot_dim, "feature drawn in chart.svg"),
      KeySpec{"eval.plot_window", "window whose horizon is drawn, or 'all' for the first step of every window",
              [](RunConfig& c, const std::string& v, const std::string& w) {
                if (v == "all") c.eval.plot_window.reset();
                else c.eval.plot_window = as_size(v, w);
              },
              [](const RunConfig& c) {
                return c.eval.plot_window ? fmt::format("{}", *c.eval.plot_window) : std::string("all");
              }},
      MTSMAE_BOOL_KEY("eval.destandardize", eval.destandardize, "score in data units instead of standardized units"),
      MTSMAE_SIZE_KEY("eval.jobs", eval.jobs, "threads for rolling evaluation"),
      MTSMAE_BOOL_KEY("log.wall_ms", log_wall_ms, "record elapsed milliseconds in training logs (false writes 0)"),
  };
  return specs;
}

const KeySpec* find_key(const std::string& key) {
  for (const auto& s : key_specs()) {
    if (key == s.key) return &s;
  }
  return nullptr;
}

}  // namespace

Profile parse_profile(std::string_view name) {
  if (name == "desk") return Profile::Desk;
  if (name == "full") return Profile::Full;
  throw Error(ErrorKind::Config, fmt::format("unknown profile '{}' (expected desk or full)", name));
}

RunConfig RunConfig::defaults(Profile profile) {
  RunConfig c;
  if (profile == Profile::Desk) {
    c.model = ModelConfig::desk();
  }
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* spec = find_key(key);
  if (spec == nullptr) throw Error(ErrorKind::Config, fmt::format("unknown config key '{}'", key));
  spec->set(*this, value, key);
}

void RunConfig::apply(const std::vector<KeyValueEntry>& entries, const std::string& source) {
  for (const auto& e : entries) {
    const KeySpec* spec = find_key(e.key);
    if (spec == nullptr) {
      throw Error(ErrorKind::Config, fmt::format("{}:{}: unknown config key '{}'", source, e.line, e.key));
    }
    spec->set(*this, e.value, fmt::format("{}:{} {}", source, e.line, e.key));
  }
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& s : key_specs()) out += fmt::format("{} = {}\n", s.key, s.get(*this));
  return out;
}

RunConfig RunConfig::from_text(const std::string& text, const std::string& source) {
  RunConfig c;
  c.apply(parse_key_values(text, source), source);
  return c;
}

void RunConfig::validate() const {
  model.validate();
  pretrain.validate();
  finetune.validate();
  if (data.csv.empty() && data.synth.empty()) {
    throw Error(ErrorKind::Config, "no input: set data.csv or data.synth");
  }
  if (eval.jobs == 0) throw Error(ErrorKind::Config, "eval.jobs must be >= 1");
}

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = [] {
    std::vector<ConfigKey> out;
    for (const auto& s : key_specs()) out.push_back({s.key, s.description});
    return out;
  }();
  return schema;
}

RunConfig load_run_config(Profile profile, const std::optional<std::filesystem::path>& file,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig c = RunConfig::defaults(profile);
  if (file) c.apply(read_key_value_file(*file), file->string());
  for (const auto& [k, v] : overrides) c.set(k, v);
  return c;
}

}  // namespace mtsmae
