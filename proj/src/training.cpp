#include "mtsmae/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mtsmae/error.hpp"

namespace mtsmae {

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorKind::Config, what); }

void check_adam(double beta1, double beta2, double eps, const char* phase) {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    config_error(fmt::format("{}: betas ({}, {}) must lie in [0, 1)", phase, beta1, beta2));
  }
  if (!(eps > 0.0)) config_error(fmt::format("{}: eps must be positive", phase));
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

void require_finite(double loss, const char* phase, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw Error(ErrorKind::Training,
                fmt::format("{} diverged: non-finite loss at epoch {} step {}", phase, epoch, step));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configs and schedules

double PretrainConfig::actual_lr() const { return scaled_lr(base_lr, batch_size); }

void PretrainConfig::validate() const {
  if (!(base_lr > 0.0)) config_error("pretrain.base_lr must be positive");
  if (!(weight_decay >= 0.0)) config_error("pretrain.weight_decay must be >= 0");
  check_adam(beta1, beta2, eps, "pretrain");
  if (batch_size == 0) config_error("pretrain.batch_size must be >= 1");
  if (epochs == 0) config_error("pretrain.epochs must be >= 1");
  if (warmup_epochs >= epochs) config_error("pretrain.warmup_epochs must be below pretrain.epochs");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    config_error(fmt::format("pretrain.mask_ratio={} outside (0, 1)", mask_ratio));
  }
  if (!(grad_clip >= 0.0)) config_error("pretrain.grad_clip must be >= 0");
  if (window_stride == 0) config_error("pretrain.window_stride must be >= 1");
}

void FinetuneConfig::validate() const {
  if (!(lr > 0.0)) config_error("finetune.lr must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) config_error("finetune.lr_decay must lie in (0, 1]");
  if (!(weight_decay >= 0.0)) config_error("finetune.weight_decay must be >= 0");
  check_adam(beta1, beta2, eps, "finetune");
  if (batch_size == 0) config_error("finetune.batch_size must be >= 1");
  if (epochs == 0) config_error("finetune.epochs must be >= 1");
  if (patience == 0) config_error("finetune.patience must be >= 1");
  if (!(grad_clip >= 0.0)) config_error("finetune.grad_clip must be >= 0");
  if (window_stride == 0) config_error("finetune.window_stride must be >= 1");
}

double scaled_lr(double base_lr, std::size_t batch_size) {
  if (batch_size == 0) config_error("batch size must be >= 1");
  return base_lr * static_cast<double>(batch_size) / 256.0;
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max) {
  if (total_steps == 0) config_error("cosine schedule needs at least one step");
  if (step > total_steps) {
    config_error(fmt::format("cosine schedule: step {} beyond total {}", step, total_steps));
  }
  return lr_max * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

double exponential_lr(std::size_t epoch, double lr0, double decay) {
  return lr0 * std::pow(decay, static_cast<double>(epoch));
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
AdamOptimizer<T>::AdamOptimizer(std::vector<NamedParameter<T>> params, AdamSettings settings)
    : params_(std::move(params)), settings_(settings) {
  for (const auto& p : params_) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

template <typename T>
void AdamOptimizer<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <typename T>
double AdamOptimizer<T>::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& p : params_) {
    for (T g : p.value.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params_) {
      if (!p.value.has_grad()) continue;
      for (T& g : p.value.mutable_grad()) g = static_cast<T>(g * factor);
    }
  }
  return norm;
}

template <typename T>
void AdamOptimizer<T>::step(double lr) {
  ++t_;
  const double b1 = settings_.beta1, b2 = settings_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k].value;
    if (!p.has_grad()) continue;
    auto grad = p.grad();
    for (T g : grad) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw Error(ErrorKind::Training,
                    fmt::format("non-finite gradient in {} at optimizer step {}", params_[k].name, t_));
      }
    }
    auto value = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      double w = static_cast<double>(value[i]);
      if (settings_.weight_decay > 0.0) w -= lr * settings_.weight_decay * w;
      w -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + settings_.eps);
      value[i] = static_cast<T>(w);
    }
  }
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
NDArray<T> masked_mse_loss(const NDArray<T>& pred, const NDArray<T>& targets_masked, const MaskPlan& plan) {
  if (plan.masked_ids.empty()) config_error("masked loss: the plan masks no tokens");
  if (pred.rank() != 2 || pred.dim(0) != plan.length || targets_masked.rank() != 2 ||
      targets_masked.dim(0) != plan.masked_ids.size() || targets_masked.dim(1) != pred.dim(1)) {
    throw Error(ErrorKind::Dimension,
                fmt::format("masked loss: prediction {} and targets {} vs plan with {} of {} masked",
                            shape_to_string(pred.shape()), shape_to_string(targets_masked.shape()),
                            plan.masked_ids.size(), plan.length));
  }
  return mean(square(sub(gather_rows(pred, std::span<const std::size_t>(plan.masked_ids)), targets_masked)));
}

template <typename T>
NDArray<T> mse_loss(const NDArray<T>& pred, const NDArray<T>& target) {
  return mean(square(sub(pred, target)));
}

// ---------------------------------------------------------------------------
// Early stopping

bool EarlyStopper::update(double loss) {
  ++epochs_;
  improved_ = loss < best_;
  if (improved_) {
    best_ = loss;
    best_epoch_ = epochs_;
    bad_ = 0;
  } else {
    ++bad_;
  }
  return bad_ >= patience_;
}

// ---------------------------------------------------------------------------
// Log

TrainingLog::TrainingLog(std::optional<std::filesystem::path> path, bool record_wall)
    : path_(std::move(path)), record_wall_(record_wall) {
  if (path_) {
    std::ofstream out(*path_, std::ios::app);
    if (!out) throw Error(ErrorKind::Io, fmt::format("cannot open training log {}", path_->string()));
    if (std::filesystem::file_size(*path_) == 0) out << "epoch,split,loss,lr,wall_ms\n";
  }
}

std::int64_t TrainingLog::elapsed_ms() const {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_).count();
}

std::string format_log_row(const LogRow& row) {
  return fmt::format("{},{},{},{},{}", row.epoch, row.split, row.loss, row.lr, row.wall_ms);
}

void TrainingLog::append(LogRow row) {
  row.wall_ms = record_wall_ ? elapsed_ms() : 0;
  if (path_) {
    std::ofstream out(*path_, std::ios::app);
    out << format_log_row(row) << '\n';
    if (!out) throw Error(ErrorKind::Io, fmt::format("write failed for {}", path_->string()));
  }
  rows_.push_back(std::move(row));
}

// ---------------------------------------------------------------------------
// Conversion

template <typename T>
NDArray<T> to_array(const Matrix& m) {
  std::vector<T> v(m.values.size());
  std::transform(m.values.begin(), m.values.end(), v.begin(), [](double x) { return static_cast<T>(x); });
  return NDArray<T>::from({m.rows, m.cols}, std::move(v));
}

template <typename T>
Matrix to_matrix(const NDArray<T>& a) {
  if (a.rank() != 2) {
    throw Error(ErrorKind::Dimension, fmt::format("to_matrix: expected rank 2, got {}", shape_to_string(a.shape())));
  }
  Matrix m(a.dim(0), a.dim(1));
  std::transform(a.data().begin(), a.data().end(), m.values.begin(), [](T x) { return static_cast<double>(x); });
  return m;
}

// ---------------------------------------------------------------------------
// Per-sample pieces

template <typename T>
std::vector<NamedParameter<T>> phase_parameters(const MtsmaeModel<T>& model,
                                                const std::vector<std::string>& prefixes) {
  std::vector<NamedParameter<T>> out;
  for (const auto& p : model.parameters()) {
    for (const auto& prefix : prefixes) {
      if (p.name.rfind(prefix, 0) == 0) {
        out.push_back(p);
        break;
      }
    }
  }
  return out;
}

template <typename T>
NDArray<T> pretrain_sample_loss(const MtsmaeModel<T>& model, const WindowSample& w, const MaskPlan& plan,
                                const ForwardMode& mode) {
  const NDArray<T> x = to_array<T>(w.x_enc);
  auto out = model.pretrain_forward(x, w.enc_marks, plan, mode);
  return masked_mse_loss(out.reconstruction, reconstruction_targets(x, plan, model.config().patch_stride), plan);
}

template <typename T>
NDArray<T> finetune_sample_loss(const MtsmaeModel<T>& model, const WindowSample& w, const ForwardMode& mode) {
  auto pred = model.finetune_forward(to_array<T>(w.x_enc), w.enc_marks, to_array<T>(w.x_label), w.label_marks,
                                     w.y_marks, mode);
  if (w.y_true.cols != pred.dim(1)) {
    throw Error(ErrorKind::Dimension,
                fmt::format("forecast width {} vs target width {}", pred.dim(1), w.y_true.cols));
  }
  return mse_loss(pred, to_array<T>(w.y_true));
}

template <typename T>
double forecast_loss(const MtsmaeModel<T>& model, const WindowDataset& ds) {
  if (ds.empty()) throw Error(ErrorKind::Data, "forecast loss over an empty window set");
  NoGradGuard guard;
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    total += static_cast<double>(finetune_sample_loss(model, ds.sample(i)).item());
  }
  return total / static_cast<double>(ds.size());
}

template <typename T>
Matrix predict(const MtsmaeModel<T>& model, const WindowSample& w) {
  NoGradGuard guard;
  return to_matrix(model.finetune_forward(to_array<T>(w.x_enc), w.enc_marks, to_array<T>(w.x_label),
                                          w.label_marks, w.y_marks));
}

// ---------------------------------------------------------------------------
// Loops

template <typename T>
PretrainResult pretrain(MtsmaeModel<T>& model, const PretrainConfig& cfg, const WindowDataset& train,
                        std::mt19937_64& rng, TrainingLog& log) {
  cfg.validate();
  if (train.empty()) throw Error(ErrorKind::Data, "pretrain: no training windows");
  const auto& mc = model.config();
  AdamOptimizer<T> opt(phase_parameters(model, kPretrainPrefixes),
                       {cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay});
  const std::size_t n = train.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  const std::size_t warmup = per_epoch * cfg.warmup_epochs;
  const double lr_max = cfg.actual_lr();
  const ForwardMode mode{true, mc.dropout, &rng};

  PretrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(n, rng);
    double epoch_loss = 0.0, lr = 0.0;
    for (std::size_t b = 0; b < n; b += cfg.batch_size) {
      const std::size_t end = std::min(n, b + cfg.batch_size);
      const T inv = static_cast<T>(1.0 / static_cast<double>(end - b));
      opt.zero_grad();
      for (std::size_t k = b; k < end; ++k) {
        const auto sample = train.sample(order[k]);
        const MaskPlan plan = sample_mask(mc.num_patches(), cfg.mask_ratio, rng);
        auto loss = pretrain_sample_loss(model, sample, plan, mode);
        const double value = static_cast<double>(loss.item());
        require_finite(value, "pretraining", epoch + 1, step);
        epoch_loss += value;
        scale(loss, inv).backward();
      }
      if (cfg.grad_clip > 0.0) opt.clip_grad_norm(cfg.grad_clip);
      lr = step < warmup ? lr_max * static_cast<double>(step + 1) / static_cast<double>(warmup)
                         : cosine_lr(step - warmup, total - warmup, lr_max);
      opt.step(lr);
      ++step;
    }
    opt.zero_grad();
    epoch_loss /= static_cast<double>(n);
    result.epoch_losses.push_back(epoch_loss);
    log.append({epoch + 1, "pretrain", epoch_loss, lr, 0});
    spdlog::info("pretrain epoch {}/{} loss {:.6f} lr {:.3e}", epoch + 1, cfg.epochs, epoch_loss, lr);
  }
  result.steps = step;
  return result;
}

template <typename T>
FinetuneResult finetune(MtsmaeModel<T>& model, const FinetuneConfig& cfg, const WindowDataset& train,
                        const WindowDataset& val, std::mt19937_64& rng, TrainingLog& log) {
  cfg.validate();
  if (train.empty()) throw Error(ErrorKind::Data, "finetune: no training windows");
  if (val.empty()) throw Error(ErrorKind::Data, "finetune: no validation windows");
  AdamOptimizer<T> opt(phase_parameters(model, kFinetunePrefixes),
                       {cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay});
  const ForwardMode mode{true, model.config().dropout, &rng};
  const std::size_t n = train.size();

  FinetuneResult result;
  EarlyStopper stopper(cfg.patience);
  std::vector<std::vector<T>> best_values;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = exponential_lr(epoch, cfg.lr, cfg.lr_decay);
    const auto order = shuffled(n, rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < n; b += cfg.batch_size) {
      const std::size_t end = std::min(n, b + cfg.batch_size);
      const T inv = static_cast<T>(1.0 / static_cast<double>(end - b));
      opt.zero_grad();
      for (std::size_t k = b; k < end; ++k) {
        auto loss = finetune_sample_loss(model, train.sample(order[k]), mode);
        const double value = static_cast<double>(loss.item());
        require_finite(value, "fine-tuning", epoch + 1, step);
        epoch_loss += value;
        scale(loss, inv).backward();
      }
      if (cfg.grad_clip > 0.0) opt.clip_grad_norm(cfg.grad_clip);
      opt.step(lr);
      ++step;
    }
    opt.zero_grad();
    epoch_loss /= static_cast<double>(n);
    const double val_loss = forecast_loss(model, val);
    require_finite(val_loss, "fine-tuning validation", epoch + 1, step);
    result.train_losses.push_back(epoch_loss);
    result.val_losses.push_back(val_loss);
    log.append({epoch + 1, "train", epoch_loss, lr, 0});
    log.append({epoch + 1, "val", val_loss, lr, 0});
    spdlog::info("finetune epoch {}/{} train {:.6f} val {:.6f} lr {:.3e}", epoch + 1, cfg.epochs, epoch_loss,
                 val_loss, lr);

    const bool stop = stopper.update(val_loss);
    if (stopper.improved()) {
      best_values.clear();
      for (const auto& p : model.parameters()) best_values.emplace_back(p.value.data().begin(), p.value.data().end());
    }
    if (stop) {
      result.stopped_early = epoch + 1 < cfg.epochs;
      break;
    }
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val = stopper.best();
  auto& params = model.parameters();
  for (std::size_t k = 0; k < params.size() && k < best_values.size(); ++k) {
    std::copy(best_values[k].begin(), best_values[k].end(), params[k].value.mutable_data().begin());
  }
  return result;
}

template <typename T>
std::vector<std::string> dead_parameters(MtsmaeModel<T>& model, const WindowDataset& train, double mask_ratio,
                                         std::size_t batch_size, std::mt19937_64& rng) {
  model.zero_grad();
  const std::size_t n = std::min(batch_size, train.size());
  for (std::size_t i = 0; i < n; ++i) {
    const MaskPlan plan = sample_mask(model.config().num_patches(), mask_ratio, rng);
    pretrain_sample_loss(model, train.sample(i), plan).backward();
  }
  std::vector<std::string> dead;
  for (const auto& p : phase_parameters(model, kPretrainPrefixes)) {
    const auto g = p.value.grad();
    if (std::all_of(g.begin(), g.end(), [](T v) { return v == T(0); })) dead.push_back(p.name);
  }
  model.zero_grad();
  return dead;
}

#define MTSMAE_INSTANTIATE_TRAINING(T)                                                                   \
  template class AdamOptimizer<T>;                                                                       \
  template NDArray<T> masked_mse_loss(const NDArray<T>&, const NDArray<T>&, const MaskPlan&);            \
  template NDArray<T> mse_loss(const NDArray<T>&, const NDArray<T>&);                                    \
  template NDArray<T> to_array<T>(const Matrix&);                                                        \
  template Matrix to_matrix(const NDArray<T>&);                                                          \
  template std::vector<NamedParameter<T>> phase_parameters(const MtsmaeModel<T>&,                        \
                                                           const std::vector<std::string>&);             \
  template NDArray<T> pretrain_sample_loss(const MtsmaeModel<T>&, const WindowSample&, const MaskPlan&,  \
                                           const ForwardMode&);                                          \
  template NDArray<T> finetune_sample_loss(const MtsmaeModel<T>&, const WindowSample&, const ForwardMode&); \
  template double forecast_loss(const MtsmaeModel<T>&, const WindowDataset&);                            \
  template Matrix predict(const MtsmaeModel<T>&, const WindowSample&);                                   \
  template PretrainResult pretrain(MtsmaeModel<T>&, const PretrainConfig&, const WindowDataset&,         \
                                   std::mt19937_64&, TrainingLog&);                                      \
  template FinetuneResult finetune(MtsmaeModel<T>&, const FinetuneConfig&, const WindowDataset&,         \
                                   const WindowDataset&, std::mt19937_64&, TrainingLog&);                \
  template std::vector<std::string> dead_parameters(MtsmaeModel<T>&, const WindowDataset&, double,       \
                                                    std::size_t, std::mt19937_64&);

MTSMAE_INSTANTIATE_TRAINING(float)
MTSMAE_INSTANTIATE_TRAINING(double)

}  // namespace mtsmae
