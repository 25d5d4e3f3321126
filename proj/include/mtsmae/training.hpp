#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mtsmae/data.hpp"
#include "mtsmae/masking.hpp"
#include "mtsmae/model.hpp"

namespace mtsmae {

// ---------------------------------------------------------------------------
// Recipe settings

struct PretrainConfig {
  double base_lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t epochs = 40;
  std::size_t warmup_epochs = 0;
  double mask_ratio = 0.85;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  std::size_t window_stride = 1;

  /// base_lr * batch_size / 256
  double actual_lr() const;
  void validate() const;
};

struct FinetuneConfig {
  double lr = 1e-4;
  double lr_decay = 0.5;  // per-epoch factor of the exponential schedule
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::size_t patience = 3;
  double grad_clip = 0.0;
  std::size_t window_stride = 1;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Schedules

double scaled_lr(double base_lr, std::size_t batch_size);
/// lr_max * 0.5 * (1 + cos(pi * step / total_steps)), 0 <= step <= total_steps.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max);
/// lr0 * decay^epoch with zero-based epoch.
double exponential_lr(std::size_t epoch, double lr0, double decay = 0.5);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW) when > 0
};

/// Adam with bias-corrected moments; AdamW when weight_decay > 0. Parameters
/// without an accumulated gradient are skipped (no moment or decay update).
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<NamedParameter<T>> params, AdamSettings settings);

  void step(double lr);
  void zero_grad();
  std::size_t steps_taken() const { return t_; }
  const std::vector<NamedParameter<T>>& parameters() const { return params_; }

  /// Scales every gradient so the global L2 norm is at most max_norm.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm);

 private:
  std::vector<NamedParameter<T>> params_;
  AdamSettings settings_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Losses

/// Mean squared error over the plan's masked rows of `pred` against
/// `targets_masked` (one row per masked id, in order).
template <typename T>
NDArray<T> masked_mse_loss(const NDArray<T>& pred, const NDArray<T>& targets_masked, const MaskPlan& plan);

/// Mean squared error over all elements.
template <typename T>
NDArray<T> mse_loss(const NDArray<T>& pred, const NDArray<T>& target);

// ---------------------------------------------------------------------------
// Early stopping

/// Stops once `patience` consecutive epochs fail to strictly improve on the best loss.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Records one epoch (1-based numbering by call order). Returns true when
  /// training should stop after this epoch.
  bool update(double loss);
  bool improved() const { return improved_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t epochs_seen() const { return epochs_; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t epochs_ = 0;
  std::size_t bad_ = 0;
  bool improved_ = false;
};

// ---------------------------------------------------------------------------
// Training log

struct LogRow {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double lr = 0.0;
  std::int64_t wall_ms = 0;
};

/// Append-only CSV with header `epoch,split,loss,lr,wall_ms`. With
/// `record_wall = false` every wall_ms entry is 0, making logs reproducible.
class TrainingLog {
 public:
  TrainingLog() = default;
  explicit TrainingLog(std::optional<std::filesystem::path> path, bool record_wall = true);

  void append(LogRow row);
  const std::vector<LogRow>& rows() const { return rows_; }
  std::int64_t elapsed_ms() const;

 private:
  std::optional<std::filesystem::path> path_;
  bool record_wall_ = true;
  std::vector<LogRow> rows_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string format_log_row(const LogRow& row);

// ---------------------------------------------------------------------------
// Conversion between data matrices and graph arrays

template <typename T>
NDArray<T> to_array(const Matrix& m);
template <typename T>
Matrix to_matrix(const NDArray<T>& a);

// ---------------------------------------------------------------------------
// Loops

struct PretrainResult {
  std::vector<double> epoch_losses;
  std::size_t steps = 0;
};

/// Masked reconstruction training of embedding, encoder, mask token, pretrain
/// decoder and head with AdamW and per-step cosine decay. A fresh mask is drawn
/// for every sample in every epoch.
template <typename T>
PretrainResult pretrain(MtsmaeModel<T>& model, const PretrainConfig& cfg, const WindowDataset& train,
                        std::mt19937_64& rng, TrainingLog& log);

struct FinetuneResult {
  std::vector<double> train_losses;
  std::vector<double> val_losses;
  std::size_t best_epoch = 0;  // 1-based
  double best_val = 0.0;
  bool stopped_early = false;
};

/// Forecasting training of embedding, encoder, forecasting decoder and head
/// with Adam and per-epoch exponential decay. Early stopping follows the
/// validation loss; the best-validation weights are restored on return.
template <typename T>
FinetuneResult finetune(MtsmaeModel<T>& model, const FinetuneConfig& cfg, const WindowDataset& train,
                        const WindowDataset& val, std::mt19937_64& rng, TrainingLog& log);

/// Parameters trained in each phase.
inline const std::vector<std::string> kPretrainPrefixes = {"embed.", "encoder.", "pretrain."};
inline const std::vector<std::string> kFinetunePrefixes = {"embed.", "encoder.", "finetune."};

template <typename T>
std::vector<NamedParameter<T>> phase_parameters(const MtsmaeModel<T>& model,
                                                const std::vector<std::string>& prefixes);

/// Reconstruction loss of one window under a given plan.
template <typename T>
NDArray<T> pretrain_sample_loss(const MtsmaeModel<T>& model, const WindowSample& w, const MaskPlan& plan,
                                const ForwardMode& mode = {});

/// Forecast MSE of one window.
template <typename T>
NDArray<T> finetune_sample_loss(const MtsmaeModel<T>& model, const WindowSample& w,
                                const ForwardMode& mode = {});

/// Mean forecast MSE over a dataset without dropout or graph recording.
template <typename T>
double forecast_loss(const MtsmaeModel<T>& model, const WindowDataset& ds);

/// Forecast for one window in data space, without graph recording.
template <typename T>
Matrix predict(const MtsmaeModel<T>& model, const WindowSample& w);

/// Runs one pretraining batch forward/backward and returns the names of
/// pretraining parameters whose accumulated gradient is identically zero.
template <typename T>
std::vector<std::string> dead_parameters(MtsmaeModel<T>& model, const WindowDataset& train, double mask_ratio,
                                         std::size_t batch_size, std::mt19937_64& rng);

}  // namespace mtsmae
