#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtsmae/checkpoint.hpp"
#include "mtsmae/config.hpp"
#include "mtsmae/data.hpp"
#include "mtsmae/evaluation.hpp"

namespace mtsmae {

// Files written into run directories.
inline constexpr const char* kResolvedConfigFile = "config.txt";
inline constexpr const char* kTrainLogFile = "train_log.csv";
inline constexpr const char* kPretrainCheckpointFile = "pretrain.ckpt";
inline constexpr const char* kFinetuneCheckpointFile = "finetune.ckpt";

struct PreparedData {
  TimeSeriesFrame frame;  // as loaded
  Standardizer scaler;    // identity when standardization is off
  FrameSplits splits;     // scaled
};

/// Loads the configured input, splits it chronologically and standardizes
/// with train statistics. Sets cfg.model.d_x and d_y to the feature count.
PreparedData prepare_data(RunConfig& cfg);

/// Architecture stored in a checkpoint. Feature counts are read off the
/// head shapes since they come from the data rather than the config.
ModelConfig checkpoint_model_config(const Checkpoint& ck, const std::string& source);

/// Independent seed streams derived from the run seed.
enum class SeedStream : std::uint64_t { Init = 1, Pretrain = 2, Finetune = 3 };
std::uint64_t derive_seed(std::uint64_t run_seed, SeedStream stream);

/// Creates `dir`. An existing non-empty directory is an IO error unless
/// `force` is set, in which case the artifacts a run writes are removed
/// (other files are left alone).
void prepare_run_dir(const std::filesystem::path& dir, bool force);

/// `seed`, when given, replaces the seed in the spec file.
void run_synth(const std::filesystem::path& spec_path, const std::filesystem::path& out_csv, bool force,
               std::optional<std::uint64_t> seed = std::nullopt);

struct PretrainSummary {
  std::vector<double> epoch_losses;
  std::filesystem::path checkpoint;
};

struct FinetuneSummary {
  std::vector<double> train_losses;
  std::vector<double> val_losses;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  bool pretrained = false;
  std::filesystem::path checkpoint;
};

PretrainSummary run_pretrain(RunConfig cfg, const std::filesystem::path& out_dir, bool force);

/// Without `init` this trains the un-pretrained baseline.
FinetuneSummary run_finetune(RunConfig cfg, const std::filesystem::path& out_dir,
                             const std::optional<std::filesystem::path>& init, bool force);

/// Scores a fine-tuned checkpoint on the test split and writes the report.
/// The architecture comes from the checkpoint; data settings from `cfg`.
EvalReport run_evaluate(RunConfig cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir,
                        bool force);

struct SweepRow {
  std::string value;
  double pretrain_loss = 0.0;
  double best_val = 0.0;
  double test_mse = 0.0;
  double test_mae = 0.0;
};

/// Maps sweep axis aliases (mask_ratio, decoder_depth, input_len, ...) to config keys.
std::string sweep_key(const std::string& axis);

/// Runs pretrain, fine-tune and evaluate once per value, each in its own
/// sub-directory, and writes summary.csv. Results do not depend on `jobs`.
std::vector<SweepRow> run_sweep(RunConfig cfg, const std::string& axis, const std::vector<std::string>& values,
                                std::size_t jobs, const std::filesystem::path& out_dir, bool force);

}  // namespace mtsmae
