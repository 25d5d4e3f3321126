#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtsmae/data.hpp"
#include "mtsmae/keyvalue.hpp"
#include "mtsmae/model.hpp"
#include "mtsmae/ndarray.hpp"
#include "mtsmae/training.hpp"

namespace mtsmae {

enum class Profile { Desk, Full };

Profile parse_profile(std::string_view name);

struct DataConfig {
  std::string csv;    // path to a dated CSV
  std::string synth;  // or a synthetic spec file
  SplitSpec split;
  bool standardize = true;
};

struct EvalConfig {
  std::size_t plot_dim = 0;
  std::optional<std::size_t> plot_window;
  bool destandardize = false;
  std::size_t jobs = 1;
};

/// Everything a run needs. Feature counts (model.d_x, model.d_y) follow the
/// data and are filled in when the data is loaded.
struct RunConfig {
  std::uint64_t seed = 0;
  DType dtype = DType::Float32;
  DataConfig data;
  ModelConfig model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  EvalConfig eval;
  bool log_wall_ms = true;

  static RunConfig defaults(Profile profile);

  /// Applies `key = value` entries; unknown keys and bad values raise config
  /// errors naming the source line.
  void apply(const std::vector<KeyValueEntry>& entries, const std::string& source);
  /// One override in `key=value` form.
  void set(const std::string& key, const std::string& value);

  /// Fully resolved text in the same format, one key per line.
  std::string to_text() const;
  static RunConfig from_text(const std::string& text, const std::string& source);

  void validate() const;
};

/// Every recognized key with its meaning, for documentation and `schema` output.
struct ConfigKey {
  std::string key;
  std::string description;
};
const std::vector<ConfigKey>& config_schema();

/// Loads the profile defaults, then the optional file, then overrides.
RunConfig load_run_config(Profile profile, const std::optional<std::filesystem::path>& file,
                          const std::vector<std::pair<std::string, std::string>>& overrides = {});

}  // namespace mtsmae
