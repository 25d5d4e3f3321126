// Command-line front end. Talks to the library only through mtsmae.h.
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "mtsmae/mtsmae.h"

namespace {

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

int report(mtsmae_status status) {
  if (status == MTSMAE_OK) return 0;
  std::fprintf(stderr, "error kind=%s code=%d message=%s\n", mtsmae_last_error_kind(), static_cast<int>(status),
               quoted(mtsmae_last_error()).c_str());
  return static_cast<int>(status);
}

int usage_error(const std::string& message) {
  std::fprintf(stderr, "error kind=usage code=%d message=%s\n", MTSMAE_ERR_CONFIG, quoted(message).c_str());
  return MTSMAE_ERR_CONFIG;
}

struct Common {
  std::string profile = "desk";
  std::string config;
  std::optional<std::int64_t> seed;
  std::vector<std::string> overrides;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--profile", c.profile, "defaults to start from")->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "run seed (overrides the config)");
  cmd->add_option("--set", c.overrides, "override a config key, key=value (repeatable)");
  cmd->add_option("--out", c.out, "output directory")->required();
  cmd->add_flag("--force", c.force, "overwrite artifacts of a previous run");
}

class Config {
 public:
  ~Config() { mtsmae_config_free(cfg_); }
  mtsmae_config* get() const { return cfg_; }

  mtsmae_status load(const Common& c) {
    if (auto s = mtsmae_config_new(c.profile.c_str(), &cfg_); s != MTSMAE_OK) return s;
    if (!c.config.empty()) {
      if (auto s = mtsmae_config_load_file(cfg_, c.config.c_str()); s != MTSMAE_OK) return s;
    }
    for (const auto& kv : c.overrides) {
      const auto eq = kv.find('=');
      const std::string key = kv.substr(0, eq);
      const std::string value = eq == std::string::npos ? "" : kv.substr(eq + 1);
      if (auto s = mtsmae_config_set(cfg_, key.c_str(), value.c_str()); s != MTSMAE_OK) return s;
    }
    if (c.seed) {
      const std::string v = std::to_string(*c.seed);
      if (auto s = mtsmae_config_set(cfg_, "seed", v.c_str()); s != MTSMAE_OK) return s;
    }
    return MTSMAE_OK;
  }

 private:
  mtsmae_config* cfg_ = nullptr;
};

}  // namespace

int main(int argc, char** argv) {
  const char* level = std::getenv("MTSMAE_LOG");
  if (mtsmae_set_log_level(level != nullptr ? level : "info") != MTSMAE_OK) mtsmae_set_log_level("info");

  CLI::App app{"Masked-autoencoder pretraining and forecasting for multivariate time series"};
  app.set_version_flag("--version", std::string(mtsmae_version()));
  app.require_subcommand(1);

  std::string synth_spec, synth_out;
  std::optional<std::int64_t> synth_seed;
  bool synth_force = false;
  auto* synth = app.add_subcommand("synth", "write a synthetic multivariate CSV");
  synth->add_option("spec", synth_spec, "synthetic spec file")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "output CSV")->required();
  synth->add_option("--seed", synth_seed, "noise seed (overrides the spec)");
  synth->add_flag("--force", synth_force, "overwrite an existing CSV");

  Common pre_opts;
  auto* pre = app.add_subcommand("pretrain", "masked-reconstruction pretraining");
  add_common(pre, pre_opts);

  Common fine_opts;
  std::string init;
  auto* fine = app.add_subcommand("finetune", "train the forecaster (from a pretrained encoder with --init)");
  add_common(fine, fine_opts);
  fine->add_option("--init", init, "pretraining checkpoint")->check(CLI::ExistingFile);

  Common eval_opts;
  std::string checkpoint;
  auto* eval = app.add_subcommand("evaluate", "rolling test-split evaluation of a fine-tuned checkpoint");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", checkpoint, "fine-tuned checkpoint")->required()->check(CLI::ExistingFile);

  Common sweep_opts;
  std::string axis, values;
  std::size_t jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "pretrain, fine-tune and evaluate once per value of one setting");
  add_common(sweep, sweep_opts);
  sweep->add_option("--axis", axis, "mask_ratio, decoder_depth, input_len, ... or any config key")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  sweep->add_option("--jobs", jobs, "values run concurrently")->check(CLI::PositiveNumber);

  auto* schema = app.add_subcommand("schema", "list config keys");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return usage_error(e.what());
  }

  if (*synth) {
    return report(mtsmae_synth(synth_spec.c_str(), synth_out.c_str(), synth_seed.value_or(-1), synth_force ? 1 : 0));
  }
  if (*schema) {
    for (std::size_t i = 0; i < mtsmae_schema_size(); ++i) {
      std::printf("%-28s %s\n", mtsmae_schema_key(i), mtsmae_schema_description(i));
    }
    return 0;
  }

  Config cfg;
  if (*pre) {
    if (auto s = cfg.load(pre_opts); s != MTSMAE_OK) return report(s);
    double loss = 0.0;
    const auto s = mtsmae_pretrain(cfg.get(), pre_opts.out.c_str(), pre_opts.force, &loss);
    if (s == MTSMAE_OK) std::printf("pretrain loss %.6f\n", loss);
    return report(s);
  }
  if (*fine) {
    if (auto s = cfg.load(fine_opts); s != MTSMAE_OK) return report(s);
    double best = 0.0;
    const auto s = mtsmae_finetune(cfg.get(), fine_opts.out.c_str(), init.empty() ? nullptr : init.c_str(),
                                   fine_opts.force, &best);
    if (s == MTSMAE_OK) std::printf("best validation mse %.6f\n", best);
    return report(s);
  }
  if (*eval) {
    if (auto s = cfg.load(eval_opts); s != MTSMAE_OK) return report(s);
    double mse = 0.0, mae = 0.0;
    const auto s = mtsmae_evaluate(cfg.get(), checkpoint.c_str(), eval_opts.out.c_str(), eval_opts.force, &mse, &mae);
    if (s == MTSMAE_OK) std::printf("test mse %.6f mae %.6f\n", mse, mae);
    return report(s);
  }
  if (*sweep) {
    if (auto s = cfg.load(sweep_opts); s != MTSMAE_OK) return report(s);
    return report(mtsmae_sweep(cfg.get(), axis.c_str(), values.c_str(), jobs, sweep_opts.out.c_str(),
                               sweep_opts.force));
  }
  return usage_error("no command");
}
