#include "mtsmae/pipeline.hpp"

#include <atomic>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mtsmae/error.hpp"
#include "mtsmae/training.hpp"

namespace mtsmae {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kArtifacts = {kResolvedConfigFile, kTrainLogFile, kPretrainCheckpointFile,
                                             kFinetuneCheckpointFile, "metrics.csv", "predictions.csv",
                                             "chart.svg", "summary.json", "summary.csv"};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write {}", path.string()));
}

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

WindowDataset windows_of(const TimeSeriesFrame& frame, const ModelConfig& m, std::size_t stride, const char* split) {
  if (frame.length() < m.input_len + m.pred_len) {
    throw Error(ErrorKind::Data, fmt::format("{} split has {} rows; one window needs L_x + L_y = {}", split,
                                             frame.length(), m.input_len + m.pred_len));
  }
  return make_windows(frame, m.input_len, m.label_len, m.pred_len, stride);
}

template <typename T>
PretrainSummary pretrain_typed(const RunConfig& cfg, const PreparedData& data, const fs::path& out_dir) {
  MtsmaeModel<T> model(cfg.model, derive_seed(cfg.seed, SeedStream::Init));
  const auto train = windows_of(data.splits.train, cfg.model, cfg.pretrain.window_stride, "train");
  std::mt19937_64 rng(derive_seed(cfg.seed, SeedStream::Pretrain));
  TrainingLog log(out_dir / kTrainLogFile, cfg.log_wall_ms);
  spdlog::info("pretraining on {} windows ({} parameters)", train.size(), model.parameter_count());
  auto result = pretrain(model, cfg.pretrain, train, rng, log);
  PretrainSummary summary;
  summary.epoch_losses = result.epoch_losses;
  summary.checkpoint = out_dir / kPretrainCheckpointFile;
  Checkpoint::capture(model, cfg.pretrain.epochs, cfg.to_text(), rng_text(rng)).save(summary.checkpoint);
  return summary;
}

template <typename T>
FinetuneSummary finetune_typed(const RunConfig& cfg, const PreparedData& data, const fs::path& out_dir,
                               const std::optional<Checkpoint>& init) {
  MtsmaeModel<T> model(cfg.model, derive_seed(cfg.seed, SeedStream::Init));
  if (init) transfer_encoder(model, *init);
  const auto train = windows_of(data.splits.train, cfg.model, cfg.finetune.window_stride, "train");
  const auto val = windows_of(data.splits.val, cfg.model, 1, "validation");
  std::mt19937_64 rng(derive_seed(cfg.seed, SeedStream::Finetune));
  TrainingLog log(out_dir / kTrainLogFile, cfg.log_wall_ms);
  spdlog::info("fine-tuning on {} windows, validating on {} ({})", train.size(), val.size(),
               init ? "from pretrained encoder" : "from scratch");
  auto result = finetune(model, cfg.finetune, train, val, rng, log);
  FinetuneSummary summary;
  summary.train_losses = result.train_losses;
  summary.val_losses = result.val_losses;
  summary.best_epoch = result.best_epoch;
  summary.best_val = result.best_val;
  summary.pretrained = init.has_value();
  summary.checkpoint = out_dir / kFinetuneCheckpointFile;
  Checkpoint::capture(model, result.best_epoch, cfg.to_text(), rng_text(rng)).save(summary.checkpoint);
  return summary;
}

template <typename T>
EvalReport evaluate_typed(const RunConfig& cfg, const PreparedData& data, const Checkpoint& ck) {
  MtsmaeModel<T> model(cfg.model, derive_seed(cfg.seed, SeedStream::Init));
  ck.restore(model);
  const auto& m = cfg.model;
  EvalOptions options;
  options.jobs = cfg.eval.jobs;
  options.destandardize = cfg.eval.destandardize ? &data.scaler : nullptr;
  options.fingerprint = fingerprint(cfg.to_text());
  auto report = rolling_evaluate([&](const WindowSample& w) { return predict(model, w); }, data.splits.test,
                                 m.input_len, m.label_len, m.pred_len, options);
  auto baseline = rolling_evaluate([&](const WindowSample& w) { return persistence_baseline(w.x_enc, m.pred_len); },
                                   data.splits.test, m.input_len, m.label_len, m.pred_len, options);
  report.baseline_mse = baseline.mse;
  report.baseline_mae = baseline.mae;
  return report;
}

}  // namespace

ModelConfig checkpoint_model_config(const Checkpoint& ck, const std::string& source) {
  ModelConfig m = RunConfig::from_text(ck.config_text, source).model;
  const auto dims_of = [&](const char* name) -> std::size_t {
    const TensorRecord* t = ck.find(name);
    if (t == nullptr || t->shape.size() != 1) {
      throw Error(ErrorKind::Transfer, fmt::format("{}: missing or malformed tensor {}", source, name));
    }
    return t->shape[0];
  };
  const std::size_t recon = dims_of("pretrain.head.bias");
  if (recon % m.patch_size() != 0) {
    throw Error(ErrorKind::Transfer, fmt::format("{}: pretrain head width {} is not a multiple of p^2 = {}", source,
                                                 recon, m.patch_size()));
  }
  m.d_x = recon / m.patch_size();
  m.d_y = dims_of("finetune.head.bias");
  m.validate();
  return m;
}

std::uint64_t derive_seed(std::uint64_t run_seed, SeedStream stream) {
  // splitmix64 over (seed, stream)
  std::uint64_t z = run_seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(stream) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

PreparedData prepare_data(RunConfig& cfg) {
  PreparedData d;
  if (!cfg.data.csv.empty()) {
    d.frame = load_csv(cfg.data.csv);
  } else if (!cfg.data.synth.empty()) {
    d.frame = synth_generate(SynthSpec::from_file(cfg.data.synth));
  } else {
    throw Error(ErrorKind::Config, "no input: set data.csv or data.synth");
  }
  cfg.model.d_x = d.frame.dims();
  cfg.model.d_y = d.frame.dims();
  FrameSplits raw = split_frame(d.frame, cfg.data.split);
  if (cfg.data.standardize) {
    d.scaler = Standardizer::fit(raw.train.values);
  } else {
    d.scaler.mean.assign(d.frame.dims(), 0.0);
    d.scaler.std.assign(d.frame.dims(), 1.0);
  }
  d.splits = {d.scaler.apply(raw.train), d.scaler.apply(raw.val), d.scaler.apply(raw.test)};
  return d;
}

void prepare_run_dir(const fs::path& dir, bool force) {
  std::error_code ec;
  if (fs::exists(dir, ec) && !fs::is_empty(dir, ec)) {
    if (!force) {
      throw Error(ErrorKind::Io, fmt::format("refusing to overwrite non-empty {} (pass --force)", dir.string()));
    }
    for (const auto& name : kArtifacts) fs::remove(dir / name, ec);
  }
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, fmt::format("cannot create {}: {}", dir.string(), ec.message()));
}

void run_synth(const fs::path& spec_path, const fs::path& out_csv, bool force, std::optional<std::uint64_t> seed) {
  auto spec = SynthSpec::from_file(spec_path);
  if (seed) spec.seed = *seed;
  if (fs::exists(out_csv) && !force) {
    throw Error(ErrorKind::Io, fmt::format("refusing to overwrite {} (pass --force)", out_csv.string()));
  }
  if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
  write_csv(synth_generate(spec), out_csv);
}

PretrainSummary run_pretrain(RunConfig cfg, const fs::path& out_dir, bool force) {
  auto data = prepare_data(cfg);
  cfg.validate();
  prepare_run_dir(out_dir, force);
  write_text(out_dir / kResolvedConfigFile, cfg.to_text());
  return cfg.dtype == DType::Float32 ? pretrain_typed<float>(cfg, data, out_dir)
                                     : pretrain_typed<double>(cfg, data, out_dir);
}

FinetuneSummary run_finetune(RunConfig cfg, const fs::path& out_dir, const std::optional<fs::path>& init, bool force) {
  auto data = prepare_data(cfg);
  cfg.validate();
  std::optional<Checkpoint> ck;
  if (init) ck = Checkpoint::load(*init);
  prepare_run_dir(out_dir, force);
  write_text(out_dir / kResolvedConfigFile, cfg.to_text());
  return cfg.dtype == DType::Float32 ? finetune_typed<float>(cfg, data, out_dir, ck)
                                     : finetune_typed<double>(cfg, data, out_dir, ck);
}

EvalReport run_evaluate(RunConfig cfg, const fs::path& checkpoint, const fs::path& out_dir, bool force) {
  const auto ck = Checkpoint::load(checkpoint);
  const ModelConfig trained = checkpoint_model_config(ck, checkpoint.string());
  cfg.model = trained;
  auto data = prepare_data(cfg);
  if (data.frame.dims() != trained.d_x) {
    throw Error(ErrorKind::Data,
                fmt::format("checkpoint expects {} features, data has {}", trained.d_x, data.frame.dims()));
  }
  cfg.validate();
  prepare_run_dir(out_dir, force);
  write_text(out_dir / kResolvedConfigFile, cfg.to_text());
  auto report = ck.dtype == DType::Float32 ? evaluate_typed<float>(cfg, data, ck) : evaluate_typed<double>(cfg, data, ck);
  emit_report(report, out_dir, {cfg.eval.plot_dim, cfg.eval.plot_window});
  spdlog::info("evaluated {} windows: mse {:.6f} mae {:.6f} (persistence mse {:.6f})", report.windows(), report.mse,
               report.mae, report.baseline_mse.value_or(0.0));
  return report;
}

std::string sweep_key(const std::string& axis) {
  if (axis == "mask_ratio") return "pretrain.mask_ratio";
  if (axis == "decoder_depth" || axis == "pretrain_dec_layers") return "model.pretrain_dec_layers";
  if (axis == "finetune_dec_layers") return "model.finetune_dec_layers";
  if (axis == "input_len") return "model.input_len";
  if (axis == "enc_layers") return "model.enc_layers";
  if (axis == "patch_stride") return "model.patch_stride";
  for (const auto& k : config_schema()) {
    if (k.key == axis) return axis;
  }
  throw Error(ErrorKind::Config, fmt::format("unknown sweep axis '{}'", axis));
}

std::vector<SweepRow> run_sweep(RunConfig cfg, const std::string& axis, const std::vector<std::string>& values,
                                std::size_t jobs, const fs::path& out_dir, bool force) {
  const std::string key = sweep_key(axis);
  if (values.empty()) throw Error(ErrorKind::Config, "sweep needs at least one value");
  // Reject bad values before any work starts.
  std::vector<RunConfig> configs;
  for (const auto& v : values) {
    RunConfig c = cfg;
    c.set(key, v);
    c.model.validate();
    c.pretrain.validate();
    configs.push_back(c);
  }
  prepare_run_dir(out_dir, force);

  std::vector<SweepRow> rows(values.size());
  auto run_one = [&](std::size_t i) {
    const fs::path sub = out_dir / fmt::format("{}={}", axis, values[i]);
    const auto pre = run_pretrain(configs[i], sub / "pretrain", force);
    const auto fine = run_finetune(configs[i], sub / "finetune", pre.checkpoint, force);
    const auto report = run_evaluate(configs[i], fine.checkpoint, sub / "evaluate", force);
    rows[i] = {values[i], pre.epoch_losses.back(), fine.best_val, report.mse, report.mae};
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, values.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < values.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex m;
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < workers; ++k) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < values.size(); i = next++) {
          try {
            run_one(i);
          } catch (...) {
            std::lock_guard lock(m);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  std::string csv = fmt::format("{},pretrain_loss,best_val,test_mse,test_mae\n", axis);
  for (const auto& r : rows) csv += fmt::format("{},{},{},{},{}\n", r.value, r.pretrain_loss, r.best_val, r.test_mse, r.test_mae);
  write_text(out_dir / "summary.csv", csv);
  write_text(out_dir / kResolvedConfigFile, cfg.to_text());
  return rows;
}

}  // namespace mtsmae
