#include "mtsmae/mtsmae.h"

#include <cstring>
#include <memory>
#include <string>
#include <variant>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mtsmae/checkpoint.hpp"
#include "mtsmae/config.hpp"
#include "mtsmae/error.hpp"
#include "mtsmae/pipeline.hpp"
#include "mtsmae/training.hpp"

struct mtsmae_config {
  mtsmae::RunConfig config;
};

struct mtsmae_model {
  std::variant<mtsmae::MtsmaeModel<float>, mtsmae::MtsmaeModel<double>> model;
};

namespace {

thread_local std::string g_last_error;
thread_local std::string g_last_kind;

mtsmae_status status_of(mtsmae::ErrorKind kind) {
  using mtsmae::ErrorKind;
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Dimension:
    case ErrorKind::Transfer:
      return MTSMAE_ERR_CONFIG;
    case ErrorKind::Index:
    case ErrorKind::Data:
      return MTSMAE_ERR_DATA;
    case ErrorKind::Training:
      return MTSMAE_ERR_TRAINING;
    case ErrorKind::Io:
      return MTSMAE_ERR_IO;
  }
  return MTSMAE_ERR_INTERNAL;
}

mtsmae_status fail(mtsmae_status status, std::string kind, std::string message) {
  g_last_kind = std::move(kind);
  g_last_error = std::move(message);
  return status;
}

template <typename F>
mtsmae_status guarded(F&& body) {
  g_last_error.clear();
  g_last_kind.clear();
  try {
    body();
    return MTSMAE_OK;
  } catch (const mtsmae::Error& e) {
    return fail(status_of(e.kind()), mtsmae::error_kind_name(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(MTSMAE_ERR_INTERNAL, "internal", "out of memory");
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(MTSMAE_ERR_IO, "io", e.what());
  } catch (const std::exception& e) {
    return fail(MTSMAE_ERR_INTERNAL, "internal", e.what());
  } catch (...) {
    return fail(MTSMAE_ERR_INTERNAL, "internal", "unknown failure");
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw mtsmae::Error(mtsmae::ErrorKind::Config, fmt::format("{} must not be null", what));
}

mtsmae::TimeMarks marks_for(const std::int64_t* minutes, std::size_t n, mtsmae::Frequency freq) {
  return mtsmae::extract_time_marks(std::span<const std::int64_t>(minutes, n), freq);
}

template <typename T>
void forecast_typed(const mtsmae::MtsmaeModel<T>& model, const double* x_enc, const std::int64_t* enc_minutes,
                    const std::int64_t* pred_minutes, double* out) {
  const auto& m = model.config();
  std::int64_t step = 0;
  if (m.input_len >= 2) step = enc_minutes[1] - enc_minutes[0];
  else if (m.pred_len >= 1) step = pred_minutes[0] - enc_minutes[m.input_len - 1];
  if (step <= 0) throw mtsmae::Error(mtsmae::ErrorKind::Data, "timestamps must be strictly increasing");
  const auto freq = mtsmae::Frequency::from_minutes(static_cast<int>(step));

  mtsmae::WindowSample w;
  w.x_enc = mtsmae::Matrix(m.input_len, m.d_x);
  std::memcpy(w.x_enc.values.data(), x_enc, sizeof(double) * w.x_enc.values.size());
  w.enc_marks = marks_for(enc_minutes, m.input_len, freq);
  w.x_label = w.x_enc.slice_rows(m.input_len - m.label_len, m.label_len);
  w.label_marks = w.enc_marks.slice(m.input_len - m.label_len, m.label_len);
  w.y_true = mtsmae::Matrix(m.pred_len, m.d_y);
  w.y_marks = marks_for(pred_minutes, m.pred_len, freq);
  const auto y = mtsmae::predict(model, w);
  std::memcpy(out, y.values.data(), sizeof(double) * y.values.size());
}

}  // namespace

extern "C" {

const char* mtsmae_version(void) { return "0.1.0"; }

const char* mtsmae_last_error(void) { return g_last_error.c_str(); }

const char* mtsmae_last_error_kind(void) { return g_last_kind.c_str(); }

mtsmae_status mtsmae_set_log_level(const char* level) {
  return guarded([&] {
    require(level, "level");
    const auto parsed = spdlog::level::from_str(level);
    if (parsed == spdlog::level::off && std::strcmp(level, "off") != 0) {
      throw mtsmae::Error(mtsmae::ErrorKind::Config, fmt::format("unknown log level '{}'", level));
    }
    static const bool installed = [] {
      spdlog::set_default_logger(spdlog::stderr_color_mt("mtsmae"));
      return true;
    }();
    (void)installed;
    spdlog::set_level(parsed);
  });
}

mtsmae_status mtsmae_config_new(const char* profile, mtsmae_config** out) {
  return guarded([&] {
    require(profile, "profile");
    require(out, "out");
    auto cfg = std::make_unique<mtsmae_config>();
    cfg->config = mtsmae::RunConfig::defaults(mtsmae::parse_profile(profile));
    *out = cfg.release();
  });
}

void mtsmae_config_free(mtsmae_config* cfg) { delete cfg; }

mtsmae_status mtsmae_config_load_file(mtsmae_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "config");
    require(path, "path");
    cfg->config.apply(mtsmae::read_key_value_file(path), path);
  });
}

mtsmae_status mtsmae_config_set(mtsmae_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg, "config");
    require(key, "key");
    require(value, "value");
    cfg->config.set(key, value);
  });
}

mtsmae_status mtsmae_config_to_text(const mtsmae_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    require(cfg, "config");
    const std::string text = cfg->config.to_text();
    if (needed != nullptr) *needed = text.size();
    if (buf != nullptr && cap > 0) {
      const std::size_t n = std::min(cap - 1, text.size());
      std::memcpy(buf, text.data(), n);
      buf[n] = '\0';
    }
  });
}

size_t mtsmae_schema_size(void) { return mtsmae::config_schema().size(); }

const char* mtsmae_schema_key(size_t index) {
  const auto& s = mtsmae::config_schema();
  return index < s.size() ? s[index].key.c_str() : nullptr;
}

const char* mtsmae_schema_description(size_t index) {
  const auto& s = mtsmae::config_schema();
  return index < s.size() ? s[index].description.c_str() : nullptr;
}

mtsmae_status mtsmae_synth(const char* spec_path, const char* out_csv, int64_t seed, int force) {
  return guarded([&] {
    require(spec_path, "spec path");
    require(out_csv, "output path");
    std::optional<std::uint64_t> s;
    if (seed >= 0) s = static_cast<std::uint64_t>(seed);
    mtsmae::run_synth(spec_path, out_csv, force != 0, s);
  });
}

mtsmae_status mtsmae_pretrain(const mtsmae_config* cfg, const char* out_dir, int force, double* final_loss) {
  return guarded([&] {
    require(cfg, "config");
    require(out_dir, "output directory");
    const auto s = mtsmae::run_pretrain(cfg->config, out_dir, force != 0);
    if (final_loss != nullptr) *final_loss = s.epoch_losses.empty() ? 0.0 : s.epoch_losses.back();
  });
}

mtsmae_status mtsmae_finetune(const mtsmae_config* cfg, const char* out_dir, const char* init_checkpoint, int force,
                              double* best_val) {
  return guarded([&] {
    require(cfg, "config");
    require(out_dir, "output directory");
    std::optional<std::filesystem::path> init;
    if (init_checkpoint != nullptr && *init_checkpoint != '\0') init = init_checkpoint;
    const auto s = mtsmae::run_finetune(cfg->config, out_dir, init, force != 0);
    if (best_val != nullptr) *best_val = s.best_val;
  });
}

mtsmae_status mtsmae_evaluate(const mtsmae_config* cfg, const char* checkpoint, const char* out_dir, int force,
                              double* mse, double* mae) {
  return guarded([&] {
    require(cfg, "config");
    require(checkpoint, "checkpoint");
    require(out_dir, "output directory");
    const auto r = mtsmae::run_evaluate(cfg->config, checkpoint, out_dir, force != 0);
    if (mse != nullptr) *mse = r.mse;
    if (mae != nullptr) *mae = r.mae;
  });
}

mtsmae_status mtsmae_sweep(const mtsmae_config* cfg, const char* axis, const char* values, size_t jobs,
                           const char* out_dir, int force) {
  return guarded([&] {
    require(cfg, "config");
    require(axis, "axis");
    require(values, "values");
    require(out_dir, "output directory");
    std::vector<std::string> list;
    for (const auto& v : mtsmae::split(values, ',')) {
      const auto t = mtsmae::trim(v);
      if (!t.empty()) list.emplace_back(t);
    }
    mtsmae::run_sweep(cfg->config, axis, list, jobs, out_dir, force != 0);
  });
}

mtsmae_status mtsmae_model_load(const char* checkpoint, mtsmae_model** out) {
  return guarded([&] {
    require(checkpoint, "checkpoint");
    require(out, "out");
    const auto ck = mtsmae::Checkpoint::load(checkpoint);
    const auto model_cfg = mtsmae::checkpoint_model_config(ck, checkpoint);
    std::unique_ptr<mtsmae_model> handle;
    if (ck.dtype == mtsmae::DType::Float32) {
      mtsmae::MtsmaeModel<float> m(model_cfg, 0);
      ck.restore(m);
      handle.reset(new mtsmae_model{std::move(m)});
    } else {
      mtsmae::MtsmaeModel<double> m(model_cfg, 0);
      ck.restore(m);
      handle.reset(new mtsmae_model{std::move(m)});
    }
    *out = handle.release();
  });
}

void mtsmae_model_free(mtsmae_model* model) { delete model; }

mtsmae_status mtsmae_model_shape(const mtsmae_model* model, size_t* input_len, size_t* label_len, size_t* pred_len,
                                 size_t* d_x, size_t* d_y) {
  return guarded([&] {
    require(model, "model");
    const auto& c = std::visit([](const auto& m) -> const mtsmae::ModelConfig& { return m.config(); }, model->model);
    if (input_len != nullptr) *input_len = c.input_len;
    if (label_len != nullptr) *label_len = c.label_len;
    if (pred_len != nullptr) *pred_len = c.pred_len;
    if (d_x != nullptr) *d_x = c.d_x;
    if (d_y != nullptr) *d_y = c.d_y;
  });
}

mtsmae_status mtsmae_model_forecast(const mtsmae_model* model, const double* x_enc, const int64_t* enc_minutes,
                                    const int64_t* pred_minutes, double* out) {
  return guarded([&] {
    require(model, "model");
    require(x_enc, "x_enc");
    require(enc_minutes, "encoder timestamps");
    require(pred_minutes, "forecast timestamps");
    require(out, "out");
    std::visit([&](const auto& m) { forecast_typed(m, x_enc, enc_minutes, pred_minutes, out); }, model->model);
  });
}

}  // extern "C"
