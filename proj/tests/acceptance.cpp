// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Run a subset with criterion numbers as arguments, e.g. `acceptance 8 10`.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mtsmae/checkpoint.hpp"
#include "mtsmae/config.hpp"
#include "mtsmae/data.hpp"
#include "mtsmae/embedding.hpp"
#include "mtsmae/evaluation.hpp"
#include "mtsmae/masking.hpp"
#include "mtsmae/model.hpp"
#include "mtsmae/pipeline.hpp"
#include "mtsmae/training.hpp"

using namespace mtsmae;
namespace fs = std::filesystem;
using A = NDArray<double>;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

A random_array(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return A::from(std::move(shape), std::move(v));
}

TimeMarks hourly(std::size_t n, std::int64_t first_hour = 0) {
  std::vector<std::int64_t> ts(n);
  for (std::size_t i = 0; i < n; ++i) ts[i] = (400000 + first_hour + static_cast<std::int64_t>(i)) * 60;
  return extract_time_marks(ts, Frequency::from_minutes(60));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / "mtsmae_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ModelConfig grad_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.enc_layers = 1;
  c.pretrain_dec_layers = 1;
  c.finetune_dec_layers = 1;
  c.patch_stride = 2;
  c.dropout = 0.0;
  c.input_len = 16;
  c.label_len = 8;
  c.pred_len = 4;
  c.d_x = 2;
  c.d_y = 2;
  return c;
}

// Noiseless multi-tone series used by the training criteria.
SynthSpec multi_sine(std::size_t n, double noise_std, std::uint64_t seed) {
  SynthSpec s;
  s.n = n;
  s.d = 3;
  s.components = {{24.0, 1.0, 0.0}, {12.0, 0.5, 0.3}, {6.0, 0.25, 1.1}};
  s.noise_std = noise_std;
  s.seed = seed;
  return s;
}

TimeSeriesFrame standardized(const TimeSeriesFrame& f) { return Standardizer::fit(f.values).apply(f); }

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::vector<std::pair<std::string, double>> errs;
  auto check = [&](const std::string& name, const ScalarFunction& f, std::vector<A> inputs) {
    errs.emplace_back(name, grad_check(f, std::move(inputs)));
  };
  auto w = [&](Shape s) { return random_array(std::move(s), rng); };

  check("matmul", [](const auto& in) { return sum(square(matmul(in[0], in[1]))); }, {w({3, 4}), w({4, 5})});
  check("conv1d", [](const auto& in) { return sum(square(conv1d(in[0], in[1], 1, 1))); }, {w({7, 3}), w({3, 3, 4})});
  check("conv1d/strided", [](const auto& in) { return sum(square(conv1d(in[0], in[1], 2, 0))); },
        {w({8, 3}), w({2, 3, 4})});
  check("layer_norm", [](const auto& in) { return sum(mul(layer_norm(in[0], in[1], in[2]), in[3])); },
        {w({4, 6}), w({6}), w({6}), w({4, 6})});
  check("softmax", [](const auto& in) { return sum(mul(softmax(in[0]), in[1])); }, {w({3, 5}), w({3, 5})});
  check("causal_mask", [](const auto& in) { return sum(mul(softmax(causal_mask(in[0])), in[1])); },
        {w({4, 4}), w({4, 4})});
  check("relu", [](const auto& in) { return sum(mul(relu(in[0]), in[1])); }, {w({5, 4}), w({5, 4})});
  check("add", [](const auto& in) { return sum(square(add(in[0], in[1]))); }, {w({3, 4}), w({3, 4})});
  check("sub", [](const auto& in) { return sum(square(sub(in[0], in[1]))); }, {w({3, 4}), w({3, 4})});
  check("mul", [](const auto& in) { return sum(mul(in[0], in[1])); }, {w({3, 4}), w({3, 4})});
  check("scale", [](const auto& in) { return sum(square(scale(in[0], 0.37))); }, {w({3, 4})});
  check("add_bias", [](const auto& in) { return sum(square(add_bias(in[0], in[1]))); }, {w({3, 4}), w({4})});
  check("transpose", [](const auto& in) { return sum(mul(transpose(in[0]), in[1])); }, {w({3, 4}), w({4, 3})});
  check("concat_rows", [](const auto& in) { return sum(square(concat_rows<double>({in[0], in[1]}))); },
        {w({2, 3}), w({4, 3})});
  check("concat_cols", [](const auto& in) { return sum(square(concat_cols<double>({in[0], in[1]}))); },
        {w({3, 2}), w({3, 4})});
  check("slice_cols", [](const auto& in) { return sum(square(slice_cols(in[0], 1, 4))); }, {w({3, 5})});
  check("gather_rows",
        [](const auto& in) {
          const std::vector<std::size_t> ids = {3, 0, 3, 1};
          return sum(square(gather_rows(in[0], std::span<const std::size_t>(ids))));
        },
        {w({4, 3})});
  check("embedding_lookup",
        [](const auto& in) {
          const std::vector<std::int64_t> ids = {2, 0, 2, 4};
          return sum(square(embedding_lookup(in[0], std::span<const std::int64_t>(ids))));
        },
        {w({5, 3})});
  check("reshape", [](const auto& in) { return sum(mul(reshape(in[0], {6, 2}), in[1])); }, {w({3, 4}), w({6, 2})});
  check("mean", [](const auto& in) { return mean(square(in[0])); }, {w({3, 4})});
  check("dropout",
        [](const auto& in) {
          std::mt19937_64 r(5);
          return sum(square(dropout(in[0], 0.3, r)));
        },
        {w({4, 5})});

  // Full reconstruction loss with respect to every pretraining parameter.
  // Generic parameter values: at the 0.02-scale init many gradient entries are
  // so small that central differences resolve them only to roundoff.
  MtsmaeModel<double> model(grad_config(), 3);
  for (auto& p : model.parameters()) {
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (auto& v : p.value.mutable_data()) v += u(rng);
  }
  const A x = random_array({16, 2}, rng);
  const TimeMarks marks = hourly(16);
  const MaskPlan plan = make_mask_plan(4, {1, 3});
  std::vector<A> params;
  for (const auto& p : phase_parameters(model, kPretrainPrefixes)) params.push_back(p.value);
  const A target = reconstruction_targets(x, plan, 2);
  check("pretrain loss",
        [&](const auto&) { return masked_mse_loss(model.pretrain_forward(x, marks, plan).reconstruction, target, plan); },
        params);

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, e] : errs) {
    if (!(e <= worst)) {
      worst = e;
      worst_name = name;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          fmt::format("{} checks, max rel err {:.2e} ({}), {:.1f}s", errs.size(), worst, worst_name, secs)};
}

Outcome mask_accounting() {
  std::mt19937_64 rng(2);
  const auto plan = sample_mask(196, 0.85, rng);
  const bool counts = plan.visible_ids.size() == 29 && plan.masked_ids.size() == 167;
  std::vector<int> hits(196, 0);
  for (int draw = 0; draw < 10000; ++draw) {
    for (auto id : sample_mask(196, 0.85, rng).visible_ids) ++hits[id];
  }
  const auto [lo, hi] = std::minmax_element(hits.begin(), hits.end());
  const bool rates = *lo >= 1000 && *hi <= 2000;
  return {counts && rates, fmt::format("{} visible / {} masked, visible rate in [{:.4f}, {:.4f}]",
                                       plan.visible_ids.size(), plan.masked_ids.size(), *lo / 1e4, *hi / 1e4)};
}

Outcome masked_loss_locality() {
  std::mt19937_64 rng(3);
  MtsmaeModel<double> model(grad_config(), 4);
  std::size_t trials = 0, changed = 0;
  for (int t = 0; t < 200; ++t) {
    const A x = random_array({16, 2}, rng);
    const auto plan = sample_mask(4, 0.5, rng);
    const A target = reconstruction_targets(x, plan, 2);
    const A pred = model.pretrain_forward(x, hourly(16), plan).reconstruction.detach();
    const double base = masked_mse_loss(pred, target, plan).item();
    A moved = pred.detach();
    std::normal_distribution<double> n(0.0, 50.0);
    for (auto id : plan.visible_ids) {
      for (std::size_t c = 0; c < pred.dim(1); ++c) moved.mutable_data()[id * pred.dim(1) + c] += n(rng);
    }
    const double after = masked_mse_loss(moved, target, plan).item();
    ++trials;
    if (after - base != 0.0) ++changed;
  }
  return {changed == 0, fmt::format("{} perturbations, {} changed the loss", trials, changed)};
}

Outcome visible_token_invariance() {
  std::mt19937_64 rng(4);
  std::size_t trials = 0, differing = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cfg = grad_config();
    cfg.input_len = 64;
    cfg.label_len = 16;
    MtsmaeModel<double> model(cfg, seed);
    const A x = random_array({64, 2}, rng);
    const auto marks = hourly(64);
    const auto plan = sample_mask(16, 0.75, rng);
    const auto base = model.pretrain_forward(x, marks, plan).encoded.detach();
    for (double value : {0.0, 1e6, -3.5, std::nan("")}) {
      for (auto& v : model.mask_token.mutable_data()) v = value;
      const auto enc = model.pretrain_forward(x, marks, plan).encoded;
      const auto a = base.data(), b = enc.data();
      ++trials;
      if (a.size() != b.size() || std::memcmp(a.data(), b.data(), a.size_bytes()) != 0) ++differing;
    }
  }
  return {differing == 0, fmt::format("{} mask-token values, {} changed visible encodings", trials, differing)};
}

Outcome decoder_causality() {
  std::mt19937_64 rng(5);
  std::size_t checked = 0, violations = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = grad_config();
    cfg.finetune_dec_layers = 2;
    MtsmaeModel<double> model(cfg, seed);
    const A x = random_array({16, 2}, rng);
    const auto enc = model.encode(patch_embed(embed(x, hourly(16), model.embedding), model.embedding));
    const A label = random_array({8, 2}, rng);
    const auto tokens = model.decoder_tokens(label, hourly(8, 8), hourly(4, 16));
    const auto base = model.decode(tokens, enc);
    const std::size_t n = tokens.dim(0), d = tokens.dim(1);
    for (std::size_t j = 0; j < n; ++j) {
      A moved = tokens.detach();
      std::normal_distribution<double> noise(0.0, 2.0);
      for (std::size_t c = 0; c < d; ++c) moved.mutable_data()[j * d + c] += noise(rng);
      const auto out = model.decode(moved, enc);
      for (std::size_t i = 0; i < j; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
          ++checked;
          if (out.at(i, c) != base.at(i, c)) ++violations;
        }
      }
    }
  }
  return {violations == 0, fmt::format("{} earlier outputs compared, {} moved", checked, violations)};
}

Outcome shape_contract() {
  std::size_t cases = 0, bad = 0;
  std::mt19937_64 rng(6);
  for (std::size_t Lx : {64, 784}) {
    for (std::size_t p : {1, 2}) {
      for (std::size_t Ly : {8, 24}) {
        ModelConfig c = grad_config();
        c.d_x = c.d_y = 3;
        c.input_len = Lx;
        c.patch_stride = p;
        c.pred_len = Ly;
        c.label_len = 2 * Ly;
        MtsmaeModel<double> model(c, 1);
        const std::size_t L = Lx / (p * p);
        const A x = random_array({Lx, 3}, rng);
        const auto marks = hourly(Lx);
        const auto plan = sample_mask(L, 0.85, rng);
        const auto out = model.pretrain_forward(x, marks, plan);
        std::vector<std::size_t> tail(c.label_len);
        std::iota(tail.begin(), tail.end(), Lx - c.label_len);
        const A label = gather_rows(x, std::span<const std::size_t>(tail));
        const auto label_marks = marks.slice(Lx - c.label_len, c.label_len);
        const auto y_marks = hourly(Ly, static_cast<std::int64_t>(Lx));
        const auto tokens = model.decoder_tokens(label, label_marks, y_marks);
        const auto y = model.finetune_forward(x, marks, label, label_marks, y_marks);
        const bool ok = embed(x, marks, model.embedding).shape() == Shape{Lx, c.d_model} &&
                        patch_embed(embed(x, marks, model.embedding), model.embedding).shape() == Shape{L, c.d_model} &&
                        out.encoded.shape() == Shape{visible_count(L, 0.85), c.d_model} &&
                        out.reconstruction.shape() == Shape{L, p * p * 3} &&
                        tokens.shape() == Shape{c.label_len / (p * p) + Ly, c.d_model} &&
                        y.shape() == Shape{Ly, 3};
        ++cases;
        if (!ok) ++bad;
      }
    }
  }
  return {bad == 0, fmt::format("{} grid points, {} mismatched", cases, bad)};
}

double brute_mse(const Matrix& y, const Matrix& yhat) {
  double total = 0.0;
  for (std::size_t i = 0; i < y.rows; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < y.cols; ++j) {
      const double e = y.values[i * y.cols + j] - yhat.values[i * y.cols + j];
      row += e * e / static_cast<double>(y.cols);
    }
    total += row;
  }
  return total / static_cast<double>(y.rows);
}

double brute_mae(const Matrix& y, const Matrix& yhat) {
  double total = 0.0;
  for (std::size_t i = 0; i < y.rows; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < y.cols; ++j) {
      row += std::abs(y.values[i * y.cols + j] - yhat.values[i * y.cols + j]) / static_cast<double>(y.cols);
    }
    total += row;
  }
  return total / static_cast<double>(y.rows);
}

Outcome metric_oracle() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> dim(1, 16);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::size_t mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    Matrix y(dim(rng), dim(rng)), yhat;
    yhat = Matrix(y.rows, y.cols);
    for (auto& v : y.values) v = u(rng);
    for (auto& v : yhat.values) v = u(rng);
    if (mse(y, yhat) != brute_mse(y, yhat) || mae(y, yhat) != brute_mae(y, yhat)) ++mismatches;
  }
  Matrix y(2, 2), yhat(2, 2);
  y.values = {1, 2, 3, 4};
  yhat.values = {1, 3, 3, 6};
  const double m = mse(y, yhat), a = mae(y, yhat);
  return {mismatches == 0 && m == 1.25 && a == 0.75,
          fmt::format("200 random cases, {} mismatches; worked example mse {} mae {}", mismatches, m, a)};
}

Outcome overfit_check() {
  const auto t0 = Clock::now();
  ModelConfig mc = ModelConfig::desk();
  mc.dropout = 0.0;
  const std::size_t windows = 200;
  const auto frame = standardized(synth_generate(multi_sine(windows + mc.input_len + mc.pred_len - 1, 0.0, 1)));
  mc.d_x = mc.d_y = frame.dims();
  const auto train = make_windows(frame, mc.input_len, mc.label_len, mc.pred_len, 1);

  MtsmaeModel<float> model(mc, 11);
  FinetuneConfig cfg;
  cfg.lr = 1e-3;
  cfg.lr_decay = 0.95;
  cfg.batch_size = 8;
  cfg.epochs = 50;
  cfg.patience = 50;
  std::mt19937_64 rng(12);
  TrainingLog log;
  // Scored on the training windows themselves: this is a capacity check.
  const auto r = finetune(model, cfg, train, train, rng, log);
  const double final_mse = forecast_loss(model, train);
  const double secs = seconds_since(t0);
  return {train.size() == windows && final_mse < 0.05 && r.train_losses.size() <= 50 && secs < 120.0,
          fmt::format("{} windows, train mse {:.4f} after {} epochs (epoch 1: {:.4f}), {:.1f}s", train.size(),
                      final_mse, r.train_losses.size(), r.train_losses.front(), secs)};
}

Outcome pretraining_learns() {
  const auto t0 = Clock::now();
  ModelConfig mc = ModelConfig::desk();
  const auto frame = standardized(synth_generate(multi_sine(8000, 0.0, 2)));
  mc.d_x = mc.d_y = frame.dims();
  const auto train = make_windows(frame, mc.input_len, mc.label_len, mc.pred_len, 1);
  MtsmaeModel<float> model(mc, 21);
  PretrainConfig cfg;
  cfg.epochs = 20;
  cfg.mask_ratio = 0.85;
  std::mt19937_64 rng(22);
  TrainingLog log;
  const auto r = pretrain(model, cfg, train, rng, log);
  const double first = r.epoch_losses.front(), last = r.epoch_losses.back();
  return {last <= 0.5 * first, fmt::format("epoch 1 loss {:.4f}, epoch 20 loss {:.4f} (ratio {:.3f}), {:.1f}s", first,
                                           last, last / first, seconds_since(t0))};
}

struct SeedScores {
  double pretrained = 0.0;
  double scratch = 0.0;
  double persistence = 0.0;
};

SeedScores pretraining_helps_one(std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir);
  const auto spec = dir / "spec.txt";
  std::ofstream(spec) << "n = 5000\nd = 3\nsine = 24, 1.0, 0.0\nsine = 12, 0.5, 0.3\nsine = 6, 0.25, 1.1\n"
                      << "noise_std = 0.3\nseed = " << 100 + seed << "\n";
  RunConfig cfg = RunConfig::defaults(Profile::Desk);
  cfg.seed = seed;
  cfg.data.synth = spec.string();
  cfg.data.split = SplitSpec::parse("ratio:0.7,0.1,0.2");
  cfg.pretrain.epochs = 20;
  cfg.finetune.lr = 1e-3;
  cfg.finetune.lr_decay = 0.8;
  cfg.finetune.batch_size = 32;
  cfg.finetune.epochs = 10;
  cfg.log_wall_ms = false;

  SeedScores s;
  const auto pre = run_pretrain(cfg, dir / "pretrain", true);
  const auto fine = run_finetune(cfg, dir / "mtsmae", pre.checkpoint, true);
  const auto a = run_evaluate(cfg, fine.checkpoint, dir / "mtsmae_eval", true);
  const auto base = run_finetune(cfg, dir / "patchtrans", std::nullopt, true);
  const auto b = run_evaluate(cfg, base.checkpoint, dir / "patchtrans_eval", true);
  s.pretrained = a.mse;
  s.scratch = b.mse;
  s.persistence = a.baseline_mse.value_or(0.0);
  return s;
}

Outcome pretraining_helps() {
  const auto t0 = Clock::now();
  const auto dir = scratch("helps");
  std::vector<double> with, without, persistence;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s = pretraining_helps_one(seed, dir / fmt::format("seed{}", seed));
    with.push_back(s.pretrained);
    without.push_back(s.scratch);
    persistence.push_back(s.persistence);
    per_seed += fmt::format(" [{:.4f} {:.4f} {:.4f}]", s.pretrained, s.scratch, s.persistence);
  }
  const double mw = median(with), mo = median(without), mp = median(persistence);
  return {mw <= 1.05 * mo && mw < mp && mo < mp,
          fmt::format("median test mse pretrained {:.4f}, scratch {:.4f}, persistence {:.4f};{} {:.0f}s", mw, mo, mp,
                      per_seed, seconds_since(t0))};
}

Outcome recipe_constants() {
  std::vector<std::string> failed;
  if (std::abs(scaled_lr(1e-3, 64) - 2.5e-4) > 1e-18) failed.push_back("scaled_lr");
  for (std::size_t e = 0; e < 10; ++e) {
    if (exponential_lr(e + 1, 1e-4) != 0.5 * exponential_lr(e, 1e-4)) failed.push_back("halving");
  }
  if (std::abs(exponential_lr(3, 1e-4) - 1.25e-5) > 1e-20) failed.push_back("epoch 3 lr");
  EarlyStopper stopper(FinetuneConfig{}.patience);
  const std::vector<double> trace = {3, 2, 2.1, 2.2, 2.3};
  std::size_t stopped_at = 0;
  for (std::size_t i = 0; i < trace.size() && stopped_at == 0; ++i) {
    if (stopper.update(trace[i])) stopped_at = i + 1;
  }
  if (stopped_at != 5 || stopper.best_epoch() != 2) failed.push_back("patience trace");
  std::string joined;
  for (const auto& f : failed) joined += " " + f;
  return {failed.empty(), failed.empty() ? fmt::format("scaled_lr(1e-3,64)={}, stop after epoch {}, best epoch {}",
                                                       scaled_lr(1e-3, 64), stopped_at, stopper.best_epoch())
                                         : "failed:" + joined};
}

Outcome reproducibility() {
  const auto dir = scratch("repro");
  const auto spec = dir / "spec.txt";
  std::ofstream(spec) << "n = 400\nd = 2\nsine = 24, 1.0, 0.0\nnoise_std = 0.2\nseed = 5\n";
  RunConfig cfg = RunConfig::defaults(Profile::Desk);
  cfg.data.synth = spec.string();
  cfg.data.split = SplitSpec::parse("ratio:0.6,0.2,0.2");
  cfg.pretrain.epochs = 2;
  cfg.finetune.epochs = 2;
  cfg.finetune.lr = 1e-3;
  cfg.log_wall_ms = false;
  cfg.seed = 9;

  // Bitwise save/load round trip.
  ModelConfig mc = ModelConfig::desk();
  mc.d_x = mc.d_y = 2;
  MtsmaeModel<float> a(mc, 1);
  const auto path = dir / "round.ckpt";
  Checkpoint::capture(a, 0, cfg.to_text(), "").save(path);
  MtsmaeModel<float> b(mc, 2);
  Checkpoint::load(path).restore(b);
  bool bitwise = true;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto x = a.parameters()[i].value.data(), y = b.parameters()[i].value.data();
    bitwise = bitwise && std::memcmp(x.data(), y.data(), x.size_bytes()) == 0;
  }

  // Two complete runs with the same seed.
  for (const char* run : {"run1", "run2"}) {
    run_pretrain(cfg, dir / run / "pretrain", false);
    run_finetune(cfg, dir / run / "finetune", dir / run / "pretrain" / kPretrainCheckpointFile, false);
  }
  bool logs = true, ckpts = true;
  for (const char* phase : {"pretrain", "finetune"}) {
    logs = logs && slurp(dir / "run1" / phase / kTrainLogFile) == slurp(dir / "run2" / phase / kTrainLogFile);
  }
  ckpts = slurp(dir / "run1" / "pretrain" / kPretrainCheckpointFile) ==
              slurp(dir / "run2" / "pretrain" / kPretrainCheckpointFile) &&
          slurp(dir / "run1" / "finetune" / kFinetuneCheckpointFile) ==
              slurp(dir / "run2" / "finetune" / kFinetuneCheckpointFile);
  return {bitwise && logs && ckpts,
          fmt::format("round trip {}, logs {}, checkpoints {}", bitwise ? "bitwise" : "DIFFERS",
                      logs ? "identical" : "DIFFER", ckpts ? "identical" : "DIFFER")};
}

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

Outcome cli_smoke() {
  const auto t0 = Clock::now();
  const auto dir = scratch("cli");
  std::ofstream(dir / "spec.txt") << "n = 1200\nd = 3\nsine = 24, 1.0, 0.0\nsine = 12, 0.5, 0.3\nnoise_std = 0.2\n";
  std::ofstream(dir / "run.cfg") << "data.csv = data.csv\npretrain.epochs = 5\nfinetune.epochs = 5\n";
  const std::string cli = fmt::format("cd '{}' && MTSMAE_LOG=warn '{}' ", dir.string(), MTSMAE_CLI);
  const std::vector<std::string> steps = {
      "synth spec.txt --out data.csv --seed 1",
      "pretrain --config run.cfg --seed 1 --out pretrain",
      "finetune --config run.cfg --seed 1 --init pretrain/pretrain.ckpt --out finetune",
      "evaluate --config run.cfg --checkpoint finetune/finetune.ckpt --out evaluate",
  };
  for (const auto& s : steps) {
    if (const int code = shell(cli + s + " >/dev/null"); code != 0) {
      return {false, fmt::format("'{}' exited {}", s, code)};
    }
  }
  const auto eval = dir / "evaluate";
  const bool metrics = first_line(eval / "metrics.csv") == "window_start,mse,mae";
  const bool preds = first_line(eval / "predictions.csv") == "window_start,step,dim,y_true,y_pred";
  const std::string svg = slurp(eval / "chart.svg");
  std::size_t polylines = 0;
  for (auto pos = svg.find("<polyline"); pos != std::string::npos; pos = svg.find("<polyline", pos + 1)) ++polylines;
  const bool chart = svg.find("viewBox=\"0 0 1200 400\"") != std::string::npos && polylines == 2;
  const double secs = seconds_since(t0);
  return {metrics && preds && chart && secs < 300.0,
          fmt::format("metrics.csv {}, predictions.csv {}, chart.svg {}, {:.1f}s", metrics ? "ok" : "BAD",
                      preds ? "ok" : "BAD", chart ? "ok" : "BAD", secs)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<Criterion> all = {
      {1, "gradient correctness", gradient_correctness},
      {2, "mask accounting", mask_accounting},
      {3, "masked-loss locality", masked_loss_locality},
      {4, "visible-token invariance", visible_token_invariance},
      {5, "decoder causality", decoder_causality},
      {6, "shape contract", shape_contract},
      {7, "metric oracle", metric_oracle},
      {8, "overfit check", overfit_check},
      {9, "pretraining learns", pretraining_learns},
      {10, "pretraining helps", pretraining_helps},
      {11, "recipe constants", recipe_constants},
      {12, "checkpoint and log reproducibility", reproducibility},
      {13, "end-to-end CLI smoke", cli_smoke},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    if (!o.pass) ++failures;
    std::printf("%s AC%02d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d failed\n", failures);
  return failures == 0 ? 0 : 1;
}
