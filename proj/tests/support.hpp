#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mtsmae/data.hpp"
#include "mtsmae/embedding.hpp"
#include "mtsmae/error.hpp"
#include "mtsmae/model.hpp"
#include "mtsmae/ndarray.hpp"

namespace testing {

using A = mtsmae::NDArray<double>;

inline A random_array(mtsmae::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(mtsmae::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return A::from(std::move(shape), std::move(v));
}

// Hourly marks starting at an arbitrary calendar point, computed by hand.
inline mtsmae::TimeMarks hourly_marks(std::size_t n, std::int64_t first_hour = 0) {
  mtsmae::TimeMarks m;
  m.freq = mtsmae::Frequency::from_minutes(60);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t h = first_hour + static_cast<std::int64_t>(i);
    m.month.push_back((h / (24 * 28)) % 12);
    m.day.push_back((h / 24) % 28);
    m.hour.push_back(h % 24);
    m.minute.push_back(0);
  }
  return m;
}

// Two-tone hourly series.
inline mtsmae::TimeSeriesFrame synth_frame(std::size_t n, std::size_t d, double noise_std = 0.0,
                                           std::uint64_t seed = 1) {
  mtsmae::SynthSpec spec;
  spec.n = n;
  spec.d = d;
  spec.components = {{24.0, 1.0, 0.0}, {12.0, 0.5, 0.3}};
  spec.noise_std = noise_std;
  spec.seed = seed;
  return mtsmae::synth_generate(spec);
}

// Small enough for finite differences and fast loops.
inline mtsmae::ModelConfig tiny_config(std::size_t d = 2) {
  mtsmae::ModelConfig c;
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
  c.d_x = d;
  c.d_y = d;
  return c;
}

inline std::string error_text(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const mtsmae::Error& e) {
    return e.what();
  }
  return {};
}

inline mtsmae::ErrorKind error_kind(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const mtsmae::Error& e) {
    return e.kind();
  }
  throw std::runtime_error("expected an mtsmae::Error");
}

inline std::vector<double> values(const A& a) { return {a.data().begin(), a.data().end()}; }

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace testing
