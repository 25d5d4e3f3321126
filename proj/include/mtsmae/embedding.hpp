#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mtsmae/ndarray.hpp"

namespace mtsmae {

enum class FrequencyKind { Hourly, QuarterHourly, CustomMinutes };

struct Frequency {
  FrequencyKind kind = FrequencyKind::Hourly;
  int minutes = 60;

  static Frequency from_minutes(int minutes);
  /// Sub-hourly series carry a meaningful minute component.
  bool resolves_minutes() const { return minutes < 60; }
  std::string name() const;
};

/// Calendar features per time step, zero-based: month 0-11, day 0-30,
/// hour 0-23, minute 0-59.
struct TimeMarks {
  std::vector<std::int64_t> month;
  std::vector<std::int64_t> day;
  std::vector<std::int64_t> hour;
  std::vector<std::int64_t> minute;
  Frequency freq;

  std::size_t size() const { return month.size(); }
  /// Throws an index error naming the first out-of-range component.
  void validate() const;
  TimeMarks slice(std::size_t begin, std::size_t count) const;
};

inline constexpr std::int64_t kMonthVocab = 12;
inline constexpr std::int64_t kDayVocab = 31;
inline constexpr std::int64_t kHourVocab = 24;
inline constexpr std::int64_t kMinuteVocab = 60;

template <typename T>
struct EmbeddingParams {
  NDArray<T> sp_kernel;     // [3, d_x, d_model]
  NDArray<T> month_table;   // [12, d_model]
  NDArray<T> day_table;     // [31, d_model]
  NDArray<T> hour_table;    // [24, d_model]
  NDArray<T> minute_table;  // [60, d_model]
  NDArray<T> patch_kernel1; // [p, d_model, d_model]
  NDArray<T> patch_kernel2; // [p, d_model, d_model]
  std::size_t d_model = 0;
  std::size_t patch_stride = 1;

  static EmbeddingParams create(std::size_t d_x, std::size_t d_model, std::size_t patch_stride,
                                std::mt19937_64& rng);

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "sp_kernel", sp_kernel);
    f(prefix + "month", month_table);
    f(prefix + "day", day_table);
    f(prefix + "hour", hour_table);
    f(prefix + "minute", minute_table);
    f(prefix + "patch1", patch_kernel1);
    f(prefix + "patch2", patch_kernel2);
  }
};

/// Width-3, stride-1 convolution with one step of zero padding; output length equals input.
template <typename T>
NDArray<T> scalar_projection(const NDArray<T>& x, const EmbeddingParams<T>& params);

/// Sinusoidal table: PE(i, 2j) = sin(i / 10000^(2j/d)), PE(i, 2j+1) = cos(...),
/// with i = offset, offset+1, ... Constant (no gradient).
template <typename T>
NDArray<T> positional_encoding(std::size_t length, std::size_t d_model, std::size_t offset = 0);

/// Sum of month/day/hour/minute lookups. The minute lookup uses id 0 for
/// series at hourly or coarser frequency.
template <typename T>
NDArray<T> stamp_embedding(const TimeMarks& marks, const EmbeddingParams<T>& params);

/// SP + PE + SE at time-step resolution.
template <typename T>
NDArray<T> embed(const NDArray<T>& x, const TimeMarks& marks, const EmbeddingParams<T>& params,
                 std::size_t position_offset = 0);

/// Two stride-p convolutions with kernel width p; L_x must be divisible by p^2.
template <typename T>
NDArray<T> patch_embed(const NDArray<T>& tokens, const EmbeddingParams<T>& params);

/// One token per time step: the plain embedding without the patch stages.
template <typename T>
NDArray<T> nonpatch_embed(const NDArray<T>& x, const TimeMarks& marks,
                          const EmbeddingParams<T>& params, std::size_t position_offset = 0);

}  // namespace mtsmae
