#include "mtsmae/embedding.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mtsmae/error.hpp"
#include "mtsmae/init.hpp"

namespace mtsmae {

Frequency Frequency::from_minutes(int minutes) {
  if (minutes <= 0) {
    throw Error(ErrorKind::Config, fmt::format("frequency must be positive, got {} min", minutes));
  }
  if (minutes == 60) return {FrequencyKind::Hourly, 60};
  if (minutes == 15) return {FrequencyKind::QuarterHourly, 15};
  return {FrequencyKind::CustomMinutes, minutes};
}

std::string Frequency::name() const {
  switch (kind) {
    case FrequencyKind::Hourly: return "hourly";
    case FrequencyKind::QuarterHourly: return "quarter-hourly";
    case FrequencyKind::CustomMinutes: break;
  }
  return fmt::format("{}min", minutes);
}

void TimeMarks::validate() const {
  const std::size_t n = month.size();
  if (day.size() != n || hour.size() != n || minute.size() != n) {
    throw Error(ErrorKind::Dimension, "time marks: component lengths differ");
  }
  auto check = [](const std::vector<std::int64_t>& v, std::int64_t vocab, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] < 0 || v[i] >= vocab) {
        throw Error(ErrorKind::Index,
                    fmt::format("time marks: {} id {} at step {} outside [0, {})", what, v[i], i, vocab));
      }
    }
  };
  check(month, kMonthVocab, "month");
  check(day, kDayVocab, "day");
  check(hour, kHourVocab, "hour");
  check(minute, kMinuteVocab, "minute");
}

TimeMarks TimeMarks::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > size()) {
    throw Error(ErrorKind::Dimension,
                fmt::format("time marks: slice [{}, {}) outside length {}", begin, begin + count, size()));
  }
  auto cut = [&](const std::vector<std::int64_t>& v) {
    return std::vector<std::int64_t>(v.begin() + static_cast<std::ptrdiff_t>(begin),
                                     v.begin() + static_cast<std::ptrdiff_t>(begin + count));
  };
  return TimeMarks{cut(month), cut(day), cut(hour), cut(minute), freq};
}

template <typename T>
EmbeddingParams<T> EmbeddingParams<T>::create(std::size_t d_x, std::size_t d_model,
                                              std::size_t patch_stride, std::mt19937_64& rng) {
  if (patch_stride == 0) throw Error(ErrorKind::Config, "patch stride must be >= 1");
  EmbeddingParams p;
  p.d_model = d_model;
  p.patch_stride = patch_stride;
  p.sp_kernel = truncated_normal<T>({3, d_x, d_model}, kInitStd, rng);
  p.month_table = truncated_normal<T>({kMonthVocab, d_model}, kInitStd, rng);
  p.day_table = truncated_normal<T>({kDayVocab, d_model}, kInitStd, rng);
  p.hour_table = truncated_normal<T>({kHourVocab, d_model}, kInitStd, rng);
  p.minute_table = truncated_normal<T>({kMinuteVocab, d_model}, kInitStd, rng);
  p.patch_kernel1 = truncated_normal<T>({patch_stride, d_model, d_model}, kInitStd, rng);
  p.patch_kernel2 = truncated_normal<T>({patch_stride, d_model, d_model}, kInitStd, rng);
  return p;
}

template <typename T>
NDArray<T> scalar_projection(const NDArray<T>& x, const EmbeddingParams<T>& params) {
  if (x.rank() != 2 || x.dim(1) != params.sp_kernel.dim(1)) {
    throw Error(ErrorKind::Dimension,
                fmt::format("scalar projection: input {} does not match kernel {}",
                            shape_to_string(x.shape()), shape_to_string(params.sp_kernel.shape())));
  }
  return conv1d(x, params.sp_kernel, 1, 1);
}

template <typename T>
NDArray<T> positional_encoding(std::size_t length, std::size_t d_model, std::size_t offset) {
  if (d_model == 0 || d_model % 2 != 0) {
    throw Error(ErrorKind::Config,
                fmt::format("positional encoding needs an even d_model, got {}", d_model));
  }
  std::vector<T> values(length * d_model);
  for (std::size_t i = 0; i < length; ++i) {
    const double pos = static_cast<double>(i + offset);
    for (std::size_t j = 0; j < d_model / 2; ++j) {
      const double angle =
          pos / std::pow(10000.0, static_cast<double>(2 * j) / static_cast<double>(d_model));
      values[i * d_model + 2 * j] = static_cast<T>(std::sin(angle));
      values[i * d_model + 2 * j + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return NDArray<T>::from({length, d_model}, std::move(values));
}

template <typename T>
NDArray<T> stamp_embedding(const TimeMarks& marks, const EmbeddingParams<T>& params) {
  marks.validate();
  NDArray<T> out = add(embedding_lookup(params.month_table, std::span(marks.month)),
                       embedding_lookup(params.day_table, std::span(marks.day)));
  out = add(out, embedding_lookup(params.hour_table, std::span(marks.hour)));
  if (marks.freq.resolves_minutes()) {
    out = add(out, embedding_lookup(params.minute_table, std::span(marks.minute)));
  } else {
    const std::vector<std::int64_t> zero_ids(marks.size(), 0);
    out = add(out, embedding_lookup(params.minute_table, std::span(zero_ids)));
  }
  return out;
}

template <typename T>
NDArray<T> embed(const NDArray<T>& x, const TimeMarks& marks, const EmbeddingParams<T>& params,
                 std::size_t position_offset) {
  if (x.rank() != 2 || x.dim(0) != marks.size()) {
    throw Error(ErrorKind::Dimension,
                fmt::format("embed: values {} vs {} time marks", shape_to_string(x.shape()),
                            marks.size()));
  }
  NDArray<T> sp = scalar_projection(x, params);
  NDArray<T> pe = positional_encoding<T>(x.dim(0), params.d_model, position_offset);
  return add(add(sp, pe), stamp_embedding(marks, params));
}

template <typename T>
NDArray<T> patch_embed(const NDArray<T>& tokens, const EmbeddingParams<T>& params) {
  const std::size_t p = params.patch_stride;
  const std::size_t total = p * p;
  if (tokens.rank() != 2 || tokens.dim(0) % total != 0) {
    throw Error(ErrorKind::Config,
                fmt::format("patch embedding: length L_x={} not divisible by p^2 (p={})",
                            tokens.rank() == 2 ? tokens.dim(0) : 0, p));
  }
  NDArray<T> half = conv1d(tokens, params.patch_kernel1, p, 0);
  return conv1d(half, params.patch_kernel2, p, 0);
}

template <typename T>
NDArray<T> nonpatch_embed(const NDArray<T>& x, const TimeMarks& marks,
                          const EmbeddingParams<T>& params, std::size_t position_offset) {
  return embed(x, marks, params, position_offset);
}

#define MTSMAE_INSTANTIATE_EMBEDDING(T)                                                          \
  template struct EmbeddingParams<T>;                                                            \
  template NDArray<T> scalar_projection(const NDArray<T>&, const EmbeddingParams<T>&);           \
  template NDArray<T> positional_encoding<T>(std::size_t, std::size_t, std::size_t);             \
  template NDArray<T> stamp_embedding(const TimeMarks&, const EmbeddingParams<T>&);              \
  template NDArray<T> embed(const NDArray<T>&, const TimeMarks&, const EmbeddingParams<T>&,      \
                            std::size_t);                                                        \
  template NDArray<T> patch_embed(const NDArray<T>&, const EmbeddingParams<T>&);                 \
  template NDArray<T> nonpatch_embed(const NDArray<T>&, const TimeMarks&,                        \
                                     const EmbeddingParams<T>&, std::size_t);

MTSMAE_INSTANTIATE_EMBEDDING(float)
MTSMAE_INSTANTIATE_EMBEDDING(double)

}  // namespace mtsmae
