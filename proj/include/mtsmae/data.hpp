#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtsmae/embedding.hpp"
#include "mtsmae/keyvalue.hpp"

namespace mtsmae {

/// Dense row-major matrix of doubles for data handling outside the op graph.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
  Matrix slice_rows(std::size_t begin, std::size_t count) const;
};

/// Timestamps are minutes since 1970-01-01 00:00 (calendar time, no zone).
std::int64_t parse_timestamp(std::string_view text);
std::string format_timestamp(std::int64_t minutes);

struct TimeSeriesFrame {
  std::vector<std::int64_t> timestamps;
  Matrix values;  // [n, d_x]
  std::vector<std::string> names;
  Frequency freq;

  std::size_t length() const { return values.rows; }
  std::size_t dims() const { return values.cols; }
  TimeSeriesFrame slice(std::size_t begin, std::size_t count) const;
};

struct CsvSchema {
  std::optional<std::size_t> expected_features;  // columns after "date"
};

/// Comma-separated file with a header whose first column is "date"
/// ("YYYY-MM-DD HH:MM:SS"); the remaining columns are numeric, target last.
TimeSeriesFrame load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
TimeSeriesFrame parse_csv(std::string_view text, const std::string& source, const CsvSchema& schema = {});
void write_csv(const TimeSeriesFrame& frame, const std::filesystem::path& path);

/// Zero-based month and day, hour, minute for each timestamp.
TimeMarks extract_time_marks(std::span<const std::int64_t> timestamps, Frequency freq);

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;

  /// Per-feature statistics; a zero standard deviation is replaced by 1.
  static Standardizer fit(const Matrix& train);
  Matrix apply(const Matrix& x) const;
  Matrix inverse(const Matrix& x) const;
  TimeSeriesFrame apply(const TimeSeriesFrame& frame) const;
};

/// Chronological train/val/test boundaries. Month counts use 30-day months at
/// the frame's frequency; ratios are fractions of the frame length.
struct SplitSpec {
  enum class Unit { Rows, Months, Ratio };
  Unit unit = Unit::Ratio;
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;

  /// "rows:a,b,c", "months:a,b,c" or "ratio:a,b,c".
  static SplitSpec parse(std::string_view text);
  std::string to_string() const;

  static SplitSpec ett() { return {Unit::Months, 12, 4, 4}; }
  static SplitSpec ecl() { return {Unit::Months, 15, 3, 4}; }
  static SplitSpec wth() { return {Unit::Months, 28, 10, 10}; }
};

struct FrameSplits {
  TimeSeriesFrame train;
  TimeSeriesFrame val;
  TimeSeriesFrame test;
};

FrameSplits split_frame(const TimeSeriesFrame& frame, const SplitSpec& spec);

/// One instance. The label is the last L_label steps of the encoder window;
/// the target immediately follows the encoder window.
struct WindowSample {
  std::size_t start = 0;
  Matrix x_enc;
  TimeMarks enc_marks;
  Matrix x_label;
  TimeMarks label_marks;
  Matrix y_true;
  TimeMarks y_marks;
};

/// Stride-based windows over a frame, materialized on access.
class WindowDataset {
 public:
  WindowDataset(std::shared_ptr<const TimeSeriesFrame> frame, std::size_t input_len,
                std::size_t label_len, std::size_t pred_len, std::size_t stride);

  std::size_t size() const { return starts_.size(); }
  bool empty() const { return starts_.empty(); }
  std::size_t start(std::size_t i) const { return starts_.at(i); }
  const std::vector<std::size_t>& starts() const { return starts_; }
  WindowSample sample(std::size_t i) const;
  const TimeSeriesFrame& frame() const { return *frame_; }
  std::size_t input_len() const { return input_len_; }
  std::size_t label_len() const { return label_len_; }
  std::size_t pred_len() const { return pred_len_; }

 private:
  std::shared_ptr<const TimeSeriesFrame> frame_;
  TimeMarks marks_;
  std::size_t input_len_, label_len_, pred_len_;
  std::vector<std::size_t> starts_;
};

/// n - L_x - L_y + 1 windows at stride 1; throws a data error when the frame
/// is too short for a single window.
WindowDataset make_windows(const TimeSeriesFrame& frame, std::size_t input_len,
                           std::size_t label_len, std::size_t pred_len, std::size_t stride = 1);

struct SineComponent {
  double period = 24.0;
  double amplitude = 1.0;
  double phase = 0.0;
};

/// Synthetic series: dimension k at row t is
///   sum_c amp_c * sin(2*pi*t/period_c + phase_c + k*dim_phase_step) + trend*t + noise.
struct SynthSpec {
  std::size_t n = 2000;
  std::size_t d = 3;
  std::vector<SineComponent> components;
  double trend = 0.0;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  double dim_phase_step = 0.7;
  std::int64_t start = 0;  // minutes since epoch
  int freq_minutes = 60;

  /// Keys: n, d, sine (= period, amplitude, phase; repeatable), trend,
  /// noise_std, seed, dim_phase_step, start, freq_minutes. Unknown keys fail.
  static SynthSpec from_entries(const std::vector<KeyValueEntry>& entries, const std::string& source);
  static SynthSpec from_file(const std::filesystem::path& path);
  void validate() const;
};

TimeSeriesFrame synth_generate(const SynthSpec& spec);

}  // namespace mtsmae
