#include "mtsmae/data.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "mtsmae/error.hpp"

namespace mtsmae {

namespace {

[[noreturn]] void data_error(const std::string& what) { throw Error(ErrorKind::Data, what); }

constexpr std::int64_t kMinutesPerDay = 24 * 60;

}  // namespace

Matrix Matrix::slice_rows(std::size_t begin, std::size_t count) const {
  if (begin + count > rows) {
    throw Error(ErrorKind::Dimension,
                fmt::format("slice rows [{}, {}) outside {} rows", begin, begin + count, rows));
  }
  Matrix out(count, cols);
  std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(begin * cols), count * cols, out.values.begin());
  return out;
}

// ---------------------------------------------------------------------------
// Timestamps

std::int64_t parse_timestamp(std::string_view text) {
  int year = 0, month = 0, day = 0, hour = 0, minute = 0, second = 0;
  const std::string t(text);
  char tail = 0;
  if (std::sscanf(t.c_str(), "%4d-%2d-%2d %2d:%2d:%2d%c", &year, &month, &day, &hour, &minute, &second,
                  &tail) != 6) {
    data_error(fmt::format("unparseable timestamp '{}' (expected YYYY-MM-DD HH:MM:SS)", t));
  }
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                           std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok() || hour < 0 || hour > 23 || minute < 0 || minute > 59 || second < 0 || second > 59) {
    data_error(fmt::format("invalid calendar timestamp '{}'", t));
  }
  if (second != 0) data_error(fmt::format("timestamp '{}' has sub-minute resolution", t));
  const auto days = sys_days(ymd).time_since_epoch().count();
  return static_cast<std::int64_t>(days) * kMinutesPerDay + hour * 60 + minute;
}

namespace {

struct CalendarParts {
  int year;
  unsigned month, day;
  int hour, minute;
};

CalendarParts calendar(std::int64_t minutes) {
  using namespace std::chrono;
  std::int64_t days = minutes / kMinutesPerDay;
  std::int64_t rem = minutes % kMinutesPerDay;
  if (rem < 0) {
    rem += kMinutesPerDay;
    --days;
  }
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  return {static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
          static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 60), static_cast<int>(rem % 60)};
}

}  // namespace

std::string format_timestamp(std::int64_t minutes) {
  const auto c = calendar(minutes);
  return fmt::format("{:04d}-{:02d}-{:02d} {:02d}:{:02d}:00", c.year, c.month, c.day, c.hour, c.minute);
}

TimeSeriesFrame TimeSeriesFrame::slice(std::size_t begin, std::size_t count) const {
  TimeSeriesFrame out;
  out.values = values.slice_rows(begin, count);
  out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                        timestamps.begin() + static_cast<std::ptrdiff_t>(begin + count));
  out.names = names;
  out.freq = freq;
  return out;
}

// ---------------------------------------------------------------------------
// CSV

TimeSeriesFrame parse_csv(std::string_view text, const std::string& source, const CsvSchema& schema) {
  std::vector<std::string> lines = split(text, '\n');
  for (auto& l : lines) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) data_error(fmt::format("{}: empty file", source));

  const auto header = split(lines[0], ',');
  if (header.size() < 2 || trim(header[0]) != "date") {
    data_error(fmt::format("{}:1: header must start with 'date' followed by feature columns", source));
  }
  TimeSeriesFrame frame;
  for (std::size_t c = 1; c < header.size(); ++c) frame.names.push_back(trim(header[c]));
  const std::size_t d = frame.names.size();
  if (schema.expected_features && *schema.expected_features != d) {
    data_error(fmt::format("{}: expected {} feature columns, found {}", source, *schema.expected_features, d));
  }

  frame.values = Matrix(lines.size() - 1, d);
  frame.timestamps.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split(lines[i], ',');
    if (cells.size() != d + 1) {
      data_error(fmt::format("{}:{}: ragged row with {} cells, header has {}", source, i + 1, cells.size(),
                             d + 1));
    }
    try {
      frame.timestamps.push_back(parse_timestamp(trim(cells[0])));
    } catch (const Error& e) {
      data_error(fmt::format("{}:{}: {}", source, i + 1, e.what()));
    }
    for (std::size_t c = 0; c < d; ++c) {
      const std::string cell = trim(cells[c + 1]);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        data_error(fmt::format("{}:{}: column '{}' value '{}' is not a finite number", source, i + 1,
                               frame.names[c], cell));
      }
      frame.values.at(i - 1, c) = v;
    }
  }

  const std::size_t n = frame.timestamps.size();
  if (n >= 2) {
    const std::int64_t step = frame.timestamps[1] - frame.timestamps[0];
    if (step <= 0) data_error(fmt::format("{}:3: timestamps must be strictly increasing", source));
    for (std::size_t i = 1; i < n; ++i) {
      if (frame.timestamps[i] - frame.timestamps[i - 1] != step) {
        data_error(fmt::format("{}:{}: spacing {} min differs from {} min", source, i + 2,
                               frame.timestamps[i] - frame.timestamps[i - 1], step));
      }
    }
    frame.freq = Frequency::from_minutes(static_cast<int>(step));
  }
  return frame;
}

TimeSeriesFrame load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, fmt::format("cannot open {}", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_csv(buffer.str(), path.string(), schema);
}

void write_csv(const TimeSeriesFrame& frame, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write {}", path.string()));
  out << "date";
  for (const auto& name : frame.names) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < frame.length(); ++i) {
    out << format_timestamp(frame.timestamps[i]);
    for (double v : frame.values.row(i)) out << ',' << fmt::format("{:.17g}", v);
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, fmt::format("write failed for {}", path.string()));
}

TimeMarks extract_time_marks(std::span<const std::int64_t> timestamps, Frequency freq) {
  TimeMarks marks;
  marks.freq = freq;
  marks.month.reserve(timestamps.size());
  for (auto ts : timestamps) {
    const auto c = calendar(ts);
    marks.month.push_back(static_cast<std::int64_t>(c.month) - 1);
    marks.day.push_back(static_cast<std::int64_t>(c.day) - 1);
    marks.hour.push_back(c.hour);
    marks.minute.push_back(c.minute);
  }
  return marks;
}

// ---------------------------------------------------------------------------
// Standardization

Standardizer Standardizer::fit(const Matrix& train) {
  if (train.rows == 0) data_error("standardizer: empty training slice");
  Standardizer s;
  s.mean.assign(train.cols, 0.0);
  s.std.assign(train.cols, 0.0);
  for (std::size_t r = 0; r < train.rows; ++r)
    for (std::size_t c = 0; c < train.cols; ++c) s.mean[c] += train.at(r, c);
  for (auto& m : s.mean) m /= static_cast<double>(train.rows);
  for (std::size_t r = 0; r < train.rows; ++r)
    for (std::size_t c = 0; c < train.cols; ++c) {
      const double dv = train.at(r, c) - s.mean[c];
      s.std[c] += dv * dv;
    }
  for (auto& v : s.std) {
    v = std::sqrt(v / static_cast<double>(train.rows));
    if (!(v > 0.0)) v = 1.0;
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (x.cols != mean.size()) {
    throw Error(ErrorKind::Dimension,
                fmt::format("standardizer fitted on {} features, got {}", mean.size(), x.cols));
  }
  Matrix out = x;
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) out.at(r, c) = (x.at(r, c) - mean[c]) / std[c];
  return out;
}

Matrix Standardizer::inverse(const Matrix& x) const {
  if (x.cols != mean.size()) {
    throw Error(ErrorKind::Dimension,
                fmt::format("standardizer fitted on {} features, got {}", mean.size(), x.cols));
  }
  Matrix out = x;
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) out.at(r, c) = x.at(r, c) * std[c] + mean[c];
  return out;
}

TimeSeriesFrame Standardizer::apply(const TimeSeriesFrame& frame) const {
  TimeSeriesFrame out = frame;
  out.values = apply(frame.values);
  return out;
}

// ---------------------------------------------------------------------------
// Splits

SplitSpec SplitSpec::parse(std::string_view text) {
  const std::string t = trim(text);
  const auto colon = t.find(':');
  if (colon == std::string::npos) {
    throw Error(ErrorKind::Config, fmt::format("split '{}': expected unit:train,val,test", t));
  }
  SplitSpec spec;
  const std::string unit = t.substr(0, colon);
  if (unit == "rows") spec.unit = Unit::Rows;
  else if (unit == "months") spec.unit = Unit::Months;
  else if (unit == "ratio") spec.unit = Unit::Ratio;
  else throw Error(ErrorKind::Config, fmt::format("split '{}': unknown unit '{}'", t, unit));
  const auto parts = split(std::string_view(t).substr(colon + 1), ',');
  if (parts.size() != 3) throw Error(ErrorKind::Config, fmt::format("split '{}': need three sizes", t));
  spec.train = parse_double(parts[0], "split train");
  spec.val = parse_double(parts[1], "split val");
  spec.test = parse_double(parts[2], "split test");
  if (spec.train <= 0 || spec.val <= 0 || spec.test <= 0) {
    throw Error(ErrorKind::Config, fmt::format("split '{}': sizes must be positive", t));
  }
  if (spec.unit == Unit::Ratio && spec.train + spec.val + spec.test > 1.0 + 1e-9) {
    throw Error(ErrorKind::Config, fmt::format("split '{}': ratios exceed 1", t));
  }
  return spec;
}

std::string SplitSpec::to_string() const {
  const char* name = unit == Unit::Rows ? "rows" : unit == Unit::Months ? "months" : "ratio";
  return fmt::format("{}:{},{},{}", name, train, val, test);
}

FrameSplits split_frame(const TimeSeriesFrame& frame, const SplitSpec& spec) {
  const std::size_t n = frame.length();
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  switch (spec.unit) {
    case SplitSpec::Unit::Rows:
      n_train = static_cast<std::size_t>(spec.train);
      n_val = static_cast<std::size_t>(spec.val);
      n_test = static_cast<std::size_t>(spec.test);
      break;
    case SplitSpec::Unit::Months: {
      const double rows_per_month = 30.0 * kMinutesPerDay / frame.freq.minutes;
      n_train = static_cast<std::size_t>(spec.train * rows_per_month);
      n_val = static_cast<std::size_t>(spec.val * rows_per_month);
      n_test = static_cast<std::size_t>(spec.test * rows_per_month);
      break;
    }
    case SplitSpec::Unit::Ratio:
      n_train = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(n)));
      n_val = static_cast<std::size_t>(std::floor(spec.val * static_cast<double>(n)));
      n_test = std::abs(spec.train + spec.val + spec.test - 1.0) < 1e-9
                   ? n - n_train - n_val
                   : static_cast<std::size_t>(std::floor(spec.test * static_cast<double>(n)));
      break;
  }
  if (n_train == 0 || n_val == 0 || n_test == 0 || n_train + n_val + n_test > n) {
    data_error(fmt::format("split {} needs {}+{}+{} rows but the series has {}", spec.to_string(), n_train,
                           n_val, n_test, n));
  }
  return {frame.slice(0, n_train), frame.slice(n_train, n_val), frame.slice(n_train + n_val, n_test)};
}

// ---------------------------------------------------------------------------
// Windows

WindowDataset::WindowDataset(std::shared_ptr<const TimeSeriesFrame> frame, std::size_t input_len,
                             std::size_t label_len, std::size_t pred_len, std::size_t stride)
    : frame_(std::move(frame)), input_len_(input_len), label_len_(label_len), pred_len_(pred_len) {
  if (input_len == 0 || pred_len == 0 || stride == 0 || label_len > input_len) {
    throw Error(ErrorKind::Config,
                fmt::format("windows: need L_x>=1, L_y>=1, stride>=1 and L_label<=L_x (got {}, {}, {}, {})",
                            input_len, pred_len, stride, label_len));
  }
  const std::size_t n = frame_->length();
  if (n < input_len + pred_len) {
    data_error(fmt::format("windows: series of {} rows is shorter than L_x + L_y = {}", n, input_len + pred_len));
  }
  for (std::size_t s = 0; s + input_len + pred_len <= n; s += stride) starts_.push_back(s);
  marks_ = extract_time_marks(frame_->timestamps, frame_->freq);
}

WindowSample WindowDataset::sample(std::size_t i) const {
  const std::size_t s = starts_.at(i);
  const std::size_t label_begin = s + input_len_ - label_len_;
  const std::size_t y_begin = s + input_len_;
  WindowSample w;
  w.start = s;
  w.x_enc = frame_->values.slice_rows(s, input_len_);
  w.enc_marks = marks_.slice(s, input_len_);
  w.x_label = frame_->values.slice_rows(label_begin, label_len_);
  w.label_marks = marks_.slice(label_begin, label_len_);
  w.y_true = frame_->values.slice_rows(y_begin, pred_len_);
  w.y_marks = marks_.slice(y_begin, pred_len_);
  return w;
}

WindowDataset make_windows(const TimeSeriesFrame& frame, std::size_t input_len, std::size_t label_len,
                           std::size_t pred_len, std::size_t stride) {
  return WindowDataset(std::make_shared<const TimeSeriesFrame>(frame), input_len, label_len, pred_len,
                       stride);
}

// ---------------------------------------------------------------------------
// Synthetic series

SynthSpec SynthSpec::from_entries(const std::vector<KeyValueEntry>& entries, const std::string& source) {
  SynthSpec spec;
  spec.start = parse_timestamp("2016-07-01 00:00:00");
  for (const auto& e : entries) {
    const std::string where = fmt::format("{}:{} {}", source, e.line, e.key);
    if (e.key == "n") spec.n = static_cast<std::size_t>(parse_int(e.value, where));
    else if (e.key == "d") spec.d = static_cast<std::size_t>(parse_int(e.value, where));
    else if (e.key == "trend") spec.trend = parse_double(e.value, where);
    else if (e.key == "noise_std") spec.noise_std = parse_double(e.value, where);
    else if (e.key == "seed") spec.seed = parse_uint64(e.value, where);
    else if (e.key == "dim_phase_step") spec.dim_phase_step = parse_double(e.value, where);
    else if (e.key == "freq_minutes") spec.freq_minutes = static_cast<int>(parse_int(e.value, where));
    else if (e.key == "start") {
      try {
        spec.start = parse_timestamp(e.value);
      } catch (const Error& err) {
        throw Error(ErrorKind::Config, fmt::format("{}: {}", where, err.what()));
      }
    } else if (e.key == "sine") {
      const auto parts = split(e.value, ',');
      if (parts.size() != 3) {
        throw Error(ErrorKind::Config, fmt::format("{}: expected 'period, amplitude, phase'", where));
      }
      spec.components.push_back(
          {parse_double(parts[0], where), parse_double(parts[1], where), parse_double(parts[2], where)});
    } else {
      throw Error(ErrorKind::Config, fmt::format("{}:{}: unknown synth key '{}'", source, e.line, e.key));
    }
  }
  spec.validate();
  return spec;
}

SynthSpec SynthSpec::from_file(const std::filesystem::path& path) {
  return from_entries(read_key_value_file(path), path.string());
}

void SynthSpec::validate() const {
  if (n == 0 || d == 0) throw Error(ErrorKind::Config, "synth: n and d must be >= 1");
  if (!(noise_std >= 0.0)) throw Error(ErrorKind::Config, "synth: noise_std must be >= 0");
  if (freq_minutes <= 0) throw Error(ErrorKind::Config, "synth: freq_minutes must be positive");
  for (const auto& c : components) {
    if (!(c.period > 0.0)) throw Error(ErrorKind::Config, "synth: sine period must be positive");
  }
}

TimeSeriesFrame synth_generate(const SynthSpec& spec) {
  spec.validate();
  TimeSeriesFrame frame;
  frame.freq = Frequency::from_minutes(spec.freq_minutes);
  frame.values = Matrix(spec.n, spec.d);
  for (std::size_t k = 0; k < spec.d; ++k) frame.names.push_back(fmt::format("x{}", k));
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t t = 0; t < spec.n; ++t) {
    frame.timestamps.push_back(spec.start + static_cast<std::int64_t>(t) * spec.freq_minutes);
    for (std::size_t k = 0; k < spec.d; ++k) {
      double v = spec.trend * static_cast<double>(t);
      for (const auto& c : spec.components) {
        v += c.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / c.period + c.phase +
                                    static_cast<double>(k) * spec.dim_phase_step);
      }
      if (spec.noise_std > 0.0) v += spec.noise_std * noise(rng);
      frame.values.at(t, k) = v;
    }
  }
  return frame;
}

}  // namespace mtsmae
