#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mtsmae/data.hpp"

namespace mtsmae {

/// (1/n) sum_i sum_j (y - yhat)^2 / d over an [n, d] pair.
double mse(const Matrix& y, const Matrix& yhat);
/// (1/n) sum_i sum_j |y - yhat| / d over an [n, d] pair.
double mae(const Matrix& y, const Matrix& yhat);

/// The last row of x_enc repeated pred_len times.
Matrix persistence_baseline(const Matrix& x_enc, std::size_t pred_len);

using Forecaster = std::function<Matrix(const WindowSample&)>;

struct EvalReport {
  std::vector<std::size_t> starts;
  std::vector<double> window_mse;
  std::vector<double> window_mae;
  double mse = 0.0;
  double mae = 0.0;
  std::string fingerprint;
  bool destandardized = false;
  std::vector<Matrix> y_true;  // per window, [L_y, d]
  std::vector<Matrix> y_pred;
  // Persistence forecast scored on the same windows, when computed.
  std::optional<double> baseline_mse;
  std::optional<double> baseline_mae;

  std::size_t windows() const { return starts.size(); }
};

struct EvalOptions {
  /// Worker threads evaluating windows; results do not depend on the count.
  std::size_t jobs = 1;
  /// When set, truth and forecasts are mapped back to data units before scoring.
  const Standardizer* destandardize = nullptr;
  std::string fingerprint;
};

/// Scores every stride-1 window of `test`; aggregates are means of the
/// per-window metrics. Throws a data error when no window fits.
EvalReport rolling_evaluate(const Forecaster& forecaster, const TimeSeriesFrame& test, std::size_t input_len,
                            std::size_t label_len, std::size_t pred_len, const EvalOptions& options = {});

struct ChartOptions {
  std::size_t dim = 0;
  /// Window whose full horizon is drawn; when unset the chart follows the
  /// first forecast step of every window.
  std::optional<std::size_t> window;
};

/// Writes metrics.csv, predictions.csv, chart.svg and summary.json.
void emit_report(const EvalReport& report, const std::filesystem::path& out_dir, const ChartOptions& chart = {});

/// The SVG document emit_report writes.
std::string render_chart(const EvalReport& report, const ChartOptions& chart);

/// Short stable hex digest of a text (FNV-1a, 64 bit).
std::string fingerprint(std::string_view text);

}  // namespace mtsmae
