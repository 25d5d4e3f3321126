#include "mtsmae/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include "json.hpp"

#include "mtsmae/error.hpp"

namespace mtsmae {

namespace {

void check_pair(const Matrix& y, const Matrix& yhat, const char* metric) {
  if (y.rows != yhat.rows || y.cols != yhat.cols) {
    throw Error(ErrorKind::Dimension, fmt::format("{}: shapes [{},{}] and [{},{}] differ", metric, y.rows, y.cols,
                                                  yhat.rows, yhat.cols));
  }
  if (y.rows == 0 || y.cols == 0) throw Error(ErrorKind::Dimension, fmt::format("{}: empty input", metric));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write {}", path.string()));
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error(ErrorKind::Io, fmt::format("write failed for {}", path.string()));
}

}  // namespace

double mse(const Matrix& y, const Matrix& yhat) {
  check_pair(y, yhat, "mse");
  const auto d = static_cast<double>(y.cols);
  double total = 0.0;
  for (std::size_t i = 0; i < y.rows; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < y.cols; ++j) {
      const double e = y.at(i, j) - yhat.at(i, j);
      row += e * e / d;
    }
    total += row;
  }
  return total / static_cast<double>(y.rows);
}

double mae(const Matrix& y, const Matrix& yhat) {
  check_pair(y, yhat, "mae");
  const auto d = static_cast<double>(y.cols);
  double total = 0.0;
  for (std::size_t i = 0; i < y.rows; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < y.cols; ++j) row += std::abs(y.at(i, j) - yhat.at(i, j)) / d;
    total += row;
  }
  return total / static_cast<double>(y.rows);
}

Matrix persistence_baseline(const Matrix& x_enc, std::size_t pred_len) {
  if (x_enc.rows == 0) throw Error(ErrorKind::Dimension, "persistence: empty history");
  Matrix out(pred_len, x_enc.cols);
  const auto last = x_enc.row(x_enc.rows - 1);
  for (std::size_t t = 0; t < pred_len; ++t) std::copy(last.begin(), last.end(), out.values.begin() + static_cast<std::ptrdiff_t>(t * x_enc.cols));
  return out;
}

EvalReport rolling_evaluate(const Forecaster& forecaster, const TimeSeriesFrame& test, std::size_t input_len,
                            std::size_t label_len, std::size_t pred_len, const EvalOptions& options) {
  if (test.length() < input_len + pred_len) {
    throw Error(ErrorKind::Data, fmt::format("evaluation: test split of {} rows has no window of L_x + L_y = {}",
                                             test.length(), input_len + pred_len));
  }
  const auto ds = make_windows(test, input_len, label_len, pred_len, 1);
  const std::size_t n = ds.size();
  EvalReport report;
  report.fingerprint = options.fingerprint;
  report.destandardized = options.destandardize != nullptr;
  report.starts = ds.starts();
  report.window_mse.assign(n, 0.0);
  report.window_mae.assign(n, 0.0);
  report.y_true.assign(n, Matrix());
  report.y_pred.assign(n, Matrix());

  auto run = [&](std::size_t i) {
    const auto w = ds.sample(i);
    Matrix pred = forecaster(w);
    Matrix truth = w.y_true;
    if (options.destandardize) {
      truth = options.destandardize->inverse(truth);
      pred = options.destandardize->inverse(pred);
    }
    report.window_mse[i] = mse(truth, pred);
    report.window_mae[i] = mae(truth, pred);
    report.y_true[i] = std::move(truth);
    report.y_pred[i] = std::move(pred);
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    for (std::size_t k = 0; k < jobs; ++k) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            run(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  for (std::size_t i = 0; i < n; ++i) {
    report.mse += report.window_mse[i];
    report.mae += report.window_mae[i];
  }
  report.mse /= static_cast<double>(n);
  report.mae /= static_cast<double>(n);
  return report;
}

std::string render_chart(const EvalReport& report, const ChartOptions& chart) {
  if (report.windows() == 0) throw Error(ErrorKind::Data, "chart: report has no windows");
  const std::size_t dims = report.y_true.front().cols;
  if (chart.dim >= dims) {
    throw Error(ErrorKind::Config, fmt::format("chart: dimension {} outside the {} forecast dimensions", chart.dim, dims));
  }
  std::vector<double> truth, pred;
  std::string x_label;
  if (chart.window) {
    if (*chart.window >= report.windows()) {
      throw Error(ErrorKind::Config,
                  fmt::format("chart: window {} outside the {} evaluated windows", *chart.window, report.windows()));
    }
    const auto& t = report.y_true[*chart.window];
    const auto& p = report.y_pred[*chart.window];
    for (std::size_t s = 0; s < t.rows; ++s) {
      truth.push_back(t.at(s, chart.dim));
      pred.push_back(p.at(s, chart.dim));
    }
    x_label = fmt::format("forecast step (window {})", report.starts[*chart.window]);
  } else {
    for (std::size_t i = 0; i < report.windows(); ++i) {
      truth.push_back(report.y_true[i].at(0, chart.dim));
      pred.push_back(report.y_pred[i].at(0, chart.dim));
    }
    x_label = "window (first forecast step)";
  }

  constexpr double W = 1200, H = 400, left = 70, right = 20, top = 30, bottom = 50;
  double lo = std::min(*std::min_element(truth.begin(), truth.end()), *std::min_element(pred.begin(), pred.end()));
  double hi = std::max(*std::max_element(truth.begin(), truth.end()), *std::max_element(pred.begin(), pred.end()));
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
  const std::size_t n = truth.size();
  auto px = [&](std::size_t i) {
    return n == 1 ? left + (W - left - right) / 2 : left + (W - left - right) * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  auto py = [&](double v) { return top + (H - top - bottom) * (hi - v) / (hi - lo); };
  auto points = [&](const std::vector<double>& ys) {
    std::string s;
    for (std::size_t i = 0; i < ys.size(); ++i) s += fmt::format("{}{:.2f},{:.2f}", i ? " " : "", px(i), py(ys[i]));
    return s;
  };

  std::string svg;
  svg += fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n", W, H);
  svg += fmt::format("<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\"/>\n", W, H);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", left, H - bottom, W - right);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", left, top, H - bottom);
  svg += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\">{:.3f}</text>\n", 5, top + 4, hi);
  svg += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\">{:.3f}</text>\n", 5, H - bottom + 4, lo);
  svg += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
                     left + (W - left - right) / 2, H - 12, x_label);
  svg += fmt::format("<text x=\"18\" y=\"{0}\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0})\">"
                     "value (dim {1}{2})</text>\n",
                     top + (H - top - bottom) / 2, chart.dim, report.destandardized ? "" : ", standardized");
  svg += fmt::format("<text x=\"{}\" y=\"20\" font-size=\"13\" fill=\"#1f77b4\">truth</text>\n", W - 170);
  svg += fmt::format("<text x=\"{}\" y=\"20\" font-size=\"13\" fill=\"#d62728\">prediction</text>\n", W - 110);
  svg += fmt::format("<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>\n", points(truth));
  svg += fmt::format("<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" points=\"{}\"/>\n", points(pred));
  svg += "</svg>\n";
  return svg;
}

void emit_report(const EvalReport& report, const std::filesystem::path& out_dir, const ChartOptions& chart) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::Io, fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));

  const auto metrics_path = out_dir / "metrics.csv";
  auto metrics = open_out(metrics_path);
  metrics << "window_start,mse,mae\n";
  for (std::size_t i = 0; i < report.windows(); ++i) {
    metrics << fmt::format("{},{},{}\n", report.starts[i], report.window_mse[i], report.window_mae[i]);
  }
  finish(metrics, metrics_path);

  const auto pred_path = out_dir / "predictions.csv";
  auto preds = open_out(pred_path);
  preds << "window_start,step,dim,y_true,y_pred\n";
  for (std::size_t i = 0; i < report.windows(); ++i) {
    const auto& t = report.y_true[i];
    const auto& p = report.y_pred[i];
    for (std::size_t s = 0; s < t.rows; ++s)
      for (std::size_t d = 0; d < t.cols; ++d)
        preds << fmt::format("{},{},{},{},{}\n", report.starts[i], s, d, t.at(s, d), p.at(s, d));
  }
  finish(preds, pred_path);

  const auto chart_path = out_dir / "chart.svg";
  auto svg = open_out(chart_path);
  svg << render_chart(report, chart);
  finish(svg, chart_path);

  nlohmann::ordered_json summary;
  summary["windows"] = report.windows();
  summary["mse"] = report.mse;
  summary["mae"] = report.mae;
  summary["fingerprint"] = report.fingerprint;
  summary["destandardized"] = report.destandardized;
  summary["pred_len"] = report.windows() ? report.y_true.front().rows : 0;
  summary["dims"] = report.windows() ? report.y_true.front().cols : 0;
  summary["plot_dim"] = chart.dim;
  if (report.baseline_mse) summary["persistence_mse"] = *report.baseline_mse;
  if (report.baseline_mae) summary["persistence_mae"] = *report.baseline_mae;
  const auto summary_path = out_dir / "summary.json";
  auto js = open_out(summary_path);
  js << summary.dump(2) << '\n';
  finish(js, summary_path);
}

std::string fingerprint(std::string_view text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace mtsmae
