#include "lasermon/metrics.hpp"

#include <cmath>

#include "lasermon/error.hpp"

namespace lasermon::metrics {

namespace {

void check_shapes(std::span<const double> a, std::span<const double> b) {
  if (a.empty()) throw ValidationError("metrics: empty input");
  if (a.size() != b.size()) {
    throw ValidationError("metrics: length mismatch (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  }
}

double sum_squared_error(std::span<const double> y, std::span<const double> yhat) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return s;
}

}  // namespace

double mse(std::span<const double> y, std::span<const double> yhat) {
  check_shapes(y, yhat);
  return sum_squared_error(y, yhat) / static_cast<double>(y.size());
}

double rmse(std::span<const double> y, std::span<const double> yhat) { return std::sqrt(mse(y, yhat)); }

double r2(std::span<const double> y, std::span<const double> yhat) {
  check_shapes(y, yhat);
  if (y.size() < 2) throw ValidationError("r2: need at least 2 observations");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double total = 0.0;
  for (double v : y) total += (v - mean) * (v - mean);
  if (total == 0.0) throw DegenerateTarget("r2: target is constant");
  return 1.0 - sum_squared_error(y, yhat) / total;
}

MetricsReport evaluate(std::string setting, std::span<const double> train_truth, std::span<const double> train_pred,
                       std::span<const double> test_truth, std::span<const double> test_pred) {
  MetricsReport r;
  r.setting = std::move(setting);
  r.train_r2 = r2(train_truth, train_pred);
  r.test_r2 = r2(test_truth, test_pred);
  r.train_rmse = rmse(train_truth, train_pred);
  r.test_rmse = rmse(test_truth, test_pred);
  r.n_train = train_truth.size();
  r.n_test = test_truth.size();
  return r;
}

}  // namespace lasermon::metrics
