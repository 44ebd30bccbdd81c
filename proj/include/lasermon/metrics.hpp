#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace lasermon::metrics {

double mse(std::span<const double> truth, std::span<const double> predicted);
double rmse(std::span<const double> truth, std::span<const double> predicted);

// Coefficient of determination. Throws DegenerateTarget for constant truth.
double r2(std::span<const double> truth, std::span<const double> predicted);

struct MetricsReport {
  std::string setting;  // e.g. "(a) milling"
  double train_r2 = 0.0;
  double test_r2 = 0.0;
  double train_rmse = 0.0;
  double test_rmse = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

MetricsReport evaluate(std::string setting, std::span<const double> train_truth, std::span<const double> train_pred,
                       std::span<const double> test_truth, std::span<const double> test_pred);

}  // namespace lasermon::metrics
