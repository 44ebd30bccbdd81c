#pragma once

#include <Eigen/Dense>

namespace lasermon {

// Row-per-sample layout everywhere.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace lasermon
