#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lasermon/linalg.hpp"

namespace lasermon::attribution {

// Model output for every row of a batch.
using BatchPredictor = std::function<Vector(const Matrix&)>;

// Outputs along a path that starts at `baseline` and switches one coordinate
// at a time to `row`, following `order`; returns order.size() + 1 values.
using PathPredictor = std::function<Vector(std::span<const double> row, std::span<const double> baseline,
                                           std::span<const std::size_t> order)>;

// Builds the path rows explicitly and evaluates them as one batch.
PathPredictor path_from_batch(BatchPredictor predict);

inline constexpr std::size_t kMaxExactFeatures = 20;

// Interventional value function: v(S) is the mean prediction over background
// rows with coordinates in S taken from `row`.
//
// Enumerates all 2^d coalitions of `players` (every feature when empty);
// non-player coordinates are held at `row` and get phi = 0 in the returned
// full-length vector. Throws CapacityError for d > 20.
Vector shapley_exact(const BatchPredictor& predict, std::span<const double> row, const Matrix& background,
                     std::span<const std::size_t> players = {});

struct SampledAttribution {
  Vector phi;
  Vector std_error;  // standard error of each mean marginal contribution
};

// Permutation sampling: each permutation pairs a feature order with one
// background row and credits each feature with its marginal contribution
// along the path. Permutations 2p and 2p + 1 are an order drawn from the
// stream (seed, p) and its reverse; background rows are taken from a seeded
// cycle. std_error is computed over the pairs.
SampledAttribution shapley_sampled(const PathPredictor& path, std::span<const double> row, const Matrix& background,
                                   std::size_t permutations, std::uint64_t seed);

enum class Mode { exact, sampled };

struct AttributionConfig {
  std::size_t background_rows = 100;
  Mode mode = Mode::sampled;
  std::size_t permutations = 2000;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

// Seeded uniform choice of rows without replacement; all rows when fewer exist.
std::vector<std::size_t> background_indices(std::size_t available, std::size_t wanted, std::uint64_t seed);

struct AttributionResult {
  Matrix phi;  // explained rows x features
  double base_value = 0.0;  // mean output over the background
  Matrix explained;
};

// Explains each row of `rows`. Row r of the sampled estimator uses the
// stream (seed, r), so results do not depend on thread count.
AttributionResult explain(const BatchPredictor& predict, const PathPredictor& path, const Matrix& rows,
                          const Matrix& background, const AttributionConfig& config);

struct GlobalImportance {
  std::vector<double> scores;  // mean |phi| per feature
  std::vector<std::size_t> ranking;  // descending score, ties by feature index
};

GlobalImportance global_importance(const Matrix& phi);

std::vector<std::size_t> select_top_k(const GlobalImportance& importance, std::size_t k);

struct AblationPoint {
  std::size_t k = 0;
  std::string setting;
  double test_r2 = 0.0;
  double test_rmse = 0.0;
};

using Retrain = std::function<std::vector<AblationPoint>(std::size_t k)>;

// Calls retrain(k) for each k (ascending, all >= 1) and concatenates.
std::vector<AblationPoint> ablation_sweep(std::span<const std::size_t> ks, const Retrain& retrain);

}  // namespace lasermon::attribution
