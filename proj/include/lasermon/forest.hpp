#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lasermon/linalg.hpp"

namespace lasermon::forest {

enum class Splitter { best, random_threshold };
enum class FeatureSubset { all, sqrt, third };

struct TreeConfig {
  std::optional<std::size_t> max_depth;  // unlimited when empty
  std::size_t min_samples_split = 2;
  std::size_t min_samples_leaf = 1;
  Splitter splitter = Splitter::best;
  FeatureSubset feature_subset = FeatureSubset::all;
  std::uint64_t seed = 0;
};

struct ForestConfig {
  std::size_t n_trees = 100;
  bool bootstrap = false;
  TreeConfig tree;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

// Settings for the two ensembles: bootstrap + best split over ceil(d/3)
// features per node, and full-sample random-threshold splits over all d.
ForestConfig random_forest_defaults();
ForestConfig extra_trees_defaults();

struct Node {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // mean training target reaching the node
  std::size_t count = 0;

  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<Node> nodes;  // nodes[0] is the root
  std::size_t input_dim = 0;

  // x <= threshold routes left.
  double predict(std::span<const double> row) const;
  std::size_t depth() const;
};

struct Ensemble {
  std::vector<Tree> trees;
  std::size_t input_dim = 0;
  std::string kind;  // "decision_tree", "random_forest", "extra_trees"

  double predict(std::span<const double> row) const;
  Vector predict(const Matrix& rows) const;
};

// Greedy recursive partitioning minimizing the children's summed squared
// error. Ties go to the lowest feature index, then the lowest threshold.
Tree fit_tree(const Matrix& rows, const Vector& targets, const TreeConfig& config);

// Single-tree ensemble wrapper so all three models share one interface.
Ensemble fit_decision_tree(const Matrix& rows, const Vector& targets, const TreeConfig& config);

// Uses config.bootstrap and config.tree.feature_subset; splitter is forced to best.
Ensemble fit_random_forest(const Matrix& rows, const Vector& targets, const ForestConfig& config);

// Splitter forced to random_threshold; bootstrap and subset as configured
// (extra_trees_defaults() disables bootstrap and uses all features).
Ensemble fit_extra_trees(const Matrix& rows, const Vector& targets, const ForestConfig& config);

nlohmann::json to_json(const Ensemble& ensemble);
Ensemble ensemble_from_json(const nlohmann::json& j);

}  // namespace lasermon::forest
