#include "lasermon/forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lasermon/error.hpp"
#include "lasermon/parallel.hpp"
#include "lasermon/rng.hpp"

namespace lasermon::forest {

ForestConfig random_forest_defaults() {
  ForestConfig c;
  c.bootstrap = true;
  c.tree.splitter = Splitter::best;
  c.tree.feature_subset = FeatureSubset::third;
  return c;
}

ForestConfig extra_trees_defaults() {
  ForestConfig c;
  c.bootstrap = false;
  c.tree.splitter = Splitter::random_threshold;
  c.tree.feature_subset = FeatureSubset::all;
  return c;
}

double Tree::predict(std::span<const double> row) const {
  if (row.size() != input_dim) {
    throw ValidationError("tree: expected " + std::to_string(input_dim) + " inputs, got " +
                          std::to_string(row.size()));
  }
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const Node& n = nodes[i];
    i = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes[i].value;
}

std::size_t Tree::depth() const {
  std::vector<std::size_t> level(nodes.size(), 0);
  std::size_t deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    deepest = std::max(deepest, level[i]);
    if (!nodes[i].is_leaf()) {
      level[static_cast<std::size_t>(nodes[i].left)] = level[i] + 1;
      level[static_cast<std::size_t>(nodes[i].right)] = level[i] + 1;
    }
  }
  return deepest;
}

double Ensemble::predict(std::span<const double> row) const {
  if (trees.empty()) throw ValidationError("ensemble: no trees");
  double sum = 0.0;
  for (const auto& t : trees) sum += t.predict(row);
  return sum / static_cast<double>(trees.size());
}

Vector Ensemble::predict(const Matrix& rows) const {
  if (static_cast<std::size_t>(rows.cols()) != input_dim) {
    throw ValidationError("ensemble: expected " + std::to_string(input_dim) + " inputs, got " +
                          std::to_string(rows.cols()));
  }
  Vector out(rows.rows());
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    out(r) = predict(std::span<const double>(rows.row(r).data(), static_cast<std::size_t>(rows.cols())));
  }
  return out;
}

namespace {

struct Split {
  double score = std::numeric_limits<double>::infinity();  // summed child SSE
  std::size_t feature = 0;
  double threshold = 0.0;
  bool valid = false;

  bool better_than(const Split& other) const {
    if (!other.valid) return valid;
    if (score != other.score) return score < other.score;
    if (feature != other.feature) return feature < other.feature;
    return threshold < other.threshold;
  }
};

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const Vector& y, const TreeConfig& config, Engine& eng)
      : x_(x), y_(y), config_(config), eng_(eng) {
    const auto d = static_cast<std::size_t>(x.cols());
    switch (config.feature_subset) {
      case FeatureSubset::all: subset_ = d; break;
      case FeatureSubset::sqrt: subset_ = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d)))); break;
      case FeatureSubset::third: subset_ = (d + 2) / 3; break;
    }
    subset_ = std::clamp<std::size_t>(subset_, 1, d);
  }

  Tree build(std::vector<std::size_t> rows) {
    tree_.input_dim = static_cast<std::size_t>(x_.cols());
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<std::size_t>& rows, std::size_t depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    double sum = 0.0;
    for (auto r : rows) sum += y_(static_cast<Eigen::Index>(r));
    const double mean = sum / static_cast<double>(rows.size());
    tree_.nodes[static_cast<std::size_t>(id)].value = mean;
    tree_.nodes[static_cast<std::size_t>(id)].count = rows.size();

    const bool pure = std::all_of(rows.begin(), rows.end(), [&](std::size_t r) {
      return y_(static_cast<Eigen::Index>(r)) == y_(static_cast<Eigen::Index>(rows.front()));
    });
    if (pure || rows.size() < config_.min_samples_split || (config_.max_depth && depth >= *config_.max_depth)) {
      return id;
    }
    const Split s = find_split(rows);
    if (!s.valid) return id;

    std::vector<std::size_t> left, right;
    for (auto r : rows) {
      (x_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s.feature)) <= s.threshold ? left : right)
          .push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    Node& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = static_cast<int>(s.feature);
    node.threshold = s.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  Split find_split(const std::vector<std::size_t>& rows) {
    const auto d = static_cast<std::size_t>(x_.cols());
    std::vector<std::size_t> features(d);
    std::iota(features.begin(), features.end(), std::size_t{0});
    if (subset_ < d) shuffle(features, eng_);

    // Constant features do not count toward the subset; past the subset size
    // keep drawing only until an admissible split has been seen.
    Split best;
    std::size_t visited = 0;
    for (std::size_t f : features) {
      if (visited >= subset_ && best.valid) break;
      Split s = config_.splitter == Splitter::best ? best_cut(rows, f) : random_cut(rows, f);
      if (constant_feature_) continue;
      ++visited;
      if (s.valid && s.better_than(best)) best = s;
    }
    return best;
  }

  Split best_cut(const std::vector<std::size_t>& rows, std::size_t f) {
    const auto fi = static_cast<Eigen::Index>(f);
    std::vector<std::pair<double, double>> v;
    v.reserve(rows.size());
    for (auto r : rows) v.emplace_back(x_(static_cast<Eigen::Index>(r), fi), y_(static_cast<Eigen::Index>(r)));
    std::sort(v.begin(), v.end());
    constant_feature_ = v.front().first == v.back().first;
    Split best;
    best.feature = f;
    if (constant_feature_) return best;

    double total = 0.0, total_sq = 0.0;
    for (const auto& [_, t] : v) {
      total += t;
      total_sq += t * t;
    }
    const std::size_t n = v.size();
    double left = 0.0, left_sq = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      left += v[i].second;
      left_sq += v[i].second * v[i].second;
      if (v[i].first == v[i + 1].first) continue;
      const std::size_t nl = i + 1, nr = n - nl;
      if (nl < config_.min_samples_leaf || nr < config_.min_samples_leaf) continue;
      const double right = total - left, right_sq = total_sq - left_sq;
      const double sse = (left_sq - left * left / static_cast<double>(nl)) +
                         (right_sq - right * right / static_cast<double>(nr));
      if (!best.valid || sse < best.score) {
        double mid = 0.5 * (v[i].first + v[i + 1].first);
        if (mid >= v[i + 1].first) mid = v[i].first;
        best.score = sse;
        best.threshold = mid;
        best.valid = true;
      }
    }
    return best;
  }

  Split random_cut(const std::vector<std::size_t>& rows, std::size_t f) {
    const auto fi = static_cast<Eigen::Index>(f);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (auto r : rows) {
      const double v = x_(static_cast<Eigen::Index>(r), fi);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    Split s;
    s.feature = f;
    constant_feature_ = lo == hi;
    if (constant_feature_) return s;
    double t = uniform(eng_, lo, hi);
    if (t >= hi) t = lo;

    double sl = 0.0, sl2 = 0.0, sr = 0.0, sr2 = 0.0;
    std::size_t nl = 0, nr = 0;
    for (auto r : rows) {
      const double target = y_(static_cast<Eigen::Index>(r));
      if (x_(static_cast<Eigen::Index>(r), fi) <= t) {
        sl += target;
        sl2 += target * target;
        ++nl;
      } else {
        sr += target;
        sr2 += target * target;
        ++nr;
      }
    }
    if (nl < config_.min_samples_leaf || nr < config_.min_samples_leaf) return s;
    s.score = (sl2 - sl * sl / static_cast<double>(nl)) + (sr2 - sr * sr / static_cast<double>(nr));
    s.threshold = t;
    s.valid = true;
    return s;
  }

  const Matrix& x_;
  const Vector& y_;
  const TreeConfig& config_;
  Engine& eng_;
  std::size_t subset_ = 1;
  bool constant_feature_ = false;
  Tree tree_;
};

void check_fit_inputs(const Matrix& x, const Vector& y, const TreeConfig& config) {
  if (x.rows() == 0) throw ValidationError("fit: no training rows");
  if (x.rows() != y.size()) throw ValidationError("fit: rows and targets differ in length");
  if (x.cols() == 0) throw ValidationError("fit: no features");
  if (config.min_samples_split < 2) throw ValidationError("fit: min_samples_split must be at least 2");
  if (config.min_samples_leaf < 1) throw ValidationError("fit: min_samples_leaf must be at least 1");
}

Tree fit_one(const Matrix& x, const Vector& y, const TreeConfig& config, std::vector<std::size_t> rows) {
  Engine eng = make_engine(config.seed, {0x74726565ULL});
  return TreeBuilder(x, y, config, eng).build(std::move(rows));
}

std::vector<std::size_t> all_rows(const Matrix& x) {
  std::vector<std::size_t> rows(static_cast<std::size_t>(x.rows()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

Ensemble fit_ensemble(const Matrix& x, const Vector& y, const ForestConfig& config, std::string kind) {
  check_fit_inputs(x, y, config.tree);
  if (config.n_trees < 1) throw ValidationError("fit: n_trees must be at least 1");
  Ensemble e;
  e.kind = std::move(kind);
  e.input_dim = static_cast<std::size_t>(x.cols());
  e.trees.resize(config.n_trees);
  parallel_for(config.n_trees, config.threads, [&](std::size_t t) {
    TreeConfig tc = config.tree;
    tc.seed = derive_seed(config.seed, {t});
    std::vector<std::size_t> rows;
    if (config.bootstrap) {
      Engine eng = make_engine(config.seed, {t, 0x626f6f74ULL});
      const auto n = static_cast<std::size_t>(x.rows());
      rows.resize(n);
      for (auto& r : rows) r = static_cast<std::size_t>(eng() % n);
      std::sort(rows.begin(), rows.end());
    } else {
      rows = all_rows(x);
    }
    e.trees[t] = fit_one(x, y, tc, std::move(rows));
  });
  return e;
}

}  // namespace

Tree fit_tree(const Matrix& x, const Vector& y, const TreeConfig& config) {
  check_fit_inputs(x, y, config);
  return fit_one(x, y, config, all_rows(x));
}

Ensemble fit_decision_tree(const Matrix& x, const Vector& y, const TreeConfig& config) {
  Ensemble e;
  e.kind = "decision_tree";
  e.input_dim = static_cast<std::size_t>(x.cols());
  e.trees.push_back(fit_tree(x, y, config));
  return e;
}

Ensemble fit_random_forest(const Matrix& x, const Vector& y, const ForestConfig& config) {
  ForestConfig c = config;
  c.tree.splitter = Splitter::best;
  return fit_ensemble(x, y, c, "random_forest");
}

Ensemble fit_extra_trees(const Matrix& x, const Vector& y, const ForestConfig& config) {
  ForestConfig c = config;
  c.tree.splitter = Splitter::random_threshold;
  return fit_ensemble(x, y, c, "extra_trees");
}

nlohmann::json to_json(const Ensemble& e) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : e.trees) {
    std::vector<int> feature, left, right;
    std::vector<double> threshold, value;
    std::vector<std::size_t> count;
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.value);
      count.push_back(n.count);
    }
    trees.push_back({{"feature", feature},
                     {"threshold", threshold},
                     {"left", left},
                     {"right", right},
                     {"value", value},
                     {"count", count}});
  }
  return {{"format_version", 1}, {"kind", e.kind}, {"input_dim", e.input_dim}, {"trees", trees}};
}

Ensemble ensemble_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != 1) throw FormatError("ensemble: unsupported format_version");
    Ensemble e;
    e.kind = j.at("kind").get<std::string>();
    e.input_dim = j.at("input_dim").get<std::size_t>();
    for (const auto& tj : j.at("trees")) {
      const auto feature = tj.at("feature").get<std::vector<int>>();
      const auto threshold = tj.at("threshold").get<std::vector<double>>();
      const auto left = tj.at("left").get<std::vector<int>>();
      const auto right = tj.at("right").get<std::vector<int>>();
      const auto value = tj.at("value").get<std::vector<double>>();
      const auto count = tj.at("count").get<std::vector<std::size_t>>();
      const std::size_t n = feature.size();
      if (n == 0 || threshold.size() != n || left.size() != n || right.size() != n || value.size() != n ||
          count.size() != n) {
        throw FormatError("ensemble: node arrays differ in length");
      }
      Tree t;
      t.input_dim = e.input_dim;
      for (std::size_t i = 0; i < n; ++i) {
        Node node{feature[i], threshold[i], left[i], right[i], value[i], count[i]};
        if (!node.is_leaf() && (node.left <= 0 || node.right <= 0 || static_cast<std::size_t>(node.left) >= n ||
                                static_cast<std::size_t>(node.right) >= n ||
                                static_cast<std::size_t>(node.feature) >= e.input_dim)) {
          throw FormatError("ensemble: malformed node " + std::to_string(i));
        }
        t.nodes.push_back(node);
      }
      e.trees.push_back(std::move(t));
    }
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("ensemble: ") + ex.what());
  }
}

}  // namespace lasermon::forest
