#include "lasermon/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "lasermon/error.hpp"
#include "lasermon/rng.hpp"

namespace lasermon {

NormalizationStats fit_minmax(const Matrix& rows, std::vector<std::string> columns) {
  if (rows.rows() == 0) throw ValidationError("fit_minmax: no rows");
  if (!columns.empty() && columns.size() != static_cast<std::size_t>(rows.cols())) {
    throw ValidationError("fit_minmax: column name count does not match matrix");
  }
  NormalizationStats s;
  s.columns = std::move(columns);
  s.min.resize(static_cast<std::size_t>(rows.cols()));
  s.max.resize(static_cast<std::size_t>(rows.cols()));
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    s.min[static_cast<std::size_t>(c)] = rows.col(c).minCoeff();
    s.max[static_cast<std::size_t>(c)] = rows.col(c).maxCoeff();
  }
  return s;
}

Matrix apply_minmax(const Matrix& rows, const NormalizationStats& stats) {
  if (static_cast<std::size_t>(rows.cols()) != stats.size()) {
    throw ValidationError("apply_minmax: matrix has " + std::to_string(rows.cols()) + " columns, stats have " +
                          std::to_string(stats.size()));
  }
  Matrix out(rows.rows(), rows.cols());
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    const double lo = stats.min[static_cast<std::size_t>(c)];
    const double span = stats.max[static_cast<std::size_t>(c)] - lo;
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
      out(r, c) = span == 0.0 ? 0.0 : (rows(r, c) - lo) / span;
    }
  }
  return out;
}

Matrix invert_minmax(const Matrix& normalized, const NormalizationStats& stats) {
  if (static_cast<std::size_t>(normalized.cols()) != stats.size()) {
    throw ValidationError("invert_minmax: column mismatch");
  }
  Matrix out(normalized.rows(), normalized.cols());
  for (Eigen::Index c = 0; c < normalized.cols(); ++c) {
    const double lo = stats.min[static_cast<std::size_t>(c)];
    const double span = stats.max[static_cast<std::size_t>(c)] - lo;
    for (Eigen::Index r = 0; r < normalized.rows(); ++r) out(r, c) = lo + normalized(r, c) * span;
  }
  return out;
}

SplitPlan split(const std::vector<SampleGroup>& groups, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("split: ratio must lie in (0, 1)");
  SplitPlan plan;
  plan.seed = seed;
  plan.ratio = ratio;
  for (const auto& g : groups) {
    if (g.ids.size() < 5) {
      throw ValidationError("split: group '" + g.name + "' has " + std::to_string(g.ids.size()) +
                            " samples, need at least 5");
    }
    std::vector<SampleKey> ids = g.ids;
    std::sort(ids.begin(), ids.end());
    Engine eng = make_engine(seed, {stable_hash(g.name)});
    shuffle(ids, eng);
    const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(ids.size()) + 1e-9));
    plan.train.insert(plan.train.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    plan.test.insert(plan.test.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  }
  return plan;
}

std::vector<SampleKey> FoldPlan::members(std::size_t f) const {
  std::vector<SampleKey> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (fold[i] == f) out.push_back(ids[i]);
  }
  return out;
}

FoldPlan kfold(std::vector<SampleKey> train_ids, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("kfold: k must be at least 2");
  if (train_ids.size() < k) {
    throw ValidationError("kfold: " + std::to_string(train_ids.size()) + " ids cannot fill " + std::to_string(k) +
                          " folds");
  }
  std::sort(train_ids.begin(), train_ids.end());
  Engine eng = make_engine(seed, {0x6b666f6c64ULL});
  shuffle(train_ids, eng);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.ids = std::move(train_ids);
  plan.fold.resize(plan.ids.size());
  for (std::size_t i = 0; i < plan.ids.size(); ++i) plan.fold[i] = i % k;
  return plan;
}

void to_json(nlohmann::json& j, const SampleKey& key) {
  j = nlohmann::json{{"experiment_id", key.experiment_id}, {"sample_id", key.sample_id}};
}

void from_json(const nlohmann::json& j, SampleKey& key) {
  key.experiment_id = j.at("experiment_id").get<std::string>();
  key.sample_id = j.at("sample_id").get<int>();
}

void to_json(nlohmann::json& j, const NormalizationStats& stats) {
  j = nlohmann::json{{"min", stats.min}, {"max", stats.max}, {"columns", stats.columns}};
}

void from_json(const nlohmann::json& j, NormalizationStats& stats) {
  stats.min = j.at("min").get<std::vector<double>>();
  stats.max = j.at("max").get<std::vector<double>>();
  stats.columns = j.value("columns", std::vector<std::string>{});
  if (stats.min.size() != stats.max.size()) throw FormatError("normalization stats: min/max length mismatch");
}

void to_json(nlohmann::json& j, const SplitPlan& plan) {
  j = nlohmann::json{{"seed", plan.seed}, {"ratio", plan.ratio}, {"train", plan.train}, {"test", plan.test}};
}

void from_json(const nlohmann::json& j, SplitPlan& plan) {
  plan.seed = j.at("seed").get<std::uint64_t>();
  plan.ratio = j.value("ratio", 0.8);
  plan.train = j.at("train").get<std::vector<SampleKey>>();
  plan.test = j.at("test").get<std::vector<SampleKey>>();
}

void to_json(nlohmann::json& j, const FoldPlan& plan) {
  j = nlohmann::json{{"k", plan.k}, {"seed", plan.seed}, {"ids", plan.ids}, {"fold", plan.fold}};
}

void from_json(const nlohmann::json& j, FoldPlan& plan) {
  plan.k = j.at("k").get<std::size_t>();
  plan.seed = j.at("seed").get<std::uint64_t>();
  plan.ids = j.at("ids").get<std::vector<SampleKey>>();
  plan.fold = j.at("fold").get<std::vector<std::size_t>>();
}

}  // namespace lasermon
