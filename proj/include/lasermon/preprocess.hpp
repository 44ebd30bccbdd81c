#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lasermon/dataset.hpp"
#include "lasermon/linalg.hpp"

namespace lasermon {

struct NormalizationStats {
  std::vector<double> min;
  std::vector<double> max;
  std::vector<std::string> columns;

  std::size_t size() const { return min.size(); }
};

NormalizationStats fit_minmax(const Matrix& rows, std::vector<std::string> columns = {});

// (x - min) / (max - min); constant columns map to 0. Out-of-range values
// are not clamped.
Matrix apply_minmax(const Matrix& rows, const NormalizationStats& stats);
Matrix invert_minmax(const Matrix& normalized, const NormalizationStats& stats);

struct SampleGroup {
  std::string name;  // technique name
  std::vector<SampleKey> ids;
};

struct SplitPlan {
  std::vector<SampleKey> train;
  std::vector<SampleKey> test;
  std::uint64_t seed = 0;
  double ratio = 0.8;
};

// Shuffles each group with a stream derived from (seed, group name) and sends
// the first floor(ratio * n) ids to train. A group's partition therefore does
// not depend on which other groups are present.
SplitPlan split(const std::vector<SampleGroup>& groups, double ratio = 0.8, std::uint64_t seed = 0);

struct FoldPlan {
  std::size_t k = 4;
  std::vector<SampleKey> ids;
  std::vector<std::size_t> fold;  // fold[i] for ids[i]
  std::uint64_t seed = 0;

  std::vector<SampleKey> members(std::size_t f) const;
};

// Seeded shuffle, then round-robin assignment.
FoldPlan kfold(std::vector<SampleKey> train_ids, std::size_t k = 4, std::uint64_t seed = 0);

void to_json(nlohmann::json& j, const SampleKey& key);
void from_json(const nlohmann::json& j, SampleKey& key);
void to_json(nlohmann::json& j, const NormalizationStats& stats);
void from_json(const nlohmann::json& j, NormalizationStats& stats);
void to_json(nlohmann::json& j, const SplitPlan& plan);
void from_json(const nlohmann::json& j, SplitPlan& plan);
void to_json(nlohmann::json& j, const FoldPlan& plan);
void from_json(const nlohmann::json& j, FoldPlan& plan);

}  // namespace lasermon
