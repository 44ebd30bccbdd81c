#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lasermon/rng.hpp"

namespace lasermon::hpo {

enum class ParamKind { uniform, log_uniform, int_uniform, categorical };

// A conditional parameter is active only while `parent` exceeds `greater_than`.
struct Condition {
  std::string parent;
  double greater_than = 0.0;
};

struct ParamSpec {
  std::string name;
  ParamKind kind = ParamKind::uniform;
  double lo = 0.0;
  double hi = 1.0;
  bool log = false;  // int_uniform only: sample and model in log space
  std::vector<std::string> options;
  std::optional<Condition> condition;

  static ParamSpec uniform(std::string name, double lo, double hi);
  static ParamSpec log_uniform(std::string name, double lo, double hi);
  static ParamSpec int_uniform(std::string name, long long lo, long long hi, bool log = false);
  static ParamSpec categorical(std::string name, std::vector<std::string> options);
  ParamSpec& when(std::string parent, double greater_than);

  bool log_scale() const { return kind == ParamKind::log_uniform || (kind == ParamKind::int_uniform && log); }
};

struct SearchSpace {
  std::vector<ParamSpec> specs;  // parents precede their conditional children

  void validate() const;
  const ParamSpec& find(const std::string& name) const;
};

using ParamValue = std::variant<double, long long, std::string>;
using Params = std::map<std::string, ParamValue>;

double as_double(const ParamValue& v);
long long as_int(const ParamValue& v);
const std::string& as_string(const ParamValue& v);

bool is_active(const ParamSpec& spec, const Params& params);

enum class TrialStatus { complete, failed };

struct Trial {
  std::size_t id = 0;
  Params params;
  std::optional<double> objective;  // present only for complete trials
  TrialStatus status = TrialStatus::complete;
  std::string error;
};

struct TpeConfig {
  std::size_t n_startup = 10;
  double gamma = 0.25;
  std::size_t n_candidates = 24;
  std::uint64_t seed = 0;
};

Params sample_random(const SearchSpace& space, Engine& eng);

// Per-parameter Parzen density pair built from the "good" (below) and
// "bad" (above) groups of completed trials.
class ParzenModel {
 public:
  ParzenModel(const SearchSpace& space, std::span<const Trial> below, std::span<const Trial> above);

  // Draws a full parameter set from the "good" densities.
  Params sample_below(Engine& eng) const;

  // Sum over active parameters of log l(x) - log g(x).
  double score(const Params& candidate) const;

  double log_density_below(const std::string& name, const ParamValue& v) const;
  double log_density_above(const std::string& name, const ParamValue& v) const;

 private:
  struct Kde {
    std::vector<double> centers;  // in model space (log for log-scale params)
    double bandwidth = 1.0;
    std::vector<double> probabilities;  // categorical
  };
  struct Entry {
    const ParamSpec* spec = nullptr;
    Kde below;
    Kde above;
  };

  static Kde build(const ParamSpec& spec, std::span<const Trial> trials);
  static double log_density(const ParamSpec& spec, const Kde& kde, const ParamValue& v);
  const Entry& entry(const std::string& name) const;

  std::vector<Entry> entries_;
};

// Random sampling during startup; otherwise the best of n_candidates draws
// from l(x) under the log l - log g score.
Params suggest(std::span<const Trial> history, const SearchSpace& space, const TpeConfig& config, Engine& eng);

// Splits completed trials into the best ceil(gamma * n) and the rest.
std::pair<std::vector<Trial>, std::vector<Trial>> partition_trials(std::span<const Trial> history, double gamma);

using Objective = std::function<double(const Params&)>;

struct StudyResult {
  Trial best;
  std::vector<Trial> history;
};

// Throws StudyFailed if no trial completes. Objectives signal failure by
// throwing lasermon::Error or returning a non-finite value.
StudyResult run_study(const Objective& objective, const SearchSpace& space, std::size_t n_trials,
                      const TpeConfig& config);

// learning_rate, batch_size, l1, l2, n_hidden, width_0..2, optimizer, activation.
SearchSpace default_mlp_space();

nlohmann::json to_json(const Params& params);
nlohmann::json to_json(const Trial& trial);
nlohmann::json to_json(const SearchSpace& space);
SearchSpace space_from_json(const nlohmann::json& j);

}  // namespace lasermon::hpo
