#include "lasermon/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "lasermon/error.hpp"

namespace lasermon::hpo {

ParamSpec ParamSpec::uniform(std::string name, double lo, double hi) {
  return {std::move(name), ParamKind::uniform, lo, hi, false, {}, std::nullopt};
}

ParamSpec ParamSpec::log_uniform(std::string name, double lo, double hi) {
  return {std::move(name), ParamKind::log_uniform, lo, hi, false, {}, std::nullopt};
}

ParamSpec ParamSpec::int_uniform(std::string name, long long lo, long long hi, bool log) {
  return {std::move(name), ParamKind::int_uniform, static_cast<double>(lo), static_cast<double>(hi), log, {},
          std::nullopt};
}

ParamSpec ParamSpec::categorical(std::string name, std::vector<std::string> options) {
  return {std::move(name), ParamKind::categorical, 0.0, 0.0, false, std::move(options), std::nullopt};
}

ParamSpec& ParamSpec::when(std::string parent, double greater_than) {
  condition = Condition{std::move(parent), greater_than};
  return *this;
}

void SearchSpace::validate() const {
  if (specs.empty()) throw ValidationError("search space is empty");
  std::set<std::string> seen;
  for (const auto& s : specs) {
    if (s.condition) {
      if (!seen.count(s.condition->parent)) {
        throw ValidationError("parameter '" + s.name + "' depends on '" + s.condition->parent +
                              "', which must be declared earlier");
      }
      if (find(s.condition->parent).kind == ParamKind::categorical) {
        throw ValidationError("parameter '" + s.name + "' cannot be gated on a categorical parent");
      }
    }
    if (!seen.insert(s.name).second) throw ValidationError("duplicate parameter '" + s.name + "'");
    if (s.kind == ParamKind::categorical) {
      if (s.options.empty()) throw ValidationError("categorical '" + s.name + "' has no options");
    } else {
      if (!(s.lo < s.hi)) throw ValidationError("parameter '" + s.name + "' needs lo < hi");
      if (s.log_scale() && !(s.lo > 0.0)) throw ValidationError("log-scale parameter '" + s.name + "' needs lo > 0");
    }
  }
}

const ParamSpec& SearchSpace::find(const std::string& name) const {
  for (const auto& s : specs) {
    if (s.name == name) return s;
  }
  throw ValidationError("unknown parameter '" + name + "'");
}

double as_double(const ParamValue& v) {
  if (auto p = std::get_if<double>(&v)) return *p;
  if (auto p = std::get_if<long long>(&v)) return static_cast<double>(*p);
  throw ValidationError("parameter is categorical, not numeric");
}

long long as_int(const ParamValue& v) {
  if (auto p = std::get_if<long long>(&v)) return *p;
  if (auto p = std::get_if<double>(&v)) return std::llround(*p);
  throw ValidationError("parameter is categorical, not numeric");
}

const std::string& as_string(const ParamValue& v) {
  if (auto p = std::get_if<std::string>(&v)) return *p;
  throw ValidationError("parameter is numeric, not categorical");
}

bool is_active(const ParamSpec& spec, const Params& params) {
  if (!spec.condition) return true;
  auto it = params.find(spec.condition->parent);
  return it != params.end() && as_double(it->second) > spec.condition->greater_than;
}

namespace {

double to_model(const ParamSpec& s, double v) { return s.log_scale() ? std::log(v) : v; }
double from_model(const ParamSpec& s, double v) { return s.log_scale() ? std::exp(v) : v; }
double model_lo(const ParamSpec& s) { return to_model(s, s.lo); }
double model_hi(const ParamSpec& s) { return to_model(s, s.hi); }

// Maps a model-space value onto the spec's domain: clipped, and rounded for integers.
ParamValue finish(const ParamSpec& s, double model_value) {
  double v = std::clamp(from_model(s, model_value), s.lo, s.hi);
  if (s.kind == ParamKind::int_uniform) {
    return static_cast<long long>(std::clamp(std::round(v), s.lo, s.hi));
  }
  return v;
}

std::size_t option_index(const ParamSpec& s, const ParamValue& v) {
  const auto& name = as_string(v);
  auto it = std::find(s.options.begin(), s.options.end(), name);
  if (it == s.options.end()) throw ValidationError("'" + name + "' is not an option of '" + s.name + "'");
  return static_cast<std::size_t>(it - s.options.begin());
}

double log_sum_exp(const std::vector<double>& terms) {
  const double m = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

}  // namespace

Params sample_random(const SearchSpace& space, Engine& eng) {
  Params p;
  for (const auto& s : space.specs) {
    if (!is_active(s, p)) continue;
    if (s.kind == ParamKind::categorical) {
      p[s.name] = s.options[uniform_int<std::size_t>(eng, 0, s.options.size() - 1)];
    } else if (s.kind == ParamKind::int_uniform && !s.log) {
      p[s.name] = uniform_int<long long>(eng, static_cast<long long>(s.lo), static_cast<long long>(s.hi));
    } else {
      p[s.name] = finish(s, uniform(eng, model_lo(s), model_hi(s)));
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Parzen estimators

ParzenModel::Kde ParzenModel::build(const ParamSpec& spec, std::span<const Trial> trials) {
  Kde kde;
  if (spec.kind == ParamKind::categorical) {
    // Add-one smoothed frequencies.
    std::vector<double> counts(spec.options.size(), 1.0);
    double total = static_cast<double>(spec.options.size());
    for (const auto& t : trials) {
      auto it = t.params.find(spec.name);
      if (it == t.params.end()) continue;
      counts[option_index(spec, it->second)] += 1.0;
      total += 1.0;
    }
    for (double& c : counts) c /= total;
    kde.probabilities = std::move(counts);
    return kde;
  }
  for (const auto& t : trials) {
    auto it = t.params.find(spec.name);
    if (it != t.params.end()) kde.centers.push_back(to_model(spec, as_double(it->second)));
  }
  const double range = model_hi(spec) - model_lo(spec);
  const std::size_t n = kde.centers.size();
  const double floor = range / static_cast<double>(std::min<std::size_t>(100, n + 1));
  double sd = 0.0;
  if (n > 1) {
    double mean = 0.0;
    for (double c : kde.centers) mean += c;
    mean /= static_cast<double>(n);
    for (double c : kde.centers) sd += (c - mean) * (c - mean);
    sd = std::sqrt(sd / static_cast<double>(n - 1));
  }
  // Scott's rule for one dimension.
  kde.bandwidth = std::max(floor, sd * std::pow(static_cast<double>(std::max<std::size_t>(n, 1)), -0.2));
  return kde;
}

double ParzenModel::log_density(const ParamSpec& spec, const Kde& kde, const ParamValue& v) {
  if (spec.kind == ParamKind::categorical) return std::log(kde.probabilities[option_index(spec, v)]);
  // Mixture of one uniform prior component and one kernel per center.
  const double weight = -std::log(static_cast<double>(kde.centers.size() + 1));
  const double x = to_model(spec, as_double(v));
  const double h = kde.bandwidth;
  const double norm = -std::log(h * std::sqrt(2.0 * std::numbers::pi)) + weight;
  std::vector<double> terms;
  terms.reserve(kde.centers.size() + 1);
  terms.push_back(weight - std::log(model_hi(spec) - model_lo(spec)));
  for (double c : kde.centers) {
    const double z = (x - c) / h;
    terms.push_back(norm - 0.5 * z * z);
  }
  return log_sum_exp(terms);
}

ParzenModel::ParzenModel(const SearchSpace& space, std::span<const Trial> below, std::span<const Trial> above) {
  for (const auto& s : space.specs) entries_.push_back({&s, build(s, below), build(s, above)});
}

const ParzenModel::Entry& ParzenModel::entry(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.spec->name == name) return e;
  }
  throw ValidationError("unknown parameter '" + name + "'");
}

double ParzenModel::log_density_below(const std::string& name, const ParamValue& v) const {
  const auto& e = entry(name);
  return log_density(*e.spec, e.below, v);
}

double ParzenModel::log_density_above(const std::string& name, const ParamValue& v) const {
  const auto& e = entry(name);
  return log_density(*e.spec, e.above, v);
}

Params ParzenModel::sample_below(Engine& eng) const {
  Params p;
  for (const auto& e : entries_) {
    const ParamSpec& s = *e.spec;
    if (!is_active(s, p)) continue;
    if (s.kind == ParamKind::categorical) {
      std::discrete_distribution<std::size_t> pick(e.below.probabilities.begin(), e.below.probabilities.end());
      p[s.name] = s.options[pick(eng)];
    } else {
      // Component 0 is the prior.
      const auto pick = uniform_int<std::size_t>(eng, 0, e.below.centers.size());
      if (pick == 0) {
        p[s.name] = finish(s, uniform(eng, model_lo(s), model_hi(s)));
      } else {
        p[s.name] = finish(s, e.below.centers[pick - 1] + e.below.bandwidth * normal(eng));
      }
    }
  }
  return p;
}

double ParzenModel::score(const Params& candidate) const {
  double total = 0.0;
  for (const auto& e : entries_) {
    auto it = candidate.find(e.spec->name);
    if (it == candidate.end()) continue;
    total += log_density(*e.spec, e.below, it->second) - log_density(*e.spec, e.above, it->second);
  }
  return total;
}

std::pair<std::vector<Trial>, std::vector<Trial>> partition_trials(std::span<const Trial> history, double gamma) {
  std::vector<Trial> complete;
  for (const auto& t : history) {
    if (t.status == TrialStatus::complete && t.objective) complete.push_back(t);
  }
  std::stable_sort(complete.begin(), complete.end(),
                   [](const Trial& a, const Trial& b) { return *a.objective < *b.objective; });
  const auto n_below = std::min(
      complete.size(), static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(complete.size()))));
  std::vector<Trial> below(complete.begin(), complete.begin() + static_cast<std::ptrdiff_t>(n_below));
  std::vector<Trial> above(complete.begin() + static_cast<std::ptrdiff_t>(n_below), complete.end());
  return {std::move(below), std::move(above)};
}

Params suggest(std::span<const Trial> history, const SearchSpace& space, const TpeConfig& config, Engine& eng) {
  space.validate();
  if (!(config.gamma > 0.0 && config.gamma < 1.0)) throw ValidationError("tpe: gamma must lie in (0, 1)");
  std::size_t complete = 0;
  for (const auto& t : history) complete += t.status == TrialStatus::complete ? 1 : 0;
  if (complete < std::max<std::size_t>(config.n_startup, 1)) return sample_random(space, eng);

  const auto [below, above] = partition_trials(history, config.gamma);
  const ParzenModel model(space, below, above);
  Params best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < std::max<std::size_t>(config.n_candidates, 1); ++c) {
    Params candidate = model.sample_below(eng);
    const double s = model.score(candidate);
    if (c == 0 || s > best_score) {
      best_score = s;
      best = std::move(candidate);
    }
  }
  return best;
}

StudyResult run_study(const Objective& objective, const SearchSpace& space, std::size_t n_trials,
                      const TpeConfig& config) {
  if (n_trials < 1) throw ValidationError("run_study: n_trials must be at least 1");
  space.validate();
  Engine eng = make_engine(config.seed, {0x747065ULL});
  StudyResult result;
  for (std::size_t i = 0; i < n_trials; ++i) {
    Trial t;
    t.id = i;
    t.params = suggest(result.history, space, config, eng);
    try {
      const double value = objective(t.params);
      if (std::isfinite(value)) {
        t.objective = value;
      } else {
        t.status = TrialStatus::failed;
        t.error = "non-finite objective";
      }
    } catch (const Error& e) {
      t.status = TrialStatus::failed;
      t.error = e.what();
    }
    if (t.status == TrialStatus::complete && (!result.best.objective || *t.objective < *result.best.objective)) {
      result.best = t;
    }
    result.history.push_back(std::move(t));
  }
  if (!result.best.objective) throw StudyFailed("all " + std::to_string(n_trials) + " trials failed");
  return result;
}

SearchSpace default_mlp_space() {
  SearchSpace s;
  s.specs.push_back(ParamSpec::log_uniform("learning_rate", 1e-5, 1e-1));
  s.specs.push_back(ParamSpec::categorical("batch_size", {"8", "16", "32", "64", "128"}));
  s.specs.push_back(ParamSpec::log_uniform("l1", 1e-8, 1e-2));
  s.specs.push_back(ParamSpec::log_uniform("l2", 1e-8, 1e-2));
  s.specs.push_back(ParamSpec::int_uniform("n_hidden", 0, 3));
  for (int i = 0; i < 3; ++i) {
    s.specs.push_back(ParamSpec::int_uniform("width_" + std::to_string(i), 2, 512, true).when("n_hidden", i));
  }
  s.specs.push_back(ParamSpec::categorical("optimizer", {"sgd", "sgd_momentum", "rmsprop", "adam"}));
  s.specs.push_back(ParamSpec::categorical("activation", {"relu", "leaky_relu", "tanh", "sigmoid"}));
  return s;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

std::string_view kind_name(ParamKind k) {
  switch (k) {
    case ParamKind::uniform: return "uniform";
    case ParamKind::log_uniform: return "log_uniform";
    case ParamKind::int_uniform: return "int_uniform";
    case ParamKind::categorical: return "categorical";
  }
  return "unknown";
}

ParamKind parse_kind(std::string_view name) {
  for (auto k : {ParamKind::uniform, ParamKind::log_uniform, ParamKind::int_uniform, ParamKind::categorical}) {
    if (kind_name(k) == name) return k;
  }
  throw ValidationError("unknown parameter kind '" + std::string(name) + "'");
}

}  // namespace

nlohmann::json to_json(const Params& params) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, value] : params) {
    std::visit([&](const auto& v) { j[name] = v; }, value);
  }
  return j;
}

nlohmann::json to_json(const Trial& trial) {
  nlohmann::json j{{"trial_id", trial.id},
                   {"params", to_json(trial.params)},
                   {"status", trial.status == TrialStatus::complete ? "complete" : "failed"}};
  if (trial.objective) j["objective"] = *trial.objective;
  if (!trial.error.empty()) j["error"] = trial.error;
  return j;
}

nlohmann::json to_json(const SearchSpace& space) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : space.specs) {
    nlohmann::json j{{"name", s.name}, {"kind", std::string(kind_name(s.kind))}};
    if (s.kind == ParamKind::categorical) {
      j["options"] = s.options;
    } else {
      j["lo"] = s.lo;
      j["hi"] = s.hi;
      if (s.kind == ParamKind::int_uniform) j["log"] = s.log;
    }
    if (s.condition) j["condition"] = {{"parent", s.condition->parent}, {"greater_than", s.condition->greater_than}};
    arr.push_back(std::move(j));
  }
  return arr;
}

SearchSpace space_from_json(const nlohmann::json& j) {
  try {
    SearchSpace space;
    for (const auto& e : j) {
      ParamSpec s;
      s.name = e.at("name").get<std::string>();
      s.kind = parse_kind(e.at("kind").get<std::string>());
      if (s.kind == ParamKind::categorical) {
        s.options = e.at("options").get<std::vector<std::string>>();
      } else {
        s.lo = e.at("lo").get<double>();
        s.hi = e.at("hi").get<double>();
        s.log = e.value("log", false);
      }
      if (e.contains("condition")) {
        s.condition = Condition{e["condition"].at("parent").get<std::string>(),
                                e["condition"].value("greater_than", 0.0)};
      }
      space.specs.push_back(std::move(s));
    }
    space.validate();
    return space;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("search space: ") + ex.what());
  }
}

}  // namespace lasermon::hpo
