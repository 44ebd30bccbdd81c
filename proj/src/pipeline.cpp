#include "lasermon/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "lasermon/error.hpp"
#include "lasermon/parallel.hpp"
#include "lasermon/rng.hpp"
#include "lasermon/textio.hpp"

namespace lasermon::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using textio::format_double;

const std::vector<std::string>& all_settings() {
  static const std::vector<std::string> names = {"milling", "grinding", "polishing", "die_edm", "wire_edm", "combined"};
  return names;
}

std::string setting_label(const std::string& setting) {
  const auto& names = all_settings();
  auto it = std::find(names.begin(), names.end(), setting);
  if (it == names.end()) throw ValidationError("unknown setting '" + setting + "'");
  return std::string("(") + static_cast<char>('a' + (it - names.begin())) + ") " + setting;
}

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::params_only: return "params_only";
    case ExperimentKind::full: return "full";
    case ExperimentKind::reduced: return "reduced";
  }
  return "unknown";
}

ExperimentKind parse_experiment(std::string_view name) {
  for (auto k : {ExperimentKind::params_only, ExperimentKind::full, ExperimentKind::reduced}) {
    if (to_string(k) == name) return k;
  }
  if (name == "params-only") return ExperimentKind::params_only;
  throw ValidationError("unknown experiment '" + std::string(name) + "'");
}

mlp::TrainConfig default_train_config() {
  mlp::TrainConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 16;
  c.max_epochs = 800;
  c.l1 = 1e-3;
  return c;
}

void RunConfig::validate() const {
  if (settings.empty()) throw ValidationError("at least one setting is required");
  std::set<std::string> seen;
  for (const auto& s : settings) {
    setting_label(s);
    if (!seen.insert(s).second) throw ValidationError("setting '" + s + "' requested twice");
  }
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ValidationError("train_ratio must lie in (0, 1)");
  if (folds < 2) throw ValidationError("folds must be at least 2");
  if (bands == 0) throw ValidationError("bands must be positive");
  if (top_k == 0 || top_k > sample_feature_count(bands)) {
    throw ValidationError("top_k must lie in [1, " + std::to_string(sample_feature_count(bands)) + "]");
  }
  for (std::size_t i = 0; i < ablation_ks.size(); ++i) {
    if (ablation_ks[i] == 0 || ablation_ks[i] > sample_feature_count(bands)) {
      throw ValidationError("ablation k out of range: " + std::to_string(ablation_ks[i]));
    }
    if (i > 0 && ablation_ks[i] <= ablation_ks[i - 1]) throw ValidationError("ablation k values must ascend");
  }
  if (n_trees == 0) throw ValidationError("n_trees must be positive");
  if (attribution.background_rows == 0) throw ValidationError("background_rows must be positive");
  if (attribution.permutations == 0) throw ValidationError("permutations must be positive");
  if (mlp.train.batch_size == 0 || mlp.train.max_epochs == 0) throw ValidationError("batch_size and max_epochs must be positive");
  if (!(mlp.train.learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (hpo.enabled && hpo.trials == 0) throw ValidationError("hpo.trials must be positive");
  if (!dataset) lasermon::validate(synthetic);
}

// ---------------------------------------------------------------------------
// Config JSON

json to_json(const RunConfig& c) {
  json j;
  j["format_version"] = kFormatVersion;
  if (c.dataset) j["dataset"] = c.dataset->generic_string();
  const auto& s = c.synthetic;
  json coeff = {{"baseline", s.coefficients.baseline},
                {"initial_weight", s.coefficients.initial_weight},
                {"energy_weight", s.coefficients.energy_weight},
                {"energy_exponent", s.coefficients.energy_exponent},
                {"amplitude_weight", s.coefficients.amplitude_weight},
                {"base_amplitude", s.coefficients.base_amplitude},
                {"quality_gain", s.coefficients.quality_gain}};
  j["synthetic"] = {{"seed", s.seed},
                    {"experiments_per_technique", s.experiments_per_technique},
                    {"samples_per_experiment", s.samples_per_experiment},
                    {"trace_length", s.trace_length},
                    {"sample_rate", s.sample_rate},
                    {"noise_scale", s.noise_scale},
                    {"min_layers", s.min_layers},
                    {"max_layers", s.max_layers},
                    {"coefficients", coeff}};
  j["settings"] = c.settings;
  j["seed"] = c.seed;
  j["train_ratio"] = c.train_ratio;
  j["folds"] = c.folds;
  j["bands"] = c.bands;
  const auto& t = c.mlp.train;
  j["mlp"] = {{"hidden_widths", c.mlp.hidden_widths},
              {"activation", mlp::to_string(c.mlp.activation)},
              {"learning_rate", t.learning_rate},
              {"batch_size", t.batch_size},
              {"max_epochs", t.max_epochs},
              {"l1", t.l1},
              {"l2", t.l2},
              {"optimizer", mlp::to_string(t.optimizer)},
              {"early_stopping_patience", t.early_stopping_patience}};
  j["hpo"] = {{"enabled", c.hpo.enabled},
              {"trials", c.hpo.trials},
              {"n_startup", c.hpo.tpe.n_startup},
              {"gamma", c.hpo.tpe.gamma},
              {"n_candidates", c.hpo.tpe.n_candidates},
              {"seed", c.hpo.tpe.seed},
              {"max_epochs", c.hpo.max_epochs}};
  if (c.hpo.space) j["hpo"]["space"] = hpo::to_json(*c.hpo.space);
  j["shared_arch"] = c.shared_arch;
  j["attribution"] = {{"background_rows", c.attribution.background_rows},
                      {"permutations", c.attribution.permutations},
                      {"max_explained_rows", c.attribution.max_explained_rows}};
  j["top_k"] = c.top_k;
  j["ablation_ks"] = c.ablation_ks;
  j["n_trees"] = c.n_trees;
  j["threads"] = c.threads;
  j["svg"] = c.svg;
  j["out"] = c.out.generic_string();
  return j;
}

RunConfig config_from_json(const json& j) {
  try {
    RunConfig c;
    if (!j.is_object()) throw ValidationError("run config must be a JSON object");
    if (j.contains("dataset") && !j["dataset"].is_null()) c.dataset = fs::path(j["dataset"].get<std::string>());
    if (j.contains("synthetic")) {
      const auto& s = j["synthetic"];
      auto& d = c.synthetic;
      d.seed = s.value("seed", d.seed);
      d.experiments_per_technique = s.value("experiments_per_technique", d.experiments_per_technique);
      d.samples_per_experiment = s.value("samples_per_experiment", d.samples_per_experiment);
      d.trace_length = s.value("trace_length", d.trace_length);
      d.sample_rate = s.value("sample_rate", d.sample_rate);
      d.noise_scale = s.value("noise_scale", d.noise_scale);
      d.min_layers = s.value("min_layers", d.min_layers);
      d.max_layers = s.value("max_layers", d.max_layers);
      if (s.contains("coefficients")) {
        const auto& k = s["coefficients"];
        auto& g = d.coefficients;
        g.baseline = k.value("baseline", g.baseline);
        g.initial_weight = k.value("initial_weight", g.initial_weight);
        g.energy_weight = k.value("energy_weight", g.energy_weight);
        g.energy_exponent = k.value("energy_exponent", g.energy_exponent);
        g.amplitude_weight = k.value("amplitude_weight", g.amplitude_weight);
        g.base_amplitude = k.value("base_amplitude", g.base_amplitude);
        g.quality_gain = k.value("quality_gain", g.quality_gain);
      }
    }
    c.settings = j.value("settings", c.settings);
    c.seed = j.value("seed", c.seed);
    c.train_ratio = j.value("train_ratio", c.train_ratio);
    c.folds = j.value("folds", c.folds);
    c.bands = j.value("bands", c.bands);
    if (j.contains("mlp")) {
      const auto& m = j["mlp"];
      auto& t = c.mlp.train;
      c.mlp.hidden_widths = m.value("hidden_widths", c.mlp.hidden_widths);
      if (m.contains("activation")) c.mlp.activation = mlp::parse_activation(m["activation"].get<std::string>());
      t.learning_rate = m.value("learning_rate", t.learning_rate);
      t.batch_size = m.value("batch_size", t.batch_size);
      t.max_epochs = m.value("max_epochs", t.max_epochs);
      t.l1 = m.value("l1", t.l1);
      t.l2 = m.value("l2", t.l2);
      if (m.contains("optimizer")) t.optimizer = mlp::parse_optimizer(m["optimizer"].get<std::string>());
      t.early_stopping_patience = m.value("early_stopping_patience", t.early_stopping_patience);
    }
    if (j.contains("hpo")) {
      const auto& h = j["hpo"];
      c.hpo.enabled = h.value("enabled", c.hpo.enabled);
      c.hpo.trials = h.value("trials", c.hpo.trials);
      c.hpo.tpe.n_startup = h.value("n_startup", c.hpo.tpe.n_startup);
      c.hpo.tpe.gamma = h.value("gamma", c.hpo.tpe.gamma);
      c.hpo.tpe.n_candidates = h.value("n_candidates", c.hpo.tpe.n_candidates);
      c.hpo.tpe.seed = h.value("seed", c.hpo.tpe.seed);
      c.hpo.max_epochs = h.value("max_epochs", c.hpo.max_epochs);
      if (h.contains("space") && !h["space"].is_null()) c.hpo.space = hpo::space_from_json(h["space"]);
    }
    c.shared_arch = j.value("shared_arch", c.shared_arch);
    if (j.contains("attribution")) {
      const auto& a = j["attribution"];
      c.attribution.background_rows = a.value("background_rows", c.attribution.background_rows);
      c.attribution.permutations = a.value("permutations", c.attribution.permutations);
      c.attribution.max_explained_rows = a.value("max_explained_rows", c.attribution.max_explained_rows);
    }
    c.top_k = j.value("top_k", c.top_k);
    c.ablation_ks = j.value("ablation_ks", c.ablation_ks);
    c.n_trees = j.value("n_trees", c.n_trees);
    c.threads = j.value("threads", c.threads);
    c.svg = j.value("svg", c.svg);
    if (j.contains("out")) c.out = fs::path(j["out"].get<std::string>());
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("run config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Data preparation

Prepared prepare(const RunConfig& config) {
  config.validate();
  Prepared p;
  if (config.dataset) {
    const auto experiments = load_dataset(*config.dataset);
    p.table = build_feature_table(experiments, config.bands, config.threads);
  } else {
    p.table = build_feature_table(config.synthetic, config.bands, config.threads);
  }
  const auto& t = p.table;
  if (t.rows() == 0) throw ValidationError("dataset has no samples");

  std::vector<SampleGroup> groups;
  for (Technique tech : kTechniques) {
    SampleGroup g{std::string(to_string(tech)), {}};
    for (std::size_t r = 0; r < t.rows(); ++r) {
      if (t.techniques[r] == tech) g.ids.push_back(t.keys[r]);
    }
    if (!g.ids.empty()) groups.push_back(std::move(g));
  }
  p.plan = split(groups, config.train_ratio, config.seed);
  const std::set<SampleKey> train(p.plan.train.begin(), p.plan.train.end());

  for (const auto& name : config.settings) {
    SettingRows rows{name, {}, {}};
    for (std::size_t r = 0; r < t.rows(); ++r) {
      if (name != "combined" && to_string(t.techniques[r]) != name) continue;
      (train.count(t.keys[r]) ? rows.train : rows.test).push_back(r);
    }
    if (rows.train.size() < 2 || rows.test.size() < 2) {
      throw ValidationError("setting '" + name + "' has too few samples (" + std::to_string(rows.train.size()) +
                            " train, " + std::to_string(rows.test.size()) + " test)");
    }
    p.settings.push_back(std::move(rows));
  }
  return p;
}

namespace {

constexpr std::uint64_t kFoldStream = 0x666f6c64;
constexpr std::uint64_t kTrainStream = 0x747261696e;
constexpr std::uint64_t kBackgroundStream = 0x626b67;
constexpr std::uint64_t kShapStream = 0x73686170;
constexpr std::uint64_t kTreeStream = 0x74726565;

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

Vector gather(const Vector& v, const std::vector<std::size_t>& rows) {
  Vector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[static_cast<Eigen::Index>(rows[i])];
  return out;
}

std::span<const double> view(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

// Parameter inputs followed by the chosen sensor columns (all when `sensors` is null).
Matrix model_inputs(const FeatureTable& t, const std::vector<std::size_t>& rows, bool with_sensors,
                    const std::vector<std::size_t>* sensors = nullptr) {
  const auto np = t.params.cols();
  const Eigen::Index ns = !with_sensors ? 0 : sensors ? static_cast<Eigen::Index>(sensors->size()) : t.sensors.cols();
  Matrix out(static_cast<Eigen::Index>(rows.size()), np + ns);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    const auto o = static_cast<Eigen::Index>(i);
    out.row(o).head(np) = t.params.row(r);
    if (!with_sensors) continue;
    if (sensors) {
      for (std::size_t s = 0; s < sensors->size(); ++s) out(o, np + static_cast<Eigen::Index>(s)) = t.sensors(r, static_cast<Eigen::Index>((*sensors)[s]));
    } else {
      out.row(o).tail(ns) = t.sensors.row(r);
    }
  }
  return out;
}

std::vector<std::string> input_names(const FeatureTable& t, bool with_sensors,
                                     const std::vector<std::size_t>* sensors = nullptr) {
  std::vector<std::string> names = parameter_input_names();
  if (!with_sensors) return names;
  const auto cat = catalog(t.bands);
  if (sensors) {
    for (std::size_t s : *sensors) names.push_back(cat[s].name);
  } else {
    for (const auto& d : cat) names.push_back(d.name);
  }
  return names;
}

std::string checksum(const FeatureTable& t, const std::vector<std::size_t>& rows) {
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  for (std::size_t r : rows) ids.push_back(t.keys[r].str());
  std::sort(ids.begin(), ids.end());
  std::uint64_t h = stable_hash("");
  for (const auto& id : ids) h = mix64(h ^ stable_hash(id));
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

StageRows audit_stage(std::string stage, const FeatureTable& t, const std::vector<std::size_t>& rows,
                      const SettingRows& setting) {
  const std::set<std::size_t> train(setting.train.begin(), setting.train.end());
  StageRows s{std::move(stage), checksum(t, rows), rows.size(), true};
  for (std::size_t r : rows) s.within_train = s.within_train && train.count(r) > 0;
  if (!s.within_train) throw ValidationError("stage '" + s.stage + "' read rows outside the training split of '" + setting.setting + "'");
  return s;
}

std::vector<ScatterPoint> scatter_points(const FeatureTable& t, const std::vector<std::size_t>& rows,
                                         const Vector& truth, const Vector& prediction) {
  std::vector<ScatterPoint> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.push_back({t.keys[rows[i]].str(), truth[static_cast<Eigen::Index>(i)], prediction[static_cast<Eigen::Index>(i)]});
  }
  return out;
}

// Training rows split into (fit, validation) by fold 0 of the k-fold plan.
struct FoldRows {
  FoldPlan plan;
  std::vector<std::vector<std::size_t>> members;  // positions within the training rows, per fold
};

FoldRows make_folds(const FeatureTable& t, const std::vector<std::size_t>& train, std::size_t k, std::uint64_t seed) {
  std::vector<SampleKey> keys;
  for (std::size_t r : train) keys.push_back(t.keys[r]);
  FoldRows f{kfold(keys, k, derive_seed(seed, {kFoldStream})), {}};
  std::map<SampleKey, std::size_t> position;
  for (std::size_t i = 0; i < keys.size(); ++i) position[keys[i]] = i;
  f.members.resize(k);
  for (std::size_t i = 0; i < f.plan.ids.size(); ++i) f.members[f.plan.fold[i]].push_back(position.at(f.plan.ids[i]));
  for (auto& m : f.members) std::sort(m.begin(), m.end());
  return f;
}

std::vector<std::size_t> complement(std::size_t n, const std::vector<std::size_t>& held_out) {
  std::vector<char> skip(n, 0);
  for (std::size_t i : held_out) skip[i] = 1;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!skip[i]) out.push_back(i);
  }
  return out;
}

mlp::TrainResult fit_network(const MlpSettings& settings, const Matrix& x, const Vector& y,
                             const std::vector<std::size_t>& fit, const std::vector<std::size_t>& validation,
                             std::uint64_t seed) {
  mlp::Architecture arch{static_cast<std::size_t>(x.cols()), settings.hidden_widths, settings.activation};
  mlp::TrainConfig tc = settings.train;
  tc.seed = derive_seed(seed, {kTrainStream});
  return mlp::train(mlp::init(arch, derive_seed(seed, {kTrainStream, 1})), gather_rows(x, fit), gather(y, fit),
                    gather_rows(x, validation), gather(y, validation), tc);
}

MlpSettings settings_from_params(const hpo::Params& p, const MlpSettings& base, std::size_t max_epochs) {
  MlpSettings s = base;
  s.hidden_widths.clear();
  const auto n_hidden = hpo::as_int(p.at("n_hidden"));
  for (long long i = 0; i < n_hidden; ++i) {
    s.hidden_widths.push_back(static_cast<std::size_t>(hpo::as_int(p.at("width_" + std::to_string(i)))));
  }
  s.activation = mlp::parse_activation(hpo::as_string(p.at("activation")));
  s.train.optimizer = mlp::parse_optimizer(hpo::as_string(p.at("optimizer")));
  s.train.learning_rate = hpo::as_double(p.at("learning_rate"));
  s.train.batch_size = static_cast<std::size_t>(textio::parse_int(hpo::as_string(p.at("batch_size")), "batch_size"));
  s.train.l1 = hpo::as_double(p.at("l1"));
  s.train.l2 = hpo::as_double(p.at("l2"));
  s.train.max_epochs = max_epochs;
  return s;
}

struct Tuned {
  MlpSettings settings;
  std::vector<hpo::Trial> history;
  std::vector<StageRows> audit;
};

// TPE study whose objective is the mean k-fold validation MSE on the setting's training rows.
Tuned tune(const RunConfig& config, const FeatureTable& t, const SettingRows& rows, bool with_sensors,
           std::uint64_t seed) {
  const Matrix raw = model_inputs(t, rows.train, with_sensors);
  const auto stats = fit_minmax(raw);
  const Matrix x = apply_minmax(raw, stats);
  const Vector y = gather(t.target, rows.train);
  const auto folds = make_folds(t, rows.train, config.folds, seed);

  auto objective = [&](const hpo::Params& p) {
    const MlpSettings s = settings_from_params(p, config.mlp, config.hpo.max_epochs);
    std::vector<double> scores(config.folds);
    parallel_for(config.folds, config.threads, [&](std::size_t f) {
      const auto result = fit_network(s, x, y, complement(rows.train.size(), folds.members[f]), folds.members[f],
                                      derive_seed(seed, {f}));
      scores[f] = result.history[result.best_epoch].validation_mse;
    });
    double mean = 0.0;
    for (double v : scores) mean += v;
    return mean / static_cast<double>(scores.size());
  };
  hpo::TpeConfig tpe = config.hpo.tpe;
  tpe.seed = derive_seed(config.hpo.tpe.seed, {seed});
  const auto space = config.hpo.space ? *config.hpo.space : hpo::default_mlp_space();
  auto study = hpo::run_study(objective, space, config.hpo.trials, tpe);
  Tuned out{settings_from_params(study.best.params, config.mlp, config.mlp.train.max_epochs), std::move(study.history), {}};
  out.audit.push_back(audit_stage("hpo", t, rows.train, rows));
  return out;
}

std::uint64_t setting_seed(std::uint64_t seed, ExperimentKind kind, const std::string& setting) {
  return derive_seed(seed, {static_cast<std::uint64_t>(kind), stable_hash(setting)});
}

SettingOutcome fit_setting(const RunConfig& config, const Prepared& data, const SettingRows& rows, ExperimentKind kind,
                           const MlpSettings& settings, const std::vector<StageRows>& extra_audit) {
  const auto& t = data.table;
  const bool with_sensors = kind != ExperimentKind::params_only;
  const std::uint64_t seed = setting_seed(config.seed, kind, rows.setting);

  const Matrix raw_train = model_inputs(t, rows.train, with_sensors);
  const Matrix raw_test = model_inputs(t, rows.test, with_sensors);
  auto stats = fit_minmax(raw_train, input_names(t, with_sensors));
  const Matrix x_train = apply_minmax(raw_train, stats);
  const Matrix x_test = apply_minmax(raw_test, stats);

  const Vector y_train = gather(t.target, rows.train);
  const Vector y_test = gather(t.target, rows.test);

  auto folds = make_folds(t, rows.train, config.folds, seed);
  const auto& validation = folds.members[0];
  auto result = fit_network(settings, x_train, y_train, complement(rows.train.size(), validation), validation, seed);

  const Vector p_train = mlp::predict(result.model, x_train);
  const Vector p_test = mlp::predict(result.model, x_test);

  SettingOutcome out;
  out.report = metrics::evaluate(setting_label(rows.setting), view(y_train), view(p_train), view(y_test), view(p_test));
  out.scatter = scatter_points(t, rows.test, y_test, p_test);
  out.audit = extra_audit;
  out.audit.push_back(audit_stage("normalization", t, rows.train, rows));
  std::vector<std::size_t> val_rows;
  for (std::size_t i : validation) val_rows.push_back(rows.train[i]);
  out.audit.push_back(audit_stage("early_stopping", t, val_rows, rows));
  result.model.normalization = std::move(stats);
  out.model = std::move(result.model);
  out.folds = std::move(folds.plan);
  out.architecture = settings.hidden_widths;
  return out;
}

ExperimentOutcome run_mlp_experiment(const RunConfig& config, const Prepared& data, ExperimentKind kind) {
  ExperimentOutcome out;
  out.kind = kind;
  out.settings.resize(data.settings.size());
  const bool with_sensors = kind != ExperimentKind::params_only;

  std::optional<Tuned> shared;
  if (config.hpo.enabled && config.shared_arch) {
    // One study on all training rows, reused by every setting.
    SettingRows all{"combined", {}, {}};
    for (const auto& s : data.settings) all.train.insert(all.train.end(), s.train.begin(), s.train.end());
    std::sort(all.train.begin(), all.train.end());
    all.train.erase(std::unique(all.train.begin(), all.train.end()), all.train.end());
    shared = tune(config, data.table, all, with_sensors, setting_seed(config.seed, kind, "shared"));
  }

  parallel_for(data.settings.size(), config.threads, [&](std::size_t i) {
    const auto& rows = data.settings[i];
    MlpSettings settings = config.mlp;
    std::vector<hpo::Trial> history;
    std::vector<StageRows> audit;
    if (shared) {
      settings = shared->settings;
      history = shared->history;
    } else if (config.hpo.enabled) {
      auto tuned = tune(config, data.table, rows, with_sensors, setting_seed(config.seed, kind, rows.setting));
      settings = std::move(tuned.settings);
      history = std::move(tuned.history);
      audit = std::move(tuned.audit);
    }
    try {
      out.settings[i] = fit_setting(config, data, rows, kind, settings, audit);
    } catch (const TrainingDiverged& e) {
      throw TrainingDiverged(std::string(to_string(kind)) + " / " + rows.setting + ": " + e.what(), e.epoch());
    }
    out.settings[i].hpo_history = std::move(history);
  });
  return out;
}

}  // namespace

ExperimentOutcome run_params_only(const RunConfig& config, const Prepared& data) {
  return run_mlp_experiment(config, data, ExperimentKind::params_only);
}

ExperimentOutcome run_full(const RunConfig& config, const Prepared& data) {
  return run_mlp_experiment(config, data, ExperimentKind::full);
}

// ---------------------------------------------------------------------------
// Reduced inputs

namespace {

struct TreeFit {
  metrics::MetricsReport report;
  std::vector<ScatterPoint> scatter;
};

TreeFit fit_tree_model(const RunConfig& config, const Prepared& data, std::size_t setting_index,
                       const std::vector<std::size_t>& selected, const std::string& kind) {
  const auto& t = data.table;
  const auto& rows = data.settings[setting_index];
  const Matrix raw_train = model_inputs(t, rows.train, true, &selected);
  const Matrix raw_test = model_inputs(t, rows.test, true, &selected);
  const auto stats = fit_minmax(raw_train);
  const Matrix x_train = apply_minmax(raw_train, stats);
  const Matrix x_test = apply_minmax(raw_test, stats);
  const Vector y_train = gather(t.target, rows.train);
  const Vector y_test = gather(t.target, rows.test);

  const std::uint64_t seed = derive_seed(setting_seed(config.seed, ExperimentKind::reduced, rows.setting),
                                         {kTreeStream, stable_hash(kind)});
  forest::Ensemble model;
  if (kind == "decision_tree") {
    forest::TreeConfig tc;
    tc.seed = seed;
    model = forest::fit_decision_tree(x_train, y_train, tc);
  } else {
    forest::ForestConfig fc = kind == "random_forest" ? forest::random_forest_defaults() : forest::extra_trees_defaults();
    fc.n_trees = config.n_trees;
    fc.seed = seed;
    fc.threads = config.threads;
    model = kind == "random_forest" ? forest::fit_random_forest(x_train, y_train, fc)
                                    : forest::fit_extra_trees(x_train, y_train, fc);
  }
  const Vector p_train = model.predict(x_train);
  const Vector p_test = model.predict(x_test);
  return {metrics::evaluate(setting_label(rows.setting), view(y_train), view(p_train), view(y_test), view(p_test)),
          scatter_points(t, rows.test, y_test, p_test)};
}

std::vector<std::size_t> top_sorted(const std::vector<std::size_t>& ranking, std::size_t k) {
  attribution::GlobalImportance g;
  g.ranking = ranking;
  auto selected = attribution::select_top_k(g, k);
  std::sort(selected.begin(), selected.end());
  return selected;
}

}  // namespace

metrics::MetricsReport reduced_extra_trees(const RunConfig& config, const Prepared& data, std::size_t setting_index,
                                           const std::vector<std::size_t>& ranking, std::size_t k) {
  return fit_tree_model(config, data, setting_index, top_sorted(ranking, k), "extra_trees").report;
}

ReducedOutcome run_reduced(const RunConfig& config, const Prepared& data, const ExperimentOutcome& full) {
  if (full.kind != ExperimentKind::full || full.settings.size() != data.settings.size()) {
    throw ValidationError("reduced experiment needs the full-input models of every setting");
  }
  const auto& t = data.table;
  const auto np = static_cast<Eigen::Index>(t.params.cols());
  const auto ns = t.sensors.cols();

  ReducedOutcome out;
  out.table.kind = ExperimentKind::reduced;
  out.table.settings.resize(data.settings.size());
  out.settings.resize(data.settings.size());

  for (std::size_t i = 0; i < data.settings.size(); ++i) {
    const auto& rows = data.settings[i];
    const auto& fitted = full.settings[i];
    if (!fitted.model || !fitted.model->normalization) {
      throw ValidationError("full model for '" + rows.setting + "' lacks its scaling statistics");
    }
    const auto& model = *fitted.model;
    const std::uint64_t seed = setting_seed(config.seed, ExperimentKind::reduced, rows.setting);

    const Matrix x_train = apply_minmax(model_inputs(t, rows.train, true), *model.normalization);
    std::vector<std::size_t> explained = rows.test;
    if (config.attribution.max_explained_rows > 0 && explained.size() > config.attribution.max_explained_rows) {
      explained.resize(config.attribution.max_explained_rows);
    }
    const Matrix x_explain = apply_minmax(model_inputs(t, explained, true), *model.normalization);

    const auto bg = attribution::background_indices(rows.train.size(), config.attribution.background_rows,
                                                    derive_seed(seed, {kBackgroundStream}));
    std::vector<std::size_t> bg_rows;
    for (std::size_t b : bg) bg_rows.push_back(rows.train[b]);
    const Matrix background = gather_rows(x_train, bg);

    attribution::AttributionConfig ac;
    ac.background_rows = config.attribution.background_rows;
    ac.permutations = config.attribution.permutations;
    ac.seed = derive_seed(seed, {kShapStream});
    ac.threads = config.threads;
    const auto result = attribution::explain(
        [&](const Matrix& m) { return mlp::predict(model, m); },
        [&](std::span<const double> row, std::span<const double> base, std::span<const std::size_t> order) {
          return mlp::predict_path(model, row, base, order);
        },
        x_explain, background, ac);

    auto& rs = out.settings[i];
    const Matrix sensor_phi = result.phi.rightCols(ns);
    rs.importance = attribution::global_importance(sensor_phi);
    rs.mean_phi.resize(static_cast<std::size_t>(ns));
    for (Eigen::Index c = 0; c < ns; ++c) rs.mean_phi[static_cast<std::size_t>(c)] = sensor_phi.col(c).mean();
    rs.selected = top_sorted(rs.importance.ranking, config.top_k);
    (void)np;

    for (const std::string kind : {"decision_tree", "random_forest", "extra_trees"}) {
      auto fit = fit_tree_model(config, data, i, rs.selected, kind);
      rs.models[kind] = fit.report;
      if (kind == "extra_trees") {
        auto& so = out.table.settings[i];
        so.report = fit.report;
        so.scatter = std::move(fit.scatter);
      }
    }
    auto& so = out.table.settings[i];
    so.audit.push_back(audit_stage("shapley_background", t, bg_rows, rows));
    so.audit.push_back(audit_stage("tree_normalization", t, rows.train, rows));
  }

  if (!config.ablation_ks.empty()) {
    std::vector<std::size_t> ks = config.ablation_ks;
    const auto all = static_cast<std::size_t>(ns);
    if (ks.back() != all) ks.push_back(all);  // full-feature reference point
    out.ablation = attribution::ablation_sweep(ks, [&](std::size_t k) {
      std::vector<attribution::AblationPoint> points(data.settings.size());
      for (std::size_t i = 0; i < data.settings.size(); ++i) {
        const auto report = reduced_extra_trees(config, data, i, out.settings[i].importance.ranking, k);
        points[i] = {k, data.settings[i].setting, report.test_r2, report.test_rmse};
      }
      return points;
    });
  }
  return out;
}

RunResults run(const RunConfig& config, const std::vector<ExperimentKind>& experiments) {
  const Prepared data = prepare(config);
  RunResults results;
  results.plan = data.plan;
  results.bands = data.table.bands;
  auto wants = [&](ExperimentKind k) { return std::find(experiments.begin(), experiments.end(), k) != experiments.end(); };
  if (wants(ExperimentKind::params_only)) results.params_only = run_params_only(config, data);
  if (wants(ExperimentKind::full) || wants(ExperimentKind::reduced)) results.full = run_full(config, data);
  if (wants(ExperimentKind::reduced)) results.reduced = run_reduced(config, data, *results.full);
  return results;
}

// ---------------------------------------------------------------------------
// Reports

std::string table_csv(const ExperimentOutcome& outcome) {
  std::string s = "setting,train_r2,test_r2,train_rmse,test_rmse,n_train,n_test\n";
  for (const auto& o : outcome.settings) {
    const auto& r = o.report;
    s += r.setting + "," + format_double(r.train_r2) + "," + format_double(r.test_r2) + "," +
         format_double(r.train_rmse) + "," + format_double(r.test_rmse) + "," + std::to_string(r.n_train) + "," +
         std::to_string(r.n_test) + "\n";
  }
  return s;
}

namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string markdown_rows(const std::vector<metrics::MetricsReport>& reports, const std::string& title) {
  std::string s = "# " + title + "\n\n| Setting | Train R2 | Test R2 | Train RMSE | Test RMSE |\n|---|---|---|---|---|\n";
  for (const auto& r : reports) {
    s += "| " + r.setting + " | " + fixed4(r.train_r2) + " | " + fixed4(r.test_r2) + " | " + fixed4(r.train_rmse) +
         " | " + fixed4(r.test_rmse) + " |\n";
  }
  return s;
}

std::string scatter_csv(const std::vector<ScatterPoint>& points) {
  std::string s = "sample_id,ground_truth,prediction\n";
  for (const auto& p : points) s += p.sample_id + "," + format_double(p.ground_truth) + "," + format_double(p.prediction) + "\n";
  return s;
}

std::string title_for(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::params_only: return "Laser parameters and initial roughness";
    case ExperimentKind::full: return "Parameters and all sensor features";
    case ExperimentKind::reduced: return "Extra trees on parameters and top-k sensor features";
  }
  return "";
}

std::string setting_of(const metrics::MetricsReport& r) {
  // "(a) milling" -> "milling"
  return r.setting.substr(r.setting.find(' ') + 1);
}

void write_experiment(const ExperimentOutcome& e, const RunConfig& config) {
  const std::string name(to_string(e.kind));
  textio::write_file(config.out / ("table_" + name + ".csv"), table_csv(e));
  textio::write_file(config.out / ("table_" + name + ".md"), table_markdown(e, title_for(e.kind)));
  const fs::path dir = config.out / name;
  textio::ensure_directory(dir);
  for (const auto& o : e.settings) {
    const std::string setting = setting_of(o.report);
    textio::write_file(dir / ("scatter_" + setting + ".csv"), scatter_csv(o.scatter));
    if (config.svg) textio::write_file(dir / ("scatter_" + setting + ".svg"), render_scatter_svg(o.scatter, name + " " + o.report.setting));
    if (o.model) textio::write_file(dir / ("model_" + setting + ".json"), mlp::to_json(*o.model).dump(1) + "\n");
    if (!o.hpo_history.empty()) {
      std::string log;
      const hpo::Trial* best = nullptr;
      for (const auto& t : o.hpo_history) {
        log += hpo::to_json(t).dump() + "\n";
        if (t.objective && (!best || *t.objective < *best->objective)) best = &t;
      }
      const fs::path study = dir / "hpo" / setting;
      textio::ensure_directory(study);
      textio::write_file(study / "trials.jsonl", log);
      if (best) textio::write_file(study / "best.json", hpo::to_json(*best).dump(1) + "\n");
    }
  }
}

std::string importance_csv(const ReducedSetting& rs, const std::vector<FeatureDescriptor>& cat) {
  std::string s = "rank,feature_name,mean_abs_shap\n";
  for (std::size_t r = 0; r < rs.importance.ranking.size(); ++r) {
    const std::size_t f = rs.importance.ranking[r];
    s += std::to_string(r + 1) + "," + cat[f].name + "," + format_double(rs.importance.scores[f]) + "\n";
  }
  return s;
}

std::string shap_summary_csv(const ReducedSetting& rs, const std::vector<FeatureDescriptor>& cat, std::size_t k) {
  std::string s = "rank,feature_name,mean_shap,mean_abs_shap\n";
  for (std::size_t r = 0; r < std::min(k, rs.importance.ranking.size()); ++r) {
    const std::size_t f = rs.importance.ranking[r];
    s += std::to_string(r + 1) + "," + cat[f].name + "," + format_double(rs.mean_phi[f]) + "," +
         format_double(rs.importance.scores[f]) + "\n";
  }
  return s;
}

json audit_json(const ExperimentOutcome& e) {
  json a = json::array();
  for (const auto& o : e.settings) {
    for (const auto& s : o.audit) {
      a.push_back({{"setting", setting_of(o.report)}, {"stage", s.stage}, {"rows", s.rows},
                   {"checksum", s.checksum}, {"within_train", s.within_train}});
    }
  }
  return a;
}

}  // namespace

std::string table_markdown(const ExperimentOutcome& outcome, const std::string& title) {
  std::vector<metrics::MetricsReport> reports;
  for (const auto& o : outcome.settings) reports.push_back(o.report);
  return markdown_rows(reports, title);
}

void emit_reports(const RunResults& results, const RunConfig& config) {
  textio::ensure_directory(config.out);
  json manifest = to_json(config);
  manifest["tool_version"] = kToolVersion;
  manifest["catalog_id"] = catalog_id(results.bands);
  json audit = json::object();

  for (const auto* e : {results.params_only ? &*results.params_only : nullptr, results.full ? &*results.full : nullptr,
                        results.reduced ? &results.reduced->table : nullptr}) {
    if (!e) continue;
    write_experiment(*e, config);
    audit[std::string(to_string(e->kind))] = audit_json(*e);
  }

  if (results.reduced) {
    const auto& red = *results.reduced;
    const auto cat = catalog(results.bands);
    const fs::path dir = config.out / "reduced";
    std::string models = "setting,model,train_r2,test_r2,train_rmse,test_rmse\n";
    for (std::size_t i = 0; i < red.settings.size(); ++i) {
      const auto& rs = red.settings[i];
      const std::string setting = setting_of(red.table.settings[i].report);
      textio::write_file(dir / ("importance_" + setting + ".csv"), importance_csv(rs, cat));
      textio::write_file(dir / ("shap_summary_" + setting + ".csv"), shap_summary_csv(rs, cat, config.top_k));
      for (const auto& [kind, r] : rs.models) {
        models += setting + "," + kind + "," + format_double(r.train_r2) + "," + format_double(r.test_r2) + "," +
                  format_double(r.train_rmse) + "," + format_double(r.test_rmse) + "\n";
      }
    }
    textio::write_file(dir / "models.csv", models);
    // Top-level importance: the combined setting when present, else the first one.
    std::size_t pick = 0;
    for (std::size_t i = 0; i < red.settings.size(); ++i) {
      if (setting_of(red.table.settings[i].report) == "combined") pick = i;
    }
    textio::write_file(config.out / "importance.csv", importance_csv(red.settings[pick], cat));
    if (!red.ablation.empty()) {
      std::string s = "k,technique,test_r2,test_rmse\n";
      for (const auto& p : red.ablation) {
        s += std::to_string(p.k) + "," + p.setting + "," + format_double(p.test_r2) + "," + format_double(p.test_rmse) + "\n";
      }
      textio::write_file(config.out / "ablation.csv", s);
    }
  }

  json split_json = results.plan;
  json folds = json::object();
  for (const auto* e : {results.params_only ? &*results.params_only : nullptr, results.full ? &*results.full : nullptr}) {
    if (!e) continue;
    auto& per = folds[std::string(to_string(e->kind))];
    for (const auto& o : e->settings) {
      if (o.folds) per[setting_of(o.report)] = *o.folds;
    }
  }
  split_json["folds"] = folds;
  textio::write_file(config.out / "split.json", split_json.dump(1) + "\n");
  manifest["leakage_audit"] = audit;
  textio::write_file(config.out / "run_manifest.json", manifest.dump(2) + "\n");
}

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(textio::read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    for (auto f : textio::split(line)) fields.emplace_back(f);
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace

void rebuild_reports(const fs::path& out, bool svg) {
  if (!fs::is_directory(out)) throw IoError("results directory not found: " + out.string());
  bool any = false;
  for (auto kind : {ExperimentKind::params_only, ExperimentKind::full, ExperimentKind::reduced}) {
    const std::string name(to_string(kind));
    const fs::path csv = out / ("table_" + name + ".csv");
    if (!fs::exists(csv)) continue;
    any = true;
    const auto rows = read_csv(csv);
    std::vector<metrics::MetricsReport> reports;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.size() < 5) throw FormatError(csv.string() + ": row " + std::to_string(i + 1) + " is short");
      metrics::MetricsReport m;
      m.setting = r[0];
      m.train_r2 = textio::parse_double(r[1], csv.string());
      m.test_r2 = textio::parse_double(r[2], csv.string());
      m.train_rmse = textio::parse_double(r[3], csv.string());
      m.test_rmse = textio::parse_double(r[4], csv.string());
      reports.push_back(m);
    }
    textio::write_file(out / ("table_" + name + ".md"), markdown_rows(reports, title_for(kind)));
    if (!svg) continue;
    for (const auto& m : reports) {
      const std::string setting = setting_of(m);
      const fs::path sc = out / name / ("scatter_" + setting + ".csv");
      if (!fs::exists(sc)) continue;
      std::vector<ScatterPoint> points;
      const auto srows = read_csv(sc);
      for (std::size_t i = 1; i < srows.size(); ++i) {
        if (srows[i].size() < 3) throw FormatError(sc.string() + ": row " + std::to_string(i + 1) + " is short");
        points.push_back({srows[i][0], textio::parse_double(srows[i][1], sc.string()),
                          textio::parse_double(srows[i][2], sc.string())});
      }
      textio::write_file(out / name / ("scatter_" + setting + ".svg"), render_scatter_svg(points, name + " " + m.setting));
    }
  }
  if (!any) throw IoError("no table_*.csv files in " + out.string());
}

std::string render_scatter_svg(const std::vector<ScatterPoint>& points, const std::string& title) {
  constexpr double size = 400.0;
  constexpr double margin = 40.0;
  double lo = 0.0;
  double hi = 1.0;
  if (!points.empty()) {
    lo = hi = points.front().ground_truth;
    for (const auto& p : points) {
      lo = std::min({lo, p.ground_truth, p.prediction});
      hi = std::max({hi, p.ground_truth, p.prediction});
    }
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto px = [&](double v) { return margin + (v - lo) / (hi - lo) * (size - 2 * margin); };
  auto py = [&](double v) { return size - margin - (v - lo) / (hi - lo) * (size - 2 * margin); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" viewBox=\"0 0 400 400\">\n";
  s += "<rect width=\"400\" height=\"400\" fill=\"white\"/>\n";
  s += "<text x=\"200\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + title + "</text>\n";
  s += "<line x1=\"" + num(px(lo)) + "\" y1=\"" + num(py(lo)) + "\" x2=\"" + num(px(hi)) + "\" y2=\"" + num(py(hi)) +
       "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  s += "<rect x=\"" + num(margin) + "\" y=\"" + num(margin) + "\" width=\"" + num(size - 2 * margin) + "\" height=\"" +
       num(size - 2 * margin) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (const auto& p : points) {
    s += "<circle cx=\"" + num(px(p.ground_truth)) + "\" cy=\"" + num(py(p.prediction)) +
         "\" r=\"2.5\" fill=\"steelblue\" fill-opacity=\"0.7\"/>\n";
  }
  s += "<text x=\"200\" y=\"392\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">ground truth</text>\n";
  s += "<text x=\"12\" y=\"200\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" "
       "transform=\"rotate(-90 12 200)\">prediction</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace lasermon::pipeline
