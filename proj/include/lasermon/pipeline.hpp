#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lasermon/attribution.hpp"
#include "lasermon/dataset.hpp"
#include "lasermon/features.hpp"
#include "lasermon/forest.hpp"
#include "lasermon/hpo.hpp"
#include "lasermon/metrics.hpp"
#include "lasermon/mlp.hpp"
#include "lasermon/preprocess.hpp"

namespace lasermon::pipeline {

inline constexpr int kFormatVersion = 1;
inline constexpr std::string_view kToolVersion = "1.0.0";

// milling, grinding, polishing, die_edm, wire_edm, combined.
const std::vector<std::string>& all_settings();

// "(a) milling" ... "(f) combined".
std::string setting_label(const std::string& setting);

enum class ExperimentKind { params_only, full, reduced };
std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_experiment(std::string_view name);

mlp::TrainConfig default_train_config();

struct MlpSettings {
  std::vector<std::size_t> hidden_widths = {32};
  mlp::Activation activation = mlp::Activation::relu;
  mlp::TrainConfig train = default_train_config();
};

struct HpoSettings {
  bool enabled = false;
  std::size_t trials = 100;
  hpo::TpeConfig tpe;
  std::size_t max_epochs = 200;  // per CV fit
  std::optional<hpo::SearchSpace> space;  // default_mlp_space() when empty
};

struct AttributionSettings {
  std::size_t background_rows = 100;
  std::size_t permutations = 2000;
  std::size_t max_explained_rows = 0;  // 0: every test row of the setting
};

struct RunConfig {
  std::optional<std::filesystem::path> dataset;  // synthetic data when empty
  SyntheticConfig synthetic;
  std::vector<std::string> settings = all_settings();
  std::uint64_t seed = 42;  // split, folds, training, attribution, forests
  double train_ratio = 0.8;
  std::size_t folds = 4;
  std::size_t bands = kDefaultBands;
  MlpSettings mlp;
  HpoSettings hpo;
  bool shared_arch = false;  // one architecture for all settings of an experiment
  AttributionSettings attribution;
  std::size_t top_k = 20;
  std::vector<std::size_t> ablation_ks;
  std::size_t n_trees = 100;
  std::size_t threads = 1;
  bool svg = false;
  std::filesystem::path out = "results";

  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);

// Rows of the feature table reserved for one setting.
struct SettingRows {
  std::string setting;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct Prepared {
  FeatureTable table;
  SplitPlan plan;
  std::vector<SettingRows> settings;  // same order as RunConfig::settings
};

// Loads or generates the data, extracts features and applies the split.
Prepared prepare(const RunConfig& config);

struct ScatterPoint {
  std::string sample_id;
  double ground_truth = 0.0;
  double prediction = 0.0;
};

// Fingerprints of the rows each stage read, for the leakage audit.
struct StageRows {
  std::string stage;
  std::string checksum;
  std::size_t rows = 0;
  bool within_train = true;
};

struct SettingOutcome {
  metrics::MetricsReport report;
  std::vector<ScatterPoint> scatter;
  std::vector<StageRows> audit;
  std::optional<mlp::Model> model;
  std::optional<FoldPlan> folds;
  std::vector<std::size_t> architecture;  // hidden widths used
  std::vector<hpo::Trial> hpo_history;
};

struct ExperimentOutcome {
  ExperimentKind kind = ExperimentKind::params_only;
  std::vector<SettingOutcome> settings;
};

ExperimentOutcome run_params_only(const RunConfig& config, const Prepared& data);
ExperimentOutcome run_full(const RunConfig& config, const Prepared& data);

struct ReducedSetting {
  attribution::GlobalImportance importance;  // over the sensor block
  std::vector<double> mean_phi;  // signed, sensor block, target units
  std::vector<std::size_t> selected;  // sensor columns, catalog order
  std::map<std::string, metrics::MetricsReport> models;  // decision_tree, random_forest, extra_trees
};

struct ReducedOutcome {
  ExperimentOutcome table;  // extra trees rows
  std::vector<ReducedSetting> settings;
  std::vector<attribution::AblationPoint> ablation;
};

// Ranks sensor features by Shapley importance under each setting's full
// model, keeps top_k, and retrains the three tree models.
ReducedOutcome run_reduced(const RunConfig& config, const Prepared& data, const ExperimentOutcome& full);

// Extra trees on parameters plus the top-k sensor features of one setting.
metrics::MetricsReport reduced_extra_trees(const RunConfig& config, const Prepared& data, std::size_t setting_index,
                                           const std::vector<std::size_t>& ranking, std::size_t k);

struct RunResults {
  std::optional<ExperimentOutcome> params_only;
  std::optional<ExperimentOutcome> full;
  std::optional<ReducedOutcome> reduced;
  SplitPlan plan;
  std::size_t bands = kDefaultBands;
};

RunResults run(const RunConfig& config, const std::vector<ExperimentKind>& experiments);

// Writes tables, scatter data, importance, ablation, split and manifest files.
void emit_reports(const RunResults& results, const RunConfig& config);

// Rebuilds the Markdown tables (and SVG scatter plots) from the CSV outputs.
void rebuild_reports(const std::filesystem::path& out, bool svg);

std::string render_scatter_svg(const std::vector<ScatterPoint>& points, const std::string& title);

std::string table_csv(const ExperimentOutcome& outcome);
std::string table_markdown(const ExperimentOutcome& outcome, const std::string& title);

}  // namespace lasermon::pipeline
