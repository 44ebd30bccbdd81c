#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lasermon/dataset.hpp"
#include "lasermon/error.hpp"
#include "lasermon/features.hpp"
#include "lasermon/pipeline.hpp"
#include "lasermon/textio.hpp"

namespace {

namespace lm = lasermon;
namespace pl = lasermon::pipeline;

enum Exit { kOk = 0, kOther = 1, kValidation = 2, kDiverged = 3, kIo = 4 };

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
  std::string dataset;
  std::vector<std::string> settings;
  std::optional<std::size_t> top_k;
  std::optional<std::size_t> permutations;
  std::optional<std::size_t> hpo_trials;
  std::string space;
  bool hpo = false;
  bool shared_arch = false;
  bool svg = false;
};

pl::RunConfig load_config(const GlobalOptions& g) {
  pl::RunConfig c;
  if (!g.config.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lm::textio::read_file(g.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw lm::FormatError(g.config + ": " + e.what());
    }
    c = pl::config_from_json(j);
  }
  if (g.seed) {
    c.seed = *g.seed;
    c.synthetic.seed = *g.seed;
  }
  if (!g.out.empty()) c.out = g.out;
  if (g.threads) c.threads = *g.threads;
  if (!g.dataset.empty()) c.dataset = g.dataset;
  if (!g.settings.empty()) c.settings = g.settings;
  if (g.top_k) c.top_k = *g.top_k;
  if (g.permutations) c.attribution.permutations = *g.permutations;
  if (g.hpo) c.hpo.enabled = true;
  if (g.hpo_trials) c.hpo.trials = *g.hpo_trials;
  if (!g.space.empty()) {
    try {
      c.hpo.space = lm::hpo::space_from_json(nlohmann::json::parse(lm::textio::read_file(g.space)));
    } catch (const nlohmann::json::parse_error& e) {
      throw lm::FormatError(g.space + ": " + e.what());
    }
  }
  if (g.shared_arch) c.shared_arch = true;
  if (g.svg) c.svg = true;
  c.validate();
  return c;
}

std::vector<pl::ExperimentKind> experiments_for(const std::string& which) {
  using K = pl::ExperimentKind;
  if (which == "all") return {K::params_only, K::full, K::reduced};
  return {pl::parse_experiment(which)};
}

void print_table(const pl::ExperimentOutcome& e) {
  std::cout << pl::table_markdown(e, std::string(pl::to_string(e.kind))) << "\n";
}

void print_results(const pl::RunResults& r) {
  if (r.params_only) print_table(*r.params_only);
  if (r.full) print_table(*r.full);
  if (r.reduced) print_table(r.reduced->table);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surface-roughness prediction from laser parameters and photodiode emissions"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "Run configuration JSON (e.g. a previous run_manifest.json)");
  app.add_option("--seed", g.seed, "Seed for data generation, splitting and training");
  app.add_option("--out", g.out, "Output directory (or file for extract)");
  app.add_option("--threads", g.threads, "Worker threads");
  app.add_option("--dataset", g.dataset, "Dataset directory; synthetic data when omitted");

  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset");
  auto* extract = app.add_subcommand("extract", "Write the feature matrix CSV");

  auto* run = app.add_subcommand("run", "Run experiments and write reports");
  std::string which = "all";
  run->add_option("experiment", which, "params-only | full | reduced | all")
      ->check(CLI::IsMember({"params-only", "params_only", "full", "reduced", "all"}));
  for (auto* sub : {run, app.add_subcommand("ablate", "Retrain extra trees on the top-k sensor features")}) {
    sub->add_option("--settings", g.settings, "Subset of milling,grinding,polishing,die_edm,wire_edm,combined")
        ->delimiter(',');
    sub->add_option("--top-k", g.top_k, "Sensor features kept for the reduced models");
    sub->add_option("--permutations", g.permutations, "Shapley permutations per explained row");
    sub->add_flag("--hpo", g.hpo, "Tune each network with a TPE study");
    sub->add_option("--n-trials", g.hpo_trials, "Trials per study");
    sub->add_option("--space", g.space, "Search space JSON");
    sub->add_flag("--shared-arch", g.shared_arch, "One tuned architecture for every setting");
    sub->add_flag("--svg", g.svg, "Also draw scatter plots as SVG");
  }
  auto* ablate = app.get_subcommand("ablate");
  std::vector<std::size_t> ks;
  ablate->add_option("--k", ks, "Comma-separated k values")->delimiter(',')->required();

  auto* report = app.add_subcommand("report", "Rebuild Markdown tables (and SVG plots) from CSV outputs");
  report->add_flag("--svg", g.svg, "Also draw scatter plots as SVG");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      auto c = load_config(g);
      if (g.out.empty()) throw lm::ValidationError("generate needs --out");
      lm::write_dataset(lm::generate_synthetic(c.synthetic, c.threads), c.out);
      std::cout << "wrote " << lm::synthetic_experiment_count(c.synthetic) << " experiments to " << c.out << "\n";
    } else if (extract->parsed()) {
      auto c = load_config(g);
      if (g.out.empty()) throw lm::ValidationError("extract needs --out <file.csv>");
      const auto table = c.dataset ? lm::build_feature_table(lm::load_dataset(*c.dataset), c.bands, c.threads)
                                   : lm::build_feature_table(c.synthetic, c.bands, c.threads);
      lm::write_feature_matrix(table, g.out);
      std::cout << "wrote " << table.rows() << " rows x " << table.params.cols() + table.sensors.cols()
                << " inputs to " << g.out << "\n";
    } else if (run->parsed()) {
      auto c = load_config(g);
      const auto results = pl::run(c, experiments_for(which));
      pl::emit_reports(results, c);
      print_results(results);
    } else if (ablate->parsed()) {
      auto c = load_config(g);
      c.ablation_ks = ks;
      c.validate();
      const auto results = pl::run(c, {pl::ExperimentKind::reduced});
      pl::emit_reports(results, c);
      print_results(results);
    } else if (report->parsed()) {
      pl::rebuild_reports(g.out.empty() ? "results" : g.out, g.svg);
    }
  } catch (const lm::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const lm::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const lm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOk;
}
