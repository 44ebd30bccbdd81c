#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "lasermon/dataset.hpp"
#include "lasermon/error.hpp"
#include "lasermon/textio.hpp"
#include "oracles.hpp"

using namespace lasermon;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("lasermon_test_" + name);
  fs::remove_all(p);
  return p;
}

SyntheticConfig small_config(std::uint64_t seed) {
  SyntheticConfig c;
  c.seed = seed;
  c.experiments_per_technique = 1;
  c.samples_per_experiment = 4;
  c.trace_length = 32;
  c.min_layers = 3;
  c.max_layers = 6;
  return c;
}

Sample hand_sample(int layers) {
  Sample s;
  s.experiment_id = "e";
  s.sample_id = 0;
  s.params = {1, 1.0, 1.0, layers};
  s.initial_roughness = 1.0;
  s.final_roughness = 0.5;
  for (int l = 0; l < layers; ++l) {
    LayerRecording r;
    r.layer_index = l;
    r.sample_rate = 10.0;
    for (Channel c : kChannels) r.channel(c).assign(8, static_cast<double>(l));
    s.layers.push_back(r);
  }
  return s;
}

}  // namespace

TEST_CASE("technique names round-trip") {
  for (Technique t : kTechniques) CHECK(parse_technique(to_string(t)) == t);
  CHECK_THROWS_AS(parse_technique("lapping"), ValidationError);
}

TEST_CASE("synthetic structure: seed 42, one experiment per technique, 99 samples") {
  SyntheticConfig c;
  c.seed = 42;
  c.experiments_per_technique = 1;
  c.samples_per_experiment = 99;
  c.trace_length = 64;
  const auto data = generate_synthetic(c);
  REQUIRE(data.size() == 5);
  std::size_t total = 0;
  std::set<Technique> techniques;
  for (const auto& e : data) {
    techniques.insert(e.technique);
    total += e.samples.size();
    CHECK_NOTHROW(validate(e));
    for (const auto& s : e.samples) {
      CHECK(s.layers.size() == static_cast<std::size_t>(s.params.num_layers));
      for (const auto& l : s.layers) {
        for (Channel ch : kChannels) CHECK(l.channel(ch).size() == 64);
      }
      CHECK(s.params.num_layers >= 8);
      CHECK(s.params.num_layers <= 64);
      CHECK(s.final_roughness >= 0.01);
    }
  }
  CHECK(total == 495);
  CHECK(techniques.size() == 5);
}

TEST_CASE("generation is a pure function of the config") {
  const auto a = generate_synthetic(small_config(11));
  const auto b = generate_synthetic(small_config(11));
  CHECK(a == b);
  const auto c = generate_synthetic(small_config(11), 3);
  CHECK(a == c);
  const auto d = generate_synthetic(small_config(12));
  CHECK_FALSE(a == d);
}

TEST_CASE("write then load reproduces every value") {
  const auto dir = scratch_dir("roundtrip");
  const auto data = generate_synthetic(small_config(7));
  write_dataset(data, dir);
  const auto back = load_dataset(dir);
  CHECK(back == data);
  fs::remove_all(dir);
}

TEST_CASE("empty dataset writes a valid empty manifest") {
  const auto dir = scratch_dir("empty_manifest");
  write_dataset({}, dir);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(load_dataset(dir).empty());
  fs::remove_all(dir);
}

TEST_CASE("missing manifest is a format error") {
  const auto dir = scratch_dir("no_manifest");
  fs::create_directories(dir);
  CHECK_THROWS_AS(load_dataset(dir), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("unwritable destination raises an I/O error") {
  const auto dir = scratch_dir("unwritable");
  fs::create_directories(dir);
  textio::write_file(dir / "blocker", "x");
  const auto data = generate_synthetic(small_config(7));
  CHECK_THROWS_AS(write_dataset(data, dir / "blocker" / "inside"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("a truncated acoustic channel is reported with its layer") {
  const auto dir = scratch_dir("truncated");
  auto data = generate_synthetic(small_config(7));
  write_dataset(data, dir);
  const auto& victim = data[0].samples[1];
  const fs::path csv = dir / victim.experiment_id / "sensors" / (std::to_string(victim.sample_id) + ".csv");
  const std::string target_layer = "2";
  REQUIRE(victim.params.num_layers > 2);

  // Blank the acoustic field of the last row belonging to layer 2.
  std::string text = textio::read_file(csv);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  std::size_t last = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].rfind(target_layer + ",", 0) == 0) last = i;
  }
  REQUIRE(last > 0);
  auto fields = textio::split(lines[last]);
  lines[last] = std::string(fields[0]) + "," + std::string(fields[1]) + "," + std::string(fields[2]) + ",," +
                std::string(fields[4]) + "," + std::string(fields[5]);
  std::string rewritten;
  for (const auto& l : lines) rewritten += l + "\n";
  textio::write_file(csv, rewritten);

  try {
    load_dataset(dir);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("layer 2") != std::string::npos);
    CHECK(msg.find("acoustic") != std::string::npos);
    CHECK(msg.find(victim.experiment_id) != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("sample validation") {
  auto s = hand_sample(3);
  CHECK_NOTHROW(validate(s));
  s.layers[1].visible.pop_back();
  CHECK_THROWS_AS(validate(s), ValidationError);
  s = hand_sample(3);
  s.layers[2].ir[0] = std::nan("");
  CHECK_THROWS_AS(validate(s), ValidationError);
  s = hand_sample(3);
  s.params.num_layers = 4;
  CHECK_THROWS_AS(validate(s), ValidationError);
  s = hand_sample(3);
  s.final_roughness = -1.0;
  CHECK_THROWS_AS(validate(s), ValidationError);
}

TEST_CASE("last_layer") {
  CHECK(last_layer(hand_sample(5)).layer_index == 4);
  CHECK(last_layer(hand_sample(1)).layer_index == 0);
  Sample empty = hand_sample(1);
  empty.layers.clear();
  CHECK_THROWS_AS(last_layer(empty), ValidationError);
}

TEST_CASE("last_layer returns the generator's final emission verbatim") {
  auto c = small_config(7);
  const Sample s = generate_sample(c, 0, 0);
  const auto& last = last_layer(s);
  const int n_layers = s.params.num_layers;
  CHECK(last.layer_index == n_layers - 1);
  // Every earlier layer is the final one scaled by l / num_layers.
  for (int l = 0; l + 1 < n_layers; ++l) {
    const double f = static_cast<double>(l) / n_layers;
    for (Channel ch : kChannels) {
      const auto& a = s.layers[static_cast<std::size_t>(l)].channel(ch);
      const auto& b = last.channel(ch);
      for (std::size_t t = 0; t < a.size(); ++t) CHECK(a[t] == b[t] * f);
    }
  }
}

TEST_CASE("noise-free roughness is the closed-form planted model") {
  SyntheticConfig c;
  c.seed = 42;
  c.experiments_per_technique = 1;
  c.samples_per_experiment = 99;
  c.trace_length = 16;
  c.noise_scale = 0.0;
  std::vector<double> truth, formula;
  for (std::size_t e = 0; e < 5; ++e) {
    for (std::size_t i = 0; i < 99; ++i) {
      SampleLatents lat;
      const Sample s = generate_sample(c, e, i, &lat);
      const double energy = s.params.pulse_fluence * s.params.laser_power / s.params.num_layers;
      const double a = std::max(0.0, 1.0 * (1.0 + 0.5 * lat.quality));
      const double expected = std::max(0.01, 0.4 * s.initial_roughness + 0.8 * std::pow(energy, 0.6) + 1.5 * a);
      truth.push_back(s.final_roughness);
      formula.push_back(expected);
    }
  }
  double ss_res = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) ss_res += (truth[i] - formula[i]) * (truth[i] - formula[i]);
  const double r2 = 1.0 - ss_res / (oracle::variance(truth) * static_cast<double>(truth.size()));
  CHECK(r2 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("information planting: parameters alone cannot explain the latent quality") {
  SyntheticConfig c;
  c.seed = 42;
  c.experiments_per_technique = 1;
  c.samples_per_experiment = 99;
  c.trace_length = 16;
  c.noise_scale = 0.0;
  std::vector<std::vector<double>> x_params, x_full;
  std::vector<double> y, planted;
  for (std::size_t e = 0; e < 5; ++e) {
    for (std::size_t i = 0; i < 99; ++i) {
      SampleLatents lat;
      const Sample s = generate_sample(c, e, i, &lat);
      const auto& p = s.params;
      std::vector<double> row = {1.0, static_cast<double>(p.pulses_per_burst), p.pulse_fluence, p.laser_power,
                                 static_cast<double>(p.num_layers), s.initial_roughness, std::pow(lat.energy, 0.6)};
      x_params.push_back(row);
      row.push_back(lat.amplitude);
      x_full.push_back(row);
      y.push_back(s.final_roughness);
      planted.push_back(1.5 * lat.amplitude);
    }
  }
  const double planted_var = oracle::variance(planted);
  const auto res_params = oracle::residuals(x_params, y, oracle::least_squares(x_params, y));
  const auto res_full = oracle::residuals(x_full, y, oracle::least_squares(x_full, y));
  // In-sample least squares absorbs the sample correlation between q and the
  // regressors, so the bound carries a small allowance.
  CHECK(oracle::variance(res_params) >= 0.95 * planted_var);
  CHECK(oracle::variance(res_full) <= 1e-12 * oracle::variance(y));
}

TEST_CASE("laser parameters follow the documented ranges") {
  SyntheticConfig c;
  for (std::size_t i = 0; i < 500; ++i) {
    const auto p = synthetic_parameters(c, i);
    CHECK((p.pulses_per_burst == 1 || p.pulses_per_burst == 2 || p.pulses_per_burst == 4 || p.pulses_per_burst == 8));
    CHECK(p.pulse_fluence >= 0.5);
    CHECK(p.pulse_fluence <= 5.0);
    CHECK(p.laser_power >= 5.0);
    CHECK(p.laser_power <= 50.0);
    CHECK(p.num_layers >= 8);
    CHECK(p.num_layers <= 64);
  }
}

TEST_CASE("invalid synthetic configs are rejected") {
  SyntheticConfig c;
  c.trace_length = 4;
  CHECK_THROWS_AS(generate_synthetic(c), ValidationError);
  c = SyntheticConfig{};
  c.noise_scale = -1.0;
  CHECK_THROWS_AS(generate_synthetic(c), ValidationError);
  c = SyntheticConfig{};
  c.min_layers = 10;
  c.max_layers = 5;
  CHECK_THROWS_AS(generate_synthetic(c), ValidationError);
}
