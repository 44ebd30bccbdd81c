#include "lasermon/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <cstdio>
#include <utility>

#include <json.hpp>

#include "lasermon/error.hpp"
#include "lasermon/parallel.hpp"
#include "lasermon/rng.hpp"
#include "lasermon/textio.hpp"

namespace lasermon {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Technique t) {
  switch (t) {
    case Technique::milling: return "milling";
    case Technique::grinding: return "grinding";
    case Technique::polishing: return "polishing";
    case Technique::die_edm: return "die_edm";
    case Technique::wire_edm: return "wire_edm";
  }
  return "unknown";
}

Technique parse_technique(std::string_view name) {
  for (Technique t : kTechniques) {
    if (to_string(t) == name) return t;
  }
  throw ValidationError("unknown preprocessing technique '" + std::string(name) + "'");
}

std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::ir: return "ir";
    case Channel::acoustic: return "acoustic";
    case Channel::reflection: return "reflection";
    case Channel::visible: return "visible";
  }
  return "unknown";
}

const std::vector<double>& LayerRecording::channel(Channel c) const {
  switch (c) {
    case Channel::ir: return ir;
    case Channel::acoustic: return acoustic;
    case Channel::reflection: return reflection;
    case Channel::visible: return visible;
  }
  return ir;
}

std::vector<double>& LayerRecording::channel(Channel c) {
  return const_cast<std::vector<double>&>(std::as_const(*this).channel(c));
}

namespace {

std::string where(const Sample& s) {
  return "experiment " + s.experiment_id + ", sample " + std::to_string(s.sample_id);
}

}  // namespace

void validate(const Sample& sample) {
  const auto& p = sample.params;
  if (p.pulses_per_burst <= 0 || p.num_layers <= 0 || !(p.pulse_fluence > 0.0) || !(p.laser_power > 0.0) ||
      !std::isfinite(p.pulse_fluence) || !std::isfinite(p.laser_power)) {
    throw ValidationError(where(sample) + ": laser parameters must be finite and strictly positive");
  }
  for (double r : {sample.initial_roughness, sample.final_roughness}) {
    if (!std::isfinite(r) || r < 0.0) {
      throw ValidationError(where(sample) + ": roughness must be finite and non-negative");
    }
  }
  if (sample.layers.size() != static_cast<std::size_t>(p.num_layers)) {
    throw ValidationError(where(sample) + ": expected " + std::to_string(p.num_layers) + " layers, found " +
                          std::to_string(sample.layers.size()));
  }
  for (std::size_t i = 0; i < sample.layers.size(); ++i) {
    const auto& layer = sample.layers[i];
    std::string at = where(sample) + ", layer " + std::to_string(i);
    if (layer.layer_index != static_cast<int>(i)) {
      throw ValidationError(at + ": layer indices must be contiguous from 0");
    }
    if (!(layer.sample_rate > 0.0) || !std::isfinite(layer.sample_rate)) {
      throw ValidationError(at + ": sample_rate must be positive");
    }
    const std::size_t n = layer.ir.size();
    for (Channel c : kChannels) {
      const auto& values = layer.channel(c);
      if (values.size() != n) {
        throw ValidationError(at + ": channel " + std::string(to_string(c)) + " has length " +
                              std::to_string(values.size()) + ", expected " + std::to_string(n));
      }
      for (double v : values) {
        if (!std::isfinite(v)) {
          throw ValidationError(at + ": non-finite value in channel " + std::string(to_string(c)));
        }
      }
    }
    if (n < 8) throw ValidationError(at + ": traces need at least 8 points");
  }
}

void validate(const Experiment& experiment) {
  std::set<int> ids;
  for (const auto& s : experiment.samples) {
    if (s.experiment_id != experiment.id) {
      throw ValidationError("sample " + std::to_string(s.sample_id) + " claims experiment '" + s.experiment_id +
                            "' inside experiment '" + experiment.id + "'");
    }
    if (!ids.insert(s.sample_id).second) {
      throw ValidationError("experiment " + experiment.id + ": duplicate sample_id " + std::to_string(s.sample_id));
    }
    validate(s);
  }
}

const LayerRecording& last_layer(const Sample& sample) {
  if (sample.layers.empty()) throw ValidationError(where(sample) + ": sample has no layers");
  const auto& layer = sample.layers.back();
  if (layer.layer_index != sample.params.num_layers - 1) {
    throw ValidationError(where(sample) + ": last layer index does not match num_layers");
  }
  return layer;
}

// ---------------------------------------------------------------------------
// On-disk layout

namespace {

constexpr std::string_view kSamplesHeader =
    "sample_id,pulses_per_burst,pulse_fluence,laser_power,num_layers,initial_roughness,final_roughness";
constexpr std::string_view kSensorHeader = "layer,t,ir,acoustic,reflection,visible";

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) out.push_back(line);
    start = end + 1;
  }
  return out;
}

void write_sample(const Sample& s, const fs::path& sensors_dir) {
  using textio::format_double;
  std::string csv;
  csv.reserve(s.layers.size() * (s.layers.empty() ? 0 : s.layers[0].ir.size()) * 110 + 64);
  csv.append(kSensorHeader).push_back('\n');
  for (const auto& layer : s.layers) {
    for (std::size_t t = 0; t < layer.ir.size(); ++t) {
      csv += std::to_string(layer.layer_index);
      csv += ',';
      csv += std::to_string(t);
      for (Channel c : kChannels) {
        csv += ',';
        csv += format_double(layer.channel(c)[t]);
      }
      csv += '\n';
    }
  }
  const std::string stem = std::to_string(s.sample_id);
  textio::write_file(sensors_dir / (stem + ".csv"), csv);

  json meta;
  meta["sample_rate"] = s.layers.empty() ? 0.0 : s.layers.front().sample_rate;
  meta["trace_length"] = s.layers.empty() ? 0 : s.layers.front().ir.size();
  textio::write_file(sensors_dir / (stem + ".meta.json"), meta.dump(2) + "\n");
}

Sample read_sample_row(std::string_view line, const std::string& experiment_id, const fs::path& file) {
  auto f = textio::split(line);
  const std::string ctx = file.string();
  if (f.size() != 7) throw FormatError(ctx + ": expected 7 fields, got " + std::to_string(f.size()));
  Sample s;
  s.experiment_id = experiment_id;
  s.sample_id = static_cast<int>(textio::parse_int(f[0], ctx));
  s.params.pulses_per_burst = static_cast<int>(textio::parse_int(f[1], ctx));
  s.params.pulse_fluence = textio::parse_double(f[2], ctx);
  s.params.laser_power = textio::parse_double(f[3], ctx);
  s.params.num_layers = static_cast<int>(textio::parse_int(f[4], ctx));
  s.initial_roughness = textio::parse_double(f[5], ctx);
  s.final_roughness = textio::parse_double(f[6], ctx);
  return s;
}

// An empty field marks a missing value; channels may therefore end up with
// different lengths, which validate() reports.
void read_sensors(Sample& s, const fs::path& sensors_dir) {
  const std::string stem = std::to_string(s.sample_id);
  const fs::path meta_path = sensors_dir / (stem + ".meta.json");
  const fs::path csv_path = sensors_dir / (stem + ".csv");
  if (!fs::exists(meta_path)) throw FormatError("missing sensor metadata " + meta_path.string());
  if (!fs::exists(csv_path)) throw FormatError("missing sensor file " + csv_path.string());

  json meta;
  try {
    meta = json::parse(textio::read_file(meta_path));
  } catch (const json::exception& e) {
    throw FormatError(meta_path.string() + ": " + e.what());
  }
  const double sample_rate = meta.value("sample_rate", 0.0);

  const std::string text = textio::read_file(csv_path);
  auto lines = lines_of(text);
  if (lines.empty() || lines.front() != kSensorHeader) {
    throw FormatError(csv_path.string() + ": bad or missing header");
  }
  const std::string ctx = csv_path.string();
  s.layers.clear();
  for (std::size_t li = 1; li < lines.size(); ++li) {
    auto f = textio::split(lines[li]);
    if (f.size() != 6) throw FormatError(ctx + ": line " + std::to_string(li + 1) + " needs 6 fields");
    const long long layer = textio::parse_int(f[0], ctx);
    if (layer < 0) throw FormatError(ctx + ": negative layer index");
    if (static_cast<std::size_t>(layer) >= s.layers.size()) {
      if (static_cast<std::size_t>(layer) != s.layers.size()) {
        throw ValidationError("experiment " + s.experiment_id + ", sample " + std::to_string(s.sample_id) +
                              ": layer " + std::to_string(layer) + " out of order");
      }
      LayerRecording rec;
      rec.layer_index = static_cast<int>(layer);
      rec.sample_rate = sample_rate;
      s.layers.push_back(std::move(rec));
    }
    auto& rec = s.layers[static_cast<std::size_t>(layer)];
    for (std::size_t c = 0; c < kChannels.size(); ++c) {
      if (f[2 + c].empty()) continue;
      rec.channel(kChannels[c]).push_back(textio::parse_double(f[2 + c], ctx));
    }
  }
}

}  // namespace

std::vector<Experiment> load_dataset(const fs::path& root) {
  const fs::path manifest_path = root / "manifest.json";
  if (!fs::exists(manifest_path)) throw FormatError("no manifest.json under " + root.string());
  json manifest;
  try {
    manifest = json::parse(textio::read_file(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (!manifest.is_array()) throw FormatError(manifest_path.string() + ": expected a list of experiments");

  std::vector<Experiment> experiments;
  for (const auto& entry : manifest) {
    Experiment exp;
    try {
      exp.id = entry.at("experiment_id").get<std::string>();
      exp.technique = parse_technique(entry.at("technique").get<std::string>());
    } catch (const json::exception& e) {
      throw FormatError(manifest_path.string() + ": " + e.what());
    }
    const std::size_t expected = entry.value("num_samples", std::size_t{0});

    const fs::path dir = root / exp.id;
    const fs::path samples_path = dir / "samples.csv";
    if (!fs::exists(samples_path)) throw FormatError("missing " + samples_path.string());
    const std::string text = textio::read_file(samples_path);
    auto lines = lines_of(text);
    if (lines.empty() || lines.front() != kSamplesHeader) {
      throw FormatError(samples_path.string() + ": bad or missing header");
    }
    for (std::size_t li = 1; li < lines.size(); ++li) {
      exp.samples.push_back(read_sample_row(lines[li], exp.id, samples_path));
    }
    if (exp.samples.size() != expected) {
      throw FormatError(samples_path.string() + ": manifest lists " + std::to_string(expected) + " samples, found " +
                        std::to_string(exp.samples.size()));
    }
    for (auto& s : exp.samples) read_sensors(s, dir / "sensors");
    validate(exp);
    experiments.push_back(std::move(exp));
  }
  return experiments;
}

void write_dataset(std::span<const Experiment> experiments, const fs::path& root) {
  textio::ensure_directory(root);
  json manifest = json::array();
  for (const auto& exp : experiments) {
    manifest.push_back({{"experiment_id", exp.id},
                        {"technique", std::string(to_string(exp.technique))},
                        {"num_samples", exp.samples.size()}});
    const fs::path dir = root / exp.id;
    textio::ensure_directory(dir / "sensors");
    std::string csv(kSamplesHeader);
    csv += '\n';
    for (const auto& s : exp.samples) {
      csv += std::to_string(s.sample_id) + ',' + std::to_string(s.params.pulses_per_burst) + ',' +
             textio::format_double(s.params.pulse_fluence) + ',' + textio::format_double(s.params.laser_power) + ',' +
             std::to_string(s.params.num_layers) + ',' + textio::format_double(s.initial_roughness) + ',' +
             textio::format_double(s.final_roughness) + '\n';
      write_sample(s, dir / "sensors");
    }
    textio::write_file(dir / "samples.csv", csv);
  }
  textio::write_file(root / "manifest.json", manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Synthetic generator

void validate(const SyntheticConfig& c) {
  if (c.experiments_per_technique < 1 || c.samples_per_experiment < 1) {
    throw ValidationError("synthetic config: experiment and sample counts must be positive");
  }
  if (c.trace_length < 8) throw ValidationError("synthetic config: trace_length must be at least 8");
  if (!(c.sample_rate > 0.0)) throw ValidationError("synthetic config: sample_rate must be positive");
  if (!(c.noise_scale >= 0.0)) throw ValidationError("synthetic config: noise_scale must be non-negative");
  if (c.min_layers < 1 || c.max_layers < c.min_layers) {
    throw ValidationError("synthetic config: need 1 <= min_layers <= max_layers");
  }
}

std::size_t synthetic_experiment_count(const SyntheticConfig& config) {
  return static_cast<std::size_t>(config.experiments_per_technique) * kTechniques.size();
}

Technique synthetic_technique(const SyntheticConfig& config, std::size_t experiment_index) {
  return kTechniques.at(experiment_index / static_cast<std::size_t>(config.experiments_per_technique));
}

std::string synthetic_experiment_id(std::size_t experiment_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "exp%03zu", experiment_index);
  return buf;
}

LaserParameters synthetic_parameters(const SyntheticConfig& config, std::size_t sample_index) {
  static constexpr std::array<int, 4> kBurst = {1, 2, 4, 8};
  Engine eng = make_engine(config.seed, {0, sample_index});
  LaserParameters p;
  p.pulses_per_burst = kBurst[uniform_int<std::size_t>(eng, 0, kBurst.size() - 1)];
  p.pulse_fluence = uniform(eng, 0.5, 5.0);
  p.laser_power = uniform(eng, 5.0, 50.0);
  p.num_layers = uniform_int<int>(eng, config.min_layers, config.max_layers);
  return p;
}

double planted_roughness(const GenerativeCoefficients& k, const LaserParameters& p, double initial_roughness,
                         double amplitude) {
  const double energy = p.pulse_fluence * p.laser_power / p.num_layers;
  return k.initial_weight * initial_roughness + k.energy_weight * std::pow(energy, k.energy_exponent) +
         k.amplitude_weight * amplitude;
}

Sample generate_sample(const SyntheticConfig& config, std::size_t experiment_index, std::size_t sample_index,
                       SampleLatents* latents) {
  const auto& k = config.coefficients;
  const Technique technique = synthetic_technique(config, experiment_index);
  const double baseline = k.baseline[static_cast<std::size_t>(technique)];

  Sample s;
  s.experiment_id = synthetic_experiment_id(experiment_index);
  s.sample_id = static_cast<int>(sample_index);
  s.params = synthetic_parameters(config, sample_index);

  Engine eng = make_engine(config.seed, {1, experiment_index, sample_index});
  const double u = uniform(eng, -1.0, 1.0);
  s.initial_roughness = std::max(0.05, baseline * (1.0 + 0.2 * u));

  SampleLatents lat;
  lat.quality = normal(eng);
  lat.energy = s.params.pulse_fluence * s.params.laser_power / s.params.num_layers;
  lat.amplitude = std::max(0.0, k.base_amplitude * (1.0 + k.quality_gain * lat.quality));
  lat.noise = config.noise_scale * baseline * normal(eng);
  lat.phase = uniform(eng, 0.0, 2.0 * std::numbers::pi);
  s.final_roughness =
      std::max(0.01, planted_roughness(k, s.params, s.initial_roughness, lat.amplitude) + lat.noise);

  const std::size_t n = static_cast<std::size_t>(config.trace_length);
  const double nd = static_cast<double>(n);
  LayerRecording last;
  last.layer_index = s.params.num_layers - 1;
  last.sample_rate = config.sample_rate;
  last.ir.resize(n);
  last.acoustic.resize(n);
  last.reflection.resize(n);
  last.visible.resize(n);

  // IR: sinusoid at fs/16 whose amplitude carries the latent quality.
  for (std::size_t t = 0; t < n; ++t) {
    const double arg = 2.0 * std::numbers::pi * static_cast<double>(t) / 16.0 + lat.phase;
    last.ir[t] = lat.amplitude * std::sin(arg) + 0.2 * lat.energy * normal(eng);
  }
  // Acoustic: one exponentially decaying burst per pulse.
  const int bursts = s.params.pulses_per_burst;
  const double period = nd / bursts;
  const double tau = period / 8.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double td = static_cast<double>(t);
    const double start = std::floor(td / period) * period;
    last.acoustic[t] = std::exp(-(td - start) / tau) + normal(eng, 0.0, 0.05);
  }
  for (std::size_t t = 0; t < n; ++t) {
    last.reflection[t] = 0.1 * s.params.pulse_fluence + normal(eng, 0.0, 0.05);
  }
  for (std::size_t t = 0; t < n; ++t) {
    last.visible[t] = normal(eng, 0.0, 0.1) + 0.05 * static_cast<double>(t) / nd;
  }

  // Earlier layers are attenuated copies of the final one.
  const int layers = s.params.num_layers;
  s.layers.reserve(static_cast<std::size_t>(layers));
  for (int l = 0; l + 1 < layers; ++l) {
    LayerRecording rec = last;
    rec.layer_index = l;
    const double factor = static_cast<double>(l) / layers;
    for (Channel c : kChannels) {
      for (double& v : rec.channel(c)) v *= factor;
    }
    s.layers.push_back(std::move(rec));
  }
  s.layers.push_back(std::move(last));

  if (latents) *latents = lat;
  return s;
}

std::vector<Experiment> generate_synthetic(const SyntheticConfig& config, std::size_t threads) {
  validate(config);
  const std::size_t n_exp = synthetic_experiment_count(config);
  const std::size_t n_samples = static_cast<std::size_t>(config.samples_per_experiment);
  std::vector<Experiment> out(n_exp);
  for (std::size_t e = 0; e < n_exp; ++e) {
    out[e].id = synthetic_experiment_id(e);
    out[e].technique = synthetic_technique(config, e);
    out[e].samples.resize(n_samples);
  }
  parallel_for(n_exp * n_samples, threads, [&](std::size_t i) {
    const std::size_t e = i / n_samples;
    const std::size_t s = i % n_samples;
    out[e].samples[s] = generate_sample(config, e, s);
  });
  return out;
}

}  // namespace lasermon
