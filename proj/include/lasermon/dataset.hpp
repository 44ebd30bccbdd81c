#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lasermon {

enum class Technique { milling, grinding, polishing, die_edm, wire_edm };

inline constexpr std::array<Technique, 5> kTechniques = {
    Technique::milling, Technique::grinding, Technique::polishing, Technique::die_edm, Technique::wire_edm};

std::string_view to_string(Technique t);
Technique parse_technique(std::string_view name);

enum class Channel { ir, acoustic, reflection, visible };

inline constexpr std::array<Channel, 4> kChannels = {Channel::ir, Channel::acoustic, Channel::reflection,
                                                     Channel::visible};

std::string_view to_string(Channel c);

struct LaserParameters {
  int pulses_per_burst = 1;
  double pulse_fluence = 1.0;  // J/cm^2
  double laser_power = 1.0;    // W
  int num_layers = 1;          // laser scans over the area

  bool operator==(const LaserParameters&) const = default;
};

struct LayerRecording {
  int layer_index = 0;
  std::vector<double> ir;
  std::vector<double> acoustic;
  std::vector<double> reflection;
  std::vector<double> visible;
  double sample_rate = 1.0;  // Hz

  const std::vector<double>& channel(Channel c) const;
  std::vector<double>& channel(Channel c);

  bool operator==(const LayerRecording&) const = default;
};

// One sub-experiment. Roughness values are in micrometres.
struct Sample {
  std::string experiment_id;
  int sample_id = 0;
  LaserParameters params;
  double initial_roughness = 0.0;
  double final_roughness = 0.0;
  std::vector<LayerRecording> layers;

  bool operator==(const Sample&) const = default;
};

// Identifies a sample across experiments.
struct SampleKey {
  std::string experiment_id;
  int sample_id = 0;

  std::string str() const { return experiment_id + "/" + std::to_string(sample_id); }
  auto operator<=>(const SampleKey&) const = default;
  bool operator==(const SampleKey&) const = default;
};

struct Experiment {
  std::string id;
  Technique technique = Technique::milling;
  std::vector<Sample> samples;

  bool operator==(const Experiment&) const = default;
};

// Coefficients of the planted generative model behind synthetic datasets.
struct GenerativeCoefficients {
  // Baseline roughness per technique, indexed like kTechniques.
  std::array<double, 5> baseline = {12.0, 6.0, 0.8, 4.0, 2.0};
  double initial_weight = 0.4;
  double energy_weight = 0.8;     // c1
  double energy_exponent = 0.6;
  double amplitude_weight = 1.5;  // c2
  double base_amplitude = 1.0;    // s0
  double quality_gain = 0.5;
};

struct SyntheticConfig {
  std::uint64_t seed = 42;
  int experiments_per_technique = 2;
  int samples_per_experiment = 99;
  int trace_length = 1024;
  double sample_rate = 100000.0;
  double noise_scale = 0.05;
  int min_layers = 8;
  int max_layers = 64;
  GenerativeCoefficients coefficients;
};

// Hidden quantities drawn while generating one sample, exposed for oracles.
struct SampleLatents {
  double quality = 0.0;    // q ~ N(0,1)
  double energy = 0.0;     // fluence * power / layers
  double amplitude = 0.0;  // IR sinusoid amplitude, carries q
  double noise = 0.0;      // additive roughness noise before flooring
  double phase = 0.0;
};

void validate(const Sample& sample);
void validate(const Experiment& experiment);

const LayerRecording& last_layer(const Sample& sample);

std::vector<Experiment> load_dataset(const std::filesystem::path& root);
void write_dataset(std::span<const Experiment> experiments, const std::filesystem::path& root);

// Synthetic generation. Experiments are technique-major: experiment e has
// technique kTechniques[e / experiments_per_technique].
std::size_t synthetic_experiment_count(const SyntheticConfig& config);
Technique synthetic_technique(const SyntheticConfig& config, std::size_t experiment_index);
std::string synthetic_experiment_id(std::size_t experiment_index);

// Laser parameters depend only on (seed, sample index): every experiment
// reuses the same parameter schedule.
LaserParameters synthetic_parameters(const SyntheticConfig& config, std::size_t sample_index);

// Final roughness before noise and flooring, as a function of the latent amplitude.
double planted_roughness(const GenerativeCoefficients& coefficients, const LaserParameters& params,
                         double initial_roughness, double amplitude);

Sample generate_sample(const SyntheticConfig& config, std::size_t experiment_index, std::size_t sample_index,
                       SampleLatents* latents = nullptr);

std::vector<Experiment> generate_synthetic(const SyntheticConfig& config, std::size_t threads = 1);

void validate(const SyntheticConfig& config);

}  // namespace lasermon
