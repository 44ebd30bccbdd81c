#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lasermon/dataset.hpp"
#include "lasermon/linalg.hpp"

namespace lasermon {

enum class FeatureDomain { temporal, statistical, spectral };

std::string_view to_string(FeatureDomain d);

struct FeatureDescriptor {
  std::string name;  // e.g. "ir.spectral.centroid", "acoustic.stat.hist_bin_03"
  FeatureDomain domain = FeatureDomain::temporal;
  Channel channel = Channel::ir;
  std::size_t index = 0;
};

inline constexpr std::size_t kTemporalFeatureCount = 14;
inline constexpr std::size_t kStatisticalFeatureCount = 40;
inline constexpr std::size_t kSpectralScalarCount = 15;
inline constexpr std::size_t kDefaultBands = 160;

constexpr std::size_t spectral_feature_count(std::size_t bands) { return kSpectralScalarCount + 2 * bands; }
constexpr std::size_t per_channel_feature_count(std::size_t bands) {
  return kTemporalFeatureCount + kStatisticalFeatureCount + spectral_feature_count(bands);
}
constexpr std::size_t sample_feature_count(std::size_t bands) { return 4 * per_channel_feature_count(bands); }

// Per-domain extractors. Ratio-form features return 0 whenever their
// denominator is 0 so outputs are always finite for finite input.
std::vector<double> temporal_features(std::span<const double> trace);
std::vector<double> statistical_features(std::span<const double> trace);
std::vector<double> spectral_features(std::span<const double> trace, double sample_rate,
                                      std::size_t bands = kDefaultBands);

// Frequency band (0-based) that contains `frequency` when [0, fs/2] is cut
// into `bands` equal-width bands.
std::size_t band_of_frequency(double frequency, double sample_rate, std::size_t bands);

std::vector<std::string> temporal_feature_names();
std::vector<std::string> statistical_feature_names();
std::vector<std::string> spectral_feature_names(std::size_t bands = kDefaultBands);

// Channel-major (ir, acoustic, reflection, visible), then temporal,
// statistical, spectral within each channel.
std::vector<FeatureDescriptor> catalog(std::size_t bands = kDefaultBands);
std::string catalog_id(std::size_t bands = kDefaultBands);

// Position of `name` in catalog(bands); throws ValidationError if absent.
std::size_t feature_index(std::string_view name, std::size_t bands = kDefaultBands);

struct FeatureVector {
  std::vector<double> values;
  std::string catalog_id;
};

// Features of the final layer only.
FeatureVector extract_sample(const Sample& sample, std::size_t bands = kDefaultBands);

// Names of the five non-sensor inputs, in column order.
const std::vector<std::string>& parameter_input_names();

// Row-aligned model inputs for a set of samples.
struct FeatureTable {
  std::vector<SampleKey> keys;
  std::vector<Technique> techniques;
  Matrix params;   // pulses_per_burst, pulse_fluence, laser_power, num_layers, initial_roughness
  Matrix sensors;  // catalog order
  Vector target;   // final roughness, micrometres
  std::size_t bands = kDefaultBands;

  std::size_t rows() const { return keys.size(); }
};

FeatureTable build_feature_table(std::span<const Experiment> experiments, std::size_t bands = kDefaultBands,
                                 std::size_t threads = 1);

// Generates and extracts one sample at a time so the full layer stack of the
// dataset is never resident.
FeatureTable build_feature_table(const SyntheticConfig& config, std::size_t bands = kDefaultBands,
                                 std::size_t threads = 1);

// CSV: param.* columns, then feature names, then target.final_roughness.
void write_feature_matrix(const FeatureTable& table, const std::filesystem::path& path);

}  // namespace lasermon
