#include "lasermon/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include "lasermon/error.hpp"
#include "lasermon/fourier.hpp"
#include "lasermon/parallel.hpp"
#include "lasermon/textio.hpp"

namespace lasermon {

std::string_view to_string(FeatureDomain d) {
  switch (d) {
    case FeatureDomain::temporal: return "temporal";
    case FeatureDomain::statistical: return "stat";
    case FeatureDomain::spectral: return "spectral";
  }
  return "unknown";
}

namespace {

double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

// Linear interpolation between order statistics; `sorted` must be ascending.
double quantile_sorted(std::span<const double> sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

// Least-squares slope of y against x.
double ls_slope(std::span<const double> x, std::span<const double> y) {
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return safe_div(sxy, sxx);
}

void require_length(std::span<const double> trace, std::size_t min, const char* what) {
  if (trace.size() < min) {
    throw ValidationError(std::string(what) + " needs at least " + std::to_string(min) + " samples, got " +
                          std::to_string(trace.size()));
  }
}

std::string two_digits(std::size_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%02zu", v);
  return buf;
}

std::string three_digits(std::size_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%03zu", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Temporal

std::vector<std::string> temporal_feature_names() {
  return {"absolute_energy", "area_under_curve", "autocorrelation_lag1", "centroid",
          "mean_abs_diff",   "mean_diff",        "median_abs_diff",      "median_diff",
          "negative_turning_points", "positive_turning_points", "peak_to_peak", "slope",
          "sum_abs_diff",    "zero_crossing_rate"};
}

std::vector<double> temporal_features(std::span<const double> x) {
  require_length(x, 2, "temporal_features");
  const std::size_t n = x.size();

  double energy = 0.0, weighted_t = 0.0, lag1 = 0.0, area = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    energy += x[t] * x[t];
    weighted_t += static_cast<double>(t) * x[t] * x[t];
    if (t + 1 < n) {
      lag1 += x[t] * x[t + 1];
      area += 0.5 * (x[t] + x[t + 1]);
    }
  }

  std::vector<double> diff(n - 1), abs_diff(n - 1);
  for (std::size_t t = 0; t + 1 < n; ++t) {
    diff[t] = x[t + 1] - x[t];
    abs_diff[t] = std::abs(diff[t]);
  }
  const double sum_abs_diff = std::accumulate(abs_diff.begin(), abs_diff.end(), 0.0);

  double minima = 0.0, maxima = 0.0;
  for (std::size_t t = 1; t + 1 < n; ++t) {
    if (x[t - 1] > x[t] && x[t] < x[t + 1]) minima += 1.0;
    if (x[t - 1] < x[t] && x[t] > x[t + 1]) maxima += 1.0;
  }

  std::vector<double> index(n);
  std::iota(index.begin(), index.end(), 0.0);

  double crossings = 0.0;
  for (std::size_t t = 0; t + 1 < n; ++t) {
    if ((x[t] >= 0.0) != (x[t + 1] >= 0.0)) crossings += 1.0;
  }

  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double nm1 = static_cast<double>(n - 1);
  return {
      energy,
      area,
      safe_div(lag1, energy),
      safe_div(weighted_t, energy),
      sum_abs_diff / nm1,
      (x[n - 1] - x[0]) / nm1,
      median_of(abs_diff),
      median_of(diff),
      minima,
      maxima,
      *hi - *lo,
      ls_slope(index, x),
      sum_abs_diff,
      crossings / nm1,
  };
}

// ---------------------------------------------------------------------------
// Statistical

std::vector<std::string> statistical_feature_names() {
  std::vector<std::string> names = {"mean",     "median",       "max",          "min",       "variance",
                                    "std",      "skewness",     "kurtosis",     "rms",       "iqr",
                                    "mean_abs_dev", "median_abs_dev", "range", "hist_mode"};
  for (std::size_t b = 0; b < 10; ++b) names.push_back("hist_bin_" + two_digits(b));
  for (std::size_t q = 0; q < 10; ++q) names.push_back("quantile_" + two_digits(10 * q + 5));
  for (int p : {1, 5, 25, 75, 95, 99}) names.push_back("percentile_" + two_digits(static_cast<std::size_t>(p)));
  return names;
}

std::vector<double> statistical_features(std::span<const double> x) {
  require_length(x, 2, "statistical_features");
  const std::size_t n = x.size();
  const double nd = static_cast<double>(n);
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());

  const double mean = mean_of(x);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0, sq = 0.0, mad_mean = 0.0;
  for (double v : x) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
    sq += v * v;
    mad_mean += std::abs(d);
  }
  m2 /= nd;
  m3 /= nd;
  m4 /= nd;
  const double sd = std::sqrt(m2);
  const double skew = sd == 0.0 ? 0.0 : m3 / (sd * sd * sd);
  const double kurt = sd == 0.0 ? 0.0 : m4 / (m2 * m2) - 3.0;

  const double median = quantile_sorted(sorted, 0.5);
  std::vector<double> abs_dev(n);
  for (std::size_t i = 0; i < n; ++i) abs_dev[i] = std::abs(x[i] - median);

  const double lo = sorted.front();
  const double hi = sorted.back();
  const double width = (hi - lo) / 10.0;
  std::array<double, 10> hist{};
  for (double v : x) {
    std::size_t b = 0;
    if (width > 0.0) b = std::min<std::size_t>(9, static_cast<std::size_t>((v - lo) / width));
    hist[b] += 1.0;
  }
  const auto densest = static_cast<std::size_t>(std::max_element(hist.begin(), hist.end()) - hist.begin());
  const double mode = lo + (static_cast<double>(densest) + 0.5) * width;

  std::vector<double> out = {
      mean,
      median,
      hi,
      lo,
      m2,
      sd,
      skew,
      kurt,
      std::sqrt(sq / nd),
      quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25),
      mad_mean / nd,
      median_of(std::move(abs_dev)),
      hi - lo,
      mode,
  };
  for (double h : hist) out.push_back(h / nd);
  for (std::size_t q = 0; q < 10; ++q) out.push_back(quantile_sorted(sorted, static_cast<double>(2 * q + 1) / 20.0));
  for (double p : {1.0, 5.0, 25.0, 75.0, 95.0, 99.0}) out.push_back(quantile_sorted(sorted, p / 100.0));
  return out;
}

// ---------------------------------------------------------------------------
// Spectral

std::vector<std::string> spectral_feature_names(std::size_t bands) {
  std::vector<std::string> names = {"fundamental_frequency", "max_power_frequency", "median_frequency",
                                    "centroid",  "spread",   "skewness", "kurtosis", "slope", "decrease",
                                    "entropy",   "variation", "rolloff", "rollon", "power_bandwidth", "max_psd"};
  for (std::size_t b = 0; b < bands; ++b) names.push_back("band_mean_" + three_digits(b));
  for (std::size_t b = 0; b < bands; ++b) names.push_back("band_max_" + three_digits(b));
  return names;
}

std::size_t band_of_frequency(double frequency, double sample_rate, std::size_t bands) {
  const double width = 0.5 * sample_rate / static_cast<double>(bands);
  const double b = std::floor(frequency / width);
  if (b <= 0.0) return 0;
  return std::min(bands - 1, static_cast<std::size_t>(b));
}

std::vector<double> spectral_features(std::span<const double> x, double fs, std::size_t bands) {
  require_length(x, 8, "spectral_features");
  if (!(fs > 0.0)) throw ValidationError("spectral_features: sample_rate must be positive");
  if (bands == 0) throw ValidationError("spectral_features: bands must be positive");
  const std::size_t n = x.size();
  std::vector<double> out(spectral_feature_count(bands), 0.0);

  // Constant (including all-zero) traces have zero power after mean removal.
  if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) return out;

  const double mean = mean_of(x);
  std::vector<double> centered(n);
  for (std::size_t i = 0; i < n; ++i) centered[i] = x[i] - mean;
  const auto spectrum = fourier::real_transform(centered);
  const std::size_t k_bins = spectrum.size();

  std::vector<double> freq(k_bins), mag(k_bins), power(k_bins);
  for (std::size_t k = 0; k < k_bins; ++k) {
    freq[k] = static_cast<double>(k) * fs / static_cast<double>(n);
    mag[k] = std::abs(spectrum[k]);
    power[k] = mag[k] * mag[k];
  }
  const double total_power = std::accumulate(power.begin(), power.end(), 0.0);
  const double total_mag = std::accumulate(mag.begin(), mag.end(), 0.0);
  if (total_power == 0.0) return out;

  std::size_t fundamental = 1;
  for (std::size_t k = 2; k < k_bins; ++k) {
    if (mag[k] > mag[fundamental]) fundamental = k;
  }
  const auto max_power = static_cast<std::size_t>(std::max_element(power.begin(), power.end()) - power.begin());

  std::vector<double> cumulative(k_bins);
  std::partial_sum(power.begin(), power.end(), cumulative.begin());
  auto power_quantile_freq = [&](double fraction) {
    const double target = fraction * total_power;
    for (std::size_t k = 0; k < k_bins; ++k) {
      if (cumulative[k] >= target) return freq[k];
    }
    return freq.back();
  };

  double centroid = 0.0;
  for (std::size_t k = 0; k < k_bins; ++k) centroid += freq[k] * mag[k];
  centroid = safe_div(centroid, total_mag);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (std::size_t k = 0; k < k_bins; ++k) {
    const double d = freq[k] - centroid;
    m2 += d * d * mag[k];
    m3 += d * d * d * mag[k];
    m4 += d * d * d * d * mag[k];
  }
  m2 = safe_div(m2, total_mag);
  m3 = safe_div(m3, total_mag);
  m4 = safe_div(m4, total_mag);
  const double spread = std::sqrt(m2);
  const double skew = spread == 0.0 ? 0.0 : m3 / (spread * spread * spread);
  const double kurt = spread == 0.0 ? 0.0 : m4 / (m2 * m2);

  double decrease_num = 0.0, decrease_den = 0.0;
  for (std::size_t k = 1; k < k_bins; ++k) {
    decrease_num += (mag[k] - mag[0]) / static_cast<double>(k);
    decrease_den += mag[k];
  }

  double entropy = 0.0;
  for (double p : power) {
    const double q = p / total_power;
    if (q > 0.0) entropy -= q * std::log(q);
  }
  entropy = k_bins > 1 ? entropy / std::log(static_cast<double>(k_bins)) : 0.0;

  // 1 - Pearson correlation between the two halves of the magnitude spectrum.
  const std::size_t half = k_bins / 2;
  double variation = 0.0;
  {
    std::span<const double> a(mag.data(), half), b(mag.data() + half, half);
    const double ma = mean_of(a), mb = mean_of(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    variation = 1.0 - safe_div(sab, std::sqrt(saa * sbb));
  }

  const double rolloff = power_quantile_freq(0.85);
  const double rollon = power_quantile_freq(0.05);

  out[0] = freq[fundamental];
  out[1] = freq[max_power];
  out[2] = power_quantile_freq(0.5);
  out[3] = centroid;
  out[4] = spread;
  out[5] = skew;
  out[6] = kurt;
  out[7] = ls_slope(freq, mag);
  out[8] = safe_div(decrease_num, decrease_den);
  out[9] = entropy;
  out[10] = variation;
  out[11] = rolloff;
  out[12] = rollon;
  out[13] = rolloff - rollon;
  out[14] = power[max_power] / (fs * static_cast<double>(n));

  std::vector<double> band_sum(bands, 0.0), band_max(bands, 0.0), band_count(bands, 0.0);
  for (std::size_t k = 0; k < k_bins; ++k) {
    // Integer form of band_of_frequency(k * fs / n): exact at band edges.
    const std::size_t b = std::min(bands - 1, (2 * k * bands) / n);
    band_sum[b] += mag[k];
    band_count[b] += 1.0;
    band_max[b] = std::max(band_max[b], mag[k]);
  }
  for (std::size_t b = 0; b < bands; ++b) {
    out[kSpectralScalarCount + b] = safe_div(band_sum[b], band_count[b]);
    out[kSpectralScalarCount + bands + b] = band_max[b];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Catalog

std::vector<FeatureDescriptor> catalog(std::size_t bands) {
  const auto temporal = temporal_feature_names();
  const auto stat = statistical_feature_names();
  const auto spectral = spectral_feature_names(bands);
  std::vector<FeatureDescriptor> out;
  out.reserve(sample_feature_count(bands));
  for (Channel c : kChannels) {
    auto add = [&](const std::vector<std::string>& names, FeatureDomain d) {
      for (const auto& n : names) {
        out.push_back({std::string(to_string(c)) + "." + std::string(to_string(d)) + "." + n, d, c, out.size()});
      }
    };
    add(temporal, FeatureDomain::temporal);
    add(stat, FeatureDomain::statistical);
    add(spectral, FeatureDomain::spectral);
  }
  return out;
}

std::string catalog_id(std::size_t bands) { return "lasermon-features-v1-b" + std::to_string(bands); }

std::size_t feature_index(std::string_view name, std::size_t bands) {
  for (const auto& d : catalog(bands)) {
    if (d.name == name) return d.index;
  }
  throw ValidationError("unknown feature '" + std::string(name) + "'");
}

FeatureVector extract_sample(const Sample& sample, std::size_t bands) {
  const LayerRecording& layer = last_layer(sample);
  FeatureVector fv;
  fv.catalog_id = catalog_id(bands);
  fv.values.reserve(sample_feature_count(bands));
  for (Channel c : kChannels) {
    const auto& trace = layer.channel(c);
    for (auto* part : {&temporal_features, &statistical_features}) {
      auto v = (*part)(trace);
      fv.values.insert(fv.values.end(), v.begin(), v.end());
    }
    auto s = spectral_features(trace, layer.sample_rate, bands);
    fv.values.insert(fv.values.end(), s.begin(), s.end());
  }
  return fv;
}

const std::vector<std::string>& parameter_input_names() {
  static const std::vector<std::string> names = {"param.pulses_per_burst", "param.pulse_fluence",
                                                 "param.laser_power", "param.num_layers",
                                                 "param.initial_roughness"};
  return names;
}

namespace {

FeatureTable allocate_table(std::size_t rows, std::size_t bands) {
  FeatureTable t;
  t.bands = bands;
  t.keys.resize(rows);
  t.techniques.resize(rows);
  t.params.resize(static_cast<Eigen::Index>(rows), 5);
  t.sensors.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(sample_feature_count(bands)));
  t.target.resize(static_cast<Eigen::Index>(rows));
  return t;
}

void fill_row(FeatureTable& t, std::size_t row, const Sample& s, Technique technique) {
  const auto r = static_cast<Eigen::Index>(row);
  t.keys[row] = {s.experiment_id, s.sample_id};
  t.techniques[row] = technique;
  t.params(r, 0) = s.params.pulses_per_burst;
  t.params(r, 1) = s.params.pulse_fluence;
  t.params(r, 2) = s.params.laser_power;
  t.params(r, 3) = s.params.num_layers;
  t.params(r, 4) = s.initial_roughness;
  t.target(r) = s.final_roughness;
  const auto fv = extract_sample(s, t.bands);
  for (std::size_t j = 0; j < fv.values.size(); ++j) t.sensors(r, static_cast<Eigen::Index>(j)) = fv.values[j];
}

}  // namespace

FeatureTable build_feature_table(std::span<const Experiment> experiments, std::size_t bands, std::size_t threads) {
  std::vector<std::pair<const Sample*, Technique>> rows;
  for (const auto& e : experiments) {
    for (const auto& s : e.samples) rows.emplace_back(&s, e.technique);
  }
  FeatureTable t = allocate_table(rows.size(), bands);
  parallel_for(rows.size(), threads, [&](std::size_t i) { fill_row(t, i, *rows[i].first, rows[i].second); });
  return t;
}

FeatureTable build_feature_table(const SyntheticConfig& config, std::size_t bands, std::size_t threads) {
  validate(config);
  const std::size_t per = static_cast<std::size_t>(config.samples_per_experiment);
  const std::size_t rows = synthetic_experiment_count(config) * per;
  FeatureTable t = allocate_table(rows, bands);
  parallel_for(rows, threads, [&](std::size_t i) {
    const std::size_t e = i / per;
    fill_row(t, i, generate_sample(config, e, i % per), synthetic_technique(config, e));
  });
  return t;
}

void write_feature_matrix(const FeatureTable& table, const std::filesystem::path& path) {
  std::string csv;
  for (const auto& n : parameter_input_names()) csv += n + ',';
  for (const auto& d : catalog(table.bands)) csv += d.name + ',';
  csv += "target.final_roughness\n";
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(table.rows()); ++r) {
    for (Eigen::Index c = 0; c < table.params.cols(); ++c) csv += textio::format_double(table.params(r, c)) + ',';
    for (Eigen::Index c = 0; c < table.sensors.cols(); ++c) csv += textio::format_double(table.sensors(r, c)) + ',';
    csv += textio::format_double(table.target(r)) + '\n';
  }
  textio::write_file(path, csv);
}

}  // namespace lasermon
