#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lasermon/linalg.hpp"
#include "lasermon/preprocess.hpp"

namespace lasermon::mlp {

enum class Activation { relu, leaky_relu, tanh, sigmoid };
enum class Optimizer { sgd, sgd_momentum, rmsprop, adam };

std::string_view to_string(Activation a);
std::string_view to_string(Optimizer o);
Activation parse_activation(std::string_view name);
Optimizer parse_optimizer(std::string_view name);

inline constexpr double kLeakySlope = 0.01;

struct Architecture {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_widths;  // empty: a single linear map
  Activation activation = Activation::relu;

  bool operator==(const Architecture&) const = default;
};

// weights is (outputs x inputs).
struct Layer {
  Matrix weights;
  Vector bias;
};

// The output layer is linear. `normalization` records the input scaling the
// model was trained with; predict() itself expects already-scaled rows.
struct Model {
  Architecture architecture;
  std::vector<Layer> layers;
  std::optional<NormalizationStats> normalization;

  std::size_t parameter_count() const;
};

// He-uniform (relu family) or Glorot-uniform (tanh, sigmoid) weights, zero biases.
Model init(const Architecture& architecture, std::uint64_t seed);

double predict(const Model& model, std::span<const double> row);
Vector predict(const Model& model, const Matrix& rows);

// MSE + l1 * sum|w| + l2 * sum w^2 over weights (biases are not penalized).
double loss(const Model& model, const Matrix& rows, const Vector& targets, double l1, double l2);

struct Gradients {
  std::vector<Layer> layers;  // same shapes as Model::layers
};

// Exact gradient of loss(); the l1 term uses sign(w) with sign(0) = 0.
Gradients gradients(const Model& model, const Matrix& rows, const Vector& targets, double l1, double l2);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 500;
  double l1 = 0.0;
  double l2 = 0.0;
  Optimizer optimizer = Optimizer::adam;
  std::uint64_t seed = 0;
  std::size_t early_stopping_patience = 50;
};

inline constexpr double kMomentum = 0.9;
inline constexpr double kRmsDecay = 0.9;
inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kEpsilon = 1e-8;

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the untrained model
  double train_mse = 0.0;
  double validation_mse = 0.0;
};

struct TrainResult {
  Model model;  // parameters from the best-validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

// Throws TrainingDiverged when the loss stops being finite.
TrainResult train(Model model, const Matrix& train_rows, const Vector& train_targets, const Matrix& validation_rows,
                  const Vector& validation_targets, const TrainConfig& config);

// Outputs on the path that starts at `baseline` and switches coordinates to
// `row` one at a time in `order`: element 0 is f(baseline), element j is the
// output after the first j switches. Uses an incremental update of the first
// layer's pre-activations instead of re-running full forward passes.
Vector predict_path(const Model& model, std::span<const double> row, std::span<const double> baseline,
                    std::span<const std::size_t> order);

nlohmann::json to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);

}  // namespace lasermon::mlp
