#include "lasermon/mlp.hpp"

#include <cmath>
#include <numeric>

#include "lasermon/error.hpp"
#include "lasermon/rng.hpp"

namespace lasermon::mlp {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "unknown";
}

std::string_view to_string(Optimizer o) {
  switch (o) {
    case Optimizer::sgd: return "sgd";
    case Optimizer::sgd_momentum: return "sgd_momentum";
    case Optimizer::rmsprop: return "rmsprop";
    case Optimizer::adam: return "adam";
  }
  return "unknown";
}

Activation parse_activation(std::string_view name) {
  for (auto a : {Activation::relu, Activation::leaky_relu, Activation::tanh, Activation::sigmoid}) {
    if (to_string(a) == name) return a;
  }
  throw ValidationError("unknown activation '" + std::string(name) + "'");
}

Optimizer parse_optimizer(std::string_view name) {
  for (auto o : {Optimizer::sgd, Optimizer::sgd_momentum, Optimizer::rmsprop, Optimizer::adam}) {
    if (to_string(o) == name) return o;
  }
  throw ValidationError("unknown optimizer '" + std::string(name) + "'");
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  return n;
}

namespace {

void activate(Matrix& z, Activation a) {
  switch (a) {
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::leaky_relu: z = z.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; }); break;
    case Activation::tanh: z = z.array().tanh().matrix(); break;
    case Activation::sigmoid: z = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }); break;
  }
}

// Derivative expressed through pre-activation z and activation output out.
Matrix derivative(const Matrix& z, const Matrix& out, Activation a) {
  switch (a) {
    case Activation::relu: return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case Activation::leaky_relu: return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; });
    case Activation::tanh: return (1.0 - out.array().square()).matrix();
    case Activation::sigmoid: return (out.array() * (1.0 - out.array())).matrix();
  }
  return Matrix();
}

Matrix affine(const Matrix& in, const Layer& layer) {
  Matrix z = in * layer.weights.transpose();
  z.rowwise() += layer.bias.transpose();
  return z;
}

void check_input(const Model& model, Eigen::Index cols) {
  if (static_cast<std::size_t>(cols) != model.architecture.input_dim) {
    throw ValidationError("mlp: expected " + std::to_string(model.architecture.input_dim) + " inputs, got " +
                          std::to_string(cols));
  }
}

void check_batch(const Model& model, const Matrix& rows, const Vector& targets) {
  if (rows.rows() == 0) throw ValidationError("mlp: empty batch");
  if (rows.rows() != targets.size()) throw ValidationError("mlp: rows and targets differ in length");
  check_input(model, rows.cols());
}

// Pre-activations and outputs of every layer; outputs[0] is the input.
struct ForwardTrace {
  std::vector<Matrix> pre;
  std::vector<Matrix> out;
};

ForwardTrace forward(const Model& model, const Matrix& rows) {
  ForwardTrace t;
  t.out.push_back(rows);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    Matrix z = affine(t.out.back(), model.layers[l]);
    Matrix a = z;
    if (l + 1 < model.layers.size()) activate(a, model.architecture.activation);
    t.pre.push_back(std::move(z));
    t.out.push_back(std::move(a));
  }
  return t;
}

double penalty(const Model& model, double l1, double l2) {
  double p = 0.0;
  for (const auto& layer : model.layers) {
    if (l1 != 0.0) p += l1 * layer.weights.cwiseAbs().sum();
    if (l2 != 0.0) p += l2 * layer.weights.squaredNorm();
  }
  return p;
}

}  // namespace

Model init(const Architecture& arch, std::uint64_t seed) {
  if (arch.input_dim == 0) throw ValidationError("mlp: input_dim must be positive");
  for (auto w : arch.hidden_widths) {
    if (w == 0) throw ValidationError("mlp: hidden widths must be positive");
  }
  Model m;
  m.architecture = arch;
  std::vector<std::size_t> dims{arch.input_dim};
  dims.insert(dims.end(), arch.hidden_widths.begin(), arch.hidden_widths.end());
  dims.push_back(1);
  const bool he = arch.activation == Activation::relu || arch.activation == Activation::leaky_relu;
  Engine eng = make_engine(seed, {0x6d6c70ULL});
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double fan_in = static_cast<double>(dims[l]);
    const double fan_out = static_cast<double>(dims[l + 1]);
    const double limit = he ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
    Layer layer;
    layer.weights.resize(static_cast<Eigen::Index>(dims[l + 1]), static_cast<Eigen::Index>(dims[l]));
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = uniform(eng, -limit, limit);
    layer.bias = Vector::Zero(static_cast<Eigen::Index>(dims[l + 1]));
    m.layers.push_back(std::move(layer));
  }
  return m;
}

Vector predict(const Model& model, const Matrix& rows) {
  check_input(model, rows.cols());
  Matrix a = rows;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    a = affine(a, model.layers[l]);
    if (l + 1 < model.layers.size()) activate(a, model.architecture.activation);
  }
  return a.col(0);
}

double predict(const Model& model, std::span<const double> row) {
  Matrix m(1, static_cast<Eigen::Index>(row.size()));
  for (std::size_t i = 0; i < row.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = row[i];
  return predict(model, m)(0);
}

double loss(const Model& model, const Matrix& rows, const Vector& targets, double l1, double l2) {
  check_batch(model, rows, targets);
  const Vector residual = predict(model, rows) - targets;
  return residual.squaredNorm() / static_cast<double>(rows.rows()) + penalty(model, l1, l2);
}

Gradients gradients(const Model& model, const Matrix& rows, const Vector& targets, double l1, double l2) {
  check_batch(model, rows, targets);
  const ForwardTrace t = forward(model, rows);
  const double n = static_cast<double>(rows.rows());
  Gradients g;
  g.layers.resize(model.layers.size());

  Matrix delta = (2.0 / n) * (t.out.back().col(0) - targets);  // n x 1
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const Layer& layer = model.layers[l];
    Layer& grad = g.layers[l];
    grad.weights = delta.transpose() * t.out[l];
    grad.bias = delta.colwise().sum().transpose();
    if (l1 != 0.0) {
      grad.weights += l1 * layer.weights.unaryExpr([](double w) { return w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0); });
    }
    if (l2 != 0.0) grad.weights += 2.0 * l2 * layer.weights;
    if (l > 0) {
      Matrix back = delta * layer.weights;
      delta = back.cwiseProduct(derivative(t.pre[l - 1], t.out[l], model.architecture.activation));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct SlotState {
  Matrix w1, w2;
  Vector b1, b2;
};

class Updater {
 public:
  Updater(const Model& model, const TrainConfig& config) : config_(config) {
    for (const auto& l : model.layers) {
      SlotState s;
      s.w1 = s.w2 = Matrix::Zero(l.weights.rows(), l.weights.cols());
      s.b1 = s.b2 = Vector::Zero(l.bias.size());
      state_.push_back(std::move(s));
    }
  }

  void step(Model& model, const Gradients& g) {
    ++t_;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      apply(model.layers[l].weights, g.layers[l].weights, state_[l].w1, state_[l].w2);
      apply(model.layers[l].bias, g.layers[l].bias, state_[l].b1, state_[l].b2);
    }
  }

 private:
  template <typename P>
  void apply(P& param, const P& grad, P& m, P& v) {
    const double lr = config_.learning_rate;
    switch (config_.optimizer) {
      case Optimizer::sgd:
        param -= lr * grad;
        break;
      case Optimizer::sgd_momentum:
        // v <- mu v + g; w <- w - lr v
        m = kMomentum * m + grad;
        param -= lr * m;
        break;
      case Optimizer::rmsprop:
        // s <- rho s + (1 - rho) g^2; w <- w - lr g / (sqrt(s) + eps)
        v = kRmsDecay * v + (1.0 - kRmsDecay) * grad.cwiseProduct(grad);
        param.array() -= lr * grad.array() / (v.array().sqrt() + kEpsilon);
        break;
      case Optimizer::adam: {
        m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grad;
        v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEpsilon);
        break;
      }
    }
  }

  const TrainConfig& config_;
  std::vector<SlotState> state_;
  std::size_t t_ = 0;
};

double plain_mse(const Model& model, const Matrix& rows, const Vector& targets) {
  return (predict(model, rows) - targets).squaredNorm() / static_cast<double>(rows.rows());
}

}  // namespace

TrainResult train(Model model, const Matrix& train_rows, const Vector& train_targets, const Matrix& validation_rows,
                  const Vector& validation_targets, const TrainConfig& config) {
  check_batch(model, train_rows, train_targets);
  check_batch(model, validation_rows, validation_targets);
  if (config.batch_size == 0) throw ValidationError("train: batch_size must be positive");
  if (!(config.learning_rate >= 0.0)) throw ValidationError("train: learning_rate must be non-negative");

  TrainResult result;
  auto record = [&](std::size_t epoch) {
    EpochRecord r{epoch, plain_mse(model, train_rows, train_targets),
                  plain_mse(model, validation_rows, validation_targets)};
    if (!std::isfinite(r.train_mse) || !std::isfinite(r.validation_mse)) throw TrainingDiverged(epoch);
    result.history.push_back(r);
    return r.validation_mse;
  };

  double best = record(0);
  result.model = model;
  std::size_t since_best = 0;

  const auto n = static_cast<std::size_t>(train_rows.rows());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Engine eng = make_engine(config.seed, {0x747261696eULL});
  Updater updater(model, config);
  Matrix batch_rows;
  Vector batch_targets;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle(order, eng);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const auto len = static_cast<Eigen::Index>(end - start);
      batch_rows.resize(len, train_rows.cols());
      batch_targets.resize(len);
      for (Eigen::Index i = 0; i < len; ++i) {
        batch_rows.row(i) = train_rows.row(order[start + static_cast<std::size_t>(i)]);
        batch_targets(i) = train_targets(order[start + static_cast<std::size_t>(i)]);
      }
      updater.step(model, gradients(model, batch_rows, batch_targets, config.l1, config.l2));
    }
    const double val = record(epoch);
    if (val < best) {
      best = val;
      result.model = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.early_stopping_patience) {
      break;
    }
  }
  return result;
}

Vector predict_path(const Model& model, std::span<const double> row, std::span<const double> baseline,
                    std::span<const std::size_t> order) {
  const std::size_t d = model.architecture.input_dim;
  if (row.size() != d || baseline.size() != d) throw ValidationError("predict_path: dimension mismatch");
  const Layer& first = model.layers.front();
  const auto width = first.weights.rows();

  Eigen::Map<const Vector> b(baseline.data(), static_cast<Eigen::Index>(d));
  Vector z = first.weights * b + first.bias;
  Matrix pre(static_cast<Eigen::Index>(order.size() + 1), width);
  pre.row(0) = z.transpose();
  for (std::size_t step = 0; step < order.size(); ++step) {
    const std::size_t i = order[step];
    if (i >= d) throw ValidationError("predict_path: feature index out of range");
    const double delta = row[i] - baseline[i];
    if (delta != 0.0) z += delta * first.weights.col(static_cast<Eigen::Index>(i));
    pre.row(static_cast<Eigen::Index>(step + 1)) = z.transpose();
  }

  if (model.layers.size() == 1) return pre.col(0);
  Matrix a = std::move(pre);
  activate(a, model.architecture.activation);
  for (std::size_t l = 1; l < model.layers.size(); ++l) {
    a = affine(a, model.layers[l]);
    if (l + 1 < model.layers.size()) activate(a, model.architecture.activation);
  }
  return a.col(0);
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const Model& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : model.layers) {
    std::vector<double> w(l.weights.data(), l.weights.data() + l.weights.size());
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"rows", l.weights.rows()}, {"cols", l.weights.cols()}, {"weights", w}, {"biases", b}});
  }
  nlohmann::json j{{"format_version", 1},
                   {"architecture",
                    {{"input_dim", model.architecture.input_dim},
                     {"hidden_widths", model.architecture.hidden_widths},
                     {"activation", std::string(to_string(model.architecture.activation))}}},
                   {"layers", layers}};
  if (model.normalization) j["normalization"] = *model.normalization;
  return j;
}

Model model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != 1) throw FormatError("mlp model: unsupported format_version");
    Model m;
    const auto& a = j.at("architecture");
    m.architecture.input_dim = a.at("input_dim").get<std::size_t>();
    m.architecture.hidden_widths = a.at("hidden_widths").get<std::vector<std::size_t>>();
    m.architecture.activation = parse_activation(a.at("activation").get<std::string>());
    for (const auto& lj : j.at("layers")) {
      Layer l;
      const auto rows = lj.at("rows").get<Eigen::Index>();
      const auto cols = lj.at("cols").get<Eigen::Index>();
      const auto w = lj.at("weights").get<std::vector<double>>();
      const auto b = lj.at("biases").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
        throw FormatError("mlp model: layer shape mismatch");
      }
      l.weights = Eigen::Map<const Matrix>(w.data(), rows, cols);
      l.bias = Eigen::Map<const Vector>(b.data(), rows);
      m.layers.push_back(std::move(l));
    }
    if (m.layers.size() != m.architecture.hidden_widths.size() + 1) {
      throw FormatError("mlp model: layer count does not match architecture");
    }
    if (j.contains("normalization")) m.normalization = j.at("normalization").get<NormalizationStats>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("mlp model: ") + e.what());
  }
}

}  // namespace lasermon::mlp
