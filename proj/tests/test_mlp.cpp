#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lasermon/error.hpp"
#include "lasermon/mlp.hpp"
#include "lasermon/rng.hpp"

using namespace lasermon;
using mlp::Activation;

namespace {

Matrix random_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Engine eng = make_engine(seed);
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = uniform(eng, -1.0, 1.0);
  }
  return m;
}

Vector random_vector(Eigen::Index n, std::uint64_t seed) {
  Engine eng = make_engine(seed);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(eng);
  return v;
}

mlp::Model linear_model(double w0, double w1, double b) {
  mlp::Model m = mlp::init({2, {}, Activation::relu}, 0);
  m.layers[0].weights << w0, w1;
  m.layers[0].bias << b;
  return m;
}

// Forward pass written out directly from the layer list.
double reference_forward(const mlp::Model& m, const Vector& x) {
  Vector a = x;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    a = m.layers[l].weights * a + m.layers[l].bias;
    if (l + 1 == m.layers.size()) break;
    for (auto& v : a) {
      switch (m.architecture.activation) {
        case Activation::relu: v = std::max(0.0, v); break;
        case Activation::leaky_relu: v = v > 0.0 ? v : mlp::kLeakySlope * v; break;
        case Activation::tanh: v = std::tanh(v); break;
        case Activation::sigmoid: v = 1.0 / (1.0 + std::exp(-v)); break;
      }
    }
  }
  return a(0);
}

}  // namespace

TEST_CASE("names round-trip") {
  for (auto a : {Activation::relu, Activation::leaky_relu, Activation::tanh, Activation::sigmoid}) {
    CHECK(mlp::parse_activation(mlp::to_string(a)) == a);
  }
  for (auto o : {mlp::Optimizer::sgd, mlp::Optimizer::sgd_momentum, mlp::Optimizer::rmsprop, mlp::Optimizer::adam}) {
    CHECK(mlp::parse_optimizer(mlp::to_string(o)) == o);
  }
  CHECK_THROWS_AS(mlp::parse_activation("gelu"), ValidationError);
}

TEST_CASE("parameter count: 5 -> 3 -> 1 has 22 parameters") {
  CHECK(mlp::init({5, {3}, Activation::relu}, 0).parameter_count() == 22);
  CHECK(mlp::init({2, {}, Activation::relu}, 0).parameter_count() == 3);
  CHECK(mlp::init({10, {8, 4}, Activation::tanh}, 0).parameter_count() == 10 * 8 + 8 + 8 * 4 + 4 + 4 + 1);
}

TEST_CASE("initialisation ranges and zero biases") {
  const auto he = mlp::init({50, {20}, Activation::relu}, 3);
  CHECK(he.layers[0].weights.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 50.0));
  CHECK(he.layers[1].weights.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 20.0));
  const auto glorot = mlp::init({50, {20}, Activation::tanh}, 3);
  CHECK(glorot.layers[0].weights.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 70.0));
  for (const auto& l : glorot.layers) CHECK(l.bias.isZero());
  CHECK(he.layers[0].weights == mlp::init({50, {20}, Activation::relu}, 3).layers[0].weights);
  CHECK(he.layers[0].weights != mlp::init({50, {20}, Activation::relu}, 4).layers[0].weights);
}

TEST_CASE("forward pass agrees with a direct evaluation") {
  for (auto act : {Activation::relu, Activation::leaky_relu, Activation::tanh, Activation::sigmoid}) {
    const auto m = mlp::init({4, {6, 3}, act}, 11);
    const Matrix x = random_rows(9, 4, 2);
    const Vector batch = mlp::predict(m, x);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Vector row = x.row(i).transpose();
      CHECK(batch(i) == doctest::Approx(reference_forward(m, row)).epsilon(1e-12));
      CHECK(mlp::predict(m, std::span<const double>(row.data(), 4)) == doctest::Approx(batch(i)).epsilon(1e-12));
    }
  }
}

TEST_CASE("loss by hand") {
  const auto m = linear_model(1.0, 2.0, 0.5);
  Matrix x(2, 2);
  x << 1, 1, 0, 2;
  Vector y(2);
  y << 4, 4;
  // predictions 3.5 and 4.5
  CHECK(mlp::loss(m, x, y, 0.0, 0.0) == doctest::Approx(0.25));
  CHECK(mlp::loss(m, x, y, 0.1, 0.0) == doctest::Approx(0.25 + 0.1 * 3.0));
  CHECK(mlp::loss(m, x, y, 0.0, 0.01) == doctest::Approx(0.25 + 0.01 * 5.0));
  CHECK(mlp::loss(m, x, y, 0.1, 0.01) == doctest::Approx(0.6));
}

TEST_CASE("gradients match central finite differences") {
  const double h = 1e-6;
  int draws = 0;
  for (auto act : {Activation::relu, Activation::leaky_relu, Activation::tanh, Activation::sigmoid}) {
    for (std::uint64_t seed = 0; seed < 6; ++seed, ++draws) {
      auto m = mlp::init({3, {5, 4}, act}, 100 + seed);
      // Nonzero biases keep every pre-activation off the relu kink.
      for (std::size_t l = 0; l < m.layers.size(); ++l) m.layers[l].bias = 0.1 * random_vector(m.layers[l].bias.size(), seed + l);
      const Matrix x = random_rows(7, 3, seed);
      const Vector y = random_vector(7, seed + 50);
      const double l1 = seed % 2 ? 1e-3 : 0.0;
      const double l2 = seed % 3 ? 1e-2 : 0.0;
      const auto g = mlp::gradients(m, x, y, l1, l2);
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        for (Eigen::Index i = 0; i < m.layers[l].weights.size(); ++i) {
          auto plus = m, minus = m;
          plus.layers[l].weights.data()[i] += h;
          minus.layers[l].weights.data()[i] -= h;
          const double fd = (mlp::loss(plus, x, y, l1, l2) - mlp::loss(minus, x, y, l1, l2)) / (2 * h);
          CHECK(g.layers[l].weights.data()[i] == doctest::Approx(fd).epsilon(1e-5).scale(1e-3));
        }
        for (Eigen::Index i = 0; i < m.layers[l].bias.size(); ++i) {
          auto plus = m, minus = m;
          plus.layers[l].bias(i) += h;
          minus.layers[l].bias(i) -= h;
          const double fd = (mlp::loss(plus, x, y, l1, l2) - mlp::loss(minus, x, y, l1, l2)) / (2 * h);
          CHECK(g.layers[l].bias(i) == doctest::Approx(fd).epsilon(1e-5).scale(1e-3));
        }
      }
    }
  }
  CHECK(draws >= 20);
}

TEST_CASE("one full-batch SGD step equals the closed-form update") {
  const auto m = linear_model(0.3, -0.2, 0.1);
  const Matrix x = random_rows(8, 2, 5);
  const Vector y = random_vector(8, 6);
  const Vector residual = mlp::predict(m, x) - y;
  // d/dw of mean squared error for a linear map
  const Vector gw = 2.0 / 8.0 * x.transpose() * residual;
  const double gb = 2.0 / 8.0 * residual.sum();

  mlp::TrainConfig c;
  c.optimizer = mlp::Optimizer::sgd;
  c.learning_rate = 0.01;
  c.batch_size = 8;
  c.max_epochs = 1;
  const auto r = mlp::train(m, x, y, x, y, c);
  REQUIRE(r.best_epoch == 1);
  CHECK(r.model.layers[0].weights(0, 0) == doctest::Approx(0.3 - 0.01 * gw(0)).epsilon(1e-12));
  CHECK(r.model.layers[0].weights(0, 1) == doctest::Approx(-0.2 - 0.01 * gw(1)).epsilon(1e-12));
  CHECK(r.model.layers[0].bias(0) == doctest::Approx(0.1 - 0.01 * gb).epsilon(1e-12));
}

TEST_CASE("the first Adam step moves each parameter by about lr against its gradient") {
  const auto m = linear_model(0.3, -0.2, 0.1);
  const Matrix x = random_rows(8, 2, 5);
  const Vector y = random_vector(8, 6);
  const auto g = mlp::gradients(m, x, y, 0.0, 0.0);

  mlp::TrainConfig c;
  c.optimizer = mlp::Optimizer::adam;
  c.learning_rate = 1e-3;
  c.batch_size = 8;
  c.max_epochs = 1;
  const auto r = mlp::train(m, x, y, x, y, c);
  REQUIRE(r.best_epoch == 1);
  // Bias-corrected first step: lr * g / (|g| + eps).
  auto expected = [&](double w, double grad) { return w - 1e-3 * grad / (std::abs(grad) + mlp::kEpsilon); };
  CHECK(r.model.layers[0].weights(0, 0) == doctest::Approx(expected(0.3, g.layers[0].weights(0, 0))).epsilon(1e-12));
  CHECK(r.model.layers[0].weights(0, 1) == doctest::Approx(expected(-0.2, g.layers[0].weights(0, 1))).epsilon(1e-12));
  CHECK(r.model.layers[0].bias(0) == doctest::Approx(expected(0.1, g.layers[0].bias(0))).epsilon(1e-12));
}

TEST_CASE("momentum and RMSProp first steps") {
  const auto m = linear_model(0.3, -0.2, 0.1);
  const Matrix x = random_rows(8, 2, 5);
  const Vector y = random_vector(8, 6);
  const auto g = mlp::gradients(m, x, y, 0.0, 0.0);
  mlp::TrainConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 8;
  c.max_epochs = 1;

  c.optimizer = mlp::Optimizer::sgd_momentum;
  auto r = mlp::train(m, x, y, x, y, c);
  REQUIRE(r.best_epoch == 1);
  CHECK(r.model.layers[0].bias(0) == doctest::Approx(0.1 - 1e-3 * g.layers[0].bias(0)).epsilon(1e-12));

  c.optimizer = mlp::Optimizer::rmsprop;
  r = mlp::train(m, x, y, x, y, c);
  REQUIRE(r.best_epoch == 1);
  const double gb = g.layers[0].bias(0);
  CHECK(r.model.layers[0].bias(0) ==
        doctest::Approx(0.1 - 1e-3 * gb / (std::sqrt(0.1 * gb * gb) + mlp::kEpsilon)).epsilon(1e-12));
}

TEST_CASE("learns y = 3x") {
  Matrix x(64, 1);
  Vector y(64);
  for (int i = 0; i < 64; ++i) {
    x(i, 0) = -1.0 + 2.0 * i / 63.0;
    y(i) = 3.0 * x(i, 0);
  }
  mlp::TrainConfig c;
  c.learning_rate = 0.05;
  c.batch_size = 16;
  c.max_epochs = 400;
  c.early_stopping_patience = 400;
  const auto r = mlp::train(mlp::init({1, {}, Activation::relu}, 1), x, y, x, y, c);
  CHECK(r.model.layers[0].weights(0, 0) == doctest::Approx(3.0).epsilon(1e-2));
  CHECK(r.history[r.best_epoch].validation_mse < 1e-4);
}

TEST_CASE("zero learning rate leaves the loss flat") {
  const Matrix x = random_rows(20, 3, 1);
  const Vector y = random_vector(20, 2);
  mlp::TrainConfig c;
  c.learning_rate = 0.0;
  c.max_epochs = 30;
  c.early_stopping_patience = 100;
  const auto m = mlp::init({3, {4}, Activation::tanh}, 9);
  const auto r = mlp::train(m, x, y, x, y, c);
  REQUIRE(r.history.size() == 31);
  for (const auto& h : r.history) CHECK(h.train_mse == r.history.front().train_mse);
  CHECK(r.best_epoch == 0);
  CHECK(r.model.layers[0].weights == m.layers[0].weights);
}

TEST_CASE("the returned model is the best-validation epoch") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix x = random_rows(40, 3, seed);
    const Vector y = random_vector(40, seed + 1);
    const Matrix vx = random_rows(15, 3, seed + 2);
    const Vector vy = random_vector(15, seed + 3);
    mlp::TrainConfig c;
    c.learning_rate = 0.01;
    c.max_epochs = 60;
    c.early_stopping_patience = 10;
    c.seed = seed;
    const auto r = mlp::train(mlp::init({3, {8}, Activation::relu}, seed), x, y, vx, vy, c);
    double best = r.history.front().validation_mse;
    for (const auto& h : r.history) best = std::min(best, h.validation_mse);
    CHECK(r.history[r.best_epoch].validation_mse == best);
    CHECK(r.history[r.best_epoch].epoch == r.best_epoch);
    CHECK((mlp::predict(r.model, vx) - vy).squaredNorm() / 15.0 == doctest::Approx(best).epsilon(1e-12));
    // Early stopping: no more than `patience` epochs after the best one.
    CHECK(r.history.size() - 1 <= r.best_epoch + c.early_stopping_patience);
  }
}

TEST_CASE("training is deterministic in its seed") {
  const Matrix x = random_rows(30, 2, 1);
  const Vector y = random_vector(30, 2);
  mlp::TrainConfig c;
  c.max_epochs = 20;
  c.batch_size = 7;
  c.seed = 4;
  const auto m = mlp::init({2, {5}, Activation::relu}, 1);
  const auto a = mlp::train(m, x, y, x, y, c);
  const auto b = mlp::train(m, x, y, x, y, c);
  CHECK(a.model.layers[0].weights == b.model.layers[0].weights);
  CHECK(a.history.back().train_mse == b.history.back().train_mse);
}

TEST_CASE("divergence is reported") {
  Matrix x(4, 1);
  x << 100, -200, 300, 400;
  Vector y(4);
  y << 1e6, -1e6, 2e6, 3e6;
  mlp::TrainConfig c;
  c.optimizer = mlp::Optimizer::sgd;
  c.learning_rate = 10.0;
  c.max_epochs = 500;
  c.batch_size = 4;
  CHECK_THROWS_AS(mlp::train(mlp::init({1, {}, Activation::relu}, 0), x, y, x, y, c), TrainingDiverged);
}

TEST_CASE("invalid training inputs") {
  const auto m = mlp::init({2, {3}, Activation::relu}, 0);
  mlp::TrainConfig c;
  CHECK_THROWS_AS(mlp::train(m, random_rows(5, 3, 0), random_vector(5, 0), random_rows(5, 3, 0),
                             random_vector(5, 0), c),
                  ValidationError);
  c.batch_size = 0;
  CHECK_THROWS_AS(mlp::train(m, random_rows(5, 2, 0), random_vector(5, 0), random_rows(5, 2, 0),
                             random_vector(5, 0), c),
                  ValidationError);
}

TEST_CASE("JSON round trip preserves predictions exactly") {
  auto m = mlp::init({4, {6, 3}, Activation::sigmoid}, 8);
  m.normalization = fit_minmax(random_rows(5, 4, 1), {"a", "b", "c", "d"});
  const auto back = mlp::model_from_json(nlohmann::json::parse(mlp::to_json(m).dump()));
  CHECK(back.architecture == m.architecture);
  const Matrix x = random_rows(10, 4, 3);
  CHECK(mlp::predict(back, x) == mlp::predict(m, x));
  REQUIRE(back.normalization.has_value());
  CHECK(back.normalization->min == m.normalization->min);

  auto j = mlp::to_json(m);
  j["format_version"] = 99;
  CHECK_THROWS_AS(mlp::model_from_json(j), FormatError);
}

TEST_CASE("predict_path equals explicit forward passes along the path") {
  for (auto act : {Activation::relu, Activation::tanh}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto m = mlp::init({6, {7, 5}, act}, seed);
      const Matrix pts = random_rows(2, 6, seed + 10);
      const Vector row = pts.row(0).transpose();
      const Vector base = pts.row(1).transpose();
      std::vector<std::size_t> order = {3, 0, 5, 1, 4, 2};
      Engine eng = make_engine(seed);
      shuffle(order, eng);
      const Vector path = mlp::predict_path(m, {row.data(), 6}, {base.data(), 6}, order);
      REQUIRE(path.size() == 7);
      Vector z = base;
      CHECK(path(0) == doctest::Approx(reference_forward(m, z)).epsilon(1e-12));
      for (std::size_t j = 0; j < order.size(); ++j) {
        z(static_cast<Eigen::Index>(order[j])) = row(static_cast<Eigen::Index>(order[j]));
        CHECK(path(static_cast<Eigen::Index>(j + 1)) == doctest::Approx(reference_forward(m, z)).epsilon(1e-10));
      }
    }
  }
}
