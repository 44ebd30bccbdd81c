#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "lasermon/attribution.hpp"
#include "lasermon/error.hpp"
#include "lasermon/forest.hpp"
#include "lasermon/rng.hpp"
#include "oracles.hpp"

using namespace lasermon;
using namespace lasermon::attribution;

namespace {

using RowFn = std::function<double(const std::vector<double>&)>;

BatchPredictor batch_of(RowFn f) {
  return [f](const Matrix& rows) {
    Vector out(rows.rows());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      std::vector<double> r(rows.row(i).data(), rows.row(i).data() + rows.cols());
      out(i) = f(r);
    }
    return out;
  };
}

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

std::vector<std::vector<double>> random_rows(std::size_t n, std::size_t d, std::uint64_t seed, double lo = -1.0,
                                             double hi = 1.0) {
  Engine eng = make_engine(seed);
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (auto& r : rows) {
    for (double& v : r) v = uniform(eng, lo, hi);
  }
  return rows;
}

// A d = 10 tree ensemble fitted to a nonlinear target.
struct TreeInstance {
  forest::Ensemble model;
  std::vector<double> x;
  std::vector<std::vector<double>> background;
  std::vector<double> exact;

  RowFn fn() const {
    return [this](const std::vector<double>& z) { return model.predict(z); };
  }
};

TreeInstance tree_instance(std::uint64_t seed) {
  const auto train = random_rows(300, 10, seed);
  Vector y(300);
  for (std::size_t i = 0; i < 300; ++i) {
    const auto& r = train[i];
    y(static_cast<Eigen::Index>(i)) = 3 * r[0] + 2 * r[1] * r[2] - r[3] * r[3] + (r[4] > 0 ? 1.5 : -0.5) + 0.5 * r[5];
  }
  auto cfg = forest::extra_trees_defaults();
  cfg.n_trees = 10;
  cfg.seed = seed;
  TreeInstance t{forest::fit_extra_trees(to_matrix(train), y, cfg), random_rows(1, 10, seed + 1000)[0],
                 random_rows(20, 10, seed + 2000), {}};
  t.exact = oracle::brute_force_shapley(t.fn(), t.x, t.background);
  return t;
}

}  // namespace

TEST_CASE("exact: linear model has the closed form w_i (x_i - mean b_i)") {
  const std::vector<double> w = {2.0, -1.0, 0.5, 3.0};
  RowFn f = [&](const std::vector<double>& z) { return std::inner_product(w.begin(), w.end(), z.begin(), 0.7); };
  const auto bg = random_rows(7, 4, 1);
  const std::vector<double> x = {1.0, 2.0, -1.0, 0.3};
  const Vector phi = shapley_exact(batch_of(f), x, to_matrix(bg));
  for (std::size_t i = 0; i < 4; ++i) {
    double mean = 0.0;
    for (const auto& b : bg) mean += b[i] / 7.0;
    CHECK(phi(static_cast<Eigen::Index>(i)) == doctest::Approx(w[i] * (x[i] - mean)).epsilon(1e-12));
  }
}

TEST_CASE("exact: dummy feature gets exactly zero") {
  RowFn f = [](const std::vector<double>& z) { return std::sin(z[0]) * z[2] + z[3]; };
  const Vector phi = shapley_exact(batch_of(f), std::vector<double>{0.3, 9.0, -1.2, 2.0}, to_matrix(random_rows(5, 4, 2)));
  CHECK(phi(1) == 0.0);
}

TEST_CASE("exact: z0 z1 + z2 at (1,1,1) over a zero background") {
  RowFn f = [](const std::vector<double>& z) { return z[0] * z[1] + z[2]; };
  const Vector phi = shapley_exact(batch_of(f), std::vector<double>{1, 1, 1}, Matrix::Zero(1, 3));
  CHECK(phi(0) == doctest::Approx(0.5));
  CHECK(phi(1) == doctest::Approx(0.5));
  CHECK(phi(2) == doctest::Approx(1.0));
}

TEST_CASE("exact agrees with the brute-force definition") {
  RowFn f = [](const std::vector<double>& z) {
    return z[0] * z[1] * z[2] + std::exp(0.3 * z[3]) - z[4] * std::abs(z[5]) + (z[1] > z[4] ? 1.0 : 0.0);
  };
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto bg = random_rows(6, 6, seed);
    const auto x = random_rows(1, 6, seed + 50)[0];
    const Vector phi = shapley_exact(batch_of(f), x, to_matrix(bg));
    const auto ref = oracle::brute_force_shapley(f, x, bg);
    for (std::size_t i = 0; i < 6; ++i) CHECK(phi(static_cast<Eigen::Index>(i)) == doctest::Approx(ref[i]).epsilon(1e-10));
  }
}

TEST_CASE("exact: efficiency and symmetry") {
  RowFn f = [](const std::vector<double>& z) { return z[0] * z[1] + std::tanh(z[2] + z[3]) + z[4] * z[4]; };
  auto bg = random_rows(10, 5, 3);
  for (auto& b : bg) b[1] = b[0];
  const std::vector<double> x = {0.4, 0.4, -0.2, 0.9, 1.1};
  const Vector phi = shapley_exact(batch_of(f), x, to_matrix(bg));
  double base = 0.0;
  for (const auto& b : bg) base += f(b) / 10.0;
  CHECK(std::abs(phi.sum() + base - f(x)) <= 1e-8);
  CHECK(phi(0) == doctest::Approx(phi(1)).epsilon(1e-12));
}

TEST_CASE("exact: restricting players holds the rest at the explained row") {
  RowFn f = [](const std::vector<double>& z) { return z[0] * z[3] + z[1] - z[2] * z[3]; };
  const auto bg = random_rows(4, 4, 8);
  const std::vector<double> x = {1.0, -2.0, 0.5, 3.0};
  const std::vector<std::size_t> players = {0, 2};
  const Vector phi = shapley_exact(batch_of(f), x, to_matrix(bg), players);
  REQUIRE(phi.size() == 4);
  CHECK(phi(1) == 0.0);
  CHECK(phi(3) == 0.0);
  RowFn g = [&](const std::vector<double>& z) { return f({z[0], x[1], z[1], x[3]}); };
  std::vector<std::vector<double>> bg2;
  for (const auto& b : bg) bg2.push_back({b[0], b[2]});
  const auto ref = oracle::brute_force_shapley(g, {x[0], x[2]}, bg2);
  CHECK(phi(0) == doctest::Approx(ref[0]));
  CHECK(phi(2) == doctest::Approx(ref[1]));
}

TEST_CASE("exact refuses more than 20 players") {
  RowFn f = [](const std::vector<double>& z) { return z[0]; };
  CHECK_THROWS_AS(shapley_exact(batch_of(f), std::vector<double>(21, 0.0), Matrix::Zero(1, 21)), CapacityError);
}

TEST_CASE("path_from_batch walks the path coordinate by coordinate") {
  RowFn f = [](const std::vector<double>& z) { return z[0] + 10 * z[1] + 100 * z[2]; };
  const auto path = path_from_batch(batch_of(f));
  const std::vector<double> row = {1, 1, 1}, base = {0, 0, 0};
  const std::vector<std::size_t> order = {2, 0, 1};
  const Vector out = path(row, base, order);
  REQUIRE(out.size() == 4);
  CHECK(out(0) == 0.0);
  CHECK(out(1) == 100.0);
  CHECK(out(2) == 101.0);
  CHECK(out(3) == 111.0);
}

TEST_CASE("sampled: tree ensembles with d = 10 match enumeration within 5% of max |phi|") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = tree_instance(seed);
    const auto s = shapley_sampled(path_from_batch(batch_of(t.fn())), t.x, to_matrix(t.background), 2000, seed);
    double scale = 0.0;
    for (double v : t.exact) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(std::abs(s.phi(static_cast<Eigen::Index>(i)) - t.exact[i]) <= 0.05 * (scale + 1e-9));
    }
  }
}

TEST_CASE("sampled: linear model converges to the closed form") {
  const std::vector<double> w = {1.0, -2.0, 0.5, 4.0, -3.0};
  RowFn f = [&](const std::vector<double>& z) { return std::inner_product(w.begin(), w.end(), z.begin(), 0.0); };
  const auto bg = random_rows(10, 5, 4);
  const auto x = random_rows(1, 5, 5, 4.0, 6.0)[0];
  const auto s = shapley_sampled(path_from_batch(batch_of(f)), x, to_matrix(bg), 4000, 1);
  for (std::size_t i = 0; i < 5; ++i) {
    double mean = 0.0;
    for (const auto& b : bg) mean += b[i] / 10.0;
    CHECK(s.phi(static_cast<Eigen::Index>(i)) == doctest::Approx(w[i] * (x[i] - mean)).epsilon(0.02));
  }
}

TEST_CASE("sampled: dummy feature stays within three standard errors") {
  RowFn f = [](const std::vector<double>& z) { return z[0] * z[1] + std::sin(3 * z[2]); };
  const auto s = shapley_sampled(path_from_batch(batch_of(f)), std::vector<double>{0.5, -0.7, 0.2, 5.0},
                                 to_matrix(random_rows(20, 4, 6)), 500, 2);
  CHECK(std::abs(s.phi(3)) <= 3.0 * s.std_error(3));
  CHECK(s.std_error(0) > 0.0);
}

TEST_CASE("sampled: the mean over 50 seeds is unbiased") {
  const auto t = tree_instance(11);
  const auto path = path_from_batch(batch_of(t.fn()));
  const Matrix bg = to_matrix(t.background);
  const int runs = 50;
  std::vector<double> sum(10, 0.0), sum_sq(10, 0.0);
  for (int r = 0; r < runs; ++r) {
    const auto s = shapley_sampled(path, t.x, bg, 40, 1000 + static_cast<std::uint64_t>(r));
    for (std::size_t i = 0; i < 10; ++i) {
      const double v = s.phi(static_cast<Eigen::Index>(i));
      sum[i] += v;
      sum_sq[i] += v * v;
    }
  }
  for (std::size_t i = 0; i < 10; ++i) {
    const double mean = sum[i] / runs;
    const double var = (sum_sq[i] - runs * mean * mean) / (runs - 1);
    const double se = std::sqrt(std::max(0.0, var) / runs);
    CHECK(std::abs(mean - t.exact[i]) <= 2.0 * se + 1e-12);
  }
}

TEST_CASE("sampled: the reported standard error tracks the observed spread") {
  const auto t = tree_instance(3);
  const auto path = path_from_batch(batch_of(t.fn()));
  const Matrix bg = to_matrix(t.background);
  const auto one = shapley_sampled(path, t.x, bg, 200, 1);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto idx = static_cast<Eigen::Index>(i);
    CHECK(std::abs(one.phi(idx) - t.exact[i]) <= 4.0 * one.std_error(idx) + 1e-12);
  }
}

TEST_CASE("sampled: fixed seed gives identical results") {
  const auto t = tree_instance(2);
  const auto path = path_from_batch(batch_of(t.fn()));
  const Matrix bg = to_matrix(t.background);
  const auto a = shapley_sampled(path, t.x, bg, 100, 7);
  const auto b = shapley_sampled(path, t.x, bg, 100, 7);
  const auto c = shapley_sampled(path, t.x, bg, 100, 8);
  CHECK(a.phi == b.phi);
  CHECK(a.std_error == b.std_error);
  CHECK(a.phi != c.phi);
}

TEST_CASE("explain: base value, exact efficiency on every row, thread independence") {
  RowFn f = [](const std::vector<double>& z) { return z[0] * z[1] - z[2] + std::cos(z[3]); };
  const auto predict = batch_of(f);
  const Matrix rows = to_matrix(random_rows(6, 4, 9));
  const Matrix bg = to_matrix(random_rows(12, 4, 10));
  AttributionConfig c;
  c.mode = Mode::exact;
  const auto r = explain(predict, path_from_batch(predict), rows, bg, c);
  CHECK(r.base_value == doctest::Approx(predict(bg).mean()));
  const Vector out = predict(rows);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) CHECK(std::abs(r.phi.row(i).sum() + r.base_value - out(i)) <= 1e-8);
  CHECK(r.explained == rows);

  c.mode = Mode::sampled;
  c.permutations = 50;
  c.seed = 3;
  const auto one = explain(predict, path_from_batch(predict), rows, bg, c);
  c.threads = 3;
  const auto three = explain(predict, path_from_batch(predict), rows, bg, c);
  CHECK(one.phi == three.phi);
}

TEST_CASE("background indices") {
  const auto a = background_indices(500, 100, 4);
  CHECK(a.size() == 100);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 100);
  CHECK(a.back() < 500);
  CHECK(a == background_indices(500, 100, 4));
  CHECK(a != background_indices(500, 100, 5));
  const auto all = background_indices(30, 100, 4);
  CHECK(all.size() == 30);
  CHECK(all.front() == 0);
  CHECK(all.back() == 29);
}

TEST_CASE("global importance examples") {
  Matrix one(1, 3);
  one << -2.0, 0.5, 1.0;
  auto g = global_importance(one);
  CHECK(g.scores == std::vector<double>{2.0, 0.5, 1.0});
  CHECK(g.ranking == std::vector<std::size_t>{0, 2, 1});

  Matrix two(2, 4);
  two << 1.0, 0.0, 0.0, 0.5, -1.0, 0.0, 0.0, 0.5;
  g = global_importance(two);
  CHECK(g.scores[0] == 1.0);
  CHECK(g.scores[1] == 0.0);
  // zeros keep catalog order at the end
  CHECK(g.ranking == std::vector<std::size_t>{0, 3, 1, 2});
  CHECK_THROWS_AS(global_importance(Matrix(0, 3)), ValidationError);
}

TEST_CASE("top-k selection") {
  Matrix phi(1, 5);
  phi << 0.1, 3.0, 0.2, 2.0, 0.0;
  const auto g = global_importance(phi);
  CHECK(select_top_k(g, 1) == std::vector<std::size_t>{1});
  const auto all = select_top_k(g, 5);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 5);
  CHECK_THROWS_AS(select_top_k(g, 0), ValidationError);
  CHECK_THROWS_AS(select_top_k(g, 6), ValidationError);
}

TEST_CASE("ablation sweep") {
  const Retrain retrain = [](std::size_t k) {
    return std::vector<AblationPoint>{{k, "(a) milling", 1.0 / static_cast<double>(k), 0.0},
                                      {k, "(b) grinding", 0.5, 0.1}};
  };
  const std::vector<std::size_t> ks = {1, 5, 20};
  const auto points = ablation_sweep(ks, retrain);
  REQUIRE(points.size() == 6);
  CHECK(points[0].k == 1);
  CHECK(points[5].k == 20);
  CHECK(points[5].setting == "(b) grinding");
  const std::vector<std::size_t> zero = {0, 5};
  CHECK_THROWS_AS(ablation_sweep(zero, retrain), ValidationError);
  const std::vector<std::size_t> unsorted = {5, 1};
  CHECK_THROWS_AS(ablation_sweep(unsorted, retrain), ValidationError);
}
