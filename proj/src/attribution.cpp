#include "lasermon/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lasermon/error.hpp"
#include "lasermon/parallel.hpp"
#include "lasermon/rng.hpp"

namespace lasermon::attribution {

PathPredictor path_from_batch(BatchPredictor predict) {
  return [predict = std::move(predict)](std::span<const double> row, std::span<const double> baseline,
                                        std::span<const std::size_t> order) {
    const auto d = static_cast<Eigen::Index>(row.size());
    Matrix path(static_cast<Eigen::Index>(order.size()) + 1, d);
    for (Eigen::Index j = 0; j < d; ++j) path(0, j) = baseline[j];
    for (std::size_t s = 0; s < order.size(); ++s) {
      const auto r = static_cast<Eigen::Index>(s) + 1;
      path.row(r) = path.row(r - 1);
      path(r, static_cast<Eigen::Index>(order[s])) = row[order[s]];
    }
    return predict(path);
  };
}

namespace {

void check_inputs(std::span<const double> row, const Matrix& background) {
  if (background.rows() == 0) throw ValidationError("background set is empty");
  if (static_cast<std::size_t>(background.cols()) != row.size()) {
    throw ValidationError("background has " + std::to_string(background.cols()) + " columns, row has " +
                          std::to_string(row.size()));
  }
}

}  // namespace

Vector shapley_exact(const BatchPredictor& predict, std::span<const double> row, const Matrix& background,
                     std::span<const std::size_t> players) {
  check_inputs(row, background);
  std::vector<std::size_t> p(players.begin(), players.end());
  if (p.empty()) {
    p.resize(row.size());
    std::iota(p.begin(), p.end(), 0);
  }
  for (std::size_t i : p) {
    if (i >= row.size()) throw ValidationError("player index " + std::to_string(i) + " out of range");
  }
  const std::size_t d = p.size();
  if (d > kMaxExactFeatures) {
    throw CapacityError("exact Shapley enumeration supports at most " + std::to_string(kMaxExactFeatures) +
                        " features, got " + std::to_string(d));
  }

  const std::size_t coalitions = std::size_t{1} << d;
  const auto nb = background.rows();
  const auto cols = background.cols();
  std::vector<double> value(coalitions);

  // Evaluate coalitions in chunks to bound the batch size.
  const std::size_t per_chunk = std::max<std::size_t>(1, 65536 / static_cast<std::size_t>(nb));
  for (std::size_t start = 0; start < coalitions; start += per_chunk) {
    const std::size_t count = std::min(per_chunk, coalitions - start);
    Matrix batch(static_cast<Eigen::Index>(count) * nb, cols);
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t mask = start + c;
      for (Eigen::Index b = 0; b < nb; ++b) {
        const Eigen::Index r = static_cast<Eigen::Index>(c) * nb + b;
        for (Eigen::Index j = 0; j < cols; ++j) batch(r, j) = row[static_cast<std::size_t>(j)];
        for (std::size_t k = 0; k < d; ++k) {
          if (!(mask >> k & 1U)) batch(r, static_cast<Eigen::Index>(p[k])) = background(b, static_cast<Eigen::Index>(p[k]));
        }
      }
    }
    const Vector out = predict(batch);
    for (std::size_t c = 0; c < count; ++c) {
      value[start + c] = out.segment(static_cast<Eigen::Index>(c) * nb, nb).mean();
    }
  }

  // weight(s) = s! (d - s - 1)! / d!
  std::vector<double> weight(d);
  for (std::size_t s = 0; s < d; ++s) {
    weight[s] = std::exp(std::lgamma(static_cast<double>(s) + 1) + std::lgamma(static_cast<double>(d - s)) -
                         std::lgamma(static_cast<double>(d) + 1));
  }

  Vector phi = Vector::Zero(static_cast<Eigen::Index>(row.size()));
  for (std::size_t k = 0; k < d; ++k) {
    const std::size_t bit = std::size_t{1} << k;
    double acc = 0.0;
    for (std::size_t mask = 0; mask < coalitions; ++mask) {
      if (mask & bit) continue;
      const auto s = static_cast<std::size_t>(std::popcount(mask));
      acc += weight[s] * (value[mask | bit] - value[mask]);
    }
    phi[static_cast<Eigen::Index>(p[k])] = acc;
  }
  return phi;
}

SampledAttribution shapley_sampled(const PathPredictor& path, std::span<const double> row, const Matrix& background,
                                   std::size_t permutations, std::uint64_t seed) {
  check_inputs(row, background);
  if (permutations == 0) throw ValidationError("permutation count must be positive");
  const std::size_t d = row.size();
  const auto nd = static_cast<Eigen::Index>(d);
  Vector sum = Vector::Zero(nd);
  Vector sum_sq = Vector::Zero(nd);
  std::vector<std::size_t> order(d);
  std::vector<double> base(d);

  // Background rows are visited in a seeded cycle so each is used equally
  // often, and permutations come in antithetic pairs (an order and its
  // reverse share one background row). Both keep the estimator unbiased.
  const auto n_bg = static_cast<std::size_t>(background.rows());
  std::vector<std::size_t> cycle(n_bg);
  std::iota(cycle.begin(), cycle.end(), 0);
  Engine cycle_eng = make_engine(seed, {0x6379636c65ULL});
  shuffle(cycle, cycle_eng);

  // Standard errors come from pair means, the unit of independent sampling.
  Vector pair = Vector::Zero(nd);
  std::size_t units = 0;
  auto close_unit = [&](double size) {
    pair /= size;
    sum_sq += pair.cwiseProduct(pair);
    pair.setZero();
    ++units;
  };

  for (std::size_t m = 0; m < permutations; ++m) {
    const std::size_t p = m / 2;
    if (m % 2 == 0) {
      Engine eng = make_engine(seed, {p});
      std::iota(order.begin(), order.end(), 0);
      shuffle(order, eng);
      const auto b = static_cast<Eigen::Index>(cycle[p % n_bg]);
      for (std::size_t j = 0; j < d; ++j) base[j] = background(b, static_cast<Eigen::Index>(j));
    } else {
      std::reverse(order.begin(), order.end());
    }
    const Vector out = path(row, base, order);
    if (static_cast<std::size_t>(out.size()) != d + 1) throw ValidationError("path predictor returned wrong length");
    for (std::size_t s = 0; s < d; ++s) {
      const double delta = out[static_cast<Eigen::Index>(s) + 1] - out[static_cast<Eigen::Index>(s)];
      const auto i = static_cast<Eigen::Index>(order[s]);
      sum[i] += delta;
      pair[i] += delta;
    }
    if (m % 2 == 1) close_unit(2.0);
  }
  if (permutations % 2 == 1) close_unit(1.0);

  const double n = static_cast<double>(permutations);
  SampledAttribution result;
  result.phi = sum / n;
  result.std_error = Vector::Zero(nd);
  if (units > 1) {
    // Unit means are unequal in size only for a trailing unpaired draw; the
    // spread of unit means around phi is used as is.
    const double u = static_cast<double>(units);
    for (Eigen::Index i = 0; i < nd; ++i) {
      const double var = std::max(0.0, (sum_sq[i] - u * result.phi[i] * result.phi[i]) / (u - 1.0));
      result.std_error[i] = std::sqrt(var / u);
    }
  }
  return result;
}

std::vector<std::size_t> background_indices(std::size_t available, std::size_t wanted, std::uint64_t seed) {
  std::vector<std::size_t> idx(available);
  std::iota(idx.begin(), idx.end(), 0);
  if (wanted >= available) return idx;
  Engine eng = make_engine(seed, {0x626b67});
  shuffle(idx, eng);
  idx.resize(wanted);
  std::sort(idx.begin(), idx.end());
  return idx;
}

AttributionResult explain(const BatchPredictor& predict, const PathPredictor& path, const Matrix& rows,
                          const Matrix& background, const AttributionConfig& config) {
  if (background.rows() == 0) throw ValidationError("background set is empty");
  if (rows.cols() != background.cols()) throw ValidationError("explained rows and background differ in width");
  AttributionResult result;
  result.explained = rows;
  result.base_value = predict(background).mean();
  result.phi = Matrix::Zero(rows.rows(), rows.cols());

  parallel_for(static_cast<std::size_t>(rows.rows()), config.threads, [&](std::size_t r) {
    const auto ri = static_cast<Eigen::Index>(r);
    const Vector x = rows.row(ri).transpose();
    std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
    Vector phi = config.mode == Mode::exact
                     ? shapley_exact(predict, xs, background)
                     : shapley_sampled(path, xs, background, config.permutations, derive_seed(config.seed, {r})).phi;
    result.phi.row(ri) = phi.transpose();
  });
  return result;
}

GlobalImportance global_importance(const Matrix& phi) {
  if (phi.rows() == 0) throw ValidationError("no attributions to aggregate");
  GlobalImportance g;
  g.scores.resize(static_cast<std::size_t>(phi.cols()));
  for (Eigen::Index j = 0; j < phi.cols(); ++j) g.scores[static_cast<std::size_t>(j)] = phi.col(j).cwiseAbs().mean();
  g.ranking.resize(g.scores.size());
  std::iota(g.ranking.begin(), g.ranking.end(), 0);
  std::stable_sort(g.ranking.begin(), g.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return g.scores[a] > g.scores[b]; });
  return g;
}

std::vector<std::size_t> select_top_k(const GlobalImportance& importance, std::size_t k) {
  if (k == 0) throw ValidationError("k must be at least 1");
  if (k > importance.ranking.size()) {
    throw ValidationError("k = " + std::to_string(k) + " exceeds " + std::to_string(importance.ranking.size()) +
                          " ranked features");
  }
  return {importance.ranking.begin(), importance.ranking.begin() + static_cast<std::ptrdiff_t>(k)};
}

std::vector<AblationPoint> ablation_sweep(std::span<const std::size_t> ks, const Retrain& retrain) {
  if (ks.empty()) throw ValidationError("no k values given");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == 0) throw ValidationError("k must be at least 1");
    if (i > 0 && ks[i] <= ks[i - 1]) throw ValidationError("k values must be strictly ascending");
  }
  std::vector<AblationPoint> out;
  for (std::size_t k : ks) {
    auto points = retrain(k);
    for (auto& p : points) p.k = k;
    out.insert(out.end(), points.begin(), points.end());
  }
  return out;
}

}  // namespace lasermon::attribution
