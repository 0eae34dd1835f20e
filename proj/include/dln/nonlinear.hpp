#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dln/model.hpp"
#include "dln/rng.hpp"

namespace dln {

// Materialized path enumeration is capped here; desk scale stays far below.
inline constexpr long long kPathBudget = 1'000'000;

// Stochastic-gate path model: every input-to-output path carries a Bernoulli
// activation with success probability rho, independent across samples,
// outputs, and paths, and q rescales the sum (q = 1/rho makes the
// expectation match the deep linear forward map).
struct PathModel {
  NetworkShape shape;
  long long psi_per_output = 0;  // d_x * d_1 * ... * d_H
  double rho = 1.0;
  double q = 1.0;
  std::uint64_t seed = 0;

  static PathModel make(const NetworkShape& shape, double rho,
                        std::optional<double> q = std::nullopt,
                        std::uint64_t seed = 0) {
    if (!(rho > 0.0 && rho <= 1.0))
      throw ShapeError("path model: rho must lie in (0, 1]");
    PathModel m;
    m.shape = shape;
    m.psi_per_output = shape.input_dim();
    for (int k = 1; k <= shape.hidden_count(); ++k)
      m.psi_per_output *= shape.widths[k];
    m.rho = rho;
    m.q = q.value_or(1.0 / rho);
    m.seed = seed;
    return m;
  }
};

// All (input unit, hidden unit per layer) index tuples, in lexicographic
// order, stored flat with stride H+1.
struct PathEnumeration {
  long long psi = 0;
  int tuple_len = 0;  // H+1 indices: i_0 (input), i_1 .. i_H (hidden units)
  std::vector<int> flat;

  const int* tuple(long long p) const { return flat.data() + p * tuple_len; }
};

inline PathEnumeration enumerate_paths(const NetworkShape& shape,
                                       long long budget = kPathBudget) {
  const int h = shape.hidden_count();
  long long psi = shape.input_dim();
  for (int k = 1; k <= h; ++k) psi *= shape.widths[k];
  if (psi > budget)
    throw BudgetError("enumerate_paths: " + std::to_string(psi) +
                      " paths exceed the budget of " + std::to_string(budget));

  PathEnumeration out;
  out.psi = psi;
  out.tuple_len = h + 1;
  out.flat.resize(static_cast<std::size_t>(psi) * out.tuple_len);
  std::vector<int> idx(out.tuple_len, 0);
  for (long long p = 0; p < psi; ++p) {
    for (int t = 0; t < out.tuple_len; ++t)
      out.flat[static_cast<std::size_t>(p) * out.tuple_len + t] = idx[t];
    // lexicographic increment, last coordinate fastest
    for (int t = out.tuple_len - 1; t >= 0; --t) {
      const int width = (t == 0) ? shape.input_dim() : shape.widths[t];
      if (++idx[t] < width) break;
      idx[t] = 0;
    }
  }
  return out;
}

namespace detail {

// Per (output j, path p): the product of the weights along the path, plus
// the input unit the path starts from.
struct PathTable {
  PathEnumeration paths;
  MatrixReal weight_products;   // d_y x psi
  std::vector<int> input_unit;  // psi
};

inline PathTable build_path_table(const WeightStack& w, long long budget) {
  PathTable t;
  t.paths = enumerate_paths(w.shape, budget);
  const int dy = w.shape.output_dim();
  const int h = w.shape.hidden_count();
  t.weight_products.resize(dy, t.paths.psi);
  t.input_unit.resize(t.paths.psi);
  for (long long p = 0; p < t.paths.psi; ++p) {
    const int* tup = t.paths.tuple(p);
    t.input_unit[p] = tup[0];
    double through = 1.0;
    for (int k = 1; k <= h; ++k) through *= w.layer(k)(tup[k], tup[k - 1]);
    for (int j = 0; j < dy; ++j)
      t.weight_products(j, p) = through * w.layer(h + 1)(j, tup[h]);
  }
  return t;
}

inline void check_input_rows(const NetworkShape& shape, const MatrixReal& x) {
  if (x.rows() != shape.input_dim())
    throw ShapeError("X has " + std::to_string(x.rows()) +
                     " rows, network expects " +
                     std::to_string(shape.input_dim()));
}

// One stochastic draw; gate order is sample-major, then output, then path.
inline MatrixReal sample_draw(const PathTable& t, const PathModel& model,
                              const MatrixReal& x, std::mt19937_64& rng) {
  const int dy = static_cast<int>(t.weight_products.rows());
  const int m = static_cast<int>(x.cols());
  MatrixReal out = MatrixReal::Zero(dy, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < dy; ++j) {
      double acc = 0.0;
      for (long long p = 0; p < t.paths.psi; ++p)
        if (uniform01(rng) < model.rho)
          acc += x(t.input_unit[p], i) * t.weight_products(j, p);
      out(j, i) = model.q * acc;
    }
  return out;
}

}  // namespace detail

// Deterministic all-gates-on path sum; equals forward(W, X) up to rounding.
inline MatrixReal path_sum_forward(const WeightStack& w, const MatrixReal& x,
                                   long long budget = kPathBudget) {
  detail::check_input_rows(w.shape, x);
  const detail::PathTable t = detail::build_path_table(w, budget);
  const int dy = w.shape.output_dim();
  MatrixReal out = MatrixReal::Zero(dy, x.cols());
  for (int i = 0; i < x.cols(); ++i)
    for (int j = 0; j < dy; ++j) {
      double acc = 0.0;
      for (long long p = 0; p < t.paths.psi; ++p)
        acc += x(t.input_unit[p], i) * t.weight_products(j, p);
      out(j, i) = acc;
    }
  return out;
}

// Single Monte-Carlo draw of the gated path sum.
inline MatrixReal relu_path_output_sampled(const PathModel& model,
                                           const WeightStack& w,
                                           const MatrixReal& x,
                                           std::uint64_t sample_seed,
                                           long long budget = kPathBudget) {
  if (!(w.shape == model.shape))
    throw ShapeError("relu_path_output_sampled: model and weights disagree on shape");
  detail::check_input_rows(w.shape, x);
  const detail::PathTable t = detail::build_path_table(w, budget);
  auto rng = make_rng(sample_seed);
  return detail::sample_draw(t, model, x, rng);
}

struct McResult {
  MatrixReal mean;
  MatrixReal stderr_of_mean;
  long long n_samples = 0;
  int shard_count = 0;
  std::uint64_t seed = 0;
};

// Entrywise mean and standard error over n independent draws. Draws are
// split across a fixed number of shards, one derived sub-seed per shard,
// and merged in shard order, so the result is a pure function of
// (seed, n_samples, shard_count) regardless of how shards are scheduled.
inline McResult mc_expectation(const PathModel& model, const WeightStack& w,
                               const MatrixReal& x, long long n_samples,
                               int shard_count = 8,
                               long long budget = kPathBudget) {
  if (n_samples < 2) throw ShapeError("mc_expectation: need n_samples >= 2");
  if (shard_count < 1) throw ShapeError("mc_expectation: need at least one shard");
  if (!(w.shape == model.shape))
    throw ShapeError("mc_expectation: model and weights disagree on shape");
  detail::check_input_rows(w.shape, x);
  const detail::PathTable t = detail::build_path_table(w, budget);
  const int dy = w.shape.output_dim();
  const int m = static_cast<int>(x.cols());

  // Welford accumulators, combined pairwise across shards.
  MatrixReal mean = MatrixReal::Zero(dy, m);
  MatrixReal m2 = MatrixReal::Zero(dy, m);
  long long count = 0;

  for (int s = 0; s < shard_count; ++s) {
    long long shard_n = n_samples / shard_count +
                        (s < n_samples % shard_count ? 1 : 0);
    if (shard_n == 0) continue;
    auto rng = make_rng(derive_seed(model.seed, static_cast<std::uint64_t>(s)));
    MatrixReal s_mean = MatrixReal::Zero(dy, m);
    MatrixReal s_m2 = MatrixReal::Zero(dy, m);
    for (long long d = 0; d < shard_n; ++d) {
      const MatrixReal draw = detail::sample_draw(t, model, x, rng);
      const MatrixReal delta = draw - s_mean;
      s_mean += delta / static_cast<double>(d + 1);
      s_m2 += delta.cwiseProduct(draw - s_mean);
    }
    const MatrixReal delta = s_mean - mean;
    const long long total = count + shard_n;
    mean += delta * (static_cast<double>(shard_n) / static_cast<double>(total));
    m2 += s_m2 + delta.cwiseProduct(delta) *
                     (static_cast<double>(count) * static_cast<double>(shard_n) /
                      static_cast<double>(total));
    count = total;
  }

  McResult out;
  out.mean = mean;
  out.stderr_of_mean =
      (m2 / static_cast<double>(count - 1) / static_cast<double>(count))
          .cwiseMax(0.0)
          .cwiseSqrt();
  out.n_samples = count;
  out.shard_count = shard_count;
  out.seed = model.seed;
  return out;
}

// 0.5 * || E_Z-estimate - Y ||_F^2 with the expectation taken inside the
// norm; converges to the deep linear loss as n grows.
inline double expected_loss(const PathModel& model, const WeightStack& w,
                            const DatasetPair& data, long long n_samples,
                            int shard_count = 8) {
  const McResult mc = mc_expectation(model, w, data.X, n_samples, shard_count);
  return 0.5 * (mc.mean - data.Y).squaredNorm();
}

}  // namespace dln
