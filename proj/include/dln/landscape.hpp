#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dln/derivatives.hpp"
#include "dln/model.hpp"
#include "dln/rng.hpp"

namespace dln {

// Frobenius threshold for the equality / range-inclusion checks below,
// always applied relative to (1 + natural scale of the quantity).
inline constexpr double kConditionTol = 1e-8;

// Y X^T (X X^T)^{-1}: the unconstrained least-squares map. Requires a
// numerically invertible X X^T.
inline MatrixReal least_squares_map(const DatasetPair& data,
                                    const ToleranceConfig& cfg) {
  const MatrixReal xxt = data.X * data.X.transpose();
  if (rank_tol(xxt, cfg) != data.input_dim())
    throw AssumptionError("X X^T is numerically singular");
  // solve (X X^T) Z = X Y^T, then the map is Z^T
  return xxt.ldlt().solve(data.X * data.Y.transpose()).transpose();
}

inline double loss_star_from_spectrum(const DataSpectrum& spectrum,
                                      const NetworkShape& shape,
                                      const DatasetPair& data) {
  if (!spectrum.sigma.has_value())
    throw AssumptionError("spectrum unavailable: X X^T is numerically singular");
  const int p_hat = std::min(shape.rank_budget(), data.output_dim());
  double trace_yy = data.Y.squaredNorm();
  double top_sum = 0.0;
  for (int i = 0; i < p_hat; ++i) top_sum += spectrum.eigvalues(i);
  return 0.5 * (trace_yy - top_sum);
}

// Least loss attainable by the given architecture on the given data:
// 0.5 * (tr(Y Y^T) - sum of the p_hat largest eigenvalues of Sigma).
inline double global_min_loss(const NetworkShape& shape, const DatasetPair& data,
                              const ToleranceConfig& cfg) {
  return loss_star_from_spectrum(data_spectrum(data, cfg), shape, data);
}

// Right-hand side of the critical-point identity
//   W_{H+1}...W_1 = C (C^T C)^- C^T Y X^T (X X^T)^{-1},  C = W_{H+1}...W_2,
// evaluated with the Moore-Penrose inverse, plus the Frobenius distance to
// the actual end-to-end product. Small residual certifies criticality
// structure; a nonzero residual is reported, not an error.
inline std::pair<MatrixReal, double> critical_product_representation(
    const WeightStack& w, const DatasetPair& data) {
  const ToleranceConfig cfg;  // defaults; only used for the XX^T rank gate
  const int top = w.shape.hidden_count() + 1;
  const MatrixReal lsq = least_squares_map(data, cfg);
  const MatrixReal c = layer_product(w, top, 2);
  const MatrixReal predicted =
      c * pseudoinverse(c.transpose() * c) * c.transpose() * lsq;
  const MatrixReal actual = layer_product(w, top, 1);
  return {predicted, (predicted - actual).norm()};
}

// Realizes a d_y x d_x target of rank <= p through the layer widths:
// thin SVD with the singular values split evenly across the H+1 factors,
// identity padding on the unused diagonal of interior layers.
inline WeightStack factorize_product(const MatrixReal& target,
                                     const NetworkShape& shape,
                                     const ToleranceConfig& cfg) {
  if (target.rows() != shape.output_dim() || target.cols() != shape.input_dim())
    throw ShapeError("factorize_product: target must be d_y x d_x");
  const int r = rank_tol(target, cfg);
  if (r > shape.min_hidden_width())
    throw ShapeError("factorize_product: target rank " + std::to_string(r) +
                     " exceeds the smallest hidden width " +
                     std::to_string(shape.min_hidden_width()));
  WeightStack w = zero_stack(shape);
  if (r == 0) return w;

  Eigen::JacobiSVD<MatrixReal> svd(target,
                                   Eigen::ComputeThinU | Eigen::ComputeThinV);
  const int top = shape.hidden_count() + 1;
  const VectorReal s_split =
      svd.singularValues().head(r).array().pow(1.0 / top).matrix();
  const MatrixReal u_r = svd.matrixU().leftCols(r);
  const MatrixReal v_r = svd.matrixV().leftCols(r);

  w.layer(1).topRows(r) = s_split.asDiagonal() * v_r.transpose();
  for (int k = 2; k <= top - 1; ++k) {
    MatrixReal& lk = w.layer(k);
    for (int i = 0; i < r; ++i) lk(i, i) = s_split(i);
    for (int i = r; i < std::min(lk.rows(), lk.cols()); ++i) lk(i, i) = 1.0;
  }
  w.layer(top).leftCols(r) = u_r * s_split.asDiagonal();
  return w;
}

struct GlobalMinimum {
  WeightStack stack;
  MatrixReal product;  // U_{p_hat} U_{p_hat}^T Y X^T (X X^T)^{-1}
  double loss_star = 0.0;
};

// Closed-form global minimum: project the least-squares map onto the
// span of the p_hat leading eigenvectors of Sigma, then factorize.
inline GlobalMinimum global_minimum(const NetworkShape& shape,
                                    const DatasetPair& data,
                                    const ToleranceConfig& cfg) {
  const DataSpectrum spectrum = data_spectrum(data, cfg);
  if (!spectrum.all_assumptions())
    throw AssumptionError("global_minimum requires full-rank data with "
                          "d_y <= d_x and a distinct Sigma spectrum");
  const int p_hat = shape.rank_budget();
  const MatrixReal u_top = spectrum.eigvectors.leftCols(p_hat);
  GlobalMinimum out;
  out.product = u_top * u_top.transpose() * least_squares_map(data, cfg);
  out.loss_star = loss_star_from_spectrum(spectrum, shape, data);
  out.stack = factorize_product(out.product, shape, cfg);
  return out;
}

// Critical point from an eigenvector index subset: the end-to-end product
// U_I U_I^T Y X^T (X X^T)^{-1}. The top index set {1..p_hat} recovers the
// global minimum; any other choice sits strictly above it.
inline WeightStack construct_index_set_critical_point(
    const DatasetPair& data, const NetworkShape& shape,
    const std::vector<int>& index_set, const ToleranceConfig& cfg) {
  const DataSpectrum spectrum = data_spectrum(data, cfg);
  if (!spectrum.all_assumptions())
    throw AssumptionError("index-set construction requires the full data "
                          "assumptions");
  if (static_cast<int>(index_set.size()) > shape.rank_budget())
    throw ShapeError("index set larger than the realizable rank p_hat = " +
                     std::to_string(shape.rank_budget()));
  for (std::size_t i = 0; i < index_set.size(); ++i) {
    if (index_set[i] < 1 || index_set[i] > data.output_dim())
      throw ShapeError("index out of range 1..d_y");
    if (i > 0 && index_set[i] <= index_set[i - 1])
      throw ShapeError("index set must be strictly ascending");
  }
  MatrixReal u_sel(data.output_dim(), index_set.size());
  for (std::size_t i = 0; i < index_set.size(); ++i)
    u_sel.col(i) = spectrum.eigvectors.col(index_set[i] - 1);
  const MatrixReal product =
      u_sel * u_sel.transpose() * least_squares_map(data, cfg);
  return factorize_product(product, shape, cfg);
}

// Critical point whose Hessian is exactly the zero matrix: all interior
// layers zero. With H >= 3 the top layer is free (any second-order
// perturbation still leaves a zero factor in the chain); with H = 2 a
// nonzero top layer couples W_1 and W_2 through the data term and the
// Hessian picks up eigenvalues of both signs, so the top layer must be
// zero there as well.
inline WeightStack construct_bad_saddle(
    const NetworkShape& shape, const DatasetPair& data,
    const ToleranceConfig& cfg,
    const std::optional<MatrixReal>& top_layer = std::nullopt,
    std::uint64_t seed = 0) {
  const int h = shape.hidden_count();
  if (h < 2)
    throw ShapeError("zero-Hessian saddles need H >= 2; with one hidden "
                     "layer every saddle has a strictly negative eigenvalue");
  if (rank_tol(data.Y, cfg) < 1)
    throw AssumptionError("construct_bad_saddle: Y must be nonzero");

  WeightStack w = zero_stack(shape);
  if (top_layer.has_value()) {
    if (top_layer->rows() != shape.output_dim() ||
        top_layer->cols() != shape.widths[h])
      throw ShapeError("top layer must be d_y x d_H");
    if (h == 2 && top_layer->norm() != 0.0)
      throw ShapeError("with H = 2 only the zero top layer gives a zero "
                       "Hessian; the W_1-W_2 cross term survives otherwise");
    w.layer(h + 1) = *top_layer;
  } else if (h >= 3) {
    auto rng = make_rng(derive_seed(seed, 0x6a11));
    w.layer(h + 1) = random_gaussian(shape.output_dim(), shape.widths[h], rng);
  }
  return w;
}

// Critical point with an indefinite Hessian: W_1 = W_{H+1} = 0 and a
// rank >= 1 interior product. The W_1-W_{H+1} cross block is nonzero while
// every diagonal block vanishes, forcing eigenvalues of both signs.
inline WeightStack construct_indefinite_point(const NetworkShape& shape,
                                              const DatasetPair& data,
                                              const ToleranceConfig& cfg) {
  if (rank_tol(data.X * data.Y.transpose(), cfg) < 1)
    throw AssumptionError("construct_indefinite_point: X Y^T must be nonzero");
  WeightStack w = zero_stack(shape);
  for (int k = 2; k <= shape.hidden_count(); ++k) {
    MatrixReal& lk = w.layer(k);
    for (Eigen::Index i = 0; i < std::min(lk.rows(), lk.cols()); ++i)
      lk(i, i) = 1.0;
  }
  return w;
}

// Numerical evaluation of the semidefiniteness necessary conditions at a
// point. Per layer k >= 2 the disjunction is
//   R((W_{k-1}...W_2)^T) subset of R(C^T C)   or   X r W_{H+1}...W_{k+1} = 0,
// with the rank form rank(W_{H+1}...W_k) >= rank(W_{k-1}...W_2) implied by
// the first branch. The positive-semidefinite refinement is the global pair
//   C (C^T C)^- C^T = U_pbar U_pbar^T   or   X r = 0.
struct NecessaryConditionsReport {
  struct PerLayer {
    int k = 0;
    bool range_inclusion_holds = false;
    bool xr_annihilation_holds = false;
    bool rank_inequality_holds = false;
  };
  std::vector<PerLayer> layers;  // k = 2 .. H+1
  bool projector_is_top = false;
  bool xr_zero = false;
};

inline NecessaryConditionsReport necessary_conditions_report(
    const WeightStack& w, const DatasetPair& data, const ToleranceConfig& cfg) {
  w.validate();
  const int top = w.shape.hidden_count() + 1;
  const MatrixReal r = error_matrix(w, data);
  const MatrixReal c = layer_product(w, top, 2);
  const MatrixReal gram = c.transpose() * c;
  const MatrixReal gram_proj = gram * pseudoinverse(gram);

  NecessaryConditionsReport out;
  for (int k = 2; k <= top; ++k) {
    NecessaryConditionsReport::PerLayer row;
    row.k = k;
    const MatrixReal b_k = layer_product(w, k - 1, 2);
    const double incl_resid =
        (b_k.transpose() - gram_proj * b_k.transpose()).norm();
    row.range_inclusion_holds = incl_resid <= kConditionTol * (1.0 + b_k.norm());

    const MatrixReal a_k = layer_product(w, top, k + 1);
    const double xra = (data.X * r * a_k).norm();
    row.xr_annihilation_holds =
        xra <= kConditionTol * (1.0 + data.X.norm() * r.norm() * a_k.norm());

    row.rank_inequality_holds =
        rank_tol(layer_product(w, top, k), cfg) >= rank_tol(b_k, cfg);
    out.layers.push_back(row);
  }

  const double xr_norm = (data.X * r).norm();
  out.xr_zero = xr_norm <= kConditionTol * (1.0 + data.X.norm() * r.norm());

  const DataSpectrum spectrum = data_spectrum(data, cfg);
  if (spectrum.sigma.has_value()) {
    const int p_bar = rank_tol(c, cfg);
    const MatrixReal u_pbar = spectrum.eigvectors.leftCols(p_bar);
    const MatrixReal proj_c = c * pseudoinverse(gram) * c.transpose();
    const MatrixReal proj_top = u_pbar * u_pbar.transpose();
    out.projector_is_top = (proj_c - proj_top).norm() <=
                           kConditionTol * (1.0 + proj_c.norm() + proj_top.norm());
  }
  return out;
}

enum class PointLabel { GLOBAL_MIN, STRICT_SADDLE, DEGENERATE_SADDLE, NON_CRITICAL };

inline const char* to_string(PointLabel label) {
  switch (label) {
    case PointLabel::GLOBAL_MIN: return "GLOBAL_MIN";
    case PointLabel::STRICT_SADDLE: return "STRICT_SADDLE";
    case PointLabel::DEGENERATE_SADDLE: return "DEGENERATE_SADDLE";
    case PointLabel::NON_CRITICAL: return "NON_CRITICAL";
  }
  return "?";
}

struct CriticalPointReport {
  double grad_norm = 0.0;
  double loss_value = 0.0;
  double global_min_loss = 0.0;
  double hessian_min_eig = 0.0;
  double hessian_max_eig = 0.0;
  int p_bar = 0;  // rank of W_{H+1}...W_2
  PointLabel label = PointLabel::NON_CRITICAL;
  AssumptionReport assumption_flags;
  bool assumptions_ok = false;
  NecessaryConditionsReport condition_report;
  // Raised when a point contradicts the landscape theorems: numerically
  // critical, no negative eigenvalue beyond the zero band, loss above the
  // global minimum, and either a strictly positive-definite Hessian or
  // rank(W_H...W_2) = p. Such a point would be a non-global local minimum
  // (or a bad saddle where none can exist) and deserves investigation.
  bool theorem_violation = false;
  std::string diagnostic;
};

inline double classification_margin(double loss_star) {
  return std::max(1e-6, 1e-6 * loss_star);
}

inline CriticalPointReport classify_point(const WeightStack& w,
                                          const DatasetPair& data,
                                          const ToleranceConfig& cfg) {
  const DataSpectrum spectrum = data_spectrum(data, cfg);
  if (!spectrum.sigma.has_value())
    throw AssumptionError("classify_point: X X^T is numerically singular");

  CriticalPointReport rep;
  rep.assumption_flags = to_assumption_report(spectrum);
  rep.assumptions_ok = rep.assumption_flags.all_ok();

  const GradientBlocks g = gradient(w, data);
  rep.grad_norm = g.stacked_norm;
  rep.loss_value = loss(w, data);
  rep.global_min_loss = loss_star_from_spectrum(spectrum, w.shape, data);

  const HessianMatrix hm = full_hessian(w, data, cfg);
  const SymEig eig = sym_eig(hm.matrix);
  rep.hessian_max_eig = eig.values(0);
  rep.hessian_min_eig = eig.values(eig.values.size() - 1);

  const int top = w.shape.hidden_count() + 1;
  rep.p_bar = rank_tol(layer_product(w, top, 2), cfg);
  rep.condition_report = necessary_conditions_report(w, data, cfg);

  const bool critical = rep.grad_norm <= cfg.grad_crit_tol * (1.0 + rep.loss_value);
  const double margin = classification_margin(rep.global_min_loss);
  const double band =
      cfg.eig_zero_tol *
      std::max({std::abs(rep.hessian_min_eig), std::abs(rep.hessian_max_eig), 1.0});

  if (!critical) {
    rep.label = PointLabel::NON_CRITICAL;
    return rep;
  }
  if (rep.loss_value <= rep.global_min_loss + margin) {
    rep.label = PointLabel::GLOBAL_MIN;
    return rep;
  }
  if (rep.hessian_min_eig < -band) {
    rep.label = PointLabel::STRICT_SADDLE;
    return rep;
  }
  rep.label = PointLabel::DEGENERATE_SADDLE;

  const int rank_interior = rank_tol(layer_product(w, top - 1, 2), cfg);
  const bool strictly_pd = rep.hessian_min_eig > band;
  if (strictly_pd || rank_interior == w.shape.min_hidden_width()) {
    rep.theorem_violation = true;
    rep.diagnostic =
        strictly_pd
            ? "critical point with positive-definite Hessian above the global "
              "minimum: a non-global local minimum candidate"
            : "critical point with no negative eigenvalue, loss above the "
              "global minimum, and rank(W_H...W_2) = p";
  }
  return rep;
}

// Loss-preserving perturbation of one layer. Any direction whose columns lie
// in the null space of A_k = W_{H+1}...W_{k+1} leaves the end-to-end product
// (and hence the loss) unchanged; within that space the perturbation tries to
// raise rank(W_k...W_1), deterministically first, then with seeded draws.
struct PerturbationResult {
  WeightStack stack;
  bool rank_increased = false;
  bool rank_saturated = false;  // no rank-raising direction found; the
                                // loss-preserving perturbation is applied anyway
  int rank_before = 0;
  int rank_after = 0;
};

namespace detail {

// Orthonormal directions of rowspace(b) not already in rowspace(m).
inline MatrixReal novel_row_directions(const MatrixReal& b, const MatrixReal& m,
                                       const ToleranceConfig& cfg) {
  Eigen::JacobiSVD<MatrixReal> svd_b(b, Eigen::ComputeFullV);
  const int rb = rank_tol(b, cfg);
  if (rb == 0) return MatrixReal(b.cols(), 0);
  MatrixReal vb = svd_b.matrixV().leftCols(rb);
  const int rm = rank_tol(m, cfg);
  if (rm > 0) {
    Eigen::JacobiSVD<MatrixReal> svd_m(m, Eigen::ComputeFullV);
    const MatrixReal vm = svd_m.matrixV().leftCols(rm);
    vb = vb - vm * (vm.transpose() * vb);
  }
  // keep an orthonormal basis of what survived the projection
  Eigen::JacobiSVD<MatrixReal> svd_g(vb, Eigen::ComputeThinU);
  int keep = 0;
  for (Eigen::Index i = 0; i < svd_g.singularValues().size(); ++i)
    if (svd_g.singularValues()(i) > 1e-10) ++keep;
  return svd_g.matrixU().leftCols(keep);
}

}  // namespace detail

inline PerturbationResult loss_preserving_rank_perturbation(
    const WeightStack& w, const DatasetPair& data, int k, double epsilon,
    std::uint64_t seed, const ToleranceConfig& cfg) {
  w.validate();
  data.validate();
  const int top = w.shape.hidden_count() + 1;
  if (k < 1 || k > top) throw ShapeError("perturbation: layer index out of range");
  if (!(epsilon > 0.0)) throw ShapeError("perturbation: epsilon must be positive");

  const MatrixReal a_k = layer_product(w, top, k + 1);
  Eigen::JacobiSVD<MatrixReal> svd_a(a_k, Eigen::ComputeFullV);
  const int rank_a = rank_tol(a_k, cfg);
  const int null_dim = static_cast<int>(a_k.cols()) - rank_a;
  if (null_dim == 0)
    throw NoNullSpaceError("layer " + std::to_string(k) +
                           ": upstream product has full column rank, no "
                           "loss-preserving direction exists");
  const MatrixReal null_basis = svd_a.matrixV().rightCols(null_dim);

  const MatrixReal below = layer_product(w, k - 1, 1);  // W_{k-1}...W_1
  const MatrixReal m = w.layer(k) * below;
  const int rank_before = rank_tol(m, cfg);

  auto apply = [&](const MatrixReal& delta) {
    WeightStack out = w;
    out.layer(k) += delta;
    return out;
  };
  auto raised = [&](const MatrixReal& delta) {
    return rank_tol((w.layer(k) + delta) * below, cfg) > rank_before;
  };

  std::optional<MatrixReal> fallback;

  // deterministic attempt: send null directions to fresh rows of rowspace(below)
  const MatrixReal dirs = detail::novel_row_directions(below, m, cfg);
  const int n_det = std::min<int>(null_dim, static_cast<int>(dirs.cols()));
  if (n_det > 0) {
    const MatrixReal below_pinv_t = pseudoinverse(below.transpose());
    MatrixReal delta = MatrixReal::Zero(w.layer(k).rows(), w.layer(k).cols());
    for (int j = 0; j < n_det; ++j)
      delta += null_basis.col(j) * (below_pinv_t * dirs.col(j)).transpose();
    if (delta.norm() > 0.0) {
      delta *= epsilon / delta.norm();
      fallback = delta;
      if (raised(delta)) {
        PerturbationResult res{apply(delta), true, false, rank_before, 0};
        res.rank_after = rank_tol(res.stack.layer(k) * below, cfg);
        return res;
      }
    }
  }

  constexpr int kMaxDraws = 8;
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    auto rng = make_rng(derive_seed(seed, attempt));
    MatrixReal theta = random_gaussian(null_dim, w.layer(k).cols(), rng);
    MatrixReal delta = null_basis * theta;
    if (delta.norm() == 0.0) continue;
    delta *= epsilon / delta.norm();
    if (!fallback.has_value()) fallback = delta;
    if (raised(delta)) {
      PerturbationResult res{apply(delta), true, false, rank_before, 0};
      res.rank_after = rank_tol(res.stack.layer(k) * below, cfg);
      return res;
    }
  }

  // no rank gain achievable; still return a loss-preserving perturbation
  if (!fallback.has_value()) {
    MatrixReal delta = MatrixReal::Zero(w.layer(k).rows(), w.layer(k).cols());
    delta.col(0) = null_basis.col(0);
    delta *= epsilon / delta.norm();
    fallback = delta;
  }
  PerturbationResult res{apply(*fallback), false, true, rank_before, 0};
  res.rank_after = rank_tol(res.stack.layer(k) * below, cfg);
  return res;
}

// Plain fixed-step gradient descent over the stacked parameters.
enum class GdStatus { CONVERGED, MAX_ITERS, DIVERGED };

inline const char* to_string(GdStatus s) {
  switch (s) {
    case GdStatus::CONVERGED: return "CONVERGED";
    case GdStatus::MAX_ITERS: return "MAX_ITERS";
    case GdStatus::DIVERGED: return "DIVERGED";
  }
  return "?";
}

struct GdRecord {
  int iter = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct GdResult {
  GdStatus status = GdStatus::MAX_ITERS;
  std::vector<GdRecord> trajectory;
  WeightStack final_stack;
};

inline constexpr double kDivergenceLoss = 1e12;

inline GdResult train_gd(const WeightStack& w0, const DatasetPair& data,
                         double step, int max_iters, double stop_grad_norm) {
  if (!(step > 0.0)) throw ShapeError("train_gd: step must be positive");
  GdResult out;
  out.final_stack = w0;
  VectorReal theta = stack_weights(w0);
  WeightStack w = w0;
  GradientBlocks g = gradient(w, data);
  double l = loss(w, data);
  out.trajectory.push_back({0, l, g.stacked_norm});
  if (g.stacked_norm <= stop_grad_norm) {
    out.status = GdStatus::CONVERGED;
    return out;
  }
  for (int iter = 1; iter <= max_iters; ++iter) {
    theta -= step * g.stacked(w.shape);
    w = unstack_weights(theta, w.shape);
    g = gradient(w, data);
    l = loss(w, data);
    out.trajectory.push_back({iter, l, g.stacked_norm});
    if (l > kDivergenceLoss) {
      out.status = GdStatus::DIVERGED;
      out.final_stack = w;
      return out;
    }
    if (g.stacked_norm <= stop_grad_norm) {
      out.status = GdStatus::CONVERGED;
      out.final_stack = w;
      return out;
    }
  }
  out.status = GdStatus::MAX_ITERS;
  out.final_stack = w;
  return out;
}

}  // namespace dln
