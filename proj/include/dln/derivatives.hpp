#pragma once

#include <string>
#include <vector>

#include "dln/model.hpp"

namespace dln {

// Parameters are stacked as (vec(W_{H+1}^T), ..., vec(W_1^T)); each layer
// segment lists that layer's entries row by row.
struct LayerSpan {
  int layer = 0;   // 1-based layer index k
  int offset = 0;  // start position in the stacked vector
  int size = 0;    // d_k * d_{k-1}
};

inline std::vector<LayerSpan> param_layout(const NetworkShape& shape) {
  std::vector<LayerSpan> spans;
  int off = 0;
  for (int k = shape.hidden_count() + 1; k >= 1; --k) {
    const int n = shape.widths[k] * shape.widths[k - 1];
    spans.push_back({k, off, n});
    off += n;
  }
  return spans;
}

inline int param_count(const NetworkShape& shape) {
  int n = 0;
  for (int k = 1; k <= shape.hidden_count() + 1; ++k)
    n += shape.widths[k] * shape.widths[k - 1];
  return n;
}

inline VectorReal stack_weights(const WeightStack& w) {
  VectorReal theta(param_count(w.shape));
  for (const LayerSpan& s : param_layout(w.shape))
    theta.segment(s.offset, s.size) = flatten_rows(w.layer(s.layer));
  return theta;
}

inline WeightStack unstack_weights(const VectorReal& theta,
                                   const NetworkShape& shape) {
  if (theta.size() != param_count(shape))
    throw ShapeError("unstack_weights: parameter vector size mismatch");
  WeightStack w = zero_stack(shape);
  for (const LayerSpan& s : param_layout(shape))
    w.layer(s.layer) = unflatten_rows(theta.segment(s.offset, s.size),
                                      shape.widths[s.layer],
                                      shape.widths[s.layer - 1]);
  return w;
}

// Per-layer loss derivatives; block k is d_k x d_{k-1}, laid out so that
// flatten_rows(block k) is the corresponding stacked-gradient segment.
struct GradientBlocks {
  std::vector<MatrixReal> blocks;  // index k-1 holds layer k
  double stacked_norm = 0.0;

  VectorReal stacked(const NetworkShape& shape) const {
    VectorReal g(param_count(shape));
    for (const LayerSpan& s : param_layout(shape))
      g.segment(s.offset, s.size) = flatten_rows(blocks[s.layer - 1]);
    return g;
  }
};

// Analytic gradient: block k equals
//   (W_{H+1}...W_{k+1})^T (Ybar - Y) (W_{k-1}...W_1 X)^T,
// the matrix form of the Kronecker contraction
//   (W_{H+1}...W_{k+1} (x) (W_{k-1}...W_1 X)^T)^T vec(r).
inline GradientBlocks gradient(const WeightStack& w, const DatasetPair& data) {
  w.validate();
  const int top = w.shape.hidden_count() + 1;
  if (data.input_dim() != w.shape.input_dim() ||
      data.output_dim() != w.shape.output_dim())
    throw ShapeError("gradient: data dimensions do not match network shape");

  // prefix[k] = W_k...W_1 X (prefix[0] = X); suffix[k] = W_{H+1}...W_{k+1}
  std::vector<MatrixReal> prefix(top + 1), suffix(top + 1);
  prefix[0] = data.X;
  for (int k = 1; k <= top; ++k) prefix[k] = w.layer(k) * prefix[k - 1];
  suffix[top] = MatrixReal::Identity(w.shape.output_dim(), w.shape.output_dim());
  for (int k = top - 1; k >= 0; --k) suffix[k] = suffix[k + 1] * w.layer(k + 1);

  const MatrixReal residual = prefix[top] - data.Y;
  GradientBlocks out;
  out.blocks.resize(top);
  double sq = 0.0;
  for (int k = 1; k <= top; ++k) {
    out.blocks[k - 1] = suffix[k].transpose() * residual * prefix[k - 1].transpose();
    sq += out.blocks[k - 1].squaredNorm();
  }
  out.stacked_norm = std::sqrt(sq);
  return out;
}

// Diagonal Hessian block for layer k:
//   (W_{H+1}...W_{k+1})^T (W_{H+1}...W_{k+1}) (x) (W_{k-1}...W_1 X)(W_{k-1}...W_1 X)^T.
// A Kronecker product of two Gram matrices, hence positive semidefinite.
inline MatrixReal hessian_diag_block(const WeightStack& w,
                                     const DatasetPair& data, int k) {
  const int top = w.shape.hidden_count() + 1;
  if (k < 1 || k > top) throw ShapeError("hessian_diag_block: layer index out of range");
  const MatrixReal above = layer_product(w, top, k + 1);
  const MatrixReal below = layer_product(w, k - 1, 1) * data.X;
  return kron(above.transpose() * above, below * below.transpose());
}

// Cross block between layer 1 and layer k (k >= 2), oriented with W_1 rows
// and W_k columns:
//   (C^T A_k (x) X (W_{k-1}...W_1 X)^T)
//   + [ B_k^T (x) X (r A_k)_{.,1} | ... | B_k^T (x) X (r A_k)_{.,d_k} ]
// with A_k = W_{H+1}...W_{k+1}, B_k = W_{k-1}...W_2, C = W_{H+1}...W_2.
inline MatrixReal hessian_offdiag_block_k1(const WeightStack& w,
                                           const DatasetPair& data, int k) {
  const int top = w.shape.hidden_count() + 1;
  if (k < 2 || k > top)
    throw ShapeError("hessian_offdiag_block_k1: layer index out of range");
  const MatrixReal a_k = layer_product(w, top, k + 1);
  const MatrixReal b_k = layer_product(w, k - 1, 2);
  const MatrixReal c = layer_product(w, top, 2);
  const MatrixReal below = layer_product(w, k - 1, 1) * data.X;
  const MatrixReal r = error_matrix(w, data);

  MatrixReal block = kron(c.transpose() * a_k, data.X * below.transpose());
  const MatrixReal ra = r * a_k;  // m x d_k
  const int dk = w.shape.widths[k];
  const int dkm1 = w.shape.widths[k - 1];
  for (int t = 0; t < dk; ++t) {
    const MatrixReal xv = data.X * ra.col(t);  // d_x x 1
    block.middleCols(static_cast<Eigen::Index>(t) * dkm1, dkm1) +=
        kron(b_k.transpose(), xv);
  }
  return block;
}

enum class BlockProvenance { analytic, finite_difference };

// Full second derivative over the stacked parameters, with per-block
// provenance (which blocks came from closed forms, which from central
// differences of the analytic gradient).
struct HessianMatrix {
  int dim = 0;
  MatrixReal matrix;  // symmetric after assembly
  std::vector<LayerSpan> block_index;
  // provenance[i][j] for block row i, column j in block_index order
  std::vector<std::vector<BlockProvenance>> provenance;
  double asymmetry_rel = 0.0;        // ||H - H^T||_F / ||H||_F before symmetrization
  double fd_crosscheck_max_rel = 0.0;  // analytic blocks vs FD of the gradient

  const LayerSpan& span_of(int layer) const {
    for (const LayerSpan& s : block_index)
      if (s.layer == layer) return s;
    throw ShapeError("span_of: no such layer");
  }
  MatrixReal block(int row_layer, int col_layer) const {
    const LayerSpan& r = span_of(row_layer);
    const LayerSpan& c = span_of(col_layer);
    return matrix.block(r.offset, c.offset, r.size, c.size);
  }
};

namespace detail {

// Central differences of the analytic gradient, column per parameter.
// Step scales with the entry: step * (1 + |theta_j|).
inline MatrixReal fd_jacobian_of_gradient(const WeightStack& w,
                                          const DatasetPair& data, double step) {
  const VectorReal theta = stack_weights(w);
  const int n = static_cast<int>(theta.size());
  MatrixReal jac(n, n);
  for (int j = 0; j < n; ++j) {
    const double h = step * (1.0 + std::abs(theta(j)));
    VectorReal tp = theta, tm = theta;
    tp(j) += h;
    tm(j) -= h;
    const VectorReal gp =
        gradient(unstack_weights(tp, w.shape), data).stacked(w.shape);
    const VectorReal gm =
        gradient(unstack_weights(tm, w.shape), data).stacked(w.shape);
    jac.col(j) = (gp - gm) / (2.0 * h);
  }
  return jac;
}

inline double block_rel_diff(const MatrixReal& a, const MatrixReal& b) {
  return (a - b).norm() / (1.0 + std::max(a.norm(), b.norm()));
}

}  // namespace detail

inline HessianMatrix full_hessian(const WeightStack& w, const DatasetPair& data,
                                  const ToleranceConfig& cfg,
                                  std::size_t element_budget = kElementBudget) {
  w.validate();
  const int top = w.shape.hidden_count() + 1;
  HessianMatrix out;
  out.block_index = param_layout(w.shape);
  out.dim = param_count(w.shape);
  if (static_cast<std::size_t>(out.dim) * out.dim > element_budget)
    throw BudgetError("full_hessian: " + std::to_string(out.dim) + "^2 elements "
                      "exceed the budget");

  out.matrix = MatrixReal::Zero(out.dim, out.dim);
  const int nblocks = top;
  out.provenance.assign(nblocks,
                        std::vector<BlockProvenance>(nblocks, BlockProvenance::analytic));

  for (int k = 1; k <= top; ++k) {
    const LayerSpan& s = out.span_of(k);
    out.matrix.block(s.offset, s.offset, s.size, s.size) =
        hessian_diag_block(w, data, k);
  }
  const LayerSpan& s1 = out.span_of(1);
  for (int k = 2; k <= top; ++k) {
    const LayerSpan& sk = out.span_of(k);
    const MatrixReal b = hessian_offdiag_block_k1(w, data, k);
    out.matrix.block(s1.offset, sk.offset, s1.size, sk.size) = b;
    out.matrix.block(sk.offset, s1.offset, sk.size, s1.size) = b.transpose();
  }

  // FD of the analytic gradient: fills the blocks the closed forms do not
  // cover and cross-checks the ones they do.
  const MatrixReal jac = detail::fd_jacobian_of_gradient(w, data, cfg.fd_step);
  for (int a = 2; a <= top; ++a) {
    for (int b = 2; b <= top; ++b) {
      if (a == b) continue;
      const LayerSpan& sa = out.span_of(a);
      const LayerSpan& sb = out.span_of(b);
      out.matrix.block(sa.offset, sb.offset, sa.size, sb.size) =
          jac.block(sa.offset, sb.offset, sa.size, sb.size);
    }
  }
  for (int i = 0; i < nblocks; ++i) {
    for (int j = 0; j < nblocks; ++j) {
      const int la = out.block_index[i].layer;
      const int lb = out.block_index[j].layer;
      const bool analytic = (la == lb) || la == 1 || lb == 1;
      out.provenance[i][j] = analytic ? BlockProvenance::analytic
                                      : BlockProvenance::finite_difference;
      if (analytic) {
        const LayerSpan& sa = out.block_index[i];
        const LayerSpan& sb = out.block_index[j];
        const double rel = detail::block_rel_diff(
            out.matrix.block(sa.offset, sb.offset, sa.size, sb.size),
            jac.block(sa.offset, sb.offset, sa.size, sb.size));
        out.fd_crosscheck_max_rel = std::max(out.fd_crosscheck_max_rel, rel);
      }
    }
  }

  const double hnorm = out.matrix.norm();
  out.asymmetry_rel =
      hnorm > 0.0 ? (out.matrix - out.matrix.transpose()).norm() / hnorm : 0.0;
  out.matrix = 0.5 * (out.matrix + out.matrix.transpose()).eval();
  return out;
}

// Central-difference gradient of the loss; the independent first-order oracle.
inline GradientBlocks fd_gradient(const WeightStack& w, const DatasetPair& data,
                                  double step) {
  if (!(step > 0.0)) throw ShapeError("fd_gradient: step must be positive");
  const VectorReal theta = stack_weights(w);
  const int n = static_cast<int>(theta.size());
  VectorReal g(n);
  for (int j = 0; j < n; ++j) {
    const double h = step * (1.0 + std::abs(theta(j)));
    VectorReal tp = theta, tm = theta;
    tp(j) += h;
    tm(j) -= h;
    g(j) = (loss(unstack_weights(tp, w.shape), data) -
            loss(unstack_weights(tm, w.shape), data)) /
           (2.0 * h);
  }
  GradientBlocks out;
  out.blocks.resize(w.shape.hidden_count() + 1);
  for (const LayerSpan& s : param_layout(w.shape))
    out.blocks[s.layer - 1] =
        unflatten_rows(g.segment(s.offset, s.size), w.shape.widths[s.layer],
                       w.shape.widths[s.layer - 1]);
  out.stacked_norm = g.norm();
  return out;
}

// Second central differences of the loss alone; the independent
// second-order oracle (never touches the analytic gradient).
inline HessianMatrix fd_hessian(const WeightStack& w, const DatasetPair& data,
                                double step) {
  if (!(step > 0.0)) throw ShapeError("fd_hessian: step must be positive");
  const VectorReal theta = stack_weights(w);
  const int n = static_cast<int>(theta.size());
  const double l0 = loss(w, data);

  auto loss_at = [&](int i, double di, int j, double dj) {
    VectorReal t = theta;
    t(i) += di;
    if (j >= 0) t(j) += dj;
    return loss(unstack_weights(t, w.shape), data);
  };

  HessianMatrix out;
  out.block_index = param_layout(w.shape);
  out.dim = n;
  out.matrix = MatrixReal::Zero(n, n);
  const int nblocks = w.shape.hidden_count() + 1;
  out.provenance.assign(
      nblocks, std::vector<BlockProvenance>(nblocks, BlockProvenance::finite_difference));

  for (int i = 0; i < n; ++i) {
    const double hi = step * (1.0 + std::abs(theta(i)));
    out.matrix(i, i) =
        (loss_at(i, hi, -1, 0.0) - 2.0 * l0 + loss_at(i, -hi, -1, 0.0)) / (hi * hi);
    for (int j = i + 1; j < n; ++j) {
      const double hj = step * (1.0 + std::abs(theta(j)));
      const double v = (loss_at(i, hi, j, hj) - loss_at(i, hi, j, -hj) -
                        loss_at(i, -hi, j, hj) + loss_at(i, -hi, j, -hj)) /
                       (4.0 * hi * hj);
      out.matrix(i, j) = v;
      out.matrix(j, i) = v;
    }
  }
  return out;
}

}  // namespace dln
