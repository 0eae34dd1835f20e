#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "dln/errors.hpp"

namespace dln {

// Dense real matrices everywhere; desk scale, double precision.
using MatrixReal = Eigen::MatrixXd;
using VectorReal = Eigen::VectorXd;

// Caps the element count of dense results (Kronecker products, assembled
// Hessians). 4e6 doubles = 32 MB, far above anything at desk scale.
inline constexpr std::size_t kElementBudget = 4'000'000;

// Numerical policies shared across the toolkit. All values are relative
// tolerances except fd_step, which is scaled per entry as
// fd_step * (1 + |entry|) before use.
struct ToleranceConfig {
  double rank_rel_tol = 1e-10;  // singular-value cutoff for numerical rank
  double eig_zero_tol = 1e-8;   // eigenvalue zero band, relative to spectral norm
  double grad_crit_tol = 1e-8;  // gradient norm threshold for criticality
  double fd_step = 1e-5;        // base central-difference step

  void validate() const {
    for (double t : {rank_rel_tol, eig_zero_tol, grad_crit_tol, fd_step}) {
      if (!(t > 0.0 && t < 1.0))
        throw ShapeError("tolerances must lie strictly in (0, 1)");
    }
  }
};

inline bool is_finite(const MatrixReal& m) { return m.allFinite(); }

// vec of the transpose: stacks the rows of M into one column vector.
// This is the parameter order used for gradients and Hessian blocks.
inline VectorReal flatten_rows(const MatrixReal& m) {
  VectorReal v(m.size());
  Eigen::Index idx = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v(idx++) = m(i, j);
  return v;
}

inline MatrixReal unflatten_rows(const VectorReal& v, Eigen::Index rows,
                                 Eigen::Index cols) {
  if (v.size() != rows * cols)
    throw ShapeError("unflatten_rows: size mismatch");
  MatrixReal m(rows, cols);
  Eigen::Index idx = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v(idx++);
  return m;
}

// vec in the column-stacking sense (used when contracting Kronecker forms).
inline VectorReal flatten_cols(const MatrixReal& m) {
  VectorReal v(m.size());
  Eigen::Index idx = 0;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) v(idx++) = m(i, j);
  return v;
}

// Kronecker product; block (i,j) of the result is A(i,j) * B.
inline MatrixReal kron(const MatrixReal& a, const MatrixReal& b,
                       std::size_t element_budget = kElementBudget) {
  const std::size_t elems = static_cast<std::size_t>(a.rows()) * b.rows() *
                            a.cols() * b.cols();
  if (elems > element_budget)
    throw BudgetError("kron: result would hold " + std::to_string(elems) +
                      " elements, budget is " + std::to_string(element_budget));
  MatrixReal out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Moore-Penrose pseudoinverse via SVD. Singular values below
// max(rows, cols) * eps * sigma_max are treated as zero, so the zero
// matrix maps to the (transposed-shape) zero matrix.
inline MatrixReal pseudoinverse(const MatrixReal& m) {
  if (m.size() == 0) return MatrixReal(m.cols(), m.rows());
  Eigen::JacobiSVD<MatrixReal> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cutoff = std::max(m.rows(), m.cols()) *
                        std::numeric_limits<double>::epsilon() *
                        (sv.size() > 0 ? sv(0) : 0.0);
  VectorReal inv = VectorReal::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) inv(i) = 1.0 / sv(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

// Numerical rank: singular values above rank_rel_tol * sigma_max * max(dims).
inline int rank_tol(const MatrixReal& m, const ToleranceConfig& cfg) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<MatrixReal> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  const double cutoff =
      cfg.rank_rel_tol * sv(0) * static_cast<double>(std::max(m.rows(), m.cols()));
  int r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) ++r;
  return r;
}

struct SymEig {
  VectorReal values;   // descending
  MatrixReal vectors;  // orthogonal, column i pairs with values(i)
};

// Eigendecomposition of a (numerically) symmetric matrix. The input is
// symmetrized by averaging with its transpose before decomposition;
// eigenvalues are reported in descending order.
inline SymEig sym_eig(const MatrixReal& m) {
  if (m.rows() != m.cols())
    throw ShapeError("sym_eig: matrix is not square (" +
                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                     ")");
  const MatrixReal sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixReal> es(sym);
  SymEig out;
  out.values = es.eigenvalues().reverse();
  out.vectors = es.eigenvectors().rowwise().reverse();
  return out;
}

}  // namespace dln
