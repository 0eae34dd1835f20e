#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dln/matrix.hpp"

namespace dln {

// Layer widths (d_0 = d_x, d_1, ..., d_H, d_{H+1} = d_y) of a deep linear
// network with H >= 1 hidden layers.
struct NetworkShape {
  std::vector<int> widths;

  static NetworkShape from_widths(std::vector<int> w) {
    if (w.size() < 3)
      throw ShapeError("network shape needs at least one hidden layer "
                       "(width list d_x, d_1, ..., d_y)");
    for (int d : w)
      if (d < 1) throw ShapeError("all layer widths must be >= 1");
    return NetworkShape{std::move(w)};
  }

  int hidden_count() const { return static_cast<int>(widths.size()) - 2; }
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  // p: the smallest hidden width
  int min_hidden_width() const {
    int p = widths[1];
    for (int k = 2; k <= hidden_count(); ++k) p = std::min(p, widths[k]);
    return p;
  }
  // p_hat = min(p, d_y): the rank the end-to-end map can actually realize
  int rank_budget() const { return std::min(min_hidden_width(), output_dim()); }

  bool operator==(const NetworkShape& o) const { return widths == o.widths; }
};

// Ordered per-layer weights; layer k (1-based) is widths[k] x widths[k-1].
struct WeightStack {
  NetworkShape shape;
  std::vector<MatrixReal> layers;

  const MatrixReal& layer(int k) const { return layers.at(k - 1); }
  MatrixReal& layer(int k) { return layers.at(k - 1); }

  void validate() const {
    const int n = shape.hidden_count() + 1;
    if (static_cast<int>(layers.size()) != n)
      throw ShapeError("weight stack has " + std::to_string(layers.size()) +
                       " layers, shape expects " + std::to_string(n));
    for (int k = 1; k <= n; ++k) {
      if (layers[k - 1].rows() != shape.widths[k] ||
          layers[k - 1].cols() != shape.widths[k - 1])
        throw ShapeError("layer " + std::to_string(k) + " is " +
                         std::to_string(layers[k - 1].rows()) + "x" +
                         std::to_string(layers[k - 1].cols()) + ", expected " +
                         std::to_string(shape.widths[k]) + "x" +
                         std::to_string(shape.widths[k - 1]));
      if (!is_finite(layers[k - 1]))
        throw ShapeError("layer " + std::to_string(k) + " has non-finite entries");
    }
  }
};

inline WeightStack zero_stack(const NetworkShape& shape) {
  WeightStack w{shape, {}};
  for (int k = 1; k <= shape.hidden_count() + 1; ++k)
    w.layers.push_back(MatrixReal::Zero(shape.widths[k], shape.widths[k - 1]));
  return w;
}

// Product W_hi * W_{hi-1} * ... * W_lo over layer indices; identity of
// size d_hi when hi < lo (the empty-product convention used throughout).
inline MatrixReal layer_product(const WeightStack& w, int hi, int lo) {
  const int n = w.shape.hidden_count() + 1;
  if (hi > n || lo < 1 || hi < 0)
    throw ShapeError("layer_product: index out of range");
  if (hi < lo)
    return MatrixReal::Identity(w.shape.widths[hi], w.shape.widths[hi]);
  MatrixReal acc = w.layer(hi);
  for (int k = hi - 1; k >= lo; --k) acc = acc * w.layer(k);
  return acc;
}

// Training data: X holds one input column per sample, Y one target column.
struct DatasetPair {
  MatrixReal X;  // d_x x m
  MatrixReal Y;  // d_y x m

  int samples() const { return static_cast<int>(X.cols()); }
  int input_dim() const { return static_cast<int>(X.rows()); }
  int output_dim() const { return static_cast<int>(Y.rows()); }

  void validate() const {
    if (X.cols() != Y.cols())
      throw ShapeError("X has " + std::to_string(X.cols()) +
                       " columns, Y has " + std::to_string(Y.cols()));
    if (X.cols() < 1) throw ShapeError("dataset needs at least one sample");
    if (!is_finite(X) || !is_finite(Y))
      throw ShapeError("dataset has non-finite entries");
  }
};

inline MatrixReal forward(const WeightStack& w, const MatrixReal& x) {
  if (x.rows() != w.shape.input_dim())
    throw ShapeError("forward: X has " + std::to_string(x.rows()) +
                     " rows, network expects " +
                     std::to_string(w.shape.input_dim()));
  MatrixReal acc = w.layer(1) * x;
  for (int k = 2; k <= w.shape.hidden_count() + 1; ++k) acc = w.layer(k) * acc;
  return acc;
}

namespace detail {
inline void check_output_dims(const WeightStack& w, const DatasetPair& data) {
  if (data.Y.rows() != w.shape.output_dim() || data.Y.cols() != data.X.cols())
    throw ShapeError("Y is " + std::to_string(data.Y.rows()) + "x" +
                     std::to_string(data.Y.cols()) + ", expected " +
                     std::to_string(w.shape.output_dim()) + "x" +
                     std::to_string(data.X.cols()));
}
}  // namespace detail

// Squared-error loss, un-normalized: 0.5 * ||forward(W,X) - Y||_F^2.
inline double loss(const WeightStack& w, const DatasetPair& data) {
  detail::check_output_dims(w, data);
  return 0.5 * (forward(w, data.X) - data.Y).squaredNorm();
}

// Residual transpose r = (forward(W,X) - Y)^T, one row per sample.
inline MatrixReal error_matrix(const WeightStack& w, const DatasetPair& data) {
  detail::check_output_dims(w, data);
  return (forward(w, data.X) - data.Y).transpose();
}

// Sigma = Y X^T (X X^T)^{-1} X Y^T with its eigenstructure and the data
// assumption flags. sigma is absent when X X^T is numerically singular.
struct DataSpectrum {
  std::optional<MatrixReal> sigma;
  VectorReal eigvalues;  // descending; empty when sigma is absent
  MatrixReal eigvectors;
  bool xxt_full_rank = false;
  bool xyt_full_rank = false;
  bool distinct_eigs = false;
  bool dy_le_dx = false;

  bool all_assumptions() const {
    return xxt_full_rank && xyt_full_rank && distinct_eigs && dy_le_dx;
  }
};

inline DataSpectrum data_spectrum(const DatasetPair& data,
                                  const ToleranceConfig& cfg) {
  data.validate();
  DataSpectrum out;
  out.dy_le_dx = data.output_dim() <= data.input_dim();
  const MatrixReal xyt = data.X * data.Y.transpose();
  out.xyt_full_rank =
      rank_tol(xyt, cfg) == std::min(data.input_dim(), data.output_dim());

  const MatrixReal xxt = data.X * data.X.transpose();
  out.xxt_full_rank = rank_tol(xxt, cfg) == data.input_dim();
  if (!out.xxt_full_rank) return out;

  // symmetric solve for (X X^T)^{-1} X Y^T; no explicit inverse
  const MatrixReal z = xxt.ldlt().solve(xyt);
  MatrixReal sigma = data.Y * data.X.transpose() * z;
  sigma = 0.5 * (sigma + sigma.transpose());
  const SymEig eig = sym_eig(sigma);
  out.sigma = sigma;
  out.eigvalues = eig.values;
  out.eigvectors = eig.vectors;

  const double band =
      cfg.eig_zero_tol *
      std::max(std::abs(eig.values(0)), std::abs(eig.values(eig.values.size() - 1)));
  out.distinct_eigs = true;
  for (Eigen::Index i = 0; i + 1 < eig.values.size(); ++i)
    if (eig.values(i) - eig.values(i + 1) <= band) out.distinct_eigs = false;
  return out;
}

// The four data assumptions behind the landscape theorems: X X^T and X Y^T
// full rank, d_y <= d_x, and Sigma with d_y distinct eigenvalues.
struct AssumptionReport {
  bool xxt_full_rank = false;
  bool xyt_full_rank = false;
  bool dy_le_dx = false;
  bool distinct_eigs = false;

  bool all_ok() const {
    return xxt_full_rank && xyt_full_rank && dy_le_dx && distinct_eigs;
  }
};

inline AssumptionReport to_assumption_report(const DataSpectrum& s) {
  return AssumptionReport{s.xxt_full_rank, s.xyt_full_rank, s.dy_le_dx,
                          s.distinct_eigs};
}

inline AssumptionReport check_assumptions(const DatasetPair& data,
                                          const ToleranceConfig& cfg) {
  return to_assumption_report(data_spectrum(data, cfg));
}

}  // namespace dln
