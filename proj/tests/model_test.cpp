#include <doctest.h>

#include "dln/model.hpp"
#include "dln/landscape.hpp"
#include "test_util.hpp"

using namespace dln;
using namespace dln::test;

TEST_CASE("shape: derived widths") {
  const NetworkShape s = NetworkShape::from_widths({3, 4, 2, 5, 3});
  CHECK(s.hidden_count() == 3);
  CHECK(s.input_dim() == 3);
  CHECK(s.output_dim() == 3);
  CHECK(s.min_hidden_width() == 2);
  CHECK(s.rank_budget() == 2);
  CHECK_THROWS_AS(NetworkShape::from_widths({2, 2}), ShapeError);
  CHECK_THROWS_AS(NetworkShape::from_widths({2, 0, 2}), ShapeError);
}

TEST_CASE("forward: zero weights and hand-checked product") {
  const DatasetPair data = ref_data();
  const WeightStack zero = zero_stack(r1_shape());
  CHECK(forward(zero, data.X).norm() == 0.0);

  WeightStack w = zero_stack(r1_shape());
  w.layer(1) << 1, 0;  // 1x2
  w.layer(2) << 1, 0;  // 2x1
  MatrixReal expected(2, 2);
  expected << 1, 0, 0, 0;
  CHECK((forward(w, data.X) - expected).norm() == 0.0);

  MatrixReal bad_x = MatrixReal::Zero(3, 2);
  CHECK_THROWS_AS(forward(w, bad_x), ShapeError);
}

TEST_CASE("loss: zero weights, perfect fit") {
  const DatasetPair data = ref_data();
  CHECK(loss(zero_stack(r1_shape()), data) == doctest::Approx(2.5));

  // p >= d_y with X = I: the identity through both layers fits Y exactly
  WeightStack fit = zero_stack(NetworkShape::from_widths({2, 2, 2}));
  fit.layer(1) = MatrixReal::Identity(2, 2);
  fit.layer(2) = data.Y;
  CHECK(loss(fit, data) == doctest::Approx(0.0));
}

TEST_CASE("error_matrix: zero case, perfect fit, trace identity") {
  const DatasetPair data = ref_data();
  const WeightStack zero = zero_stack(r1_shape());
  CHECK((error_matrix(zero, data) + data.Y.transpose()).norm() == 0.0);

  WeightStack fit = zero_stack(NetworkShape::from_widths({2, 2, 2}));
  fit.layer(1) = MatrixReal::Identity(2, 2);
  fit.layer(2) = data.Y;
  CHECK(error_matrix(fit, data).norm() == 0.0);

  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const RandomInstance inst = random_instance(seed);
    const MatrixReal r = error_matrix(inst.weights, inst.data);
    const double via_trace = 0.5 * (r.transpose() * r).trace();
    const double l = loss(inst.weights, inst.data);
    CHECK(std::abs(via_trace - l) <= 1e-12 * (1.0 + l));
  }
}

TEST_CASE("data_spectrum: reference instance is fully hand-checkable") {
  const ToleranceConfig cfg;
  const DataSpectrum s = data_spectrum(ref_data(), cfg);
  REQUIRE(s.sigma.has_value());
  MatrixReal expected(2, 2);
  expected << 1, 0, 0, 4;
  CHECK((*s.sigma - expected).norm() <= 1e-12);
  CHECK(s.eigvalues(0) == doctest::Approx(4.0));
  CHECK(s.eigvalues(1) == doctest::Approx(1.0));
  CHECK(std::abs(s.eigvectors(1, 0)) == doctest::Approx(1.0));  // u_1 = e_2
  CHECK(std::abs(s.eigvectors(0, 1)) == doctest::Approx(1.0));  // u_2 = e_1
  CHECK(s.xxt_full_rank);
  CHECK(s.xyt_full_rank);
  CHECK(s.dy_le_dx);
  CHECK(s.distinct_eigs);
}

TEST_CASE("data_spectrum: zero targets collapse the spectrum") {
  const ToleranceConfig cfg;
  DatasetPair d = ref_data();
  d.Y.setZero();
  const DataSpectrum s = data_spectrum(d, cfg);
  REQUIRE(s.sigma.has_value());
  CHECK(s.sigma->norm() == 0.0);
  CHECK_FALSE(s.distinct_eigs);
}

TEST_CASE("data_spectrum: random full-rank data gives a PSD Sigma") {
  const ToleranceConfig cfg;
  auto rng = make_rng(31);
  DatasetPair d;
  d.X = random_gaussian(3, 8, rng);
  d.Y = random_gaussian(2, 8, rng);
  const DataSpectrum s = data_spectrum(d, cfg);
  REQUIRE(s.sigma.has_value());
  CHECK((*s.sigma - s.sigma->transpose()).norm() <= 1e-12 * (1.0 + s.sigma->norm()));
  const MatrixReal recon = s.eigvectors *
                           s.eigvalues.asDiagonal() *
                           s.eigvectors.transpose();
  CHECK((recon - *s.sigma).norm() <= 1e-9 * (1.0 + s.sigma->norm()));
  CHECK(s.eigvalues(s.eigvalues.size() - 1) >= -1e-10 * s.eigvalues(0));

  for (int trial = 0; trial < 12; ++trial) {
    DatasetPair dr;
    dr.X = random_gaussian(2 + trial % 3, 8, rng);
    dr.Y = random_gaussian(1 + trial % 3, 8, rng);
    const DataSpectrum sr = data_spectrum(dr, cfg);
    REQUIRE(sr.sigma.has_value());
    CHECK(sr.eigvalues(sr.eigvalues.size() - 1) >= -1e-10 * sr.eigvalues(0));
  }
}

TEST_CASE("data_spectrum: singular X X^T reports instead of crashing") {
  const ToleranceConfig cfg;
  DatasetPair d;
  d.X = MatrixReal::Zero(2, 3);
  d.X(0, 0) = 1.0;  // rank-1 X
  d.Y = MatrixReal::Ones(1, 3);
  const DataSpectrum s = data_spectrum(d, cfg);
  CHECK_FALSE(s.xxt_full_rank);
  CHECK_FALSE(s.sigma.has_value());
}

TEST_CASE("check_assumptions: flags fire on the right data") {
  const ToleranceConfig cfg;
  CHECK(check_assumptions(ref_data(), cfg).all_ok());

  // d_y exceeds d_x
  DatasetPair tall;
  tall.X = MatrixReal::Identity(2, 2);
  tall.Y = MatrixReal::Ones(3, 2);
  CHECK_FALSE(check_assumptions(tall, cfg).dy_le_dx);

  // duplicated target rows make X Y^T rank deficient (Sigma = [[1,1],[1,1]]
  // still has the two distinct eigenvalues 2 and 0)
  DatasetPair dup;
  dup.X = MatrixReal::Identity(2, 2);
  dup.Y = MatrixReal::Zero(2, 2);
  dup.Y(0, 0) = 1.0;
  dup.Y(1, 0) = 1.0;
  const AssumptionReport rep = check_assumptions(dup, cfg);
  CHECK_FALSE(rep.xyt_full_rank);
  CHECK_FALSE(rep.all_ok());
  const DataSpectrum s = data_spectrum(dup, cfg);
  CHECK(s.eigvalues(0) == doctest::Approx(2.0));
  CHECK(s.eigvalues(1) == doctest::Approx(0.0));

  // equal-norm orthogonal target rows give a genuinely repeated eigenvalue
  DatasetPair rep_eig;
  rep_eig.X = MatrixReal::Identity(2, 2);
  rep_eig.Y = MatrixReal::Identity(2, 2);
  CHECK_FALSE(check_assumptions(rep_eig, cfg).distinct_eigs);
}

TEST_CASE("forward is multilinear: scaling one layer scales the output") {
  auto rng = make_rng(37);
  for (int trial = 0; trial < 50; ++trial) {
    const RandomInstance inst = random_instance(1000 + trial);
    const MatrixReal base = forward(inst.weights, inst.data.X);
    const double c = 0.25 + 2.0 * uniform01(rng);
    const int k =
        1 + static_cast<int>(uniform01(rng) * (inst.shape.hidden_count() + 1));
    WeightStack scaled = inst.weights;
    scaled.layer(k) *= c;
    const MatrixReal out = forward(scaled, inst.data.X);
    CHECK((out - c * base).norm() <= 1e-12 * (1.0 + base.norm()));
  }
}

TEST_CASE("loss is invariant under adjacent gauge transformations") {
  auto rng = make_rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const RandomInstance inst = random_instance(2000 + trial);
    const int h = inst.shape.hidden_count();
    const int k = 1 + static_cast<int>(uniform01(rng) * h);  // 1..H
    const int d = inst.shape.widths[k];
    // well-conditioned random invertible Q
    const MatrixReal q =
        random_orthogonal(d, rng) +
        0.1 * random_gaussian(d, d, rng);
    WeightStack gauged = inst.weights;
    gauged.layer(k) = q * gauged.layer(k);
    gauged.layer(k + 1) = gauged.layer(k + 1) * q.inverse();
    const double l0 = loss(inst.weights, inst.data);
    CHECK(std::abs(loss(gauged, inst.data) - l0) <= 1e-9 * (1.0 + l0));
  }
}

TEST_CASE("loss at the constructed global minimum matches the spectrum formula") {
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();
  const GlobalMinimum gm = global_minimum(r1_shape(), data, cfg);
  CHECK(loss(gm.stack, data) == doctest::Approx(0.5));
  // cross-check 0.5 * (tr(Y Y^T) - sum of top eigenvalues)
  CHECK(gm.loss_star == doctest::Approx(0.5 * (5.0 - 4.0)));
}
