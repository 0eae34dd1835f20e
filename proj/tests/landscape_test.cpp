#include <doctest.h>

#include <cmath>

#include "dln/landscape.hpp"
#include "test_util.hpp"

using namespace dln;
using namespace dln::test;

namespace {

// Internal consistency: whenever the range inclusion holds, the rank
// inequality it implies must hold too. Applied to every report the suite
// produces.
void check_condition_consistency(const NecessaryConditionsReport& rep) {
  for (const auto& row : rep.layers)
    if (row.range_inclusion_holds) CHECK(row.rank_inequality_holds);
}

CriticalPointReport classify_checked(const WeightStack& w, const DatasetPair& data,
                                     const ToleranceConfig& cfg) {
  const CriticalPointReport rep = classify_point(w, data, cfg);
  check_condition_consistency(rep.condition_report);
  return rep;
}

}  // namespace

TEST_CASE("critical product representation: zero point and random point") {
  const DatasetPair data = ref_data();
  const auto [pred0, resid0] = critical_product_representation(
      zero_stack(r2_shape()), data);
  CHECK(pred0.norm() == 0.0);
  CHECK(resid0 == 0.0);

  // generic non-critical point: representation residual is just reported
  const WeightStack w = random_stack(r2_shape(), 3);
  const auto [pred, resid] = critical_product_representation(w, data);
  CHECK(resid > 1e-3);
}

TEST_CASE("global minimum on the bottleneck net: every quantity hand-checks") {
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();
  const GlobalMinimum gm = global_minimum(r1_shape(), data, cfg);

  MatrixReal expected_product(2, 2);
  expected_product << 0, 0, 0, 2;  // e_2 e_2^T diag(1,2)
  CHECK((gm.product - expected_product).norm() <= 1e-12);
  CHECK(rank_tol(gm.product, cfg) <= r1_shape().rank_budget());
  CHECK(gm.loss_star == doctest::Approx(0.5));
  CHECK(loss(gm.stack, data) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK((forward(gm.stack, MatrixReal::Identity(2, 2)) - gm.product).norm() <=
        1e-9);
  CHECK(gradient(gm.stack, data).stacked_norm <= 1e-8 * (1.0 + gm.product.norm()));

  const auto [pred, resid] = critical_product_representation(gm.stack, data);
  CHECK(resid <= 1e-10 * (1.0 + gm.product.norm()));

  // wide enough to fit exactly: the projector is the identity
  const GlobalMinimum full = global_minimum(NetworkShape::from_widths({2, 2, 2}),
                                            data, cfg);
  CHECK((full.product - data.Y).norm() <= 1e-12);
  CHECK(full.loss_star == doctest::Approx(0.0));
  CHECK(loss(full.stack, data) <= 1e-12);
}

TEST_CASE("global minimum beats an exhaustive rank-one grid search") {
  // Independent oracle: rank-one maps Z = s u(a) v(b)^T with the optimal
  // s = u^T Y v closed-form, swept over a dense angle grid.
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();
  const GlobalMinimum gm = global_minimum(r1_shape(), data, cfg);

  double grid_min = std::numeric_limits<double>::infinity();
  const int steps = 400;
  const double yy = data.Y.squaredNorm();
  for (int ia = 0; ia < steps; ++ia) {
    const double a = ia * M_PI / steps;
    for (int ib = 0; ib < steps; ++ib) {
      const double b = ib * M_PI / steps;
      Eigen::Vector2d u(std::cos(a), std::sin(a));
      Eigen::Vector2d v(std::cos(b), std::sin(b));
      const double s = u.transpose() * data.Y * v;
      grid_min = std::min(grid_min, 0.5 * (yy - s * s));
    }
  }
  CHECK(grid_min >= gm.loss_star - 1e-4);
  CHECK(grid_min <= gm.loss_star + 1e-4);
}

TEST_CASE("loss_star is non-increasing as the bottleneck widens") {
  const ToleranceConfig cfg;
  auto rng = make_rng(91);
  for (int trial = 0; trial < 5; ++trial) {
    DatasetPair d;
    d.X = random_gaussian(3, 6, rng);
    d.Y = random_gaussian(3, 6, rng);
    double prev = std::numeric_limits<double>::infinity();
    for (int width = 1; width <= 3; ++width) {
      const double star = global_min_loss(
          NetworkShape::from_widths({3, width, 3}), d, cfg);
      CHECK(star <= prev + 1e-12);
      prev = star;
    }
  }
}

TEST_CASE("factorize_product: zero, identity, rank-one through a bottleneck") {
  const ToleranceConfig cfg;
  const WeightStack z = factorize_product(MatrixReal::Zero(2, 2), r1_shape(), cfg);
  for (const MatrixReal& l : z.layers) CHECK(l.norm() == 0.0);

  const NetworkShape wide = NetworkShape::from_widths({2, 2, 2});
  const WeightStack id = factorize_product(MatrixReal::Identity(2, 2), wide, cfg);
  CHECK((forward(id, MatrixReal::Identity(2, 2)) - MatrixReal::Identity(2, 2))
            .norm() <= 1e-12);

  auto rng = make_rng(17);
  const MatrixReal target =
      random_gaussian(2, 1, rng) * random_gaussian(1, 2, rng);
  const NetworkShape pinched = NetworkShape::from_widths({2, 1, 2, 2});
  const WeightStack w = factorize_product(target, pinched, cfg);
  CHECK((forward(w, MatrixReal::Identity(2, 2)) - target).norm() <=
        1e-9 * (1.0 + target.norm()));

  CHECK_THROWS_AS(factorize_product(MatrixReal::Identity(2, 2), r1_shape(), cfg),
                  ShapeError);
}

TEST_CASE("bad saddle: zero gradient, zero Hessian, loss above the optimum") {
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();
  const WeightStack w = construct_bad_saddle(r2_shape(), data, cfg);

  CHECK(gradient(w, data).stacked_norm == 0.0);
  const HessianMatrix h = full_hessian(w, data, cfg);
  const SymEig eig = sym_eig(h.matrix);
  CHECK(std::max(std::abs(eig.values(0)),
                 std::abs(eig.values(eig.values.size() - 1))) <= 1e-12);
  CHECK(loss(w, data) == doctest::Approx(2.5));

  const CriticalPointReport rep = classify_checked(w, data, cfg);
  CHECK(rep.label == PointLabel::DEGENERATE_SADDLE);
  CHECK_FALSE(rep.theorem_violation);

  // explicit zero top layer is the same family member
  const WeightStack wz = construct_bad_saddle(
      r2_shape(), data, cfg, MatrixReal::Zero(2, 2));
  CHECK(gradient(wz, data).stacked_norm == 0.0);

  // deeper nets keep a free top layer
  const WeightStack w3 = construct_bad_saddle(r3_shape(), data, cfg, {}, 9);
  CHECK(w3.layer(4).norm() > 0.0);
  CHECK(gradient(w3, data).stacked_norm == 0.0);
  const HessianMatrix h3 = full_hessian(w3, data, cfg);
  CHECK(h3.matrix.norm() == 0.0);
  CHECK(loss(w3, data) == doctest::Approx(2.5));
  CHECK(classify_checked(w3, data, cfg).label == PointLabel::DEGENERATE_SADDLE);

  CHECK_THROWS_AS(construct_bad_saddle(r1_shape(), data, cfg), ShapeError);
  CHECK_THROWS_AS(
      construct_bad_saddle(r2_shape(), data, cfg, MatrixReal::Identity(2, 2)),
      ShapeError);
}

TEST_CASE("indefinite construction: critical with both eigenvalue signs") {
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();

  // H=1: the all-zero stack; frozen spectrum (2, 1, -1, -2)
  const WeightStack w1 = construct_indefinite_point(r1_shape(), data, cfg);
  CHECK(gradient(w1, data).stacked_norm == 0.0);
  const SymEig e1 = sym_eig(full_hessian(w1, data, cfg).matrix);
  CHECK(e1.values(0) == doctest::Approx(2.0));
  CHECK(e1.values(e1.values.size() - 1) == doctest::Approx(-2.0));
  CHECK(classify_checked(w1, data, cfg).label == PointLabel::STRICT_SADDLE);

  // H=2 with identity interior
  const WeightStack w2 = construct_indefinite_point(r2_shape(), data, cfg);
  CHECK((w2.layer(2) - MatrixReal::Identity(2, 2)).norm() == 0.0);
  CHECK(gradient(w2, data).stacked_norm == 0.0);
  const SymEig e2 = sym_eig(full_hessian(w2, data, cfg).matrix);
  const double band = cfg.eig_zero_tol *
                      std::max({std::abs(e2.values(0)),
                                std::abs(e2.values(e2.values.size() - 1)), 1.0});
  CHECK(e2.values(0) > band);
  CHECK(e2.values(e2.values.size() - 1) < -band);
  CHECK(classify_checked(w2, data, cfg).label == PointLabel::STRICT_SADDLE);
}

TEST_CASE("index-set critical points on the bottleneck net") {
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();

  // top index: coincides with the global minimum
  const WeightStack top = construct_index_set_critical_point(
      data, r1_shape(), {1}, cfg);
  const GlobalMinimum gm = global_minimum(r1_shape(), data, cfg);
  CHECK((forward(top, data.X) - forward(gm.stack, data.X)).norm() <= 1e-9);
  CHECK(classify_checked(top, data, cfg).label == PointLabel::GLOBAL_MIN);

  // second eigenvector: a strict saddle with hand-checkable numbers
  const WeightStack low = construct_index_set_critical_point(
      data, r1_shape(), {2}, cfg);
  MatrixReal expected(2, 2);
  expected << 1, 0, 0, 0;
  CHECK((forward(low, data.X) - expected).norm() <= 1e-10);
  CHECK(loss(low, data) == doctest::Approx(2.0));
  CHECK(gradient(low, data).stacked_norm <= 1e-10);
  const CriticalPointReport rep = classify_checked(low, data, cfg);
  CHECK(rep.label == PointLabel::STRICT_SADDLE);
  const double spectral =
      std::max(std::abs(rep.hessian_max_eig), std::abs(rep.hessian_min_eig));
  CHECK(rep.hessian_min_eig < -1e-6 * spectral);

  // the positive-semidefinite necessary disjunction fails on both branches
  CHECK_FALSE(rep.condition_report.projector_is_top);
  CHECK_FALSE(rep.condition_report.xr_zero);

  // empty set: zero product, critical, residual loss
  const WeightStack none = construct_index_set_critical_point(
      data, r1_shape(), {}, cfg);
  CHECK(forward(none, data.X).norm() == 0.0);
  CHECK(gradient(none, data).stacked_norm == 0.0);
  CHECK(loss(none, data) == doctest::Approx(2.5));

  CHECK_THROWS_AS(
      construct_index_set_critical_point(data, r1_shape(), {1, 2}, cfg),
      ShapeError);
}

TEST_CASE("classify: random points are non-critical; representation holds at minima") {
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();
  const CriticalPointReport rep =
      classify_checked(random_stack(r2_shape(), 21), data, cfg);
  CHECK(rep.label == PointLabel::NON_CRITICAL);

  const GlobalMinimum gm = global_minimum(r2_shape(), data, cfg);
  const CriticalPointReport gmrep = classify_checked(gm.stack, data, cfg);
  CHECK(gmrep.label == PointLabel::GLOBAL_MIN);
  // with p >= d_y the fit is exact, so X r = 0
  CHECK(gmrep.condition_report.xr_zero);
}

TEST_CASE("necessary conditions at the bad saddle: one branch per layer") {
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();
  const WeightStack w = construct_bad_saddle(r2_shape(), data, cfg);
  const NecessaryConditionsReport rep = necessary_conditions_report(w, data, cfg);
  check_condition_consistency(rep);
  for (const auto& row : rep.layers)
    CHECK((row.range_inclusion_holds || row.xr_annihilation_holds));
  CHECK_FALSE(rep.xr_zero);  // X r = -X Y^T != 0
}

TEST_CASE("perturbation: upstream-zero layer keeps the loss bit-identical") {
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();

  // W_3 = 0 makes every direction in layer 2 loss-preserving
  WeightStack w = zero_stack(r2_shape());
  w.layer(1)(0, 0) = 1.0;   // rank-1 W_1
  w.layer(2)(0, 1) = 1.0;   // W_2 W_1 = 0
  REQUIRE(rank_tol(w.layer(2) * w.layer(1), cfg) == 0);
  const double loss_before = loss(w, data);
  const PerturbationResult res =
      loss_preserving_rank_perturbation(w, data, 2, 1e-6, 4, cfg);
  CHECK(res.rank_increased);
  CHECK(res.rank_before == 0);
  CHECK(res.rank_after == 1);
  CHECK(loss(res.stack, data) == loss_before);
  CHECK((res.stack.layer(2) - w.layer(2)).norm() <= 1e-6 * 1.0000001);
  CHECK((res.stack.layer(1) - w.layer(1)).norm() == 0.0);
  CHECK((res.stack.layer(3) - w.layer(3)).norm() == 0.0);
}

TEST_CASE("perturbation: sequential rank raising from the bad saddle") {
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();
  const WeightStack saddle = construct_bad_saddle(r2_shape(), data, cfg);
  const double loss0 = loss(saddle, data);

  const PerturbationResult r1 =
      loss_preserving_rank_perturbation(saddle, data, 1, 1e-6, 7, cfg);
  CHECK(r1.rank_increased);
  CHECK(rank_tol(r1.stack.layer(1), cfg) == 2);  // min(d_1, d_x)
  CHECK(loss(r1.stack, data) == loss0);

  const PerturbationResult r2 =
      loss_preserving_rank_perturbation(r1.stack, data, 2, 1e-6, 8, cfg);
  CHECK(r2.rank_increased);
  CHECK(rank_tol(r2.stack.layer(2) * r2.stack.layer(1), cfg) > 0);
  CHECK(loss(r2.stack, data) == loss0);
}

TEST_CASE("perturbation: full-column-rank upstream leaves no room") {
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();
  WeightStack w = zero_stack(NetworkShape::from_widths({2, 2, 2}));
  w.layer(2) = MatrixReal::Identity(2, 2);
  CHECK_THROWS_AS(loss_preserving_rank_perturbation(w, data, 1, 1e-6, 1, cfg),
                  NoNullSpaceError);
}

TEST_CASE("perturbation: saturation is reported, perturbation still applied") {
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();
  // W_1 has rank 1, so rank(W_2 W_1) can never exceed 1 no matter how W_2 moves
  WeightStack w = zero_stack(r2_shape());
  w.layer(1)(0, 0) = 1.0;
  w.layer(2) = MatrixReal::Identity(2, 2);
  REQUIRE(rank_tol(w.layer(2) * w.layer(1), cfg) == 1);
  const double loss_before = loss(w, data);
  const PerturbationResult res =
      loss_preserving_rank_perturbation(w, data, 2, 1e-6, 5, cfg);
  CHECK_FALSE(res.rank_increased);
  CHECK(res.rank_saturated);
  CHECK(res.rank_after == res.rank_before);
  CHECK((res.stack.layer(2) - w.layer(2)).norm() > 0.0);
  CHECK(std::abs(loss(res.stack, data) - loss_before) <=
        1e-9 * (1.0 + loss_before));
}

TEST_CASE("gradient descent: immediate exit at critical starts") {
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();
  const GlobalMinimum gm = global_minimum(r1_shape(), data, cfg);
  const GdResult at_min = train_gd(gm.stack, data, 0.05, 1000, 1e-8);
  CHECK(at_min.status == GdStatus::CONVERGED);
  CHECK(at_min.trajectory.size() == 1);
  CHECK(at_min.trajectory.back().loss == doctest::Approx(0.5).epsilon(1e-9));

  // the bad saddle pins gradient descent in place
  const WeightStack saddle = construct_bad_saddle(r2_shape(), data, cfg);
  const GdResult stuck = train_gd(saddle, data, 0.05, 1000, 1e-8);
  CHECK(stuck.status == GdStatus::CONVERGED);
  CHECK(stuck.trajectory.size() == 1);
  CHECK(stuck.trajectory.back().loss == doctest::Approx(2.5));
  CHECK(stuck.trajectory.back().grad_norm == 0.0);
}

TEST_CASE("gradient descent: seeded run reaches the bottleneck optimum") {
  const DatasetPair data = ref_data();
  const WeightStack w0 = random_stack(r1_shape(), 1234);
  const GdResult res = train_gd(w0, data, 0.05, 50000, 1e-10);
  CHECK(res.status == GdStatus::CONVERGED);
  CHECK(std::abs(res.trajectory.back().loss - 0.5) <= 1e-6);
}

TEST_CASE("gradient descent: oversized steps diverge and say so") {
  const DatasetPair data = ref_data();
  const WeightStack w0 = random_stack(r1_shape(), 5678);
  const GdResult res = train_gd(w0, data, 50.0, 10000, 1e-10);
  CHECK(res.status == GdStatus::DIVERGED);
  CHECK_THROWS_AS(train_gd(w0, data, -1.0, 10, 1e-8), ShapeError);
}

TEST_CASE("every-local-min-is-global, empirically, across depths") {
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();
  const struct {
    NetworkShape shape;
    double star;
  } cases[] = {{r1_shape(), 0.5}, {r2_shape(), 0.0}, {r3_shape(), 0.0}};

  for (const auto& c : cases) {
    int converged = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const WeightStack w0 = random_stack(c.shape, 900 + seed);
      const GdResult res = train_gd(w0, data, 0.05, 60000, 1e-9);
      const GdRecord& last = res.trajectory.back();
      if (last.grad_norm <= 1e-7) {
        ++converged;
        CHECK(last.loss <= c.star + 1e-5);
      }
      if (last.grad_norm <= 1e-8) {
        const auto [pred, resid] =
            critical_product_representation(res.final_stack, data);
        CHECK(resid <= 1e-6 * (1.0 + pred.norm()));
      }
    }
    CHECK(converged == 20);
  }
}

TEST_CASE("representation residual is small at constructed critical points") {
  const ToleranceConfig cfg;
  const DatasetPair data = ref_data();
  std::vector<WeightStack> points;
  points.push_back(global_minimum(r1_shape(), data, cfg).stack);
  points.push_back(global_minimum(r2_shape(), data, cfg).stack);
  points.push_back(construct_bad_saddle(r2_shape(), data, cfg));
  points.push_back(construct_indefinite_point(r1_shape(), data, cfg));
  points.push_back(construct_indefinite_point(r2_shape(), data, cfg));
  points.push_back(construct_index_set_critical_point(data, r1_shape(), {2}, cfg));
  for (const WeightStack& w : points) {
    REQUIRE(gradient(w, data).stacked_norm <= 1e-8);
    const auto [pred, resid] = critical_product_representation(w, data);
    CHECK(resid <= 1e-6 * (1.0 + pred.norm()));

    // first-order precondition behind the representation: X r C = 0
    const MatrixReal c = layer_product(w, w.shape.hidden_count() + 1, 2);
    const MatrixReal r = error_matrix(w, data);
    const double scale = 1.0 + data.X.norm() * r.norm() * c.norm();
    CHECK((data.X * r * c).norm() <= 1e-7 * scale);
  }
}
