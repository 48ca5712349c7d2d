#include <cmath>

#include "doctest.h"
#include "widefluct/nets.hpp"
#include "widefluct/whitened.hpp"

using namespace wf;

TEST_CASE("gamma -> 0 reduces to Delta_y = y exp(-2t)") {
  TimeGrid grid(0.01, 200);
  SignalSolution sol = solve_signal(1e-9, 1.0, grid);
  for (int t = 0; t < grid.num_steps; t += 40)
    CHECK(sol.delta_y[t] == doctest::Approx(std::exp(-2.0 * grid.time(t))).epsilon(1e-7));
  CHECK(sol.k_y[0] == doctest::Approx(2.0));
}

TEST_CASE("conservation law K^2 - 4 gamma^2 f^2 = 4 to 1e-8 at dt=1e-3") {
  // Non-tautological check: the coupled integrator evolves K by its own ODE.
  TimeGrid grid(1e-3, 3000);
  for (double gamma : {0.5, 2.0}) {
    SignalSolution sol = solve_signal_coupled(gamma, 1.0, grid);
    double worst = 0.0;
    for (int t = 0; t < grid.num_steps; ++t) {
      double f = 1.0 - sol.delta_y[t];
      double residual = sol.k_y[t] * sol.k_y[t] - 4.0 * gamma * gamma * f * f - 4.0;
      worst = std::max(worst, std::abs(residual));
    }
    CHECK(worst < 1e-8);
    // And the sqrt-form trajectory coincides with the coupled one.
    SignalSolution direct = solve_signal(gamma, 1.0, grid);
    CHECK((direct.delta_y - sol.delta_y).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("time to half error decreases with gamma") {
  TimeGrid grid(0.005, 600);
  auto t_half = [&](double gamma) {
    SignalSolution sol = solve_signal(gamma, 1.0, grid);
    for (int t = 0; t < grid.num_steps; ++t)
      if (sol.delta_y[t] <= 0.5) return grid.time(t);
    return grid.time(grid.num_steps - 1);
  };
  CHECK(t_half(2.0) < t_half(1.0));
  CHECK(t_half(1.0) < t_half(0.25));
}

TEST_CASE("block values: frozen Wick moments and causality") {
  TimeGrid grid(0.02, 60);
  SignalSolution sol = solve_signal(1.0, 1.0, grid);
  WhitenedBlocks b = blocks_whitened(sol);
  CHECK(b.kappa_y(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(b.kappa_perp(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(b.d_y.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(b.d_perp.row(0).cwiseAbs().maxCoeff() == 0.0);

  SignalSolution lazy = solve_signal(1e-12, 1.0, grid);
  WhitenedBlocks bl = blocks_whitened(lazy);
  CHECK(bl.d_y.cwiseAbs().maxCoeff() < 1e-10);
  CHECK(bl.d_perp.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("propagator: kappa = 0 gives Sigma = 0; t=0 variance is 1/gamma^2") {
  TimeGrid grid(0.02, 50);
  double gamma = 1.3;
  SignalSolution sol = solve_signal(gamma, 1.0, grid);
  WhitenedBlocks b = blocks_whitened(sol);
  WhitenedBlocks zero = b;
  zero.kappa_y.setZero();
  zero.kappa_perp.setZero();
  WhitenedPropagator pz = propagator_whitened(zero, gamma, grid);
  CHECK(pz.sigma_y.cwiseAbs().maxCoeff() == 0.0);
  CHECK(pz.sigma_perp.cwiseAbs().maxCoeff() == 0.0);

  WhitenedPropagator prop = propagator_whitened(b, gamma, grid);
  // N Var(Delta_y(0)) = Var(h z)/gamma^2 = 1/gamma^2 exactly.
  CHECK(prop.sigma_y(0, 0) == doctest::Approx(1.0 / (gamma * gamma)).epsilon(1e-9));
  CHECK(prop.sigma_perp(0, 0) == doctest::Approx(1.0 / (gamma * gamma)).epsilon(1e-9));
}

TEST_CASE("Sigma_perp saturates (bounded by 10x its value at the half-error time)") {
  TimeGrid grid(0.01, 500);
  for (double gamma : {0.5, 1.0, 2.0}) {
    SignalSolution sol = solve_signal(gamma, 1.0, grid);
    WhitenedPropagator prop = propagator_whitened(blocks_whitened(sol), gamma, grid);
    int t_half = 0;
    while (t_half + 1 < grid.num_steps && sol.delta_y[t_half] > 0.5) ++t_half;
    double ref = prop.sigma_perp(t_half, t_half);
    double late = prop.sigma_perp.diagonal().tail(grid.num_steps / 4).maxCoeff();
    CHECK(late <= 10.0 * ref);
  }
}

TEST_CASE("expected_loss terms") {
  TimeGrid grid(0.02, 40);
  SignalSolution sol = solve_signal(0.8, 1.0, grid);
  WhitenedPropagator prop = propagator_whitened(blocks_whitened(sol), 0.8, grid);
  SUBCASE("P=1, N -> infinity leaves only the squared mean") {
    LossExpansion e = expected_loss(sol, prop, 1, 1 << 30);
    CHECK((e.total - e.mean_sq).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(e.orth_var.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("variance term linear in P-1") {
    LossExpansion e2 = expected_loss(sol, prop, 2, 256);
    LossExpansion e8 = expected_loss(sol, prop, 8, 256);
    CHECK(e8.orth_var[20] == doctest::Approx(7.0 * e2.orth_var[20]).epsilon(1e-12));
    CHECK_FALSE(e8.outside_validity);
    LossExpansion big = expected_loss(sol, prop, 128, 256);
    CHECK(big.outside_validity);
  }
}

TEST_CASE("online map is the identical code path under the Table-2 substitution") {
  TimeGrid grid(0.02, 40);
  double gamma = 0.9, target = 1.0;
  int width = 256;
  for (int dim : {1, 8}) {
    LossExpansion online = online_map(gamma, target, grid, dim, width);
    SignalSolution sol = solve_signal(gamma, target, grid);
    WhitenedPropagator prop = propagator_whitened(blocks_whitened(sol), gamma, grid);
    LossExpansion offline = expected_loss(sol, prop, dim, width);
    CHECK((online.total - offline.total).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("whitened ensemble cross-check at t=0 and over time") {
  // Finite two-layer linear nets on whitened data; the t=0 point pins the
  // kappa normalization exactly: <|Delta(0)|^2> = |y|^2 + P/(gamma^2 N).
  double gamma = 1.0;
  int p = 3, n = 320, e = 400;
  NetworkConfig cfg;
  cfg.depth = 1;
  cfg.width = n;
  cfg.input_dim = 16;
  cfg.gamma = gamma;
  cfg.activation = Activation::kLinear;
  Dataset data = Dataset::whitened(p, 16, 77);
  TimeGrid grid(0.02, 100);
  EnsembleRecord rec = run_ensemble(cfg, data, grid, e, 123);

  // Exact discrete mean + product-form blocks so both sides share the same
  // time discretization (no O(dt) mismatch).
  SignalSolution sol = solve_signal_discrete(gamma, 1.0, grid);
  WhitenedPropagator prop =
      propagator_whitened(blocks_whitened(sol, VpmForm::kProduct), gamma, grid);
  LossExpansion theory = expected_loss(sol, prop, p, n);

  Eigen::VectorXd ens = rec.mean("delta_sq_total");
  Eigen::VectorXd se = rec.se_mean("delta_sq_total");
  CHECK(theory.total[0] ==
        doctest::Approx(1.0 + p / (gamma * gamma * n)).epsilon(1e-9));
  int fails = 0;
  for (int t = 0; t < grid.num_steps; ++t)
    if (std::abs(theory.total[t] - ens[t]) > 4.0 * se[t] + 0.02 * std::abs(ens[t])) ++fails;
  CHECK(fails <= grid.num_steps / 10);
  // Mean trajectory agrees with the discrete mean-field map to O(1/N).
  Eigen::VectorXd dy_ens = rec.mean("Delta_y");
  Eigen::VectorXd dy_se = rec.se_mean("Delta_y");
  int mean_fails = 0;
  for (int t = 0; t < grid.num_steps; ++t)
    if (std::abs(sol.delta_y[t] - dy_ens[t]) > 4.0 * dy_se[t] + 4.0 / n) ++mean_fails;
  CHECK(mean_fails <= grid.num_steps / 10);
}
