#include <cmath>

#include "doctest.h"
#include "widefluct/rng.hpp"
#include "widefluct/twolayer.hpp"
#include "widefluct/whitened.hpp"

using namespace wf;

namespace {

Eigen::VectorXd decaying_delta(const TimeGrid& grid, double gamma, double y) {
  return solve_signal_discrete(gamma, y, grid).delta_y;
}

// Quadratic-exactness trick: for linear activation every per-sample D
// contribution is a quadratic form in (v+(0), v-(0)), so averaging over the
// four sign combinations {±1}² reproduces the exact Gaussian average.
FieldSampleBatch quadratic_exact_batch(const Eigen::VectorXd& delta, double gamma,
                                       const TimeGrid& grid) {
  int T = grid.num_steps;
  double w = grid.causal_weight();
  FieldSampleBatch batch;
  batch.num_samples_p = 1;
  batch.steps = T;
  batch.activation = Activation::kLinear;
  batch.h.resize(T, 4);
  batch.z.resize(T, 4);
  batch.g.resize(T, 4);
  batch.u.resize(T, 4);
  batch.r.resize(T, 4);
  int col = 0;
  for (double vp0 : {1.0, -1.0}) {
    for (double vm0 : {1.0, -1.0}) {
      double vp = vp0, vm = vm0;
      for (int t = 0; t < T; ++t) {
        batch.h(t, col) = (vp + vm) / std::sqrt(2.0);
        batch.z(t, col) = (vp - vm) / std::sqrt(2.0);
        batch.g(t, col) = batch.z(t, col);
        vp *= 1.0 + gamma * w * delta[t];
        vm *= 1.0 - gamma * w * delta[t];
      }
      batch.u.col(col) = batch.h.col(col);
      batch.r.col(col) = batch.z.col(col);
      ++col;
    }
  }
  return batch;
}

OrderParameterSet minimal_q(const Eigen::VectorXd& delta, double gamma, const TimeGrid& grid,
                            Activation act = Activation::kLinear) {
  OrderParameterSet q;
  q.depth = 1;
  q.gamma = gamma;
  q.num_samples = 1;
  q.activation = act;
  q.grid = grid;
  q.errors.resize(1, grid.num_steps);
  q.errors.row(0) = delta.transpose();
  VpmMoments vm = vpm_moments(delta, gamma, grid, VpmForm::kProduct);
  Eigen::VectorXd k = vm.ntk();
  q.ntk.resize(grid.num_steps);
  for (int t = 0; t < grid.num_steps; ++t)
    q.ntk[t] = Eigen::MatrixXd::Constant(1, 1, k[t]);
  return q;
}

}  // namespace

TEST_CASE("closed-form linear blocks: frozen values and causality") {
  TimeGrid grid(0.05, 40);
  double gamma = 1.2;
  Eigen::VectorXd delta = decaying_delta(grid, gamma, 1.0);
  TwoLayerBlocks b = closed_form_linear(delta, gamma, grid);
  CHECK(b.kappa(0, 0) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(b.d.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(is_causal_strict(b.d));
  // Large integrated error drives D toward the e^{2 gamma int Delta} branch
  // (trapezoid integral of Delta, matching the continuum moment form).
  double e_cum = 0.0;
  for (int u = 0; u < 30; ++u) e_cum += 0.5 * grid.step_size * (delta[u] + delta[u + 1]);
  double expect =
      2.0 * gamma * (std::exp(2.0 * gamma * e_cum) - std::exp(-2.0 * gamma * e_cum));
  TwoLayerBlocks cont = closed_form_linear(delta, gamma, grid, VpmForm::kContinuum);
  CHECK(cont.d(30, 7) == doctest::Approx(expect).epsilon(1e-10));

  TwoLayerBlocks lazy = closed_form_linear(delta, 1e-14, grid);
  CHECK((lazy.kappa.array() - 4.0).abs().maxCoeff() < 1e-10);
  CHECK(lazy.d.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("compute_d reproduces the linear closed form to 1e-8") {
  TimeGrid grid(0.04, 30);
  double gamma = 0.9;
  Eigen::VectorXd delta = decaying_delta(grid, gamma, 1.0);
  FieldSampleBatch batch = quadratic_exact_batch(delta, gamma, grid);
  OrderParameterSet q = minimal_q(delta, gamma, grid);
  TwoLayerBlocks blocks = closed_form_linear(delta, gamma, grid);
  TwoLayerBlocks est;
  est.grid = grid;
  est.gamma = gamma;
  compute_d(batch, q, est);
  CHECK((est.d - blocks.d).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("compute_d refuses missing fields; compute_kappa refuses S < 100") {
  TimeGrid grid(0.1, 5);
  OrderParameterSet q = minimal_q(Eigen::VectorXd::Ones(5), 1.0, grid);
  FieldSampleBatch empty;
  TwoLayerBlocks blocks;
  CHECK_THROWS_AS(compute_d(empty, q, blocks), ContractError);
  FieldSampleBatch tiny = quadratic_exact_batch(Eigen::VectorXd::Ones(5), 1.0, grid);
  CHECK_THROWS_AS(compute_kappa(tiny, q), ContractError);
}

TEST_CASE("Monte Carlo kappa agrees with the closed form within 3 SE") {
  TimeGrid grid(0.05, 24);
  double gamma = 1.0;
  Eigen::VectorXd delta = decaying_delta(grid, gamma, 1.0);
  OrderParameterSet q = minimal_q(delta, gamma, grid);
  int s_count = 20000;
  FieldSampleBatch batch;
  batch.num_samples_p = 1;
  batch.steps = grid.num_steps;
  batch.activation = Activation::kLinear;
  int T = grid.num_steps;
  batch.h.resize(T, s_count);
  batch.z.resize(T, s_count);
  batch.g.resize(T, s_count);
  CounterRng rng = CounterRng::from(31, 0);
  double w = grid.causal_weight();
  for (int j = 0; j < s_count; ++j) {
    double vp = rng.next_gaussian(), vm = rng.next_gaussian();
    for (int t = 0; t < T; ++t) {
      batch.h(t, j) = (vp + vm) / std::sqrt(2.0);
      batch.z(t, j) = (vp - vm) / std::sqrt(2.0);
      batch.g(t, j) = batch.z(t, j);
      vp *= 1.0 + gamma * w * delta[t];
      vm *= 1.0 - gamma * w * delta[t];
    }
  }
  TwoLayerBlocks mc = compute_kappa(batch, q);
  TwoLayerBlocks exact = closed_form_linear(delta, gamma, grid);
  int violations = 0;
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < T; ++s)
      if (std::abs(mc.kappa(t, s) - exact.kappa(t, s)) > 3.0 * mc.kappa_se(t, s)) ++violations;
  // ~0.3% of entries may exceed 3 SE by chance.
  CHECK(violations <= T * T / 50);
}

TEST_CASE("assemble_and_invert: zero kappa gives zero propagator") {
  TimeGrid grid(0.05, 20);
  Eigen::VectorXd delta = decaying_delta(grid, 1.0, 1.0);
  TwoLayerBlocks b = closed_form_linear(delta, 1.0, grid);
  b.kappa.setZero();
  b.include_initial_fluctuations = false;
  Propagator prop = assemble_and_invert(b);
  CHECK(prop.block("Delta", "Delta").cwiseAbs().maxCoeff() == 0.0);
  CHECK(prop.block("K", "K").cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lazy limit: N Var Delta(t) ~ kappa y^2 t^2 e^{-2Kt}") {
  // Background-subtracted protocol: the initial channel is switched off.
  TimeGrid grid(0.005, 400);
  double gamma = 1e-7, y = 1.0;
  Eigen::VectorXd delta = decaying_delta(grid, gamma, y);
  TwoLayerBlocks b = closed_form_linear(delta, gamma, grid);
  b.include_initial_fluctuations = false;
  Propagator prop = assemble_and_invert(b);
  Eigen::VectorXd var = prop.diagonal("Delta");
  double kappa0 = b.kappa(0, 0);
  for (int t = 40; t < grid.num_steps; t += 60) {
    double tv = grid.time(t);
    double expect = kappa0 * y * y * tv * tv * std::exp(-4.0 * tv);  // K = 2
    CHECK(var[t] == doctest::Approx(expect).epsilon(0.03));
  }
}

TEST_CASE("propagator vs brute-force linearized Monte Carlo (independent oracle)") {
  // Draw the uncoupled NTK noise from kappa, push it through the exact
  // discrete linearized dynamics including the D feedback, and compare
  // variance curves entry by entry.
  TimeGrid grid(0.04, 50);
  double gamma = 1.0, y = 1.0;
  Eigen::VectorXd delta = decaying_delta(grid, gamma, y);
  TwoLayerBlocks b = closed_form_linear(delta, gamma, grid);
  b.include_initial_fluctuations = false;  // dynamical channel only here
  Propagator prop = assemble_and_invert(b);
  int T = grid.num_steps;
  double w = grid.causal_weight();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b.kappa);
  Eigen::MatrixXd root = es.eigenvectors() *
                         es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  int draws = 40000;
  Eigen::MatrixXd ddelta(T, draws);
  CounterRng rng = CounterRng::from(44, 0);
  Eigen::VectorXd z(T), eps(T), ed(T), ek(T);
  for (int j = 0; j < draws; ++j) {
    for (int t = 0; t < T; ++t) z[t] = rng.next_gaussian();
    eps = root * z;  // uncoupled NTK noise over time
    ed.setZero();
    ek.setZero();
    double acc = 0.0;  // causal sum of (K dDelta + dK Delta)
    for (int t = 0; t < T; ++t) {
      ed[t] = -acc;
      double dsens = 0.0;
      for (int s = 0; s < t; ++s) dsens += w * b.d(t, s) * ed[s];
      ek[t] = eps[t] + dsens;
      acc += w * (b.ntk[t] * ed[t] + ek[t] * delta[t]);
    }
    ddelta.col(j) = ed;
  }
  Eigen::VectorXd mean = ddelta.rowwise().mean();
  for (int t = 5; t < T; t += 9) {
    double var = (ddelta.row(t).array() - mean[t]).square().sum() / (draws - 1);
    double se = var * std::sqrt(2.0 / (draws - 1));
    double theory = prop.block("Delta", "Delta")(t, t);
    CHECK(std::abs(theory - var) < 4.0 * se + 1e-12);
  }
}

TEST_CASE("full propagator equals the exact two-moment oracle (linear, unsubtracted)") {
  // For the linear single-point net the entire trajectory is a deterministic
  // function of the two initial site moments a0 = <v+^2>, b0 = <v-^2> with
  // N Var(a0) = N Var(b0) = 2. Finite differences through the exact discrete
  // map give the exact leading-order variance of every observable; the
  // assembled propagator (initial channel included) must reproduce it.
  TimeGrid grid(0.05, 60);
  double gamma = 1.3, y = 1.0;
  Eigen::VectorXd delta = decaying_delta(grid, gamma, y);
  TwoLayerBlocks b = closed_form_linear(delta, gamma, grid);
  Propagator prop = assemble_and_invert(b);
  int T = grid.num_steps;
  double dt = grid.step_size;

  auto run_map = [&](double a0, double b0, Eigen::VectorXd& dcurve, Eigen::VectorXd& kcurve) {
    double a = a0, bb = b0;
    dcurve.resize(T);
    kcurve.resize(T);
    for (int t = 0; t < T; ++t) {
      double f = (a - bb) / (2.0 * gamma);
      dcurve[t] = y - f;
      kcurve[t] = a + bb;
      double pf = 1.0 + gamma * dt * dcurve[t];
      double mf = 1.0 - gamma * dt * dcurve[t];
      a *= pf * pf;
      bb *= mf * mf;
    }
  };
  double h = 1e-6;
  Eigen::VectorXd dpa, kpa, dma, kma, dpb, kpb, dmb, kmb;
  run_map(1 + h, 1, dpa, kpa);
  run_map(1 - h, 1, dma, kma);
  run_map(1, 1 + h, dpb, kpb);
  run_map(1, 1 - h, dmb, kmb);
  for (int t = 0; t < T; t += 7) {
    double dda = (dpa[t] - dma[t]) / (2 * h), ddb = (dpb[t] - dmb[t]) / (2 * h);
    double dka = (kpa[t] - kma[t]) / (2 * h), dkb = (kpb[t] - kmb[t]) / (2 * h);
    double var_delta = 2.0 * (dda * dda + ddb * ddb);
    double var_k = 2.0 * (dka * dka + dkb * dkb);
    // The flow-form Delta row omits the O(dt^2) terms of the exact discrete
    // map, so agreement is to O(dt) here.
    CHECK(prop.block("Delta", "Delta")(t, t) ==
          doctest::Approx(var_delta).epsilon(0.03).scale(0.05));
    CHECK(prop.block("K", "K")(t, t) == doctest::Approx(var_k).epsilon(0.03).scale(0.05));
  }
  // And the t=0 values are the frozen Wick moments.
  CHECK(prop.block("Delta", "Delta")(0, 0) == doctest::Approx(1.0 / (gamma * gamma)));
  CHECK(prop.block("K", "K")(0, 0) == doctest::Approx(4.0));
}

TEST_CASE("train-error variance dies at late times for a fit single point") {
  TimeGrid grid(0.02, 300);
  double gamma = 1.0;
  Eigen::VectorXd delta = decaying_delta(grid, gamma, 1.0);
  TwoLayerBlocks b = closed_form_linear(delta, gamma, grid);
  Propagator prop = assemble_and_invert(b);
  Eigen::VectorXd var = prop.diagonal("Delta");
  prop.check_diagonal_block_psd("Delta");
  prop.check_diagonal_block_psd("K");
  double peak = var.maxCoeff();
  CHECK(var[grid.num_steps - 1] < 0.01 * peak);
}

TEST_CASE("mean error correction") {
  TimeGrid grid(0.002, 2000);
  double lambda = 2.0, y = 1.0;
  int T = grid.num_steps;
  SUBCASE("zero cross block and K = K_inf reproduce Delta_inf") {
    Eigen::VectorXd mean_k = Eigen::VectorXd::Constant(T, lambda);
    MeanErrorCorrection mec = mean_error_correction(
        Eigen::MatrixXd(), mean_k, Eigen::VectorXd::Zero(T), y, grid, 100.0);
    for (int t = 0; t < T; t += 400) {
      double expect = y * std::pow(1.0 - grid.step_size * lambda, t);
      CHECK(mec.mean_delta[t] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("lazy closed form: <Delta^2> = Delta_inf^2 + (2/N) y^2 t e^{-2lt}(-K1 + kappa t)") {
    double kappa = 4.0, k1 = -1.5, n_width = 200.0;
    Eigen::VectorXd mean_k(T), sigma_delta(T);
    Eigen::MatrixXd sigma_kdelta = Eigen::MatrixXd::Zero(T, T);
    for (int t = 0; t < T; ++t) {
      double tv = grid.time(t);
      mean_k[t] = lambda + k1 / n_width;
      sigma_kdelta(t, t) = -kappa * y * tv * std::exp(-lambda * tv);
      sigma_delta[t] = kappa * y * y * tv * tv * std::exp(-2.0 * lambda * tv);
    }
    MeanErrorCorrection mec =
        mean_error_correction(sigma_kdelta, mean_k, sigma_delta, y, grid, n_width);
    for (int t = 100; t < T; t += 400) {
      double tv = grid.time(t);
      double expect = y * y * std::exp(-2 * lambda * tv) *
                      (1.0 + 2.0 / n_width * tv * (-k1 + kappa * tv));
      CHECK(mec.mse[t] == doctest::Approx(expect).epsilon(5e-3));
    }
    for (int t = 1; t < T; t += 200) {
      double dinf = y * std::exp(-lambda * grid.time(t));
      CHECK(mec.mse[t] > dinf * dinf - 1e-12);
    }
  }
}
