#include <cmath>

#include "doctest.h"
#include "widefluct/nets.hpp"
#include "widefluct/rng.hpp"
#include "widefluct/saddle.hpp"
#include "widefluct/whitened.hpp"

using namespace wf;

TEST_CASE("sample_gp basic laws") {
  SUBCASE("identity covariance: empirical covariance is I within O(1/sqrt(S))") {
    int n = 6, s = 20000;
    Eigen::MatrixXd draws = sample_gp(Eigen::MatrixXd::Identity(n, n), s, 5);
    Eigen::MatrixXd cov = draws * draws.transpose() / s;
    CHECK((cov - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() < 4.0 / std::sqrt(s) * 2);
  }
  SUBCASE("rank-1 covariance: samples proportional to v") {
    Eigen::VectorXd v(3);
    v << 1.0, -2.0, 0.5;
    Eigen::MatrixXd draws = sample_gp(v * v.transpose(), 50, 6);
    for (int j = 0; j < 50; ++j) {
      Eigen::VectorXd col = draws.col(j);
      Eigen::VectorXd resid = col - (col.dot(v) / v.squaredNorm()) * v;
      CHECK(resid.norm() < 1e-4 * std::max(1.0, col.norm()));
    }
  }
  SUBCASE("non-PSD covariance fails with the most negative eigenvalue") {
    Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(2, 2);
    bad(1, 1) = -0.1;
    CHECK_THROWS_WITH_AS(sample_gp(bad, 10, 7), doctest::Contains("-0.1"), ContractError);
  }
}

TEST_CASE("solve_single_site limits") {
  TimeGrid grid(0.05, 12);
  int t_steps = grid.num_steps, s_count = 8;
  Eigen::MatrixXd u(t_steps, s_count), r(t_steps, s_count);
  CounterRng rng = CounterRng::from(3, 0);
  for (int i = 0; i < t_steps; ++i)
    for (int j = 0; j < s_count; ++j) {
      u(i, j) = rng.next_gaussian();
      r(i, j) = rng.next_gaussian();
    }
  Eigen::MatrixXd ones_k = Eigen::MatrixXd::Ones(t_steps, t_steps);
  SingleSiteCouplings cp;
  cp.phi_prev = &ones_k;
  cp.g_next = &ones_k;
  Eigen::MatrixXd delta = Eigen::MatrixXd::Ones(1, t_steps) * 0.7;

  SUBCASE("gamma = 0 leaves h = u, z = r") {
    FieldSampleBatch b = solve_single_site(u, r, cp, delta, 0.0, Activation::kTanh, grid);
    CHECK((b.h - u).cwiseAbs().maxCoeff() == 0.0);
    CHECK((b.z - r).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("t = 0 is source-only for any gamma") {
    FieldSampleBatch b = solve_single_site(u, r, cp, delta, 2.3, Activation::kTanh, grid);
    CHECK((b.h.row(0) - u.row(0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((b.z.row(0) - r.row(0)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("causality: h(t) is blind to Delta(s >= t)") {
    double gamma = 1.4;
    FieldSampleBatch a = solve_single_site(u, r, cp, delta, gamma, Activation::kTanh, grid);
    Eigen::MatrixXd delta2 = delta;
    for (int s = 7; s < t_steps; ++s) delta2(0, s) += 3.0;
    FieldSampleBatch b = solve_single_site(u, r, cp, delta2, gamma, Activation::kTanh, grid);
    CHECK((a.h.topRows(8) - b.h.topRows(8)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.h.bottomRows(2) - b.h.bottomRows(2)).cwiseAbs().maxCoeff() > 0.0);
  }
  SUBCASE("linear fields match the v+- product closed form to 1e-10") {
    double gamma = 1.1;
    // Constant sources in time (static kernels), as in the two-layer process.
    Eigen::MatrixXd u0 = u.row(0).replicate(t_steps, 1);
    Eigen::MatrixXd r0 = r.row(0).replicate(t_steps, 1);
    Eigen::VectorXd dcurve(t_steps);
    for (int t = 0; t < t_steps; ++t) dcurve[t] = std::exp(-0.4 * grid.time(t));
    Eigen::MatrixXd drow = dcurve.transpose();
    FieldSampleBatch b = solve_single_site(u0, r0, cp, drow, gamma, Activation::kLinear, grid);
    double w = grid.causal_weight();
    for (int j = 0; j < s_count; ++j) {
      double vp = (u0(0, j) + r0(0, j)) / std::sqrt(2.0);
      double vm = (u0(0, j) - r0(0, j)) / std::sqrt(2.0);
      for (int t = 0; t < t_steps; ++t) {
        double h_expect = (vp + vm) / std::sqrt(2.0);
        double z_expect = (vp - vm) / std::sqrt(2.0);
        CHECK(std::abs(b.h(t, j) - h_expect) < 1e-10);
        CHECK(std::abs(b.z(t, j) - z_expect) < 1e-10);
        vp *= 1.0 + gamma * w * dcurve[t];
        vm *= 1.0 - gamma * w * dcurve[t];
      }
    }
  }
}

TEST_CASE("integrate_predictions discrete laws") {
  TimeGrid grid(0.1, 30);
  Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 1.0);
  SUBCASE("constant scalar K: Delta(t) = y (1 - w K)^t") {
    std::vector<Eigen::MatrixXd> k(30, Eigen::MatrixXd::Constant(1, 1, 2.0));
    Eigen::MatrixXd f, d;
    integrate_predictions(k, y, grid, 1.0, f, d);
    for (int t = 0; t < 30; ++t)
      CHECK(d(0, t) == doctest::Approx(std::pow(1.0 - 0.1 * 2.0, t)).epsilon(1e-12));
  }
  SUBCASE("K = 0 freezes Delta at y") {
    std::vector<Eigen::MatrixXd> k(30, Eigen::MatrixXd::Zero(1, 1));
    Eigen::MatrixXd f, d;
    integrate_predictions(k, y, grid, 1.0, f, d);
    CHECK((d.array() - 1.0).abs().maxCoeff() == 0.0);
  }
}

TEST_CASE("two-layer saddle: gamma -> 0 converges immediately to static kernels") {
  SaddleModel model;
  model.depth = 1;
  model.gamma = 1e-9;
  model.activation = Activation::kTanh;
  model.gram = Eigen::MatrixXd::Ones(1, 1);
  model.y = Eigen::VectorXd::Constant(1, 1.0);
  TimeGrid grid(0.05, 24);
  SaddleOptions opt;
  opt.samples = 20000;
  opt.seed = 5;
  SaddleResult res = solve_saddle(model, grid, opt);
  CHECK(res.iterations <= 2);
  // Kernels constant in time.
  const Eigen::MatrixXd& phi = res.q.feature_kernels[1];
  CHECK((phi.array() - phi(0, 0)).abs().maxCoeff() < 5e-4);
  // <phi(u)^2> for tanh with unit input variance (Gauss-Hermite oracle below).
  double ref = 0.0;
  {
    // 30-node Gauss-Hermite-like brute force on a fine grid.
    int n = 4001;
    double lo = -8, hi = 8, h = (hi - lo) / (n - 1);
    double norm = 0.0;
    for (int i = 0; i < n; ++i) {
      double x = lo + i * h;
      double wgt = std::exp(-0.5 * x * x);
      ref += wgt * std::tanh(x) * std::tanh(x);
      norm += wgt;
    }
    ref /= norm;
  }
  CHECK(phi(0, 0) == doctest::Approx(ref).epsilon(0.02));
}

TEST_CASE("two-layer tanh saddle converges and fields are non-Gaussian only mildly") {
  SaddleModel model;
  model.depth = 1;
  model.gamma = 1.5;
  model.activation = Activation::kTanh;
  model.gram = Eigen::MatrixXd::Ones(1, 1);
  model.y = Eigen::VectorXd::Constant(1, 1.0);
  TimeGrid grid(0.05, 40);
  SaddleOptions opt;
  opt.samples = 30000;
  opt.seed = 2;
  opt.tol = 2e-3;
  SaddleResult res = solve_saddle(model, grid, opt);
  CHECK(res.residual_history.back() < opt.tol);
  // Training error decays.
  CHECK(res.q.errors(0, grid.num_steps - 1) < 0.3);
  for (int t = 1; t < grid.num_steps; ++t)
    CHECK(res.q.errors(0, t) <= res.q.errors(0, t - 1) + 1e-12);

  // Linear-activation fields stay exactly Gaussian: excess kurtosis -> 0
  // within Monte Carlo error (SE ~ sqrt(24/S)).
  SaddleModel lin = model;
  lin.activation = Activation::kLinear;
  SaddleResult rlin = solve_saddle(lin, grid, opt);
  const Eigen::MatrixXd& h = rlin.layer1_batch.h;
  double s_count = static_cast<double>(h.cols());
  for (int t : {5, 20, 39}) {
    double m1 = h.row(t).mean();
    Eigen::ArrayXd c = h.row(t).array() - m1;
    double m2 = c.square().mean();
    double m4 = c.pow(4).mean();
    double kurt = m4 / (m2 * m2) - 3.0;
    CHECK(std::abs(kurt) < 4.0 * std::sqrt(24.0 / s_count));
  }
}

TEST_CASE("deep linear MC saddle matches a wide finite-network ensemble") {
  // Three weight matrices (two hidden layers): exercises the A/B response
  // machinery; the ensemble of wide nets is the ground truth.
  int hidden = 2;
  double gamma = 1.0;
  TimeGrid grid(0.1, 15);
  SaddleModel model;
  model.depth = hidden;
  model.gamma = gamma;
  model.activation = Activation::kLinear;
  model.gram = Eigen::MatrixXd::Ones(1, 1);
  model.y = Eigen::VectorXd::Constant(1, 1.0);
  SaddleOptions opt;
  opt.samples = 30000;
  opt.seed = 11;
  opt.tol = 2e-3;
  opt.jacobian_samples = 8000;
  SaddleResult res = solve_saddle(model, grid, opt);

  NetworkConfig cfg;
  cfg.depth = hidden;
  cfg.width = 1536;
  cfg.input_dim = 24;
  cfg.gamma = gamma;
  cfg.activation = Activation::kLinear;
  Dataset data = Dataset::single_point(24, 1.0, 9);
  EnsembleRecord rec = run_ensemble(cfg, data, grid, 48, 77);

  Eigen::VectorXd k_ens = rec.mean("K");
  Eigen::VectorXd k_se = rec.se_mean("K");
  for (int t = 0; t < grid.num_steps; ++t) {
    double k_theory = res.q.ntk[t](0, 0);
    CHECK(std::abs(k_theory - k_ens[t]) < 4.0 * k_se[t] + 25.0 / cfg.width + 0.02);
  }
  Eigen::VectorXd h2_ens = rec.mean("H2");
  for (int t = 0; t < grid.num_steps; t += 4) {
    double h2_theory = res.q.feature_kernels[2](t, t);
    CHECK(h2_theory == doctest::Approx(h2_ens[t]).epsilon(0.05));
  }
}
