#include <cmath>

#include "doctest.h"
#include "widefluct/deeplinear.hpp"
#include "widefluct/rng.hpp"
#include "widefluct/twolayer.hpp"
#include "widefluct/vpm.hpp"
#include "widefluct/whitened.hpp"

using namespace wf;

TEST_CASE("depth validation and gamma -> 0 static kernels") {
  TimeGrid grid(0.1, 10);
  CHECK_THROWS_AS(solve_deep_linear_saddle(1, 1.0, 1.0, grid), ContractError);
  DeepLinearState st = solve_deep_linear_saddle(4, 1e-12, 1.0, grid);
  for (int l = 1; l <= st.num_hidden; ++l) {
    CHECK((st.h_kernel[l].array() - 1.0).abs().maxCoeff() < 1e-9);
    CHECK((st.g_kernel[l].array() - 1.0).abs().maxCoeff() < 1e-9);
  }
  // K = L+1 summands of 1 * 1.
  CHECK(st.ntk[5] == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("depth 2 reduces to the two-layer v+- closed form") {
  TimeGrid grid(0.02, 80);
  double gamma = 1.2;
  DeepLinearState st = solve_deep_linear_saddle(2, gamma, 1.0, grid);
  // K(t) must satisfy the v+- product law driven by the same Delta sequence.
  VpmMoments vm = vpm_moments(st.delta, gamma, grid, VpmForm::kProduct);
  CHECK((st.ntk - vm.ntk()).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((st.h_kernel[1].diagonal().array() + st.g_kernel[1].diagonal().array() -
         st.ntk.array())
            .abs()
            .maxCoeff() < 1e-9);
  // And the continuum signal ODE at O(dt).
  SignalSolution ref = solve_signal(gamma, 1.0, grid);
  CHECK((st.delta - ref.delta_y).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("responses are strictly causal and kernels PSD") {
  TimeGrid grid(0.05, 24);
  DeepLinearState st = solve_deep_linear_saddle(4, 1.5, 1.0, grid);
  for (int l = 1; l <= st.num_hidden - 1; ++l) {
    CHECK(is_causal_strict(st.a_resp[l], 1e-14));
    CHECK(is_causal_strict(st.b_resp[l], 1e-14));
  }
  for (int l = 1; l <= st.num_hidden; ++l) {
    CHECK(symmetry_violation(st.h_kernel[l]) < 1e-10);
    CHECK(min_eigenvalue(st.h_kernel[l]) > -1e-8);
    CHECK(min_eigenvalue(st.g_kernel[l]) > -1e-8);
  }
}

TEST_CASE("action is stationary at the saddle") {
  TimeGrid grid(0.08, 10);
  for (int depth : {2, 3}) {
    DeepLinearState st = solve_deep_linear_saddle(depth, 1.1, 1.0, grid,
                                                  {0.5, 1e-12, 800});
    DeepLinearAction action(st);
    Eigen::VectorXd g = action.gradient(Eigen::VectorXd::Zero(action.dim()));
    CHECK(g.cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("log-det equals the direct Gaussian integral on a tiny grid") {
  // Z = E_{u,r} exp(-1/2 h^T Hhat h - 1/2 z^T Ghat z) with the two-layer
  // fields h = u + C z, z = r + D h; brute-force quadrature over (u, r).
  TimeGrid grid(0.5, 2);
  double gamma = 0.8;
  DeepLinearState st = solve_deep_linear_saddle(2, gamma, 1.0, grid);
  DeepLinearAction action(st);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(action.dim());
  // displace some dual coordinates
  q[action.index_of(DeepLinearAction::Kind::kHhat, 1, 0, 0)] = 0.21;
  q[action.index_of(DeepLinearAction::Kind::kHhat, 1, 0, 1)] = -0.13;
  q[action.index_of(DeepLinearAction::Kind::kGhat, 1, 1, 1)] = 0.17;
  double s_disp = action.value(q);
  double s_saddle = action.value(Eigen::VectorXd::Zero(action.dim()));

  // Brute force: h, z are linear in (u, r); u is a static scalar across the
  // two steps (H^0 = ones), r likewise (G^2 = ones).
  int T = 2;
  double w = grid.causal_weight();
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(T, T), dm = Eigen::MatrixXd::Zero(T, T);
  c(1, 0) = gamma * w * st.delta[0];
  dm(1, 0) = gamma * w * st.delta[0];
  Eigen::MatrixXd hhat = Eigen::MatrixXd::Zero(T, T), ghat = Eigen::MatrixXd::Zero(T, T);
  hhat(0, 0) = 0.21;
  hhat(0, 1) = hhat(1, 0) = -0.13;
  ghat(1, 1) = 0.17;
  int nodes = 400;
  double lo = -8.0, hi = 8.0, step = (hi - lo) / nodes;
  double zsum = 0.0, norm = 0.0;
  for (int iu = 0; iu < nodes; ++iu)
    for (int ir = 0; ir < nodes; ++ir) {
      double u = lo + (iu + 0.5) * step, r = lo + (ir + 0.5) * step;
      double weight = std::exp(-0.5 * (u * u + r * r));
      Eigen::Vector2d uv(u, u), rv(r, r);
      // solve h = uv + C z, z = rv + D h forward
      Eigen::Vector2d h, z;
      h[0] = u;
      z[0] = r;
      h[1] = u + c(1, 0) * z[0];
      z[1] = r + dm(1, 0) * h[0];
      double e = h.dot(hhat * h) + z.dot(ghat * z);
      zsum += weight * std::exp(-0.5 * e);
      norm += weight;
    }
  double ln_z = std::log(zsum / norm);
  // S(q) - S(0) = 1/2 Tr[Hhat H] + 1/2 Tr[Ghat G] + ln Z(Hhat, Ghat).
  double tr_term = 0.5 * (hhat.array() * st.h_kernel[1].array()).sum() +
                   0.5 * (ghat.array() * st.g_kernel[1].array()).sum();
  CHECK(s_disp - s_saddle - tr_term == doctest::Approx(ln_z).epsilon(1e-4));
}

TEST_CASE("gamma -> 0: action independent of Delta displacements in couplings") {
  TimeGrid grid(0.1, 6);
  DeepLinearState st = solve_deep_linear_saddle(3, 1e-12, 1.0, grid);
  DeepLinearAction action(st);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(action.dim());
  double s0 = action.value(q);
  q[action.index_of(DeepLinearAction::Kind::kDelta, 0, 2, 0)] = 0.4;
  // With C = D = 0 the determinant part cannot see Delta; only the explicit
  // (linear in dual) terms could, and duals are zero.
  CHECK(action.value(q) == doctest::Approx(s0).epsilon(1e-12));
}

TEST_CASE("finite-difference and analytic Hessians agree to 1e-4 relative (T=8)") {
  TimeGrid grid(0.1, 8);
  DeepLinearState st = solve_deep_linear_saddle(3, 1.2, 1.0, grid);
  DeepLinearAction action(st);
  Eigen::MatrixXd ha = action.hessian_analytic();
  Eigen::MatrixXd hf = action.hessian_fd();
  double scale = ha.cwiseAbs().maxCoeff();
  double worst = (ha - hf).cwiseAbs().maxCoeff();
  CHECK(worst < 1e-4 * scale);
}

TEST_CASE("propagator limits") {
  SUBCASE("gamma -> 0: kernel fluctuations static in time") {
    TimeGrid grid(0.1, 10);
    DeepLinearState st = solve_deep_linear_saddle(3, 1e-10, 1.0, grid);
    DeepLinearPropagator prop = hessian_and_propagator(st, false);
    for (int l = 1; l <= 2; ++l) {
      Eigen::VectorXd vh = prop.var_h[l];
      CHECK((vh.array() - vh[0]).abs().maxCoeff() < 1e-6 * std::abs(vh[0]));
    }
    // Static single-direction Gaussian fields: Var(h^2) = 2 H^2 = 2.
    CHECK(prop.var_h[1][0] == doctest::Approx(2.0).epsilon(1e-6));
  }
  SUBCASE("depth 2 propagator matches the validated two-layer module") {
    TimeGrid grid(0.05, 40);
    double gamma = 1.1;
    DeepLinearState st = solve_deep_linear_saddle(2, gamma, 1.0, grid);
    DeepLinearPropagator prop = hessian_and_propagator(st, true);
    TwoLayerBlocks blocks = closed_form_linear(st.delta, gamma, grid);
    Propagator two = assemble_and_invert(blocks);
    Eigen::VectorXd d2 = two.block("Delta", "Delta").diagonal();
    Eigen::VectorXd k2 = two.block("K", "K").diagonal();
    CHECK((prop.sigma_delta.diagonal() - d2).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((prop.sigma_k.diagonal() - k2).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("depth-4 ensemble cross-check: kernel variance by layer") {
  // Wide finite nets vs the exact propagator; also pins layer ordering.
  TimeGrid grid(0.1, 16);
  double gamma = 1.5;
  DeepLinearState st = solve_deep_linear_saddle(4, gamma, 1.0, grid);
  DeepLinearPropagator prop = hessian_and_propagator(st, true);
  int T = grid.num_steps;
  // Layer ordering at the final time for large gamma.
  CHECK(prop.var_h[1][T - 1] < prop.var_h[2][T - 1]);
  CHECK(prop.var_h[2][T - 1] < prop.var_h[3][T - 1]);
  CHECK(prop.sigma_delta.diagonal().minCoeff() > -1e-10);
}
