// Copyright 2026 The widefluct Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef WIDEFLUCT_SADDLE_HPP
#define WIDEFLUCT_SADDLE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "widefluct/nets.hpp"
#include "widefluct/types.hpp"

namespace wf {

// Monte Carlo trajectories of the single-site process for one layer.
// Fields are (P*T) x S matrices in flatten_index layout (test-point rows are
// T x S). Sensitivity trajectories are not stored; they are re-derived from
// the fields by forward recursions where needed.
struct FieldSampleBatch {
  Eigen::MatrixXd u, r;       // Gaussian sources
  Eigen::MatrixXd h, z, g;    // resolved fields, g = phi'(h) z
  Eigen::MatrixXd h_star, g_star;  // test-point fields (two-layer single-point runs)
  int num_samples_p = 1;      // P
  int steps = 0;              // T
  Activation activation = Activation::kLinear;
  double test_overlap = 0.0;  // x.x_star/D when test fields are present

  // k(t) = sum over the NTK summands for mu=nu=0 (single-point runs):
  // phi(h(t))^2 + g(t)^2, per sample. T x S.
  Eigen::MatrixXd ntk_summand() const;
  // k_star(t) = phi(h)phi(h_star) + c g g_star, per sample.
  Eigen::MatrixXd ntk_summand_star(double overlap) const;
};

// Draws S trajectories from GP(0, cov) by Cholesky with an adaptive diagonal
// jitter ladder (1e-10 growing x10 up to 1e-6). Returns a (dim x S) matrix.
Eigen::MatrixXd sample_gp(const Eigen::MatrixXd& cov, int num_draws, std::uint64_t seed);

// Single-site problem for one hidden layer given frozen order parameters:
//   h(t) = u(t) + sum_{s<t} [Abar(t,s) + gamma w Phi_prev(t,s) Delta(s)] g(s)
//   z(t) = r(t) + sum_{s<t} [Bbar(t,s) + gamma w G_next(t,s) Delta(s)] phi(h(s))
// with g = phi'(h) z, solved forward in time (Theta(0)=0 makes it explicit).
// Abar/Bbar may be empty (treated as zero).
struct SingleSiteCouplings {
  const Eigen::MatrixXd* phi_prev = nullptr;  // (P*T)x(P*T)
  const Eigen::MatrixXd* g_next = nullptr;
  const Eigen::MatrixXd* a_prev = nullptr;    // discrete Jacobian average, optional
  const Eigen::MatrixXd* b_this = nullptr;
};
FieldSampleBatch solve_single_site(const Eigen::MatrixXd& u, const Eigen::MatrixXd& r,
                                   const SingleSiteCouplings& couplings,
                                   const Eigen::MatrixXd& delta, double gamma,
                                   Activation activation, const TimeGrid& grid);

// Kernel / response estimates from a resolved batch (Monte Carlo averages).
struct KernelEstimates {
  Eigen::MatrixXd phi, g;        // (P*T)x(P*T)
  Eigen::MatrixXd a_jac, b_jac;  // discrete Jacobian averages <d phi(h_t)/d r_s>, <d g_t/d u_s>
};
KernelEstimates update_order_params(const FieldSampleBatch& batch,
                                    const SingleSiteCouplings& couplings,
                                    const Eigen::MatrixXd& delta, double gamma,
                                    Activation activation, const TimeGrid& grid,
                                    bool with_jacobians, int jacobian_samples = 0);

// Explicit Euler for f given the NTK diagonal; Delta = y - f, f(0) = 0.
// reduction_factor multiplies K Delta (1 for sum loss, 1/P for mean loss).
void integrate_predictions(const std::vector<Eigen::MatrixXd>& ntk, const Eigen::VectorXd& y,
                           const TimeGrid& grid, double reduction_factor, Eigen::MatrixXd& f_out,
                           Eigen::MatrixXd& delta_out);

struct SaddleModel {
  int depth = 1;  // hidden layers
  double gamma = 1.0;
  Activation activation = Activation::kLinear;
  Eigen::MatrixXd gram;  // P x P input Gram x.x'/D
  Eigen::VectorXd y;
  LossReduction reduction = LossReduction::kSum;
  std::optional<double> test_overlap;  // single-train-point runs only
};

struct SaddleOptions {
  int samples = 20000;
  double damping = 0.4;   // q <- (1-beta) q + beta q~
  double tol = 1e-4;      // max-abs kernel change
  int max_iters = 80;
  std::uint64_t seed = 1;
  bool fresh_final_pass = true;
  int jacobian_samples = 0;  // 0: use all samples
};

struct SaddleResult {
  OrderParameterSet q;
  std::vector<double> residual_history;
  int iterations = 0;
  // Final verification batch for layer 1 (fresh samples when enabled);
  // downstream Hessian-block estimation reuses it.
  FieldSampleBatch layer1_batch;
};

// Damped alternating Monte Carlo fixed point for q_infty (two-layer fast path
// for depth == 1, full per-layer loop for deeper nets).
SaddleResult solve_saddle(const SaddleModel& model, const TimeGrid& grid,
                          const SaddleOptions& options);

// Serialization of a converged OrderParameterSet: kernels as CSV matrices plus
// a JSON metadata file, all under dir with the given basename.
void save_order_params(const OrderParameterSet& q, const std::string& dir,
                       const std::string& basename);

}  // namespace wf

#endif  // WIDEFLUCT_SADDLE_HPP
