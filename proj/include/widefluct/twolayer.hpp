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

#ifndef WIDEFLUCT_TWOLAYER_HPP
#define WIDEFLUCT_TWOLAYER_HPP

#include <Eigen/Dense>
#include <optional>

#include "widefluct/saddle.hpp"
#include "widefluct/types.hpp"
#include "widefluct/vpm.hpp"

namespace wf {

// Hessian blocks of the two-layer single-train-point fluctuation theory.
// kappa are NTK fourth-cumulant blocks, d/d_star are sensitivity densities
// (strictly lower-triangular); theta kernels are built from the saddle curves
// at assembly time.
struct TwoLayerBlocks {
  TimeGrid grid;
  double gamma = 0.0;
  Eigen::VectorXd ntk;        // K(t) at the saddle
  Eigen::VectorXd delta;      // Delta(t) at the saddle
  Eigen::VectorXd ntk_star;   // K_star(t), test runs only
  Eigen::MatrixXd kappa, kappa_star, kappa_star_star;
  Eigen::MatrixXd d, d_star;
  Eigen::MatrixXd kappa_se;   // MC standard errors (zero for closed forms)
  bool has_test = false;
  double test_overlap = 0.0;

  // Initial-prediction fluctuation channel: at finite width f(0) and f_star(0)
  // fluctuate (zeta = phi(h(0)) z(0) site noise), correlated with the kernel
  // noise. Required to match ensembles trained without background
  // subtraction; switch off to model the background-subtracted protocol.
  bool include_initial_fluctuations = true;
  double init_var_delta0 = 0.0;              // N Var(f(0)) = Var(zeta)/gamma^2
  Eigen::VectorXd init_cov_delta0_k;         // N Cov(n_Delta0, eps_K(t))
  Eigen::VectorXd init_cov_delta0_kstar;     // test runs
  double init_var_fstar0 = 0.0;
  double init_cov_delta0_fstar0 = 0.0;
  Eigen::VectorXd init_cov_fstar0_k, init_cov_fstar0_kstar;
};

// Monte Carlo kappa blocks from the saddle's final verification batch.
// kappa(t,s) = Cov(k(t), k(s)) with k = phi(h)^2 + g^2 (plus the test-point
// cross blocks when the batch carries h_star). Refuses S < 100.
TwoLayerBlocks compute_kappa(const FieldSampleBatch& batch, const OrderParameterSet& q);

// Sensitivity blocks D(t,s) = <d(phi(h(t))^2 + g(t)^2)/dDelta(s)> by forward
// sensitivity recursions propagated per sample (no finite differences).
// Fills blocks.d (and d_star when the batch has test fields).
void compute_d(const FieldSampleBatch& batch, const OrderParameterSet& q, TwoLayerBlocks& blocks);

// Exact sampling-free blocks for linear activation via the v+- change of
// variables; also fills the saddle curves K(t) implied by delta_inf.
TwoLayerBlocks closed_form_linear(const Eigen::VectorXd& delta_inf, double gamma,
                                  const TimeGrid& grid, VpmForm form = VpmForm::kProduct);

struct AssembleReport {
  double condition_estimate = 0.0;
  bool tikhonov_applied = false;
};

// Leading-order propagator for {Delta, f_star, K, K_star} (or {Delta, K} when
// there is no test point): Sigma = U^-1 kappa_block U^-T with the block layout
//   [ I+Theta_K      0     Theta_Delta     0        ]
//   [ -Theta_Kstar   I     0               -Theta_Delta ]
//   [ -D             0     I               0        ]
//   [ -D_star        0     0               I        ]
// and kappa only in the (K, K_star) sector. Dense LU; if the condition
// estimate exceeds 1e12 a Tikhonov shift of 1e-10 I is applied with a warning.
Propagator assemble_and_invert(const TwoLayerBlocks& blocks, AssembleReport* report = nullptr);

// Leading mean-error correction (single train point):
//   d<Delta>/dt = -<K> <Delta> - (1/N) Sigma_KDelta(t,t),
// plus the MSE expansion <Delta^2> = <Delta>^2 + Sigma_Delta(t,t)/N.
struct MeanErrorCorrection {
  Eigen::VectorXd mean_delta;
  Eigen::VectorXd mse;
  Eigen::VectorXd mse_mean_part;      // <Delta>^2
  Eigen::VectorXd mse_variance_part;  // Sigma_Delta(t,t)/N
};
MeanErrorCorrection mean_error_correction(const Eigen::MatrixXd& sigma_k_delta,
                                          const Eigen::VectorXd& mean_k,
                                          const Eigen::VectorXd& sigma_delta_diag, double y,
                                          const TimeGrid& grid, double width);

}  // namespace wf

#endif  // WIDEFLUCT_TWOLAYER_HPP
