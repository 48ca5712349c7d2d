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

#ifndef WIDEFLUCT_WHITENED_HPP
#define WIDEFLUCT_WHITENED_HPP

#include <Eigen/Dense>

#include "widefluct/grid.hpp"
#include "widefluct/vpm.hpp"

namespace wf {

// Two-layer linear networks on whitened data: the P-dimensional error vector
// splits into one evolving signal component Delta_y along the target and P-1
// frozen orthogonal components, each with its own scalar fluctuation theory.

struct SignalSolution {
  TimeGrid grid;
  double gamma = 0.0;
  double y = 0.0;
  Eigen::VectorXd delta_y;  // signal error, delta_y(0) = y
  Eigen::VectorXd k_y;      // signal kernel, k_y(0) = 2
};

enum class SignalIntegrator { kRk4, kEuler };

// d Delta_y/dt = -2 sqrt(1 + gamma^2 (y - Delta_y)^2) Delta_y (decaying).
SignalSolution solve_signal(double gamma, double y, const TimeGrid& grid,
                            SignalIntegrator integrator = SignalIntegrator::kRk4);

// Same trajectory from the coupled system dDelta/dt = -K Delta,
// dK/dt = 4 gamma^2 (y-Delta) Delta. Used to test the conservation law
// K^2 - 4 gamma^2 (y-Delta)^2 = 4 non-tautologically.
SignalSolution solve_signal_coupled(double gamma, double y, const TimeGrid& grid);

// Exact discrete-time mean-field map of the explicit-Euler trainer (the
// large-step recursion with eta = step_size). This is the right mean to pair
// with finite-network ensembles: the O(dt) discretization errors cancel.
SignalSolution solve_signal_discrete(double gamma, double y, const TimeGrid& grid);

struct WhitenedBlocks {
  Eigen::MatrixXd kappa_y, kappa_perp;  // uncoupled variances
  Eigen::MatrixXd d_y, d_perp;          // sensitivity densities, strictly causal
};

// All blocks are sampling-free v+- closed forms.
WhitenedBlocks blocks_whitened(const SignalSolution& signal, VpmForm form = VpmForm::kContinuum);

struct WhitenedPropagator {
  Eigen::MatrixXd sigma_y;     // N Cov(Delta_y(t), Delta_y(s))
  Eigen::MatrixXd sigma_perp;  // per orthogonal direction
};

// Sigma = (gamma I + D)^-1 kappa (gamma I + D)^-T per component.
WhitenedPropagator propagator_whitened(const WhitenedBlocks& blocks, double gamma,
                                       const TimeGrid& grid);

struct LossExpansion {
  Eigen::VectorXd mean_sq;     // Delta_y^inf(t)^2
  Eigen::VectorXd bias_term;   // (2/N) Delta1_y(t) Delta_y^inf(t)
  Eigen::VectorXd signal_var;  // (1/N) Sigma_y(t,t)
  Eigen::VectorXd orth_var;    // ((P-1)/N) Sigma_perp(t,t)
  Eigen::VectorXd total;
  bool outside_validity = false;  // P/N > 0.25
};

// <|Delta(t)|^2> to leading order in 1/N; delta1 (the mean correction) is an
// optional external input and defaults to zero.
LossExpansion expected_loss(const SignalSolution& signal, const WhitenedPropagator& prop,
                            int num_samples, int width,
                            const Eigen::VectorXd* delta1 = nullptr);

// Online learning on the linear target beta_star: identical equations under
// Delta_y -> beta_star - beta and P -> input_dim. Calls the offline code path.
LossExpansion online_map(double gamma, double beta_star, const TimeGrid& grid, int input_dim,
                         int width);

}  // namespace wf

#endif  // WIDEFLUCT_WHITENED_HPP
