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

#ifndef WIDEFLUCT_EOS_HPP
#define WIDEFLUCT_EOS_HPP

#include <Eigen/Dense>

#include "widefluct/grid.hpp"

namespace wf {

// Discrete-time two-layer linear dynamics at large learning rate.
struct EosTrajectory {
  double eta = 0.0, gamma = 0.0, y = 0.0;
  Eigen::VectorXd f, delta, ntk;  // over integer steps
  int sharpening_onset_step = -1;  // first step with K_t > 2/eta - band_epsilon
  double band_epsilon = 0.0;
  double band_mean = 0.0;       // last-quarter mean of K_t
  double band_amplitude = 0.0;  // last-quarter (max - min)/2

  TimeGrid grid() const {
    return TimeGrid(eta, static_cast<int>(f.size()), GridMode::kDiscreteGd);
  }
};

// Exact mean-field recursion
//   f_{t+1} = f_t + eta K_t Delta_t + eta^2 gamma^2 f_t Delta_t^2
//   K_{t+1} = K_t + 4 eta gamma^2 f_t Delta_t + eta^2 gamma^2 Delta_t^2 K_t
// with f_0 = 0 and K_0 = k0 (2 for |x|^2 = D inputs).
EosTrajectory iterate_mean_field(double eta, double gamma, double y, int steps, double k0 = 2.0);

struct EosBlocks {
  Eigen::MatrixXd kappa;       // NTK fourth cumulant over step pairs
  Eigen::MatrixXd d_discrete;  // discrete partial dK_t/dDelta_s (eta included)
  // Initial-prediction fluctuation channel (f(0) = (1/gamma N) w.h is random
  // at finite width): Var and cross-covariance with the kernel noise. These
  // are exact closed forms for the linear network and make the theory match
  // ensembles trained without background subtraction.
  double init_var_delta0 = 0.0;            // N Var(Delta(0) - y) = Var(h z)/gamma^2
  Eigen::VectorXd init_cov_delta0_k;       // N Cov(noise_Delta0, eps_K(t))
  bool include_initial_fluctuations = true;
};
EosBlocks discrete_blocks(const EosTrajectory& traj);

struct EosVariance {
  Eigen::MatrixXd sigma_delta, sigma_k;
};
// Discrete analog of the two-layer propagator: sums replace integrals, strict
// Theta; the Delta row carries the exact discrete-map derivatives including
// the eta^2 terms.
EosVariance variance_discrete(const EosBlocks& blocks, const EosTrajectory& traj);

}  // namespace wf

#endif  // WIDEFLUCT_EOS_HPP
