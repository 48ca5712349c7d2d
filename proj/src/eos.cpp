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

#include "widefluct/eos.hpp"

#include <cmath>

#include "widefluct/causal.hpp"
#include "widefluct/vpm.hpp"

namespace wf {

EosTrajectory iterate_mean_field(double eta, double gamma, double y, int steps, double k0) {
  if (steps < 1) throw ContractError("iterate_mean_field: steps must be >= 1");
  EosTrajectory traj;
  traj.eta = eta;
  traj.gamma = gamma;
  traj.y = y;
  traj.f.resize(steps);
  traj.delta.resize(steps);
  traj.ntk.resize(steps);
  double f = 0.0, k = k0;
  for (int t = 0; t < steps; ++t) {
    if (std::abs(f) > 1e12)
      throw DivergenceError("iterate_mean_field: |f| exceeded 1e12 at step " + std::to_string(t));
    traj.f[t] = f;
    traj.delta[t] = y - f;
    traj.ntk[t] = k;
    double d = y - f;
    double f_next = f + eta * k * d + eta * eta * gamma * gamma * f * d * d;
    double k_next = k + 4.0 * eta * gamma * gamma * f * d + eta * eta * gamma * gamma * d * d * k;
    f = f_next;
    k = k_next;
  }
  // Diagnostics: onset of sharpening toward 2/eta and the late-time band.
  double threshold = 2.0 / eta;
  traj.band_epsilon = 0.05 * threshold;
  for (int t = 0; t < steps; ++t) {
    if (traj.ntk[t] > threshold - traj.band_epsilon) {
      traj.sharpening_onset_step = t;
      break;
    }
  }
  int q0 = 3 * steps / 4;
  double lo = traj.ntk.segment(q0, steps - q0).minCoeff();
  double hi = traj.ntk.segment(q0, steps - q0).maxCoeff();
  traj.band_mean = traj.ntk.segment(q0, steps - q0).mean();
  traj.band_amplitude = 0.5 * (hi - lo);
  return traj;
}

EosBlocks discrete_blocks(const EosTrajectory& traj) {
  if (!traj.ntk.allFinite()) throw ContractError("discrete_blocks: trajectory not finite");
  TimeGrid grid = traj.grid();
  VpmMoments vm = vpm_moments(traj.delta, traj.gamma, grid, VpmForm::kProduct);
  EosBlocks b;
  b.kappa = vm.kappa_ntk();
  b.d_discrete = vm.d_ntk_density();  // already the discrete partial in this mode
  // Initial channel: noise_Delta0 = -(1/gamma) (site fluctuation of h z at t=0).
  // For the linear fields Cov(h z(0), k(t)) = <v+(t)^2> - <v-(t)^2> = 2 gamma f(t).
  b.init_var_delta0 = 1.0 / (traj.gamma * traj.gamma);
  b.init_cov_delta0_k = -2.0 * vm.prediction();
  return b;
}

EosVariance variance_discrete(const EosBlocks& blocks, const EosTrajectory& traj) {
  int T = static_cast<int>(traj.f.size());
  if (blocks.kappa.rows() != T)
    throw ContractError("variance_discrete: block/trajectory length mismatch");
  double eta = traj.eta, g2 = traj.gamma * traj.gamma;
  Eigen::Index n = 2 * static_cast<Eigen::Index>(T);
  // Time-major interleaved layout (Delta_t, K_t); U = I + L with L strictly
  // block-causal, solved by forward substitution.
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd kappa_full = Eigen::MatrixXd::Zero(n, n);
  auto idx = [](int t, int label) { return static_cast<Eigen::Index>(t) * 2 + label; };
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < t; ++s) {
      double ds = traj.delta[s], fs = traj.f[s];
      l(idx(t, 0), idx(s, 0)) = eta * traj.ntk[s] + eta * eta * g2 * (2.0 * fs * ds - ds * ds);
      l(idx(t, 0), idx(s, 1)) = eta * ds;
      l(idx(t, 1), idx(s, 0)) = -blocks.d_discrete(t, s);
    }
    for (int s = 0; s < T; ++s) kappa_full(idx(t, 1), idx(s, 1)) = blocks.kappa(t, s);
  }
  if (blocks.include_initial_fluctuations) {
    // The Delta constraint telescopes f_t = f(0) + sum of increments, so the
    // initial prediction noise -f(0) sources every Delta row.
    for (int t = 0; t < T; ++t)
      for (int s = 0; s < T; ++s) {
        kappa_full(idx(t, 0), idx(s, 0)) += blocks.init_var_delta0;
        kappa_full(idx(t, 0), idx(s, 1)) += blocks.init_cov_delta0_k[s];
        kappa_full(idx(s, 1), idx(t, 0)) += blocks.init_cov_delta0_k[s];
      }
  }
  Eigen::MatrixXd sigma = causal_sandwich(l, kappa_full, 2);
  EosVariance out;
  out.sigma_delta.resize(T, T);
  out.sigma_k.resize(T, T);
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < T; ++s) {
      out.sigma_delta(t, s) = sigma(idx(t, 0), idx(s, 0));
      out.sigma_k(t, s) = sigma(idx(t, 1), idx(s, 1));
    }
  return out;
}

}  // namespace wf
