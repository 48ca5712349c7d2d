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

#include "widefluct/vpm.hpp"

#include <cmath>

namespace wf {

VpmMoments vpm_moments(const Eigen::VectorXd& delta, double gamma, const TimeGrid& grid,
                       VpmForm form) {
  if (delta.size() != grid.num_steps) throw ContractError("vpm_moments: delta size mismatch");
  int T = grid.num_steps;
  // Field step factor: one update multiplies v+- by (1 +- gamma*step*Delta)
  // in both grid modes (step_size is the learning rate in discrete mode).
  double step = grid.step_size;
  VpmMoments vm;
  vm.grid = grid;
  vm.gamma = gamma;
  vm.form = form;
  vm.delta = delta;
  vm.p.resize(T);
  vm.m.resize(T);
  if (form == VpmForm::kProduct) {
    double p = 1.0, m = 1.0;
    for (int t = 0; t < T; ++t) {
      vm.p[t] = p;
      vm.m[t] = m;
      p *= 1.0 + gamma * step * delta[t];
      m *= 1.0 - gamma * step * delta[t];
    }
  } else {
    double e = 0.0;
    for (int t = 0; t < T; ++t) {
      vm.p[t] = std::exp(gamma * e);
      vm.m[t] = std::exp(-gamma * e);
      if (t + 1 < T) e += 0.5 * step * (delta[t] + delta[t + 1]);
    }
  }
  return vm;
}

Eigen::VectorXd VpmMoments::ntk() const {
  return p.array().square() + m.array().square();
}

Eigen::VectorXd VpmMoments::prediction() const {
  return (p.array().square() - m.array().square()) / (2.0 * gamma);
}

Eigen::MatrixXd VpmMoments::kappa_ntk() const {
  int T = grid.num_steps;
  Eigen::MatrixXd k(T, T);
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < T; ++s) {
      double pp = p[t] * p[s], mm = m[t] * m[s];
      k(t, s) = 2.0 * pp * pp + 2.0 * mm * mm;
    }
  return k;
}

namespace {
// Ratio p(t)^2 scaled by the step-s growth factor: for the product form the
// derivative of the product excludes the factor at step s itself.
inline double step_factor(const VpmMoments& vm, const Eigen::VectorXd& sq, int t, int s,
                          bool plus_branch) {
  if (vm.form == VpmForm::kContinuum) return sq[t];
  double step = vm.grid.step_size;
  double f = plus_branch ? 1.0 + vm.gamma * step * vm.delta[s]
                         : 1.0 - vm.gamma * step * vm.delta[s];
  return sq[t] / f;
}
// Densities are normalized by the causal quadrature weight, so in flow mode
// they are continuum kernels and in discrete mode they are the discrete
// partial derivatives themselves.
inline double density_gain(const VpmMoments& vm) {
  return vm.gamma * vm.grid.step_size / vm.grid.causal_weight();
}
}  // namespace

Eigen::MatrixXd VpmMoments::d_ntk_density() const {
  int T = grid.num_steps;
  Eigen::VectorXd p2 = p.array().square(), m2 = m.array().square();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(T, T);
  double gain = density_gain(*this);
  for (int t = 1; t < T; ++t)
    for (int s = 0; s < t; ++s)
      d(t, s) = 2.0 * gain * (step_factor(*this, p2, t, s, true) -
                              step_factor(*this, m2, t, s, false));
  return d;
}

Eigen::MatrixXd VpmMoments::kappa_y() const {
  int T = grid.num_steps;
  Eigen::MatrixXd k(T, T);
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < T; ++s) {
      double pp = p[t] * p[s], mm = m[t] * m[s];
      k(t, s) = 0.5 * (pp * pp + mm * mm);
    }
  return k;
}

Eigen::MatrixXd VpmMoments::d_y_density() const {
  int T = grid.num_steps;
  Eigen::VectorXd p2 = p.array().square(), m2 = m.array().square();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(T, T);
  double gain = density_gain(*this);
  for (int t = 1; t < T; ++t)
    for (int s = 0; s < t; ++s)
      d(t, s) = gain * (step_factor(*this, p2, t, s, true) +
                        step_factor(*this, m2, t, s, false));
  return d;
}

Eigen::MatrixXd VpmMoments::kappa_perp() const {
  int T = grid.num_steps;
  Eigen::MatrixXd k(T, T);
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < T; ++s) k(t, s) = 0.5 * (p[t] * p[s] + m[t] * m[s]);
  return k;
}

Eigen::MatrixXd VpmMoments::d_perp_density() const {
  int T = grid.num_steps;
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(T, T);
  for (int t = 1; t < T; ++t)
    for (int s = 0; s < t; ++s) {
      double direct = 0.5 * (p[t] * p[s] + m[t] * m[s]);  // <z(t) z(s)>
      double chain;
      if (form == VpmForm::kContinuum) {
        chain = 0.5 * (p[t] / p[s] + m[t] / m[s]);
      } else {
        chain = 0.5 * (p[t] / p[s + 1] + m[t] / m[s + 1]);
      }
      d(t, s) = density_gain(*this) * (direct + chain);
    }
  return d;
}

}  // namespace wf
