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

#ifndef WIDEFLUCT_VPM_HPP
#define WIDEFLUCT_VPM_HPP

#include <Eigen/Dense>

#include "widefluct/grid.hpp"

namespace wf {

// v+- = (h +- z)/sqrt(2) decoupling for two-layer linear networks on a single
// signal direction. Given the error signal Delta(t), the fields are
//   v+(t) = p(t) v+(0),  v-(t) = m(t) v-(0),
// with v+-(0) independent unit Gaussians, so every second moment is a product:
// <v+(t) v+(s)> = p(t) p(s), <v-(t) v-(s)> = m(t) m(s).
//
// kProduct propagates the grid's own discrete recursion
//   p(t+1) = (1 + gamma*w*Delta(t)) p(t)   (w = causal step weight),
// and is the exact moment law of the sampled discrete process; kContinuum uses
// p(t) = exp(gamma * E(t)) with E the trapezoid cumulative integral of Delta.
enum class VpmForm { kProduct, kContinuum };

struct VpmMoments {
  TimeGrid grid;
  double gamma = 0.0;
  VpmForm form = VpmForm::kProduct;
  Eigen::VectorXd delta;  // the driving error signal
  Eigen::VectorXd p, m;   // moment factors, p(0) = m(0) = 1

  // Single-point NTK K(t) = <v+^2 + v-^2> and prediction f with f(0)=0.
  Eigen::VectorXd ntk() const;
  Eigen::VectorXd prediction() const;

  // NTK uncoupled variance (Wick):
  // kappa(t,s) = 2<h h'>^2 + 2<h z'>^2 + 2<z h'>^2 + 2<z z'>^2.
  Eigen::MatrixXd kappa_ntk() const;
  // Sensitivity density D(t,s) = d<v+^2 + v-^2>(t) / dDelta(s), strictly causal.
  Eigen::MatrixXd d_ntk_density() const;

  // Signal/orthogonal blocks of the whitened multi-sample model.
  // kappa_y = Cov(h_y z(t), h_y z(s)); D_y = d<h_y z>(t)/dDelta_y(s).
  Eigen::MatrixXd kappa_y() const;
  Eigen::MatrixXd d_y_density() const;
  // kappa_perp = <z(t) z(s)>; D_perp includes the exact feedback kernel
  // (cosh(gamma(E(t)-E(s))) correction to the bare gamma*Theta term).
  Eigen::MatrixXd kappa_perp() const;
  Eigen::MatrixXd d_perp_density() const;
};

VpmMoments vpm_moments(const Eigen::VectorXd& delta, double gamma, const TimeGrid& grid,
                       VpmForm form);

}  // namespace wf

#endif  // WIDEFLUCT_VPM_HPP
