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

#ifndef WIDEFLUCT_GRID_HPP
#define WIDEFLUCT_GRID_HPP

#include <Eigen/Dense>
#include <cstdint>

#include "widefluct/common.hpp"

namespace wf {

enum class GridMode { kGradientFlowEuler, kDiscreteGd };

// Uniform time grid t_j = j * step_size, j = 0..num_steps-1.
//
// All causal time integrals in the library use left-Riemann sums with the
// strict Heaviside convention Theta(0) = 0: the s = t term never contributes.
// Step t therefore depends only on strictly earlier state, which matches
// explicit-Euler training and keeps every response kernel strictly
// lower-triangular. In discrete_gd mode step_size is the learning rate and
// integrals degenerate to plain sums (weight 1 per past step).
struct TimeGrid {
  double step_size = 0.0;
  int num_steps = 0;
  GridMode mode = GridMode::kGradientFlowEuler;

  TimeGrid() = default;
  TimeGrid(double dt, int steps, GridMode m = GridMode::kGradientFlowEuler)
      : step_size(dt), num_steps(steps), mode(m) {
    if (!(dt > 0.0)) throw ContractError("TimeGrid: step_size must be > 0");
    if (steps <= 0) throw ContractError("TimeGrid: num_steps must be > 0");
  }

  double time(int j) const { return step_size * j; }
  Eigen::VectorXd times() const {
    Eigen::VectorXd t(num_steps);
    for (int j = 0; j < num_steps; ++j) t[j] = time(j);
    return t;
  }

  // Weight that one past sample carries inside a causal sum.
  double causal_weight() const {
    return mode == GridMode::kDiscreteGd ? 1.0 : step_size;
  }
};

// Row-major (sample-major, time-minor) flattening used by every (sample, time)
// tensor in the repo: flat = sample * num_steps + time_index.
std::int64_t flatten_index(int sample, int time_index, const TimeGrid& grid, int num_samples);

// Per-step weights of the causal left-Riemann quadrature (constant vector;
// exposed as the documented contract for integral discretization).
Eigen::VectorXd quadrature_weights(const TimeGrid& grid);

// E(t) = sum_{s<t} w * v(s); E(0) = 0 by the Theta(0)=0 convention.
Eigen::VectorXd causal_cumsum(const TimeGrid& grid, const Eigen::VectorXd& v);

// M(t,s) = Theta(t-s) * v(s) * w  (strictly lower-triangular).
Eigen::MatrixXd theta_matrix(const TimeGrid& grid, const Eigen::VectorXd& v);

}  // namespace wf

#endif  // WIDEFLUCT_GRID_HPP
