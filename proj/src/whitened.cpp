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

#include "widefluct/whitened.hpp"

#include <cmath>

#include "widefluct/eos.hpp"

namespace wf {

namespace {

double signal_rhs(double gamma, double y, double d) {
  double f = y - d;
  return -2.0 * std::sqrt(1.0 + gamma * gamma * f * f) * d;
}

}  // namespace

SignalSolution solve_signal(double gamma, double y, const TimeGrid& grid,
                            SignalIntegrator integrator) {
  if (y == 0.0) throw ContractError("solve_signal: y must be nonzero");
  int T = grid.num_steps;
  double dt = grid.step_size;
  SignalSolution sol;
  sol.grid = grid;
  sol.gamma = gamma;
  sol.y = y;
  sol.delta_y.resize(T);
  sol.k_y.resize(T);
  double d = y;
  for (int t = 0; t < T; ++t) {
    sol.delta_y[t] = d;
    double f = y - d;
    sol.k_y[t] = 2.0 * std::sqrt(1.0 + gamma * gamma * f * f);
    if (t + 1 == T) break;
    if (integrator == SignalIntegrator::kEuler) {
      d += dt * signal_rhs(gamma, y, d);
    } else {
      double k1 = signal_rhs(gamma, y, d);
      double k2 = signal_rhs(gamma, y, d + 0.5 * dt * k1);
      double k3 = signal_rhs(gamma, y, d + 0.5 * dt * k2);
      double k4 = signal_rhs(gamma, y, d + dt * k3);
      d += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }
  return sol;
}

SignalSolution solve_signal_coupled(double gamma, double y, const TimeGrid& grid) {
  if (y == 0.0) throw ContractError("solve_signal_coupled: y must be nonzero");
  int T = grid.num_steps;
  double dt = grid.step_size;
  SignalSolution sol;
  sol.grid = grid;
  sol.gamma = gamma;
  sol.y = y;
  sol.delta_y.resize(T);
  sol.k_y.resize(T);
  double d = y, k = 2.0;
  auto rhs = [&](double dd, double kk, double& fd, double& fk) {
    fd = -kk * dd;
    fk = 4.0 * gamma * gamma * (y - dd) * dd;
  };
  for (int t = 0; t < T; ++t) {
    sol.delta_y[t] = d;
    sol.k_y[t] = k;
    if (t + 1 == T) break;
    double d1, k1, d2, k2, d3, k3, d4, k4;
    rhs(d, k, d1, k1);
    rhs(d + 0.5 * dt * d1, k + 0.5 * dt * k1, d2, k2);
    rhs(d + 0.5 * dt * d2, k + 0.5 * dt * k2, d3, k3);
    rhs(d + dt * d3, k + dt * k3, d4, k4);
    d += dt / 6.0 * (d1 + 2 * d2 + 2 * d3 + d4);
    k += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return sol;
}

SignalSolution solve_signal_discrete(double gamma, double y, const TimeGrid& grid) {
  if (y == 0.0) throw ContractError("solve_signal_discrete: y must be nonzero");
  EosTrajectory traj = iterate_mean_field(grid.step_size, gamma, y, grid.num_steps);
  SignalSolution sol;
  sol.grid = grid;
  sol.gamma = gamma;
  sol.y = y;
  sol.delta_y = traj.delta;
  sol.k_y = traj.ntk;
  return sol;
}

WhitenedBlocks blocks_whitened(const SignalSolution& signal, VpmForm form) {
  VpmMoments vm = vpm_moments(signal.delta_y, signal.gamma, signal.grid, form);
  WhitenedBlocks b;
  b.kappa_y = vm.kappa_y();
  b.kappa_perp = vm.kappa_perp();
  b.d_y = vm.d_y_density();
  b.d_perp = vm.d_perp_density();
  return b;
}

namespace {

Eigen::MatrixXd solve_component(const Eigen::MatrixXd& d_density, const Eigen::MatrixXd& kappa,
                                double gamma, const TimeGrid& grid) {
  int T = grid.num_steps;
  double w = grid.causal_weight();
  Eigen::MatrixXd u = gamma * Eigen::MatrixXd::Identity(T, T) + w * d_density;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(u);
  double rcond = lu.rcond();
  if (!(rcond > 1e-14))
    throw ConditioningError("propagator_whitened: (gamma I + D) is numerically singular, rcond=" +
                            std::to_string(rcond));
  Eigen::MatrixXd x = lu.solve(kappa);            // U^-1 kappa
  Eigen::MatrixXd sigma = lu.solve(x.transpose());  // U^-1 (U^-1 kappa)^T
  return 0.5 * (sigma + sigma.transpose());
}

}  // namespace

WhitenedPropagator propagator_whitened(const WhitenedBlocks& blocks, double gamma,
                                       const TimeGrid& grid) {
  WhitenedPropagator p;
  p.sigma_y = solve_component(blocks.d_y, blocks.kappa_y, gamma, grid);
  p.sigma_perp = solve_component(blocks.d_perp, blocks.kappa_perp, gamma, grid);
  return p;
}

LossExpansion expected_loss(const SignalSolution& signal, const WhitenedPropagator& prop,
                            int num_samples, int width, const Eigen::VectorXd* delta1) {
  int T = signal.grid.num_steps;
  LossExpansion out;
  out.mean_sq = signal.delta_y.array().square();
  out.bias_term = Eigen::VectorXd::Zero(T);
  if (delta1 != nullptr) {
    if (delta1->size() != T) throw ContractError("expected_loss: delta1 size mismatch");
    out.bias_term = 2.0 / width * delta1->cwiseProduct(signal.delta_y);
  }
  out.signal_var = prop.sigma_y.diagonal() / width;
  out.orth_var = (static_cast<double>(num_samples - 1) / width) * prop.sigma_perp.diagonal();
  out.total = out.mean_sq + out.bias_term + out.signal_var + out.orth_var;
  out.outside_validity = static_cast<double>(num_samples) / width > 0.25;
  return out;
}

LossExpansion online_map(double gamma, double beta_star, const TimeGrid& grid, int input_dim,
                         int width) {
  SignalSolution sol = solve_signal(gamma, beta_star, grid);
  WhitenedBlocks blocks = blocks_whitened(sol);
  WhitenedPropagator prop = propagator_whitened(blocks, gamma, grid);
  return expected_loss(sol, prop, input_dim, width);
}

}  // namespace wf
