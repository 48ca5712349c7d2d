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

#ifndef WIDEFLUCT_DEEPLINEAR_HPP
#define WIDEFLUCT_DEEPLINEAR_HPP

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "widefluct/grid.hpp"

namespace wf {

// Depth-L linear networks on a whitened single training direction. Fields are
// Gaussian given the error signal, so the saddle point is computed by exact
// covariance propagation (no Monte Carlo) and the action is a sum of
// per-layer log-determinants that can be differentiated in closed form.
//
// "depth" counts weight matrices; num_hidden = depth - 1 >= 1. Per-layer
// couplings (strictly causal):
//   C^l(t,s) = Abar^{l-1}(t,s) + gamma w Theta(t-s) H^{l-1}(t,s) Delta(s)
//   D^l(t,s) = Bbar^l(t,s)     + gamma w Theta(t-s) G^{l+1}(t,s) Delta(s)
// with boundaries H^0 = G^{num_hidden+1} = all-ones (whitened direction),
// Abar^0 = Bbar^{num_hidden} = 0. Responses are stored as discrete Jacobian
// averages Abar^l = d h^l / d r^l, Bbar^l = d z^{l+1} / d u^{l+1}.
struct DeepLinearState {
  int num_hidden = 1;
  double gamma = 1.0;
  double y = 1.0;
  TimeGrid grid;
  std::vector<Eigen::MatrixXd> h_kernel;  // [0]=ones, 1..num_hidden
  std::vector<Eigen::MatrixXd> g_kernel;  // 1..num_hidden, [num_hidden+1]=ones
  std::vector<Eigen::MatrixXd> a_resp;    // 1..num_hidden-1 (strictly causal)
  std::vector<Eigen::MatrixXd> b_resp;    // 1..num_hidden-1
  Eigen::MatrixXd hz_cross_top;           // <h(t) z(s)> of the top hidden layer
  Eigen::VectorXd delta, ntk, f;

  int steps() const { return grid.num_steps; }
};

struct DeepLinearOptions {
  double damping = 0.5;
  double tol = 1e-10;
  int max_iters = 500;
};

DeepLinearState solve_deep_linear_saddle(int depth, double gamma, double y, const TimeGrid& grid,
                                         const DeepLinearOptions& options = {});

// Flattened coordinate catalogue of the DMFT action around a saddle:
// duals (Hhat^l, Ghat^l), responses (A^l, B^l), primals (H^l, G^l), K, Delta,
// Khat, Deltahat; symmetric matrices use upper-triangle coordinates.
class DeepLinearAction {
 public:
  enum class Kind { kHhat, kGhat, kKhat, kDeltahat, kA, kB, kH, kG, kK, kDelta };
  struct Coord {
    Kind kind;
    int layer;  // 0 when not applicable
    int a, b;   // matrix entry (a<=b for symmetric kinds); b=0 for vectors
  };

  explicit DeepLinearAction(const DeepLinearState& state);
  ~DeepLinearAction();
  DeepLinearAction(DeepLinearAction&&) noexcept;

  int dim() const;
  const std::vector<Coord>& coords() const;
  int index_of(Kind kind, int layer, int a, int b) const;

  // Action value / analytic gradient at a displacement from the saddle
  // (dual coordinates are absolute, since duals vanish at the saddle; primal
  // and response coordinates displace their saddle values).
  double value(const Eigen::VectorXd& displacement) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& displacement) const;

  // Exact Hessian at the saddle from the log-det trace identities.
  Eigen::MatrixXd hessian_analytic() const;
  // Richardson-extrapolated central differences of the analytic gradient
  // (step h = 1e-5 * scale); for cross-checks on small grids.
  Eigen::MatrixXd hessian_fd(double step = 1e-5) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct DeepLinearPropagator {
  Eigen::MatrixXd sigma_delta;  // N Cov(Delta(t), Delta(s))
  Eigen::MatrixXd sigma_k;      // N Cov(K(t), K(s))
  std::vector<Eigen::VectorXd> var_h;  // per hidden layer: N Var H^l(t,t)
  std::vector<Eigen::VectorXd> var_g;
};

// Propagator from the inverse action Hessian: Sigma = -[Hessian]^-1 restricted
// to the observable coordinates. include_initial_fluctuations adds the exact
// f(0) noise channel (unsubtracted training protocol).
DeepLinearPropagator hessian_and_propagator(const DeepLinearState& state,
                                            bool include_initial_fluctuations = true,
                                            bool use_fd_hessian = false);

}  // namespace wf

#endif  // WIDEFLUCT_DEEPLINEAR_HPP
