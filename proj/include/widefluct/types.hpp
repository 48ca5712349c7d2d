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

#ifndef WIDEFLUCT_TYPES_HPP
#define WIDEFLUCT_TYPES_HPP

#include <Eigen/Dense>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "widefluct/activation.hpp"
#include "widefluct/grid.hpp"

namespace wf {

// The DMFT state q_infty for a depth-L MLP on P samples over T time steps.
//
// Kernels are stored as dense (P*T) x (P*T) matrices in the flatten_index
// layout (sample-major, time-minor). Physical layer indices:
//   Phi[0]     = input Gram kernel, constant in time
//   Phi[1..L]  = feature kernels of the hidden layers
//   G[1..L]    = gradient kernels, G[L+1] = all-ones boundary
//   A[1..L-1], B[1..L-1] = response kernels, stored as DISCRETE Jacobian
// averages: A[l](t,s) = < d phi(h^l(t)) / d r^l_s >,
//           B[l](t,s) = < d g^{l+1}(t) / d u^{l+1}_s >,
// i.e. gamma * causal_weight * (continuum response density). Both are strictly
// lower-triangular in time.
struct OrderParameterSet {
  int depth = 1;          // L = number of hidden layers
  double gamma = 1.0;
  int num_samples = 1;    // P
  Activation activation = Activation::kLinear;
  TimeGrid grid;

  std::vector<Eigen::MatrixXd> feature_kernels;   // index 0..L
  std::vector<Eigen::MatrixXd> gradient_kernels;  // index 0 unused, 1..L+1
  std::vector<Eigen::MatrixXd> responses_a;       // index 0 unused, 1..L-1
  std::vector<Eigen::MatrixXd> responses_b;       // index 0 unused, 1..L-1

  Eigen::MatrixXd errors;       // P x T, Delta_mu(t)
  Eigen::MatrixXd predictions;  // P x T, f_mu(t)
  std::vector<Eigen::MatrixXd> ntk;  // per time step: P x P
  Eigen::VectorXd targets;      // P

  int steps() const { return grid.num_steps; }

  // mu-nu block of a (P*T)x(P*T) kernel, as a T x T time matrix.
  static Eigen::MatrixXd time_block(const Eigen::MatrixXd& k, int mu, int nu, int T) {
    return k.block(static_cast<Eigen::Index>(mu) * T, static_cast<Eigen::Index>(nu) * T, T, T);
  }

  Eigen::VectorXd ntk_diag_series(int mu, int nu) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(ntk.size()));
    for (std::size_t t = 0; t < ntk.size(); ++t) out[static_cast<Eigen::Index>(t)] = ntk[t](mu, nu);
    return out;
  }
};

// max |M - M^T| and smallest eigenvalue, used by the PSD/symmetry invariants.
double symmetry_violation(const Eigen::MatrixXd& m);
double min_eigenvalue(const Eigen::MatrixXd& m);
bool is_causal_strict(const Eigen::MatrixXd& m, double tol = 0.0);

// kappa (uncoupled variance) and D (sensitivity) tensors for one propagator
// assembly, plus the assembled U matrix, keyed by order-parameter pair labels
// such as "K|K" or "K|Delta". Hatted conjugate variables exist only as the row
// axis of these blocks; they are never runtime state.
struct HessianBlocks {
  std::map<std::string, Eigen::MatrixXd> kappa_blocks;
  std::map<std::string, Eigen::MatrixXd> d_blocks;
  Eigen::MatrixXd u_matrix;
};

// Leading-order covariance of the order parameters: Var ~ Sigma / N.
// Blocks are keyed by (label_a, label_b) over flattened (sample, time) indices
// and satisfy block(a,b) = block(b,a)^T.
class Propagator {
 public:
  void set_block(const std::string& a, const std::string& b, Eigen::MatrixXd m);
  bool has_block(const std::string& a, const std::string& b) const;
  // Returns block(a,b), transposing a stored (b,a) if needed.
  Eigen::MatrixXd block(const std::string& a, const std::string& b) const;
  Eigen::VectorXd diagonal(const std::string& a) const;  // Sigma_aa(t,t) series
  std::vector<std::string> labels() const;

  // Checks Sigma_aa is symmetric and PSD up to tol * trace-scale.
  void check_diagonal_block_psd(const std::string& a, double tol = 1e-8) const;

  static constexpr const char* kWidthScale = "Var ~ Sigma / N";

 private:
  std::map<std::pair<std::string, std::string>, Eigen::MatrixXd> blocks_;
};

}  // namespace wf

#endif  // WIDEFLUCT_TYPES_HPP
