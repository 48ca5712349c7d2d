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

#ifndef WIDEFLUCT_NETS_HPP
#define WIDEFLUCT_NETS_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "widefluct/activation.hpp"
#include "widefluct/grid.hpp"

namespace wf {

enum class LossReduction { kSum, kMean };

// Mean-field / muP network
//   f = (1/(gamma N)) w^L . phi(h^L),  h^{l+1} = W^l phi(h^l)/sqrt(N),
//   h^1 = W^0 x / sqrt(D),
// trained by d theta/dt = -N gamma^2 grad L (explicit Euler or discrete GD).
// depth counts hidden layers; the network has depth+1 weight matrices.
struct NetworkConfig {
  int depth = 1;
  int width = 64;
  int input_dim = 16;
  double gamma = 1.0;
  Activation activation = Activation::kLinear;
  std::uint64_t seed = 0;
};

struct Dataset {
  Eigen::MatrixXd x;  // P x D
  Eigen::VectorXd y;  // P
  std::optional<Eigen::VectorXd> x_star;  // held-out test point
  LossReduction reduction = LossReduction::kSum;

  int num_samples() const { return static_cast<int>(x.rows()); }
  int input_dim() const { return static_cast<int>(x.cols()); }

  // Single training point with |x|^2 = D (random direction from seed).
  static Dataset single_point(int input_dim, double y, std::uint64_t seed);
  // Adds a test point with x.x_star / D = overlap and |x_star|^2 = D.
  void add_test_point(double overlap, std::uint64_t seed);
  // P exactly orthonormal inputs scaled so x_mu . x_nu = D delta_{mu nu}
  // (orthogonalized, not random). Requires P <= D. |y| is normalized to 1.
  static Dataset whitened(int num_samples, int input_dim, std::uint64_t seed);
};

struct Params {
  std::vector<Eigen::MatrixXd> w;  // w[0]: N x D, w[1..L-1]: N x N
  Eigen::VectorXd w_out;           // N
};

Params init_network(const NetworkConfig& config);

struct TrainOptions {
  bool subtract_background = false;  // report f - f(theta_0); lazy-regime runs only
  bool record_layer_kernels = true;
  bool record_test_point = true;
};

struct TrainingTrajectory {
  Eigen::VectorXd times;            // T
  Eigen::MatrixXd f;                // P x T
  Eigen::MatrixXd delta;            // P x T
  Eigen::VectorXd loss;             // T
  std::vector<Eigen::MatrixXd> ntk;              // T entries, P x P
  std::vector<Eigen::MatrixXd> phi_diag;         // layer l=1..L -> P x T of Phi^l(t,t) diagonal entries (mu,mu)
  std::vector<std::vector<Eigen::MatrixXd>> phi_full;  // layer -> T entries P x P (only if record_layer_kernels)
  std::vector<std::vector<Eigen::MatrixXd>> g_full;
  Eigen::VectorXd f_star;           // T (if test point)
  Eigen::MatrixXd k_star;           // P x T train-test NTK (if test point)
  std::vector<std::string> warnings;
};

// Trains in place on the grid; records observables at every step (index 0 is
// the state before any update). Throws DivergenceError on NaN, naming the step.
TrainingTrajectory train(Params& params, const Dataset& data, const TimeGrid& grid,
                         const NetworkConfig& config, const TrainOptions& options = {});

// Loss and flattened analytic gradient of L(theta) (the raw gradient, before
// the N gamma^2 learning-rate scaling); used by the finite-difference check.
std::pair<double, Eigen::VectorXd> loss_and_grad(const Params& params, const Dataset& data,
                                                 const NetworkConfig& config);
double loss_value(const Params& params, const Dataset& data, const NetworkConfig& config);

// Fresh-batch online training on the linear-target population risk
// y(x) = beta_star . x, x ~ N(0, I). Records beta(t) = W^T w_out/(gamma N)
// projected on beta_star ("beta") and the test risk |beta - beta_star|^2
// ("beta_err_sq"). batch_size fresh Gaussian samples per step, batch mean loss.
struct OnlineSpec {
  Eigen::VectorXd beta_star;
  int batch_size = 0;
  std::uint64_t data_seed = 0;
};
struct OnlineTrajectory {
  Eigen::VectorXd times;
  Eigen::VectorXd beta;         // beta_star-projection of beta(t)
  Eigen::VectorXd beta_err_sq;  // |beta(t) - beta_star|^2
  Eigen::VectorXd m_star;       // kernel along beta_star (2 sqrt(1+gamma^2 beta^2) analog)
};
OnlineTrajectory train_online(Params& params, const OnlineSpec& spec, const TimeGrid& grid,
                              const NetworkConfig& config);

// E trajectories with distinct seeds, identical data. Observables are stored
// as E x T matrices keyed by name:
//   "K"            NTK on the first train point K_00(t)
//   "Delta0"       error on the first train point
//   "f0"           prediction on the first train point
//   "loss"         training loss
//   "delta_sq_total"  |Delta(t)|^2
//   "Delta_y"      y-projected error (whitened runs)
//   "H1".."HL"     per-layer feature kernel diagonal Phi^l_00(t,t)
//   "G1".."GL"     per-layer gradient kernel diagonal
//   "f_star","K_star"  test-point observables when the dataset has one
struct EnsembleRecord {
  int width = 0;
  int ensemble_size = 0;
  Eigen::VectorXd times;
  std::map<std::string, Eigen::MatrixXd> samples;

  bool has(const std::string& name) const { return samples.count(name) > 0; }
  Eigen::VectorXd mean(const std::string& name) const;
  Eigen::VectorXd variance(const std::string& name) const;        // unbiased
  Eigen::VectorXd se_mean(const std::string& name) const;
  Eigen::VectorXd se_variance(const std::string& name) const;     // moment-based
  Eigen::VectorXd n_var(const std::string& name) const;           // N * Var
  Eigen::VectorXd se_n_var(const std::string& name) const;
};

EnsembleRecord run_ensemble(const NetworkConfig& config, const Dataset& data, const TimeGrid& grid,
                            int ensemble_size, std::uint64_t master_seed,
                            const TrainOptions& options = {});

EnsembleRecord run_ensemble_online(const NetworkConfig& config, const OnlineSpec& spec,
                                   const TimeGrid& grid, int ensemble_size,
                                   std::uint64_t master_seed);

// Least-squares fit of log L(t) = log C - R t over [t_lo, t_hi].
struct RateFit {
  double rate = 0.0;
  double log_amplitude = 0.0;
};
RateFit fit_training_rate(const Eigen::VectorXd& loss, const Eigen::VectorXd& times,
                          double t_lo, double t_hi);

// Commuting-case rate matrix R(t) = sum_{s<t} K(s) * step (per-mode integral
// of the NTK); valid when K(t) commutes with its running average.
std::vector<Eigen::MatrixXd> rate_matrix_commuting(const std::vector<Eigen::MatrixXd>& ntk,
                                                   const TimeGrid& grid);

}  // namespace wf

#endif  // WIDEFLUCT_NETS_HPP
