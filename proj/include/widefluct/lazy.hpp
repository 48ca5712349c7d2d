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

#ifndef WIDEFLUCT_LAZY_HPP
#define WIDEFLUCT_LAZY_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "widefluct/activation.hpp"
#include "widefluct/grid.hpp"

namespace wf {

// gamma -> 0 regime: the NTK is random but static, and the error covariance
// obeys a linear ODE in the eigenbasis of the infinite-width NTK.
//
// Spectral convention: plain matrix eigendecomposition of the P x P NTK with
// unit-norm eigenvectors, paired with the sum-reduction MSE trainer so each
// mode decays at rate lambda_k. (Averages over the uniform training
// distribution rescale psi by sqrt(P) and lambda by 1/P; that relabeling
// leaves every observable curve unchanged.)
struct LazySpectrum {
  Eigen::VectorXd lambda;   // descending, >= 0 up to tolerance
  Eigen::MatrixXd psi;      // P x P, column k = psi_k, unit norm
  Eigen::VectorXd y_coeff;  // y_k = psi_k . y

  Eigen::VectorXd delta_inf(int k, const Eigen::VectorXd& times) const;  // e^{-lambda_k t} y_k
};

// Symmetric eigendecomposition with descending eigenvalues and the sign fixed
// so each eigenvector's first nonzero coordinate is positive. Throws if
// max |K - K^T| > 1e-10.
LazySpectrum eig_static_ntk(const Eigen::MatrixXd& k_inf, const Eigen::VectorXd& y);

// Infinite-width two-layer relu NTK (arc-cosine kernels):
// K(x,x') = Phi1(x,x') + (x.x'/D) * G1(x,x').
Eigen::MatrixXd relu_two_layer_ntk(const Eigen::MatrixXd& gram);

// kappa_{k m l n} = N Cov(K~_{km}, K~_{ln}) with K~ the NTK projected onto the
// psi basis; dense P^4 storage with full pair symmetrization.
struct Kappa4 {
  int p = 0;
  std::vector<double> data;

  double& at(int k, int m, int l, int n) { return data[((static_cast<std::size_t>(k) * p + m) * p + l) * p + n]; }
  double at(int k, int m, int l, int n) const {
    return data[((static_cast<std::size_t>(k) * p + m) * p + l) * p + n];
  }
  void symmetrize();  // (k<->m), (l<->n), pair swap
  // Reshape to the (km) x (ln) covariance matrix of the P^2 kernel entries.
  Eigen::MatrixXd as_pair_matrix() const;
};

// From an ensemble of measured NTK matrices at width N.
Kappa4 estimate_kappa4_from_ensemble(const std::vector<Eigen::MatrixXd>& ntk_draws, int width,
                                     const LazySpectrum& spectrum);
// From S single-site Gaussian draws of the static kernels (width-1 cumulants).
Kappa4 estimate_kappa4_single_site(const Eigen::MatrixXd& gram, Activation activation,
                                   int num_draws, std::uint64_t seed,
                                   const LazySpectrum& spectrum);

struct LazyVariance {
  int p = 0;
  TimeGrid grid;
  std::vector<Eigen::MatrixXd> sigma;  // (k*P+l) -> Sigma_kl(t,s), T x T

  const Eigen::MatrixXd& block(int k, int l) const { return sigma[static_cast<std::size_t>(k) * p + l]; }
  Eigen::VectorXd mode_variance(int k) const;   // Sigma_kk(t,t)
  Eigen::VectorXd total_n_var() const;          // N sum_mu Var Delta_mu = P sum_k Sigma_kk(t,t)
};

// Exact per-mode-pair solution of
//   (d/dt + lambda_k)(d/ds + lambda_l) Sigma_kl = sum_nm kappa_{kmln} D_m(t) D_n(s)
// with zero initial data, via the factored exponential convolution.
LazyVariance solve_variance_ode(const Kappa4& kappa, const LazySpectrum& spectrum,
                                const TimeGrid& grid);

// Brute-force oracle: draw kernel perturbations eps^K with covariance kappa,
// integrate d eps/dt = -lambda eps - eps^K Delta_inf(t), return the empirical
// covariance scaled back to N Cov.
LazyVariance linearized_mc_check(const Kappa4& kappa, const LazySpectrum& spectrum,
                                 const TimeGrid& grid, int num_draws, std::uint64_t seed);

// Leading mean correction (App-level closed form):
//   (d/dt + lambda_k) Delta1_k = -sum_l K1_{kl} y_l e^{-lambda_l t}
//     + sum_{l l'} kappa_{k l l l'} gap(lambda_l, lambda_{l'}; t) y_{l'}.
// k1_proj is the psi-projected mean-kernel correction N(<K>_N - K_inf); may be
// empty (treated as zero). Returns P x T mode curves.
Eigen::MatrixXd mean_correction_lazy(const Eigen::MatrixXd& k1_proj, const Kappa4& sigma_k,
                                     const LazySpectrum& spectrum, const TimeGrid& grid);

}  // namespace wf

#endif  // WIDEFLUCT_LAZY_HPP
