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

#include "widefluct/lazy.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "widefluct/rng.hpp"
#include "widefluct/types.hpp"

namespace wf {

namespace {

// (e^{-b t} - e^{-a t}) / (a - b) with the a -> b limit t e^{-a t}.
double exp_gap(double a, double b, double t) {
  double g = a - b;
  if (std::abs(g) < 1e-13 * std::max({std::abs(a), std::abs(b), 1.0}))
    return t * std::exp(-a * t);
  return std::exp(-b * t) * (-std::expm1(-g * t)) / g;
}

}  // namespace

Eigen::VectorXd LazySpectrum::delta_inf(int k, const Eigen::VectorXd& times) const {
  return y_coeff[k] * (-lambda[k] * times.array()).exp();
}

LazySpectrum eig_static_ntk(const Eigen::MatrixXd& k_inf, const Eigen::VectorXd& y) {
  if (symmetry_violation(k_inf) > 1e-10)
    throw ContractError("eig_static_ntk: kernel asymmetry beyond 1e-10");
  int p = static_cast<int>(k_inf.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (k_inf + k_inf.transpose()));
  LazySpectrum spec;
  spec.lambda.resize(p);
  spec.psi.resize(p, p);
  // Eigen returns ascending order; flip to descending and fix the sign by the
  // first nonzero coordinate.
  for (int k = 0; k < p; ++k) {
    int src = p - 1 - k;
    spec.lambda[k] = es.eigenvalues()[src];
    Eigen::VectorXd v = es.eigenvectors().col(src);
    for (int i = 0; i < p; ++i) {
      if (std::abs(v[i]) > 1e-12) {
        if (v[i] < 0) v = -v;
        break;
      }
    }
    spec.psi.col(k) = v;
  }
  spec.y_coeff = spec.psi.transpose() * y;
  return spec;
}

Eigen::MatrixXd relu_two_layer_ntk(const Eigen::MatrixXd& gram) {
  int p = static_cast<int>(gram.rows());
  Eigen::MatrixXd k(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      double a = gram(i, i), b = gram(j, j), c = gram(i, j);
      double denom = std::sqrt(a * b);
      double cost = std::min(1.0, std::max(-1.0, c / denom));
      double theta = std::acos(cost);
      double phi1 = denom / (2.0 * M_PI) * (std::sin(theta) + (M_PI - theta) * cost);
      double g1 = (M_PI - theta) / (2.0 * M_PI);
      k(i, j) = phi1 + c * g1;
    }
  }
  return k;
}

void Kappa4::symmetrize() {
  Kappa4 copy = *this;
  for (int k = 0; k < p; ++k)
    for (int m = 0; m < p; ++m)
      for (int l = 0; l < p; ++l)
        for (int n = 0; n < p; ++n)
          at(k, m, l, n) = 0.125 * (copy.at(k, m, l, n) + copy.at(m, k, l, n) +
                                    copy.at(k, m, n, l) + copy.at(m, k, n, l) +
                                    copy.at(l, n, k, m) + copy.at(n, l, k, m) +
                                    copy.at(l, n, m, k) + copy.at(n, l, m, k));
}

Eigen::MatrixXd Kappa4::as_pair_matrix() const {
  Eigen::MatrixXd m(p * p, p * p);
  for (int k = 0; k < p; ++k)
    for (int a = 0; a < p; ++a)
      for (int l = 0; l < p; ++l)
        for (int b = 0; b < p; ++b) m(k * p + a, l * p + b) = at(k, a, l, b);
  return m;
}

namespace {

Kappa4 kappa_from_draws(const std::vector<Eigen::MatrixXd>& draws, double scale,
                        const LazySpectrum& spectrum) {
  int p = static_cast<int>(spectrum.psi.rows());
  std::size_t e = draws.size();
  // Project each draw: K~_{kl} = psi_k^T K psi_l.
  std::vector<Eigen::MatrixXd> proj(e);
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < e; ++i) {
    proj[i] = spectrum.psi.transpose() * draws[i] * spectrum.psi;
    mean += proj[i];
  }
  mean /= static_cast<double>(e);
  Kappa4 kappa;
  kappa.p = p;
  kappa.data.assign(static_cast<std::size_t>(p) * p * p * p, 0.0);
  for (std::size_t i = 0; i < e; ++i) {
    Eigen::MatrixXd c = proj[i] - mean;
    for (int k = 0; k < p; ++k)
      for (int m = 0; m < p; ++m)
        for (int l = 0; l < p; ++l)
          for (int n = 0; n < p; ++n) kappa.at(k, m, l, n) += c(k, m) * c(l, n);
  }
  double denom = e > 1 ? static_cast<double>(e - 1) : 1.0;
  for (auto& v : kappa.data) v *= scale / denom;
  kappa.symmetrize();
  return kappa;
}

}  // namespace

Kappa4 estimate_kappa4_from_ensemble(const std::vector<Eigen::MatrixXd>& ntk_draws, int width,
                                     const LazySpectrum& spectrum) {
  if (ntk_draws.size() < 100)
    throw ContractError("estimate_kappa4_from_ensemble: needs E >= 100 networks");
  return kappa_from_draws(ntk_draws, static_cast<double>(width), spectrum);
}

Kappa4 estimate_kappa4_single_site(const Eigen::MatrixXd& gram, Activation activation,
                                   int num_draws, std::uint64_t seed,
                                   const LazySpectrum& spectrum) {
  if (num_draws < 10000)
    throw ContractError("estimate_kappa4_single_site: needs S >= 10^4 draws");
  int p = static_cast<int>(gram.rows());
  // Single-site NTK summand: k_{mu nu} = phi(u_mu) phi(u_nu) +
  // phi'(u_mu) phi'(u_nu) r^2 Gram_{mu nu}; N Cov(K) equals Cov over sites.
  Eigen::LLT<Eigen::MatrixXd> llt(gram + 1e-12 * Eigen::MatrixXd::Identity(p, p));
  Eigen::MatrixXd chol = llt.matrixL();
  std::vector<Eigen::MatrixXd> draws(num_draws);
  parallel_for(num_draws, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      CounterRng rng = CounterRng::from(seed, static_cast<std::uint64_t>(i));
      Eigen::VectorXd eps(p);
      for (int j = 0; j < p; ++j) eps[j] = rng.next_gaussian();
      double r = rng.next_gaussian();
      Eigen::VectorXd u = chol * eps;
      Eigen::VectorXd phi(p), dphi(p);
      for (int j = 0; j < p; ++j) {
        phi[j] = act(activation, u[j]);
        dphi[j] = act_d1(activation, u[j]);
      }
      draws[i] = phi * phi.transpose() +
                 (r * r) * (dphi * dphi.transpose()).cwiseProduct(gram);
    }
  });
  return kappa_from_draws(draws, 1.0, spectrum);
}

namespace {

// w_{km}(t) = y_m * gap(lambda_k, lambda_m; t): response of mode k to the
// driving mode m.
std::vector<Eigen::MatrixXd> response_profiles(const LazySpectrum& spectrum,
                                               const TimeGrid& grid) {
  int p = static_cast<int>(spectrum.lambda.size());
  int T = grid.num_steps;
  std::vector<Eigen::MatrixXd> w(T, Eigen::MatrixXd(p, p));
  for (int t = 0; t < T; ++t) {
    double tv = grid.time(t);
    for (int k = 0; k < p; ++k)
      for (int m = 0; m < p; ++m)
        w[t](k, m) = spectrum.y_coeff[m] * exp_gap(spectrum.lambda[k], spectrum.lambda[m], tv);
  }
  return w;
}

}  // namespace

Eigen::VectorXd LazyVariance::mode_variance(int k) const {
  return block(k, k).diagonal();
}

Eigen::VectorXd LazyVariance::total_n_var() const {
  Eigen::VectorXd total = Eigen::VectorXd::Zero(grid.num_steps);
  for (int k = 0; k < p; ++k) total += mode_variance(k);
  return total;
}

LazyVariance solve_variance_ode(const Kappa4& kappa, const LazySpectrum& spectrum,
                                const TimeGrid& grid) {
  int p = static_cast<int>(spectrum.lambda.size());
  if (kappa.p != p) throw ContractError("solve_variance_ode: kappa/spectrum size mismatch");
  int T = grid.num_steps;
  std::vector<Eigen::MatrixXd> w = response_profiles(spectrum, grid);
  LazyVariance out;
  out.p = p;
  out.grid = grid;
  out.sigma.assign(static_cast<std::size_t>(p) * p, Eigen::MatrixXd::Zero(T, T));
  parallel_for(static_cast<std::int64_t>(p) * p, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t kl = lo; kl < hi; ++kl) {
      int k = static_cast<int>(kl) / p;
      int l = static_cast<int>(kl) % p;
      Eigen::MatrixXd& s = out.sigma[static_cast<std::size_t>(kl)];
      for (int m = 0; m < p; ++m)
        for (int n = 0; n < p; ++n) {
          double c = kappa.at(k, m, l, n);
          if (c == 0.0) continue;
          for (int ti = 0; ti < T; ++ti) {
            double wk = w[ti](k, m);
            if (wk == 0.0) continue;
            for (int si = 0; si < T; ++si) s(ti, si) += c * wk * w[si](l, n);
          }
        }
    }
  });
  return out;
}

LazyVariance linearized_mc_check(const Kappa4& kappa, const LazySpectrum& spectrum,
                                 const TimeGrid& grid, int num_draws, std::uint64_t seed) {
  int p = static_cast<int>(spectrum.lambda.size());
  int T = grid.num_steps;
  double dt = grid.step_size;

  // Draw symmetric kernel perturbations with Cov = kappa over the P(P+1)/2
  // independent entries, embedded from the full pair matrix.
  Eigen::MatrixXd pair_cov = kappa.as_pair_matrix();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pair_cov);
  Eigen::VectorXd evals = es.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd root = es.eigenvectors() * evals.cwiseSqrt().asDiagonal();

  // Per-mode sample matrices (draws x T) so the covariances reduce to GEMMs.
  std::vector<Eigen::MatrixXd> mode_traj(p, Eigen::MatrixXd(num_draws, T));

  parallel_for(num_draws, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      CounterRng rng = CounterRng::from(seed, static_cast<std::uint64_t>(i));
      Eigen::VectorXd z(p * p);
      for (int j = 0; j < p * p; ++j) z[j] = rng.next_gaussian();
      Eigen::VectorXd flat = root * z;
      Eigen::MatrixXd eps = Eigen::Map<Eigen::MatrixXd>(flat.data(), p, p);
      eps = 0.5 * (eps + eps.transpose());
      // d eps^Delta/dt = -Lambda eps^Delta - eps^K Delta_inf(t), explicit Euler
      // on the shared grid.
      Eigen::VectorXd e = Eigen::VectorXd::Zero(p);
      for (int t = 0; t < T; ++t) {
        for (int k = 0; k < p; ++k) mode_traj[k](i, t) = e[k];
        if (t + 1 == T) break;
        Eigen::VectorXd dinf(p);
        for (int k = 0; k < p; ++k)
          dinf[k] = spectrum.y_coeff[k] * std::exp(-spectrum.lambda[k] * grid.time(t));
        e += dt * (-spectrum.lambda.cwiseProduct(e) - eps * dinf);
      }
    }
  });
  for (int k = 0; k < p; ++k)
    mode_traj[k].rowwise() -= mode_traj[k].colwise().mean();
  LazyVariance out;
  out.p = p;
  out.grid = grid;
  out.sigma.resize(static_cast<std::size_t>(p) * p);
  double denom = std::max(1, num_draws - 1);
  for (int k = 0; k < p; ++k)
    for (int l = 0; l < p; ++l)
      out.sigma[static_cast<std::size_t>(k) * p + l] =
          mode_traj[k].transpose() * mode_traj[l] / denom;
  return out;
}

Eigen::MatrixXd mean_correction_lazy(const Eigen::MatrixXd& k1_proj, const Kappa4& sigma_k,
                                     const LazySpectrum& spectrum, const TimeGrid& grid) {
  int p = static_cast<int>(spectrum.lambda.size());
  int T = grid.num_steps;
  double dt = grid.step_size;
  bool have_k1 = k1_proj.size() > 0;
  if (have_k1 && (k1_proj.rows() != p || k1_proj.cols() != p))
    throw ContractError("mean_correction_lazy: K1 dimension mismatch");

  auto rhs_force = [&](int k, double t) {
    double f = 0.0;
    for (int l = 0; l < p; ++l) {
      if (have_k1) f -= k1_proj(k, l) * spectrum.y_coeff[l] * std::exp(-spectrum.lambda[l] * t);
      for (int lp = 0; lp < p; ++lp)
        f += sigma_k.at(k, l, l, lp) * exp_gap(spectrum.lambda[l], spectrum.lambda[lp], t) *
             spectrum.y_coeff[lp];
    }
    return f;
  };

  Eigen::MatrixXd delta1 = Eigen::MatrixXd::Zero(p, T);
  for (int k = 0; k < p; ++k) {
    double lam = spectrum.lambda[k];
    double x = 0.0;
    for (int t = 0; t < T; ++t) {
      delta1(k, t) = x;
      if (t + 1 == T) break;
      double tv = grid.time(t);
      auto f = [&](double tt, double xx) { return -lam * xx + rhs_force(k, tt); };
      double k1v = f(tv, x);
      double k2v = f(tv + 0.5 * dt, x + 0.5 * dt * k1v);
      double k3v = f(tv + 0.5 * dt, x + 0.5 * dt * k2v);
      double k4v = f(tv + dt, x + dt * k3v);
      x += dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
    }
  }
  return delta1;
}

}  // namespace wf
