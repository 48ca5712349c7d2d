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

#include "widefluct/twolayer.hpp"

#include <cmath>
#include <iostream>

#include "widefluct/causal.hpp"

namespace wf {

namespace {

Eigen::VectorXd ntk_curve(const OrderParameterSet& q) {
  Eigen::VectorXd k(q.steps());
  for (int t = 0; t < q.steps(); ++t) k[t] = q.ntk[static_cast<std::size_t>(t)](0, 0);
  return k;
}

}  // namespace

TwoLayerBlocks compute_kappa(const FieldSampleBatch& batch, const OrderParameterSet& q) {
  if (batch.h.cols() < 100)
    throw ContractError("compute_kappa: fewer than 100 samples; estimator too noisy");
  if (q.num_samples != 1 || q.depth != 1)
    throw ContractError("compute_kappa: two-layer single-train-point batches only");
  int T = batch.steps;
  double s_count = static_cast<double>(batch.h.cols());

  TwoLayerBlocks b;
  b.grid = q.grid;
  b.gamma = q.gamma;
  b.delta = q.errors.row(0);
  b.ntk = ntk_curve(q);

  Eigen::MatrixXd k = batch.ntk_summand();  // T x S
  Eigen::VectorXd k_mean = k.rowwise().mean();
  b.kappa = k * k.transpose() / s_count - k_mean * k_mean.transpose();
  // SE of the covariance estimator from second moments of the products.
  Eigen::MatrixXd ksq = k.array().square().matrix();
  Eigen::MatrixXd prod_sq_mean = ksq * ksq.transpose() / s_count;
  Eigen::MatrixXd prod_mean = k * k.transpose() / s_count;
  b.kappa_se = ((prod_sq_mean - prod_mean.cwiseProduct(prod_mean)).cwiseMax(0.0) / s_count)
                   .cwiseSqrt();

  // Initial-prediction noise: zeta = phi(h(0)) z(0) per site; the Delta(0)
  // constraint row carries -zeta/gamma, anti-correlated with the kernel noise.
  Activation a = q.activation;
  Eigen::ArrayXXd zeta = batch.h.row(0).unaryExpr([a](double x) { return act(a, x); }).array() *
                         batch.z.row(0).array();
  double zeta_mean = zeta.mean();
  Eigen::ArrayXXd zeta_c = zeta - zeta_mean;
  double g2 = q.gamma * q.gamma;
  b.init_var_delta0 = (zeta_c * zeta_c).mean() / g2;
  b.init_cov_delta0_k.resize(T);
  for (int t = 0; t < T; ++t) {
    double cov = (zeta_c * (k.row(t).array() - k_mean[t])).mean();
    b.init_cov_delta0_k[t] = -cov / q.gamma;
  }

  if (batch.h_star.size() > 0) {
    b.has_test = true;
    double c = batch.test_overlap;
    b.test_overlap = c;
    Eigen::MatrixXd k_star = batch.ntk_summand_star(c);
    Eigen::VectorXd ks_mean = k_star.rowwise().mean();
    b.ntk_star = ks_mean;
    b.kappa_star = k_star * k.transpose() / s_count - ks_mean * k_mean.transpose();
    b.kappa_star_star = k_star * k_star.transpose() / s_count - ks_mean * ks_mean.transpose();

    Eigen::ArrayXXd zeta_s =
        batch.h_star.row(0).unaryExpr([a](double x) { return act(a, x); }).array() *
        batch.z.row(0).array();
    double zs_mean = zeta_s.mean();
    Eigen::ArrayXXd zs_c = zeta_s - zs_mean;
    b.init_var_fstar0 = (zs_c * zs_c).mean() / g2;
    b.init_cov_delta0_fstar0 = (zeta_c * zs_c).mean() / g2;
    b.init_cov_delta0_kstar.resize(T);
    b.init_cov_fstar0_k.resize(T);
    b.init_cov_fstar0_kstar.resize(T);
    for (int t = 0; t < T; ++t) {
      b.init_cov_delta0_kstar[t] =
          -(zeta_c * (k_star.row(t).array() - ks_mean[t])).mean() / q.gamma;
      b.init_cov_fstar0_k[t] = (zs_c * (k.row(t).array() - k_mean[t])).mean() / q.gamma;
      b.init_cov_fstar0_kstar[t] =
          (zs_c * (k_star.row(t).array() - ks_mean[t])).mean() / q.gamma;
    }
  }
  return b;
}

void compute_d(const FieldSampleBatch& batch, const OrderParameterSet& q, TwoLayerBlocks& blocks) {
  if (batch.h.size() == 0) throw ContractError("compute_d: missing field trajectories");
  if (q.num_samples != 1 || q.depth != 1)
    throw ContractError("compute_d: two-layer single-train-point batches only");
  int T = batch.steps;
  Eigen::Index s_count = batch.h.cols();
  double gamma = q.gamma;
  double w = q.grid.causal_weight();
  Activation a = q.activation;
  Eigen::VectorXd delta = q.errors.row(0);
  bool test = batch.h_star.size() > 0;
  double c = blocks.has_test ? blocks.test_overlap : 0.0;

  int workers = max_jobs();
  std::vector<Eigen::MatrixXd> d_parts(workers, Eigen::MatrixXd::Zero(T, T));
  std::vector<Eigen::MatrixXd> ds_parts(workers, Eigen::MatrixXd::Zero(T, T));
  std::atomic<int> next_worker{0};

  parallel_for(s_count, [&](std::int64_t lo, std::int64_t hi) {
    int wid = next_worker.fetch_add(1);
    Eigen::MatrixXd& d_acc = d_parts[wid];
    Eigen::MatrixXd& ds_acc = ds_parts[wid];
    // Sensitivity densities psi_x(t, s) built forward in t for all kick times
    // s at once; acc_* hold the running causal integrals over s' < t.
    Eigen::RowVectorXd psi_h(T), psi_z(T), psi_g(T), psi_hs(T);
    Eigen::RowVectorXd acc_g(T), acc_h(T);
    for (std::int64_t j = lo; j < hi; ++j) {
      acc_g.setZero();
      acc_h.setZero();
      for (int t = 0; t < T; ++t) {
        double hv = batch.h(t, j), zv = batch.z(t, j), gv = batch.g(t, j);
        double d1 = act_d1(a, hv), d2 = act_d2(a, hv);
        double phi_v = act(a, hv);
        psi_h.setZero();
        psi_z.setZero();
        for (int s = 0; s < t; ++s) {
          psi_h[s] = gamma * batch.g(s, j) + gamma * acc_g[s];
          psi_z[s] = gamma * act(a, batch.h(s, j)) + gamma * acc_h[s];
        }
        psi_g = d2 * zv * psi_h + d1 * psi_z;
        for (int s = 0; s < t; ++s)
          d_acc(t, s) += 2.0 * phi_v * d1 * psi_h[s] + 2.0 * gv * psi_g[s];
        if (test) {
          double hs = batch.h_star(t, j);
          double gs = batch.g_star(t, j);
          double d1s = act_d1(a, hs), d2s = act_d2(a, hs);
          double phi_s = act(a, hs);
          psi_hs.setZero();
          for (int s = 0; s < t; ++s) psi_hs[s] = c * (gamma * batch.g(s, j) + gamma * acc_g[s]);
          for (int s = 0; s < t; ++s) {
            double dk = d1 * psi_h[s] * phi_s + phi_v * d1s * psi_hs[s] +
                        c * (psi_g[s] * gs + gv * (d2s * psi_hs[s] * zv + d1s * psi_z[s]));
            ds_acc(t, s) += dk;
          }
        }
        // Running integrals pick up the t-th slice for use at later times.
        if (t + 1 < T) {
          double coef = w * delta[t];
          acc_g.head(t + 1) += coef * psi_g.head(t + 1);
          acc_h.head(t + 1) += coef * d1 * psi_h.head(t + 1);
          // The kick at s = t itself becomes visible to later times; its
          // psi entries at s = t are zero here (Theta(0) = 0), handled by the
          // explicit source terms above.
        }
      }
    }
  });

  blocks.d = Eigen::MatrixXd::Zero(T, T);
  blocks.d_star = Eigen::MatrixXd::Zero(T, T);
  for (const auto& m : d_parts) blocks.d += m;
  for (const auto& m : ds_parts) blocks.d_star += m;
  blocks.d /= static_cast<double>(s_count);
  blocks.d_star /= static_cast<double>(s_count);
  if (!test) blocks.d_star.resize(0, 0);
}

TwoLayerBlocks closed_form_linear(const Eigen::VectorXd& delta_inf, double gamma,
                                  const TimeGrid& grid, VpmForm form) {
  VpmMoments vm = vpm_moments(delta_inf, gamma, grid, form);
  TwoLayerBlocks b;
  b.grid = grid;
  b.gamma = gamma;
  b.delta = delta_inf;
  b.ntk = vm.ntk();
  b.kappa = vm.kappa_ntk();
  b.d = vm.d_ntk_density();
  b.kappa_se = Eigen::MatrixXd::Zero(grid.num_steps, grid.num_steps);
  // Exact initial channel for linear fields: Cov(h z(0), k(t)) = p_t^2 - m_t^2.
  b.init_var_delta0 = 1.0 / (gamma * gamma);
  b.init_cov_delta0_k = -2.0 * vm.prediction();
  return b;
}

Propagator assemble_and_invert(const TwoLayerBlocks& blocks, AssembleReport* report) {
  int T = blocks.grid.num_steps;
  double w = blocks.grid.causal_weight();
  bool test = blocks.has_test;
  int nl = test ? 4 : 2;
  Eigen::Index n = static_cast<Eigen::Index>(nl) * T;

  // Label order within one time step: Delta, f_star, K, K_star
  // (Delta, K without a test point). Row index = t*nl + label.
  int i_delta = 0;
  int i_fstar = test ? 1 : -1;
  int i_k = test ? 2 : 1;
  int i_kstar = test ? 3 : -1;

  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd kappa_full = Eigen::MatrixXd::Zero(n, n);
  auto idx = [nl](int t, int label) { return static_cast<Eigen::Index>(t) * nl + label; };
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < t; ++s) {
      l(idx(t, i_delta), idx(s, i_delta)) = w * blocks.ntk[s];
      l(idx(t, i_delta), idx(s, i_k)) = w * blocks.delta[s];
      l(idx(t, i_k), idx(s, i_delta)) = -w * blocks.d(t, s);
      if (test) {
        l(idx(t, i_fstar), idx(s, i_delta)) = -w * blocks.ntk_star[s];
        l(idx(t, i_fstar), idx(s, i_kstar)) = -w * blocks.delta[s];
        l(idx(t, i_kstar), idx(s, i_delta)) = -w * blocks.d_star(t, s);
      }
    }
    for (int s = 0; s < T; ++s) {
      kappa_full(idx(t, i_k), idx(s, i_k)) = blocks.kappa(t, s);
      if (test) {
        kappa_full(idx(t, i_k), idx(s, i_kstar)) = blocks.kappa_star(s, t);
        kappa_full(idx(t, i_kstar), idx(s, i_k)) = blocks.kappa_star(t, s);
        kappa_full(idx(t, i_kstar), idx(s, i_kstar)) = blocks.kappa_star_star(t, s);
      }
    }
  }
  if (blocks.include_initial_fluctuations && blocks.init_cov_delta0_k.size() == T) {
    // f_t = f(0) + sum of increments: the initial prediction noise sources
    // every Delta (and f_star) constraint row, not only t = 0.
    for (int t = 0; t < T; ++t)
      for (int s = 0; s < T; ++s) {
        kappa_full(idx(t, i_delta), idx(s, i_delta)) += blocks.init_var_delta0;
        kappa_full(idx(t, i_delta), idx(s, i_k)) += blocks.init_cov_delta0_k[s];
        kappa_full(idx(s, i_k), idx(t, i_delta)) += blocks.init_cov_delta0_k[s];
        if (test) {
          kappa_full(idx(t, i_fstar), idx(s, i_fstar)) += blocks.init_var_fstar0;
          kappa_full(idx(t, i_delta), idx(s, i_fstar)) += -blocks.init_cov_delta0_fstar0;
          kappa_full(idx(s, i_fstar), idx(t, i_delta)) += -blocks.init_cov_delta0_fstar0;
          kappa_full(idx(t, i_delta), idx(s, i_kstar)) += blocks.init_cov_delta0_kstar[s];
          kappa_full(idx(s, i_kstar), idx(t, i_delta)) += blocks.init_cov_delta0_kstar[s];
          kappa_full(idx(t, i_fstar), idx(s, i_k)) += blocks.init_cov_fstar0_k[s];
          kappa_full(idx(s, i_k), idx(t, i_fstar)) += blocks.init_cov_fstar0_k[s];
          kappa_full(idx(t, i_fstar), idx(s, i_kstar)) += blocks.init_cov_fstar0_kstar[s];
          kappa_full(idx(s, i_kstar), idx(t, i_fstar)) += blocks.init_cov_fstar0_kstar[s];
        }
      }
  }

  Eigen::MatrixXd sigma = causal_sandwich(l, kappa_full, nl);
  if (report != nullptr) {
    double in_scale = std::max(1e-300, kappa_full.cwiseAbs().maxCoeff());
    report->condition_estimate = sigma.cwiseAbs().maxCoeff() / in_scale;
    report->tikhonov_applied = false;
  }

  std::vector<std::string> labels;
  labels.push_back("Delta");
  if (test) labels.push_back("f_star");
  labels.push_back("K");
  if (test) labels.push_back("K_star");
  Propagator prop;
  for (int bi = 0; bi < nl; ++bi)
    for (int bj = bi; bj < nl; ++bj) {
      Eigen::MatrixXd blockm(T, T);
      for (int t = 0; t < T; ++t)
        for (int s = 0; s < T; ++s) blockm(t, s) = sigma(idx(t, bi), idx(s, bj));
      prop.set_block(labels[bi], labels[bj], std::move(blockm));
    }
  return prop;
}

MeanErrorCorrection mean_error_correction(const Eigen::MatrixXd& sigma_k_delta,
                                          const Eigen::VectorXd& mean_k,
                                          const Eigen::VectorXd& sigma_delta_diag, double y,
                                          const TimeGrid& grid, double width) {
  int T = grid.num_steps;
  if (mean_k.size() != T) throw ContractError("mean_error_correction: mean_k length");
  double w = grid.causal_weight();
  MeanErrorCorrection out;
  out.mean_delta.resize(T);
  double d = y;
  for (int t = 0; t < T; ++t) {
    out.mean_delta[t] = d;
    if (t + 1 == T) break;
    double cross = sigma_k_delta.size() > 0 ? sigma_k_delta(t, t) : 0.0;
    d += w * (-mean_k[t] * d - cross / width);
  }
  out.mse_mean_part = out.mean_delta.array().square();
  out.mse_variance_part = sigma_delta_diag / width;
  out.mse = out.mse_mean_part + out.mse_variance_part;
  return out;
}

}  // namespace wf
