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

#include "widefluct/saddle.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "widefluct/csv.hpp"
#include "widefluct/rng.hpp"

namespace wf {

Eigen::MatrixXd FieldSampleBatch::ntk_summand() const {
  if (num_samples_p != 1) throw ContractError("ntk_summand: single-train-point batches only");
  Activation a = activation;
  Eigen::MatrixXd phi_h = h.unaryExpr([a](double x) { return act(a, x); });
  return phi_h.array().square() + g.array().square();
}

Eigen::MatrixXd FieldSampleBatch::ntk_summand_star(double overlap) const {
  if (h_star.size() == 0) throw ContractError("ntk_summand_star: no test-point fields");
  Activation a = activation;
  Eigen::MatrixXd phi_h = h.unaryExpr([a](double x) { return act(a, x); });
  Eigen::MatrixXd phi_hs = h_star.unaryExpr([a](double x) { return act(a, x); });
  return phi_h.array() * phi_hs.array() + overlap * g.array() * g_star.array();
}

Eigen::MatrixXd sample_gp(const Eigen::MatrixXd& cov, int num_draws, std::uint64_t seed) {
  if (cov.rows() != cov.cols()) throw ContractError("sample_gp: covariance must be square");
  if (symmetry_violation(cov) > 1e-8 * std::max(1.0, cov.cwiseAbs().maxCoeff()))
    throw ContractError("sample_gp: covariance not symmetric");
  Eigen::Index n = cov.rows();
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 1e-10;
  bool ok = false;
  Eigen::MatrixXd shifted;
  for (; jitter <= 1.0001e-6; jitter *= 10.0) {
    shifted = cov + jitter * Eigen::MatrixXd::Identity(n, n);
    llt.compute(shifted);
    if (llt.info() == Eigen::Success) {
      ok = true;
      break;
    }
  }
  if (!ok) {
    double lam_min = min_eigenvalue(cov);
    throw ContractError("sample_gp: covariance not PSD within jitter ladder; min eigenvalue = " +
                        std::to_string(lam_min));
  }
  Eigen::MatrixXd chol = llt.matrixL();
  Eigen::MatrixXd eps(n, num_draws);
  parallel_for(num_draws, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t s = lo; s < hi; ++s) {
      CounterRng rng = CounterRng::from(seed, static_cast<std::uint64_t>(s));
      for (Eigen::Index i = 0; i < n; ++i) eps(i, s) = rng.next_gaussian();
    }
  });
  return chol * eps;
}

namespace {

// Effective causal coupling matrices: Ch = Abar + gamma*w*(Phi_prev o Delta_col),
// Cz = Bbar + gamma*w*(G_next o Delta_col), strictly lower-triangular in time.
Eigen::MatrixXd build_coupling(const Eigen::MatrixXd* jac, const Eigen::MatrixXd* kernel,
                               const Eigen::MatrixXd& delta, double gamma, const TimeGrid& grid,
                               int p) {
  int T = grid.num_steps;
  Eigen::Index n = static_cast<Eigen::Index>(p) * T;
  double gw = gamma * grid.causal_weight();
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
  if (kernel != nullptr) {
    for (int mu = 0; mu < p; ++mu)
      for (int t = 0; t < T; ++t)
        for (int nu = 0; nu < p; ++nu)
          for (int s = 0; s < t; ++s)
            c(mu * T + t, nu * T + s) = gw * (*kernel)(mu * T + t, nu * T + s) * delta(nu, s);
  }
  if (jac != nullptr && jac->size() > 0) c += *jac;
  // Causality guard: never let stale anticausal entries leak in.
  for (int mu = 0; mu < p; ++mu)
    for (int t = 0; t < T; ++t)
      for (int nu = 0; nu < p; ++nu)
        for (int s = t; s < T; ++s) c(mu * T + t, nu * T + s) = 0.0;
  return c;
}

}  // namespace

FieldSampleBatch solve_single_site(const Eigen::MatrixXd& u, const Eigen::MatrixXd& r,
                                   const SingleSiteCouplings& couplings,
                                   const Eigen::MatrixXd& delta, double gamma,
                                   Activation activation, const TimeGrid& grid) {
  int T = grid.num_steps;
  int p = static_cast<int>(delta.rows());
  Eigen::Index n = static_cast<Eigen::Index>(p) * T;
  if (u.rows() != n || r.rows() != n) throw ContractError("solve_single_site: source shape mismatch");
  Eigen::Index s_count = u.cols();

  Eigen::MatrixXd ch = build_coupling(couplings.a_prev, couplings.phi_prev, delta, gamma, grid, p);
  Eigen::MatrixXd cz = build_coupling(couplings.b_this, couplings.g_next, delta, gamma, grid, p);

  FieldSampleBatch batch;
  batch.num_samples_p = p;
  batch.steps = T;
  batch.activation = activation;
  batch.u = u;
  batch.r = r;
  batch.h.resize(n, s_count);
  batch.z.resize(n, s_count);
  batch.g.resize(n, s_count);
  Eigen::MatrixXd phi_h(n, s_count);

  // Samples are independent given the frozen order parameters: parallel map
  // over column blocks, forward in time within each block.
  std::atomic<bool> diverged{false};
  parallel_for(s_count, [&](std::int64_t lo, std::int64_t hi) {
    Eigen::Index cols = hi - lo;
    if (cols <= 0) return;
    for (int t = 0; t < T; ++t) {
      for (int mu = 0; mu < p; ++mu) {
        Eigen::Index row = static_cast<Eigen::Index>(mu) * T + t;
        batch.h.row(row).segment(lo, cols) = u.row(row).segment(lo, cols);
        batch.z.row(row).segment(lo, cols) = r.row(row).segment(lo, cols);
        for (int nu = 0; nu < p; ++nu) {
          for (int s = 0; s < t; ++s) {
            Eigen::Index col = static_cast<Eigen::Index>(nu) * T + s;
            double chv = ch(row, col);
            if (chv != 0.0)
              batch.h.row(row).segment(lo, cols) += chv * batch.g.row(col).segment(lo, cols);
            double czv = cz(row, col);
            if (czv != 0.0)
              batch.z.row(row).segment(lo, cols) += czv * phi_h.row(col).segment(lo, cols);
          }
        }
        for (Eigen::Index j = lo; j < hi; ++j) {
          double hv = batch.h(row, j);
          phi_h(row, j) = act(activation, hv);
          batch.g(row, j) = act_d1(activation, hv) * batch.z(row, j);
        }
        if (!batch.h.row(row).segment(lo, cols).allFinite() ||
            !batch.z.row(row).segment(lo, cols).allFinite())
          diverged.store(true);
      }
    }
  });
  if (diverged.load()) throw DivergenceError("solve_single_site: NaN/Inf in resolved fields");
  return batch;
}

KernelEstimates update_order_params(const FieldSampleBatch& batch,
                                    const SingleSiteCouplings& couplings,
                                    const Eigen::MatrixXd& delta, double gamma,
                                    Activation activation, const TimeGrid& grid,
                                    bool with_jacobians, int jacobian_samples) {
  Eigen::Index n = batch.h.rows();
  Eigen::Index s_count = batch.h.cols();
  if (s_count == 0) throw ContractError("update_order_params: empty batch");
  int T = batch.steps;
  int p = batch.num_samples_p;

  Eigen::MatrixXd phi_h = batch.h.unaryExpr([&](double x) { return act(activation, x); });
  KernelEstimates est;
  est.phi = phi_h * phi_h.transpose() / static_cast<double>(s_count);
  est.g = batch.g * batch.g.transpose() / static_cast<double>(s_count);

  if (!with_jacobians) return est;

  Eigen::MatrixXd ch = build_coupling(couplings.a_prev, couplings.phi_prev, delta, gamma, grid, p);
  Eigen::MatrixXd cz = build_coupling(couplings.b_this, couplings.g_next, delta, gamma, grid, p);
  int sj = jacobian_samples > 0 ? std::min<int>(jacobian_samples, static_cast<int>(s_count))
                                : static_cast<int>(s_count);

  est.a_jac = Eigen::MatrixXd::Zero(n, n);
  est.b_jac = Eigen::MatrixXd::Zero(n, n);
  std::vector<Eigen::MatrixXd> a_parts(max_jobs(), Eigen::MatrixXd::Zero(n, n));
  std::vector<Eigen::MatrixXd> b_parts(max_jobs(), Eigen::MatrixXd::Zero(n, n));
  std::atomic<int> worker_id{0};

  parallel_for(sj, [&](std::int64_t lo, std::int64_t hi) {
    int wid = worker_id.fetch_add(1);
    Eigen::MatrixXd jh(n, n), jz(n, n), jg(n, n);
    Eigen::MatrixXd& a_acc = a_parts[wid];
    Eigen::MatrixXd& b_acc = b_parts[wid];
    for (std::int64_t sample = lo; sample < hi; ++sample) {
      // d/d r seeds jz = I, d/d u seeds jh = I; both propagated in one pass
      // each. pass 0: r-perturbation (builds Abar), pass 1: u-perturbation
      // (builds Bbar for the layer below).
      for (int pass = 0; pass < 2; ++pass) {
        jh.setZero();
        jz.setZero();
        jg.setZero();
        for (int t = 0; t < T; ++t) {
          for (int mu = 0; mu < p; ++mu) {
            Eigen::Index row = static_cast<Eigen::Index>(mu) * T + t;
            if (pass == 0)
              jz.row(row).setZero();
            else
              jh.row(row).setZero();
            if (pass == 0)
              jz(row, row) = 1.0;
            else
              jh(row, row) = 1.0;
            for (int nu = 0; nu < p; ++nu) {
              for (int s = 0; s < t; ++s) {
                Eigen::Index col = static_cast<Eigen::Index>(nu) * T + s;
                double chv = ch(row, col);
                if (chv != 0.0) jh.row(row) += chv * jg.row(col);
                double czv = cz(row, col);
                if (czv != 0.0) {
                  double d1 = act_d1(activation, batch.h(col, sample));
                  jz.row(row) += czv * d1 * jh.row(col);
                }
              }
            }
            double hv = batch.h(row, sample);
            double zv = batch.z(row, sample);
            double d1 = act_d1(activation, hv);
            double d2 = act_d2(activation, hv);
            jg.row(row) = d2 * zv * jh.row(row) + d1 * jz.row(row);
            if (pass == 0)
              a_acc.row(row) += d1 * jh.row(row);
            else
              b_acc.row(row) += jg.row(row);
          }
        }
      }
    }
  });
  for (const auto& m : a_parts) est.a_jac += m;
  for (const auto& m : b_parts) est.b_jac += m;
  est.a_jac /= static_cast<double>(sj);
  est.b_jac /= static_cast<double>(sj);
  return est;
}

void integrate_predictions(const std::vector<Eigen::MatrixXd>& ntk, const Eigen::VectorXd& y,
                           const TimeGrid& grid, double reduction_factor, Eigen::MatrixXd& f_out,
                           Eigen::MatrixXd& delta_out) {
  int T = grid.num_steps;
  if (static_cast<int>(ntk.size()) != T) throw ContractError("integrate_predictions: NTK length");
  int p = static_cast<int>(y.size());
  if (ntk[0].rows() != p || ntk[0].cols() != p)
    throw ContractError("integrate_predictions: NTK dimension mismatch");
  double w = grid.causal_weight();
  f_out.resize(p, T);
  delta_out.resize(p, T);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(p);
  for (int t = 0; t < T; ++t) {
    f_out.col(t) = f;
    delta_out.col(t) = y - f;
    if (t + 1 == T) break;
    f += w * reduction_factor * (ntk[t] * delta_out.col(t));
  }
}

namespace {

// Static (t-independent) lazy kernels by a layerwise Gaussian MC recursion.
// Uses the same per-layer source streams as the fixed-point iterations, so at
// gamma = 0 the warm start is already the fixed point (single iteration).
void static_lazy_kernels(const SaddleModel& model, int s_mc, std::uint64_t seed,
                         std::vector<Eigen::MatrixXd>& phi_static,
                         std::vector<Eigen::MatrixXd>& g_static) {
  int L = model.depth;
  int p = static_cast<int>(model.gram.rows());
  phi_static.assign(L + 1, Eigen::MatrixXd());
  g_static.assign(L + 2, Eigen::MatrixXd());
  phi_static[0] = model.gram;
  for (int l = 1; l <= L; ++l) {
    std::uint64_t u_seed = derive_key(derive_key(seed, 100 + l), 11);
    Eigen::MatrixXd u = sample_gp(phi_static[l - 1], s_mc, u_seed);
    Eigen::MatrixXd phi_u = u.unaryExpr([&](double x) { return act(model.activation, x); });
    phi_static[l] = phi_u * phi_u.transpose() / s_mc;
  }
  g_static[L + 1] = Eigen::MatrixXd::Ones(p, p);
  for (int l = L; l >= 1; --l) {
    std::uint64_t u_seed = derive_key(derive_key(seed, 100 + l), 11);
    std::uint64_t r_seed = derive_key(derive_key(seed, 100 + l), 13);
    Eigen::MatrixXd u = sample_gp(phi_static[l - 1], s_mc, u_seed);
    Eigen::MatrixXd r = sample_gp(g_static[l + 1], s_mc, r_seed);
    Eigen::MatrixXd g = u.unaryExpr([&](double x) { return act_d1(model.activation, x); })
                            .cwiseProduct(r);
    g_static[l] = g * g.transpose() / s_mc;
  }
}

Eigen::MatrixXd tile_static(const Eigen::MatrixXd& k, int T) {
  int p = static_cast<int>(k.rows());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(p) * T, static_cast<Eigen::Index>(p) * T);
  for (int mu = 0; mu < p; ++mu)
    for (int nu = 0; nu < p; ++nu)
      out.block(static_cast<Eigen::Index>(mu) * T, static_cast<Eigen::Index>(nu) * T, T, T)
          .setConstant(k(mu, nu));
  return out;
}

// Sources with a time-constant covariance: one static draw tiled over time,
// preserving the exact rank structure (no jitter noise across time).
Eigen::MatrixXd sample_static_sources(const Eigen::MatrixXd& k, int T, int s_count,
                                      std::uint64_t seed) {
  int p = static_cast<int>(k.rows());
  Eigen::MatrixXd draws = sample_gp(k, s_count, seed);  // p x S
  Eigen::MatrixXd out(static_cast<Eigen::Index>(p) * T, s_count);
  for (int mu = 0; mu < p; ++mu) out.middleRows(static_cast<Eigen::Index>(mu) * T, T) =
      draws.row(mu).replicate(T, 1);
  return out;
}

std::vector<Eigen::MatrixXd> ntk_series_from_kernels(const OrderParameterSet& q) {
  int T = q.steps();
  int p = q.num_samples;
  int L = q.depth;
  std::vector<Eigen::MatrixXd> k(T, Eigen::MatrixXd::Zero(p, p));
  for (int t = 0; t < T; ++t)
    for (int mu = 0; mu < p; ++mu)
      for (int nu = 0; nu < p; ++nu) {
        double acc = 0.0;
        for (int l = 0; l <= L; ++l)
          acc += q.feature_kernels[l](mu * T + t, nu * T + t) *
                 q.gradient_kernels[l + 1](mu * T + t, nu * T + t);
        k[t](mu, nu) = acc;
      }
  return k;
}

}  // namespace

SaddleResult solve_saddle(const SaddleModel& model, const TimeGrid& grid,
                          const SaddleOptions& options) {
  if (!(options.damping > 0.0 && options.damping <= 1.0))
    throw ContractError("solve_saddle: damping must be in (0, 1]");
  int L = model.depth;
  int p = static_cast<int>(model.gram.rows());
  int T = grid.num_steps;
  Eigen::Index n = static_cast<Eigen::Index>(p) * T;
  double red = model.reduction == LossReduction::kMean ? 1.0 / p : 1.0;
  bool test = model.test_overlap.has_value();
  if (test && (p != 1 || L != 1))
    throw ContractError("solve_saddle: test point supported for two-layer single-point runs");

  OrderParameterSet q;
  q.depth = L;
  q.gamma = model.gamma;
  q.num_samples = p;
  q.activation = model.activation;
  q.grid = grid;
  q.targets = model.y;
  q.feature_kernels.assign(L + 1, Eigen::MatrixXd());
  q.gradient_kernels.assign(L + 2, Eigen::MatrixXd());
  q.responses_a.assign(std::max(0, L), Eigen::MatrixXd());
  q.responses_b.assign(std::max(0, L), Eigen::MatrixXd());

  std::vector<Eigen::MatrixXd> phi_static, g_static;
  static_lazy_kernels(model, std::max(20000, options.samples), options.seed, phi_static, g_static);
  for (int l = 0; l <= L; ++l) q.feature_kernels[l] = tile_static(phi_static[l], T);
  for (int l = 1; l <= L + 1; ++l) q.gradient_kernels[l] = tile_static(g_static[l], T);
  for (int l = 1; l < L; ++l) {
    q.responses_a[l] = Eigen::MatrixXd::Zero(n, n);
    q.responses_b[l] = Eigen::MatrixXd::Zero(n, n);
  }

  SaddleResult result;
  std::vector<double> residuals;
  Eigen::MatrixXd delta_eff;

  auto resolve_layer = [&](int l, std::uint64_t draw_seed) {
    SingleSiteCouplings cp;
    cp.phi_prev = &q.feature_kernels[l - 1];
    cp.g_next = &q.gradient_kernels[l + 1];
    cp.a_prev = (l >= 2) ? &q.responses_a[l - 1] : nullptr;
    cp.b_this = (l <= L - 1) ? &q.responses_b[l] : nullptr;
    // Layer-1 u and layer-L r have exactly time-constant covariances; draw
    // them statically so the rank structure is preserved.
    Eigen::MatrixXd u = (l == 1) ? sample_static_sources(model.gram, T, options.samples,
                                                         derive_key(draw_seed, 11))
                                 : sample_gp(q.feature_kernels[l - 1], options.samples,
                                             derive_key(draw_seed, 11));
    Eigen::MatrixXd r = (l == L) ? sample_static_sources(Eigen::MatrixXd::Ones(p, p), T,
                                                         options.samples, derive_key(draw_seed, 13))
                                 : sample_gp(q.gradient_kernels[l + 1], options.samples,
                                             derive_key(draw_seed, 13));
    FieldSampleBatch batch = solve_single_site(u, r, cp, delta_eff, model.gamma, model.activation,
                                               grid);
    return std::make_pair(batch, cp);
  };

  int iter = 0;
  for (; iter < options.max_iters; ++iter) {
    q.ntk = ntk_series_from_kernels(q);
    integrate_predictions(q.ntk, model.y, grid, red, q.predictions, q.errors);
    delta_eff = red * q.errors;

    double residual = 0.0;
    for (int l = 1; l <= L; ++l) {
      auto [batch, cp] = resolve_layer(l, derive_key(options.seed, 100 + l));
      bool want_jac = L > 1;
      KernelEstimates est = update_order_params(batch, cp, delta_eff, model.gamma,
                                                model.activation, grid, want_jac,
                                                options.jacobian_samples);
      double beta = options.damping;
      residual = std::max(residual, (est.phi - q.feature_kernels[l]).cwiseAbs().maxCoeff());
      residual = std::max(residual, (est.g - q.gradient_kernels[l]).cwiseAbs().maxCoeff());
      q.feature_kernels[l] = (1 - beta) * q.feature_kernels[l] + beta * est.phi;
      q.gradient_kernels[l] = (1 - beta) * q.gradient_kernels[l] + beta * est.g;
      if (want_jac) {
        if (l <= L - 1) {
          // est.a_jac of layer l is the response of phi(h^l) to r^l: A^l.
          residual = std::max(residual, (est.a_jac - q.responses_a[l]).cwiseAbs().maxCoeff());
          q.responses_a[l] = (1 - beta) * q.responses_a[l] + beta * est.a_jac;
        }
        if (l >= 2) {
          // est.b_jac of layer l is the response of g^l to u^l: B^{l-1}.
          residual = std::max(residual, (est.b_jac - q.responses_b[l - 1]).cwiseAbs().maxCoeff());
          q.responses_b[l - 1] = (1 - beta) * q.responses_b[l - 1] + beta * est.b_jac;
        }
      }
    }
    residuals.push_back(residual);
    if (residual < options.tol) break;
  }
  if (iter == options.max_iters)
    throw ConvergenceError("solve_saddle: no convergence after " + std::to_string(iter) +
                               " iterations (last residual " +
                               std::to_string(residuals.empty() ? -1.0 : residuals.back()) + ")",
                           residuals);

  q.ntk = ntk_series_from_kernels(q);
  integrate_predictions(q.ntk, model.y, grid, red, q.predictions, q.errors);
  delta_eff = red * q.errors;

  // Final verification pass on fresh sources; this batch feeds the Hessian
  // block estimators downstream.
  std::uint64_t final_seed = options.fresh_final_pass ? derive_key(options.seed, 777)
                                                      : derive_key(options.seed, 101);
  {
    SingleSiteCouplings cp;
    cp.phi_prev = &q.feature_kernels[0];
    cp.g_next = &q.gradient_kernels[2];
    cp.a_prev = nullptr;
    cp.b_this = (L > 1) ? &q.responses_b[1] : nullptr;
    Eigen::MatrixXd u, u_star;
    if (test) {
      // Joint (u, u_star) static draw with Cov [[1, c], [c, 1]].
      double c = *model.test_overlap;
      Eigen::MatrixXd cov(2, 2);
      cov << model.gram(0, 0), c, c, 1.0;
      Eigen::MatrixXd duo = sample_gp(cov, options.samples, derive_key(final_seed, 11));
      u = duo.row(0).replicate(T, 1);
      u_star = duo.row(1).replicate(T, 1);
    } else {
      u = sample_static_sources(model.gram, T, options.samples, derive_key(final_seed, 11));
    }
    Eigen::MatrixXd r = (L == 1) ? sample_static_sources(Eigen::MatrixXd::Ones(p, p), T,
                                                          options.samples, derive_key(final_seed, 13))
                                 : sample_gp(q.gradient_kernels[2], options.samples,
                                             derive_key(final_seed, 13));
    result.layer1_batch = solve_single_site(u, r, cp, delta_eff, model.gamma, model.activation,
                                            grid);
    if (test) {
      // h_star(t) = u_star + gamma c sum_{s<t} w Delta(s) g(s); g_star = phi'(h_star) z.
      double c = *model.test_overlap;
      result.layer1_batch.test_overlap = c;
      double gw = model.gamma * grid.causal_weight();
      Eigen::Index s_count = result.layer1_batch.h.cols();
      result.layer1_batch.h_star.resize(T, s_count);
      result.layer1_batch.g_star.resize(T, s_count);
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(s_count);
      for (int t = 0; t < T; ++t) {
        result.layer1_batch.h_star.row(t) = u_star.row(t) + c * acc;
        for (Eigen::Index j = 0; j < s_count; ++j)
          result.layer1_batch.g_star(t, j) =
              act_d1(model.activation, result.layer1_batch.h_star(t, j)) *
              result.layer1_batch.z(t, j);
        acc += gw * delta_eff(0, t) * result.layer1_batch.g.row(t);
      }
    }
  }

  result.q = q;
  result.residual_history = residuals;
  result.iterations = iter + 1;
  return result;
}

void save_order_params(const OrderParameterSet& q, const std::string& dir,
                       const std::string& basename) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (int l = 1; l <= q.depth; ++l) {
    write_matrix_csv(dir + "/" + basename + "_phi" + std::to_string(l) + ".csv",
                     q.feature_kernels[l]);
    write_matrix_csv(dir + "/" + basename + "_g" + std::to_string(l) + ".csv",
                     q.gradient_kernels[l]);
  }
  TimeSeriesTable tab;
  tab.time = q.grid.times();
  Eigen::VectorXd k00(q.steps());
  for (int t = 0; t < q.steps(); ++t) k00[t] = q.ntk[t](0, 0);
  tab.add("ntk_00", k00);
  for (int mu = 0; mu < q.num_samples; ++mu) {
    tab.add("f_" + std::to_string(mu), q.predictions.row(mu));
    tab.add("delta_" + std::to_string(mu), q.errors.row(mu));
  }
  write_csv(dir + "/" + basename + "_series.csv", tab);
  std::ofstream meta(dir + "/" + basename + "_meta.json");
  meta << "{\n  \"format_version\": 1,\n  \"depth\": " << q.depth
       << ",\n  \"gamma\": " << q.gamma << ",\n  \"num_samples\": " << q.num_samples
       << ",\n  \"activation\": \"" << to_string(q.activation)
       << "\",\n  \"step_size\": " << q.grid.step_size << ",\n  \"num_steps\": " << q.grid.num_steps
       << ",\n  \"mode\": \"" << (q.grid.mode == GridMode::kDiscreteGd ? "discrete_gd"
                                                                       : "gradient_flow_euler")
       << "\"\n}\n";
}

}  // namespace wf
