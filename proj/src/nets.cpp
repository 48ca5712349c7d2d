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

#include "widefluct/nets.hpp"

#include <cmath>
#include <mutex>

#include "widefluct/rng.hpp"

namespace wf {

namespace {

Eigen::VectorXd gaussian_vector(CounterRng& rng, int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.next_gaussian();
  return v;
}

Eigen::MatrixXd gaussian_matrix(CounterRng& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  // Row-major fill so the draw order is part of the documented stream contract.
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.next_gaussian();
  return m;
}

void apply_act(Activation a, const Eigen::MatrixXd& in, Eigen::MatrixXd& out) {
  out = in.unaryExpr([a](double x) { return act(a, x); });
}

void apply_act_d1(Activation a, const Eigen::MatrixXd& in, Eigen::MatrixXd& out) {
  out = in.unaryExpr([a](double x) { return act_d1(a, x); });
}

struct ForwardState {
  std::vector<Eigen::MatrixXd> h;    // layer 1..L: N x P
  std::vector<Eigen::MatrixXd> phi;  // phi(h)
  Eigen::VectorXd f;                 // P
};

ForwardState forward(const Params& params, const Eigen::MatrixXd& x_t /* D x P */,
                     const NetworkConfig& cfg) {
  ForwardState st;
  int L = cfg.depth;
  st.h.resize(L + 1);
  st.phi.resize(L + 1);
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
  double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(cfg.width));
  st.h[1] = params.w[0] * x_t * inv_sqrt_d;
  apply_act(cfg.activation, st.h[1], st.phi[1]);
  for (int l = 2; l <= L; ++l) {
    st.h[l] = params.w[l - 1] * st.phi[l - 1] * inv_sqrt_n;
    apply_act(cfg.activation, st.h[l], st.phi[l]);
  }
  st.f = st.phi[L].transpose() * params.w_out / (cfg.gamma * cfg.width);
  return st;
}

// g^L = phi'(h^L) o w_out; g^l = phi'(h^l) o (W^l^T g^{l+1}) / sqrt(N).
std::vector<Eigen::MatrixXd> backward(const Params& params, const ForwardState& st,
                                      const NetworkConfig& cfg) {
  int L = cfg.depth;
  double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(cfg.width));
  std::vector<Eigen::MatrixXd> g(L + 1);
  Eigen::MatrixXd d1;
  apply_act_d1(cfg.activation, st.h[L], d1);
  g[L] = d1.array().colwise() * params.w_out.array();
  for (int l = L - 1; l >= 1; --l) {
    apply_act_d1(cfg.activation, st.h[l], d1);
    g[l] = (params.w[l].transpose() * g[l + 1] * inv_sqrt_n).array() * d1.array();
  }
  return g;
}

}  // namespace

Dataset Dataset::single_point(int input_dim, double y, std::uint64_t seed) {
  CounterRng rng = CounterRng::from(seed, 101);
  Eigen::VectorXd x = gaussian_vector(rng, input_dim);
  x *= std::sqrt(static_cast<double>(input_dim)) / x.norm();
  Dataset d;
  d.x = x.transpose();
  d.y = Eigen::VectorXd::Constant(1, y);
  return d;
}

void Dataset::add_test_point(double overlap, std::uint64_t seed) {
  if (x.rows() != 1) throw ContractError("add_test_point: single-train-point setups only");
  int dim = input_dim();
  CounterRng rng = CounterRng::from(seed, 102);
  Eigen::VectorXd x0 = x.row(0).transpose();
  Eigen::VectorXd v = gaussian_vector(rng, dim);
  v -= (v.dot(x0) / x0.squaredNorm()) * x0;
  v *= std::sqrt(static_cast<double>(dim)) / v.norm();
  x_star = overlap * x0 + std::sqrt(1.0 - overlap * overlap) * v;
}

Dataset Dataset::whitened(int num_samples, int input_dim, std::uint64_t seed) {
  if (num_samples > input_dim) throw ContractError("whitened: requires P <= D");
  CounterRng rng = CounterRng::from(seed, 103);
  Eigen::MatrixXd raw = gaussian_matrix(rng, num_samples, input_dim);
  // Gram-Schmidt onto exactly orthonormal rows, then scale to |x|^2 = D.
  for (int i = 0; i < num_samples; ++i) {
    for (int j = 0; j < i; ++j) raw.row(i) -= raw.row(i).dot(raw.row(j)) * raw.row(j);
    raw.row(i) /= raw.row(i).norm();
  }
  raw *= std::sqrt(static_cast<double>(input_dim));
  Dataset d;
  d.x = raw;
  Eigen::VectorXd y = gaussian_vector(rng, num_samples);
  d.y = y / y.norm();
  return d;
}

Params init_network(const NetworkConfig& cfg) {
  if (cfg.width < 1 || cfg.input_dim < 1) throw ContractError("init_network: N and D must be >= 1");
  if (cfg.depth < 1) throw ContractError("init_network: depth must be >= 1");
  if (!(cfg.gamma > 0.0)) throw ContractError("init_network: gamma must be > 0");
  Params p;
  CounterRng rng = CounterRng::from(cfg.seed, 1);
  p.w.resize(cfg.depth);
  p.w[0] = gaussian_matrix(rng, cfg.width, cfg.input_dim);
  for (int l = 1; l < cfg.depth; ++l) p.w[l] = gaussian_matrix(rng, cfg.width, cfg.width);
  p.w_out = gaussian_vector(rng, cfg.width);
  return p;
}

double loss_value(const Params& params, const Dataset& data, const NetworkConfig& cfg) {
  ForwardState st = forward(params, data.x.transpose(), cfg);
  Eigen::VectorXd delta = data.y - st.f;
  double s = 0.5 * delta.squaredNorm();
  if (data.reduction == LossReduction::kMean) s /= data.num_samples();
  return s;
}

std::pair<double, Eigen::VectorXd> loss_and_grad(const Params& params, const Dataset& data,
                                                 const NetworkConfig& cfg) {
  int L = cfg.depth;
  int n = cfg.width;
  Eigen::MatrixXd x_t = data.x.transpose();
  ForwardState st = forward(params, x_t, cfg);
  std::vector<Eigen::MatrixXd> g = backward(params, st, cfg);
  Eigen::VectorXd delta = data.y - st.f;
  double red = data.reduction == LossReduction::kMean ? 1.0 / data.num_samples() : 1.0;
  double loss = 0.5 * red * delta.squaredNorm();

  // dL/dW^l = -(red/(gamma N)) (1/sqrt(fanin)) sum_mu delta_mu g^{l+1} phi^l(mu)^T
  double c = -red / (cfg.gamma * n);
  std::int64_t total = 0;
  for (const auto& w : params.w) total += w.size();
  total += params.w_out.size();
  Eigen::VectorXd grad(total);
  std::int64_t off = 0;
  for (int l = 0; l < L; ++l) {
    Eigen::MatrixXd pre = (l == 0) ? x_t : st.phi[l];
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(l == 0 ? cfg.input_dim : n));
    Eigen::MatrixXd gw = c * inv_sqrt * (g[l + 1] * delta.asDiagonal() * pre.transpose());
    Eigen::Map<Eigen::VectorXd>(grad.data() + off, gw.size()) =
        Eigen::Map<Eigen::VectorXd>(gw.data(), gw.size());
    off += gw.size();
  }
  Eigen::VectorXd gout = c * (st.phi[L] * delta);
  grad.segment(off, n) = gout;
  return {loss, grad};
}

TrainingTrajectory train(Params& params, const Dataset& data, const TimeGrid& grid,
                         const NetworkConfig& cfg, const TrainOptions& options) {
  int L = cfg.depth;
  int n = cfg.width;
  int p = data.num_samples();
  int T = grid.num_steps;
  double step = grid.step_size;
  double red = data.reduction == LossReduction::kMean ? 1.0 / p : 1.0;
  bool test = options.record_test_point && data.x_star.has_value();

  TrainingTrajectory traj;
  traj.times = grid.times();
  traj.f.resize(p, T);
  traj.delta.resize(p, T);
  traj.loss.resize(T);
  traj.ntk.resize(T);
  traj.phi_diag.assign(L, Eigen::MatrixXd(p, T));
  if (options.record_layer_kernels) {
    traj.phi_full.assign(L, std::vector<Eigen::MatrixXd>(T));
    traj.g_full.assign(L, std::vector<Eigen::MatrixXd>(T));
  }
  if (test) {
    traj.f_star.resize(T);
    traj.k_star.resize(p, T);
  }

  Eigen::MatrixXd x_t = data.x.transpose();
  Eigen::MatrixXd gram0 = data.x * data.x.transpose() / cfg.input_dim;
  Eigen::VectorXd f_background = Eigen::VectorXd::Zero(p);
  double f_star_background = 0.0;

  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
  double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));

  for (int t = 0; t < T; ++t) {
    ForwardState st = forward(params, x_t, cfg);
    std::vector<Eigen::MatrixXd> g = backward(params, st, cfg);
    if (!st.f.allFinite())
      throw DivergenceError("train: NaN/Inf in predictions at step " + std::to_string(t) +
                            " (seed " + std::to_string(cfg.seed) + ")");

    if (t == 0 && options.subtract_background) f_background = st.f;
    Eigen::VectorXd f_eff = st.f - f_background;
    Eigen::VectorXd delta = data.y - f_eff;

    // NTK from the layerwise kernel identity K = sum_l G^{l+1} o Phi^l.
    Eigen::MatrixXd k = gram0.cwiseProduct(g[1].transpose() * g[1] / n);
    for (int l = 1; l < L; ++l)
      k += (st.phi[l].transpose() * st.phi[l] / n).cwiseProduct(g[l + 1].transpose() * g[l + 1] / n);
    k += st.phi[L].transpose() * st.phi[L] / n;

    traj.f.col(t) = f_eff;
    traj.delta.col(t) = delta;
    traj.loss[t] = 0.5 * red * delta.squaredNorm();
    traj.ntk[t] = k;
    for (int l = 1; l <= L; ++l) {
      Eigen::MatrixXd phi_k = st.phi[l].transpose() * st.phi[l] / n;
      traj.phi_diag[l - 1].col(t) = phi_k.diagonal();
      if (options.record_layer_kernels) {
        traj.phi_full[l - 1][t] = phi_k;
        traj.g_full[l - 1][t] = g[l].transpose() * g[l] / n;
      }
    }

    if (test) {
      ForwardState sts = forward(params, *data.x_star, cfg);
      std::vector<Eigen::MatrixXd> gs = backward(params, sts, cfg);
      if (t == 0 && options.subtract_background) f_star_background = sts.f[0];
      traj.f_star[t] = sts.f[0] - f_star_background;
      Eigen::VectorXd gram_star = data.x * (*data.x_star) / cfg.input_dim;
      Eigen::VectorXd ks = gram_star.cwiseProduct(g[1].transpose() * gs[1].col(0) / n);
      for (int l = 1; l < L; ++l)
        ks += (st.phi[l].transpose() * sts.phi[l].col(0) / n)
                  .cwiseProduct(g[l + 1].transpose() * gs[l + 1].col(0) / n);
      ks += st.phi[L].transpose() * sts.phi[L].col(0) / n;
      traj.k_star.col(t) = ks;
    }

    if (t + 1 == T) break;

    // theta <- theta - step * N gamma^2 grad L; written directly in terms of
    // the error signals (gradient ascent on -L).
    Eigen::VectorXd scaled_delta = red * delta;
    params.w_out += step * cfg.gamma * (st.phi[L] * scaled_delta);
    for (int l = L - 1; l >= 1; --l)
      params.w[l] += step * cfg.gamma * inv_sqrt_n *
                     (g[l + 1] * scaled_delta.asDiagonal() * st.phi[l].transpose());
    params.w[0] += step * cfg.gamma * inv_sqrt_d * (g[1] * scaled_delta.asDiagonal() * data.x);
  }

  if (grid.mode == GridMode::kGradientFlowEuler) {
    for (int t = 1; t < std::min(5, T); ++t) {
      if (traj.loss[t] > traj.loss[t - 1] * (1.0 + 1e-12)) {
        traj.warnings.push_back("loss increased within the first 5 steps; step_size may be too large");
        break;
      }
    }
  }
  return traj;
}

OnlineTrajectory train_online(Params& params, const OnlineSpec& spec, const TimeGrid& grid,
                              const NetworkConfig& cfg) {
  if (cfg.depth != 1 || cfg.activation != Activation::kLinear)
    throw ContractError("train_online: two-layer linear networks only");
  int n = cfg.width;
  int dim = static_cast<int>(spec.beta_star.size());
  int T = grid.num_steps;
  double step = grid.step_size;
  CounterRng rng = CounterRng::from(spec.data_seed, 7);

  OnlineTrajectory traj;
  traj.times = grid.times();
  traj.beta.resize(T);
  traj.beta_err_sq.resize(T);
  traj.m_star.resize(T);
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim));
  Eigen::VectorXd bhat = spec.beta_star / spec.beta_star.norm();

  for (int t = 0; t < T; ++t) {
    Eigen::VectorXd beta = params.w[0].transpose() * params.w_out / (cfg.gamma * n);
    // Population-risk convention: f(x) = beta . x / sqrt(D) with x ~ N(0,I)
    // reproduces beta as the linear readout of f on normalized inputs.
    traj.beta[t] = beta.dot(bhat);
    traj.beta_err_sq[t] = (beta - spec.beta_star).squaredNorm();
    traj.m_star[t] = (params.w[0] * bhat).squaredNorm() / n + params.w_out.squaredNorm() / n;
    if (t + 1 == T) break;

    // Fresh batch, batch-mean MSE on y = beta_star . x / sqrt(D) * sqrt(D)...
    // targets are y(x) = beta_star . x_tilde with x_tilde = x/sqrt(D).
    Eigen::MatrixXd xb(dim, spec.batch_size);
    for (int j = 0; j < spec.batch_size; ++j)
      for (int i = 0; i < dim; ++i) xb(i, j) = rng.next_gaussian();
    Eigen::MatrixXd h = params.w[0] * xb * inv_sqrt_d;  // N x B
    Eigen::VectorXd f = h.transpose() * params.w_out / (cfg.gamma * n);
    Eigen::VectorXd y = xb.transpose() * spec.beta_star * inv_sqrt_d;
    Eigen::VectorXd delta = (y - f) / spec.batch_size;
    params.w_out += step * cfg.gamma * (h * delta);
    params.w[0] += step * cfg.gamma * inv_sqrt_d * (params.w_out * delta.transpose() * xb.transpose());
  }
  return traj;
}

namespace {

void central_moments(const Eigen::MatrixXd& samples, Eigen::VectorXd& mean, Eigen::VectorXd& var,
                     Eigen::VectorXd& m4) {
  int e = static_cast<int>(samples.rows());
  mean = samples.colwise().mean();
  Eigen::MatrixXd centered = samples.rowwise() - mean.transpose();
  Eigen::VectorXd m2 = centered.array().square().colwise().mean();
  m4 = centered.array().pow(4).colwise().mean();
  var = m2 * (static_cast<double>(e) / std::max(1, e - 1));
}

}  // namespace

Eigen::VectorXd EnsembleRecord::mean(const std::string& name) const {
  return samples.at(name).colwise().mean();
}

Eigen::VectorXd EnsembleRecord::variance(const std::string& name) const {
  Eigen::VectorXd m, v, m4;
  central_moments(samples.at(name), m, v, m4);
  return v;
}

Eigen::VectorXd EnsembleRecord::se_mean(const std::string& name) const {
  int e = static_cast<int>(samples.at(name).rows());
  return (variance(name) / e).cwiseSqrt();
}

Eigen::VectorXd EnsembleRecord::se_variance(const std::string& name) const {
  // SE of the unbiased sample variance from central moments:
  // Var(s^2) = (m4 - (E-3)/(E-1) s^4) / E.
  const Eigen::MatrixXd& s = samples.at(name);
  int e = static_cast<int>(s.rows());
  Eigen::VectorXd m, v, m4;
  central_moments(s, m, v, m4);
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double se2 = (m4[i] - (e - 3.0) / (e - 1.0) * v[i] * v[i]) / e;
    out[i] = se2 > 0.0 ? std::sqrt(se2) : 0.0;
  }
  return out;
}

Eigen::VectorXd EnsembleRecord::n_var(const std::string& name) const {
  return static_cast<double>(width) * variance(name);
}

Eigen::VectorXd EnsembleRecord::se_n_var(const std::string& name) const {
  return static_cast<double>(width) * se_variance(name);
}

EnsembleRecord run_ensemble(const NetworkConfig& config, const Dataset& data, const TimeGrid& grid,
                            int ensemble_size, std::uint64_t master_seed,
                            const TrainOptions& options) {
  if (ensemble_size < 2) throw ContractError("run_ensemble: E must be >= 2");
  int T = grid.num_steps;
  int L = config.depth;
  bool test = options.record_test_point && data.x_star.has_value();

  EnsembleRecord rec;
  rec.width = config.width;
  rec.ensemble_size = ensemble_size;
  rec.times = grid.times();
  auto add = [&](const std::string& k) { rec.samples[k] = Eigen::MatrixXd::Zero(ensemble_size, T); };
  add("K");
  add("Delta0");
  add("f0");
  add("loss");
  add("delta_sq_total");
  add("Delta_y");
  for (int l = 1; l <= L; ++l) {
    add("H" + std::to_string(l));
    add("G" + std::to_string(l));
  }
  if (test) {
    add("f_star");
    add("K_star");
  }

  std::mutex err_mutex;
  std::string first_error;
  parallel_for(ensemble_size, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t e = lo; e < hi; ++e) {
      try {
        NetworkConfig cfg = config;
        cfg.seed = derive_key(master_seed, static_cast<std::uint64_t>(e));
        Params params = init_network(cfg);
        TrainOptions opt = options;
        opt.record_layer_kernels = true;
        TrainingTrajectory traj = train(params, data, grid, cfg, opt);
        Eigen::VectorXd k_series(T);
        for (int t = 0; t < T; ++t) k_series[t] = traj.ntk[t](0, 0);
        rec.samples["K"].row(e) = k_series.transpose();
        rec.samples["Delta0"].row(e) = traj.delta.row(0);
        rec.samples["f0"].row(e) = traj.f.row(0);
        rec.samples["loss"].row(e) = traj.loss.transpose();
        rec.samples["delta_sq_total"].row(e) = traj.delta.colwise().squaredNorm();
        rec.samples["Delta_y"].row(e) = (data.y.transpose() * traj.delta) / data.y.norm();
        for (int l = 1; l <= L; ++l) {
          Eigen::VectorXd hh(T), gg(T);
          for (int t = 0; t < T; ++t) {
            hh[t] = traj.phi_full[l - 1][t](0, 0);
            gg[t] = traj.g_full[l - 1][t](0, 0);
          }
          rec.samples["H" + std::to_string(l)].row(e) = hh.transpose();
          rec.samples["G" + std::to_string(l)].row(e) = gg.transpose();
        }
        if (test) {
          rec.samples["f_star"].row(e) = traj.f_star.transpose();
          rec.samples["K_star"].row(e) = traj.k_star.row(0);
        }
      } catch (const std::exception& ex) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (first_error.empty())
          first_error = "ensemble member " + std::to_string(e) + ": " + ex.what();
      }
    }
  });
  if (!first_error.empty()) throw DivergenceError(first_error);
  return rec;
}

EnsembleRecord run_ensemble_online(const NetworkConfig& config, const OnlineSpec& spec,
                                   const TimeGrid& grid, int ensemble_size,
                                   std::uint64_t master_seed) {
  if (ensemble_size < 2) throw ContractError("run_ensemble_online: E must be >= 2");
  EnsembleRecord rec;
  rec.width = config.width;
  rec.ensemble_size = ensemble_size;
  rec.times = grid.times();
  int T = grid.num_steps;
  rec.samples["beta"] = Eigen::MatrixXd::Zero(ensemble_size, T);
  rec.samples["beta_err_sq"] = Eigen::MatrixXd::Zero(ensemble_size, T);
  rec.samples["m_star"] = Eigen::MatrixXd::Zero(ensemble_size, T);

  std::mutex err_mutex;
  std::string first_error;
  parallel_for(ensemble_size, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t e = lo; e < hi; ++e) {
      try {
        NetworkConfig cfg = config;
        cfg.seed = derive_key(master_seed, static_cast<std::uint64_t>(e));
        OnlineSpec sp = spec;
        sp.data_seed = derive_key(master_seed ^ 0x5bf03635ULL, static_cast<std::uint64_t>(e));
        Params params = init_network(cfg);
        OnlineTrajectory traj = train_online(params, sp, grid, cfg);
        rec.samples["beta"].row(e) = traj.beta.transpose();
        rec.samples["beta_err_sq"].row(e) = traj.beta_err_sq.transpose();
        rec.samples["m_star"].row(e) = traj.m_star.transpose();
      } catch (const std::exception& ex) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (first_error.empty())
          first_error = "online ensemble member " + std::to_string(e) + ": " + ex.what();
      }
    }
  });
  if (!first_error.empty()) throw DivergenceError(first_error);
  return rec;
}

RateFit fit_training_rate(const Eigen::VectorXd& loss, const Eigen::VectorXd& times, double t_lo,
                          double t_hi) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (Eigen::Index i = 0; i < loss.size(); ++i) {
    if (times[i] < t_lo || times[i] > t_hi) continue;
    if (!(loss[i] > 0.0))
      throw ContractError("fit_training_rate: non-positive loss inside the fit window");
    double x = times[i], y = std::log(loss[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2) throw ContractError("fit_training_rate: fewer than 2 points in window");
  double denom = n * sxx - sx * sx;
  RateFit fit;
  if (denom == 0.0) {
    fit.rate = 0.0;
    fit.log_amplitude = sy / n;
    return fit;
  }
  double slope = (n * sxy - sx * sy) / denom;
  fit.rate = -slope;
  fit.log_amplitude = (sy - slope * sx) / n;
  return fit;
}

std::vector<Eigen::MatrixXd> rate_matrix_commuting(const std::vector<Eigen::MatrixXd>& ntk,
                                                   const TimeGrid& grid) {
  std::vector<Eigen::MatrixXd> r(ntk.size());
  double w = grid.causal_weight();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(ntk.empty() ? 0 : ntk[0].rows(),
                                              ntk.empty() ? 0 : ntk[0].cols());
  for (std::size_t t = 0; t < ntk.size(); ++t) {
    r[t] = acc;
    acc += w * ntk[t];
  }
  return r;
}

}  // namespace wf
