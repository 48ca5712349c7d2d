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

#include "widefluct/deeplinear.hpp"

#include <Eigen/LU>
#include <cmath>
#include <map>

namespace wf {

namespace {

Eigen::MatrixXd causal_coupling(const Eigen::MatrixXd& jac, const Eigen::MatrixXd& kernel,
                                const Eigen::VectorXd& delta, double gamma, double w) {
  int T = static_cast<int>(delta.size());
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(T, T);
  for (int t = 1; t < T; ++t)
    for (int s = 0; s < t; ++s) c(t, s) = gamma * w * kernel(t, s) * delta[s];
  if (jac.size() > 0) c += jac;
  return c;
}

// Unit-lower solve for (I - C D) X = B with strictly causal C, D.
Eigen::MatrixXd solve_unit_lower(const Eigen::MatrixXd& cd, const Eigen::MatrixXd& b) {
  int T = static_cast<int>(cd.rows());
  Eigen::MatrixXd x = b;
  for (int t = 1; t < T; ++t)
    x.row(t) += cd.row(t).head(t) * x.topRows(t);
  return x;
}

}  // namespace

DeepLinearState solve_deep_linear_saddle(int depth, double gamma, double y, const TimeGrid& grid,
                                         const DeepLinearOptions& options) {
  if (depth < 2) throw ContractError("solve_deep_linear_saddle: depth must be >= 2 weight layers");
  int lh = depth - 1;
  int T = grid.num_steps;
  double w = grid.causal_weight();

  DeepLinearState st;
  st.num_hidden = lh;
  st.gamma = gamma;
  st.y = y;
  st.grid = grid;
  st.h_kernel.assign(lh + 1, Eigen::MatrixXd::Ones(T, T));
  st.g_kernel.assign(lh + 2, Eigen::MatrixXd::Ones(T, T));
  st.a_resp.assign(std::max(1, lh), Eigen::MatrixXd::Zero(T, T));
  st.b_resp.assign(std::max(1, lh), Eigen::MatrixXd::Zero(T, T));
  st.delta = Eigen::VectorXd::Constant(T, y);
  st.ntk = Eigen::VectorXd::Zero(T);
  st.f = Eigen::VectorXd::Zero(T);

  double beta = options.damping;

  // One damped sweep on the leading tau x tau sub-grid; returns the residual.
  auto sweep = [&](int tau) {
    Eigen::VectorXd ntk(tau);
    for (int t = 0; t < tau; ++t) {
      double k = 0.0;
      for (int l = 0; l <= lh; ++l) k += st.h_kernel[l](t, t) * st.g_kernel[l + 1](t, t);
      ntk[t] = k;
    }
    Eigen::VectorXd delta_new(tau);
    double fv = 0.0;
    for (int t = 0; t < tau; ++t) {
      st.f[t] = fv;
      st.ntk[t] = ntk[t];
      delta_new[t] = y - fv;
      if (t + 1 < tau) fv += w * ntk[t] * delta_new[t];
    }
    double residual =
        (delta_new - st.delta.head(tau)).cwiseAbs().maxCoeff();
    st.delta.head(tau) = (1 - beta) * st.delta.head(tau) + beta * delta_new;

    Eigen::MatrixXd hz_top;
    for (int l = 1; l <= lh; ++l) {
      Eigen::MatrixXd sig_u = st.h_kernel[l - 1].topLeftCorner(tau, tau);
      Eigen::MatrixXd sig_r = st.g_kernel[l + 1].topLeftCorner(tau, tau);
      Eigen::MatrixXd c = causal_coupling(
          l >= 2 ? Eigen::MatrixXd(st.a_resp[l - 1].topLeftCorner(tau, tau)) : Eigen::MatrixXd(),
          st.h_kernel[l - 1].topLeftCorner(tau, tau), st.delta.head(tau), gamma, w);
      Eigen::MatrixXd d = causal_coupling(
          l <= lh - 1 ? Eigen::MatrixXd(st.b_resp[l].topLeftCorner(tau, tau)) : Eigen::MatrixXd(),
          st.g_kernel[l + 1].topLeftCorner(tau, tau), st.delta.head(tau), gamma, w);
      Eigen::MatrixXd m_u = solve_unit_lower(c * d, Eigen::MatrixXd::Identity(tau, tau));
      Eigen::MatrixXd m_r = m_u * c;
      Eigen::MatrixXd n_u = d * m_u;
      Eigen::MatrixXd n_r = Eigen::MatrixXd::Identity(tau, tau) + d * m_r;
      Eigen::MatrixXd h_new = m_u * sig_u * m_u.transpose() + m_r * sig_r * m_r.transpose();
      Eigen::MatrixXd g_new = n_u * sig_u * n_u.transpose() + n_r * sig_r * n_r.transpose();
      residual = std::max(residual,
                          (h_new - st.h_kernel[l].topLeftCorner(tau, tau)).cwiseAbs().maxCoeff());
      residual = std::max(residual,
                          (g_new - st.g_kernel[l].topLeftCorner(tau, tau)).cwiseAbs().maxCoeff());
      st.h_kernel[l].topLeftCorner(tau, tau) =
          (1 - beta) * st.h_kernel[l].topLeftCorner(tau, tau) + beta * h_new;
      st.g_kernel[l].topLeftCorner(tau, tau) =
          (1 - beta) * st.g_kernel[l].topLeftCorner(tau, tau) + beta * g_new;
      if (l <= lh - 1) {
        residual = std::max(
            residual, (m_r - st.a_resp[l].topLeftCorner(tau, tau)).cwiseAbs().maxCoeff());
        st.a_resp[l].topLeftCorner(tau, tau) =
            (1 - beta) * st.a_resp[l].topLeftCorner(tau, tau) + beta * m_r;
      }
      if (l >= 2) {
        residual = std::max(
            residual, (n_u - st.b_resp[l - 1].topLeftCorner(tau, tau)).cwiseAbs().maxCoeff());
        st.b_resp[l - 1].topLeftCorner(tau, tau) =
            (1 - beta) * st.b_resp[l - 1].topLeftCorner(tau, tau) + beta * n_u;
      }
      if (l == lh && tau == T)
        st.hz_cross_top = m_u * sig_u * n_u.transpose() + m_r * sig_r * n_r.transpose();
    }
    return residual;
  };

  // Causality makes the prefix problems self-contained: grow the horizon with
  // warm starts instead of iterating the full grid from a cold start (which
  // loses stability at long horizons).
  std::vector<double> history;
  for (int tau = std::min(4, T); tau <= T; ++tau) {
    if (tau > 4) {
      // Extend the warm start by edge replication.
      int t_new = tau - 1;
      st.delta[t_new] = st.delta[t_new - 1];
      for (int l = 1; l <= lh; ++l) {
        st.h_kernel[l].row(t_new).head(tau) = st.h_kernel[l].row(t_new - 1).head(tau);
        st.h_kernel[l].col(t_new).head(tau) = st.h_kernel[l].col(t_new - 1).head(tau);
        st.h_kernel[l](t_new, t_new) = st.h_kernel[l](t_new - 1, t_new - 1);
        st.g_kernel[l].row(t_new).head(tau) = st.g_kernel[l].row(t_new - 1).head(tau);
        st.g_kernel[l].col(t_new).head(tau) = st.g_kernel[l].col(t_new - 1).head(tau);
        st.g_kernel[l](t_new, t_new) = st.g_kernel[l](t_new - 1, t_new - 1);
      }
    }
    double residual = 0.0;
    int it = 0;
    for (; it < options.max_iters; ++it) {
      residual = sweep(tau);
      if (residual < options.tol) break;
    }
    history.push_back(residual);
    if (it == options.max_iters)
      throw ConvergenceError("solve_deep_linear_saddle: no convergence at horizon " +
                                 std::to_string(tau) + ", residual " + std::to_string(residual),
                             history);
  }
  if (T <= 4) sweep(T);

  // Final coherent pass.
  for (int t = 0; t < T; ++t) {
    double k = 0.0;
    for (int l = 0; l <= lh; ++l) k += st.h_kernel[l](t, t) * st.g_kernel[l + 1](t, t);
    st.ntk[t] = k;
  }
  double fv = 0.0;
  for (int t = 0; t < T; ++t) {
    st.f[t] = fv;
    st.delta[t] = y - fv;
    if (t + 1 < T) fv += w * st.ntk[t] * st.delta[t];
  }
  if (st.hz_cross_top.size() == 0) sweep(T);
  return st;
}

// ---------------------------------------------------------------------------
// Action, gradient, Hessian.
// ---------------------------------------------------------------------------

struct DeepLinearAction::Impl {
  DeepLinearState st;
  int lh, steps;
  double w, gamma;
  std::vector<Coord> coords;
  // Offsets into the coordinate vector per (kind, layer).
  std::map<std::pair<int, int>, int> offset;
  int nsym = 0;

  explicit Impl(const DeepLinearState& state)
      : st(state),
        lh(state.num_hidden),
        steps(state.grid.num_steps),
        w(state.grid.causal_weight()),
        gamma(state.gamma) {
    nsym = steps * (steps + 1) / 2;
    auto add_sym = [&](Kind kind, int layer) {
      offset[{static_cast<int>(kind), layer}] = static_cast<int>(coords.size());
      for (int a = 0; a < steps; ++a)
        for (int b = a; b < steps; ++b) coords.push_back({kind, layer, a, b});
    };
    auto add_full = [&](Kind kind, int layer) {
      offset[{static_cast<int>(kind), layer}] = static_cast<int>(coords.size());
      for (int a = 0; a < steps; ++a)
        for (int b = 0; b < steps; ++b) coords.push_back({kind, layer, a, b});
    };
    auto add_vec = [&](Kind kind) {
      offset[{static_cast<int>(kind), 0}] = static_cast<int>(coords.size());
      for (int a = 0; a < steps; ++a) coords.push_back({kind, 0, a, 0});
    };
    for (int l = 1; l <= lh; ++l) add_sym(Kind::kHhat, l);
    for (int l = 1; l <= lh; ++l) add_sym(Kind::kGhat, l);
    add_vec(Kind::kKhat);
    add_vec(Kind::kDeltahat);
    for (int l = 1; l <= lh - 1; ++l) add_full(Kind::kA, l);
    for (int l = 1; l <= lh - 1; ++l) add_full(Kind::kB, l);
    for (int l = 1; l <= lh; ++l) add_sym(Kind::kH, l);
    for (int l = 1; l <= lh; ++l) add_sym(Kind::kG, l);
    add_vec(Kind::kK);
    add_vec(Kind::kDelta);
  }

  int sym_index(int base, int a, int b) const {
    if (a > b) std::swap(a, b);
    // row-major upper triangle offset
    return base + a * steps - a * (a - 1) / 2 + (b - a);
  }
  int idx(Kind kind, int layer, int a, int b) const {
    auto it = offset.find({static_cast<int>(kind), layer});
    if (it == offset.end()) throw ContractError("DeepLinearAction: no such coordinate block");
    switch (kind) {
      case Kind::kHhat:
      case Kind::kGhat:
      case Kind::kH:
      case Kind::kG:
        return sym_index(it->second, a, b);
      case Kind::kA:
      case Kind::kB:
        return it->second + a * steps + b;
      default:
        return it->second + a;
    }
  }

  struct Displaced {
    std::vector<Eigen::MatrixXd> hhat, ghat, h, g, a, b;
    Eigen::VectorXd khat, dhat, k, delta;
  };

  Displaced unpack(const Eigen::VectorXd& q) const {
    Displaced d;
    d.hhat.assign(lh + 1, Eigen::MatrixXd::Zero(steps, steps));
    d.ghat.assign(lh + 1, Eigen::MatrixXd::Zero(steps, steps));
    d.h.assign(lh + 1, Eigen::MatrixXd());
    d.g.assign(lh + 2, Eigen::MatrixXd());
    d.a.assign(std::max(1, lh), Eigen::MatrixXd::Zero(steps, steps));
    d.b.assign(std::max(1, lh), Eigen::MatrixXd::Zero(steps, steps));
    for (int l = 1; l <= lh - 1; ++l) {
      d.a[l] = st.a_resp[l];
      d.b[l] = st.b_resp[l];
    }
    d.h[0] = st.h_kernel[0];
    d.g[lh + 1] = st.g_kernel[lh + 1];
    for (int l = 1; l <= lh; ++l) {
      d.h[l] = st.h_kernel[l];
      d.g[l] = st.g_kernel[l];
    }
    d.khat = Eigen::VectorXd::Zero(steps);
    d.dhat = Eigen::VectorXd::Zero(steps);
    d.k = st.ntk;
    d.delta = st.delta;
    for (int i = 0; i < static_cast<int>(coords.size()); ++i) {
      double v = q[i];
      if (v == 0.0) continue;
      const Coord& c = coords[i];
      switch (c.kind) {
        case Kind::kHhat:
          d.hhat[c.layer](c.a, c.b) += v;
          if (c.a != c.b) d.hhat[c.layer](c.b, c.a) += v;
          break;
        case Kind::kGhat:
          d.ghat[c.layer](c.a, c.b) += v;
          if (c.a != c.b) d.ghat[c.layer](c.b, c.a) += v;
          break;
        case Kind::kH:
          d.h[c.layer](c.a, c.b) += v;
          if (c.a != c.b) d.h[c.layer](c.b, c.a) += v;
          break;
        case Kind::kG:
          d.g[c.layer](c.a, c.b) += v;
          if (c.a != c.b) d.g[c.layer](c.b, c.a) += v;
          break;
        case Kind::kA:
          d.a[c.layer](c.a, c.b) += v;
          break;
        case Kind::kB:
          d.b[c.layer](c.a, c.b) += v;
          break;
        case Kind::kKhat:
          d.khat[c.a] += v;
          break;
        case Kind::kDeltahat:
          d.dhat[c.a] += v;
          break;
        case Kind::kK:
          d.k[c.a] += v;
          break;
        case Kind::kDelta:
          d.delta[c.a] += v;
          break;
      }
    }
    return d;
  }

  // Layer determinant matrix at a displaced point. Blocks (T each):
  // rows/cols [hhat | ghat | h | z].
  Eigen::MatrixXd layer_matrix(const Displaced& d, int l) const {
    int T = steps;
    Eigen::MatrixXd c =
        causal_coupling(l >= 2 ? d.a[l - 1] : Eigen::MatrixXd(), d.h[l - 1], d.delta, gamma, w);
    Eigen::MatrixXd dd =
        causal_coupling(l <= lh - 1 ? d.b[l] : Eigen::MatrixXd(), d.g[l + 1], d.delta, gamma, w);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(4 * T, 4 * T);
    m.block(0, 0, T, T) = -d.hhat[l];
    m.block(T, T, T, T) = -d.ghat[l];
    m.block(0, 2 * T, T, T) = Eigen::MatrixXd::Identity(T, T);
    m.block(0, 3 * T, T, T) = -dd.transpose();
    m.block(T, 2 * T, T, T) = -c.transpose();
    m.block(T, 3 * T, T, T) = Eigen::MatrixXd::Identity(T, T);
    m.block(2 * T, 0, T, T) = Eigen::MatrixXd::Identity(T, T);
    m.block(2 * T, T, T, T) = -c;
    m.block(2 * T, 2 * T, T, T) = d.h[l - 1];
    m.block(3 * T, 0, T, T) = -dd;
    m.block(3 * T, T, T, T) = Eigen::MatrixXd::Identity(T, T);
    m.block(3 * T, 3 * T, T, T) = d.g[l + 1];
    return m;
  }

  double non_det_value(const Displaced& d) const {
    double s = 0.0;
    for (int l = 1; l <= lh; ++l) {
      s += 0.5 * (d.hhat[l].array() * d.h[l].array()).sum();
      s += 0.5 * (d.ghat[l].array() * d.g[l].array()).sum();
    }
    for (int l = 1; l <= lh - 1; ++l) s -= (d.a[l].array() * d.b[l].transpose().array()).sum();
    for (int t = 0; t < steps; ++t) {
      double ksum = 0.0;
      for (int l = 0; l <= lh; ++l) ksum += d.h[l](t, t) * d.g[l + 1](t, t);
      s += w * d.khat[t] * (d.k[t] - ksum);
      double causal = 0.0;
      for (int u = 0; u < t; ++u) causal += w * d.k[u] * d.delta[u];
      s += w * d.dhat[t] * (d.delta[t] - st.y + causal);
    }
    return s;
  }

  // Sparse M-matrix effect: entries of dM^l/dcoord at the displaced point.
  struct MEntry {
    int r, c;
    double v;
  };
  // Appends the effects of coordinate i on layer l's matrix (empty if none).
  void m_effects(const Displaced& d, int i, int l, std::vector<MEntry>& out) const {
    out.clear();
    int T = steps;
    const Coord& cd = coords[i];
    auto push_c = [&](int t, int s, double v) {
      // C appears at block(2,3) transposed and block(3,2).
      out.push_back({T + s, 2 * T + t, -v});
      out.push_back({2 * T + t, T + s, -v});
    };
    auto push_d = [&](int t, int s, double v) {
      out.push_back({s, 3 * T + t, -v});
      out.push_back({3 * T + t, s, -v});
    };
    switch (cd.kind) {
      case Kind::kHhat:
        if (cd.layer == l) {
          out.push_back({cd.a, cd.b, -1.0});
          if (cd.a != cd.b) out.push_back({cd.b, cd.a, -1.0});
        }
        break;
      case Kind::kGhat:
        if (cd.layer == l) {
          out.push_back({T + cd.a, T + cd.b, -1.0});
          if (cd.a != cd.b) out.push_back({T + cd.b, T + cd.a, -1.0});
        }
        break;
      case Kind::kH:
        if (cd.layer == l - 1) {
          // Sigma_u slot and the C coupling.
          out.push_back({2 * T + cd.a, 2 * T + cd.b, 1.0});
          if (cd.a != cd.b) out.push_back({2 * T + cd.b, 2 * T + cd.a, 1.0});
          if (cd.a > cd.b) push_c(cd.a, cd.b, gamma * w * d.delta[cd.b]);
          if (cd.b > cd.a) push_c(cd.b, cd.a, gamma * w * d.delta[cd.a]);
        }
        break;
      case Kind::kG:
        if (cd.layer == l + 1) {
          out.push_back({3 * T + cd.a, 3 * T + cd.b, 1.0});
          if (cd.a != cd.b) out.push_back({3 * T + cd.b, 3 * T + cd.a, 1.0});
          if (cd.a > cd.b) push_d(cd.a, cd.b, gamma * w * d.delta[cd.b]);
          if (cd.b > cd.a) push_d(cd.b, cd.a, gamma * w * d.delta[cd.a]);
        }
        break;
      case Kind::kA:
        if (cd.layer == l - 1) push_c(cd.a, cd.b, 1.0);
        break;
      case Kind::kB:
        if (cd.layer == l) push_d(cd.a, cd.b, 1.0);
        break;
      case Kind::kDelta: {
        int s = cd.a;
        for (int t = s + 1; t < T; ++t) {
          push_c(t, s, gamma * w * d.h[l - 1](t, s));
          push_d(t, s, gamma * w * d.g[l + 1](t, s));
        }
        break;
      }
      default:
        break;
    }
  }
};

DeepLinearAction::DeepLinearAction(const DeepLinearState& state)
    : impl_(std::make_unique<Impl>(state)) {}
DeepLinearAction::~DeepLinearAction() = default;
DeepLinearAction::DeepLinearAction(DeepLinearAction&&) noexcept = default;

int DeepLinearAction::dim() const { return static_cast<int>(impl_->coords.size()); }
const std::vector<DeepLinearAction::Coord>& DeepLinearAction::coords() const {
  return impl_->coords;
}
int DeepLinearAction::index_of(Kind kind, int layer, int a, int b) const {
  return impl_->idx(kind, layer, a, b);
}

double DeepLinearAction::value(const Eigen::VectorXd& q) const {
  const Impl& im = *impl_;
  Impl::Displaced d = im.unpack(q);
  double s = im.non_det_value(d);
  for (int l = 1; l <= im.lh; ++l) {
    Eigen::MatrixXd m = im.layer_matrix(d, l);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
    const auto& lu_mat = lu.matrixLU();
    double log_abs = 0.0;
    double sign = lu.permutationP().determinant();
    for (Eigen::Index i = 0; i < lu_mat.rows(); ++i) {
      double piv = lu_mat(i, i);
      if (piv < 0) sign = -sign;
      log_abs += std::log(std::abs(piv));
    }
    if (!(sign > 0.0))
      throw ContractError("DeepLinearAction::value: non-positive layer determinant");
    s -= 0.5 * log_abs;
  }
  return s;
}

Eigen::VectorXd DeepLinearAction::gradient(const Eigen::VectorXd& q) const {
  const Impl& im = *impl_;
  int T = im.steps;
  Impl::Displaced d = im.unpack(q);
  int n = dim();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);

  // Non-determinant part.
  for (int i = 0; i < n; ++i) {
    const Coord& c = im.coords[i];
    double mult = (c.a == c.b) ? 0.5 : 1.0;
    switch (c.kind) {
      case Kind::kHhat:
        g[i] += mult * d.h[c.layer](c.a, c.b);
        break;
      case Kind::kGhat:
        g[i] += mult * d.g[c.layer](c.a, c.b);
        break;
      case Kind::kH: {
        g[i] += mult * d.hhat[c.layer](c.a, c.b);
        if (c.a == c.b) g[i] -= im.w * d.khat[c.a] * d.g[c.layer + 1](c.a, c.a);
        break;
      }
      case Kind::kG: {
        g[i] += mult * d.ghat[c.layer](c.a, c.b);
        if (c.a == c.b) g[i] -= im.w * d.khat[c.a] * d.h[c.layer - 1](c.a, c.a);
        break;
      }
      case Kind::kA:
        g[i] -= d.b[c.layer](c.b, c.a);
        break;
      case Kind::kB:
        g[i] -= d.a[c.layer](c.b, c.a);
        break;
      case Kind::kKhat: {
        double ksum = 0.0;
        for (int l = 0; l <= im.lh; ++l) ksum += d.h[l](c.a, c.a) * d.g[l + 1](c.a, c.a);
        g[i] += im.w * (d.k[c.a] - ksum);
        break;
      }
      case Kind::kDeltahat: {
        double causal = 0.0;
        for (int u = 0; u < c.a; ++u) causal += im.w * d.k[u] * d.delta[u];
        g[i] += im.w * (d.delta[c.a] - im.st.y + causal);
        break;
      }
      case Kind::kK: {
        g[i] += im.w * d.khat[c.a];
        for (int t = c.a + 1; t < T; ++t) g[i] += im.w * im.w * d.dhat[t] * d.delta[c.a];
        break;
      }
      case Kind::kDelta: {
        g[i] += im.w * d.dhat[c.a];
        for (int t = c.a + 1; t < T; ++t) g[i] += im.w * im.w * d.dhat[t] * d.k[c.a];
        break;
      }
    }
  }

  // Determinant part: -1/2 Tr(M^-1 dM).
  std::vector<Impl::MEntry> eff;
  for (int l = 1; l <= im.lh; ++l) {
    Eigen::MatrixXd m = im.layer_matrix(d, l);
    Eigen::MatrixXd minv = m.lu().inverse();
    for (int i = 0; i < n; ++i) {
      im.m_effects(d, i, l, eff);
      if (eff.empty()) continue;
      double tr = 0.0;
      for (const auto& e : eff) tr += minv(e.c, e.r) * e.v;
      g[i] -= 0.5 * tr;
    }
  }
  return g;
}

Eigen::MatrixXd DeepLinearAction::hessian_analytic() const {
  const Impl& im = *impl_;
  int T = im.steps;
  int n = dim();
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
  Impl::Displaced d = im.unpack(zero);
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(n, n);

  // Non-determinant bilinear pairs.
  auto add = [&](int i, int j, double v) {
    hess(i, j) += v;
    if (i != j) hess(j, i) += v;
  };
  for (int l = 1; l <= im.lh; ++l)
    for (int a = 0; a < T; ++a)
      for (int b = a; b < T; ++b) {
        double mult = (a == b) ? 0.5 : 1.0;
        add(im.idx(Kind::kHhat, l, a, b), im.idx(Kind::kH, l, a, b), mult);
        add(im.idx(Kind::kGhat, l, a, b), im.idx(Kind::kG, l, a, b), mult);
      }
  for (int l = 1; l <= im.lh - 1; ++l)
    for (int a = 0; a < T; ++a)
      for (int b = 0; b < T; ++b)
        add(im.idx(Kind::kA, l, a, b), im.idx(Kind::kB, l, b, a), -1.0);
  for (int t = 0; t < T; ++t) {
    add(im.idx(Kind::kKhat, 0, t, 0), im.idx(Kind::kK, 0, t, 0), im.w);
    for (int l = 0; l <= im.lh; ++l) {
      if (l >= 1)
        add(im.idx(Kind::kKhat, 0, t, 0), im.idx(Kind::kH, l, t, t), -im.w * d.g[l + 1](t, t));
      if (l + 1 <= im.lh)
        add(im.idx(Kind::kKhat, 0, t, 0), im.idx(Kind::kG, l + 1, t, t), -im.w * d.h[l](t, t));
    }
    add(im.idx(Kind::kDeltahat, 0, t, 0), im.idx(Kind::kDelta, 0, t, 0), im.w);
    for (int s = 0; s < t; ++s) {
      add(im.idx(Kind::kDeltahat, 0, t, 0), im.idx(Kind::kDelta, 0, s, 0),
          im.w * im.w * d.k[s]);
      add(im.idx(Kind::kDeltahat, 0, t, 0), im.idx(Kind::kK, 0, s, 0),
          im.w * im.w * d.delta[s]);
    }
  }

  // Determinant part per layer.
  std::vector<int> layer_coords;
  std::vector<std::vector<Impl::MEntry>> effects(n);
  std::vector<Impl::MEntry> eff;
  for (int l = 1; l <= im.lh; ++l) {
    Eigen::MatrixXd m = im.layer_matrix(d, l);
    Eigen::MatrixXd minv = m.lu().inverse();
    layer_coords.clear();
    for (int i = 0; i < n; ++i) {
      im.m_effects(d, i, l, eff);
      if (!eff.empty()) {
        layer_coords.push_back(i);
        effects[i] = eff;
      }
    }
    // Second term: +1/2 Tr(Minv dM_i Minv dM_j).
    for (std::size_t pi = 0; pi < layer_coords.size(); ++pi) {
      int i = layer_coords[pi];
      const auto& ei = effects[i];
      for (std::size_t pj = pi; pj < layer_coords.size(); ++pj) {
        int j = layer_coords[pj];
        const auto& ej = effects[j];
        double tr = 0.0;
        for (const auto& a : ei)
          for (const auto& b : ej) tr += a.v * b.v * minv(a.c, b.r) * minv(b.c, a.r);
        double v = 0.5 * tr;
        hess(i, j) += v;
        if (i != j) hess(j, i) += v;
      }
    }
    // First term: -1/2 Tr(Minv d2M) for the bilinear (H/G, Delta) pairs.
    for (int s = 0; s < T; ++s) {
      int i_delta = im.idx(Kind::kDelta, 0, s, 0);
      for (int t = s + 1; t < T; ++t) {
        // d2 C(t,s) / dH^{l-1}_(t,s) dDelta_s = gamma w  (same for D with G).
        if (l - 1 >= 1) {
          int i_h = im.idx(Kind::kH, l - 1, std::min(t, s), std::max(t, s));
          double tr = im.gamma * im.w *
                      (minv(2 * T + t, T + s) + minv(T + s, 2 * T + t)) * (-1.0);
          double v = -0.5 * tr;
          hess(i_h, i_delta) += v;
          hess(i_delta, i_h) += v;
        }
        if (l + 1 <= im.lh) {
          int i_g = im.idx(Kind::kG, l + 1, std::min(t, s), std::max(t, s));
          double tr = im.gamma * im.w * (minv(3 * T + t, s) + minv(s, 3 * T + t)) * (-1.0);
          double v = -0.5 * tr;
          hess(i_g, i_delta) += v;
          hess(i_delta, i_g) += v;
        }
      }
    }
  }
  return hess;
}

Eigen::MatrixXd DeepLinearAction::hessian_fd(double step) const {
  int n = dim();
  Eigen::MatrixXd hess(n, n);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    auto column = [&](double h) {
      q[i] = h;
      Eigen::VectorXd gp = gradient(q);
      q[i] = -h;
      Eigen::VectorXd gm = gradient(q);
      q[i] = 0.0;
      return ((gp - gm) / (2 * h)).eval();
    };
    Eigen::VectorXd d1 = column(step);
    Eigen::VectorXd d2 = column(step / 2);
    hess.col(i) = (4.0 * d2 - d1) / 3.0;  // Richardson extrapolation
  }
  return 0.5 * (hess + hess.transpose());
}

DeepLinearPropagator hessian_and_propagator(const DeepLinearState& state,
                                            bool include_initial_fluctuations,
                                            bool use_fd_hessian) {
  DeepLinearAction action(state);
  const int T = state.grid.num_steps;
  const int lh = state.num_hidden;
  double w = state.grid.causal_weight();
  Eigen::MatrixXd hess = use_fd_hessian ? action.hessian_fd() : action.hessian_analytic();

  if (include_initial_fluctuations) {
    // Exact f(0) noise channel: zeta = h(0) z(0) of the top hidden layer.
    const Eigen::MatrixXd& hk = state.h_kernel[lh];
    const Eigen::MatrixXd& gk = state.g_kernel[lh];
    const Eigen::MatrixXd& hz = state.hz_cross_top;  // <h(t) z(s)>
    double gamma = state.gamma;
    double var_zeta = hk(0, 0) * gk(0, 0) + hz(0, 0) * hz(0, 0);
    for (int t = 0; t < T; ++t) {
      int it = action.index_of(DeepLinearAction::Kind::kDeltahat, 0, t, 0);
      for (int s = 0; s < T; ++s) {
        int is = action.index_of(DeepLinearAction::Kind::kDeltahat, 0, s, 0);
        hess(it, is) += w * w * var_zeta / (gamma * gamma);
      }
      for (int a = 0; a < T; ++a)
        for (int b = a; b < T; ++b) {
          double s_ab = (a == b) ? 0.5 : 1.0;
          double cov_h = hk(0, a) * hz(b, 0) + hk(0, b) * hz(a, 0);
          double cov_g = hz(0, a) * gk(0, b) + hz(0, b) * gk(0, a);
          int ih = action.index_of(DeepLinearAction::Kind::kHhat, lh, a, b);
          int ig = action.index_of(DeepLinearAction::Kind::kGhat, lh, a, b);
          hess(it, ih) += -(w * s_ab / gamma) * cov_h;
          hess(ih, it) += -(w * s_ab / gamma) * cov_h;
          hess(it, ig) += -(w * s_ab / gamma) * cov_g;
          hess(ig, it) += -(w * s_ab / gamma) * cov_g;
        }
    }
  }

  // Observable coordinates.
  std::vector<int> obs;
  for (int t = 0; t < T; ++t) obs.push_back(action.index_of(DeepLinearAction::Kind::kDelta, 0, t, 0));
  for (int t = 0; t < T; ++t) obs.push_back(action.index_of(DeepLinearAction::Kind::kK, 0, t, 0));
  for (int l = 1; l <= lh; ++l)
    for (int t = 0; t < T; ++t) obs.push_back(action.index_of(DeepLinearAction::Kind::kH, l, t, t));
  for (int l = 1; l <= lh; ++l)
    for (int t = 0; t < T; ++t) obs.push_back(action.index_of(DeepLinearAction::Kind::kG, l, t, t));

  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(action.dim(), static_cast<Eigen::Index>(obs.size()));
  for (std::size_t j = 0; j < obs.size(); ++j) rhs(obs[j], static_cast<Eigen::Index>(j)) = 1.0;
  Eigen::PartialPivLU<Eigen::Ref<Eigen::MatrixXd>> lu(hess);
  Eigen::MatrixXd x = lu.solve(rhs);
  Eigen::MatrixXd sigma(obs.size(), obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i)
    for (std::size_t j = 0; j < obs.size(); ++j)
      sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          -x(obs[i], static_cast<Eigen::Index>(j));
  sigma = 0.5 * (sigma + sigma.transpose()).eval();

  DeepLinearPropagator prop;
  prop.sigma_delta = sigma.block(0, 0, T, T);
  prop.sigma_k = sigma.block(T, T, T, T);
  prop.var_h.resize(lh + 1);
  prop.var_g.resize(lh + 1);
  for (int l = 1; l <= lh; ++l) {
    prop.var_h[l] = sigma.block((1 + l) * T, (1 + l) * T, T, T).diagonal();
    prop.var_g[l] = sigma.block((1 + lh + l) * T, (1 + lh + l) * T, T, T).diagonal();
  }
  return prop;
}

}  // namespace wf
