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

#include "widefluct/grid.hpp"

#include <algorithm>

namespace wf {

namespace {
std::atomic<int> g_max_jobs{0};
}

int max_jobs() {
  int j = g_max_jobs.load();
  if (j > 0) return j;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void set_max_jobs(int jobs) { g_max_jobs.store(jobs); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& chunk_fn) {
  if (n <= 0) return;
  int workers = std::min<std::int64_t>(max_jobs(), n);
  if (workers <= 1) {
    chunk_fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::int64_t chunk = (n + workers - 1) / workers;
  for (int k = 0; k < workers; ++k) {
    std::int64_t lo = k * chunk;
    std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&chunk_fn, lo, hi] { chunk_fn(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

std::int64_t flatten_index(int sample, int time_index, const TimeGrid& grid, int num_samples) {
  if (sample < 0 || sample >= num_samples)
    throw std::out_of_range("flatten_index: sample out of range");
  if (time_index < 0 || time_index >= grid.num_steps)
    throw std::out_of_range("flatten_index: time index out of range");
  return static_cast<std::int64_t>(sample) * grid.num_steps + time_index;
}

Eigen::VectorXd quadrature_weights(const TimeGrid& grid) {
  return Eigen::VectorXd::Constant(grid.num_steps, grid.causal_weight());
}

Eigen::VectorXd causal_cumsum(const TimeGrid& grid, const Eigen::VectorXd& v) {
  if (v.size() != grid.num_steps) throw ContractError("causal_cumsum: size mismatch");
  Eigen::VectorXd out(grid.num_steps);
  double acc = 0.0;
  double w = grid.causal_weight();
  for (int t = 0; t < grid.num_steps; ++t) {
    out[t] = acc;
    acc += w * v[t];
  }
  return out;
}

Eigen::MatrixXd theta_matrix(const TimeGrid& grid, const Eigen::VectorXd& v) {
  if (v.size() != grid.num_steps) throw ContractError("theta_matrix: size mismatch");
  int T = grid.num_steps;
  double w = grid.causal_weight();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(T, T);
  for (int t = 1; t < T; ++t)
    for (int s = 0; s < t; ++s) m(t, s) = w * v[s];
  return m;
}

}  // namespace wf
