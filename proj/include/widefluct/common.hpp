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

#ifndef WIDEFLUCT_COMMON_HPP
#define WIDEFLUCT_COMMON_HPP

#include <atomic>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace wf {

/// Thrown when a trajectory or solver produces NaN/Inf.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown when a fixed-point iteration fails to reach tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> residuals)
      : std::runtime_error(what), residual_history(std::move(residuals)) {}
  std::vector<double> residual_history;
};

/// Thrown on matrix conditioning / factorization failures.
class ConditioningError : public std::runtime_error {
 public:
  explicit ConditioningError(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown on malformed configs, schemas, or contract violations.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Global worker cap shared by all parallel loops. 0 means hardware concurrency.
int max_jobs();
void set_max_jobs(int jobs);

// Static partition of [0, n) over worker threads. Deterministic: worker k gets a
// contiguous chunk, so reductions done per-index stay reproducible.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& chunk_fn);

}  // namespace wf

#endif  // WIDEFLUCT_COMMON_HPP
