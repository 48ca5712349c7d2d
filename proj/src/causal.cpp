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

#include "widefluct/causal.hpp"

namespace wf {

Eigen::MatrixXd causal_unit_lower_solve(const Eigen::MatrixXd& l, const Eigen::MatrixXd& b,
                                        int labels) {
  Eigen::Index n = l.rows();
  if (l.cols() != n || b.rows() != n) throw ContractError("causal_unit_lower_solve: shape");
  if (n % labels != 0) throw ContractError("causal_unit_lower_solve: labels must divide dim");
  int steps = static_cast<int>(n) / labels;
  Eigen::MatrixXd x = b;
  for (int t = 1; t < steps; ++t) {
    // X_t -= L[t, 0:t] X_{0:t}
    x.middleRows(static_cast<Eigen::Index>(t) * labels, labels).noalias() -=
        l.block(static_cast<Eigen::Index>(t) * labels, 0, labels,
                static_cast<Eigen::Index>(t) * labels) *
        x.topRows(static_cast<Eigen::Index>(t) * labels);
  }
  if (!x.allFinite())
    throw ConditioningError(
        "causal_unit_lower_solve: forward substitution overflowed (ill-conditioned U)");
  return x;
}

Eigen::MatrixXd causal_sandwich(const Eigen::MatrixXd& l, const Eigen::MatrixXd& kappa,
                                int labels) {
  Eigen::MatrixXd x = causal_unit_lower_solve(l, kappa, labels);
  Eigen::MatrixXd sigma = causal_unit_lower_solve(l, x.transpose(), labels);
  return 0.5 * (sigma + sigma.transpose());
}

}  // namespace wf
