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

#ifndef WIDEFLUCT_CAUSAL_HPP
#define WIDEFLUCT_CAUSAL_HPP

#include <Eigen/Dense>

#include "widefluct/common.hpp"

namespace wf {

// The propagator U matrices assembled in this library are unit-diagonal and
// strictly block-causal once rows/columns are ordered time-major (all labels
// of step t together): U = I + L with L[(t,i),(s,j)] = 0 for s >= t. Such
// systems solve exactly by block forward substitution, which stays stable even
// when the spectral condition number of U is astronomically large (late-time
// EOS trajectories). det U = 1, so U is never singular.
//
// Solves (I + L) X = B. l and b use row index t * labels + i.
Eigen::MatrixXd causal_unit_lower_solve(const Eigen::MatrixXd& l, const Eigen::MatrixXd& b,
                                        int labels);

// Sigma = U^-1 kappa U^-T for U = I + L as above; symmetrizes the result.
Eigen::MatrixXd causal_sandwich(const Eigen::MatrixXd& l, const Eigen::MatrixXd& kappa,
                                int labels);

}  // namespace wf

#endif  // WIDEFLUCT_CAUSAL_HPP
