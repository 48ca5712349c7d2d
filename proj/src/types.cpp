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

#include "widefluct/types.hpp"

#include <Eigen/Eigenvalues>

namespace wf {

double symmetry_violation(const Eigen::MatrixXd& m) {
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

double min_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

bool is_causal_strict(const Eigen::MatrixXd& m, double tol) {
  for (Eigen::Index t = 0; t < m.rows(); ++t)
    for (Eigen::Index s = t; s < m.cols(); ++s)
      if (std::abs(m(t, s)) > tol) return false;
  return true;
}

void Propagator::set_block(const std::string& a, const std::string& b, Eigen::MatrixXd m) {
  blocks_[{a, b}] = std::move(m);
}

bool Propagator::has_block(const std::string& a, const std::string& b) const {
  return blocks_.count({a, b}) > 0 || blocks_.count({b, a}) > 0;
}

Eigen::MatrixXd Propagator::block(const std::string& a, const std::string& b) const {
  auto it = blocks_.find({a, b});
  if (it != blocks_.end()) return it->second;
  it = blocks_.find({b, a});
  if (it != blocks_.end()) return it->second.transpose();
  throw ContractError("Propagator: no block (" + a + ", " + b + ")");
}

Eigen::VectorXd Propagator::diagonal(const std::string& a) const {
  return block(a, a).diagonal();
}

std::vector<std::string> Propagator::labels() const {
  std::vector<std::string> out;
  for (const auto& kv : blocks_) {
    if (kv.first.first == kv.first.second) out.push_back(kv.first.first);
  }
  return out;
}

void Propagator::check_diagonal_block_psd(const std::string& a, double tol) const {
  Eigen::MatrixXd m = block(a, a);
  double scale = std::max(1.0, m.trace());
  if (symmetry_violation(m) > 1e-8 * scale)
    throw ContractError("Propagator: diagonal block " + a + " not symmetric");
  if (min_eigenvalue(m) < -tol * scale)
    throw ContractError("Propagator: diagonal block " + a + " not PSD");
}

}  // namespace wf
