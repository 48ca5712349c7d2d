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

#ifndef WIDEFLUCT_CSV_HPP
#define WIDEFLUCT_CSV_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace wf {

// Column contract: first column is time (or step), then observables. Values
// are printed with %.17g so identical runs produce byte-identical files.
struct TimeSeriesTable {
  std::string time_name = "time";
  Eigen::VectorXd time;
  std::vector<std::string> names;
  std::vector<Eigen::VectorXd> columns;

  void add(const std::string& name, const Eigen::VectorXd& col);
  bool has(const std::string& name) const;
  const Eigen::VectorXd& column(const std::string& name) const;
};

void write_csv(const std::string& path, const TimeSeriesTable& table);
TimeSeriesTable read_csv(const std::string& path);

void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix_csv(const std::string& path);

}  // namespace wf

#endif  // WIDEFLUCT_CSV_HPP
