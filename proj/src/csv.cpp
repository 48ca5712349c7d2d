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

#include "widefluct/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "widefluct/common.hpp"

namespace wf {

namespace {
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

void TimeSeriesTable::add(const std::string& name, const Eigen::VectorXd& col) {
  if (col.size() != time.size())
    throw ContractError("TimeSeriesTable: column " + name + " length mismatch");
  names.push_back(name);
  columns.push_back(col);
}

bool TimeSeriesTable::has(const std::string& name) const {
  for (const auto& n : names)
    if (n == name) return true;
  return false;
}

const Eigen::VectorXd& TimeSeriesTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return columns[i];
  throw ContractError("TimeSeriesTable: no column " + name);
}

void write_csv(const std::string& path, const TimeSeriesTable& table) {
  std::ofstream out(path);
  if (!out) throw ContractError("write_csv: cannot open " + path);
  out << table.time_name;
  for (const auto& n : table.names) out << "," << n;
  out << "\n";
  for (Eigen::Index i = 0; i < table.time.size(); ++i) {
    out << fmt(table.time[i]);
    for (const auto& c : table.columns) out << "," << fmt(c[i]);
    out << "\n";
  }
}

TimeSeriesTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("read_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ContractError("read_csv: empty file " + path);
  TimeSeriesTable table;
  std::vector<std::string> headers;
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) headers.push_back(tok);
  }
  if (headers.empty()) throw ContractError("read_csv: no header in " + path);
  std::vector<std::vector<double>> cols(headers.size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::size_t j = 0;
    while (std::getline(ss, tok, ',')) {
      if (j >= headers.size()) throw ContractError("read_csv: ragged row in " + path);
      cols[j++].push_back(std::stod(tok));
    }
    if (j != headers.size()) throw ContractError("read_csv: ragged row in " + path);
  }
  auto to_vec = [](const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
  };
  table.time_name = headers[0];
  table.time = to_vec(cols[0]);
  for (std::size_t j = 1; j < headers.size(); ++j) {
    table.names.push_back(headers[j]);
    table.columns.push_back(to_vec(cols[j]));
  }
  return table;
}

void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path);
  if (!out) throw ContractError("write_matrix_csv: cannot open " + path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ",";
      out << fmt(m(i, j));
    }
    out << "\n";
  }
}

Eigen::MatrixXd read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("read_matrix_csv: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    rows.emplace_back();
    while (std::getline(ss, tok, ',')) rows.back().push_back(std::stod(tok));
  }
  if (rows.empty()) return Eigen::MatrixXd();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size())
      throw ContractError("read_matrix_csv: ragged matrix in " + path);
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

}  // namespace wf
