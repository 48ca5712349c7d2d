#include <set>

#include "doctest.h"
#include "widefluct/grid.hpp"

using namespace wf;

TEST_CASE("flatten_index row-major examples") {
  TimeGrid grid(0.1, 10);
  CHECK(flatten_index(0, 0, grid, 3) == 0);
  CHECK(flatten_index(1, 0, grid, 3) == 10);
  CHECK(flatten_index(2, 9, grid, 3) == 29);
}

TEST_CASE("flatten_index is a bijection on its domain") {
  TimeGrid grid(0.5, 7);
  int p = 5;
  std::set<std::int64_t> seen;
  for (int mu = 0; mu < p; ++mu)
    for (int t = 0; t < grid.num_steps; ++t) seen.insert(flatten_index(mu, t, grid, p));
  CHECK(seen.size() == static_cast<std::size_t>(p * grid.num_steps));
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == p * grid.num_steps - 1);
}

TEST_CASE("flatten_index range errors") {
  TimeGrid grid(0.1, 4);
  CHECK_THROWS_AS(flatten_index(-1, 0, grid, 2), std::out_of_range);
  CHECK_THROWS_AS(flatten_index(2, 0, grid, 2), std::out_of_range);
  CHECK_THROWS_AS(flatten_index(0, 4, grid, 2), std::out_of_range);
}

TEST_CASE("grid validation") {
  CHECK_THROWS_AS(TimeGrid(0.0, 5), ContractError);
  CHECK_THROWS_AS(TimeGrid(0.1, 0), ContractError);
}

TEST_CASE("left-Riemann quadrature with strict Heaviside") {
  SUBCASE("T=1 grid has empty causal sums") {
    TimeGrid grid(0.1, 1);
    Eigen::VectorXd v = Eigen::VectorXd::Constant(1, 3.0);
    CHECK(causal_cumsum(grid, v)[0] == 0.0);
    CHECK(theta_matrix(grid, v).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("integral of 1 up to t=0.5 at dt=0.1") {
    TimeGrid grid(0.1, 8);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(8);
    Eigen::VectorXd e = causal_cumsum(grid, ones);
    CHECK(e[5] == doctest::Approx(0.5).epsilon(1e-14));
  }
  SUBCASE("discrete mode weights are 1 per past step") {
    TimeGrid grid(0.7, 6, GridMode::kDiscreteGd);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(6);
    CHECK(causal_cumsum(grid, ones)[3] == 3.0);
    CHECK(quadrature_weights(grid)[0] == 1.0);
  }
}

TEST_CASE("Theta(0)=0: the t=0 row of every causal integral is zero") {
  TimeGrid grid(0.2, 9);
  Eigen::VectorXd v(9);
  for (int i = 0; i < 9; ++i) v[i] = std::sin(i + 1.0);
  Eigen::MatrixXd th = theta_matrix(grid, v);
  CHECK(th.row(0).cwiseAbs().maxCoeff() == 0.0);
  for (int t = 0; t < 9; ++t)
    for (int s = t; s < 9; ++s) CHECK(th(t, s) == 0.0);
  CHECK(th(3, 1) == doctest::Approx(0.2 * v[1]));
  CHECK(causal_cumsum(grid, v)[0] == 0.0);
}
