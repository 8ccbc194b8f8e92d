// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "stagefinder/common.hpp"
#include "stagefinder/losses.hpp"

using namespace stagefinder;

namespace {

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int r, int c) {
  std::uniform_real_distribution<double> u(-1, 1);
  return Eigen::MatrixXd::NullaryExpr(r, c, [&] { return u(rng); });
}

// Largest relative error between an analytic gradient and central differences of f.
template <class F>
double gradient_error(Eigen::MatrixXd x, const Eigen::MatrixXd& analytic, F f) {
  double worst = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + 1e-6;
    const double up = f(x);
    x.data()[i] = keep - 1e-6;
    const double down = f(x);
    x.data()[i] = keep;
    const double numeric = (up - down) / 2e-6;
    worst = std::max(worst, std::abs(numeric - analytic.data()[i]) / std::max(1e-3, std::abs(numeric)));
  }
  return worst;
}

}  // namespace

TEST_CASE("prediction loss") {
  Eigen::MatrixXd g(2, 3);
  g << 0, 1, 2, 0, 0, 4;
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(2, 3);
  CHECK(loss_pred(g, p) == doctest::Approx((1.0 + 4.0 + 16.0) / 2.0));
  std::mt19937_64 rng(1);
  const auto seq = random_matrix(rng, 3, 7);
  const auto pred = random_matrix(rng, 3, 7);
  Eigen::MatrixXd dp, ds;
  CHECK(loss_pred(seq, pred, &dp, &ds) == doctest::Approx(oracle::loss_pred(seq, pred)).epsilon(1e-12));
  CHECK(dp.col(6).isZero());
  CHECK(gradient_error(pred, dp, [&](const Eigen::MatrixXd& x) { return oracle::loss_pred(seq, x); }) < 1e-5);
  CHECK(gradient_error(seq, ds, [&](const Eigen::MatrixXd& x) { return oracle::loss_pred(x, pred); }) < 1e-5);
  CHECK_THROWS_AS(loss_pred(seq.leftCols(1), pred.leftCols(1)), InputError);
  CHECK_THROWS_AS(loss_pred(seq, pred.leftCols(3)), DimensionError);
}

TEST_CASE("contrastive loss reference values") {
  const Eigen::VectorXd e1 = Eigen::VectorXd::Unit(4, 0);
  const Eigen::VectorXd e2 = Eigen::VectorXd::Unit(4, 1);
  std::vector<std::vector<int>> all(1);
  for (int i = 0; i < 256; ++i) all[0].push_back(i);

  // Every similarity equal: uniform over 257 candidates.
  Eigen::MatrixXd same = e1.replicate(1, 256);
  CHECK(loss_contrastive(e1, e1, same, all, 0.2) == doctest::Approx(std::log(257.0)).epsilon(1e-12));

  // Aligned positive, opposite negatives.
  Eigen::MatrixXd opposite = (-e1).replicate(1, 256);
  CHECK(loss_contrastive(e1, e1, opposite, all, 0.2) ==
        doctest::Approx(std::log(1.0 + 256.0 * std::exp(-10.0))).epsilon(1e-10));
  CHECK(loss_contrastive(e1, e1, opposite, all, 0.2) == doctest::Approx(1.16e-2).epsilon(1e-2));
  Eigen::MatrixXd orth = e2.replicate(1, 256);

  // One negative identical to the positive.
  CHECK(loss_contrastive(e1, e1, e1, {{0}}, 0.2) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Scale invariance of cosine.
  CHECK(loss_contrastive(3.0 * e1, e1, orth, all, 0.1) ==
        doctest::Approx(loss_contrastive(e1, e1, orth, all, 0.1)).epsilon(1e-12));
}

TEST_CASE("contrastive loss matches the oracle and its gradients") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = random_matrix(rng, 4, 3);
    const auto p = random_matrix(rng, 4, 3);
    const auto pool = random_matrix(rng, 4, 6);
    std::vector<std::vector<int>> neg(3);
    for (auto& n : neg) {
      for (int k = 0; k < 5; ++k) n.push_back(static_cast<int>(rng() % 6));  // repeats allowed
    }
    ContrastiveGrads g;
    const double l = loss_contrastive(a, p, pool, neg, 0.2, &g);
    CHECK(l == doctest::Approx(oracle::loss_contrastive(a, p, pool, neg, 0.2)).epsilon(1e-12));
    CHECK(gradient_error(a, g.anchors,
                         [&](const Eigen::MatrixXd& x) { return oracle::loss_contrastive(x, p, pool, neg, 0.2); }) <
          1e-5);
    CHECK(gradient_error(p, g.positives,
                         [&](const Eigen::MatrixXd& x) { return oracle::loss_contrastive(a, x, pool, neg, 0.2); }) <
          1e-5);
    CHECK(gradient_error(pool, g.pool,
                         [&](const Eigen::MatrixXd& x) { return oracle::loss_contrastive(a, p, x, neg, 0.2); }) <
          1e-5);
  }
}

TEST_CASE("contrastive loss is finite for zero vectors") {
  const Eigen::MatrixXd z = Eigen::MatrixXd::Zero(3, 1);
  ContrastiveGrads g;
  const double l = loss_contrastive(z, z, z, {{0}}, 0.2, &g);
  CHECK(std::isfinite(l));
  CHECK(g.anchors.allFinite());
  CHECK_THROWS(loss_contrastive(z, z, z, {{0}}, 0.0));
}

TEST_CASE("supervised loss") {
  const Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(kNumStages, 4, 1.0 / kNumStages);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(kNumStages);
  CHECK(loss_supervised(uniform, {0, 1, 5, 6}, ones) == doctest::Approx(std::log(7.0)).epsilon(1e-6));

  Eigen::MatrixXd certain = Eigen::MatrixXd::Zero(kNumStages, 1);
  certain(2, 0) = 1.0;
  CHECK(std::abs(loss_supervised(certain, {2}, ones)) < 1e-7);
  CHECK(loss_supervised(certain, {3}, ones, 1e-8) == doctest::Approx(-std::log(1e-8)));

  std::mt19937_64 rng(3);
  Eigen::MatrixXd p = random_matrix(rng, kNumStages, 5).array().exp();
  for (int t = 0; t < 5; ++t) p.col(t) /= p.col(t).sum();
  Eigen::VectorXd w = random_matrix(rng, kNumStages, 1).col(0).array().abs() + 0.1;
  const std::vector<int> y{0, 6, 2, 2, 4};
  Eigen::MatrixXd d;
  CHECK(loss_supervised(p, y, w, 1e-8, &d) == doctest::Approx(oracle::loss_supervised(p, y, w, 1e-8)).epsilon(1e-12));
  CHECK(gradient_error(p, d, [&](const Eigen::MatrixXd& x) { return oracle::loss_supervised(x, y, w, 1e-8); }) <
        1e-5);
  CHECK_THROWS(loss_supervised(p, {0, 1}, w));
  CHECK_THROWS(loss_supervised(p, {0, 6, 2, 2, 7}, w));
}
