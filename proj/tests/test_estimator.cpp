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
#include "stagefinder/estimator.hpp"

using namespace stagefinder;

namespace {

EstimatorConfig small_config() {
  EstimatorConfig cfg;
  cfg.input = 3;
  cfg.hidden = 4;
  cfg.layers = 2;
  cfg.dropout = 0.3;
  return cfg;
}

ParamStore estimator_store(const EstimatorConfig& cfg, std::uint64_t seed) {
  std::vector<ParamSpec> specs;
  append_estimator_params(specs, cfg);
  auto store = init_params(specs, seed);
  init_forget_bias(store, cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& p : store) {
    if (p.value.cols() == 1) p.value += Eigen::MatrixXd::NullaryExpr(p.value.rows(), 1, [&] { return u(rng); });
  }
  return store;
}

Eigen::MatrixXd random_sequence(std::mt19937_64& rng, int d, int t) {
  std::uniform_real_distribution<double> u(-1, 1);
  return Eigen::MatrixXd::NullaryExpr(d, t, [&] { return u(rng); });
}

std::vector<oracle::LstmLayer> oracle_layers(const ParamStore& s, int layers) {
  std::vector<oracle::LstmLayer> out;
  for (int l = 0; l < layers; ++l) {
    const auto p = "lstm.l" + std::to_string(l) + ".";
    out.push_back({s[p + "w"].value, s[p + "u"].value, s[p + "b"].value.col(0)});
  }
  return out;
}

}  // namespace

TEST_CASE("parameter layout and forget bias") {
  const auto cfg = small_config();
  std::vector<ParamSpec> specs;
  append_estimator_params(specs, cfg);
  auto s = init_params(specs, 1);
  init_forget_bias(s, cfg);
  CHECK(s["lstm.l0.w"].value.rows() == 16);
  CHECK(s["lstm.l0.w"].value.cols() == 3);
  CHECK(s["lstm.l1.w"].value.cols() == 4);
  CHECK(s["lstm.l1.u"].value.cols() == 4);
  CHECK(s["head.stage.w"].value.rows() == kNumStages);
  CHECK(s["head.pred.w"].value.rows() == 3);
  for (int l = 0; l < 2; ++l) {
    const auto& b = s["lstm.l" + std::to_string(l) + ".b"].value;
    CHECK(b.middleRows(4, 4).isOnes());
    CHECK(b.topRows(4).isZero());
    CHECK(b.bottomRows(8).isZero());
  }
}

TEST_CASE("eval-mode recurrence matches the scalar oracle") {
  const auto cfg = small_config();
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = estimator_store(cfg, static_cast<std::uint64_t>(trial + 1));
    const StageEstimator est(s, cfg);
    const auto seq = random_sequence(rng, 3, 1 + static_cast<int>(rng() % 12));
    const auto out = est.recurrent_forward(seq, s, Mode::eval);
    CHECK((out.hidden - oracle::lstm(seq, oracle_layers(s, 2))).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("zero parameters give zero state") {
  const auto cfg = small_config();
  auto s = estimator_store(cfg, 1);
  for (auto& p : s) p.value.setZero();
  const StageEstimator est(s, cfg);
  std::mt19937_64 rng(2);
  const auto out = est.recurrent_forward(random_sequence(rng, 3, 6), s, Mode::eval);
  CHECK(out.hidden.isZero());
  CHECK(out.cell.isZero());
}

TEST_CASE("outputs are causal") {
  const auto cfg = small_config();
  const auto s = estimator_store(cfg, 4);
  const StageEstimator est(s, cfg);
  std::mt19937_64 rng(5);
  auto seq = random_sequence(rng, 3, 8);
  const auto a = est.recurrent_forward(seq, s, Mode::eval).hidden;
  seq.rightCols(3) = random_sequence(rng, 3, 3);
  const auto b = est.recurrent_forward(seq, s, Mode::eval).hidden;
  CHECK(a.leftCols(5) == b.leftCols(5));
  CHECK(a.rightCols(3) != b.rightCols(3));
}

TEST_CASE("dropout only in train mode") {
  const auto cfg = small_config();
  const auto s = estimator_store(cfg, 4);
  const StageEstimator est(s, cfg);
  std::mt19937_64 rng(5);
  const auto seq = random_sequence(rng, 3, 30);
  const auto e1 = est.recurrent_forward(seq, s, Mode::eval, 1).hidden;
  CHECK(e1 == est.recurrent_forward(seq, s, Mode::eval, 2).hidden);
  StageEstimator::Cache cache;
  const auto t1 = est.recurrent_forward(seq, s, Mode::train, 1, &cache).hidden;
  CHECK(t1 == est.recurrent_forward(seq, s, Mode::train, 1).hidden);
  CHECK(t1 != est.recurrent_forward(seq, s, Mode::train, 2).hidden);
  CHECK(t1 != e1);
  const auto& mask = cache.layers[1].mask;
  REQUIRE(mask.size() == 4 * 30);
  int dropped = 0;
  for (int i = 0; i < mask.size(); ++i) {
    const double m = mask.data()[i];
    CHECK((m == 0.0 || m == doctest::Approx(1.0 / 0.7)));
    dropped += m == 0.0;
  }
  CHECK(dropped > 10);
  CHECK(dropped < 70);
  CHECK(cache.layers[0].mask.size() == 0);
}

TEST_CASE("shape errors") {
  const auto cfg = small_config();
  const auto s = estimator_store(cfg, 4);
  const StageEstimator est(s, cfg);
  CHECK_THROWS_AS(est.recurrent_forward(Eigen::MatrixXd::Zero(2, 4), s, Mode::eval), DimensionError);
  CHECK_THROWS_AS(est.recurrent_forward(Eigen::MatrixXd::Zero(3, 0), s, Mode::eval), DimensionError);
}

TEST_CASE("classifier head") {
  const auto cfg = small_config();
  auto s = estimator_store(cfg, 4);
  const StageEstimator est(s, cfg);
  s["head.stage.w"].value.setZero();
  s["head.stage.b"].value.setZero();
  s["head.stage.b"].value(3) = 10.0;
  const auto p = est.classify(Eigen::MatrixXd::Ones(4, 2), s);
  CHECK(p(3, 0) == doctest::Approx(std::exp(10.0) / (std::exp(10.0) + 6.0)).epsilon(1e-12));
  CHECK(p(0, 1) == doctest::Approx(1.0 / (std::exp(10.0) + 6.0)).epsilon(1e-12));

  s["head.stage.b"].value(3) = 0.0;
  CHECK((est.classify(Eigen::MatrixXd::Zero(4, 1), s).array() - 1.0 / 7.0).abs().maxCoeff() < 1e-15);

  std::mt19937_64 rng(8);
  auto r = estimator_store(cfg, 9);
  const auto h = random_sequence(rng, 4, 5);
  const auto q = est.classify(h, r);
  CHECK((q - oracle::classify(h, r["head.stage.w"].value, r["head.stage.b"].value.col(0))).cwiseAbs().maxCoeff() <
        1e-12);
  for (int t = 0; t < 5; ++t) CHECK(q.col(t).sum() == doctest::Approx(1.0).epsilon(1e-12));

  Eigen::MatrixXd huge = Eigen::MatrixXd::Constant(4, 1, 1e6);
  CHECK(est.classify(huge, r).allFinite());
}

TEST_CASE("prediction head matches an affine oracle") {
  const auto cfg = small_config();
  const auto s = estimator_store(cfg, 6);
  const StageEstimator est(s, cfg);
  std::mt19937_64 rng(1);
  const auto h = random_sequence(rng, 4, 7);
  const auto got = est.predict_next(h, s);
  const Eigen::MatrixXd want =
      oracle::affine_rows(h.transpose(), s["head.pred.w"].value, s["head.pred.b"].value.col(0)).transpose();
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("recurrent and head gradients match finite differences") {
  const auto cfg = small_config();
  auto s = estimator_store(cfg, 12);
  const StageEstimator est(s, cfg);
  std::mt19937_64 rng(31);
  const auto seq = random_sequence(rng, 3, 6);
  const auto target = random_sequence(rng, 3, 6);
  const std::vector<int> labels{0, 3, 3, 6, 1, 2};
  for (Mode mode : {Mode::eval, Mode::train}) {
    // Cross-entropy on the stage head plus a squared error on the prediction head.
    auto loss = [&](const ParamStore& p) {
      const auto h = est.recurrent_forward(seq, p, mode, 77).hidden;
      const auto probs = est.classify(h, p);
      const auto pred = est.predict_next(h, p);
      double l = (pred - target).squaredNorm();
      for (int t = 0; t < 6; ++t) l -= std::log(probs(labels[static_cast<std::size_t>(t)], t));
      return l;
    };
    s.zero_grad();
    StageEstimator::Cache cache;
    const auto h = est.recurrent_forward(seq, s, mode, 77, &cache).hidden;
    Eigen::MatrixXd d_logits = est.classify(h, s);
    for (int t = 0; t < 6; ++t) d_logits(labels[static_cast<std::size_t>(t)], t) -= 1.0;
    Eigen::MatrixXd dh = est.classify_backward(h, d_logits, s);
    dh += est.predict_next_backward(h, 2.0 * (est.predict_next(h, s) - target), s);
    Eigen::MatrixXd d_seq;
    est.recurrent_backward(cache, dh, s, &d_seq);
    CHECK(finite_diff_check(loss, s, 1e-5, 2000) < 1e-5);

    // Input gradient by central differences.
    double worst = 0.0;
    for (int i = 0; i < seq.size(); ++i) {
      Eigen::MatrixXd up = seq, down = seq;
      up.data()[i] += 1e-5;
      down.data()[i] -= 1e-5;
      auto eval_at = [&](const Eigen::MatrixXd& x) {
        const auto hh = est.recurrent_forward(x, s, mode, 77).hidden;
        const auto probs = est.classify(hh, s);
        double l = (est.predict_next(hh, s) - target).squaredNorm();
        for (int t = 0; t < 6; ++t) l -= std::log(probs(labels[static_cast<std::size_t>(t)], t));
        return l;
      };
      const double numeric = (eval_at(up) - eval_at(down)) / 2e-5;
      worst = std::max(worst, std::abs(numeric - d_seq.data()[i]) / std::max(1e-8, std::abs(numeric)));
    }
    CHECK(worst < 1e-5);
  }
}
