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
#include "helpers.hpp"
#include "stagefinder/training.hpp"

using namespace stagefinder;

namespace {

std::vector<Trace> corpus(std::uint64_t seed, int traces, int length) {
  std::mt19937_64 rng(seed);
  std::vector<Trace> out;
  for (int i = 0; i < traces; ++i) out.push_back(fixtures::random_trace(rng, length, fixtures::tiny_layout()));
  return out;
}

PretrainConfig small_pretrain() {
  PretrainConfig cfg;
  cfg.seq_len = 5;
  cfg.negatives = 6;
  cfg.batch = 3;
  cfg.epochs = 2;
  cfg.lr = 1e-2;
  return cfg;
}

FinetuneConfig small_finetune() {
  FinetuneConfig cfg;
  cfg.phase1_epochs = 2;
  cfg.phase2_epochs = 2;
  cfg.curriculum_start = 3;
  cfg.curriculum_end = 5;
  cfg.batch = 2;
  cfg.phase1_lr = 1e-2;
  cfg.phase2_lr = 1e-2;
  return cfg;
}

bool same_values(const ParamStore& a, const ParamStore& b, const std::string& prefix = "") {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name.rfind(prefix, 0) == 0 && a[i].value != b[i].value) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("class weights") {
  std::vector<int> balanced;
  for (int k = 0; k < kNumStages; ++k) balanced.insert(balanced.end(), 3, k);
  CHECK((class_weights(balanced).array() - 1.0).abs().maxCoeff() < 1e-15);

  // counts 0:4, 1:2, 2:1, 3:1 -> weights 8/28, 8/14, 8/7, 8/7; median of present is (8/14 + 8/7) / 2.
  std::vector<std::string> warnings;
  const auto w = class_weights({0, 0, 0, 0, 1, 1, 2, 3}, &warnings);
  CHECK(w(0) == doctest::Approx(8.0 / 28.0));
  CHECK(w(1) == doctest::Approx(8.0 / 14.0));
  CHECK(w(2) == doctest::Approx(8.0 / 7.0));
  const double median = 0.5 * (8.0 / 14.0 + 8.0 / 7.0);
  for (int k = 4; k < kNumStages; ++k) CHECK(w(k) == doctest::Approx(median));
  CHECK(warnings.size() == 3);
  CHECK_THROWS_AS(class_weights({}), InputError);
  CHECK_THROWS_AS(class_weights({9}), InputError);
}

TEST_CASE("curriculum schedule") {
  CHECK(curriculum_length(1, 20, 10, 30) == 10);
  CHECK(curriculum_length(20, 20, 10, 30) == 30);
  CHECK(curriculum_length(11, 21, 10, 30) == 20);
  int prev = 0;
  for (int e = 1; e <= 20; ++e) {
    const int len = curriculum_length(e, 20, 10, 30);
    CHECK(len >= prev);
    prev = len;
  }
  CHECK(curriculum_length(1, 1, 10, 30) == 30);
}

TEST_CASE("early stopping") {
  EarlyStopping stop(5);
  CHECK(!stop.update(0.5, 1));
  CHECK(stop.improved());
  for (int e = 2; e <= 5; ++e) CHECK(!stop.update(0.5, e));  // ties are not improvements
  CHECK(!stop.improved());
  CHECK(stop.update(0.4, 6));
  CHECK(stop.best_epoch() == 1);
  CHECK(stop.best_score() == 0.5);
}

TEST_CASE("fine-tuning halts on a plateau and restores the best epoch") {
  const auto spec = fixtures::tiny_spec();
  StageModel model(fixtures::tiny_model(), spec);
  const auto train = corpus(1, 3, 6);
  auto cfg = small_finetune();
  cfg.phase1_epochs = 20;
  cfg.phase2_epochs = 1;
  cfg.phase2_lr = 0.0;  // phase 2 leaves the restored phase-1 weights as they are
  std::vector<ParamStore> seen;
  const Validator validator = [&](const StageModel& m, int phase, int epoch) {
    if (phase == 2) return 0.0;
    seen.push_back(m.params());
    return 0.9 - 0.05 * (epoch - 1);
  };
  const auto result = finetune(model, train, {}, cfg, validator);
  CHECK(result.epochs_run[0] == 6);
  CHECK(result.best_epoch[0] == 1);
  CHECK(result.log.size() == 7);
  REQUIRE(seen.size() == 6);
  CHECK(same_values(model.params(), seen[0]));
  CHECK(!same_values(model.params(), seen[5]));
}

TEST_CASE("phase one leaves the frozen blocks bit-identical") {
  const auto spec = fixtures::tiny_spec();
  StageModel model(fixtures::tiny_model(), spec);
  const ParamStore before = model.params();
  auto cfg = small_finetune();
  cfg.phase2_epochs = 1;
  cfg.phase2_lr = 0.0;
  const Validator validator = [](const StageModel&, int, int epoch) { return static_cast<double>(epoch); };
  finetune(model, corpus(2, 3, 6), {}, cfg, validator);
  for (const char* prefix : {"proj.", "encoder.", "readout.", "lstm.l0.", "head.pred."}) {
    CHECK(same_values(model.params(), before, prefix));
  }
  CHECK(!same_values(model.params(), before, "lstm.l1."));
  CHECK(!same_values(model.params(), before, "head.stage."));
  for (const auto& p : model.params()) CHECK(p.trainable);
}

TEST_CASE("phase two updates the encoder") {
  const auto spec = fixtures::tiny_spec();
  StageModel model(fixtures::tiny_model(), spec);
  const ParamStore before = model.params();
  auto cfg = small_finetune();
  cfg.phase1_epochs = 1;
  cfg.phase1_lr = 0.0;
  const Validator validator = [](const StageModel&, int, int epoch) { return static_cast<double>(epoch); };
  const auto result = finetune(model, corpus(2, 3, 6), {}, cfg, validator);
  CHECK(!same_values(model.params(), before, "encoder."));
  CHECK(same_values(model.params(), before, "head.pred."));
  REQUIRE(result.log.size() == 3);
  CHECK(result.log[0].phase == 1);
  CHECK(result.log[0].seq_len == 5);
  CHECK(result.log[1].phase == 2);
  CHECK(result.log[1].seq_len == 3);
  CHECK(result.log[2].seq_len == 5);
}

TEST_CASE("zero learning rate leaves pretraining inert") {
  const auto spec = fixtures::tiny_spec();
  StageModel model(fixtures::tiny_model(), spec);
  const ParamStore before = model.params();
  auto cfg = small_pretrain();
  cfg.lr = 0.0;
  cfg.epochs = 3;
  const auto result = pretrain(model, corpus(3, 4, 7), cfg);
  REQUIRE(result.log.size() == 3);
  CHECK(same_values(model.params(), before));
  CHECK(result.log[1].ssl == result.log[0].ssl);
  CHECK(result.log[2].ssl == result.log[0].ssl);
  CHECK(result.log[0].ssl == doctest::Approx(result.log[0].pred + result.log[0].ctr));
}

TEST_CASE("contrastive weight zero reduces the objective to prediction") {
  const auto spec = fixtures::tiny_spec();
  StageModel model(fixtures::tiny_model(), spec);
  auto cfg = small_pretrain();
  cfg.lambda_ctr = 0.0;
  const auto result = pretrain(model, corpus(3, 4, 7), cfg);
  for (const auto& e : result.log) CHECK(e.ssl == doctest::Approx(e.pred).epsilon(1e-12));
}

TEST_CASE("pretraining is reproducible and lowers the objective") {
  const auto spec = fixtures::tiny_spec();
  const auto data = corpus(4, 6, 10);
  auto cfg = small_pretrain();
  cfg.epochs = 15;
  StageModel a(fixtures::tiny_model(), spec);
  StageModel b(fixtures::tiny_model(), spec);
  const auto ra = pretrain(a, data, cfg);
  const auto rb = pretrain(b, data, cfg);
  CHECK(same_values(a.params(), b.params()));
  CHECK(to_csv(ra.log) == to_csv(rb.log));
  CHECK(ra.log.back().ssl < ra.log.front().ssl);
  CHECK(to_csv(ra.log).rfind("epoch,l_pred,l_ctr,l_ssl\n", 0) == 0);
}

TEST_CASE("frozen-encoder pretraining leaves the encoder alone") {
  const auto spec = fixtures::tiny_spec();
  StageModel model(fixtures::tiny_model(), spec);
  const ParamStore before = model.params();
  auto cfg = small_pretrain();
  cfg.train_encoder = false;
  pretrain(model, corpus(3, 4, 7), cfg);
  CHECK(same_values(model.params(), before, "encoder."));
  CHECK(same_values(model.params(), before, "proj."));
  CHECK(!same_values(model.params(), before, "lstm."));
  CHECK(same_values(model.params(), before, "head.stage."));
}

TEST_CASE("sequence chunking") {
  const auto data = corpus(5, 2, 11);
  const auto seqs = pretraining_sequences(data, 5);
  // 11 = 5 + 5 + 1, and single-window tails are dropped.
  REQUIRE(seqs.size() == 4);
  for (const auto& s : seqs) CHECK(s.length() == 5);
  CHECK(pretraining_sequences(corpus(5, 1, 7), 5).back().length() == 2);
}

TEST_CASE("self-supervised objective gradients match finite differences") {
  const auto spec = fixtures::tiny_spec();
  StageModel model(fixtures::tiny_model(6), spec);
  const auto data = corpus(6, 2, 4);
  std::vector<SequenceInput> batch;
  for (const auto& t : data) batch.push_back({t.window_ptrs(), nullptr});
  auto cfg = small_pretrain();
  cfg.lambda_pred = 0.7;
  auto& store = model.params();
  store.zero_grad();
  ssl_objective(model, batch, cfg, 99, Mode::train, 5, true);
  auto loss = [&](const ParamStore&) { return ssl_objective(model, batch, cfg, 99, Mode::train, 5, false).total; };
  CHECK(finite_diff_check(loss, store, 1e-4, 600) < 1e-4);
}

TEST_CASE("supervised objective gradients match finite differences") {
  const auto spec = fixtures::tiny_spec();
  StageModel model(fixtures::tiny_model(8), spec);
  const auto data = corpus(7, 1, 5);
  const SequenceInput in{data[0].window_ptrs(), nullptr};
  const Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(kNumStages, 0.5, 2.0);
  auto& store = model.params();
  store.zero_grad();
  supervised_objective(model, in, data[0].labels, w, 1e-8, Mode::train, 3, 1.0);
  auto loss = [&](const ParamStore&) {
    return supervised_objective(model, in, data[0].labels, w, 1e-8, Mode::train, 3, 0.0);
  };
  CHECK(finite_diff_check(loss, store, 1e-4, 600) < 1e-4);
}

TEST_CASE("configuration validation") {
  auto p = small_pretrain();
  p.tau = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  auto f = small_finetune();
  f.batch = 0;
  CHECK_THROWS_AS(f.validate(), ConfigError);
  f = small_finetune();
  f.phase2_epochs = 0;
  CHECK_THROWS_AS(f.validate(), ConfigError);
}
