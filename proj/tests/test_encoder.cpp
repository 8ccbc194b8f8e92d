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

#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "stagefinder/encoder.hpp"

using namespace stagefinder;

namespace {

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int r, int c) {
  std::uniform_real_distribution<double> u(-1, 1);
  return Eigen::MatrixXd::NullaryExpr(r, c, [&] { return u(rng); });
}

std::vector<oracle::Edge> oracle_edges(const Topology& t) {
  std::vector<oracle::Edge> out;
  for (int e = 0; e < t.num_edges(); ++e) {
    out.push_back({t.src[static_cast<std::size_t>(e)], t.dst[static_cast<std::size_t>(e)],
                   static_cast<int>(t.relation[static_cast<std::size_t>(e)])});
  }
  return out;
}

EncoderConfig tiny_encoder() {
  const auto layout = fixtures::tiny_layout();
  EncoderConfig cfg;
  cfg.d_x = layout.node_width();
  cfg.d_e = layout.edge_width();
  cfg.d_h = 4;
  cfg.d_g = 3;
  cfg.layers = 2;
  return cfg;
}

ParamStore encoder_store(const EncoderConfig& cfg, std::uint64_t seed) {
  std::vector<ParamSpec> specs;
  append_encoder_params(specs, cfg);
  auto store = init_params(specs, seed);
  // Nonzero biases so every path is exercised.
  std::mt19937_64 rng(seed);
  for (auto& p : store) {
    if (p.value.cols() == 1) p.value = random_matrix(rng, static_cast<int>(p.value.rows()), 1);
  }
  return store;
}

}  // namespace

TEST_CASE("message passing matches the scalar oracle") {
  std::mt19937_64 rng(21);
  const auto layout = fixtures::tiny_layout();
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 6);
    const auto g = fixtures::random_window(rng, n, static_cast<int>(rng() % 9), layout);
    const int d = 3;
    const Eigen::MatrixXd h = random_matrix(rng, n, d);
    const Eigen::MatrixXd z = random_matrix(rng, g.topology->num_edges(), d);
    std::vector<Eigen::MatrixXd> w;
    RelationWeights ptrs{};
    for (int r = 0; r < kNumRelations; ++r) w.push_back(random_matrix(rng, d, 2 * d));
    for (int r = 0; r < kNumRelations; ++r) ptrs[static_cast<std::size_t>(r)] = &w[static_cast<std::size_t>(r)];
    for (bool relu : {true, false}) {
      const auto got = message_passing_layer(*g.topology, h, z, ptrs, relu ? Activation::relu : Activation::identity);
      const auto want = oracle::message_passing(n, oracle_edges(*g.topology), h, z, w, relu);
      CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("isolated node keeps only its self loop message") {
  const auto topo = Topology::from_edges(2, {0, 1, 0}, {0, 1, 1}, {Relation::self_loop, Relation::self_loop,
                                                                    Relation::spawn});
  Eigen::MatrixXd h(2, 1);
  h << 2.0, -1.0;
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(3, 1);
  std::vector<Eigen::MatrixXd> w(kNumRelations, Eigen::MatrixXd::Zero(1, 2));
  w[static_cast<int>(Relation::self_loop)] << 1.0, 0.0;
  w[static_cast<int>(Relation::spawn)] << 10.0, 0.0;
  RelationWeights ptrs{};
  for (int r = 0; r < kNumRelations; ++r) ptrs[static_cast<std::size_t>(r)] = &w[static_cast<std::size_t>(r)];
  const auto out = message_passing_layer(topo, h, z, ptrs, Activation::identity);
  CHECK(out(0, 0) == 2.0);
  CHECK(out(1, 0) == -1.0 + 20.0);
  CHECK(topo.inv_degree[2] == 1.0);
}

TEST_CASE("attention readout") {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd h = random_matrix(rng, 5, 3);
  const Eigen::VectorXd a = random_matrix(rng, 3, 1).col(0);
  const Eigen::MatrixXd wg = random_matrix(rng, 2, 3);
  const auto r = attention_readout(h, a, wg);
  CHECK(r.attention.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((r.attention.array() > 0).all());
  std::vector<double> scores(5);
  for (int i = 0; i < 5; ++i) scores[static_cast<std::size_t>(i)] = h.row(i).dot(a);
  const auto alpha = oracle::softmax(scores);
  for (int i = 0; i < 5; ++i) CHECK(r.attention(i) == doctest::Approx(alpha[static_cast<std::size_t>(i)]).epsilon(1e-12));
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(3);
  for (int i = 0; i < 5; ++i) pooled += alpha[static_cast<std::size_t>(i)] * h.row(i).transpose();
  CHECK((r.embedding - wg * pooled).cwiseAbs().maxCoeff() < 1e-12);
  const auto empty = attention_readout(Eigen::MatrixXd(0, 3), a, wg);
  CHECK(empty.embedding.isZero());
  CHECK(empty.embedding.size() == 2);
}

TEST_CASE("graph embedding is invariant to node order") {
  const auto cfg = tiny_encoder();
  const auto store = encoder_store(cfg, 8);
  const GraphEncoder enc(store, cfg);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 6;
    const auto g = fixtures::random_window(rng, n, 9, fixtures::tiny_layout());
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);  // new id of old node i is perm[i]
    GraphTensors p = g;
    Eigen::MatrixXd x(g.node_features);
    Eigen::MatrixXd px(x.rows(), x.cols());
    for (int i = 0; i < n; ++i) px.row(perm[static_cast<std::size_t>(i)]) = x.row(i);
    p.node_features = px.sparseView();
    auto src = g.topology->src, dst = g.topology->dst;
    for (auto& s : src) s = perm[static_cast<std::size_t>(s)];
    for (auto& d : dst) d = perm[static_cast<std::size_t>(d)];
    p.topology = std::make_shared<const Topology>(Topology::from_edges(n, src, dst, g.topology->relation));
    const auto a = enc.encode(g, store);
    const auto b = enc.encode(p, store);
    CHECK((a.embedding - b.embedding).cwiseAbs().maxCoeff() < 1e-12);
    for (int i = 0; i < n; ++i) CHECK(std::abs(a.attention(i) - b.attention(perm[static_cast<std::size_t>(i)])) < 1e-12);
  }
}

TEST_CASE("encoder gradients match finite differences") {
  const auto cfg = tiny_encoder();
  auto store = encoder_store(cfg, 5);
  const GraphEncoder enc(store, cfg);
  std::mt19937_64 rng(17);
  const auto g = fixtures::random_window(rng, 5, 8, fixtures::tiny_layout());
  const Eigen::VectorXd c = random_matrix(rng, cfg.d_g, 1).col(0);
  auto loss = [&](const ParamStore& s) { return c.dot(enc.encode(g, s).embedding); };
  GraphEncoder::Cache cache;
  enc.encode(g, store, &cache);
  store.zero_grad();
  enc.backward(g, cache, c, store);
  CHECK(finite_diff_check(loss, store, 1e-5, 2000) < 1e-5);
}

TEST_CASE("empty graph encodes to zero") {
  const auto cfg = tiny_encoder();
  const auto store = encoder_store(cfg, 5);
  const GraphEncoder enc(store, cfg);
  GraphTensors g;
  g.node_features = SparseRows(0, cfg.d_x);
  g.edge_features = SparseRows(0, cfg.d_e);
  g.topology = std::make_shared<const Topology>(Topology::from_edges(0, {}, {}, {}));
  const auto r = enc.encode(g, store);
  CHECK(r.embedding.isZero());
  CHECK(r.embedding.size() == cfg.d_g);
}
