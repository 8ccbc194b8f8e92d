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

#include "stagefinder/encoder.hpp"

#include "stagefinder/ops.hpp"

namespace stagefinder {

Eigen::MatrixXd message_passing_layer(const Topology& topology, const Eigen::MatrixXd& states,
                                      const Eigen::MatrixXd& edge_states, const RelationWeights& weights,
                                      Activation activation, LayerCache* cache) {
  const Eigen::Index d_h = states.cols();
  if (states.rows() != topology.num_nodes || edge_states.rows() != topology.num_edges() ||
      edge_states.cols() != d_h) {
    throw DimensionError("message passing inputs do not match the topology");
  }
  Eigen::MatrixXd pre = Eigen::MatrixXd::Zero(states.rows(), d_h);
  for (int r = 0; r < kNumRelations; ++r) {
    const auto& edges = topology.edges_by_relation[static_cast<std::size_t>(r)];
    if (edges.empty()) continue;
    const Eigen::MatrixXd* w = weights[static_cast<std::size_t>(r)];
    if (w == nullptr) {
      throw ConfigError("no weight for relation '" + std::string(to_string(static_cast<Relation>(r))) + "'");
    }
    if (w->rows() != d_h || w->cols() != 2 * d_h) throw DimensionError("relation weight has the wrong shape");
    Eigen::MatrixXd input(static_cast<Eigen::Index>(edges.size()), 2 * d_h);
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const auto e = static_cast<std::size_t>(edges[k]);
      input.row(static_cast<Eigen::Index>(k)) << states.row(topology.src[e]), edge_states.row(edges[k]);
    }
    const Eigen::MatrixXd messages = input * w->transpose();
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const auto e = static_cast<std::size_t>(edges[k]);
      pre.row(topology.dst[e]) += topology.inv_degree[e] * messages.row(static_cast<Eigen::Index>(k));
    }
    if (cache) cache->inputs[static_cast<std::size_t>(r)] = std::move(input);
  }
  Eigen::MatrixXd out = activation == Activation::relu ? Eigen::MatrixXd(pre.cwiseMax(0.0)) : pre;
  if (cache) cache->pre_activation = std::move(pre);
  return out;
}

void message_passing_backward(const Topology& topology, const RelationWeights& weights, const LayerCache& cache,
                              const Eigen::MatrixXd& d_output, Activation activation, Eigen::MatrixXd& d_states,
                              Eigen::MatrixXd& d_edge_states, const RelationGrads& weight_grads) {
  const Eigen::Index d_h = d_output.cols();
  Eigen::MatrixXd d_pre = d_output;
  if (activation == Activation::relu) {
    d_pre = (cache.pre_activation.array() > 0.0).select(d_output, 0.0);
  }
  for (int r = 0; r < kNumRelations; ++r) {
    const auto& edges = topology.edges_by_relation[static_cast<std::size_t>(r)];
    if (edges.empty()) continue;
    const Eigen::MatrixXd& w = *weights[static_cast<std::size_t>(r)];
    Eigen::MatrixXd d_messages(static_cast<Eigen::Index>(edges.size()), d_h);
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const auto e = static_cast<std::size_t>(edges[k]);
      d_messages.row(static_cast<Eigen::Index>(k)) = topology.inv_degree[e] * d_pre.row(topology.dst[e]);
    }
    const auto& input = cache.inputs[static_cast<std::size_t>(r)];
    if (Eigen::MatrixXd* g = weight_grads[static_cast<std::size_t>(r)]) g->noalias() += d_messages.transpose() * input;
    const Eigen::MatrixXd d_input = d_messages * w;
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const auto e = static_cast<std::size_t>(edges[k]);
      const auto row = static_cast<Eigen::Index>(k);
      d_states.row(topology.src[e]) += d_input.row(row).head(d_h);
      d_edge_states.row(edges[k]) += d_input.row(row).tail(d_h);
    }
  }
}

ReadoutResult attention_readout(const Eigen::MatrixXd& states, const Eigen::VectorXd& query,
                                const Eigen::MatrixXd& w_g) {
  ReadoutResult out;
  if (states.rows() == 0) {
    out.embedding = Eigen::VectorXd::Zero(w_g.rows());
    out.attention.resize(0);
    out.pooled = Eigen::VectorXd::Zero(states.cols());
    return out;
  }
  const Eigen::VectorXd scores = states * query;
  out.attention = softmax(scores);
  out.pooled = states.transpose() * out.attention;
  out.embedding = w_g * out.pooled;
  return out;
}

void attention_readout_backward(const Eigen::MatrixXd& states, const Eigen::VectorXd& query,
                                const Eigen::MatrixXd& w_g, const ReadoutResult& forward,
                                const Eigen::VectorXd& d_embedding, Eigen::MatrixXd& d_states,
                                Eigen::MatrixXd& d_query, Eigen::MatrixXd& d_w_g) {
  if (states.rows() == 0) return;
  d_w_g.noalias() += d_embedding * forward.pooled.transpose();
  const Eigen::VectorXd d_pooled = w_g.transpose() * d_embedding;
  // pooled = H^T alpha
  d_states.noalias() += forward.attention * d_pooled.transpose();
  const Eigen::VectorXd d_alpha = states * d_pooled;
  const Eigen::VectorXd d_scores = softmax_backward(forward.attention, d_alpha);
  d_states.noalias() += d_scores * query.transpose();
  d_query.noalias() += states.transpose() * d_scores;
}

void append_encoder_params(std::vector<ParamSpec>& specs, const EncoderConfig& cfg) {
  if (cfg.d_x <= 0 || cfg.d_e <= 0 || cfg.d_h <= 0 || cfg.d_g <= 0 || cfg.layers <= 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
  specs.push_back({"proj.w_x", cfg.d_h, cfg.d_x});
  specs.push_back({"proj.b_x", cfg.d_h, 1, Init::zeros});
  specs.push_back({"proj.w_z", cfg.d_h, cfg.d_e});
  specs.push_back({"proj.b_z", cfg.d_h, 1, Init::zeros});
  for (int l = 0; l < cfg.layers; ++l) {
    for (int r = 0; r < kNumRelations; ++r) {
      specs.push_back({"encoder.l" + std::to_string(l) + "." + std::string(to_string(static_cast<Relation>(r))),
                       cfg.d_h, 2 * cfg.d_h});
    }
  }
  specs.push_back({"readout.query", cfg.d_h, 1});
  specs.push_back({"readout.w_g", cfg.d_g, cfg.d_h});
}

GraphEncoder::GraphEncoder(const ParamStore& store, const EncoderConfig& cfg) : cfg_(cfg) {
  w_x_ = store.index("proj.w_x");
  b_x_ = store.index("proj.b_x");
  w_z_ = store.index("proj.w_z");
  b_z_ = store.index("proj.b_z");
  query_ = store.index("readout.query");
  w_g_ = store.index("readout.w_g");
  for (int l = 0; l < cfg.layers; ++l) {
    std::array<std::size_t, kNumRelations> ids{};
    for (int r = 0; r < kNumRelations; ++r) {
      ids[static_cast<std::size_t>(r)] =
          store.index("encoder.l" + std::to_string(l) + "." + std::string(to_string(static_cast<Relation>(r))));
    }
    relation_.push_back(ids);
  }
}

RelationWeights GraphEncoder::layer_weights(const ParamStore& store, int layer) const {
  RelationWeights w{};
  for (int r = 0; r < kNumRelations; ++r) {
    w[static_cast<std::size_t>(r)] =
        &store[relation_[static_cast<std::size_t>(layer)][static_cast<std::size_t>(r)]].value;
  }
  return w;
}

EncodeResult GraphEncoder::encode(const GraphTensors& graph, const ParamStore& store, Cache* cache) const {
  FeaturizedGraph projected =
      project(graph, store[w_x_].value, store[b_x_].value, store[w_z_].value, store[b_z_].value);
  const Topology& topo = *graph.topology;
  Eigen::MatrixXd h = projected.node_states;
  if (cache) {
    cache->states.clear();
    cache->layers.assign(static_cast<std::size_t>(cfg_.layers), LayerCache{});
  }
  for (int l = 0; l < cfg_.layers; ++l) {
    if (cache) cache->states.push_back(h);
    h = message_passing_layer(topo, h, projected.edge_states, layer_weights(store, l), Activation::relu,
                              cache ? &cache->layers[static_cast<std::size_t>(l)] : nullptr);
  }
  ReadoutResult readout = attention_readout(h, store[query_].value.col(0), store[w_g_].value);
  EncodeResult out{readout.embedding, readout.attention, h};
  if (cache) {
    cache->states.push_back(std::move(h));
    cache->readout = std::move(readout);
    cache->projected = std::move(projected);
  }
  return out;
}

void GraphEncoder::backward(const GraphTensors& graph, const Cache& cache, const Eigen::VectorXd& d_embedding,
                            ParamStore& store) const {
  const Topology& topo = *graph.topology;
  if (topo.num_nodes == 0) return;
  Eigen::MatrixXd d_h = Eigen::MatrixXd::Zero(topo.num_nodes, cfg_.d_h);
  attention_readout_backward(cache.states.back(), store[query_].value.col(0), store[w_g_].value, cache.readout,
                             d_embedding, d_h, store[query_].grad, store[w_g_].grad);
  Eigen::MatrixXd d_edges = Eigen::MatrixXd::Zero(topo.num_edges(), cfg_.d_h);
  for (int l = cfg_.layers - 1; l >= 0; --l) {
    RelationGrads grads{};
    for (int r = 0; r < kNumRelations; ++r) {
      grads[static_cast<std::size_t>(r)] =
          &store[relation_[static_cast<std::size_t>(l)][static_cast<std::size_t>(r)]].grad;
    }
    Eigen::MatrixXd d_prev = Eigen::MatrixXd::Zero(topo.num_nodes, cfg_.d_h);
    message_passing_backward(topo, layer_weights(store, l), cache.layers[static_cast<std::size_t>(l)], d_h,
                             Activation::relu, d_prev, d_edges, grads);
    d_h = std::move(d_prev);
  }
  // Projection: x~ = X W_x^T + b_x.
  store[w_x_].grad.noalias() += d_h.transpose() * graph.node_features;
  store[b_x_].grad += d_h.colwise().sum().transpose();
  if (topo.num_edges() > 0) {
    store[w_z_].grad.noalias() += d_edges.transpose() * graph.edge_features;
    store[b_z_].grad += d_edges.colwise().sum().transpose();
  }
}

}  // namespace stagefinder
