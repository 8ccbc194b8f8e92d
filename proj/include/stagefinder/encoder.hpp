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

// Relation-typed message passing and the attention readout.

#pragma once

#include <Eigen/Dense>
#include <array>
#include <vector>

#include "stagefinder/features.hpp"
#include "stagefinder/nn.hpp"

namespace stagefinder {

enum class Activation { relu, identity };

/// One weight matrix (d_h x 2 d_h) per relation; null entries mean "absent".
using RelationWeights = std::array<const Eigen::MatrixXd*, kNumRelations>;
using RelationGrads = std::array<Eigen::MatrixXd*, kNumRelations>;

struct LayerCache {
  Eigen::MatrixXd pre_activation;                         // |V| x d_h
  std::array<Eigen::MatrixXd, kNumRelations> inputs;     // per relation: |E_r| x 2 d_h rows [h_src | z]
};

/// h'_i = act( sum_r sum_{j -> i under r} (1 / c_{i,r}) W_r [h_j | z_ji] ).
/// Messages flow along edge direction; c_{i,r} is the in-neighbor count.
Eigen::MatrixXd message_passing_layer(const Topology& topology, const Eigen::MatrixXd& states,
                                      const Eigen::MatrixXd& edge_states, const RelationWeights& weights,
                                      Activation activation = Activation::relu, LayerCache* cache = nullptr);

/// Accumulates into d_states, d_edge_states and every non-null weight gradient.
void message_passing_backward(const Topology& topology, const RelationWeights& weights, const LayerCache& cache,
                              const Eigen::MatrixXd& d_output, Activation activation, Eigen::MatrixXd& d_states,
                              Eigen::MatrixXd& d_edge_states, const RelationGrads& weight_grads);

struct ReadoutResult {
  Eigen::VectorXd embedding;  // d_g
  Eigen::VectorXd attention;  // one weight per node, sums to 1
  Eigen::VectorXd pooled;     // d_h
};

/// alpha = softmax(H a), pooled = H^T alpha, g = W_g pooled. Empty H gives g = 0.
ReadoutResult attention_readout(const Eigen::MatrixXd& states, const Eigen::VectorXd& query,
                                const Eigen::MatrixXd& w_g);

void attention_readout_backward(const Eigen::MatrixXd& states, const Eigen::VectorXd& query,
                                const Eigen::MatrixXd& w_g, const ReadoutResult& forward,
                                const Eigen::VectorXd& d_embedding, Eigen::MatrixXd& d_states,
                                Eigen::MatrixXd& d_query, Eigen::MatrixXd& d_w_g);

struct EncoderConfig {
  int d_x = 0;
  int d_e = 0;
  int d_h = 64;
  int d_g = 64;
  int layers = 3;
};

/// Parameter names: proj.{w_x,b_x,w_z,b_z}, encoder.l<k>.<relation>,
/// readout.{query,w_g}.
void append_encoder_params(std::vector<ParamSpec>& specs, const EncoderConfig& cfg);

struct EncodeResult {
  Eigen::VectorXd embedding;
  Eigen::VectorXd attention;
  Eigen::MatrixXd node_states;  // final layer
};

class GraphEncoder {
 public:
  GraphEncoder() = default;
  GraphEncoder(const ParamStore& store, const EncoderConfig& cfg);

  struct Cache {
    FeaturizedGraph projected;
    std::vector<Eigen::MatrixXd> states;  // layer inputs h^(0..L)
    std::vector<LayerCache> layers;
    ReadoutResult readout;
  };

  EncodeResult encode(const GraphTensors& graph, const ParamStore& store, Cache* cache = nullptr) const;

  /// Backpropagates d_embedding into the store's gradients.
  void backward(const GraphTensors& graph, const Cache& cache, const Eigen::VectorXd& d_embedding,
                ParamStore& store) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  RelationWeights layer_weights(const ParamStore& store, int layer) const;

  EncoderConfig cfg_;
  std::size_t w_x_ = 0, b_x_ = 0, w_z_ = 0, b_z_ = 0, query_ = 0, w_g_ = 0;
  std::vector<std::array<std::size_t, kNumRelations>> relation_;
};

}  // namespace stagefinder
