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

// Stacked LSTM over window embeddings with the stage softmax head and the
// next-embedding prediction head.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "stagefinder/nn.hpp"

namespace stagefinder {

enum class Mode { train, eval };

struct EstimatorConfig {
  int input = 64;   // d_g
  int hidden = 128;
  int layers = 2;
  double dropout = 0.3;  // between recurrent layers, train mode only
  int classes = kNumStages;
};

/// Parameter names: lstm.l<k>.{w,u,b} with gate rows ordered
/// (input, forget, candidate, output), head.stage.{w,b}, head.pred.{w,b}.
/// Forget-gate biases start at 1.
void append_estimator_params(std::vector<ParamSpec>& specs, const EstimatorConfig& cfg);

/// Sets the forget-gate slice of every lstm.l<k>.b to 1.
void init_forget_bias(ParamStore& store, const EstimatorConfig& cfg);

/// Sequences are matrices with one column per time step.
class StageEstimator {
 public:
  StageEstimator() = default;
  StageEstimator(const ParamStore& store, const EstimatorConfig& cfg);

  struct LayerCache {
    Eigen::MatrixXd input;  // in x T (after dropout for upper layers)
    Eigen::MatrixXd gates;  // 4H x T, post-activation
    Eigen::MatrixXd cell;   // H x T
    Eigen::MatrixXd hidden; // H x T
    Eigen::MatrixXd mask;   // dropout mask applied to this layer's input (empty if none)
  };
  struct Cache {
    std::vector<LayerCache> layers;
  };

  struct Output {
    Eigen::MatrixXd hidden;  // top layer, H x T
    Eigen::MatrixXd cell;    // top layer, H x T
  };

  /// (h_t, c_t) = LSTM(g_t, h_{t-1}, c_{t-1}) with h_0 = c_0 = 0.
  Output recurrent_forward(const Eigen::MatrixXd& sequence, const ParamStore& store, Mode mode,
                           std::uint64_t dropout_seed = 0, Cache* cache = nullptr) const;

  /// Backpropagation through time. d_sequence (optional) receives dL/dg.
  void recurrent_backward(const Cache& cache, const Eigen::MatrixXd& d_hidden, ParamStore& store,
                          Eigen::MatrixXd* d_sequence) const;

  /// p_t = softmax(W_stage h_t + B_stage), one column per step.
  Eigen::MatrixXd classify(const Eigen::MatrixXd& hidden, const ParamStore& store) const;
  /// Accumulates head gradients; returns dL/dh.
  Eigen::MatrixXd classify_backward(const Eigen::MatrixXd& hidden, const Eigen::MatrixXd& d_logits,
                                    ParamStore& store) const;

  /// g^_{t+1} = W_o h_t + b_o.
  Eigen::MatrixXd predict_next(const Eigen::MatrixXd& hidden, const ParamStore& store) const;
  Eigen::MatrixXd predict_next_backward(const Eigen::MatrixXd& hidden, const Eigen::MatrixXd& d_prediction,
                                        ParamStore& store) const;

  const EstimatorConfig& config() const { return cfg_; }

 private:
  struct LayerIds {
    std::size_t w, u, b;
  };
  EstimatorConfig cfg_;
  std::vector<LayerIds> layers_;
  std::size_t stage_w_ = 0, stage_b_ = 0, pred_w_ = 0, pred_b_ = 0;
};

}  // namespace stagefinder
