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

// Encoder plus estimator sharing one parameter store.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "stagefinder/encoder.hpp"
#include "stagefinder/estimator.hpp"
#include "stagefinder/features.hpp"
#include "stagefinder/nn.hpp"

namespace stagefinder {

struct ModelConfig {
  int d_h = 64;
  int d_g = 64;
  int gnn_layers = 3;
  int hidden = 128;
  int lstm_layers = 2;
  double dropout = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);
};

class StageModel {
 public:
  StageModel(const ModelConfig& cfg, const FeatureSpec& spec);
  /// Adopts the parameters of a checkpoint; refuses a feature spec mismatch.
  StageModel(const ModelConfig& cfg, const FeatureSpec& spec, const Checkpoint& ckpt);

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const GraphEncoder& encoder() const { return encoder_; }
  const StageEstimator& estimator() const { return estimator_; }
  const ModelConfig& config() const { return cfg_; }
  const FeatureSpec& feature_spec() const { return spec_; }

  /// Window embeddings as columns (d_g x T). caches, when given, is resized to T.
  Eigen::MatrixXd encode_sequence(const std::vector<const GraphTensors*>& windows,
                                  std::vector<GraphEncoder::Cache>* caches = nullptr) const;

  /// Eval-mode stage probabilities (7 x T).
  Eigen::MatrixXd predict(const std::vector<const GraphTensors*>& windows) const;

  Checkpoint to_checkpoint(const std::map<std::string, std::string>& metadata = {}) const;

 private:
  ModelConfig cfg_;
  FeatureSpec spec_;
  ParamStore params_;
  GraphEncoder encoder_;
  StageEstimator estimator_;
};

EncoderConfig encoder_config(const ModelConfig& cfg, const FeatureLayout& layout);
EstimatorConfig estimator_config(const ModelConfig& cfg);

}  // namespace stagefinder
