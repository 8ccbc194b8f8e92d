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

#include "stagefinder/model.hpp"

#include "json.hpp"

namespace stagefinder {

void ModelConfig::validate() const {
  if (d_h <= 0 || d_g <= 0 || gnn_layers <= 0 || hidden <= 0 || lstm_layers <= 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json doc{{"d_h", d_h},         {"d_g", d_g},           {"gnn_layers", gnn_layers},
                             {"hidden", hidden},   {"lstm_layers", lstm_layers}, {"dropout", dropout},
                             {"seed", seed}};
  return doc.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.d_h = doc.at("d_h").get<int>();
    cfg.d_g = doc.at("d_g").get<int>();
    cfg.gnn_layers = doc.at("gnn_layers").get<int>();
    cfg.hidden = doc.at("hidden").get<int>();
    cfg.lstm_layers = doc.at("lstm_layers").get<int>();
    cfg.dropout = doc.at("dropout").get<double>();
    cfg.seed = doc.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
}

EncoderConfig encoder_config(const ModelConfig& cfg, const FeatureLayout& layout) {
  return {layout.node_width(), layout.edge_width(), cfg.d_h, cfg.d_g, cfg.gnn_layers};
}

EstimatorConfig estimator_config(const ModelConfig& cfg) {
  return {cfg.d_g, cfg.hidden, cfg.lstm_layers, cfg.dropout, kNumStages};
}

namespace {

ParamStore fresh_params(const ModelConfig& cfg, const FeatureSpec& spec) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  append_encoder_params(specs, encoder_config(cfg, spec.layout));
  append_estimator_params(specs, estimator_config(cfg));
  ParamStore store = init_params(specs, cfg.seed);
  init_forget_bias(store, estimator_config(cfg));
  return store;
}

}  // namespace

StageModel::StageModel(const ModelConfig& cfg, const FeatureSpec& spec)
    : cfg_(cfg), spec_(spec), params_(fresh_params(cfg, spec)) {
  encoder_ = GraphEncoder(params_, encoder_config(cfg_, spec_.layout));
  estimator_ = StageEstimator(params_, estimator_config(cfg_));
}

StageModel::StageModel(const ModelConfig& cfg, const FeatureSpec& spec, const Checkpoint& ckpt)
    : StageModel(cfg, spec) {
  if (ckpt.feature_spec_hash != hex64(spec.hash())) {
    throw CompatibilityError("checkpoint was trained against a different feature spec");
  }
  if (ckpt.params.size() != params_.size()) throw CompatibilityError("checkpoint parameter count differs");
  for (auto& p : params_) {
    if (!ckpt.params.contains(p.name)) throw CompatibilityError("checkpoint lacks parameter " + p.name);
    const auto& src = ckpt.params[p.name];
    if (src.value.rows() != p.value.rows() || src.value.cols() != p.value.cols()) {
      throw CompatibilityError("checkpoint shape differs for " + p.name);
    }
    p.value = src.value;
    p.trainable = src.trainable;
  }
  params_.rng_seed = ckpt.params.rng_seed;
}

Eigen::MatrixXd StageModel::encode_sequence(const std::vector<const GraphTensors*>& windows,
                                            std::vector<GraphEncoder::Cache>* caches) const {
  Eigen::MatrixXd out(cfg_.d_g, static_cast<Eigen::Index>(windows.size()));
  if (caches) caches->assign(windows.size(), GraphEncoder::Cache{});
  for (std::size_t t = 0; t < windows.size(); ++t) {
    out.col(static_cast<Eigen::Index>(t)) =
        encoder_.encode(*windows[t], params_, caches ? &(*caches)[t] : nullptr).embedding;
  }
  return out;
}

Eigen::MatrixXd StageModel::predict(const std::vector<const GraphTensors*>& windows) const {
  const Eigen::MatrixXd g = encode_sequence(windows);
  const auto rec = estimator_.recurrent_forward(g, params_, Mode::eval);
  return estimator_.classify(rec.hidden, params_);
}

Checkpoint StageModel::to_checkpoint(const std::map<std::string, std::string>& metadata) const {
  Checkpoint ckpt;
  ckpt.params = params_;
  for (auto& p : ckpt.params) p.grad.setZero();
  ckpt.feature_spec_hash = hex64(spec_.hash());
  ckpt.config_hash = hex64(fnv1a(cfg_.to_json()));
  ckpt.metadata = metadata;
  ckpt.metadata["model_config"] = cfg_.to_json();
  return ckpt;
}

}  // namespace stagefinder
