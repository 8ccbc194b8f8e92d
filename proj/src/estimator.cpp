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

#include "stagefinder/estimator.hpp"

#include "stagefinder/ops.hpp"

namespace stagefinder {

void append_estimator_params(std::vector<ParamSpec>& specs, const EstimatorConfig& cfg) {
  if (cfg.input <= 0 || cfg.hidden <= 0 || cfg.layers <= 0 || cfg.classes <= 0) {
    throw ConfigError("estimator dimensions must be positive");
  }
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  const int h = cfg.hidden;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string prefix = "lstm.l" + std::to_string(l) + ".";
    specs.push_back({prefix + "w", 4 * h, l == 0 ? cfg.input : h});
    specs.push_back({prefix + "u", 4 * h, h});
    specs.push_back({prefix + "b", 4 * h, 1, Init::zeros});
  }
  specs.push_back({"head.stage.w", cfg.classes, h});
  specs.push_back({"head.stage.b", cfg.classes, 1, Init::zeros});
  specs.push_back({"head.pred.w", cfg.input, h});
  specs.push_back({"head.pred.b", cfg.input, 1, Init::zeros});
}

void init_forget_bias(ParamStore& store, const EstimatorConfig& cfg) {
  for (int l = 0; l < cfg.layers; ++l) {
    auto& b = store["lstm.l" + std::to_string(l) + ".b"].value;
    b.block(cfg.hidden, 0, cfg.hidden, 1).setOnes();
  }
}

StageEstimator::StageEstimator(const ParamStore& store, const EstimatorConfig& cfg) : cfg_(cfg) {
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string prefix = "lstm.l" + std::to_string(l) + ".";
    layers_.push_back({store.index(prefix + "w"), store.index(prefix + "u"), store.index(prefix + "b")});
  }
  stage_w_ = store.index("head.stage.w");
  stage_b_ = store.index("head.stage.b");
  pred_w_ = store.index("head.pred.w");
  pred_b_ = store.index("head.pred.b");
}

StageEstimator::Output StageEstimator::recurrent_forward(const Eigen::MatrixXd& sequence, const ParamStore& store,
                                                         Mode mode, std::uint64_t dropout_seed, Cache* cache) const {
  if (sequence.rows() != cfg_.input) throw DimensionError("sequence width does not match the estimator input");
  if (sequence.cols() < 1) throw DimensionError("sequence must have at least one step");
  const Eigen::Index H = cfg_.hidden;
  const Eigen::Index T = sequence.cols();
  Rng rng(dropout_seed);
  if (cache) cache->layers.assign(layers_.size(), LayerCache{});

  Eigen::MatrixXd input = sequence;
  Eigen::MatrixXd hidden, cell;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd mask;
    if (l > 0 && mode == Mode::train && cfg_.dropout > 0.0) {
      // Inverted dropout so eval mode needs no rescaling.
      mask.resize(input.rows(), input.cols());
      const double keep = 1.0 - cfg_.dropout;
      for (Eigen::Index j = 0; j < mask.cols(); ++j) {
        for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
      }
      input = input.cwiseProduct(mask);
    }
    const auto& W = store[layers_[l].w].value;
    const auto& U = store[layers_[l].u].value;
    const auto& b = store[layers_[l].b].value;
    Eigen::MatrixXd pre = W * input;
    pre.colwise() += b.col(0);
    Eigen::MatrixXd gates(4 * H, T);
    hidden.resize(H, T);
    cell.resize(H, T);
    Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd c_prev = Eigen::VectorXd::Zero(H);
    for (Eigen::Index t = 0; t < T; ++t) {
      Eigen::VectorXd a = pre.col(t) + U * h_prev;
      gates.col(t).segment(0, H) = sigmoid(a.segment(0, H));
      gates.col(t).segment(H, H) = sigmoid(a.segment(H, H));
      gates.col(t).segment(2 * H, H) = a.segment(2 * H, H).array().tanh().matrix();
      gates.col(t).segment(3 * H, H) = sigmoid(a.segment(3 * H, H));
      const auto i = gates.col(t).segment(0, H).array();
      const auto f = gates.col(t).segment(H, H).array();
      const auto g = gates.col(t).segment(2 * H, H).array();
      const auto o = gates.col(t).segment(3 * H, H).array();
      c_prev = (f * c_prev.array() + i * g).matrix();
      h_prev = (o * c_prev.array().tanh()).matrix();
      cell.col(t) = c_prev;
      hidden.col(t) = h_prev;
    }
    if (cache) {
      auto& lc = cache->layers[l];
      lc.input = input;
      lc.gates = std::move(gates);
      lc.cell = cell;
      lc.hidden = hidden;
      lc.mask = std::move(mask);
    }
    input = hidden;
  }
  return {hidden, cell};
}

void StageEstimator::recurrent_backward(const Cache& cache, const Eigen::MatrixXd& d_hidden, ParamStore& store,
                                        Eigen::MatrixXd* d_sequence) const {
  const Eigen::Index H = cfg_.hidden;
  Eigen::MatrixXd d_out = d_hidden;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const LayerCache& lc = cache.layers[li];
    const Eigen::Index T = lc.hidden.cols();
    const auto& W = store[layers_[li].w].value;
    const auto& U = store[layers_[li].u].value;
    Eigen::MatrixXd d_pre(4 * H, T);
    Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(H);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
      const auto i = lc.gates.col(t).segment(0, H).array();
      const auto f = lc.gates.col(t).segment(H, H).array();
      const auto g = lc.gates.col(t).segment(2 * H, H).array();
      const auto o = lc.gates.col(t).segment(3 * H, H).array();
      const Eigen::ArrayXd tc = lc.cell.col(t).array().tanh();
      const Eigen::ArrayXd c_prev = t > 0 ? Eigen::ArrayXd(lc.cell.col(t - 1).array()) : Eigen::ArrayXd::Zero(H);
      const Eigen::ArrayXd dh = d_out.col(t).array() + dh_next.array();
      const Eigen::ArrayXd dc = dh * o * (1.0 - tc.square()) + dc_next.array();
      d_pre.col(t).segment(0, H) = (dc * g * i * (1.0 - i)).matrix();
      d_pre.col(t).segment(H, H) = (dc * c_prev * f * (1.0 - f)).matrix();
      d_pre.col(t).segment(2 * H, H) = (dc * i * (1.0 - g.square())).matrix();
      d_pre.col(t).segment(3 * H, H) = (dh * tc * o * (1.0 - o)).matrix();
      dc_next = (dc * f).matrix();
      dh_next = U.transpose() * d_pre.col(t);
    }
    store[layers_[li].w].grad.noalias() += d_pre * lc.input.transpose();
    if (T > 1) store[layers_[li].u].grad.noalias() += d_pre.rightCols(T - 1) * lc.hidden.leftCols(T - 1).transpose();
    store[layers_[li].b].grad += d_pre.rowwise().sum();
    Eigen::MatrixXd d_input = W.transpose() * d_pre;
    if (lc.mask.size() > 0) d_input = d_input.cwiseProduct(lc.mask);
    if (li == 0) {
      if (d_sequence) *d_sequence = std::move(d_input);
    } else {
      d_out = std::move(d_input);
    }
  }
}

Eigen::MatrixXd StageEstimator::classify(const Eigen::MatrixXd& hidden, const ParamStore& store) const {
  Eigen::MatrixXd logits = store[stage_w_].value * hidden;
  logits.colwise() += store[stage_b_].value.col(0);
  return softmax(logits);
}

Eigen::MatrixXd StageEstimator::classify_backward(const Eigen::MatrixXd& hidden, const Eigen::MatrixXd& d_logits,
                                                  ParamStore& store) const {
  store[stage_w_].grad.noalias() += d_logits * hidden.transpose();
  store[stage_b_].grad += d_logits.rowwise().sum();
  return store[stage_w_].value.transpose() * d_logits;
}

Eigen::MatrixXd StageEstimator::predict_next(const Eigen::MatrixXd& hidden, const ParamStore& store) const {
  Eigen::MatrixXd out = store[pred_w_].value * hidden;
  out.colwise() += store[pred_b_].value.col(0);
  return out;
}

Eigen::MatrixXd StageEstimator::predict_next_backward(const Eigen::MatrixXd& hidden,
                                                      const Eigen::MatrixXd& d_prediction, ParamStore& store) const {
  store[pred_w_].grad.noalias() += d_prediction * hidden.transpose();
  store[pred_b_].grad += d_prediction.rowwise().sum();
  return store[pred_w_].value.transpose() * d_prediction;
}

}  // namespace stagefinder
