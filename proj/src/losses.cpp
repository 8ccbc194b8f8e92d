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

#include "stagefinder/losses.hpp"

#include <cmath>

#include "stagefinder/common.hpp"
#include "stagefinder/ops.hpp"

namespace stagefinder {

double loss_pred(const Eigen::MatrixXd& sequence, const Eigen::MatrixXd& predictions, Eigen::MatrixXd* d_predictions,
                 Eigen::MatrixXd* d_sequence) {
  const Eigen::Index T = sequence.cols();
  if (T < 2) throw InputError("next-step loss needs at least two steps");
  if (predictions.rows() != sequence.rows() || predictions.cols() != T) {
    throw DimensionError("prediction shape does not match the sequence");
  }
  const Eigen::MatrixXd diff = predictions.leftCols(T - 1) - sequence.rightCols(T - 1);
  const double scale = 1.0 / static_cast<double>(T - 1);
  if (d_predictions) {
    d_predictions->setZero(predictions.rows(), T);
    d_predictions->leftCols(T - 1) = 2.0 * scale * diff;
  }
  if (d_sequence) {
    d_sequence->setZero(sequence.rows(), T);
    d_sequence->rightCols(T - 1) = -2.0 * scale * diff;
  }
  return scale * diff.squaredNorm();
}

double loss_contrastive(const Eigen::MatrixXd& anchors, const Eigen::MatrixXd& positives, const Eigen::MatrixXd& pool,
                        const std::vector<std::vector<int>>& negatives, double tau, ContrastiveGrads* grads) {
  if (tau <= 0.0) throw ConfigError("temperature must be positive");
  const Eigen::Index M = anchors.cols();
  if (M == 0) throw InputError("contrastive loss needs at least one anchor");
  if (positives.cols() != M || positives.rows() != anchors.rows() || pool.rows() != anchors.rows() ||
      static_cast<Eigen::Index>(negatives.size()) != M) {
    throw DimensionError("contrastive inputs disagree in shape");
  }
  if (grads) {
    grads->anchors.setZero(anchors.rows(), M);
    grads->positives.setZero(positives.rows(), M);
    grads->pool.setZero(pool.rows(), pool.cols());
  }
  const double inv_m = 1.0 / static_cast<double>(M);
  double total = 0.0;
  for (Eigen::Index j = 0; j < M; ++j) {
    const auto& neg = negatives[static_cast<std::size_t>(j)];
    Eigen::VectorXd logits(static_cast<Eigen::Index>(neg.size()) + 1);
    const auto a = anchors.col(j);
    logits(0) = cosine_similarity(a, positives.col(j)) / tau;
    for (std::size_t n = 0; n < neg.size(); ++n) {
      if (neg[n] < 0 || neg[n] >= pool.cols()) throw InputError("negative index out of range");
      logits(static_cast<Eigen::Index>(n) + 1) = cosine_similarity(a, pool.col(neg[n])) / tau;
    }
    total += log_sum_exp(logits) - logits(0);
    if (!grads) continue;
    Eigen::VectorXd d_logits = softmax(logits);
    d_logits(0) -= 1.0;
    d_logits *= inv_m / tau;
    cosine_similarity_backward(a, positives.col(j), d_logits(0), grads->anchors.col(j), grads->positives.col(j));
    for (std::size_t n = 0; n < neg.size(); ++n) {
      cosine_similarity_backward(a, pool.col(neg[n]), d_logits(static_cast<Eigen::Index>(n) + 1),
                                 grads->anchors.col(j), grads->pool.col(neg[n]));
    }
  }
  return total * inv_m;
}

double loss_supervised(const Eigen::MatrixXd& probs, const std::vector<int>& labels, const Eigen::VectorXd& weights,
                       double eps, Eigen::MatrixXd* d_probs) {
  const Eigen::Index T = probs.cols();
  if (T == 0) throw InputError("supervised loss needs at least one step");
  if (static_cast<Eigen::Index>(labels.size()) != T) throw InputError("label count does not match the sequence");
  if (weights.size() != probs.rows()) throw DimensionError("class weight count does not match the classes");
  if (d_probs) d_probs->setZero(probs.rows(), T);
  const double inv_t = 1.0 / static_cast<double>(T);
  double total = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const int y = labels[static_cast<std::size_t>(t)];
    if (y < 0 || y >= probs.rows()) throw InputError("label out of range");
    const double p = probs(y, t) + eps;
    total -= weights(y) * std::log(p);
    if (d_probs) (*d_probs)(y, t) = -weights(y) * inv_t / p;
  }
  return total * inv_t;
}

}  // namespace stagefinder
