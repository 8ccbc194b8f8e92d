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

// Training objectives with their gradients. Sequences are column-per-step.

#pragma once

#include <Eigen/Dense>
#include <vector>

namespace stagefinder {

/// Mean squared next-step error. Column t of predictions is the estimate of
/// column t+1 of sequence; the last prediction column is unused.
/// d_predictions (optional) receives the gradient, same shape as predictions.
double loss_pred(const Eigen::MatrixXd& sequence, const Eigen::MatrixXd& predictions,
                 Eigen::MatrixXd* d_predictions = nullptr, Eigen::MatrixXd* d_sequence = nullptr);

struct ContrastiveGrads {
  Eigen::MatrixXd anchors;
  Eigen::MatrixXd positives;
  Eigen::MatrixXd pool;
};

/// Normalized InfoNCE over cosine similarity / tau, averaged over anchors.
/// Anchor j contrasts positives.col(j) against pool.col(i) for i in negatives[j];
/// the positive sits in the denominator.
double loss_contrastive(const Eigen::MatrixXd& anchors, const Eigen::MatrixXd& positives,
                        const Eigen::MatrixXd& pool, const std::vector<std::vector<int>>& negatives, double tau,
                        ContrastiveGrads* grads = nullptr);

/// Weighted cross-entropy -(1/T) sum_t w_{y_t} log(p_t[y_t] + eps).
/// d_probs (optional) receives dL/dp.
double loss_supervised(const Eigen::MatrixXd& probs, const std::vector<int>& labels, const Eigen::VectorXd& weights,
                       double eps = 1e-8, Eigen::MatrixXd* d_probs = nullptr);

}  // namespace stagefinder
