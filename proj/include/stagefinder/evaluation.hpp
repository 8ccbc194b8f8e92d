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

// Detection quality and temporal stability metrics.

#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <string>
#include <vector>

#include "stagefinder/common.hpp"

namespace stagefinder {

using ConfusionMatrix = std::array<std::array<long, kNumStages>, kNumStages>;  // [true][pred]

struct ClassificationMetrics {
  ConfusionMatrix confusion{};
  std::array<double, kNumStages> precision{};
  std::array<double, kNumStages> recall{};
  std::array<double, kNumStages> f1{};
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
};

/// Zero denominators yield 0; macro averages run over all seven classes.
ClassificationMetrics classification_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred);

/// Non-interpolated average precision of binary relevance under descending
/// score order, ties broken by lower index first.
double average_precision(const std::vector<bool>& relevant, const std::vector<double>& scores);

/// Macro AP over classes with at least one positive; probs is K x T.
double aupr(const std::vector<int>& y_true, const Eigen::MatrixXd& probs);

double temporal_flip_rate(const std::vector<int>& y_pred);
/// Mean of per-trace flip rates; traces shorter than two windows are skipped.
double mean_temporal_flip_rate(const std::vector<std::vector<int>>& traces);

/// Argmax per column, ties to the smaller class.
std::vector<int> argmax_labels(const Eigen::MatrixXd& probs);

struct MetricSummary {
  std::array<double, kNumStages> precision{};
  std::array<double, kNumStages> recall{};
  std::array<double, kNumStages> f1{};
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  double aupr = 0.0;
  double tfr = 0.0;
};

/// Metrics over several traces: label metrics and AUPR pool all windows, TFR
/// is averaged per trace.
MetricSummary summarize(const std::vector<std::vector<int>>& y_true, const std::vector<Eigen::MatrixXd>& probs);

struct MetricReport {
  std::vector<MetricSummary> folds;
  MetricSummary mean;
  MetricSummary stddev;  // sample standard deviation, 0 for a single fold

  std::string to_csv() const;
  std::string to_json() const;
};

MetricReport aggregate(const std::vector<MetricSummary>& folds);

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// k contiguous blocks over n ordered sequences; fold i tests block i.
std::vector<FoldSplit> temporal_folds(std::size_t n, int k);

/// Trains on each fold's training block and returns probabilities for its
/// test sequences, in order.
using FoldRunner = std::function<std::vector<Eigen::MatrixXd>(const FoldSplit& split, int fold)>;

MetricReport evaluate_folds(const std::vector<std::vector<int>>& labels, int k, const FoldRunner& run);

}  // namespace stagefinder
