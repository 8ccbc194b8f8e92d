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

#include "stagefinder/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "stagefinder/stage_mapping.hpp"

namespace stagefinder {

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

ClassificationMetrics classification_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  if (y_true.size() != y_pred.size()) throw InputError("label sequences differ in length");
  ClassificationMetrics m;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i];
    const int p = y_pred[i];
    if (t < 0 || t >= kNumStages || p < 0 || p >= kNumStages) throw InputError("label out of range");
    ++m.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  long correct = 0;
  for (std::size_t k = 0; k < kNumStages; ++k) {
    long row = 0, col = 0;
    for (std::size_t j = 0; j < kNumStages; ++j) {
      row += m.confusion[k][j];
      col += m.confusion[j][k];
    }
    const double tp = static_cast<double>(m.confusion[k][k]);
    correct += m.confusion[k][k];
    m.precision[k] = ratio(tp, static_cast<double>(col));
    m.recall[k] = ratio(tp, static_cast<double>(row));
    m.f1[k] = ratio(2.0 * m.precision[k] * m.recall[k], m.precision[k] + m.recall[k]);
    m.macro_precision += m.precision[k] / kNumStages;
    m.macro_recall += m.recall[k] / kNumStages;
    m.macro_f1 += m.f1[k] / kNumStages;
  }
  m.accuracy = ratio(static_cast<double>(correct), static_cast<double>(y_true.size()));
  return m;
}

double average_precision(const std::vector<bool>& relevant, const std::vector<double>& scores) {
  if (relevant.size() != scores.size()) throw InputError("relevance and score counts differ");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const auto positives = std::count(relevant.begin(), relevant.end(), true);
  if (positives == 0) throw InputError("average precision needs at least one positive");
  double ap = 0.0;
  long hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!relevant[order[rank]]) continue;
    ++hits;
    ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  return ap / static_cast<double>(positives);
}

double aupr(const std::vector<int>& y_true, const Eigen::MatrixXd& probs) {
  if (static_cast<Eigen::Index>(y_true.size()) != probs.cols()) throw InputError("label count differs from columns");
  double total = 0.0;
  int classes = 0;
  for (Eigen::Index k = 0; k < probs.rows(); ++k) {
    std::vector<bool> rel(y_true.size());
    std::vector<double> scores(y_true.size());
    bool any = false;
    for (std::size_t t = 0; t < y_true.size(); ++t) {
      rel[t] = y_true[t] == k;
      any = any || rel[t];
      scores[t] = probs(k, static_cast<Eigen::Index>(t));
    }
    if (!any) continue;
    total += average_precision(rel, scores);
    ++classes;
  }
  if (classes == 0) throw InputError("no class has a positive window");
  return total / classes;
}

double temporal_flip_rate(const std::vector<int>& y_pred) {
  if (y_pred.size() < 2) throw InputError("flip rate needs at least two windows");
  long flips = 0;
  for (std::size_t t = 1; t < y_pred.size(); ++t) flips += y_pred[t] != y_pred[t - 1];
  return static_cast<double>(flips) / static_cast<double>(y_pred.size() - 1);
}

double mean_temporal_flip_rate(const std::vector<std::vector<int>>& traces) {
  double total = 0.0;
  int n = 0;
  for (const auto& t : traces) {
    if (t.size() < 2) continue;
    total += temporal_flip_rate(t);
    ++n;
  }
  if (n == 0) throw InputError("flip rate needs a trace with at least two windows");
  return total / n;
}

std::vector<int> argmax_labels(const Eigen::MatrixXd& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.cols()));
  for (Eigen::Index t = 0; t < probs.cols(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < probs.rows(); ++k) {
      if (probs(k, t) > probs(best, t)) best = k;
    }
    out[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return out;
}

MetricSummary summarize(const std::vector<std::vector<int>>& y_true, const std::vector<Eigen::MatrixXd>& probs) {
  if (y_true.size() != probs.size()) throw InputError("trace counts differ");
  std::vector<int> all_true, all_pred;
  std::vector<std::vector<int>> pred_traces;
  Eigen::Index total = 0;
  for (const auto& p : probs) total += p.cols();
  Eigen::MatrixXd all_probs(kNumStages, total);
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i].rows() != kNumStages) throw DimensionError("probabilities must have one row per stage");
    if (static_cast<Eigen::Index>(y_true[i].size()) != probs[i].cols()) throw InputError("label count differs");
    pred_traces.push_back(argmax_labels(probs[i]));
    all_true.insert(all_true.end(), y_true[i].begin(), y_true[i].end());
    all_pred.insert(all_pred.end(), pred_traces.back().begin(), pred_traces.back().end());
    all_probs.middleCols(col, probs[i].cols()) = probs[i];
    col += probs[i].cols();
  }
  const auto cm = classification_metrics(all_true, all_pred);
  MetricSummary s;
  s.precision = cm.precision;
  s.recall = cm.recall;
  s.f1 = cm.f1;
  s.macro_precision = cm.macro_precision;
  s.macro_recall = cm.macro_recall;
  s.macro_f1 = cm.macro_f1;
  s.accuracy = cm.accuracy;
  s.aupr = aupr(all_true, all_probs);
  s.tfr = mean_temporal_flip_rate(pred_traces);
  return s;
}

namespace {

template <typename F>
void for_each_field(MetricSummary& s, F&& f) {
  for (auto& v : s.precision) f(v);
  for (auto& v : s.recall) f(v);
  for (auto& v : s.f1) f(v);
  f(s.macro_precision);
  f(s.macro_recall);
  f(s.macro_f1);
  f(s.accuracy);
  f(s.aupr);
  f(s.tfr);
}

std::vector<double> flatten(const MetricSummary& s) {
  std::vector<double> out;
  for_each_field(const_cast<MetricSummary&>(s), [&](double& v) { out.push_back(v); });
  return out;
}

MetricSummary unflatten(const std::vector<double>& values) {
  MetricSummary s;
  std::size_t i = 0;
  for_each_field(s, [&](double& v) { v = values[i++]; });
  return s;
}

}  // namespace

MetricReport aggregate(const std::vector<MetricSummary>& folds) {
  if (folds.empty()) throw InputError("no folds to aggregate");
  MetricReport r;
  r.folds = folds;
  const std::size_t n = folds.size();
  std::vector<double> mean(flatten(folds[0]).size(), 0.0);
  for (const auto& f : folds) {
    const auto v = flatten(f);
    for (std::size_t i = 0; i < v.size(); ++i) mean[i] += v[i] / static_cast<double>(n);
  }
  std::vector<double> var(mean.size(), 0.0);
  if (n > 1) {
    for (const auto& f : folds) {
      const auto v = flatten(f);
      for (std::size_t i = 0; i < v.size(); ++i) var[i] += (v[i] - mean[i]) * (v[i] - mean[i]);
    }
    for (auto& v : var) v = std::sqrt(v / static_cast<double>(n - 1));
  }
  r.mean = unflatten(mean);
  r.stddev = unflatten(var);
  return r;
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "fold,macro_precision,macro_recall,macro_f1,accuracy,aupr,tfr";
  for (int k = 0; k < kNumStages; ++k) out << ",f1_" << k;
  out << '\n';
  auto row = [&](const std::string& name, const MetricSummary& s) {
    out << name << ',' << s.macro_precision << ',' << s.macro_recall << ',' << s.macro_f1 << ',' << s.accuracy << ','
        << s.aupr << ',' << s.tfr;
    for (double v : s.f1) out << ',' << v;
    out << '\n';
  };
  for (std::size_t i = 0; i < folds.size(); ++i) row(std::to_string(i), folds[i]);
  row("mean", mean);
  row("std", stddev);
  return out.str();
}

std::string MetricReport::to_json() const {
  auto pair = [](double m, double s) { return nlohmann::ordered_json{{"mean", m}, {"std", s}}; };
  nlohmann::ordered_json doc;
  doc["folds"] = folds.size();
  nlohmann::ordered_json overall;
  overall["Precision"] = pair(mean.macro_precision, stddev.macro_precision);
  overall["Recall"] = pair(mean.macro_recall, stddev.macro_recall);
  overall["F1-score"] = pair(mean.macro_f1, stddev.macro_f1);
  overall["Accuracy"] = pair(mean.accuracy, stddev.accuracy);
  overall["AUPR"] = pair(mean.aupr, stddev.aupr);
  overall["TFR"] = pair(mean.tfr, stddev.tfr);
  doc["overall"] = overall;
  nlohmann::ordered_json per_stage = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < kNumStages; ++k) {
    per_stage.push_back({{"stage_id", k},
                         {"stage_name", stage_name(static_cast<int>(k))},
                         {"precision", pair(mean.precision[k], stddev.precision[k])},
                         {"recall", pair(mean.recall[k], stddev.recall[k])},
                         {"f1", pair(mean.f1[k], stddev.f1[k])}});
  }
  doc["per_stage"] = per_stage;
  return doc.dump(2);
}

std::vector<FoldSplit> temporal_folds(std::size_t n, int k) {
  if (k < 1) throw ConfigError("fold count must be positive");
  if (n < static_cast<std::size_t>(k)) throw InputError("fewer sequences than folds");
  std::vector<FoldSplit> out(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    const auto fold = i * static_cast<std::size_t>(k) / n;
    for (std::size_t f = 0; f < out.size(); ++f) (f == fold ? out[f].test : out[f].train).push_back(i);
  }
  return out;
}

MetricReport evaluate_folds(const std::vector<std::vector<int>>& labels, int k, const FoldRunner& run) {
  const auto splits = temporal_folds(labels.size(), k);
  std::vector<MetricSummary> folds;
  for (std::size_t f = 0; f < splits.size(); ++f) {
    const auto probs = run(splits[f], static_cast<int>(f));
    if (probs.size() != splits[f].test.size()) throw InputError("fold runner returned the wrong number of traces");
    std::vector<std::vector<int>> truth;
    for (auto i : splits[f].test) truth.push_back(labels[i]);
    folds.push_back(summarize(truth, probs));
  }
  return aggregate(folds);
}

}  // namespace stagefinder
