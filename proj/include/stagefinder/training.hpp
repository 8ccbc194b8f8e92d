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

// Self-supervised pretraining and two-phase supervised fine-tuning.

#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stagefinder/model.hpp"

namespace stagefinder {

/// One contiguous labeled window sequence (a host or campaign trace).
struct Trace {
  std::vector<GraphTensors> windows;
  std::vector<int> labels;

  std::vector<const GraphTensors*> window_ptrs(std::size_t begin = 0, std::size_t count = SIZE_MAX) const;
};

struct PretrainConfig {
  int seq_len = 20;
  double tau = 0.2;
  int negatives = 256;
  double lambda_pred = 1.0;
  double lambda_ctr = 1.0;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  int batch = 64;
  int epochs = 20;
  double clip = 5.0;
  std::uint64_t seed = 1;
  bool train_encoder = true;

  void validate() const;
};

struct FinetuneConfig {
  int phase1_epochs = 10;
  double phase1_lr = 1e-4;
  int phase2_epochs = 20;
  double phase2_lr = 5e-5;
  int curriculum_start = 10;
  int curriculum_end = 30;
  int patience = 5;
  double eps = 1e-8;
  int batch = 1;
  double weight_decay = 1e-5;
  double clip = 5.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// A sequence to train on: live windows, or precomputed embeddings (d_g x T)
/// when the encoder is frozen.
struct SequenceInput {
  std::vector<const GraphTensors*> windows;
  const Eigen::MatrixXd* embeddings = nullptr;

  Eigen::Index length() const {
    return embeddings ? embeddings->cols() : static_cast<Eigen::Index>(windows.size());
  }
};

struct SslTerms {
  double pred = 0.0;
  double ctr = 0.0;
  double total = 0.0;
};

/// L_ssl = lambda_pred * mean_seq L_pred + lambda_ctr * L_ctr over one batch.
/// Negatives for each anchor are drawn with replacement from every window of
/// the batch except the positive's own, seeded by sample_seed. When
/// accumulate is set, gradients are added to the model's parameter store.
SslTerms ssl_objective(StageModel& model, const std::vector<SequenceInput>& batch, const PretrainConfig& cfg,
                       std::uint64_t sample_seed, Mode mode, std::uint64_t dropout_seed, bool accumulate);

/// Weighted cross-entropy of one sequence; gradients scaled by grad_scale are
/// accumulated when grad_scale != 0.
double supervised_objective(StageModel& model, const SequenceInput& input, const std::vector<int>& labels,
                            const Eigen::VectorXd& weights, double eps, Mode mode, std::uint64_t dropout_seed,
                            double grad_scale);

struct PretrainLogEntry {
  int epoch = 0;
  double pred = 0.0;
  double ctr = 0.0;
  double ssl = 0.0;
};

struct PretrainResult {
  std::vector<PretrainLogEntry> log;
};

/// Splits traces into consecutive chunks of cfg.seq_len windows (shorter tails
/// of at least two windows are kept).
std::vector<SequenceInput> pretraining_sequences(const std::vector<Trace>& traces, int seq_len);

/// Trains the model in place. The logged losses are eval-mode losses over
/// the whole corpus after each epoch, with a fixed negative sample.
PretrainResult pretrain(StageModel& model, const std::vector<Trace>& corpus, const PretrainConfig& cfg);

/// w_k = total / (K count_k). Absent classes get the median of the present
/// weights and a warning.
Eigen::VectorXd class_weights(const std::vector<int>& labels, std::vector<std::string>* warnings = nullptr);

/// Linear schedule from start (first epoch) to end (last epoch).
int curriculum_length(int epoch, int epochs, int start, int end);

class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  /// Records an epoch score; returns true when training should stop.
  bool update(double score, int epoch);
  bool improved() const { return improved_; }
  int best_epoch() const { return best_epoch_; }
  double best_score() const { return best_; }

 private:
  int patience_;
  double best_ = -1.0;
  int best_epoch_ = 0;
  int stale_ = 0;
  bool improved_ = false;
};

struct FinetuneLogEntry {
  int phase = 0;
  int epoch = 0;
  int seq_len = 0;
  double loss = 0.0;
  double val_f1 = 0.0;
};

struct FinetuneResult {
  std::vector<FinetuneLogEntry> log;
  Eigen::VectorXd class_weights;
  std::vector<std::string> warnings;
  std::array<int, 2> epochs_run{};
  std::array<int, 2> best_epoch{};
};

/// Returns the validation score (macro F1) of the current model.
using Validator = std::function<double(const StageModel&, int phase, int epoch)>;

/// Phase 1 trains with the encoder and the lower recurrent layer frozen;
/// phase 2 trains everything. Each phase keeps the best validation checkpoint.
FinetuneResult finetune(StageModel& model, const std::vector<Trace>& train, const std::vector<Trace>& val,
                        const FinetuneConfig& cfg, const Validator& validator = {});

/// Eval-mode macro F1 of the model on the given traces.
double validation_macro_f1(const StageModel& model, const std::vector<Trace>& traces);

std::string to_csv(const std::vector<PretrainLogEntry>& log);
std::string to_csv(const std::vector<FinetuneLogEntry>& log);

}  // namespace stagefinder
