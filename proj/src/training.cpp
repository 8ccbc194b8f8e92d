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

#include "stagefinder/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "stagefinder/evaluation.hpp"
#include "stagefinder/losses.hpp"
#include "stagefinder/ops.hpp"

namespace stagefinder {

std::vector<const GraphTensors*> Trace::window_ptrs(std::size_t begin, std::size_t count) const {
  std::vector<const GraphTensors*> out;
  const std::size_t end = count == SIZE_MAX ? windows.size() : std::min(windows.size(), begin + count);
  for (std::size_t i = begin; i < end; ++i) out.push_back(&windows[i]);
  return out;
}

void PretrainConfig::validate() const {
  if (seq_len < 2) throw ConfigError("pretraining sequence length must be at least 2");
  if (tau <= 0.0) throw ConfigError("temperature must be positive");
  if (negatives < 1) throw ConfigError("need at least one negative");
  if (lambda_pred < 0.0 || lambda_ctr < 0.0) throw ConfigError("loss weights must be non-negative");
  if (lr < 0.0 || weight_decay < 0.0 || clip <= 0.0) throw ConfigError("optimizer settings out of range");
  if (batch < 1 || epochs < 1) throw ConfigError("batch and epochs must be positive");
}

void FinetuneConfig::validate() const {
  if (phase1_epochs < 1 || phase2_epochs < 1) throw ConfigError("phase epochs must be at least 1");
  if (phase1_lr < 0.0 || phase2_lr < 0.0 || weight_decay < 0.0 || clip <= 0.0) {
    throw ConfigError("optimizer settings out of range");
  }
  if (curriculum_start < 1 || curriculum_end < curriculum_start) throw ConfigError("bad curriculum lengths");
  if (patience < 1 || batch < 1 || eps < 0.0) throw ConfigError("fine-tuning settings out of range");
}

namespace {

struct Encoded {
  Eigen::MatrixXd g;
  std::vector<GraphEncoder::Cache> caches;
  bool live = false;
};

Encoded encode_input(const StageModel& model, const SequenceInput& in, bool keep_caches) {
  Encoded e;
  if (in.embeddings) {
    e.g = *in.embeddings;
  } else {
    e.g = model.encode_sequence(in.windows, keep_caches ? &e.caches : nullptr);
    e.live = keep_caches;
  }
  return e;
}

void encoder_backward(StageModel& model, const SequenceInput& in, const Encoded& e, const Eigen::MatrixXd& d_g) {
  if (!e.live) return;
  for (std::size_t t = 0; t < in.windows.size(); ++t) {
    model.encoder().backward(*in.windows[t], e.caches[t], d_g.col(static_cast<Eigen::Index>(t)), model.params());
  }
}

}  // namespace

SslTerms ssl_objective(StageModel& model, const std::vector<SequenceInput>& batch, const PretrainConfig& cfg,
                       std::uint64_t sample_seed, Mode mode, std::uint64_t dropout_seed, bool accumulate) {
  if (batch.empty()) throw InputError("empty pretraining batch");
  const auto& est = model.estimator();
  const ParamStore& params = model.params();
  const std::size_t B = batch.size();

  std::vector<Encoded> enc(B);
  std::vector<StageEstimator::Cache> rcache(B);
  std::vector<Eigen::MatrixXd> hidden(B), preds(B);
  std::vector<Eigen::Index> offset(B);
  Eigen::Index pool_size = 0, anchors = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (batch[b].length() < 2) throw InputError("pretraining sequences need at least two windows");
    enc[b] = encode_input(model, batch[b], accumulate);
    hidden[b] = est.recurrent_forward(enc[b].g, params, mode, mix_seed({dropout_seed, b}),
                                      accumulate ? &rcache[b] : nullptr)
                    .hidden;
    preds[b] = est.predict_next(hidden[b], params);
    offset[b] = pool_size;
    pool_size += enc[b].g.cols();
    anchors += enc[b].g.cols() - 1;
  }
  if (pool_size < 2) throw InputError("contrastive pool needs at least two windows");

  const Eigen::Index d = model.config().d_g;
  Eigen::MatrixXd pool(d, pool_size), A(d, anchors), P(d, anchors);
  std::vector<std::vector<int>> negatives(static_cast<std::size_t>(anchors));
  Rng rng(sample_seed);
  Eigen::Index a = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const Eigen::Index T = enc[b].g.cols();
    pool.middleCols(offset[b], T) = enc[b].g;
    for (Eigen::Index t = 0; t + 1 < T; ++t, ++a) {
      A.col(a) = preds[b].col(t);
      P.col(a) = enc[b].g.col(t + 1);
      const auto own = static_cast<std::uint64_t>(offset[b] + t + 1);
      auto& neg = negatives[static_cast<std::size_t>(a)];
      neg.resize(static_cast<std::size_t>(cfg.negatives));
      for (auto& n : neg) {
        std::uint64_t r = rng.below(static_cast<std::uint64_t>(pool_size - 1));
        if (r >= own) ++r;
        n = static_cast<int>(r);
      }
    }
  }

  SslTerms terms;
  std::vector<Eigen::MatrixXd> d_pred(B), d_seq(B);
  for (std::size_t b = 0; b < B; ++b) {
    terms.pred += loss_pred(enc[b].g, preds[b], accumulate ? &d_pred[b] : nullptr, accumulate ? &d_seq[b] : nullptr) /
                  static_cast<double>(B);
  }
  ContrastiveGrads cg;
  if (cfg.lambda_ctr != 0.0 || !accumulate) {
    terms.ctr = loss_contrastive(A, P, pool, negatives, cfg.tau, accumulate ? &cg : nullptr);
  }
  terms.total = cfg.lambda_pred * terms.pred + cfg.lambda_ctr * terms.ctr;
  if (!accumulate) return terms;

  ParamStore& store = model.params();
  a = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const Eigen::Index T = enc[b].g.cols();
    Eigen::MatrixXd dp = d_pred[b] * (cfg.lambda_pred / static_cast<double>(B));
    Eigen::MatrixXd dg = d_seq[b] * (cfg.lambda_pred / static_cast<double>(B));
    if (cg.anchors.size() > 0) {
      dp.leftCols(T - 1) += cfg.lambda_ctr * cg.anchors.middleCols(a, T - 1);
      dg.rightCols(T - 1) += cfg.lambda_ctr * cg.positives.middleCols(a, T - 1);
      dg += cfg.lambda_ctr * cg.pool.middleCols(offset[b], T);
    }
    a += T - 1;
    const Eigen::MatrixXd dh = est.predict_next_backward(hidden[b], dp, store);
    Eigen::MatrixXd d_input;
    est.recurrent_backward(rcache[b], dh, store, enc[b].live ? &d_input : nullptr);
    if (enc[b].live) encoder_backward(model, batch[b], enc[b], dg + d_input);
  }
  return terms;
}

double supervised_objective(StageModel& model, const SequenceInput& input, const std::vector<int>& labels,
                            const Eigen::VectorXd& weights, double eps, Mode mode, std::uint64_t dropout_seed,
                            double grad_scale) {
  const bool accumulate = grad_scale != 0.0;
  const auto& est = model.estimator();
  Encoded enc = encode_input(model, input, accumulate);
  StageEstimator::Cache rcache;
  const auto rec = est.recurrent_forward(enc.g, model.params(), mode, dropout_seed, accumulate ? &rcache : nullptr);
  const Eigen::MatrixXd probs = est.classify(rec.hidden, model.params());
  Eigen::MatrixXd d_probs;
  const double loss = loss_supervised(probs, labels, weights, eps, accumulate ? &d_probs : nullptr);
  if (!accumulate) return loss;
  ParamStore& store = model.params();
  const Eigen::MatrixXd d_logits = softmax_backward(probs, d_probs) * grad_scale;
  const Eigen::MatrixXd dh = est.classify_backward(rec.hidden, d_logits, store);
  Eigen::MatrixXd d_input;
  est.recurrent_backward(rcache, dh, store, enc.live ? &d_input : nullptr);
  if (enc.live) encoder_backward(model, input, enc, d_input);
  return loss;
}

std::vector<SequenceInput> pretraining_sequences(const std::vector<Trace>& traces, int seq_len) {
  std::vector<SequenceInput> out;
  const auto L = static_cast<std::size_t>(seq_len);
  for (const auto& tr : traces) {
    for (std::size_t s = 0; s + 2 <= tr.windows.size(); s += L) out.push_back({tr.window_ptrs(s, L), nullptr});
  }
  return out;
}

namespace {

/// Replaces live windows with embeddings computed once; used while the
/// encoder is frozen.
std::vector<SequenceInput> freeze_inputs(const StageModel& model, const std::vector<SequenceInput>& inputs,
                                         std::vector<Eigen::MatrixXd>& storage) {
  storage.clear();
  storage.reserve(inputs.size());
  for (const auto& in : inputs) storage.push_back(model.encode_sequence(in.windows));
  std::vector<SequenceInput> out(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) out[i].embeddings = &storage[i];
  return out;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

void optimizer_step(ParamStore& store, AdamState& adam, double lr, double wd, double clip) {
  store.mask_frozen_grads();
  clip_gradients(store, clip);
  adam_step(store, adam, lr, wd);
  store.zero_grad();
}

}  // namespace

PretrainResult pretrain(StageModel& model, const std::vector<Trace>& corpus, const PretrainConfig& cfg) {
  cfg.validate();
  auto sequences = pretraining_sequences(corpus, cfg.seq_len);
  if (sequences.empty()) throw InputError("pretraining corpus has no sequence of two or more windows");

  ParamStore& store = model.params();
  const auto saved_trainable = [&] {
    std::vector<bool> t;
    for (const auto& p : store) t.push_back(p.trainable);
    return t;
  }();
  for (auto& p : store) p.trainable = true;
  // The stage head receives no gradient here; keep it out of weight decay.
  store.set_trainable("head.stage.", false);
  std::vector<Eigen::MatrixXd> frozen_storage;
  if (!cfg.train_encoder) {
    for (const char* prefix : {"proj.", "encoder.", "readout."}) store.set_trainable(prefix, false);
    sequences = freeze_inputs(model, sequences, frozen_storage);
  }

  // Eval batches: fixed order, fixed negatives.
  auto eval_losses = [&](int epoch) {
    PretrainLogEntry e{epoch, 0.0, 0.0, 0.0};
    std::size_t batches = 0;
    for (std::size_t s = 0; s < sequences.size(); s += static_cast<std::size_t>(cfg.batch), ++batches) {
      const auto end = std::min(sequences.size(), s + static_cast<std::size_t>(cfg.batch));
      const std::vector<SequenceInput> batch(sequences.begin() + static_cast<std::ptrdiff_t>(s),
                                             sequences.begin() + static_cast<std::ptrdiff_t>(end));
      if (batch.size() == 1 && batch[0].length() < 2) continue;
      const auto t = ssl_objective(model, batch, cfg, mix_seed({cfg.seed, 0xe7a1u, s}), Mode::eval, 0, false);
      e.pred += t.pred;
      e.ctr += t.ctr;
      e.ssl += t.total;
    }
    e.pred /= static_cast<double>(batches);
    e.ctr /= static_cast<double>(batches);
    e.ssl /= static_cast<double>(batches);
    return e;
  };

  PretrainResult result;
  AdamState adam;
  store.zero_grad();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(mix_seed({cfg.seed, 0x5511u, static_cast<std::uint64_t>(epoch)}));
    auto order = sequences;
    shuffle(order, rng);
    std::uint64_t batch_index = 0;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch), ++batch_index) {
      const auto end = std::min(order.size(), s + static_cast<std::size_t>(cfg.batch));
      const std::vector<SequenceInput> batch(order.begin() + static_cast<std::ptrdiff_t>(s),
                                             order.begin() + static_cast<std::ptrdiff_t>(end));
      const auto e = static_cast<std::uint64_t>(epoch);
      ssl_objective(model, batch, cfg, mix_seed({cfg.seed, e, batch_index, 1}), Mode::train,
                    mix_seed({cfg.seed, e, batch_index, 2}), true);
      optimizer_step(store, adam, cfg.lr, cfg.weight_decay, cfg.clip);
    }
    result.log.push_back(eval_losses(epoch));
  }
  for (std::size_t i = 0; i < store.size(); ++i) store[i].trainable = saved_trainable[i];
  return result;
}

Eigen::VectorXd class_weights(const std::vector<int>& labels, std::vector<std::string>* warnings) {
  if (labels.empty()) throw InputError("no labels to weight");
  std::array<long, kNumStages> counts{};
  for (int y : labels) {
    if (y < 0 || y >= kNumStages) throw InputError("label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  Eigen::VectorXd w = Eigen::VectorXd::Zero(kNumStages);
  std::vector<double> present;
  for (int k = 0; k < kNumStages; ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0) continue;
    w(k) = static_cast<double>(labels.size()) /
           (static_cast<double>(kNumStages) * static_cast<double>(counts[static_cast<std::size_t>(k)]));
    present.push_back(w(k));
  }
  std::sort(present.begin(), present.end());
  const std::size_t n = present.size();
  const double median = n % 2 ? present[n / 2] : 0.5 * (present[n / 2 - 1] + present[n / 2]);
  for (int k = 0; k < kNumStages; ++k) {
    if (counts[static_cast<std::size_t>(k)] > 0) continue;
    w(k) = median;
    const std::string msg = "class " + std::to_string(k) + " absent from the training split; using weight " +
                            std::to_string(median);
    if (warnings) warnings->push_back(msg);
  }
  return w;
}

int curriculum_length(int epoch, int epochs, int start, int end) {
  if (epochs <= 1) return end;
  const double frac = static_cast<double>(epoch - 1) / static_cast<double>(epochs - 1);
  return static_cast<int>(std::lround(start + (end - start) * std::clamp(frac, 0.0, 1.0)));
}

bool EarlyStopping::update(double score, int epoch) {
  improved_ = best_epoch_ == 0 || score > best_;
  if (improved_) {
    best_ = score;
    best_epoch_ = epoch;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_;
}

namespace {

Eigen::MatrixXd predict_input(const StageModel& model, const SequenceInput& in) {
  const Eigen::MatrixXd g = in.embeddings ? *in.embeddings : model.encode_sequence(in.windows);
  const auto rec = model.estimator().recurrent_forward(g, model.params(), Mode::eval);
  return model.estimator().classify(rec.hidden, model.params());
}

double macro_f1_of(const StageModel& model, const std::vector<SequenceInput>& inputs,
                   const std::vector<const std::vector<int>*>& labels) {
  std::vector<int> truth, pred;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto p = argmax_labels(predict_input(model, inputs[i]));
    pred.insert(pred.end(), p.begin(), p.end());
    truth.insert(truth.end(), labels[i]->begin(), labels[i]->end());
  }
  return classification_metrics(truth, pred).macro_f1;
}

}  // namespace

double validation_macro_f1(const StageModel& model, const std::vector<Trace>& traces) {
  std::vector<SequenceInput> inputs;
  std::vector<const std::vector<int>*> labels;
  for (const auto& tr : traces) {
    inputs.push_back({tr.window_ptrs(), nullptr});
    labels.push_back(&tr.labels);
  }
  return macro_f1_of(model, inputs, labels);
}

FinetuneResult finetune(StageModel& model, const std::vector<Trace>& train, const std::vector<Trace>& val,
                        const FinetuneConfig& cfg, const Validator& validator) {
  cfg.validate();
  std::vector<int> all_labels;
  std::vector<SequenceInput> train_inputs, val_inputs;
  std::vector<const std::vector<int>*> train_labels, val_labels;
  for (const auto& tr : train) {
    if (tr.windows.size() != tr.labels.size()) throw InputError("trace has mismatched windows and labels");
    if (tr.windows.empty()) continue;
    all_labels.insert(all_labels.end(), tr.labels.begin(), tr.labels.end());
    train_inputs.push_back({tr.window_ptrs(), nullptr});
    train_labels.push_back(&tr.labels);
  }
  if (train_inputs.empty()) throw InputError("fine-tuning needs at least one labeled window");
  for (const auto& tr : val) {
    if (tr.windows.size() != tr.labels.size()) throw InputError("trace has mismatched windows and labels");
    if (tr.windows.empty()) continue;
    val_inputs.push_back({tr.window_ptrs(), nullptr});
    val_labels.push_back(&tr.labels);
  }
  if (val_inputs.empty() && !validator) throw InputError("fine-tuning needs validation windows");

  FinetuneResult result;
  result.class_weights = class_weights(all_labels, &result.warnings);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';

  ParamStore& store = model.params();
  const std::array<int, 2> epochs{cfg.phase1_epochs, cfg.phase2_epochs};
  const std::array<double, 2> lrs{cfg.phase1_lr, cfg.phase2_lr};
  for (int phase = 1; phase <= 2; ++phase) {
    const auto ph = static_cast<std::size_t>(phase - 1);
    for (auto& p : store) p.trainable = true;
    // The prediction head gets no gradient from the supervised loss.
    store.set_trainable("head.pred.", false);
    std::vector<Eigen::MatrixXd> train_cache, val_cache;
    std::vector<SequenceInput> tr_in = train_inputs, va_in = val_inputs;
    if (phase == 1) {
      for (const char* prefix : {"proj.", "encoder.", "readout.", "lstm.l0."}) store.set_trainable(prefix, false);
      tr_in = freeze_inputs(model, train_inputs, train_cache);
      va_in = freeze_inputs(model, val_inputs, val_cache);
    }
    const auto score = [&](int epoch) {
      return validator ? validator(model, phase, epoch) : macro_f1_of(model, va_in, val_labels);
    };

    AdamState adam;
    EarlyStopping stopper(cfg.patience);
    std::vector<Eigen::MatrixXd> best;
    const int E = epochs[ph];
    int epoch = 1;
    store.zero_grad();
    for (; epoch <= E; ++epoch) {
      const int len = curriculum_length(epoch, E, cfg.curriculum_start, cfg.curriculum_end);
      const auto e64 = static_cast<std::uint64_t>(epoch);
      Rng rng(mix_seed({cfg.seed, static_cast<std::uint64_t>(phase), e64}));
      std::vector<std::size_t> order(tr_in.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      shuffle(order, rng);
      double loss_sum = 0.0;
      std::uint64_t batch_index = 0;
      for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch), ++batch_index) {
        const auto end = std::min(order.size(), s + static_cast<std::size_t>(cfg.batch));
        const double scale = 1.0 / static_cast<double>(end - s);
        for (std::size_t j = s; j < end; ++j) {
          const std::size_t i = order[j];
          const auto T = static_cast<std::size_t>(tr_in[i].length());
          const auto L = std::min<std::size_t>(T, static_cast<std::size_t>(len));
          const std::size_t start = T > L ? rng.below(T - L + 1) : 0;
          SequenceInput sub;
          Eigen::MatrixXd sub_g;
          if (tr_in[i].embeddings) {
            sub_g = tr_in[i].embeddings->middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(L));
            sub.embeddings = &sub_g;
          } else {
            sub.windows.assign(tr_in[i].windows.begin() + static_cast<std::ptrdiff_t>(start),
                               tr_in[i].windows.begin() + static_cast<std::ptrdiff_t>(start + L));
          }
          const auto& all = *train_labels[i];
          const std::vector<int> labels(all.begin() + static_cast<std::ptrdiff_t>(start),
                                        all.begin() + static_cast<std::ptrdiff_t>(start + L));
          loss_sum += supervised_objective(model, sub, labels, result.class_weights, cfg.eps, Mode::train,
                                           mix_seed({cfg.seed, static_cast<std::uint64_t>(phase), e64, batch_index, j}),
                                           scale);
        }
        optimizer_step(store, adam, lrs[ph], cfg.weight_decay, cfg.clip);
      }
      const double f1 = score(epoch);
      result.log.push_back({phase, epoch, len, loss_sum / static_cast<double>(order.size()), f1});
      const bool stop = stopper.update(f1, epoch);
      if (stopper.improved()) best = store.snapshot();
      if (stop) break;
    }
    result.epochs_run[ph] = std::min(epoch, E);
    result.best_epoch[ph] = stopper.best_epoch();
    store.restore(best);
  }
  for (auto& p : store) p.trainable = true;
  return result;
}

std::string to_csv(const std::vector<PretrainLogEntry>& log) {
  std::ostringstream out;
  out.precision(12);
  out << "epoch,l_pred,l_ctr,l_ssl\n";
  for (const auto& e : log) out << e.epoch << ',' << e.pred << ',' << e.ctr << ',' << e.ssl << '\n';
  return out.str();
}

std::string to_csv(const std::vector<FinetuneLogEntry>& log) {
  std::ostringstream out;
  out.precision(12);
  out << "phase,epoch,seq_len,l_sup,val_f1\n";
  for (const auto& e : log) {
    out << e.phase << ',' << e.epoch << ',' << e.seq_len << ',' << e.loss << ',' << e.val_f1 << '\n';
  }
  return out.str();
}

}  // namespace stagefinder
