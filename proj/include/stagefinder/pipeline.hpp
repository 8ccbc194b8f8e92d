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

// Stage-wise pipeline over a work directory. Every stage records a hash of
// the configuration it depends on; downstream stages refuse stale inputs.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stagefinder/features.hpp"
#include "stagefinder/graph.hpp"
#include "stagefinder/model.hpp"
#include "stagefinder/telemetry.hpp"
#include "stagefinder/training.hpp"

namespace stagefinder {

struct PipelineConfig {
  // Input files; relative paths resolve against the work directory.
  std::string events_path = "events.jsonl";
  std::string alerts_path = "alerts.jsonl";
  std::string labels_path = "labels.csv";

  // Synthetic corpus: back-to-back campaigns of trace_windows windows each.
  int traces = 8;
  int trace_windows = 36;
  int num_hosts = 2;
  double benign_event_rate = 0.02;
  double attack_event_rate = 0.02;
  std::uint64_t seed = 1;

  int sequence_windows = 36;
  double val_fraction = 0.2;
  int folds = 5;

  FeatureLayout layout;
  ModelConfig model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;

  std::string to_json() const;
  /// Defaults, merged with the file (if any), then dotted key=value overrides.
  static PipelineConfig load(const std::string& path, const std::vector<std::string>& overrides);
  static PipelineConfig from_json(std::string_view text);
};

/// The synthetic corpus of the config: `traces` independent campaigns laid
/// out back to back, each with its own random kill chain.
Scenario generate_corpus(const PipelineConfig& cfg);

/// Groups consecutive windows into sequences of at most length windows.
std::vector<Trace> make_traces(std::vector<GraphTensors> windows, const std::vector<int>& labels, int length);

/// Windows the telemetry and builds one fused graph per window.
std::vector<ProvenanceGraph> build_window_graphs(const std::vector<HostEvent>& events,
                                                 const std::vector<NetworkAlert>& alerts);

std::vector<int> parse_labels_csv(std::string_view text);
std::string labels_csv(const std::vector<int>& labels);

/// Contiguous split: the last ceil(fraction * n) items (at least one) validate.
std::size_t validation_start(std::size_t n, double fraction);

class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, std::filesystem::path workdir);

  void generate();
  void build_graphs();
  void fit_features();
  void pretrain();
  void finetune();
  void evaluate();
  void infer();
  void export_attention();

  /// Runs a stage by its command name.
  void run(const std::string& stage);

  const std::filesystem::path& workdir() const { return workdir_; }

 private:
  std::filesystem::path resolve(const std::string& path) const;
  std::string stage_hash(const std::string& stage) const;
  void require(const std::string& stage) const;
  void record(const std::string& stage, const std::vector<std::string>& artifacts) const;

  std::vector<ProvenanceGraph> load_graphs() const;
  FeatureSpec load_features() const;
  std::vector<Trace> load_traces(const FeatureSpec& spec) const;
  StageModel load_model(const std::string& stage, const std::string& file, const FeatureSpec& spec) const;

  PipelineConfig cfg_;
  std::filesystem::path workdir_;
};

}  // namespace stagefinder
