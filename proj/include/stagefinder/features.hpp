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

// Node and edge featurization, z-score statistics, and the affine projection
// into the shared latent space.

#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "stagefinder/graph.hpp"

namespace stagefinder {

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Column widths of the shared node and edge feature spaces.
///
/// Node vector: [type | cmd | user | priv | time | stat(3) | sig | sev | proto(4) | dir | subnet | port | time].
/// The type one-hot is filled for every node; the host-entity block (cmd..stat)
/// is zero for alerts and the alert block (sig..time) is zero otherwise.
///
/// Edge vector: [type | freq | size | time | alert-category | sev | proto(4) | dir],
/// with the alert part filled only for triggered_by edges.
struct FeatureLayout {
  int d_cmd = 64;
  int user_buckets = 16;
  int subnet_buckets = 32;
  int category_buckets = 8;

  int type_offset() const { return 0; }
  int cmd_offset() const { return kNumNodeKinds; }
  int user_offset() const { return cmd_offset() + d_cmd; }
  int privileged_offset() const { return user_offset() + user_buckets; }
  int host_time_offset() const { return privileged_offset() + 1; }
  int stat_offset() const { return host_time_offset() + 1; }
  int sig_offset() const { return stat_offset() + 3; }
  int severity_offset() const { return sig_offset() + d_cmd; }
  int proto_offset() const { return severity_offset() + 1; }
  int direction_offset() const { return proto_offset() + 4; }
  int subnet_offset() const { return direction_offset() + 1; }
  int port_offset() const { return subnet_offset() + subnet_buckets; }
  int alert_time_offset() const { return port_offset() + 1; }
  int node_width() const { return alert_time_offset() + 1; }

  int edge_type_offset() const { return 0; }
  int freq_offset() const { return kNumRelations; }
  int size_offset() const { return freq_offset() + 1; }
  int edge_time_offset() const { return size_offset() + 1; }
  int category_offset() const { return edge_time_offset() + 1; }
  int edge_severity_offset() const { return category_offset() + category_buckets; }
  int edge_proto_offset() const { return edge_severity_offset() + 1; }
  int edge_direction_offset() const { return edge_proto_offset() + 4; }
  int edge_width() const { return edge_direction_offset() + 1; }
};

struct FeatureVocab {
  std::vector<std::string> tokens;  // column order
  std::vector<double> idf;
  std::map<std::string, int, std::less<>> token_index;

  int column(std::string_view token) const;  // -1 when out of vocabulary
};

/// Continuous columns standardized by z-score.
enum ContinuousColumn { kInDegree = 0, kOutDegree = 1, kEventCount = 2, kLogBytes = 3, kNumContinuous = 4 };

struct ZScoreStats {
  std::array<double, kNumContinuous> mean{};
  std::array<double, kNumContinuous> stddev{};

  static constexpr double kConstantThreshold = 1e-8;
  bool is_constant(int column) const { return stddev[static_cast<std::size_t>(column)] < kConstantThreshold; }
  /// Constant columns map to 0.
  double standardize(int column, double value) const;
};

/// Everything featurization needs, persisted as one JSON artifact.
struct FeatureSpec {
  FeatureLayout layout;
  FeatureVocab vocab;
  ZScoreStats stats;

  std::string to_json() const;
  static FeatureSpec from_json(std::string_view text);
  /// Hash of the canonical JSON form; checkpoints record it.
  std::uint64_t hash() const;
};

inline constexpr std::string_view kFeatureSpecVersion = "stagefinder-features/1";

/// Lowercased tokens split on anything other than [a-z0-9._-].
std::vector<std::string> tokenize(std::string_view text);

/// Text a node contributes to the TF-IDF space, empty when it has none.
std::string node_text(const Node& node);

/// Raw (in-degree, out-degree, event count) per node, ignoring self loops.
std::vector<std::array<double, 3>> node_statistics(const ProvenanceGraph& graph);

/// Fits the vocabulary (idf = ln((1+N)/(1+df)) + 1 over text-bearing nodes)
/// and z-score statistics on a training corpus. Throws InputError if empty.
FeatureSpec fit_feature_spec(const std::vector<ProvenanceGraph>& corpus, const FeatureLayout& layout = {});

Eigen::VectorXd featurize_node(const ProvenanceGraph& graph, int node, const FeatureSpec& spec);
Eigen::VectorXd featurize_edge(const ProvenanceGraph& graph, int edge, const FeatureSpec& spec);

/// Edge list plus the per-relation neighbor bookkeeping used by message passing.
struct Topology {
  int num_nodes = 0;
  std::vector<int> src;
  std::vector<int> dst;
  std::vector<Relation> relation;
  std::vector<double> inv_degree;  // 1 / |in-neighbors of dst under relation|, per edge
  std::array<std::vector<int>, kNumRelations> edges_by_relation;

  static Topology from_edges(int num_nodes, std::vector<int> src, std::vector<int> dst,
                             std::vector<Relation> relation);
  static Topology from_graph(const ProvenanceGraph& graph);
  int num_edges() const { return static_cast<int>(src.size()); }
};

/// Raw feature matrices of one window (rows = nodes / edges).
struct GraphTensors {
  int window_index = 0;
  SparseRows node_features;
  SparseRows edge_features;
  std::shared_ptr<const Topology> topology;
};

GraphTensors featurize(const ProvenanceGraph& graph, const FeatureSpec& spec);

/// Projected node and edge features.
struct FeaturizedGraph {
  Eigen::MatrixXd node_states;  // |V| x d_h
  Eigen::MatrixXd edge_states;  // |E| x d_h
  std::shared_ptr<const Topology> topology;
};

/// x~ = W_x x + b_x and z~ = W_z z + b_z, row-wise.
FeaturizedGraph project(const GraphTensors& raw, const Eigen::MatrixXd& w_x, const Eigen::VectorXd& b_x,
                        const Eigen::MatrixXd& w_z, const Eigen::VectorXd& b_z);

}  // namespace stagefinder
