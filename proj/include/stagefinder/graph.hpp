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

// Windowing and fused provenance graph construction.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stagefinder/telemetry.hpp"

namespace stagefinder {

enum class NodeKind { process, file, socket, user, host, ip, alert };

enum class Relation { read, write, spawn, exec, connect, send, recv, registry_write, triggered_by, self_loop };

inline constexpr int kNumNodeKinds = 7;
inline constexpr int kNumRelations = 10;

std::string_view to_string(NodeKind kind);
std::string_view to_string(Relation relation);
std::optional<NodeKind> node_kind_from_string(std::string_view text);
std::optional<Relation> relation_from_string(std::string_view text);

NodeKind node_kind(EntityKind kind);
Relation relation_for(EventKind kind);

struct Node {
  NodeKind kind = NodeKind::process;
  std::string key;
  double first_seen = 0.0;

  // Host-entity attributes.
  std::optional<std::string> command;
  std::optional<std::string> user;

  // Alert attributes. remote_* describe the external endpoint.
  std::optional<std::string> signature;
  std::optional<std::string> category;
  std::optional<double> severity;
  std::optional<Protocol> protocol;
  std::optional<std::string> remote_ip;
  std::optional<int> remote_port;
  bool outbound = false;

  bool operator==(const Node&) const = default;
};

struct Edge {
  Relation relation = Relation::self_loop;
  int src = 0;
  int dst = 0;
  double timestamp = 0.0;  // earliest occurrence
  std::optional<std::uint64_t> bytes;
  int count = 1;

  bool operator==(const Edge&) const = default;
};

struct ProvenanceGraph {
  int window_index = 0;
  double window_start = 0.0;
  std::vector<Node> nodes;  // sorted by (kind, key)
  std::vector<Edge> edges;  // sorted by (src, relation, dst)

  std::optional<int> find(NodeKind kind, std::string_view key) const;
  bool operator==(const ProvenanceGraph&) const = default;
};

struct TelemetryWindow {
  int index = 0;
  double start = 0.0;
  std::vector<HostEvent> events;
  std::vector<NetworkAlert> alerts;
};

/// Half-open contiguous windows aligned to the earliest record. Empty windows
/// between records are kept so indices stay time-aligned.
std::vector<TelemetryWindow> window_events(const std::vector<HostEvent>& events,
                                           const std::vector<NetworkAlert>& alerts,
                                           double window_len = kWindowSeconds);

/// Builds the fused graph for one window: one node per entity, aggregated
/// event edges, alert and ip nodes with a triggered_by edge per alert, and
/// one self_loop per node, all in canonical order.
ProvenanceGraph build_graph(const TelemetryWindow& window);

/// Snapshot document with nodes[] and edges[] in canonical order.
std::string to_json(const ProvenanceGraph& graph);
ProvenanceGraph graph_from_json(std::string_view text);

}  // namespace stagefinder
