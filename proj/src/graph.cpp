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

#include "stagefinder/graph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <tuple>

#include "json.hpp"

namespace stagefinder {

namespace {

constexpr std::array<std::string_view, kNumNodeKinds> kNodeKindNames{"process", "file", "socket", "user",
                                                                     "host",    "ip",   "alert"};
constexpr std::array<std::string_view, kNumRelations> kRelationNames{
    "read", "write", "spawn", "exec", "connect", "send", "recv", "registry_write", "triggered_by", "self_loop"};

using NodeId = std::pair<NodeKind, std::string>;

struct EdgeKey {
  NodeId src;
  Relation relation;
  NodeId dst;
  auto operator<=>(const EdgeKey&) const = default;
};

class GraphAssembler {
 public:
  Node& touch(NodeKind kind, const std::string& key, double ts) {
    auto [it, inserted] = nodes_.try_emplace(NodeId{kind, key});
    Node& n = it->second;
    if (inserted) {
      n.kind = kind;
      n.key = key;
      n.first_seen = ts;
    } else {
      n.first_seen = std::min(n.first_seen, ts);
    }
    return n;
  }

  bool contains(NodeKind kind, const std::string& key) const { return nodes_.count(NodeId{kind, key}) > 0; }

  void add_edge(const NodeId& src, Relation rel, const NodeId& dst, double ts, std::optional<std::uint64_t> bytes) {
    auto [it, inserted] = edges_.try_emplace(EdgeKey{src, rel, dst});
    Edge& e = it->second;
    if (inserted) {
      e.relation = rel;
      e.timestamp = ts;
      e.bytes = bytes;
      e.count = 1;
      return;
    }
    e.count += 1;
    e.timestamp = std::min(e.timestamp, ts);
    if (bytes) e.bytes = e.bytes.value_or(0) + *bytes;
  }

  ProvenanceGraph finish(int window_index, double window_start) {
    ProvenanceGraph g;
    g.window_index = window_index;
    g.window_start = window_start;
    std::map<NodeId, int> index;
    for (auto& [id, node] : nodes_) {
      index.emplace(id, static_cast<int>(g.nodes.size()));
      g.nodes.push_back(std::move(node));
    }
    for (const auto& [key, edge] : edges_) {
      auto s = index.find(key.src);
      auto d = index.find(key.dst);
      if (s == index.end() || d == index.end()) {
        throw Error("internal consistency: edge references an undeclared entity");
      }
      Edge e = edge;
      e.src = s->second;
      e.dst = d->second;
      g.edges.push_back(e);
    }
    for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i) {
      g.edges.push_back(Edge{Relation::self_loop, i, i, g.nodes[static_cast<std::size_t>(i)].first_seen,
                             std::nullopt, 1});
    }
    std::sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) {
      return std::tie(a.src, a.relation, a.dst) < std::tie(b.src, b.relation, b.dst);
    });
    return g;
  }

 private:
  // std::map keyed by (kind, key) yields the canonical node order directly.
  std::map<NodeId, Node> nodes_;
  std::map<EdgeKey, Edge> edges_;
};

// Matching for the alert fusion step: network events towards the alert's
// external address, preferring port matches, then the nearest preceding one.
const HostEvent* responsible_event(const TelemetryWindow& window, const NetworkAlert& alert,
                                   const std::string& internal_ip, const std::string& external_ip,
                                   int external_port, bool internal_is_host) {
  const HostEvent* best = nullptr;
  int best_tier = 2;
  bool best_preceding = false;
  double best_gap = 0.0;
  for (const auto& ev : window.events) {
    if (!is_network_event(ev.kind)) continue;
    if (internal_is_host && ev.host_id != internal_ip) continue;
    auto ep = parse_endpoint(ev.object.key);
    if (!ep || ep->ip != external_ip) continue;
    const int tier = (ep->port && *ep->port == external_port) ? 0 : 1;
    const bool preceding = ev.timestamp <= alert.timestamp;
    const double gap = std::abs(alert.timestamp - ev.timestamp);
    const bool better = best == nullptr || tier < best_tier ||
                        (tier == best_tier && preceding && !best_preceding) ||
                        (tier == best_tier && preceding == best_preceding && gap < best_gap);
    if (better) {
      best = &ev;
      best_tier = tier;
      best_preceding = preceding;
      best_gap = gap;
    }
  }
  return best;
}

std::string alert_key(const NetworkAlert& a) {
  nlohmann::json ts = a.timestamp;
  return a.signature + " @" + ts.dump() + " " + a.src_ip + ">" + a.dst_ip;
}

}  // namespace

std::string_view to_string(NodeKind kind) { return kNodeKindNames[static_cast<std::size_t>(kind)]; }
std::string_view to_string(Relation relation) { return kRelationNames[static_cast<std::size_t>(relation)]; }

std::optional<NodeKind> node_kind_from_string(std::string_view text) {
  for (std::size_t i = 0; i < kNodeKindNames.size(); ++i) {
    if (kNodeKindNames[i] == text) return static_cast<NodeKind>(i);
  }
  return std::nullopt;
}

std::optional<Relation> relation_from_string(std::string_view text) {
  for (std::size_t i = 0; i < kRelationNames.size(); ++i) {
    if (kRelationNames[i] == text) return static_cast<Relation>(i);
  }
  return std::nullopt;
}

NodeKind node_kind(EntityKind kind) { return static_cast<NodeKind>(static_cast<int>(kind)); }

Relation relation_for(EventKind kind) {
  switch (kind) {
    case EventKind::ProcessCreate: return Relation::spawn;
    case EventKind::FileCreate:
    case EventKind::FileWrite: return Relation::write;
    case EventKind::FileRead: return Relation::read;
    case EventKind::FileExec: return Relation::exec;
    case EventKind::RegistryWrite: return Relation::registry_write;
    case EventKind::NetConnect: return Relation::connect;
    case EventKind::NetSend: return Relation::send;
    case EventKind::NetRecv: return Relation::recv;
  }
  return Relation::exec;
}

std::optional<int> ProvenanceGraph::find(NodeKind kind, std::string_view key) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].kind == kind && nodes[i].key == key) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::vector<TelemetryWindow> window_events(const std::vector<HostEvent>& events,
                                           const std::vector<NetworkAlert>& alerts, double window_len) {
  std::vector<TelemetryWindow> windows;
  if (events.empty() && alerts.empty()) return windows;
  double origin = std::numeric_limits<double>::infinity();
  double last = -std::numeric_limits<double>::infinity();
  for (const auto& e : events) {
    origin = std::min(origin, e.timestamp);
    last = std::max(last, e.timestamp);
  }
  for (const auto& a : alerts) {
    origin = std::min(origin, a.timestamp);
    last = std::max(last, a.timestamp);
  }
  const auto slot = [&](double ts) { return static_cast<std::size_t>(std::floor((ts - origin) / window_len)); };
  const std::size_t count = slot(last) + 1;
  windows.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    windows[i].index = static_cast<int>(i);
    windows[i].start = origin + static_cast<double>(i) * window_len;
  }
  for (const auto& e : events) windows[slot(e.timestamp)].events.push_back(e);
  for (const auto& a : alerts) windows[slot(a.timestamp)].alerts.push_back(a);
  return windows;
}

ProvenanceGraph build_graph(const TelemetryWindow& window) {
  GraphAssembler g;
  std::set<std::string> hosts;

  for (const auto& ev : window.events) {
    hosts.insert(ev.host_id);
    g.touch(NodeKind::host, ev.host_id, ev.timestamp);
    Node& subj = g.touch(node_kind(ev.subject.kind), ev.subject.key, ev.timestamp);
    if (ev.user && !subj.user && subj.kind == NodeKind::process) subj.user = ev.user;
    const bool self_start = ev.subject == ev.object;
    if (ev.kind == EventKind::ProcessCreate) {
      Node& child = g.touch(node_kind(ev.object.kind), ev.object.key, ev.timestamp);
      if (ev.command && !child.command) child.command = ev.command;
      if (ev.user && !child.user && child.kind == NodeKind::process) child.user = ev.user;
    } else {
      if (ev.command && !subj.command && subj.kind == NodeKind::process) subj.command = ev.command;
      g.touch(node_kind(ev.object.kind), ev.object.key, ev.timestamp);
    }
    // A process starting with no distinct parent is recorded as exec on itself.
    const Relation rel = (ev.kind == EventKind::ProcessCreate && self_start) ? Relation::exec : relation_for(ev.kind);
    g.add_edge({node_kind(ev.subject.kind), ev.subject.key}, rel, {node_kind(ev.object.kind), ev.object.key},
               ev.timestamp, ev.bytes);
  }

  std::set<std::string> alert_keys;
  for (const auto& alert : window.alerts) {
    bool outbound = true;
    if (!hosts.count(alert.src_ip) && hosts.count(alert.dst_ip)) outbound = false;
    const std::string& internal_ip = outbound ? alert.src_ip : alert.dst_ip;
    const std::string& external_ip = outbound ? alert.dst_ip : alert.src_ip;
    const int external_port = outbound ? alert.dst_port : alert.src_port;
    const bool internal_is_host = hosts.count(internal_ip) > 0;

    std::string key = alert_key(alert);
    for (int dup = 2; alert_keys.count(key); ++dup) key = alert_key(alert) + " #" + std::to_string(dup);
    alert_keys.insert(key);

    Node& a = g.touch(NodeKind::alert, key, alert.timestamp);
    a.signature = alert.signature;
    a.category = alert.category;
    a.severity = alert.severity;
    a.protocol = alert.protocol;
    a.remote_ip = external_ip;
    a.remote_port = external_port;
    a.outbound = outbound;
    g.touch(NodeKind::ip, external_ip, alert.timestamp);
    g.touch(NodeKind::host, internal_ip, alert.timestamp);

    const HostEvent* cause =
        responsible_event(window, alert, internal_ip, external_ip, external_port, internal_is_host);
    const NodeId target = cause ? NodeId{node_kind(cause->subject.kind), cause->subject.key}
                                : NodeId{NodeKind::host, internal_ip};
    g.add_edge({NodeKind::alert, key}, Relation::triggered_by, target, alert.timestamp, std::nullopt);
  }

  return g.finish(window.index, window.start);
}

std::string to_json(const ProvenanceGraph& graph) {
  nlohmann::ordered_json doc;
  doc["window_index"] = graph.window_index;
  doc["window_start"] = graph.window_start;
  auto& nodes = doc["nodes"] = nlohmann::ordered_json::array();
  for (const auto& n : graph.nodes) {
    nlohmann::ordered_json j;
    j["kind"] = to_string(n.kind);
    j["key"] = n.key;
    j["first_seen"] = n.first_seen;
    auto& attrs = j["attrs"] = nlohmann::ordered_json::object();
    if (n.command) attrs["command"] = *n.command;
    if (n.user) attrs["user"] = *n.user;
    if (n.signature) attrs["signature"] = *n.signature;
    if (n.category) attrs["category"] = *n.category;
    if (n.severity) attrs["severity"] = *n.severity;
    if (n.protocol) attrs["protocol"] = to_string(*n.protocol);
    if (n.remote_ip) attrs["ip"] = *n.remote_ip;
    if (n.remote_port) attrs["port"] = *n.remote_port;
    if (n.kind == NodeKind::alert) attrs["outbound"] = n.outbound;
    nodes.push_back(std::move(j));
  }
  auto& edges = doc["edges"] = nlohmann::ordered_json::array();
  for (const auto& e : graph.edges) {
    nlohmann::ordered_json j;
    j["src"] = e.src;
    j["relation"] = to_string(e.relation);
    j["dst"] = e.dst;
    j["ts"] = e.timestamp;
    j["count"] = e.count;
    if (e.bytes) j["bytes"] = *e.bytes;
    edges.push_back(std::move(j));
  }
  return doc.dump();
}

ProvenanceGraph graph_from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed graph document: ") + e.what());
  }
  try {
    ProvenanceGraph g;
    g.window_index = doc.at("window_index").get<int>();
    g.window_start = doc.at("window_start").get<double>();
    for (const auto& j : doc.at("nodes")) {
      Node n;
      auto kind = node_kind_from_string(j.at("kind").get<std::string>());
      if (!kind) throw InputError("unknown node kind");
      n.kind = *kind;
      n.key = j.at("key").get<std::string>();
      n.first_seen = j.at("first_seen").get<double>();
      const auto& attrs = j.at("attrs");
      auto str = [&](const char* f) -> std::optional<std::string> {
        if (attrs.contains(f)) return attrs.at(f).get<std::string>();
        return std::nullopt;
      };
      n.command = str("command");
      n.user = str("user");
      n.signature = str("signature");
      n.category = str("category");
      if (attrs.contains("severity")) n.severity = attrs.at("severity").get<double>();
      if (auto p = str("protocol")) n.protocol = protocol_from_string(*p);
      n.remote_ip = str("ip");
      if (attrs.contains("port")) n.remote_port = attrs.at("port").get<int>();
      if (attrs.contains("outbound")) n.outbound = attrs.at("outbound").get<bool>();
      g.nodes.push_back(std::move(n));
    }
    for (const auto& j : doc.at("edges")) {
      Edge e;
      auto rel = relation_from_string(j.at("relation").get<std::string>());
      if (!rel) throw InputError("unknown relation");
      e.relation = *rel;
      e.src = j.at("src").get<int>();
      e.dst = j.at("dst").get<int>();
      e.timestamp = j.at("ts").get<double>();
      e.count = j.at("count").get<int>();
      if (j.contains("bytes")) e.bytes = j.at("bytes").get<std::uint64_t>();
      const int n = static_cast<int>(g.nodes.size());
      if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n) throw InputError("edge endpoint out of range");
      g.edges.push_back(e);
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("invalid graph document: ") + e.what());
  }
}

}  // namespace stagefinder
