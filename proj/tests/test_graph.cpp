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

#include <algorithm>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "stagefinder/graph.hpp"
#include "stagefinder/telemetry.hpp"

using namespace stagefinder;

namespace {

ProvenanceGraph intrusion_graph() {
  const auto events = parse_host_events(fixtures::read_text(fixtures::data_path("intrusion_events.jsonl")));
  const auto alerts = parse_alerts(fixtures::read_text(fixtures::data_path("intrusion_alerts.jsonl")));
  const auto windows = window_events(events, alerts);
  REQUIRE(windows.size() == 1);
  return build_graph(windows[0]);
}

HostEvent ev(double ts, EventKind kind, EntityRef subj, EntityRef obj, std::optional<std::uint64_t> bytes = {}) {
  HostEvent e;
  e.timestamp = ts;
  e.host_id = "10.0.0.5";
  e.kind = kind;
  e.subject = std::move(subj);
  e.object = std::move(obj);
  e.bytes = bytes;
  return e;
}

NetworkAlert alert(double ts, std::string src, std::string dst, int dst_port = 443) {
  NetworkAlert a;
  a.timestamp = ts;
  a.signature = "sig";
  a.severity = 0.5;
  a.category = "cat";
  a.src_ip = std::move(src);
  a.src_port = 5000;
  a.dst_ip = std::move(dst);
  a.dst_port = dst_port;
  return a;
}

const EntityRef proc_a{EntityKind::process, "10.0.0.5/pid:1/a.exe"};
const EntityRef proc_b{EntityKind::process, "10.0.0.5/pid:2/b.exe"};

}  // namespace

TEST_CASE("fused intrusion window matches the golden snapshot") {
  const auto golden = nlohmann::json::parse(fixtures::read_text(fixtures::data_path("intrusion_golden.json")));
  const auto g = intrusion_graph();
  CHECK(nlohmann::json::parse(to_json(g)) == golden);
  const auto alert_idx = g.find(NodeKind::alert, g.nodes[6].key);
  const auto wget = g.find(NodeKind::process, "10.1.1.45/pid:4200/wget.exe");
  REQUIRE(alert_idx);
  REQUIRE(wget);
  const bool linked = std::any_of(g.edges.begin(), g.edges.end(), [&](const Edge& e) {
    return e.relation == Relation::triggered_by && e.src == *alert_idx && e.dst == *wget;
  });
  CHECK(linked);
  CHECK(g.find(NodeKind::ip, "203.0.113.10"));
  CHECK(g.find(NodeKind::host, "10.1.1.45"));
}

TEST_CASE("graph json round-trips") {
  const auto g = intrusion_graph();
  CHECK(graph_from_json(to_json(g)) == g);
  CHECK_THROWS_AS(graph_from_json("{\"nodes\": 3}"), InputError);
}

TEST_CASE("windows are half-open and aligned to the first record") {
  std::vector<HostEvent> events = {ev(10, EventKind::FileRead, proc_a, {EntityKind::file, "f"}),
                                   ev(290, EventKind::FileRead, proc_a, {EntityKind::file, "f"}),
                                   ev(310, EventKind::FileRead, proc_a, {EntityKind::file, "f"})};
  const auto w = window_events(events, {});
  REQUIRE(w.size() == 2);
  CHECK(w[0].start == 10.0);
  CHECK(w[0].events.size() == 2);
  CHECK(w[1].events.size() == 1);
  CHECK(window_events({}, {}).empty());

  const auto w2 = window_events({events[0]}, {alert(315, "10.0.0.5", "8.8.8.8")});
  REQUIRE(w2.size() == 2);
  CHECK(w2[1].events.empty());
  CHECK(w2[1].alerts.size() == 1);

  const auto gap = window_events({events[0], ev(1000, EventKind::FileRead, proc_a, {EntityKind::file, "f"})}, {});
  REQUIRE(gap.size() == 4);
  CHECK(build_graph(gap[1]).nodes.empty());
  CHECK(build_graph(gap[1]).edges.empty());
}

TEST_CASE("repeated events aggregate into one edge") {
  TelemetryWindow w;
  w.events = {ev(3, EventKind::NetSend, proc_a, {EntityKind::ip, "1.2.3.4"}, 100),
              ev(1, EventKind::NetSend, proc_a, {EntityKind::ip, "1.2.3.4"}, 50),
              ev(2, EventKind::FileRead, proc_a, {EntityKind::file, "f"}, 7)};
  std::stable_sort(w.events.begin(), w.events.end(),
                   [](const HostEvent& a, const HostEvent& b) { return a.timestamp < b.timestamp; });
  const auto g = build_graph(w);
  int total = 0;
  for (const auto& e : g.edges) {
    if (e.relation == Relation::self_loop || e.relation == Relation::triggered_by) continue;
    total += e.count;
    if (e.relation == Relation::send) {
      CHECK(e.count == 2);
      CHECK(e.bytes == 150u);
      CHECK(e.timestamp == 1.0);
    }
  }
  CHECK(total == 3);
  const auto loops = std::count_if(g.edges.begin(), g.edges.end(),
                                   [](const Edge& e) { return e.relation == Relation::self_loop; });
  CHECK(static_cast<std::size_t>(loops) == g.nodes.size());
}

TEST_CASE("event kinds map to relations") {
  CHECK(relation_for(EventKind::ProcessCreate) == Relation::spawn);
  CHECK(relation_for(EventKind::FileCreate) == Relation::write);
  CHECK(relation_for(EventKind::FileWrite) == Relation::write);
  CHECK(relation_for(EventKind::FileRead) == Relation::read);
  CHECK(relation_for(EventKind::FileExec) == Relation::exec);
  CHECK(relation_for(EventKind::NetConnect) == Relation::connect);
  CHECK(relation_for(EventKind::NetSend) == Relation::send);
  CHECK(relation_for(EventKind::NetRecv) == Relation::recv);
  CHECK(relation_for(EventKind::RegistryWrite) == Relation::registry_write);
}

TEST_CASE("alert fusion prefers the nearest preceding matching connection") {
  TelemetryWindow w;
  w.events = {ev(1, EventKind::NetConnect, proc_a, {EntityKind::ip, "8.8.8.8"}),
              ev(5, EventKind::NetConnect, proc_b, {EntityKind::ip, "8.8.8.8"}),
              ev(9, EventKind::NetConnect, proc_a, {EntityKind::ip, "9.9.9.9"})};
  w.alerts = {alert(6, "10.0.0.5", "8.8.8.8")};
  const auto g = build_graph(w);
  const auto b = g.find(NodeKind::process, proc_b.key);
  int triggered = 0;
  for (const auto& e : g.edges) {
    if (e.relation != Relation::triggered_by) continue;
    ++triggered;
    CHECK(g.nodes[static_cast<std::size_t>(e.src)].kind == NodeKind::alert);
    CHECK(e.dst == *b);
  }
  CHECK(triggered == 1);
}

TEST_CASE("unmatched alerts fall back to the host node") {
  TelemetryWindow w;
  w.events = {ev(1, EventKind::FileRead, proc_a, {EntityKind::file, "f"})};
  w.alerts = {alert(2, "10.0.0.5", "7.7.7.7")};
  const auto g = build_graph(w);
  const auto host = g.find(NodeKind::host, "10.0.0.5");
  REQUIRE(host);
  bool found = false;
  for (const auto& e : g.edges) {
    if (e.relation == Relation::triggered_by) found = e.dst == *host;
  }
  CHECK(found);
}

TEST_CASE("every alert becomes one alert node with a triggered_by edge") {
  TelemetryWindow w;
  w.events = {ev(1, EventKind::NetConnect, proc_a, {EntityKind::ip, "8.8.8.8"})};
  w.alerts = {alert(2, "10.0.0.5", "8.8.8.8"), alert(2, "10.0.0.5", "8.8.8.8"), alert(3, "4.4.4.4", "10.0.0.5")};
  const auto g = build_graph(w);
  std::set<std::string> keys;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (g.nodes[i].kind != NodeKind::alert) continue;
    keys.insert(g.nodes[i].key);
    const auto out = std::count_if(g.edges.begin(), g.edges.end(), [&](const Edge& e) {
      return e.src == static_cast<int>(i) && e.relation == Relation::triggered_by;
    });
    CHECK(out == 1);
  }
  CHECK(keys.size() == 3);
}

TEST_CASE("graph construction is deterministic and canonical") {
  const auto a = intrusion_graph();
  const auto b = intrusion_graph();
  CHECK(a == b);
  for (std::size_t i = 1; i < a.edges.size(); ++i) {
    const auto& p = a.edges[i - 1];
    const auto& q = a.edges[i];
    CHECK(std::tie(p.src, p.relation, p.dst) < std::tie(q.src, q.relation, q.dst));
  }
  for (std::size_t i = 1; i < a.nodes.size(); ++i) {
    CHECK(std::tie(a.nodes[i - 1].kind, a.nodes[i - 1].key) < std::tie(a.nodes[i].kind, a.nodes[i].key));
  }
}
