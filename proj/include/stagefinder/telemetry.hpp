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

// Raw telemetry model: host events, network alerts, their JSONL wire format,
// and the synthetic kill-chain scenario generator.

#pragma once

#include <compare>
#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stagefinder/common.hpp"

namespace stagefinder {

enum class EventKind {
  ProcessCreate,
  FileCreate,
  FileRead,
  FileWrite,
  FileExec,
  RegistryWrite,
  NetConnect,
  NetSend,
  NetRecv,
};

enum class EntityKind { process, file, socket, user, host, ip };

enum class Protocol { tcp, udp, icmp, other };

std::string_view to_string(EventKind kind);
std::string_view to_string(EntityKind kind);
std::string_view to_string(Protocol proto);
std::optional<EventKind> event_kind_from_string(std::string_view text);
std::optional<EntityKind> entity_kind_from_string(std::string_view text);
std::optional<Protocol> protocol_from_string(std::string_view text);

/// True for the kinds that may carry a byte count.
bool carries_bytes(EventKind kind);

/// True for NetConnect / NetSend / NetRecv.
bool is_network_event(EventKind kind);

struct EntityRef {
  EntityKind kind = EntityKind::process;
  std::string key;

  auto operator<=>(const EntityRef&) const = default;
};

struct HostEvent {
  double timestamp = 0.0;
  std::string host_id;
  EventKind kind = EventKind::ProcessCreate;
  EntityRef subject;
  EntityRef object;
  std::optional<std::string> command;
  std::optional<std::string> user;
  std::optional<std::uint64_t> bytes;

  bool operator==(const HostEvent&) const = default;
};

struct NetworkAlert {
  double timestamp = 0.0;
  std::string signature;
  double severity = 0.0;
  Protocol protocol = Protocol::tcp;
  std::string category;
  std::string src_ip;
  int src_port = 0;
  std::string dst_ip;
  int dst_port = 0;

  bool operator==(const NetworkAlert&) const = default;
};

/// Throws RangeError / InputError when a record breaks its invariants.
void validate(const HostEvent& event);
void validate(const NetworkAlert& alert);

/// Parses line-delimited JSON host events, sorted stably by timestamp.
/// Blank lines are skipped. Errors carry the 1-based line number.
std::vector<HostEvent> parse_host_events(std::istream& in);
std::vector<HostEvent> parse_host_events(std::string_view text);

std::vector<NetworkAlert> parse_alerts(std::istream& in);
std::vector<NetworkAlert> parse_alerts(std::string_view text);

/// One JSONL line (no trailing newline).
std::string to_jsonl(const HostEvent& event);
std::string to_jsonl(const NetworkAlert& alert);

/// Splits "a.b.c.d:port" or "a.b.c.d" into address and optional port.
struct Endpoint {
  std::string ip;
  std::optional<int> port;
};
std::optional<Endpoint> parse_endpoint(std::string_view key);

// ---------------------------------------------------------------------------
// Synthetic scenarios

struct StageInterval {
  int stage = 1;  // 1..6
  double start = 0.0;  // seconds from scenario start
  double end = 0.0;
};

struct ScenarioConfig {
  int num_hosts = 2;
  double duration = 3600.0;
  std::vector<StageInterval> stage_schedule;
  double benign_event_rate = 0.02;  // per host, events per second
  double attack_event_rate = 0.02;  // template instances per second
  std::uint64_t seed = 1;
  double start_time = 1'700'000'000.0;  // epoch seconds of t = 0
};

void validate(const ScenarioConfig& cfg);

struct Scenario {
  std::vector<HostEvent> events;
  std::vector<NetworkAlert> alerts;
  std::vector<int> window_labels;  // one per 300 s window from start_time
};

/// Deterministic for a fixed seed. Labels are assigned per window to the
/// class (benign remainder or stage) covering the largest share of it.
Scenario generate_scenario(const ScenarioConfig& cfg);

/// Random kill chain over `num_windows` windows: stages 1..6 in order with
/// window-aligned intervals and benign gaps. Returns intervals relative to
/// the scenario start.
std::vector<StageInterval> random_kill_chain(Rng& rng, int num_windows, int min_stage_windows = 2,
                                             int max_stage_windows = 4, int max_gap_windows = 2);

/// Labels for `num_windows` windows given a schedule (plurality overlap).
std::vector<int> label_windows(const std::vector<StageInterval>& schedule, int num_windows,
                               double window_len = kWindowSeconds);

/// Host addresses the generator assigns, host i -> "10.1.1.<45+i>".
std::string generated_host_ip(int host_index);

}  // namespace stagefinder
