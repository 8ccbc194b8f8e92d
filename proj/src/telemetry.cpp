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

#include "stagefinder/telemetry.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <sstream>
#include <utility>

#include "json.hpp"

namespace stagefinder {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::array<std::pair<EventKind, std::string_view>, 9> kEventNames{{
    {EventKind::ProcessCreate, "ProcessCreate"},
    {EventKind::FileCreate, "FileCreate"},
    {EventKind::FileRead, "FileRead"},
    {EventKind::FileWrite, "FileWrite"},
    {EventKind::FileExec, "FileExec"},
    {EventKind::RegistryWrite, "RegistryWrite"},
    {EventKind::NetConnect, "NetConnect"},
    {EventKind::NetSend, "NetSend"},
    {EventKind::NetRecv, "NetRecv"},
}};

constexpr std::array<std::pair<EntityKind, std::string_view>, 6> kEntityNames{{
    {EntityKind::process, "process"},
    {EntityKind::file, "file"},
    {EntityKind::socket, "socket"},
    {EntityKind::user, "user"},
    {EntityKind::host, "host"},
    {EntityKind::ip, "ip"},
}};

constexpr std::array<std::pair<Protocol, std::string_view>, 4> kProtocolNames{{
    {Protocol::tcp, "tcp"},
    {Protocol::udp, "udp"},
    {Protocol::icmp, "icmp"},
    {Protocol::other, "other"},
}};

template <typename Enum, std::size_t N>
std::string_view name_of(const std::array<std::pair<Enum, std::string_view>, N>& table, Enum value) {
  for (const auto& [e, name] : table) {
    if (e == value) return name;
  }
  return "?";
}

template <typename Enum, std::size_t N>
std::optional<Enum> parse_name(const std::array<std::pair<Enum, std::string_view>, N>& table,
                               std::string_view text) {
  for (const auto& [e, name] : table) {
    if (name == text) return e;
  }
  return std::nullopt;
}

const ordered_json& require(const ordered_json& doc, const char* field, std::size_t line) {
  auto it = doc.find(field);
  if (it == doc.end() || it->is_null()) throw FieldError(line, field);
  return *it;
}

std::string require_string(const ordered_json& doc, const char* field, std::size_t line) {
  const auto& v = require(doc, field, line);
  if (!v.is_string()) throw ParseError(line, std::string("field '") + field + "' must be a string");
  return v.get<std::string>();
}

double require_number(const ordered_json& doc, const char* field, std::size_t line) {
  const auto& v = require(doc, field, line);
  if (v.is_number()) return v.get<double>();
  // Numeric strings ("1.0") are accepted; some exporters quote every value.
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec == std::errc() && ptr == s.data() + s.size()) return out;
  }
  throw ParseError(line, std::string("field '") + field + "' must be a number");
}

int require_port(const ordered_json& doc, const char* field, std::size_t line) {
  const double v = require_number(doc, field, line);
  if (v != std::floor(v)) throw ParseError(line, std::string("field '") + field + "' must be an integer");
  if (v < 0 || v > 65535) throw RangeError("line " + std::to_string(line) + ": " + field + " out of [0, 65535]");
  return static_cast<int>(v);
}

std::optional<std::string> optional_string(const ordered_json& doc, const char* field, std::size_t line) {
  auto it = doc.find(field);
  if (it == doc.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ParseError(line, std::string("field '") + field + "' must be a string");
  return it->get<std::string>();
}

ordered_json parse_line(std::string_view text, std::size_t line) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line, std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError(line, "record is not a JSON object");
  return doc;
}

template <typename Record, typename Fn>
std::vector<Record> parse_lines(std::istream& in, Fn&& parse_one) {
  std::vector<Record> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(parse_one(parse_line(text, line), line));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Record& a, const Record& b) { return a.timestamp < b.timestamp; });
  return out;
}

HostEvent parse_host_event(const ordered_json& doc, std::size_t line) {
  HostEvent ev;
  ev.timestamp = require_number(doc, "ts", line);
  ev.host_id = require_string(doc, "host", line);
  const auto kind_text = require_string(doc, "kind", line);
  auto kind = event_kind_from_string(kind_text);
  if (!kind) throw ParseError(line, "unknown event kind '" + kind_text + "'");
  ev.kind = *kind;

  auto entity = [&](const char* kind_field, const char* key_field) {
    const auto k = require_string(doc, kind_field, line);
    auto ek = entity_kind_from_string(k);
    if (!ek) throw ParseError(line, "unknown entity kind '" + k + "'");
    return EntityRef{*ek, require_string(doc, key_field, line)};
  };
  ev.subject = entity("subj_kind", "subj_key");
  ev.object = entity("obj_kind", "obj_key");
  ev.command = optional_string(doc, "cmd", line);
  ev.user = optional_string(doc, "user", line);
  if (auto it = doc.find("bytes"); it != doc.end() && !it->is_null()) {
    if (!it->is_number_integer() || it->get<std::int64_t>() < 0) {
      throw ParseError(line, "field 'bytes' must be a non-negative integer");
    }
    ev.bytes = it->get<std::uint64_t>();
  }
  try {
    validate(ev);
  } catch (const Error& e) {
    throw RangeError("line " + std::to_string(line) + ": " + e.what());
  }
  return ev;
}

NetworkAlert parse_alert(const ordered_json& doc, std::size_t line) {
  NetworkAlert a;
  a.timestamp = require_number(doc, "ts", line);
  a.signature = require_string(doc, "sig", line);
  a.severity = require_number(doc, "sev", line);
  const auto proto = require_string(doc, "proto", line);
  auto p = protocol_from_string(proto);
  if (!p) throw ParseError(line, "unknown protocol '" + proto + "'");
  a.protocol = *p;
  a.category = require_string(doc, "cat", line);
  a.src_ip = require_string(doc, "src_ip", line);
  a.src_port = require_port(doc, "src_port", line);
  a.dst_ip = require_string(doc, "dst_ip", line);
  a.dst_port = require_port(doc, "dst_port", line);
  try {
    validate(a);
  } catch (const Error& e) {
    throw RangeError("line " + std::to_string(line) + ": " + e.what());
  }
  return a;
}

}  // namespace

std::string_view to_string(EventKind kind) { return name_of(kEventNames, kind); }
std::string_view to_string(EntityKind kind) { return name_of(kEntityNames, kind); }
std::string_view to_string(Protocol proto) { return name_of(kProtocolNames, proto); }

std::optional<EventKind> event_kind_from_string(std::string_view text) {
  return parse_name(kEventNames, text);
}
std::optional<EntityKind> entity_kind_from_string(std::string_view text) {
  return parse_name(kEntityNames, text);
}
std::optional<Protocol> protocol_from_string(std::string_view text) {
  return parse_name(kProtocolNames, text);
}

bool carries_bytes(EventKind kind) {
  return kind == EventKind::NetSend || kind == EventKind::NetRecv || kind == EventKind::FileRead ||
         kind == EventKind::FileWrite;
}

bool is_network_event(EventKind kind) {
  return kind == EventKind::NetConnect || kind == EventKind::NetSend || kind == EventKind::NetRecv;
}

void validate(const HostEvent& event) {
  if (!std::isfinite(event.timestamp) || event.timestamp < 0) {
    throw RangeError("timestamp must be finite and non-negative");
  }
  if (event.subject.key.empty() || event.object.key.empty()) {
    throw RangeError("entity key must be non-empty");
  }
  const bool self_start = event.kind == EventKind::FileExec || event.kind == EventKind::ProcessCreate;
  if (event.subject == event.object && !self_start) {
    throw RangeError("subject equals object for " + std::string(to_string(event.kind)));
  }
  if (event.bytes && !carries_bytes(event.kind)) {
    throw RangeError("bytes not allowed for " + std::string(to_string(event.kind)));
  }
}

void validate(const NetworkAlert& alert) {
  if (!std::isfinite(alert.timestamp) || alert.timestamp < 0) {
    throw RangeError("timestamp must be finite and non-negative");
  }
  if (!(alert.severity >= 0.0 && alert.severity <= 1.0)) {
    throw RangeError("severity out of [0, 1]");
  }
  if (alert.src_port < 0 || alert.src_port > 65535 || alert.dst_port < 0 || alert.dst_port > 65535) {
    throw RangeError("port out of [0, 65535]");
  }
}

std::vector<HostEvent> parse_host_events(std::istream& in) {
  return parse_lines<HostEvent>(in, parse_host_event);
}

std::vector<HostEvent> parse_host_events(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_host_events(in);
}

std::vector<NetworkAlert> parse_alerts(std::istream& in) {
  return parse_lines<NetworkAlert>(in, parse_alert);
}

std::vector<NetworkAlert> parse_alerts(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_alerts(in);
}

std::string to_jsonl(const HostEvent& event) {
  ordered_json doc;
  doc["ts"] = event.timestamp;
  doc["host"] = event.host_id;
  doc["kind"] = to_string(event.kind);
  doc["subj_kind"] = to_string(event.subject.kind);
  doc["subj_key"] = event.subject.key;
  doc["obj_kind"] = to_string(event.object.kind);
  doc["obj_key"] = event.object.key;
  if (event.command) doc["cmd"] = *event.command;
  if (event.user) doc["user"] = *event.user;
  if (event.bytes) doc["bytes"] = *event.bytes;
  return doc.dump();
}

std::string to_jsonl(const NetworkAlert& alert) {
  ordered_json doc;
  doc["ts"] = alert.timestamp;
  doc["sig"] = alert.signature;
  doc["sev"] = alert.severity;
  doc["proto"] = to_string(alert.protocol);
  doc["cat"] = alert.category;
  doc["src_ip"] = alert.src_ip;
  doc["src_port"] = alert.src_port;
  doc["dst_ip"] = alert.dst_ip;
  doc["dst_port"] = alert.dst_port;
  return doc.dump();
}

std::optional<Endpoint> parse_endpoint(std::string_view key) {
  if (key.empty()) return std::nullopt;
  const auto colon = key.rfind(':');
  if (colon == std::string_view::npos) return Endpoint{std::string(key), std::nullopt};
  int port = 0;
  const auto digits = key.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
  return Endpoint{std::string(key.substr(0, colon)), port};
}

}  // namespace stagefinder
