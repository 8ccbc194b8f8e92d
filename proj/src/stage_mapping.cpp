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

#include "stagefinder/stage_mapping.hpp"

#include <array>
#include <set>

#include "json.hpp"

namespace stagefinder {

namespace {

constexpr std::array<std::string_view, kNumStages> kStageNames = {
    "Normal",           "Reconnaissance",      "Initial Compromise", "Privilege Escalation",
    "Lateral Movement", "Command and Control", "Exfiltration"};

}  // namespace

std::string_view stage_name(int stage) {
  if (stage < 0 || stage >= kNumStages) throw RangeError("stage id out of range: " + std::to_string(stage));
  return kStageNames[static_cast<std::size_t>(stage)];
}

std::vector<StageDecision> decide(const Eigen::MatrixXd& probs, const std::vector<int>& window_indices,
                                  const std::vector<double>& window_starts) {
  if (probs.cols() > 0 && probs.rows() != kNumStages) throw DimensionError("probabilities need one row per stage");
  const auto T = static_cast<std::size_t>(probs.cols());
  if ((!window_indices.empty() && window_indices.size() != T) ||
      (!window_starts.empty() && window_starts.size() != T)) {
    throw InputError("window metadata does not match the probability columns");
  }
  std::vector<StageDecision> out;
  out.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto col = static_cast<Eigen::Index>(t);
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < probs.rows(); ++k) {
      if (probs(k, col) > probs(best, col)) best = k;
    }
    StageDecision d;
    d.window_index = window_indices.empty() ? static_cast<int>(t) : window_indices[t];
    d.window_start = window_starts.empty() ? d.window_index * kWindowSeconds : window_starts[t];
    d.stage = static_cast<int>(best);
    d.stage_name = std::string(stage_name(d.stage));
    d.confidence = probs(best, col);
    if (t > 0) d.previous_stage = out.back().stage;
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<TransitionEvent> transitions(const std::vector<StageDecision>& decisions) {
  std::vector<TransitionEvent> out;
  for (std::size_t t = 1; t < decisions.size(); ++t) {
    if (decisions[t].stage == decisions[t - 1].stage) continue;
    out.push_back({decisions[t - 1].stage, decisions[t].stage, decisions[t].window_index, decisions[t].confidence});
  }
  return out;
}

void export_alerts(const std::vector<StageDecision>& decisions, const std::vector<TransitionEvent>& events,
                   std::ostream& sink) {
  std::set<int> transition_windows;
  for (const auto& e : events) transition_windows.insert(e.window_index);
  for (const auto& d : decisions) {
    nlohmann::ordered_json rec;
    rec["schema"] = kStageAlertSchema;
    rec["ts"] = d.window_start;
    rec["window"] = d.window_index;
    rec["stage_id"] = d.stage;
    rec["stage_name"] = d.stage_name;
    rec["confidence"] = d.confidence;
    rec["prev_stage_id"] = d.previous_stage ? nlohmann::ordered_json(*d.previous_stage) : nlohmann::ordered_json();
    rec["is_transition"] = transition_windows.count(d.window_index) > 0;
    sink << rec.dump() << '\n';
  }
  sink.flush();
  if (!sink) throw Error("failed to write stage alerts");
}

}  // namespace stagefinder
