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

// Discrete stage decisions, transitions, and the structured alert stream.

#pragma once

#include <Eigen/Dense>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "stagefinder/common.hpp"

namespace stagefinder {

inline constexpr std::string_view kStageAlertSchema = "stagefinder-stage-alert/1";

/// "Normal" for 0, then the six attack stages in kill-chain order.
std::string_view stage_name(int stage);

struct StageDecision {
  int window_index = 0;
  double window_start = 0.0;
  int stage = 0;
  std::string stage_name;
  double confidence = 0.0;
  std::optional<int> previous_stage;
};

struct TransitionEvent {
  int from_stage = 0;
  int to_stage = 0;
  int window_index = 0;
  double confidence_after = 0.0;
};

/// Argmax per column of probs (K x T), ties to the smallest stage. Window
/// indices default to 0..T-1 and starts to index * window length.
std::vector<StageDecision> decide(const Eigen::MatrixXd& probs, const std::vector<int>& window_indices = {},
                                  const std::vector<double>& window_starts = {});

std::vector<TransitionEvent> transitions(const std::vector<StageDecision>& decisions);

/// One JSON object per line. Throws Error when the sink fails.
void export_alerts(const std::vector<StageDecision>& decisions, const std::vector<TransitionEvent>& events,
                   std::ostream& sink);

}  // namespace stagefinder
