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

// stagefinder <stage> [--config FILE] [--workdir DIR] [--set key=value ...]

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stagefinder/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDependency = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kill-chain stage estimation over fused provenance graphs"};
  app.require_subcommand(1);
  std::string config_path;
  std::string workdir = ".";
  std::vector<std::string> overrides;
  bool print_config = false;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--workdir", workdir, "Directory holding inputs and artifacts");
  app.add_option("--set", overrides, "Override a config field, e.g. pretrain.epochs=5");
  app.add_flag("--print-config", print_config, "Print the effective config before running");

  const std::vector<std::pair<std::string, std::string>> stages = {
      {"generate", "Write a synthetic labeled scenario (events, alerts, labels)"},
      {"build-graphs", "Window the telemetry and build fused provenance graphs"},
      {"fit-features", "Fit the vocabulary and normalization on the training block"},
      {"pretrain", "Self-supervised pretraining"},
      {"finetune", "Two-phase supervised fine-tuning"},
      {"evaluate", "Temporal k-fold evaluation"},
      {"infer", "Export per-window stage alerts"},
      {"export-attention", "Export readout attention per node"}};
  for (const auto& [name, help] : stages) {
    auto* sub = app.add_subcommand(name, help);
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    const auto cfg = stagefinder::PipelineConfig::load(config_path, overrides);
    if (print_config) std::cout << cfg.to_json() << '\n';
    stagefinder::Pipeline pipeline(cfg, workdir);
    const std::string stage = app.get_subcommands().front()->get_name();
    pipeline.run(stage);
    std::cerr << stage << ": done\n";
    return kExitOk;
  } catch (const stagefinder::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const stagefinder::DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << '\n';
    return kExitDependency;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
}
