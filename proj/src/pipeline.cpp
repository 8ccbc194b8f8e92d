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

#include "stagefinder/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "stagefinder/evaluation.hpp"
#include "stagefinder/stage_mapping.hpp"

namespace stagefinder {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kGraphs = "graphs.jsonl";
constexpr const char* kFeatures = "features.json";
constexpr const char* kPretrained = "pretrained.ckpt";
constexpr const char* kModel = "model.ckpt";

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  out.close();
  if (!out) throw Error("cannot write " + path.string());
}

ojson pretrain_json(const PretrainConfig& c) {
  return {{"seq_len", c.seq_len}, {"tau", c.tau},       {"negatives", c.negatives},
          {"lambda_pred", c.lambda_pred}, {"lambda_ctr", c.lambda_ctr}, {"lr", c.lr},
          {"weight_decay", c.weight_decay}, {"batch", c.batch}, {"epochs", c.epochs},
          {"clip", c.clip}, {"seed", c.seed}, {"train_encoder", c.train_encoder}};
}

ojson finetune_json(const FinetuneConfig& c) {
  return {{"phase1_epochs", c.phase1_epochs},
          {"phase1_lr", c.phase1_lr},
          {"phase2_epochs", c.phase2_epochs},
          {"phase2_lr", c.phase2_lr},
          {"curriculum_start", c.curriculum_start},
          {"curriculum_end", c.curriculum_end},
          {"patience", c.patience},
          {"eps", c.eps},
          {"batch", c.batch},
          {"weight_decay", c.weight_decay},
          {"clip", c.clip},
          {"seed", c.seed}};
}

ojson layout_json(const FeatureLayout& l) {
  return {{"d_cmd", l.d_cmd},
          {"user_buckets", l.user_buckets},
          {"subnet_buckets", l.subnet_buckets},
          {"category_buckets", l.category_buckets}};
}

/// Reads every key of a section, rejecting unknown ones.
class Section {
 public:
  Section(const ojson& doc, const char* name) : name_(name) {
    if (!doc.contains(name)) return;
    if (!doc.at(name).is_object()) throw ConfigError(std::string("config section '") + name + "' must be an object");
    obj_ = doc.at(name);
  }
  template <typename T>
  void get(const char* key, T& out) {
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const ojson::exception&) {
      throw ConfigError(std::string("config value ") + name_ + "." + key + " has the wrong type");
    }
    obj_.erase(key);
  }
  void finish() const {
    if (!obj_.empty()) throw ConfigError(std::string("unknown config key ") + name_ + "." + obj_.begin().key());
  }

 private:
  std::string name_;
  ojson obj_ = ojson::object();
};

/// Sets a dotted path to a value; the value is parsed as JSON when possible.
void apply_override(ojson& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  ojson value;
  try {
    value = ojson::parse(raw);
  } catch (const ojson::exception&) {
    value = raw;
  }
  ojson* node = &doc;
  std::size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (dot == std::string::npos) {
      if (!node->contains(part)) throw ConfigError("unknown config key " + key);
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) throw ConfigError("unknown config key " + key);
    node = &(*node)[part];
    pos = dot + 1;
  }
}

std::string combine(std::initializer_list<std::string> parts) {
  std::uint64_t h = fnv1a("stagefinder");
  for (const auto& p : parts) h = fnv1a(p, fnv1a("|", h));
  return hex64(h);
}

}  // namespace

std::string PipelineConfig::to_json() const {
  ojson doc;
  doc["data"] = {{"events", events_path}, {"alerts", alerts_path}, {"labels", labels_path}};
  doc["scenario"] = {{"traces", traces},
                     {"trace_windows", trace_windows},
                     {"num_hosts", num_hosts},
                     {"benign_event_rate", benign_event_rate},
                     {"attack_event_rate", attack_event_rate},
                     {"seed", seed}};
  doc["dataset"] = {{"sequence_windows", sequence_windows}, {"val_fraction", val_fraction}, {"folds", folds}};
  doc["features"] = layout_json(layout);
  doc["model"] = ojson::parse(model.to_json());
  doc["pretrain"] = pretrain_json(pretrain);
  doc["finetune"] = finetune_json(finetune);
  return doc.dump(2);
}

PipelineConfig PipelineConfig::from_json(std::string_view text) {
  ojson doc;
  try {
    doc = ojson::parse(text);
  } catch (const ojson::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  PipelineConfig c;
  Section data(doc, "data");
  data.get("events", c.events_path);
  data.get("alerts", c.alerts_path);
  data.get("labels", c.labels_path);
  data.finish();
  Section sc(doc, "scenario");
  sc.get("traces", c.traces);
  sc.get("trace_windows", c.trace_windows);
  sc.get("num_hosts", c.num_hosts);
  sc.get("benign_event_rate", c.benign_event_rate);
  sc.get("attack_event_rate", c.attack_event_rate);
  sc.get("seed", c.seed);
  sc.finish();
  Section ds(doc, "dataset");
  ds.get("sequence_windows", c.sequence_windows);
  ds.get("val_fraction", c.val_fraction);
  ds.get("folds", c.folds);
  ds.finish();
  Section ft(doc, "features");
  ft.get("d_cmd", c.layout.d_cmd);
  ft.get("user_buckets", c.layout.user_buckets);
  ft.get("subnet_buckets", c.layout.subnet_buckets);
  ft.get("category_buckets", c.layout.category_buckets);
  ft.finish();
  Section md(doc, "model");
  md.get("d_h", c.model.d_h);
  md.get("d_g", c.model.d_g);
  md.get("gnn_layers", c.model.gnn_layers);
  md.get("hidden", c.model.hidden);
  md.get("lstm_layers", c.model.lstm_layers);
  md.get("dropout", c.model.dropout);
  md.get("seed", c.model.seed);
  md.finish();
  Section pt(doc, "pretrain");
  auto& p = c.pretrain;
  pt.get("seq_len", p.seq_len);
  pt.get("tau", p.tau);
  pt.get("negatives", p.negatives);
  pt.get("lambda_pred", p.lambda_pred);
  pt.get("lambda_ctr", p.lambda_ctr);
  pt.get("lr", p.lr);
  pt.get("weight_decay", p.weight_decay);
  pt.get("batch", p.batch);
  pt.get("epochs", p.epochs);
  pt.get("clip", p.clip);
  pt.get("seed", p.seed);
  pt.get("train_encoder", p.train_encoder);
  pt.finish();
  Section fn(doc, "finetune");
  auto& f = c.finetune;
  fn.get("phase1_epochs", f.phase1_epochs);
  fn.get("phase1_lr", f.phase1_lr);
  fn.get("phase2_epochs", f.phase2_epochs);
  fn.get("phase2_lr", f.phase2_lr);
  fn.get("curriculum_start", f.curriculum_start);
  fn.get("curriculum_end", f.curriculum_end);
  fn.get("patience", f.patience);
  fn.get("eps", f.eps);
  fn.get("batch", f.batch);
  fn.get("weight_decay", f.weight_decay);
  fn.get("clip", f.clip);
  fn.get("seed", f.seed);
  fn.finish();
  for (const auto& [key, _] : doc.items()) {
    static const std::set<std::string> known{"data", "scenario", "dataset", "features", "model", "pretrain", "finetune"};
    if (!known.count(key)) throw ConfigError("unknown config section " + key);
  }

  if (c.traces < 1 || c.trace_windows < 1 || c.num_hosts < 1) throw ConfigError("scenario sizes must be positive");
  if (c.sequence_windows < 2) throw ConfigError("sequence_windows must be at least 2");
  if (c.val_fraction <= 0.0 || c.val_fraction >= 1.0) throw ConfigError("val_fraction must lie in (0, 1)");
  if (c.folds < 1) throw ConfigError("folds must be positive");
  if (c.layout.d_cmd < 1 || c.layout.user_buckets < 1 || c.layout.subnet_buckets < 1 ||
      c.layout.category_buckets < 1) {
    throw ConfigError("feature sizes must be positive");
  }
  c.model.validate();
  c.pretrain.validate();
  c.finetune.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
  ojson doc = ojson::parse(PipelineConfig{}.to_json());
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    ojson patch;
    try {
      patch = ojson::parse(buf.str());
    } catch (const ojson::exception& e) {
      throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
    doc.merge_patch(patch);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return from_json(doc.dump());
}

std::vector<Trace> make_traces(std::vector<GraphTensors> windows, const std::vector<int>& labels, int length) {
  if (!labels.empty() && labels.size() != windows.size()) throw InputError("label count does not match windows");
  if (length < 1) throw ConfigError("sequence length must be positive");
  std::vector<Trace> out;
  for (std::size_t s = 0; s < windows.size(); s += static_cast<std::size_t>(length)) {
    Trace t;
    const std::size_t end = std::min(windows.size(), s + static_cast<std::size_t>(length));
    for (std::size_t i = s; i < end; ++i) {
      t.windows.push_back(std::move(windows[i]));
      if (!labels.empty()) t.labels.push_back(labels[i]);
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<ProvenanceGraph> build_window_graphs(const std::vector<HostEvent>& events,
                                                 const std::vector<NetworkAlert>& alerts) {
  std::vector<ProvenanceGraph> out;
  for (const auto& w : window_events(events, alerts)) out.push_back(build_graph(w));
  return out;
}

std::vector<int> parse_labels_csv(std::string_view text) {
  std::vector<int> labels;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("window_index", 0) == 0)) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(lineno, "expected window_index,stage_id");
    int window = 0, stage = 0;
    try {
      std::size_t used = 0;
      window = std::stoi(line.substr(0, comma), &used);
      stage = std::stoi(line.substr(comma + 1), &used);
    } catch (const std::exception&) {
      throw ParseError(lineno, "non-numeric label row");
    }
    if (window != static_cast<int>(labels.size())) throw ParseError(lineno, "window indices must be contiguous from 0");
    if (stage < 0 || stage >= kNumStages) throw RangeError("line " + std::to_string(lineno) + ": stage out of range");
    labels.push_back(stage);
  }
  return labels;
}

std::string labels_csv(const std::vector<int>& labels) {
  std::string out = "window_index,stage_id\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out += std::to_string(i) + "," + std::to_string(labels[i]) + "\n";
  return out;
}

std::size_t validation_start(std::size_t n, double fraction) {
  if (n < 2) throw InputError("need at least two sequences for a train/validation split");
  const auto val = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))), 1,
                                           n - 1);
  return n - val;
}

Pipeline::Pipeline(PipelineConfig cfg, fs::path workdir) : cfg_(std::move(cfg)), workdir_(std::move(workdir)) {}

fs::path Pipeline::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() ? p : workdir_ / p;
}

std::string Pipeline::stage_hash(const std::string& stage) const {
  const ojson cfg = ojson::parse(cfg_.to_json());
  if (stage == "generate") return combine({stage, cfg["scenario"].dump()});
  if (stage == "build-graphs") {
    return combine({stage, hex64(fnv1a(read_file(resolve(cfg_.events_path)))),
                    hex64(fnv1a(read_file(resolve(cfg_.alerts_path))))});
  }
  if (stage == "fit-features") {
    return combine({stage, stage_hash("build-graphs"), cfg["features"].dump(),
                    cfg["dataset"]["sequence_windows"].dump(), cfg["dataset"]["val_fraction"].dump()});
  }
  if (stage == "pretrain") {
    return combine({stage, stage_hash("fit-features"), cfg["model"].dump(), cfg["pretrain"].dump()});
  }
  const auto labels = [&] {
    const auto path = resolve(cfg_.labels_path);
    if (!fs::exists(path)) throw DependencyError("missing labels file " + path.string() + " (run generate)");
    return hex64(fnv1a(read_file(path)));
  };
  if (stage == "finetune") return combine({stage, stage_hash("pretrain"), cfg["finetune"].dump(), labels()});
  if (stage == "evaluate") {
    return combine({stage, stage_hash("pretrain"), cfg["finetune"].dump(), cfg["dataset"].dump(), labels()});
  }
  if (stage == "infer" || stage == "export-attention") return combine({stage, stage_hash("finetune")});
  throw ConfigError("unknown stage " + stage);
}

void Pipeline::require(const std::string& stage) const {
  const auto manifest_path = workdir_ / kManifest;
  ojson manifest = ojson::object();
  if (fs::exists(manifest_path)) manifest = ojson::parse(read_file(manifest_path));
  if (!manifest.contains(stage)) throw DependencyError("missing upstream artifacts: run stage '" + stage + "' first");
  for (const auto& a : manifest[stage]["artifacts"]) {
    if (!fs::exists(workdir_ / a.get<std::string>())) {
      throw DependencyError("missing artifact " + a.get<std::string>() + " from stage '" + stage + "'");
    }
  }
  if (manifest[stage]["config_hash"].get<std::string>() != stage_hash(stage)) {
    throw CompatibilityError("artifacts of stage '" + stage + "' were produced under a different configuration");
  }
}

void Pipeline::record(const std::string& stage, const std::vector<std::string>& artifacts) const {
  const auto manifest_path = workdir_ / kManifest;
  ojson manifest = ojson::object();
  if (fs::exists(manifest_path)) manifest = ojson::parse(read_file(manifest_path));
  manifest[stage] = {{"config_hash", stage_hash(stage)}, {"artifacts", artifacts}};
  write_file(manifest_path, manifest.dump(2) + "\n");
}

Scenario generate_corpus(const PipelineConfig& cfg) {
  Scenario corpus;
  Rng chain_rng(mix_seed({cfg.seed, 0xc4a1u}));
  const double duration = cfg.trace_windows * kWindowSeconds;
  for (int i = 0; i < cfg.traces; ++i) {
    ScenarioConfig sc;
    sc.num_hosts = cfg.num_hosts;
    sc.duration = duration;
    sc.benign_event_rate = cfg.benign_event_rate;
    sc.attack_event_rate = cfg.attack_event_rate;
    sc.seed = mix_seed({cfg.seed, static_cast<std::uint64_t>(i)});
    sc.start_time = ScenarioConfig{}.start_time + i * duration;
    sc.stage_schedule = random_kill_chain(chain_rng, cfg.trace_windows);
    auto s = generate_scenario(sc);
    corpus.events.insert(corpus.events.end(), s.events.begin(), s.events.end());
    corpus.alerts.insert(corpus.alerts.end(), s.alerts.begin(), s.alerts.end());
    corpus.window_labels.insert(corpus.window_labels.end(), s.window_labels.begin(), s.window_labels.end());
  }
  return corpus;
}

void Pipeline::generate() {
  const auto corpus = generate_corpus(cfg_);
  std::string ev, al;
  for (const auto& e : corpus.events) ev += to_jsonl(e) + "\n";
  for (const auto& a : corpus.alerts) al += to_jsonl(a) + "\n";
  write_file(resolve(cfg_.events_path), ev);
  write_file(resolve(cfg_.alerts_path), al);
  write_file(resolve(cfg_.labels_path), labels_csv(corpus.window_labels));
  record("generate", {});
}

void Pipeline::build_graphs() {
  const auto events_path = resolve(cfg_.events_path);
  const auto alerts_path = resolve(cfg_.alerts_path);
  if (!fs::exists(events_path) || !fs::exists(alerts_path)) {
    throw DependencyError("missing telemetry input: run stage 'generate' first or set data paths");
  }
  const auto graphs =
      build_window_graphs(parse_host_events(read_file(events_path)), parse_alerts(read_file(alerts_path)));
  std::string out;
  for (const auto& g : graphs) {
    out += ojson::parse(to_json(g)).dump();
    out += '\n';
  }
  write_file(workdir_ / kGraphs, out);
  record("build-graphs", {kGraphs});
}

std::vector<ProvenanceGraph> Pipeline::load_graphs() const {
  require("build-graphs");
  std::vector<ProvenanceGraph> graphs;
  std::istringstream in(read_file(workdir_ / kGraphs));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) graphs.push_back(graph_from_json(line));
  }
  return graphs;
}

void Pipeline::fit_features() {
  const auto graphs = load_graphs();
  // Vocabulary and statistics come from the training block only.
  const auto n_seq = (graphs.size() + static_cast<std::size_t>(cfg_.sequence_windows) - 1) /
                     static_cast<std::size_t>(cfg_.sequence_windows);
  const auto train_windows =
      std::min(graphs.size(), validation_start(n_seq, cfg_.val_fraction) * static_cast<std::size_t>(cfg_.sequence_windows));
  const std::vector<ProvenanceGraph> train(graphs.begin(), graphs.begin() + static_cast<std::ptrdiff_t>(train_windows));
  const FeatureSpec spec = fit_feature_spec(train, cfg_.layout);
  ojson doc;
  doc["config_hash"] = stage_hash("fit-features");
  doc["spec"] = ojson::parse(spec.to_json());
  write_file(workdir_ / kFeatures, doc.dump(2) + "\n");
  record("fit-features", {kFeatures});
}

FeatureSpec Pipeline::load_features() const {
  require("fit-features");
  const auto doc = ojson::parse(read_file(workdir_ / kFeatures));
  if (doc.at("config_hash").get<std::string>() != stage_hash("fit-features")) {
    throw CompatibilityError("feature spec hash does not match the manifest");
  }
  return FeatureSpec::from_json(doc.at("spec").dump());
}

std::vector<Trace> Pipeline::load_traces(const FeatureSpec& spec) const {
  const auto graphs = load_graphs();
  std::vector<GraphTensors> windows;
  windows.reserve(graphs.size());
  for (const auto& g : graphs) windows.push_back(featurize(g, spec));
  std::vector<int> labels;
  const auto labels_path = resolve(cfg_.labels_path);
  if (fs::exists(labels_path)) {
    labels = parse_labels_csv(read_file(labels_path));
    if (labels.size() != windows.size()) {
      throw InputError("labels cover " + std::to_string(labels.size()) + " windows but the telemetry has " +
                       std::to_string(windows.size()));
    }
  }
  return make_traces(std::move(windows), labels, cfg_.sequence_windows);
}

StageModel Pipeline::load_model(const std::string& stage, const std::string& file, const FeatureSpec& spec) const {
  require(stage);
  const Checkpoint ckpt = load_checkpoint((workdir_ / file).string());
  if (ckpt.config_hash != stage_hash(stage)) throw CompatibilityError(file + " hash does not match the manifest");
  return StageModel(cfg_.model, spec, ckpt);
}

namespace {

void require_labels(const std::vector<Trace>& traces) {
  for (const auto& t : traces) {
    if (t.labels.size() != t.windows.size()) throw DependencyError("labels are required: run stage 'generate'");
  }
}

}  // namespace

void Pipeline::pretrain() {
  const FeatureSpec spec = load_features();
  const auto traces = load_traces(spec);
  const std::vector<Trace> train(traces.begin(),
                                 traces.begin() + static_cast<std::ptrdiff_t>(validation_start(traces.size(), cfg_.val_fraction)));
  StageModel model(cfg_.model, spec);
  const auto result = stagefinder::pretrain(model, train, cfg_.pretrain);
  Checkpoint ckpt = model.to_checkpoint({{"stage", "pretrain"}, {"config", cfg_.to_json()}});
  ckpt.config_hash = stage_hash("pretrain");
  save_checkpoint(ckpt, (workdir_ / kPretrained).string());
  write_file(workdir_ / "pretrain_loss.csv", to_csv(result.log));
  record("pretrain", {kPretrained, "pretrain_loss.csv"});
}

void Pipeline::finetune() {
  const FeatureSpec spec = load_features();
  auto traces = load_traces(spec);
  require_labels(traces);
  StageModel model = load_model("pretrain", kPretrained, spec);
  const auto split = static_cast<std::ptrdiff_t>(validation_start(traces.size(), cfg_.val_fraction));
  const std::vector<Trace> train(std::make_move_iterator(traces.begin()),
                                 std::make_move_iterator(traces.begin() + split));
  const std::vector<Trace> val(std::make_move_iterator(traces.begin() + split), std::make_move_iterator(traces.end()));
  const auto result = stagefinder::finetune(model, train, val, cfg_.finetune);
  Checkpoint ckpt = model.to_checkpoint({{"stage", "finetune"}, {"config", cfg_.to_json()}});
  ckpt.config_hash = stage_hash("finetune");
  save_checkpoint(ckpt, (workdir_ / kModel).string());
  write_file(workdir_ / "finetune_log.csv", to_csv(result.log));
  record("finetune", {kModel, "finetune_log.csv"});
}

void Pipeline::evaluate() {
  const FeatureSpec spec = load_features();
  const auto traces = load_traces(spec);
  require_labels(traces);
  require("pretrain");
  const Checkpoint pretrained = load_checkpoint((workdir_ / kPretrained).string());
  if (pretrained.config_hash != stage_hash("pretrain")) throw CompatibilityError("pretrained checkpoint is stale");
  std::vector<std::vector<int>> labels;
  for (const auto& t : traces) labels.push_back(t.labels);
  const auto report = evaluate_folds(labels, cfg_.folds, [&](const FoldSplit& split, int) {
    std::vector<Trace> fold_train;
    for (auto i : split.train) fold_train.push_back(traces[i]);
    const auto cut = static_cast<std::ptrdiff_t>(validation_start(fold_train.size(), cfg_.val_fraction));
    const std::vector<Trace> train(fold_train.begin(), fold_train.begin() + cut);
    const std::vector<Trace> val(fold_train.begin() + cut, fold_train.end());
    StageModel model(cfg_.model, spec, pretrained);
    stagefinder::finetune(model, train, val, cfg_.finetune);
    std::vector<Eigen::MatrixXd> probs;
    for (auto i : split.test) probs.push_back(model.predict(traces[i].window_ptrs()));
    return probs;
  });
  write_file(workdir_ / "metrics.csv", report.to_csv());
  auto doc = ojson::parse(report.to_json());
  doc["config_hash"] = stage_hash("evaluate");
  write_file(workdir_ / "metrics.json", doc.dump(2) + "\n");
  record("evaluate", {"metrics.csv", "metrics.json"});
}

void Pipeline::infer() {
  const FeatureSpec spec = load_features();
  const auto traces = load_traces(spec);
  const StageModel model = load_model("finetune", kModel, spec);
  std::vector<double> starts_by_index;
  for (const auto& g : load_graphs()) starts_by_index.push_back(g.window_start);
  std::ostringstream out;
  for (const auto& t : traces) {
    const auto probs = model.predict(t.window_ptrs());
    std::vector<int> idx;
    std::vector<double> starts;
    for (const auto& w : t.windows) {
      idx.push_back(w.window_index);
      starts.push_back(starts_by_index.at(static_cast<std::size_t>(w.window_index)));
    }
    const auto decisions = decide(probs, idx, starts);
    export_alerts(decisions, transitions(decisions), out);
  }
  write_file(workdir_ / "stage_alerts.jsonl", out.str());
  record("infer", {"stage_alerts.jsonl"});
}

void Pipeline::export_attention() {
  const FeatureSpec spec = load_features();
  const auto graphs = load_graphs();
  const StageModel model = load_model("finetune", kModel, spec);
  std::ostringstream out;
  out.precision(12);
  out << "window_index,node_key,node_kind,alpha\n";
  for (const auto& g : graphs) {
    const auto tensors = featurize(g, spec);
    const auto enc = model.encoder().encode(tensors, model.params());
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      std::string key = g.nodes[i].key;
      if (key.find_first_of(",\"\n") != std::string::npos) {
        std::string quoted = "\"";
        for (char c : key) quoted += c == '"' ? std::string("\"\"") : std::string(1, c);
        key = quoted + "\"";
      }
      out << g.window_index << ',' << key << ',' << to_string(g.nodes[i].kind) << ','
          << enc.attention(static_cast<Eigen::Index>(i)) << '\n';
    }
  }
  write_file(workdir_ / "attention.csv", out.str());
  record("export-attention", {"attention.csv"});
}

void Pipeline::run(const std::string& stage) {
  if (stage == "generate") return generate();
  if (stage == "build-graphs") return build_graphs();
  if (stage == "fit-features") return fit_features();
  if (stage == "pretrain") return pretrain();
  if (stage == "finetune") return finetune();
  if (stage == "evaluate") return evaluate();
  if (stage == "infer") return infer();
  if (stage == "export-attention") return export_attention();
  throw ConfigError("unknown stage " + stage);
}

}  // namespace stagefinder
