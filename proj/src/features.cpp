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

#include "stagefinder/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "json.hpp"

namespace stagefinder {

namespace {

bool is_token_char(unsigned char c) { return std::isalnum(c) || c == '.' || c == '_' || c == '-'; }

bool is_privileged(std::string_view user) {
  std::string lower;
  for (char c : user) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return lower == "system" || lower == "root" || lower == "administrator" || lower == "nt authority\\system";
}

std::string subnet24(std::string_view ip) {
  const auto last = ip.rfind('.');
  return last == std::string_view::npos ? std::string(ip) : std::string(ip.substr(0, last));
}

int bucket(std::string_view text, int buckets) { return static_cast<int>(fnv1a(text) % static_cast<std::uint64_t>(buckets)); }

double window_offset(double ts, double window_start) {
  const double x = (ts - window_start) / kWindowSeconds;
  return std::clamp(x, 0.0, std::nextafter(1.0, 0.0));
}

void add_tfidf(Eigen::VectorXd& out, int offset, std::string_view text, const FeatureVocab& vocab) {
  for (const auto& tok : tokenize(text)) {
    const int col = vocab.column(tok);
    if (col >= 0) out[offset + col] += vocab.idf[static_cast<std::size_t>(col)];
  }
}

void add_protocol(Eigen::VectorXd& out, int offset, const Node& alert) {
  out[offset + static_cast<int>(alert.protocol.value_or(Protocol::other))] = 1.0;
  out[offset + 4] = alert.outbound ? 1.0 : 0.0;
}

}  // namespace

int FeatureVocab::column(std::string_view token) const {
  auto it = token_index.find(token);
  return it == token_index.end() ? -1 : it->second;
}

double ZScoreStats::standardize(int column, double value) const {
  if (is_constant(column)) return 0.0;
  const auto c = static_cast<std::size_t>(column);
  return (value - mean[c]) / stddev[c];
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_token_char(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string node_text(const Node& node) {
  switch (node.kind) {
    case NodeKind::process: {
      if (node.command) return *node.command;
      const auto slash = node.key.rfind('/');
      return slash == std::string::npos ? node.key : node.key.substr(slash + 1);
    }
    case NodeKind::file: return node.key;
    case NodeKind::alert: return node.signature.value_or("");
    default: return {};
  }
}

std::vector<std::array<double, 3>> node_statistics(const ProvenanceGraph& graph) {
  std::vector<std::array<double, 3>> stats(graph.nodes.size(), {0.0, 0.0, 0.0});
  for (const auto& e : graph.edges) {
    if (e.relation == Relation::self_loop) continue;
    auto& s = stats[static_cast<std::size_t>(e.src)];
    auto& d = stats[static_cast<std::size_t>(e.dst)];
    s[kOutDegree] += 1.0;
    d[kInDegree] += 1.0;
    s[kEventCount] += e.count;
    if (e.dst != e.src) d[kEventCount] += e.count;
  }
  return stats;
}

FeatureSpec fit_feature_spec(const std::vector<ProvenanceGraph>& corpus, const FeatureLayout& layout) {
  if (corpus.empty()) throw InputError("cannot fit features on an empty corpus");
  FeatureSpec spec;
  spec.layout = layout;

  std::map<std::string, int> df;
  std::size_t documents = 0;
  std::array<double, kNumContinuous> sum{};
  std::array<double, kNumContinuous> count{};
  std::vector<std::array<double, kNumContinuous>> columns;  // kept for a two-pass variance
  std::vector<double> log_bytes;

  for (const auto& g : corpus) {
    for (const auto& n : g.nodes) {
      const auto text = node_text(n);
      if (text.empty()) continue;
      ++documents;
      const auto toks = tokenize(text);
      for (const auto& t : std::set<std::string>(toks.begin(), toks.end())) ++df[t];
    }
    // Alert rows leave the stat block empty, so they stay out of its statistics.
    const auto stats = node_statistics(g);
    for (std::size_t i = 0; i < stats.size(); ++i) {
      if (g.nodes[i].kind != NodeKind::alert) columns.push_back({stats[i][0], stats[i][1], stats[i][2], 0.0});
    }
    for (const auto& e : g.edges) log_bytes.push_back(std::log1p(static_cast<double>(e.bytes.value_or(0))));
  }

  std::vector<std::pair<std::string, int>> ranked(df.begin(), df.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const auto keep = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(layout.d_cmd));
  for (std::size_t i = 0; i < keep; ++i) {
    const auto& [token, freq] = ranked[i];
    spec.vocab.token_index.emplace(token, static_cast<int>(i));
    spec.vocab.tokens.push_back(token);
    spec.vocab.idf.push_back(std::log((1.0 + static_cast<double>(documents)) / (1.0 + freq)) + 1.0);
  }

  for (const auto& row : columns) {
    for (int c = 0; c < 3; ++c) {
      sum[static_cast<std::size_t>(c)] += row[static_cast<std::size_t>(c)];
      count[static_cast<std::size_t>(c)] += 1.0;
    }
  }
  for (double v : log_bytes) {
    sum[kLogBytes] += v;
    count[kLogBytes] += 1.0;
  }
  std::array<double, kNumContinuous> sq{};
  for (std::size_t c = 0; c < kNumContinuous; ++c) {
    spec.stats.mean[c] = count[c] > 0 ? sum[c] / count[c] : 0.0;
  }
  for (const auto& row : columns) {
    for (std::size_t c = 0; c < 3; ++c) sq[c] += (row[c] - spec.stats.mean[c]) * (row[c] - spec.stats.mean[c]);
  }
  for (double v : log_bytes) sq[kLogBytes] += (v - spec.stats.mean[kLogBytes]) * (v - spec.stats.mean[kLogBytes]);
  for (std::size_t c = 0; c < kNumContinuous; ++c) {
    spec.stats.stddev[c] = count[c] > 0 ? std::sqrt(sq[c] / count[c]) : 0.0;
  }
  return spec;
}

Eigen::VectorXd featurize_node(const ProvenanceGraph& graph, int node, const FeatureSpec& spec) {
  if (node < 0 || node >= static_cast<int>(graph.nodes.size())) {
    throw InputError("node " + std::to_string(node) + " is not in the graph");
  }
  const auto& L = spec.layout;
  const Node& n = graph.nodes[static_cast<std::size_t>(node)];
  Eigen::VectorXd x = Eigen::VectorXd::Zero(L.node_width());
  x[L.type_offset() + static_cast<int>(n.kind)] = 1.0;
  const double t = window_offset(n.first_seen, graph.window_start);

  if (n.kind == NodeKind::alert) {
    add_tfidf(x, L.sig_offset(), n.signature.value_or(""), spec.vocab);
    x[L.severity_offset()] = n.severity.value_or(0.0);
    add_protocol(x, L.proto_offset(), n);
    if (n.remote_ip) x[L.subnet_offset() + bucket(subnet24(*n.remote_ip), L.subnet_buckets)] = 1.0;
    x[L.port_offset()] = n.remote_port.value_or(0) / 65535.0;
    x[L.alert_time_offset()] = t;
    return x;
  }

  add_tfidf(x, L.cmd_offset(), node_text(n), spec.vocab);
  if (n.user) {
    x[L.user_offset() + bucket(*n.user, L.user_buckets)] = 1.0;
    x[L.privileged_offset()] = is_privileged(*n.user) ? 1.0 : 0.0;
  }
  x[L.host_time_offset()] = t;
  // Only this node's row is needed; node_statistics is linear in |E|.
  std::array<double, 3> s{0.0, 0.0, 0.0};
  for (const auto& e : graph.edges) {
    if (e.relation == Relation::self_loop) continue;
    if (e.src == node) {
      s[kOutDegree] += 1.0;
      s[kEventCount] += e.count;
    }
    if (e.dst == node) {
      s[kInDegree] += 1.0;
      if (e.src != node) s[kEventCount] += e.count;
    }
  }
  for (int c = 0; c < 3; ++c) x[L.stat_offset() + c] = spec.stats.standardize(c, s[static_cast<std::size_t>(c)]);
  return x;
}

Eigen::VectorXd featurize_edge(const ProvenanceGraph& graph, int edge, const FeatureSpec& spec) {
  if (edge < 0 || edge >= static_cast<int>(graph.edges.size())) {
    throw InputError("edge " + std::to_string(edge) + " is not in the graph");
  }
  const auto& L = spec.layout;
  const Edge& e = graph.edges[static_cast<std::size_t>(edge)];
  int max_count = 1;
  for (const auto& other : graph.edges) max_count = std::max(max_count, other.count);

  Eigen::VectorXd z = Eigen::VectorXd::Zero(L.edge_width());
  z[L.edge_type_offset() + static_cast<int>(e.relation)] = 1.0;
  z[L.freq_offset()] = static_cast<double>(e.count) / max_count;
  z[L.size_offset()] = spec.stats.standardize(kLogBytes, std::log1p(static_cast<double>(e.bytes.value_or(0))));
  z[L.edge_time_offset()] = window_offset(e.timestamp, graph.window_start);

  if (e.relation == Relation::triggered_by) {
    const Node& alert = graph.nodes[static_cast<std::size_t>(e.src)];
    z[L.category_offset() + bucket(alert.category.value_or(""), L.category_buckets)] = 1.0;
    z[L.edge_severity_offset()] = alert.severity.value_or(0.0);
    add_protocol(z, L.edge_proto_offset(), alert);
  }
  return z;
}

Topology Topology::from_edges(int num_nodes, std::vector<int> src, std::vector<int> dst,
                              std::vector<Relation> relation) {
  if (src.size() != dst.size() || src.size() != relation.size()) {
    throw DimensionError("edge arrays differ in length");
  }
  Topology t;
  t.num_nodes = num_nodes;
  t.src = std::move(src);
  t.dst = std::move(dst);
  t.relation = std::move(relation);
  std::map<std::pair<int, int>, int> in_count;
  for (std::size_t e = 0; e < t.src.size(); ++e) {
    if (t.src[e] < 0 || t.src[e] >= num_nodes || t.dst[e] < 0 || t.dst[e] >= num_nodes) {
      throw DimensionError("edge endpoint out of range");
    }
    ++in_count[{t.dst[e], static_cast<int>(t.relation[e])}];
    t.edges_by_relation[static_cast<std::size_t>(t.relation[e])].push_back(static_cast<int>(e));
  }
  t.inv_degree.resize(t.src.size());
  for (std::size_t e = 0; e < t.src.size(); ++e) {
    t.inv_degree[e] = 1.0 / in_count[{t.dst[e], static_cast<int>(t.relation[e])}];
  }
  return t;
}

Topology Topology::from_graph(const ProvenanceGraph& graph) {
  std::vector<int> src, dst;
  std::vector<Relation> rel;
  for (const auto& e : graph.edges) {
    src.push_back(e.src);
    dst.push_back(e.dst);
    rel.push_back(e.relation);
  }
  return from_edges(static_cast<int>(graph.nodes.size()), std::move(src), std::move(dst), std::move(rel));
}

GraphTensors featurize(const ProvenanceGraph& graph, const FeatureSpec& spec) {
  GraphTensors out;
  out.window_index = graph.window_index;
  auto to_sparse = [](std::vector<Eigen::VectorXd> rows, int width) {
    std::vector<Eigen::Triplet<double>> triplets;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (int c = 0; c < width; ++c) {
        if (rows[r][c] != 0.0) triplets.emplace_back(static_cast<int>(r), c, rows[r][c]);
      }
    }
    SparseRows m(static_cast<Eigen::Index>(rows.size()), width);
    m.setFromTriplets(triplets.begin(), triplets.end());
    m.makeCompressed();
    return m;
  };
  std::vector<Eigen::VectorXd> nodes, edges;
  for (int i = 0; i < static_cast<int>(graph.nodes.size()); ++i) nodes.push_back(featurize_node(graph, i, spec));
  for (int i = 0; i < static_cast<int>(graph.edges.size()); ++i) edges.push_back(featurize_edge(graph, i, spec));
  out.node_features = to_sparse(std::move(nodes), spec.layout.node_width());
  out.edge_features = to_sparse(std::move(edges), spec.layout.edge_width());
  out.topology = std::make_shared<const Topology>(Topology::from_graph(graph));
  return out;
}

FeaturizedGraph project(const GraphTensors& raw, const Eigen::MatrixXd& w_x, const Eigen::VectorXd& b_x,
                        const Eigen::MatrixXd& w_z, const Eigen::VectorXd& b_z) {
  if (w_x.cols() != raw.node_features.cols() || w_z.cols() != raw.edge_features.cols() ||
      b_x.size() != w_x.rows() || b_z.size() != w_z.rows()) {
    throw DimensionError("projection shapes do not match the feature widths");
  }
  FeaturizedGraph out;
  out.node_states = raw.node_features * w_x.transpose();
  out.node_states.rowwise() += b_x.transpose();
  out.edge_states = raw.edge_features * w_z.transpose();
  out.edge_states.rowwise() += b_z.transpose();
  out.topology = raw.topology;
  return out;
}

std::string FeatureSpec::to_json() const {
  nlohmann::ordered_json doc;
  doc["version"] = kFeatureSpecVersion;
  doc["layout"] = {{"d_cmd", layout.d_cmd},
                   {"user_buckets", layout.user_buckets},
                   {"subnet_buckets", layout.subnet_buckets},
                   {"category_buckets", layout.category_buckets}};
  auto& toks = doc["vocab"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
    toks.push_back({{"token", vocab.tokens[i]}, {"idf", vocab.idf[i]}});
  }
  doc["stats"] = {{"columns", {"in_degree", "out_degree", "event_count", "log_bytes"}},
                  {"mean", stats.mean},
                  {"std", stats.stddev}};
  return doc.dump();
}

FeatureSpec FeatureSpec::from_json(std::string_view text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.at("version").get<std::string>() != kFeatureSpecVersion) {
      throw CompatibilityError("unsupported feature spec version");
    }
    FeatureSpec spec;
    const auto& l = doc.at("layout");
    spec.layout.d_cmd = l.at("d_cmd").get<int>();
    spec.layout.user_buckets = l.at("user_buckets").get<int>();
    spec.layout.subnet_buckets = l.at("subnet_buckets").get<int>();
    spec.layout.category_buckets = l.at("category_buckets").get<int>();
    for (const auto& t : doc.at("vocab")) {
      const auto token = t.at("token").get<std::string>();
      spec.vocab.token_index.emplace(token, static_cast<int>(spec.vocab.tokens.size()));
      spec.vocab.tokens.push_back(token);
      spec.vocab.idf.push_back(t.at("idf").get<double>());
    }
    spec.stats.mean = doc.at("stats").at("mean").get<std::array<double, kNumContinuous>>();
    spec.stats.stddev = doc.at("stats").at("std").get<std::array<double, kNumContinuous>>();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("invalid feature spec: ") + e.what());
  }
}

std::uint64_t FeatureSpec::hash() const { return fnv1a(to_json()); }

}  // namespace stagefinder
