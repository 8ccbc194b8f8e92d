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

// Shared fixtures for the tests.

#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "stagefinder/features.hpp"
#include "stagefinder/model.hpp"
#include "stagefinder/training.hpp"

namespace fixtures {

inline std::string data_path(const std::string& name) { return std::string(STAGEFINDER_TEST_DATA) + "/" + name; }

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline stagefinder::FeatureLayout tiny_layout() {
  stagefinder::FeatureLayout l;
  l.d_cmd = 3;
  l.user_buckets = 2;
  l.subnet_buckets = 2;
  l.category_buckets = 2;
  return l;
}

inline stagefinder::FeatureSpec tiny_spec() {
  stagefinder::FeatureSpec spec;
  spec.layout = tiny_layout();
  spec.stats.stddev.fill(1.0);
  return spec;
}

inline stagefinder::ModelConfig tiny_model(std::uint64_t seed = 3) {
  stagefinder::ModelConfig c;
  c.d_h = 4;
  c.d_g = 3;
  c.gnn_layers = 2;
  c.hidden = 5;
  c.lstm_layers = 2;
  c.seed = seed;
  return c;
}

/// Random window: dense-ish random features, random typed edges plus one
/// self loop per node.
inline stagefinder::GraphTensors random_window(std::mt19937_64& rng, int nodes, int edges,
                                               const stagefinder::FeatureLayout& layout, int index = 0) {
  using namespace stagefinder;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> node(0, nodes - 1);
  std::uniform_int_distribution<int> rel(0, kNumRelations - 2);
  std::vector<int> src, dst;
  std::vector<Relation> r;
  for (int e = 0; e < edges; ++e) {
    src.push_back(node(rng));
    dst.push_back(node(rng));
    r.push_back(static_cast<Relation>(rel(rng)));
  }
  for (int v = 0; v < nodes; ++v) {
    src.push_back(v);
    dst.push_back(v);
    r.push_back(Relation::self_loop);
  }
  GraphTensors g;
  g.window_index = index;
  auto fill = [&](int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) m(i, j) = (rng() % 3 == 0) ? u(rng) : 0.0;
    }
    return SparseRows(m.sparseView());
  };
  g.node_features = fill(nodes, layout.node_width());
  g.edge_features = fill(static_cast<int>(src.size()), layout.edge_width());
  g.topology = std::make_shared<const Topology>(Topology::from_edges(nodes, src, dst, r));
  return g;
}

inline stagefinder::Trace random_trace(std::mt19937_64& rng, int length, const stagefinder::FeatureLayout& layout) {
  stagefinder::Trace t;
  for (int i = 0; i < length; ++i) {
    t.windows.push_back(random_window(rng, 3 + static_cast<int>(rng() % 3), 4, layout, i));
    t.labels.push_back(static_cast<int>(rng() % stagefinder::kNumStages));
  }
  return t;
}

}  // namespace fixtures
