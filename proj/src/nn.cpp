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

#include "stagefinder/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace stagefinder {

std::size_t ParamStore::add(std::string name, Eigen::MatrixXd value) {
  if (by_name_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  const std::size_t idx = params_.size();
  by_name_.emplace(name, idx);
  Parameter p;
  p.name = std::move(name);
  p.grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  params_.push_back(std::move(p));
  return idx;
}

std::size_t ParamStore::index(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

void ParamStore::mask_frozen_grads() {
  for (auto& p : params_) {
    if (!p.trainable) p.grad.setZero();
  }
}

void ParamStore::set_trainable(std::string_view name_prefix, bool trainable) {
  for (auto& p : params_) {
    if (std::string_view(p.name).starts_with(name_prefix)) p.trainable = trainable;
  }
}

std::size_t ParamStore::num_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::vector<Eigen::MatrixXd> ParamStore::snapshot() const {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

void ParamStore::restore(const std::vector<Eigen::MatrixXd>& values) {
  if (values.size() != params_.size()) throw DimensionError("snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) params_[i].value = values[i];
}

ParamStore init_params(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
  ParamStore store;
  store.rng_seed = seed;
  Rng rng(seed);
  for (const auto& s : specs) {
    if (s.rows <= 0 || s.cols <= 0) throw ConfigError("parameter '" + s.name + "' has a non-positive shape");
    Eigen::MatrixXd value(s.rows, s.cols);
    switch (s.init) {
      case Init::zeros: value.setZero(); break;
      case Init::constant: value.setConstant(s.constant); break;
      case Init::glorot_uniform: {
        const double limit = std::sqrt(6.0 / (s.rows + s.cols));
        for (Eigen::Index j = 0; j < value.cols(); ++j) {
          for (Eigen::Index i = 0; i < value.rows(); ++i) value(i, j) = rng.uniform(-limit, limit);
        }
        break;
      }
    }
    store.add(s.name, std::move(value));
  }
  return store;
}

double global_grad_norm(const ParamStore& store) {
  double sq = 0.0;
  for (const auto& p : store) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

double clip_gradients(ParamStore& store, double max_norm) {
  const double norm = global_grad_norm(store);
  if (!(norm > max_norm)) return 1.0;
  const double scale = max_norm / norm;
  for (auto& p : store) p.grad *= scale;
  return scale;
}

void adam_step(ParamStore& store, AdamState& adam, double lr, double weight_decay) {
  if (adam.m.size() != store.size()) {
    adam.m.clear();
    adam.v.clear();
    for (const auto& p : store) {
      adam.m.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
      adam.v.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
    }
  }
  ++adam.step;
  const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.step));
  const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    if (!p.trainable) continue;
    if (weight_decay != 0.0) p.value *= (1.0 - lr * weight_decay);
    adam.m[i] = adam.beta1 * adam.m[i] + (1.0 - adam.beta1) * p.grad;
    adam.v[i] = adam.beta2 * adam.v[i] + (1.0 - adam.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (adam.m[i].array() / bc1) / ((adam.v[i].array() / bc2).sqrt() + adam.eps);
  }
}

double finite_diff_check(const std::function<double(const ParamStore&)>& loss, ParamStore& store, double step,
                         std::size_t max_coordinates, std::uint64_t seed) {
  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (Eigen::Index k = 0; k < store[i].value.size(); ++k) coords.emplace_back(i, k);
  }
  if (coords.size() > max_coordinates) {
    Rng rng(seed);
    // Partial Fisher-Yates: the first max_coordinates entries become the sample.
    for (std::size_t i = 0; i < max_coordinates; ++i) {
      std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    }
    coords.resize(max_coordinates);
  }
  double worst = 0.0;
  for (const auto& [pi, k] : coords) {
    double& theta = store[pi].value.data()[k];
    const double saved = theta;
    theta = saved + step;
    const double up = loss(store);
    theta = saved - step;
    const double down = loss(store);
    theta = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) throw Error("finite_diff_check: non-finite loss");
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = store[pi].grad.data()[k];
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1e-8, std::abs(numeric)));
  }
  return worst;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian doubles");
  nlohmann::ordered_json header;
  header["feature_spec_hash"] = ckpt.feature_spec_hash;
  header["config_hash"] = ckpt.config_hash;
  header["rng_seed"] = ckpt.params.rng_seed;
  header["metadata"] = ckpt.metadata;
  auto& entries = header["params"] = nlohmann::ordered_json::array();
  for (const auto& p : ckpt.params) {
    entries.push_back({{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}, {"trainable", p.trainable}});
  }
  const std::string head = header.dump();

  std::string out = "STGFCKPT";
  auto put = [&out](const void* data, std::size_t n) { out.append(static_cast<const char*>(data), n); };
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = head.size();
  put(&version, sizeof(version));
  put(&len, sizeof(len));
  out += head;
  for (const auto& p : ckpt.params) put(p.value.data(), sizeof(double) * static_cast<std::size_t>(p.value.size()));
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (pos + n > bytes.size()) throw InputError("truncated checkpoint");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  if (bytes.substr(0, 8) != "STGFCKPT") throw InputError("not a checkpoint file");
  pos = 8;
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  take(&version, sizeof(version));
  if (version != kCheckpointVersion) throw CompatibilityError("unsupported checkpoint version");
  take(&len, sizeof(len));
  if (pos + len > bytes.size()) throw InputError("truncated checkpoint header");
  const auto header = nlohmann::json::parse(bytes.substr(pos, len));
  pos += len;

  Checkpoint ckpt;
  ckpt.feature_spec_hash = header.at("feature_spec_hash").get<std::string>();
  ckpt.config_hash = header.at("config_hash").get<std::string>();
  ckpt.params.rng_seed = header.at("rng_seed").get<std::uint64_t>();
  ckpt.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
  for (const auto& e : header.at("params")) {
    const auto rows = e.at("shape").at(0).get<Eigen::Index>();
    const auto cols = e.at("shape").at(1).get<Eigen::Index>();
    Eigen::MatrixXd value(rows, cols);
    take(value.data(), sizeof(double) * static_cast<std::size_t>(rows * cols));
    const auto idx = ckpt.params.add(e.at("name").get<std::string>(), std::move(value));
    ckpt.params[idx].trainable = e.at("trainable").get<bool>();
  }
  if (pos != bytes.size()) throw InputError("trailing bytes after checkpoint payload");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  const auto bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("checkpoint '" + path + "' not found");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace stagefinder
