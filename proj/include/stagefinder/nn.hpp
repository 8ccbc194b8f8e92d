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

// Parameter registry, initialization, Adam, gradient clipping, the
// finite-difference checker and the checkpoint container.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "stagefinder/common.hpp"

namespace stagefinder {

/// A named dense parameter and its gradient (same shape). Column vectors are
/// stored as n x 1 matrices.
struct Parameter {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  bool trainable = true;
};

class ParamStore {
 public:
  /// Registers a parameter; throws ConfigError on duplicate names.
  std::size_t add(std::string name, Eigen::MatrixXd value);

  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const { return by_name_.count(std::string(name)) > 0; }
  std::size_t size() const { return params_.size(); }

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& operator[](std::string_view name) { return params_[index(name)]; }
  const Parameter& operator[](std::string_view name) const { return params_[index(name)]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  /// Zeroes the gradients of non-trainable parameters.
  void mask_frozen_grads();
  void set_trainable(std::string_view name_prefix, bool trainable);
  std::size_t num_values() const;

  /// Copies of all parameter values, for snapshot / restore.
  std::vector<Eigen::MatrixXd> snapshot() const;
  void restore(const std::vector<Eigen::MatrixXd>& values);

  std::uint64_t rng_seed = 0;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> by_name_;
};

enum class Init { glorot_uniform, zeros, constant };

struct ParamSpec {
  std::string name;
  int rows = 1;
  int cols = 1;
  Init init = Init::glorot_uniform;
  double constant = 0.0;
};

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)) with fan_in = cols and
/// fan_out = rows; biases zero. Deterministic for a seed.
ParamStore init_params(const std::vector<ParamSpec>& specs, std::uint64_t seed);

/// Global L2 clipping. Returns the applied scale (1.0 when unchanged).
double clip_gradients(ParamStore& store, double max_norm = 5.0);

double global_grad_norm(const ParamStore& store);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
};

/// Decoupled weight decay (theta -= lr * wd * theta) followed by the
/// bias-corrected Adam update, applied to trainable parameters only.
void adam_step(ParamStore& store, AdamState& adam, double lr, double weight_decay = 1e-5);

/// Central-difference gradient check against the gradients currently held
/// in `store`. Checks every coordinate when there are at most
/// `max_coordinates`, otherwise a seeded random subset of that size.
/// Returns max |analytic - numeric| / max(1e-8, |numeric|).
double finite_diff_check(const std::function<double(const ParamStore&)>& loss, ParamStore& store,
                         double step = 1e-4, std::size_t max_coordinates = 400, std::uint64_t seed = 7);

// ---------------------------------------------------------------------------
// Checkpoints: "STGFCKPT", u32 version, u64 header length, JSON header with
// metadata and (name, shape, trainable) entries, then every value as a
// little-endian IEEE-754 double in column-major order.

struct Checkpoint {
  ParamStore params;
  std::string feature_spec_hash;
  std::string config_hash;
  std::map<std::string, std::string> metadata;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);

}  // namespace stagefinder
