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

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "stagefinder/nn.hpp"

using namespace stagefinder;

namespace {

ParamStore two_params() {
  ParamStore s;
  Eigen::MatrixXd a(2, 2);
  a << 1.0, -2.0, 0.5, 3.0;
  s.add("a.w", a);
  s.add("b.b", Eigen::MatrixXd::Constant(3, 1, 0.25));
  return s;
}

}  // namespace

TEST_CASE("registry") {
  auto s = two_params();
  CHECK(s.size() == 2);
  CHECK(s.num_values() == 7);
  CHECK(s.index("b.b") == 1);
  CHECK(s["a.w"].grad.isZero());
  CHECK_THROWS_AS(s.add("a.w", Eigen::MatrixXd::Zero(1, 1)), ConfigError);
  CHECK_THROWS(s.index("missing"));
}

TEST_CASE("initialization bounds and determinism") {
  const std::vector<ParamSpec> specs{{"w", 30, 50}, {"b", 30, 1, Init::zeros}, {"c", 2, 1, Init::constant, 1.5}};
  const auto s = init_params(specs, 11);
  const double bound = std::sqrt(6.0 / 80.0);
  CHECK(s["w"].value.cwiseAbs().maxCoeff() <= bound);
  CHECK(s["w"].value.cwiseAbs().maxCoeff() > 0.9 * bound);
  CHECK(std::abs(s["w"].value.mean()) < 0.05);
  CHECK(s["b"].value.isZero());
  CHECK(s["c"].value == Eigen::MatrixXd::Constant(2, 1, 1.5));
  CHECK(init_params(specs, 11)["w"].value == s["w"].value);
  CHECK(init_params(specs, 12)["w"].value != s["w"].value);
}

TEST_CASE("adam matches a scalar update") {
  auto s = two_params();
  s["a.w"].grad << 0.1, -0.2, 0.3, 0.0;
  s["b.b"].grad.setConstant(-1.0);
  const auto before = s.snapshot();
  AdamState adam;
  const double lr = 0.01, wd = 0.1;
  adam_step(s, adam, lr, wd);
  // First step: m_hat = g, v_hat = g^2.
  for (std::size_t p = 0; p < s.size(); ++p) {
    for (int i = 0; i < before[p].size(); ++i) {
      const double theta = before[p](i);
      const double g = s[p].grad(i);
      const double decayed = theta - lr * wd * theta;
      const double expect = decayed - lr * g / (std::abs(g) + 1e-8);
      CHECK(s[p].value(i) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  CHECK(adam.step == 1);

  // Second step with a known history.
  const auto mid = s.snapshot();
  const auto g1 = s["b.b"].grad(0);
  s["b.b"].grad.setConstant(0.5);
  adam_step(s, adam, lr, 0.0);
  const double m = 0.9 * 0.1 * g1 + 0.1 * 0.5;
  const double v = 0.999 * 0.001 * g1 * g1 + 0.001 * 0.25;
  const double m_hat = m / (1 - 0.81);
  const double v_hat = v / (1 - 0.999 * 0.999);
  CHECK(s["b.b"].value(0) == doctest::Approx(mid[1](0) - lr * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-12));
}

TEST_CASE("frozen parameters are untouched") {
  auto s = two_params();
  s.set_trainable("a.", false);
  s["a.w"].grad.setOnes();
  s["b.b"].grad.setOnes();
  const auto before = s["a.w"].value;
  AdamState adam;
  adam_step(s, adam, 0.1, 0.1);
  CHECK(s["a.w"].value == before);
  CHECK(s["b.b"].value != Eigen::MatrixXd::Constant(3, 1, 0.25));
  s.mask_frozen_grads();
  CHECK(s["a.w"].grad.isZero());
  CHECK(!s["b.b"].grad.isZero());
  s.zero_grad();
  CHECK(s["b.b"].grad.isZero());
}

TEST_CASE("clipping") {
  auto s = two_params();
  s["a.w"].grad << 3.0, 0.0, 0.0, 0.0;
  s["b.b"].grad << 4.0, 0.0, 0.0;
  CHECK(global_grad_norm(s) == doctest::Approx(5.0));
  CHECK(clip_gradients(s, 5.0) == 1.0);
  CHECK(s["a.w"].grad(0, 0) == 3.0);
  s["a.w"].grad *= 4.0;
  s["b.b"].grad *= 4.0;
  const double scale = clip_gradients(s, 5.0);
  CHECK(scale == doctest::Approx(0.25));
  CHECK(global_grad_norm(s) == doctest::Approx(5.0).epsilon(1e-12));
  const auto once = s["a.w"].grad;
  clip_gradients(s, 5.0);
  CHECK((s["a.w"].grad - once).cwiseAbs().maxCoeff() < 1e-15);
  s.zero_grad();
  CHECK(clip_gradients(s, 5.0) == 1.0);
}

TEST_CASE("finite differences agree with an analytic gradient") {
  auto s = two_params();
  auto loss = [](const ParamStore& p) {
    return p["a.w"].value.array().square().sum() * p["b.b"].value.sum() + std::sin(p["b.b"].value(1));
  };
  const auto& a = s["a.w"].value;
  const auto& b = s["b.b"].value;
  s["a.w"].grad = 2.0 * a * b.sum();
  s["b.b"].grad.setConstant(a.array().square().sum());
  s["b.b"].grad(1) += std::cos(b(1));
  CHECK(finite_diff_check(loss, s) < 1e-6);
  s["b.b"].grad(2) += 0.5;
  CHECK(finite_diff_check(loss, s) > 1e-2);
}

TEST_CASE("snapshot and restore") {
  auto s = two_params();
  const auto snap = s.snapshot();
  s["a.w"].value.setZero();
  s.restore(snap);
  CHECK(s["a.w"].value(1, 1) == 3.0);
  CHECK_THROWS(s.restore({}));
}

TEST_CASE("checkpoint round trip is bit exact") {
  Checkpoint c;
  c.params = init_params({{"x.w", 5, 3}, {"x.b", 5, 1, Init::constant, 1.0 / 3.0}}, 4);
  c.params["x.w"].value(0, 0) = 1e-310;
  c.params["x.w"].value(1, 0) = -0.0;
  c.params.set_trainable("x.b", false);
  c.feature_spec_hash = "abc";
  c.config_hash = "def";
  c.metadata["note"] = "hello";
  const auto path = (std::filesystem::temp_directory_path() / "sf_test_ckpt.bin").string();
  save_checkpoint(c, path);
  const auto back = load_checkpoint(path);
  std::filesystem::remove(path);
  REQUIRE(back.params.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.params[i].name == c.params[i].name);
    CHECK(back.params[i].trainable == c.params[i].trainable);
    CHECK(std::memcmp(back.params[i].value.data(), c.params[i].value.data(),
                      sizeof(double) * static_cast<std::size_t>(c.params[i].value.size())) == 0);
  }
  CHECK(back.feature_spec_hash == "abc");
  CHECK(back.config_hash == "def");
  CHECK(back.metadata.at("note") == "hello");
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(c));
}

TEST_CASE("checkpoint errors") {
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/model.ckpt"), DependencyError);
  CHECK_THROWS_AS(deserialize_checkpoint("garbage"), Error);
  Checkpoint c;
  c.params = init_params({{"w", 2, 2}}, 1);
  auto bytes = serialize_checkpoint(c);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
  bytes[8] = 9;  // version
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), CompatibilityError);
}
