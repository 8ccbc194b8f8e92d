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

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace stagefinder {

/// Window length used throughout the pipeline, in seconds.
inline constexpr double kWindowSeconds = 300.0;

/// Number of stage classes: benign (0) plus six kill-chain stages.
inline constexpr int kNumStages = 7;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input record; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Required field missing from an input record.
class FieldError : public ParseError {
 public:
  FieldError(std::size_t line, const std::string& field)
      : ParseError(line, "missing required field '" + field + "'"), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid data handed to a metric, loss or dataset routine.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage ran before the stage whose artifact it needs.
class DependencyError : public Error {
 public:
  using Error::Error;
};

/// Artifact produced under a different configuration or feature spec.
class CompatibilityError : public DependencyError {
 public:
  using DependencyError::DependencyError;
};

/// 64-bit FNV-1a. Stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a(std::string_view text,
                              std::uint64_t hash = 14695981039346656037ull) {
  for (const char c : text) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 1099511628211ull;
  }
  return hash;
}

/// Mixes several integers into one seed (splitmix64 finalizer per step).
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x9e3779b97f4a7c15ull;
  for (std::uint64_t p : parts) {
    h ^= p + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    h ^= h >> 31;
  }
  return h;
}

std::string hex64(std::uint64_t value);

/// Seeded generator with portable draws. std::mt19937_64 output is fixed by
/// the standard; the distribution helpers below are written out so results do
/// not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

  int range(int lo, int hi_inclusive) {
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
  }

  bool chance(double p) { return uniform() < p; }

  /// Exponential inter-arrival gap for a Poisson process with the given rate.
  double exponential(double rate);

 private:
  std::mt19937_64 engine_;
};

}  // namespace stagefinder
