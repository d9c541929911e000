// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seed plumbing. Every random stream derives from one user seed by stable
// hashing of (seed, purpose, indices), so outputs are reproducible and steps
// can be generated independently.

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace probe {

std::uint64_t splitmix64(std::uint64_t x);

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t a = 0, std::uint64_t b = 0);

// mt19937_64 has a fully specified output sequence; the helpers below avoid
// the implementation-defined std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, n), n > 0. Rejection sampling, integer only.
  std::uint64_t below(std::uint64_t n);
  // Uniform in [0, 1) with 53 random bits.
  double unit() { return double(next() >> 11) * 0x1.0p-53; }
  bool bernoulli(double p) { return unit() < p; }
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace probe
