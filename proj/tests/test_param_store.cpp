// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "rtrain/common.hpp"
#include "rtrain/param_store.hpp"

using namespace rtrain;

namespace {

ParamVector vec(std::initializer_list<double> v) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x[i++] = d;
  return ParamVector(x);
}

ParamVector random_vec(Rng& rng, Eigen::Index dim) {
  std::normal_distribution<double> n;
  Eigen::VectorXd x(dim);
  for (Eigen::Index i = 0; i < dim; ++i) x[i] = n(rng);
  return ParamVector(x);
}

std::filesystem::path temp_path(const char* name) {
  return std::filesystem::temp_directory_path() / (std::string("rtrain_test_") + name);
}

}  // namespace

TEST_CASE("param vectors reject non-finite values") {
  Eigen::VectorXd x(2);
  x << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(ParamVector{x}, Error);
  x << 1.0, std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(ParamVector{x}, Error);
}

TEST_CASE("checkpoint sets need matching dims and at least one entry") {
  CHECK_THROWS_AS(CheckpointSet({}), Error);
  CHECK_THROWS_AS(CheckpointSet({vec({1, 2}), vec({1})}), Error);
  CHECK_THROWS_AS(CheckpointSet({vec({1})}, 0), Error);
}

TEST_CASE("average delta of two unit deltas") {
  const auto d = average_delta(CheckpointSet({vec({2, 0}), vec({0, 2})}), vec({0, 0}));
  CHECK(d == vec({1, 1}));
}

TEST_CASE("average delta of the reference alone is zero") {
  const ParamVector ref = vec({0.3, -1.5, 7});
  CHECK(average_delta(CheckpointSet({ref}), ref) == vec({0, 0, 0}));
}

TEST_CASE("average delta matches an elementwise loop") {
  Rng rng(11);
  std::vector<ParamVector> cks;
  for (int i = 0; i < 3; ++i) cks.push_back(random_vec(rng, 5));
  const ParamVector ref = random_vec(rng, 5);
  const auto d = average_delta(CheckpointSet(cks), ref);
  for (Eigen::Index j = 0; j < 5; ++j) {
    double s = 0.0;
    for (const auto& c : cks) s += c[j] - ref[j];
    CHECK(d[j] == doctest::Approx(s / 3.0).epsilon(1e-14));
  }
}

TEST_CASE("average delta rejects dimension mismatch") {
  CHECK_THROWS_AS(average_delta(CheckpointSet({vec({1, 2})}), vec({1})), Error);
}

TEST_CASE("merge endpoints and half weight") {
  const ParamVector prev = vec({0, 0});
  const CheckpointSet cks({vec({2, 0}), vec({0, 2})});
  CHECK(merge_iteration(prev, cks, 0.0) == prev);
  CHECK(merge_iteration(prev, cks, 0.5) == vec({0.5, 0.5}));
  const ParamVector single = vec({4, -3});
  CHECK(merge_iteration(vec({1, 1}), CheckpointSet({single}), 1.0) == single);
  CHECK_THROWS_AS(merge_iteration(prev, cks, 1.5), Error);
  CHECK_THROWS_AS(merge_iteration(prev, cks, -0.1), Error);
}

TEST_CASE("merge is affine in lambda and invariant to checkpoint order") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const ParamVector prev = random_vec(rng, 7);
    std::vector<ParamVector> cks;
    for (int i = 0; i < 4; ++i) cks.push_back(random_vec(rng, 7));
    const double lambda = uniform01(rng);
    const auto full = merge_iteration(prev, CheckpointSet(cks), 1.0);
    const auto part = merge_iteration(prev, CheckpointSet(cks), lambda);
    const Eigen::VectorXd expect = prev.values() + lambda * (full.values() - prev.values());
    CHECK((part.values() - expect).cwiseAbs().maxCoeff() < 1e-12);
    std::vector<ParamVector> shuffled = cks;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto a = average_delta(CheckpointSet(cks), prev).values();
    const auto b = average_delta(CheckpointSet(shuffled), prev).values();
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(3);
  const ParamVector p = random_vec(rng, 10000);
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(p, path);
  CHECK(load_checkpoint(path) == p);
  std::filesystem::remove(path);
}

TEST_CASE("truncated or corrupt checkpoint files are rejected") {
  const auto path = temp_path("trunc.ckpt");
  save_checkpoint(vec({1, 2, 3, 4}), path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
}
