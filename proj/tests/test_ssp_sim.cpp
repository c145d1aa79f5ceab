// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>
#include <vector>

#include "rtrain/common.hpp"
#include "rtrain/ssp_sim.hpp"

using namespace rtrain;

namespace {

std::vector<StageTask> two_batches() {
  const std::int64_t d[2][4] = {{3, 5, 2, 4}, {2, 1, 6, 3}};
  std::vector<StageTask> t;
  for (int b = 0; b < 2; ++b) {
    for (int s = 0; s < 4; ++s) {
      t.push_back({b, static_cast<Stage>(s), d[b][s], s == 1 ? WorkerClass::host : WorkerClass::device});
    }
  }
  return t;
}

SchedulerConfig zero_latency(SchedMode mode, int s) {
  SchedulerConfig cfg;
  cfg.mode = mode;
  cfg.staleness = s;
  cfg.device_latency = 0;
  return cfg;
}

double percentile(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  return lo + 1 < xs.size() ? xs[lo] * (1 - frac) + xs[lo + 1] * frac : xs[lo];
}

}  // namespace

TEST_CASE("hand-computed BSP makespan") {
  // Batch 0 producers end at 5, update 5-9; batch 1 producers 9-15, update 15-18.
  const auto r = simulate(two_batches(), zero_latency(SchedMode::bsp, 4));
  CHECK(r.metrics.makespan == 18);
  CHECK(r.metrics.max_observed_staleness == 0);
  // Reference worker: busy 5, idle 13.
  CHECK(r.metrics.workers[0].busy == 5);
  CHECK(r.metrics.workers[0].idle == 13);

  // Each enqueue waits one tick: 1+5, +1+4, +1+6, +1+3.
  CHECK(simulate(two_batches(), SchedulerConfig{SchedMode::bsp}).metrics.makespan == 22);
}

TEST_CASE("hand-computed SSP makespan with staleness one") {
  // Both batches start at 0; logprob finishes batch 1 at 8; updates 5-9 and 9-12.
  const auto r = simulate(two_batches(), zero_latency(SchedMode::ssp, 1));
  CHECK(r.metrics.makespan == 12);
  CHECK(r.metrics.max_observed_staleness == 1);
}

TEST_CASE("ssp with zero staleness matches bsp") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    DurationModel dm;
    dm.kind = trial % 2 ? DurationKind::heavy_tail : DurationKind::uniform;
    const auto trace = generate_trace(12, dm, rng());
    SchedulerConfig bsp;
    bsp.mode = SchedMode::bsp;
    SchedulerConfig ssp;
    ssp.staleness = 0;
    const auto a = simulate(trace, bsp), b = simulate(trace, ssp);
    CHECK(a.metrics.makespan == b.metrics.makespan);
    CHECK(a.events == b.events);
  }
}

TEST_CASE("queue serves ready order and overflows to the host tier") {
  TwoLevelQueue q(3, 2, 0, 5);
  const std::int64_t ready[5] = {4, 1, 3, 0, 2};
  for (int i = 0; i < 5; ++i) REQUIRE(q.enqueue(i, ready[i], 0));
  CHECK(q.size(Tier::device) == 3);
  CHECK(q.size(Tier::host) == 2);
  CHECK_FALSE(q.enqueue(9, 0, 0));
  // Device entries (ready 4, 1, 3) come out in ready order; host entries wait for latency.
  CHECK(q.dequeue(0)->first.batch_id == 1);
  CHECK(q.dequeue(0)->first.batch_id == 2);
  CHECK(q.dequeue(0)->first.batch_id == 0);
  CHECK_FALSE(q.dequeue(0));
  CHECK(q.next_eligible(0) == 5);
  const auto h = q.dequeue(5);
  CHECK(h->first.batch_id == 3);
  CHECK(h->second == Tier::host);
  CHECK(q.dequeue(5)->first.batch_id == 4);
  CHECK(q.empty());
}

TEST_CASE("staleness bound, dependencies and work conservation") {
  Rng rng(derive_seed(7, "ssp_props"));
  for (int trial = 0; trial < 30; ++trial) {
    DurationModel dm;
    dm.kind = DurationKind::heavy_tail;
    const auto trace = generate_trace(16, dm, rng());
    SchedulerConfig cfg;
    cfg.staleness = static_cast<int>(uniform_index(rng, 6));
    cfg.workers = {1 + static_cast<int>(uniform_index(rng, 2)), 1 + static_cast<int>(uniform_index(rng, 3)), 1, 1};
    const auto r = simulate(trace, cfg);
    CHECK(r.metrics.max_observed_staleness <= cfg.staleness);

    std::int64_t total = 0;
    for (const auto& t : trace) total += t.duration;
    CHECK(r.metrics.total_busy() == total);
    for (const auto& w : r.metrics.workers) CHECK(w.busy + w.idle == r.metrics.makespan);

    std::map<std::pair<int, int>, std::int64_t> start, finish;
    for (const auto& e : r.events) {
      if (e.event == "start") start[{e.batch, static_cast<int>(e.stage)}] = e.time;
      if (e.event == "finish") finish[{e.batch, static_cast<int>(e.stage)}] = e.time;
    }
    CHECK(start.size() == trace.size());
    for (int b = 0; b < 16; ++b) {
      for (int s = 0; s < 3; ++s) CHECK(finish[{b, s}] <= start[{b, 3}]);
      if (b > 0) CHECK(finish[{b - 1, 3}] <= start[{b, 3}]);
    }
  }
}

TEST_CASE("more staleness never adds device idle on heavy-tail traces") {
  DurationModel dm;
  dm.kind = DurationKind::heavy_tail;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto rows = compare_schedulers(generate_trace(64, dm, seed), {0, 1, 2, 3, 4, 5, 6, 7, 8});
    REQUIRE(rows.size() == 10);
    CHECK(rows[1].device_idle == rows[0].device_idle);
    for (std::size_t i = 2; i < rows.size(); ++i) CHECK(rows[i].device_idle <= rows[i - 1].device_idle);
    CHECK(rows[5].idle_reduction_pct > 0.0);
  }
}

TEST_CASE("heavy-tail durations hit the configured percentile ratio") {
  DurationModel dm;
  dm.kind = DurationKind::heavy_tail;
  dm.p95_p50 = 4.0;
  const auto trace = generate_trace(20000, dm, 5);
  std::vector<double> d;
  for (const auto& t : trace) {
    if (t.stage == Stage::reference_assessment) d.push_back(static_cast<double>(t.duration));
  }
  const double ratio = percentile(d, 0.95) / percentile(d, 0.5);
  CHECK(ratio == doctest::Approx(4.0).epsilon(0.10));
  CHECK(percentile(d, 0.5) == doctest::Approx(100.0).epsilon(0.05));
}

TEST_CASE("trace round trip and malformed traces") {
  const auto trace = generate_trace(5, DurationModel{}, 1);
  const auto path = std::filesystem::temp_directory_path() / "rtrain_test_trace.jsonl";
  save_trace(trace, path);
  CHECK(load_trace(path) == trace);
  std::filesystem::remove(path);

  auto missing = trace;
  missing.pop_back();
  CHECK_THROWS_AS(simulate(missing, {}), Error);
  auto dup = trace;
  dup.push_back(trace.front());
  CHECK_THROWS_AS(simulate(dup, {}), Error);
  CHECK_THROWS_AS(simulate({}, {}), Error);
  SchedulerConfig bad;
  bad.workers[2] = 0;
  CHECK_THROWS_AS(simulate(trace, bad), Error);
}

TEST_CASE("event log and comparison output") {
  const auto r = simulate(two_batches(), zero_latency(SchedMode::bsp, 0));
  std::ostringstream ev;
  write_event_log(ev, r.events);
  CHECK(ev.str().rfind("time,event,batch,stage,worker,staleness\n", 0) == 0);
  std::ostringstream cmp;
  write_comparison(cmp, compare_schedulers(two_batches(), {1}, zero_latency(SchedMode::ssp, 0)));
  const std::string s = cmp.str();
  CHECK(s.find("bsp,0,18,") != std::string::npos);
  CHECK(s.find("ssp(s=1),1,12,") != std::string::npos);
}
