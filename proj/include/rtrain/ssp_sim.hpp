// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Discrete-event simulation of a four-stage RL pipeline under bulk-synchronous
// or staleness-bounded scheduling. Time is integer ticks.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "rtrain/common.hpp"

namespace rtrain {

enum class Stage { reference_assessment = 0, reward_scoring = 1, logprob_extraction = 2, parameter_update = 3 };
inline constexpr std::size_t kNumStages = 4;
std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

enum class WorkerClass { device, host };
std::string_view to_string(WorkerClass c);
WorkerClass parse_worker_class(std::string_view s);

struct StageTask {
  int batch_id = 0;
  Stage stage = Stage::reference_assessment;
  std::int64_t duration = 1;
  WorkerClass worker_class = WorkerClass::device;

  bool operator==(const StageTask&) const = default;
};

enum class DurationKind { constant, uniform, heavy_tail };

struct DurationModel {
  DurationKind kind = DurationKind::constant;
  std::int64_t base = 100;        // median ticks of a unit-multiplier stage
  double spread = 0.5;            // uniform: base * [1 - spread, 1 + spread]
  double p95_p50 = 4.0;           // heavy tail: ratio of the 95th to the 50th percentile
  std::array<double, kNumStages> stage_scale{1.0, 0.6, 0.8, 0.5};

  void validate() const;
};

/// Stage order within a batch follows the Stage enum. reward_scoring is a host
/// task; the others run on devices. Heavy tails are Pareto draws.
std::vector<StageTask> generate_trace(int num_batches, const DurationModel& model, std::uint64_t seed);

void save_trace(const std::vector<StageTask>& trace, const std::filesystem::path& path);
std::vector<StageTask> load_trace(const std::filesystem::path& path);

enum class SchedMode { bsp, ssp };
SchedMode parse_sched_mode(std::string_view s);

struct SchedulerConfig {
  SchedMode mode = SchedMode::ssp;
  int staleness = 4;
  std::array<int, kNumStages> workers{1, 1, 1, 1};
  std::size_t device_capacity = 1024;
  std::size_t host_capacity = 1024;
  std::int64_t device_latency = 1;
  double host_latency_factor = 5.0;
  bool co_schedule = false;  // idle update workers may take device rollout-stage tasks

  void validate() const;
  std::int64_t host_latency() const;
  int effective_staleness() const { return mode == SchedMode::bsp ? 0 : staleness; }
};

struct QueueEntry {
  int batch_id = 0;
  std::int64_t ready_time = 0;
  std::int64_t eligible_time = 0;  // enqueue time plus the tier latency
  std::uint64_t seq = 0;
};

enum class Tier { device, host };

/// Per-stage queue: device tier first, overflow to host tier. Priority is
/// (ready time, batch id, arrival order).
class TwoLevelQueue {
 public:
  TwoLevelQueue(std::size_t device_capacity, std::size_t host_capacity, std::int64_t device_latency,
                std::int64_t host_latency);

  /// nullopt when both tiers are full (the caller must hold the task back).
  std::optional<Tier> enqueue(int batch_id, std::int64_t ready_time, std::int64_t now);
  /// Best eligible entry, device tier preferred.
  std::optional<std::pair<QueueEntry, Tier>> dequeue(std::int64_t now);
  /// Earliest eligible time among queued entries later than now.
  std::optional<std::int64_t> next_eligible(std::int64_t now) const;
  std::size_t size(Tier t) const { return t == Tier::device ? device_.size() : host_.size(); }
  bool empty() const { return device_.empty() && host_.empty(); }

 private:
  std::size_t device_capacity_, host_capacity_;
  std::int64_t device_latency_, host_latency_;
  std::uint64_t seq_ = 0;
  std::vector<QueueEntry> device_, host_;
};

struct SimEvent {
  std::int64_t time = 0;
  std::string event;  // ready, enqueue_device, enqueue_host, stall, start, finish
  int batch = 0;
  Stage stage = Stage::reference_assessment;
  int worker = -1;
  int staleness = -1;

  bool operator==(const SimEvent&) const = default;
};

struct WorkerStats {
  Stage stage = Stage::reference_assessment;
  WorkerClass worker_class = WorkerClass::device;
  std::int64_t busy = 0;
  std::int64_t idle = 0;
};

struct SimMetrics {
  std::int64_t makespan = 0;
  std::vector<WorkerStats> workers;
  double throughput = 0.0;  // batches per tick
  std::vector<std::size_t> staleness_histogram;
  int max_observed_staleness = 0;
  double mean_staleness = 0.0;
  std::int64_t stall_time = 0;
  std::size_t host_overflows = 0;

  std::int64_t device_idle() const;
  std::int64_t total_busy() const;
  std::int64_t total_idle() const;
};

struct SimResult {
  SimMetrics metrics;
  std::vector<SimEvent> events;
};

SimResult simulate(const std::vector<StageTask>& trace, const SchedulerConfig& cfg);

void write_event_log(std::ostream& out, const std::vector<SimEvent>& events);

struct ComparisonRow {
  std::string label;  // "bsp" or "ssp(s=k)"
  int staleness = 0;
  std::int64_t makespan = 0;
  std::int64_t device_idle = 0;
  double idle_reduction_pct = 0.0;  // against the BSP row
  double throughput = 0.0;
  int max_staleness = 0;
  double mean_staleness = 0.0;
};

std::vector<ComparisonRow> compare_schedulers(const std::vector<StageTask>& trace, const std::vector<int>& s_values,
                                              SchedulerConfig base = {});

void write_comparison(std::ostream& out, const std::vector<ComparisonRow>& rows);

}  // namespace rtrain
