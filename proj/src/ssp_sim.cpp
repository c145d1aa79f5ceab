// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "rtrain/ssp_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <tuple>

#include <json.hpp>

namespace rtrain {

namespace {

constexpr std::array<std::string_view, kNumStages> kStageNames{"reference_assessment", "reward_scoring",
                                                               "logprob_extraction", "parameter_update"};
constexpr std::array<Stage, 3> kProducers{Stage::reference_assessment, Stage::reward_scoring,
                                          Stage::logprob_extraction};

std::size_t idx(Stage s) { return static_cast<std::size_t>(s); }

}  // namespace

std::string_view to_string(Stage s) { return kStageNames.at(idx(s)); }

Stage parse_stage(std::string_view s) {
  for (std::size_t i = 0; i < kNumStages; ++i) {
    if (kStageNames[i] == s) return static_cast<Stage>(i);
  }
  throw Error("unknown stage '" + std::string(s) + "'");
}

std::string_view to_string(WorkerClass c) { return c == WorkerClass::device ? "device" : "host"; }

WorkerClass parse_worker_class(std::string_view s) {
  if (s == "device") return WorkerClass::device;
  if (s == "host") return WorkerClass::host;
  throw Error("unknown worker class '" + std::string(s) + "'");
}

void DurationModel::validate() const {
  if (base < 1) throw Error("DurationModel: base must be >= 1 tick");
  if (kind == DurationKind::uniform && !(spread >= 0.0 && spread < 1.0)) {
    throw Error("DurationModel: uniform spread must be in [0, 1)");
  }
  if (kind == DurationKind::heavy_tail && !(p95_p50 > 1.0)) throw Error("DurationModel: p95/p50 must exceed 1");
  for (double s : stage_scale) {
    if (!(s > 0.0)) throw Error("DurationModel: stage scales must be positive");
  }
}

std::vector<StageTask> generate_trace(int num_batches, const DurationModel& model, std::uint64_t seed) {
  if (num_batches < 1) throw Error("generate_trace: num_batches must be >= 1");
  model.validate();
  Rng rng(derive_seed(seed, "scheduler"));
  // Pareto with shape a has p95/p50 = 10^(1/a).
  const double inv_shape = std::log10(model.p95_p50);
  std::vector<StageTask> trace;
  trace.reserve(static_cast<std::size_t>(num_batches) * kNumStages);
  for (int b = 0; b < num_batches; ++b) {
    for (std::size_t st = 0; st < kNumStages; ++st) {
      const double median = static_cast<double>(model.base) * model.stage_scale[st];
      double d = median;
      if (model.kind == DurationKind::uniform) {
        d = median * (1.0 - model.spread + 2.0 * model.spread * uniform01(rng));
      } else if (model.kind == DurationKind::heavy_tail) {
        const double u = 1.0 - uniform01(rng);  // (0, 1]
        d = median / std::pow(2.0, inv_shape) * std::pow(u, -inv_shape);
      }
      const auto stage = static_cast<Stage>(st);
      trace.push_back({b, stage, std::max<std::int64_t>(1, std::llround(d)),
                       stage == Stage::reward_scoring ? WorkerClass::host : WorkerClass::device});
    }
  }
  return trace;
}

void save_trace(const std::vector<StageTask>& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("save_trace: cannot open " + path.string());
  for (const auto& t : trace) {
    nlohmann::json j{{"batch_id", t.batch_id},
                     {"stage", to_string(t.stage)},
                     {"duration", t.duration},
                     {"worker_class", to_string(t.worker_class)}};
    out << j.dump() << '\n';
  }
  if (!out) throw Error("save_trace: write failed for " + path.string());
}

std::vector<StageTask> load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_trace: cannot open " + path.string());
  std::vector<StageTask> trace;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      trace.push_back({j.at("batch_id").get<int>(), parse_stage(j.at("stage").get<std::string>()),
                       j.at("duration").get<std::int64_t>(),
                       parse_worker_class(j.value("worker_class", std::string("device")))});
    } catch (const nlohmann::json::exception& e) {
      throw Error("line " + std::to_string(n) + ": " + e.what());
    } catch (const Error& e) {
      throw Error("line " + std::to_string(n) + ": " + e.what());
    }
  }
  return trace;
}

SchedMode parse_sched_mode(std::string_view s) {
  if (s == "bsp" || s == "BSP") return SchedMode::bsp;
  if (s == "ssp" || s == "SSP") return SchedMode::ssp;
  throw Error("unknown scheduler mode '" + std::string(s) + "'");
}

void SchedulerConfig::validate() const {
  if (staleness < 0) throw Error("SchedulerConfig: staleness must be >= 0");
  for (int w : workers) {
    if (w < 1) throw Error("SchedulerConfig: every stage needs at least one worker");
  }
  if (device_capacity < 1 || host_capacity < 1) throw Error("SchedulerConfig: queue capacities must be >= 1");
  if (device_latency < 0) throw Error("SchedulerConfig: device latency must be >= 0");
  if (!(host_latency_factor >= 1.0)) throw Error("SchedulerConfig: host latency factor must be >= 1");
}

std::int64_t SchedulerConfig::host_latency() const {
  return std::llround(host_latency_factor * static_cast<double>(device_latency));
}

// -- two-level queue --

TwoLevelQueue::TwoLevelQueue(std::size_t device_capacity, std::size_t host_capacity, std::int64_t device_latency,
                             std::int64_t host_latency)
    : device_capacity_(device_capacity),
      host_capacity_(host_capacity),
      device_latency_(device_latency),
      host_latency_(host_latency) {}

std::optional<Tier> TwoLevelQueue::enqueue(int batch_id, std::int64_t ready_time, std::int64_t now) {
  if (device_.size() < device_capacity_) {
    device_.push_back({batch_id, ready_time, now + device_latency_, seq_++});
    return Tier::device;
  }
  if (host_.size() < host_capacity_) {
    host_.push_back({batch_id, ready_time, now + host_latency_, seq_++});
    return Tier::host;
  }
  return std::nullopt;
}

std::optional<std::pair<QueueEntry, Tier>> TwoLevelQueue::dequeue(std::int64_t now) {
  auto best = [now](std::vector<QueueEntry>& q) {
    auto pick = q.end();
    for (auto it = q.begin(); it != q.end(); ++it) {
      if (it->eligible_time > now) continue;
      if (pick == q.end() || std::tie(it->ready_time, it->batch_id, it->seq) <
                                 std::tie(pick->ready_time, pick->batch_id, pick->seq)) {
        pick = it;
      }
    }
    return pick;
  };
  for (Tier tier : {Tier::device, Tier::host}) {
    auto& q = tier == Tier::device ? device_ : host_;
    const auto it = best(q);
    if (it != q.end()) {
      const QueueEntry e = *it;
      q.erase(it);
      return std::make_pair(e, tier);
    }
  }
  return std::nullopt;
}

std::optional<std::int64_t> TwoLevelQueue::next_eligible(std::int64_t now) const {
  std::optional<std::int64_t> t;
  for (const auto* q : {&device_, &host_}) {
    for (const auto& e : *q) {
      if (e.eligible_time > now && (!t || e.eligible_time < *t)) t = e.eligible_time;
    }
  }
  return t;
}

// -- simulation --

std::int64_t SimMetrics::device_idle() const {
  std::int64_t s = 0;
  for (const auto& w : workers) s += w.worker_class == WorkerClass::device ? w.idle : 0;
  return s;
}

std::int64_t SimMetrics::total_busy() const {
  std::int64_t s = 0;
  for (const auto& w : workers) s += w.busy;
  return s;
}

std::int64_t SimMetrics::total_idle() const {
  std::int64_t s = 0;
  for (const auto& w : workers) s += w.idle;
  return s;
}

namespace {

struct Held {
  int batch;
  std::int64_t ready;
  bool stalled = false;
};

struct Worker {
  Stage stage;
  WorkerClass cls;
  std::int64_t last_free = 0;
  std::int64_t busy = 0;
  std::int64_t idle = 0;
  bool running = false;
  int batch = 0;
  Stage task_stage = Stage::reference_assessment;
  std::int64_t finish = 0;
};

}  // namespace

SimResult simulate(const std::vector<StageTask>& trace, const SchedulerConfig& cfg) {
  cfg.validate();
  if (trace.empty()) throw Error("simulate: empty trace");
  int n = 0;
  for (const auto& t : trace) {
    if (t.batch_id < 0) throw Error("simulate: negative batch id");
    if (t.duration < 1) throw Error("simulate: task durations must be >= 1");
    n = std::max(n, t.batch_id + 1);
  }
  std::vector<std::array<const StageTask*, kNumStages>> task(static_cast<std::size_t>(n));
  std::array<std::optional<WorkerClass>, kNumStages> stage_class;
  for (const auto& t : trace) {
    auto& slot = task[static_cast<std::size_t>(t.batch_id)][idx(t.stage)];
    if (slot) throw Error("simulate: duplicate task for batch " + std::to_string(t.batch_id));
    slot = &t;
    auto& cls = stage_class[idx(t.stage)];
    if (cls && *cls != t.worker_class) throw Error("simulate: mixed worker classes within a stage");
    cls = t.worker_class;
  }
  for (int b = 0; b < n; ++b) {
    for (std::size_t st = 0; st < kNumStages; ++st) {
      if (!task[static_cast<std::size_t>(b)][st]) {
        throw Error("simulate: batch " + std::to_string(b) + " lacks stage " +
                    std::string(kStageNames[st]) + " (unsatisfiable dependency)");
      }
    }
  }

  const int s = cfg.effective_staleness();
  std::vector<TwoLevelQueue> queues;
  for (std::size_t st = 0; st < kNumStages; ++st) {
    queues.emplace_back(cfg.device_capacity, cfg.host_capacity, cfg.device_latency, cfg.host_latency());
  }
  std::array<std::deque<Held>, kNumStages> held;
  std::vector<Worker> workers;
  for (std::size_t st = 0; st < kNumStages; ++st) {
    for (int k = 0; k < cfg.workers[st]; ++k) workers.push_back({static_cast<Stage>(st), *stage_class[st]});
  }

  SimResult res;
  SimMetrics& m = res.metrics;
  auto& events = res.events;
  std::vector<std::array<bool, kNumStages>> done(static_cast<std::size_t>(n), {false, false, false, false});
  std::vector<std::size_t> hist;
  std::size_t producer_starts = 0;
  double staleness_sum = 0.0;
  int version = 0;
  int next_producer = 0;
  int released_update = -1;
  std::int64_t now = 0;

  auto log = [&](const char* ev, int b, Stage st, int w = -1, int stale = -1) {
    events.push_back({now, ev, b, st, w, stale});
  };
  auto drain = [&](Stage st) {
    auto& h = held[idx(st)];
    while (!h.empty()) {
      const auto tier = queues[idx(st)].enqueue(h.front().batch, h.front().ready, now);
      if (!tier) {
        if (!h.front().stalled) {
          h.front().stalled = true;
          log("stall", h.front().batch, st);
        }
        return;
      }
      if (*tier == Tier::host) ++m.host_overflows;
      log(*tier == Tier::device ? "enqueue_device" : "enqueue_host", h.front().batch, st);
      m.stall_time += now - h.front().ready;
      h.pop_front();
    }
  };
  auto release = [&](int b, Stage st) {
    log("ready", b, st);
    held[idx(st)].push_back({b, now});
    drain(st);
  };
  auto release_ready = [&] {
    while (next_producer < n && version >= next_producer - s) {
      for (Stage st : kProducers) release(next_producer, st);
      ++next_producer;
    }
    if (version < n && released_update < version) {
      const auto& d = done[static_cast<std::size_t>(version)];
      if (d[0] && d[1] && d[2]) {
        released_update = version;
        release(version, Stage::parameter_update);
      }
    }
  };
  auto try_start = [&](std::size_t wi) {
    Worker& w = workers[wi];
    Stage st = w.stage;
    auto e = queues[idx(st)].dequeue(now);
    if (!e && cfg.co_schedule && w.stage == Stage::parameter_update && w.cls == WorkerClass::device) {
      for (Stage p : kProducers) {
        if (*stage_class[idx(p)] != WorkerClass::device) continue;
        if ((e = queues[idx(p)].dequeue(now))) {
          st = p;
          break;
        }
      }
    }
    if (!e) return false;
    const int b = e->first.batch_id;
    const int stale = b - version;
    if (st != Stage::parameter_update) {
      if (hist.size() <= static_cast<std::size_t>(stale)) hist.resize(static_cast<std::size_t>(stale) + 1, 0);
      ++hist[static_cast<std::size_t>(stale)];
      ++producer_starts;
      staleness_sum += stale;
      m.max_observed_staleness = std::max(m.max_observed_staleness, stale);
    }
    log("start", b, st, static_cast<int>(wi), stale);
    const std::int64_t dur = task[static_cast<std::size_t>(b)][idx(st)]->duration;
    w.idle += now - w.last_free;
    w.busy += dur;
    w.running = true;
    w.batch = b;
    w.task_stage = st;
    w.finish = now + dur;
    drain(st);
    return true;
  };

  for (;;) {
    release_ready();
    for (bool progress = true; progress;) {
      progress = false;
      for (std::size_t wi = 0; wi < workers.size(); ++wi) {
        if (!workers[wi].running && try_start(wi)) progress = true;
      }
    }
    if (version == n) break;

    std::optional<std::int64_t> next;
    for (const auto& w : workers) {
      if (w.running && (!next || w.finish < *next)) next = w.finish;
    }
    for (const auto& q : queues) {
      const auto t = q.next_eligible(now);
      if (t && (!next || *t < *next)) next = t;
    }
    if (!next) throw Error("simulate: no runnable work remains (dependency cycle)");
    now = *next;
    for (std::size_t wi = 0; wi < workers.size(); ++wi) {
      Worker& w = workers[wi];
      if (!w.running || w.finish != now) continue;
      log("finish", w.batch, w.task_stage, static_cast<int>(wi));
      done[static_cast<std::size_t>(w.batch)][idx(w.task_stage)] = true;
      if (w.task_stage == Stage::parameter_update) ++version;
      w.running = false;
      w.last_free = now;
    }
  }

  m.makespan = now;
  for (auto& w : workers) {
    w.idle += m.makespan - w.last_free;
    m.workers.push_back({w.stage, w.cls, w.busy, w.idle});
  }
  m.throughput = m.makespan > 0 ? static_cast<double>(n) / static_cast<double>(m.makespan) : 0.0;
  m.staleness_histogram = std::move(hist);
  m.mean_staleness = producer_starts ? staleness_sum / static_cast<double>(producer_starts) : 0.0;
  return res;
}

void write_event_log(std::ostream& out, const std::vector<SimEvent>& events) {
  out << "time,event,batch,stage,worker,staleness\n";
  for (const auto& e : events) {
    out << e.time << ',' << e.event << ',' << e.batch << ',' << to_string(e.stage) << ',';
    if (e.worker >= 0) out << e.worker;
    out << ',';
    if (e.staleness >= 0) out << e.staleness;
    out << '\n';
  }
}

std::vector<ComparisonRow> compare_schedulers(const std::vector<StageTask>& trace, const std::vector<int>& s_values,
                                              SchedulerConfig base) {
  if (s_values.empty()) throw Error("compare_schedulers: no staleness values");
  std::vector<ComparisonRow> rows;
  auto row = [&](std::string label, const SchedulerConfig& c) {
    const SimMetrics m = simulate(trace, c).metrics;
    ComparisonRow r{std::move(label), c.effective_staleness(), m.makespan, m.device_idle(), 0.0,
                    m.throughput, m.max_observed_staleness, m.mean_staleness};
    if (!rows.empty() && rows.front().device_idle > 0) {
      r.idle_reduction_pct = 100.0 * static_cast<double>(rows.front().device_idle - r.device_idle) /
                             static_cast<double>(rows.front().device_idle);
    }
    rows.push_back(std::move(r));
  };
  base.mode = SchedMode::bsp;
  row("bsp", base);
  base.mode = SchedMode::ssp;
  for (int s : s_values) {
    base.staleness = s;
    row("ssp(s=" + std::to_string(s) + ")", base);
  }
  return rows;
}

void write_comparison(std::ostream& out, const std::vector<ComparisonRow>& rows) {
  out << "label,staleness,makespan,device_idle,idle_reduction_pct,throughput,max_staleness,mean_staleness\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%lld,%lld,%.6f,%.10g,%d,%.6f\n", r.label.c_str(), r.staleness,
                  static_cast<long long>(r.makespan), static_cast<long long>(r.device_idle), r.idle_reduction_pct,
                  r.throughput, r.max_staleness, r.mean_staleness);
    out << buf;
  }
}

}  // namespace rtrain
