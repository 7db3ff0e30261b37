#pragma once

#include <chrono>
#include <functional>

#include "ssd/cost.hpp"

namespace ssd::bench {

struct BenchProtocol {
  std::size_t warmup_runs = 1;
  std::size_t timed_runs = 5;
  std::size_t prompt_len = 16;  // decode sweeps: fixed prompt, generate up to seq_len
  std::uint64_t memory_budget_bytes = 0;  // 0 = unlimited; larger analytic peaks are reported as OOM
  std::uint64_t seed = 0;
  bool f64 = false;
  MaskStrategy mask = MaskStrategy::Static;

  void validate() const;
};

struct TimingStats {
  std::vector<double> samples;  // seconds
  double mean = 0.0;
  double stddev = 0.0;
  double p99 = 0.0;
};

TimingStats summarize(std::vector<double> samples);

// Runs `fn` warmup + timed times on a monotonic clock. `fn` must return a
// value derived from every output it produced; the value is consumed before
// the clock stops so no work can be deferred past the measurement.
TimingStats time_runs(const std::function<double()>& fn, std::size_t warmup, std::size_t timed);

enum class BenchPhase { Prefill, Decode };

std::vector<cost::CostReport> run_bench(const ModelParams<float>& params, const ModelConfig& cfg,
                                        const std::string& model_name, BenchPhase phase,
                                        const std::vector<std::size_t>& lengths, DecodeMode mode,
                                        const cost::DeviceSpec& device, const BenchProtocol& protocol);

}  // namespace ssd::bench
