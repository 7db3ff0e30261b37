#pragma once

#include <optional>
#include <set>
#include <string>

#include "ssd/bundle.hpp"
#include "ssd/oracle.hpp"

namespace ssd::verify {

// Random SSD problem in f64, drawn from a CounterRng stream.
struct SsdInstance {
  Tensor<double> x, dt, a, b, c, d;
  std::optional<Tensor<double>> initial_state;
};

struct InstanceLimits {
  std::size_t max_batch = 2;
  std::size_t max_len = 512;
  std::size_t max_heads = 4;
  std::size_t max_head_dim = 8;
  std::size_t max_state = 8;
  bool with_initial_state = false;
};

SsdInstance random_instance(CounterRng& rng, const InstanceLimits& limits = {});

template <Real T>
SsdInputs<T> to_inputs(const SsdInstance& inst) {
  return {inst.x.cast<T>(), inst.dt.cast<T>(), inst.a.cast<T>(), inst.b.cast<T>(), inst.c.cast<T>()};
}

// ssd_forward plus the D x skip, so it is comparable with the oracle.
template <Real T>
SsdOutputs<T> ssd_with_skip(const SsdInstance& inst, std::size_t chunk_len, MaskStrategy mask = MaskStrategy::Static);

enum class Suite { Oracle, Chunk, Cached, Greedy, Masking, Bf16 };

const char* suite_name(Suite s);
std::optional<Suite> suite_from_name(const std::string& name);
std::set<Suite> all_suites();

struct CheckResult {
  Suite suite;
  std::string name;
  bool pass = false;
  std::string detail;
  std::optional<oracle::OracleReport> report;
};

struct VerifyOptions {
  std::set<Suite> suites = all_suites();
  std::size_t instances = 24;  // random SSD instances per f32/f64 sweep
  std::size_t greedy_steps = 64;
  std::uint64_t seed = 0;
  bool f64_only = false;
  MaskStrategy mask = MaskStrategy::Static;
  bool ablate_bf16_decay = false;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  bool pass() const;
  std::string to_jsonl() const;
  std::string to_table() const;
};

// Runs the selected suites against `params` (f32 weights; the f64 runs use
// an upcast copy).
VerifyReport run_verify(const ModelParams<float>& params, const ModelConfig& cfg, const VerifyOptions& opts);

// Max |a - b| over all entries of two equally-shaped tensors.
template <Real A, Real B>
double max_abs_diff(const Tensor<A>& a, const Tensor<B>& b);

// Logits at the last position of a (B, T, V) tensor, as (B, V).
template <Real T>
Tensor<T> last_logits(const Tensor<T>& logits);

}  // namespace ssd::verify
