#include "ssd/bench.hpp"

#include <algorithm>
#include <cmath>
#include <new>
#include <numeric>

#include "ssd/bundle.hpp"

namespace ssd::bench {

void BenchProtocol::validate() const {
  if (timed_runs < 1) throw InputError("bench: timed_runs must be >= 1");
  if (prompt_len < 1) throw InputError("bench: prompt_len must be >= 1");
}

TimingStats summarize(std::vector<double> samples) {
  TimingStats st;
  st.samples = std::move(samples);
  const std::size_t n = st.samples.size();
  if (n == 0) return st;
  st.mean = std::accumulate(st.samples.begin(), st.samples.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double s : st.samples) var += (s - st.mean) * (s - st.mean);
  st.stddev = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
  std::vector<double> sorted = st.samples;
  std::sort(sorted.begin(), sorted.end());
  // Nearest-rank percentile.
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(n)));
  st.p99 = sorted[std::max<std::size_t>(rank, 1) - 1];
  return st;
}

TimingStats time_runs(const std::function<double()>& fn, std::size_t warmup, std::size_t timed) {
  volatile double sink = 0.0;
  for (std::size_t i = 0; i < warmup; ++i) sink = sink + fn();
  std::vector<double> samples;
  samples.reserve(timed);
  for (std::size_t i = 0; i < timed; ++i) {
    const auto start = std::chrono::steady_clock::now();
    const double checksum = fn();
    sink = sink + checksum;
    const auto stop = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double>(stop - start).count());
  }
  return summarize(std::move(samples));
}

namespace {

Tokens random_tokens(std::size_t len, std::size_t vocab, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<std::int64_t> ids(len);
  for (auto& id : ids) id = static_cast<std::int64_t>(rng.next_u64() % vocab);
  return Tokens(1, len, std::move(ids));
}

template <Real T>
double checksum(const Tensor<T>& t) {
  double s = 0.0;
  for (T v : t.data()) s += static_cast<double>(v);
  return s;
}

template <Real T>
TimingStats time_prefill(const ModelParams<T>& params, const ModelConfig& cfg, const Tokens& tokens,
                         const BenchProtocol& protocol) {
  return time_runs([&] { return checksum(prefill(params, tokens, cfg, protocol.mask).logits); }, protocol.warmup_runs,
                   protocol.timed_runs);
}

template <Real T>
TimingStats time_decode(const ModelParams<T>& params, const ModelConfig& cfg, const Tokens& prompt, std::size_t gen,
                        DecodeMode mode, const BenchProtocol& protocol) {
  return time_runs(
      [&] {
        const GenerationResult<T> r = generate(params, prompt, gen, mode, cfg, false, protocol.mask);
        return static_cast<double>(std::accumulate(r.tokens.ids.begin(), r.tokens.ids.end(), std::int64_t{0}));
      },
      protocol.warmup_runs, protocol.timed_runs);
}

}  // namespace

std::vector<cost::CostReport> run_bench(const ModelParams<float>& params, const ModelConfig& cfg,
                                        const std::string& model_name, BenchPhase phase,
                                        const std::vector<std::size_t>& lengths, DecodeMode mode,
                                        const cost::DeviceSpec& device, const BenchProtocol& protocol) {
  protocol.validate();
  cfg.validate();
  const ElemType type = protocol.f64 ? ElemType::F64 : ElemType::F32;
  ModelConfig run_cfg = cfg;
  run_cfg.elem_policy.compute = type;
  std::optional<ModelParams<double>> params64;
  if (protocol.f64) params64 = params.cast<double>();

  std::vector<cost::CostReport> out;
  for (std::size_t len : lengths) {
    cost::CostReport r;
    r.model = model_name;
    r.seq_len = len;
    if (phase == BenchPhase::Prefill) {
      r.phase = "prefill";
      r.mode = "-";
      r.flops = cost::flops_prefill(cfg, len);
      r.bytes = cost::bytes_model(cfg, cost::Phase::Prefill, len, 1, type);
      r.cache_bytes = cache_bytes(cfg, 1, type);
      r.peak_bytes = cost::peak_activation_bytes(cfg, len, 1, type);
    } else {
      if (len <= protocol.prompt_len) {
        throw InputError("bench-decode: seq_len " + std::to_string(len) + " must exceed the prompt length " +
                         std::to_string(protocol.prompt_len));
      }
      const std::size_t P = protocol.prompt_len, G = len - P;
      r.phase = "decode";
      r.mode = mode == DecodeMode::Cached ? "cached" : "non-cached";
      r.flops = cost::flops_decode(cfg, mode, P, G);
      if (mode == DecodeMode::Cached) {
        r.bytes = cost::bytes_model(cfg, cost::Phase::Prefill, P, 1, type) +
                  G * cost::bytes_model(cfg, cost::Phase::DecodeStep, 1, 1, type);
        r.cache_bytes = cache_bytes(cfg, 1, type);
      } else {
        for (std::size_t g = 0; g < G; ++g) r.bytes += cost::bytes_model(cfg, cost::Phase::Prefill, P + g, 1, type);
      }
      r.peak_bytes = cost::decode_peak_bytes(cfg, mode, P, len, 1, type);
    }

    if (protocol.memory_budget_bytes != 0 && r.peak_bytes > protocol.memory_budget_bytes) {
      r.oom = true;
      out.push_back(r);
      continue;
    }
    try {
      TimingStats st;
      if (phase == BenchPhase::Prefill) {
        const Tokens tokens = random_tokens(len, cfg.vocab_size, protocol.seed);
        st = protocol.f64 ? time_prefill(*params64, run_cfg, tokens, protocol)
                          : time_prefill(params, run_cfg, tokens, protocol);
        r.tokens_per_s = static_cast<double>(len) / st.mean;
      } else {
        const std::size_t G = len - protocol.prompt_len;
        const Tokens prompt = random_tokens(protocol.prompt_len, cfg.vocab_size, protocol.seed);
        st = protocol.f64 ? time_decode(*params64, run_cfg, prompt, G, mode, protocol)
                          : time_decode(params, run_cfg, prompt, G, mode, protocol);
        r.tokens_per_s = static_cast<double>(G) / st.mean;
      }
      r.wall_mean = st.mean;
      r.wall_stddev = st.stddev;
      r.wall_p99 = st.p99;
      r.mfu = cost::mfu(static_cast<double>(r.flops), st.mean, device);
      r.hbu = cost::hbu(static_cast<double>(r.bytes), st.mean, device);
    } catch (const std::bad_alloc&) {
      r.oom = true;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace ssd::bench
