#include "ssd/verify.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "ssd/decode.hpp"

namespace ssd::verify {

SsdInstance random_instance(CounterRng& rng, const InstanceLimits& lim) {
  auto pick = [&rng](std::size_t lo, std::size_t hi) { return lo + rng.next_u64() % (hi - lo + 1); };
  const std::size_t B = pick(1, lim.max_batch);
  const std::size_t T = pick(1, lim.max_len);
  std::size_t H = 1;
  while (H * 2 <= lim.max_heads && rng.uniform() < 0.5) H *= 2;
  const std::size_t P = pick(1, lim.max_head_dim);
  const std::size_t N = pick(1, lim.max_state);
  const std::size_t G = rng.uniform() < 0.5 ? 1 : H;

  SsdInstance inst{Tensor<double>({B, T, H, P}), Tensor<double>({B, T, H}), Tensor<double>({H}),
                   Tensor<double>({B, T, G, N}), Tensor<double>({B, T, G, N}), Tensor<double>({H}), std::nullopt};
  for (double& v : inst.x.data()) v = rng.normal(0.0, 1.0);
  for (double& v : inst.dt.data()) v = rng.uniform(1e-3, 1e-1);
  for (double& v : inst.a.data()) v = -rng.uniform(1.0, 16.0);
  for (double& v : inst.b.data()) v = rng.normal(0.0, 1.0);
  for (double& v : inst.c.data()) v = rng.normal(0.0, 1.0);
  for (double& v : inst.d.data()) v = rng.normal(0.0, 1.0);
  if (lim.with_initial_state) {
    Tensor<double> s({B, H, P, N});
    for (double& v : s.data()) v = rng.normal(0.0, 1.0);
    inst.initial_state = std::move(s);
  }
  return inst;
}

template <Real T>
SsdOutputs<T> ssd_with_skip(const SsdInstance& inst, std::size_t chunk_len, MaskStrategy mask) {
  std::optional<Tensor<T>> init;
  if (inst.initial_state) init = inst.initial_state->cast<T>();
  SsdOutputs<T> out = ssd_forward(to_inputs<T>(inst), chunk_len, init, mask);
  const std::size_t H = inst.x.dim(2), P = inst.x.dim(3);
  const Tensor<T> x = inst.x.cast<T>();
  for (std::size_t i = 0; i < out.y.size(); ++i) out.y[i] += static_cast<T>(inst.d[(i / P) % H]) * x[i];
  return out;
}

template SsdOutputs<float> ssd_with_skip(const SsdInstance&, std::size_t, MaskStrategy);
template SsdOutputs<double> ssd_with_skip(const SsdInstance&, std::size_t, MaskStrategy);

template <Real A, Real B>
double max_abs_diff(const Tensor<A>& a, const Tensor<B>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    if (std::isnan(d)) return std::numeric_limits<double>::infinity();
    m = std::max(m, d);
  }
  return m;
}

template double max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<float>&, const Tensor<double>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

template <Real T>
Tensor<T> last_logits(const Tensor<T>& logits) {
  const std::size_t B = logits.dim(0), T_len = logits.dim(1), V = logits.dim(2);
  Tensor<T> out({B, V});
  for (std::size_t b = 0; b < B; ++b)
    std::copy(&logits(b, T_len - 1, 0), &logits(b, T_len - 1, 0) + V, &out(b, 0));
  return out;
}

template Tensor<float> last_logits(const Tensor<float>&);
template Tensor<double> last_logits(const Tensor<double>&);

const char* suite_name(Suite s) {
  switch (s) {
    case Suite::Oracle: return "oracle";
    case Suite::Chunk: return "chunk";
    case Suite::Cached: return "cached";
    case Suite::Greedy: return "greedy";
    case Suite::Masking: return "masking";
    case Suite::Bf16: return "bf16";
  }
  return "?";
}

std::optional<Suite> suite_from_name(const std::string& name) {
  for (Suite s : all_suites())
    if (name == suite_name(s)) return s;
  return std::nullopt;
}

std::set<Suite> all_suites() {
  return {Suite::Oracle, Suite::Chunk, Suite::Cached, Suite::Greedy, Suite::Masking, Suite::Bf16};
}

bool VerifyReport::pass() const {
  for (const CheckResult& c : checks)
    if (!c.pass) return false;
  return true;
}

std::string VerifyReport::to_jsonl() const {
  std::ostringstream os;
  for (const CheckResult& c : checks) {
    nlohmann::json j{{"suite", suite_name(c.suite)}, {"check", c.name}, {"pass", c.pass}, {"detail", c.detail}};
    if (c.report) {
      j["max_abs_err"] = c.report->max_abs_err;
      j["max_rel_err"] = c.report->max_rel_err;
      j["worst_index"] = c.report->worst_index;
      j["rtol"] = c.report->rtol;
      j["atol"] = c.report->atol;
      j["violations"] = c.report->violations;
    }
    os << j.dump() << '\n';
  }
  return os.str();
}

std::string VerifyReport::to_table() const {
  std::ostringstream os;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-8s %-50s %-6s %s\n", "suite", "check", "result", "detail");
  os << buf;
  for (const CheckResult& c : checks) {
    std::snprintf(buf, sizeof buf, "%-8s %-50s %-6s %s\n", suite_name(c.suite), c.name.c_str(),
                  c.pass ? "PASS" : "FAIL", c.detail.c_str());
    os << buf;
    if (!c.pass && c.report) os << "         " << c.report->summary() << '\n';
  }
  return os.str();
}

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

// Keeps the report with the largest tolerance excess seen so far.
struct Worst {
  std::optional<oracle::OracleReport> report;
  double max_abs = 0.0;
  bool pass = true;

  void add(const oracle::OracleReport& r) {
    max_abs = std::max(max_abs, r.max_abs_err);
    if (!report || (report->pass && !r.pass) || (report->pass == r.pass && r.max_abs_err > report->max_abs_err)) {
      report = r;
    }
    pass = pass && r.pass;
  }
};

Tokens random_tokens(CounterRng& rng, std::size_t batch, std::size_t len, std::size_t vocab) {
  std::vector<std::int64_t> ids(batch * len);
  for (auto& id : ids) id = static_cast<std::int64_t>(rng.next_u64() % vocab);
  return Tokens(batch, len, std::move(ids));
}

constexpr std::size_t kChunkSizes[] = {1, 4, 16, 64, 256};

void oracle_suite(const VerifyOptions& opts, std::vector<CheckResult>& out) {
  CounterRng rng(opts.seed ^ 0x6f7261636c65ull);
  Worst w64, w32;
  InstanceLimits lim;
  for (std::size_t i = 0; i < opts.instances; ++i) {
    lim.with_initial_state = i % 3 == 2;
    const SsdInstance inst = random_instance(rng, lim);
    const std::size_t L = kChunkSizes[i % std::size(kChunkSizes)];
    const oracle::SequentialResult ref =
        oracle::sequential_ssm(inst.x, inst.dt, inst.a, inst.b, inst.c, inst.d, inst.initial_state);
    const SsdOutputs<double> o64 = ssd_with_skip<double>(inst, L);
    w64.add(oracle::compare(o64.y, ref.y, 0.0, 1e-10));
    w64.add(oracle::compare(o64.final_state, ref.final_state, 0.0, 1e-10));
    if (!opts.f64_only) {
      const SsdOutputs<float> o32 = ssd_with_skip<float>(inst, L);
      w32.add(oracle::compare(o32.y, ref.y, oracle::kLogitRtol, oracle::kLogitAtol));
      w32.add(oracle::compare(o32.final_state, ref.final_state, oracle::kLogitRtol, oracle::kLogitAtol));
    }
  }
  const std::string n = std::to_string(opts.instances) + " instances";
  out.push_back({Suite::Oracle, "chunked vs sequential (f64, atol 1e-10)", w64.pass,
                 n + ", max_abs " + sci(w64.max_abs), w64.report});
  if (!opts.f64_only) {
    out.push_back({Suite::Oracle, "chunked vs sequential (f32, rtol 1e-5 atol 2e-4)", w32.pass,
                   n + ", max_abs " + sci(w32.max_abs), w32.report});
  }
}

void chunk_suite(const VerifyOptions& opts, std::vector<CheckResult>& out) {
  CounterRng rng(opts.seed ^ 0x6368756e6bull);
  double worst = 0.0;
  for (std::size_t i = 0; i < opts.instances; ++i) {
    const SsdInstance inst = random_instance(rng);
    const std::size_t T = inst.x.dim(1);
    std::vector<SsdOutputs<double>> runs;
    for (std::size_t L : {std::size_t{1}, std::size_t{4}, std::size_t{16}, std::size_t{64}, T})
      runs.push_back(ssd_with_skip<double>(inst, L));
    for (std::size_t p = 0; p < runs.size(); ++p)
      for (std::size_t q = p + 1; q < runs.size(); ++q) {
        worst = std::max(worst, max_abs_diff(runs[p].y, runs[q].y));
        worst = std::max(worst, max_abs_diff(runs[p].final_state, runs[q].final_state));
      }
  }
  out.push_back({Suite::Chunk, "L in {1,4,16,64,T} pairwise (f64, 1e-10)", worst <= 1e-10,
                 std::to_string(opts.instances) + " instances, max pairwise diff " + sci(worst), std::nullopt});
}

template <Real T>
double cached_vs_full(const ModelParams<T>& params, const ModelConfig& cfg, const Tokens& seq, std::size_t prompt,
                      MaskStrategy mask) {
  PrefillResult<T> pre = prefill(params, seq.prefix(prompt), cfg, mask);
  Mamba2Cache<T> cache = std::move(pre.cache);
  Tensor<T> logits;
  for (std::size_t t = prompt; t < seq.length; ++t) {
    StepResult<T> step = decode_step(params, std::move(cache), seq.column(t), cfg);
    cache = std::move(step.cache);
    logits = std::move(step.logits);
  }
  const Tensor<T> full = last_logits(prefill(params, seq, cfg, mask).logits);
  return max_abs_diff(logits, full);
}

void cached_suite(const ModelParams<float>& params, const ModelParams<double>& params64, const ModelConfig& cfg,
                  const VerifyOptions& opts, std::vector<CheckResult>& out) {
  CounterRng rng(opts.seed ^ 0x636163686564ull);
  double worst32 = 0.0, worst64 = 0.0;
  ModelConfig cfg64 = cfg;
  cfg64.elem_policy.compute = ElemType::F64;
  for (std::size_t P : {1, 16, 33}) {
    for (std::size_t G : {1, 8}) {
      const Tokens seq = random_tokens(rng, 1, P + G, cfg.vocab_size);
      worst64 = std::max(worst64, cached_vs_full(params64, cfg64, seq, P, opts.mask));
      if (!opts.f64_only) worst32 = std::max(worst32, cached_vs_full(params, cfg, seq, P, opts.mask));
    }
  }
  out.push_back({Suite::Cached, "prefill+decode vs prefill (f64, 1e-9)", worst64 <= 1e-9, "max_abs " + sci(worst64),
                 std::nullopt});
  if (!opts.f64_only) {
    out.push_back({Suite::Cached, "prefill+decode vs prefill (f32, 1.3e-4)", worst32 <= 1.3e-4,
                   "max_abs " + sci(worst32), std::nullopt});
  }
}

void greedy_suite(const ModelParams<float>& params, const ModelParams<double>& params64, const ModelConfig& cfg,
                  const VerifyOptions& opts, std::vector<CheckResult>& out) {
  CounterRng rng(opts.seed ^ 0x677265656479ull);
  const Tokens prompt = random_tokens(rng, 1, 16, cfg.vocab_size);
  ModelConfig cfg64 = cfg;
  cfg64.elem_policy.compute = ElemType::F64;
  const std::string steps = std::to_string(opts.greedy_steps) + " steps";
  {
    const auto a = generate(params64, prompt, opts.greedy_steps, DecodeMode::Cached, cfg64, false, opts.mask);
    const auto b = generate(params64, prompt, opts.greedy_steps, DecodeMode::NonCached, cfg64, false, opts.mask);
    out.push_back({Suite::Greedy, "cached vs non-cached tokens (f64)", a.tokens == b.tokens, steps, std::nullopt});
  }
  if (!opts.f64_only) {
    const auto a = generate(params, prompt, opts.greedy_steps, DecodeMode::Cached, cfg, false, opts.mask);
    const auto b = generate(params, prompt, opts.greedy_steps, DecodeMode::NonCached, cfg, false, opts.mask);
    out.push_back({Suite::Greedy, "cached vs non-cached tokens (f32)", a.tokens == b.tokens, steps, std::nullopt});
  }
}

void masking_suite(const ModelParams<float>& params, const ModelConfig& cfg, const VerifyOptions& opts,
                   std::vector<CheckResult>& out) {
  CounterRng rng(opts.seed ^ 0x6d61736bull);
  bool all_equal = true;
  constexpr std::size_t kMatrices = 1000;
  for (std::size_t i = 0; i < kMatrices; ++i) {
    Tensor<float> m({16, 16});
    for (float& v : m.data()) v = static_cast<float>(rng.normal(0.0, 1.0));
    all_equal = all_equal && tril_mask_static(m, -std::numeric_limits<float>::infinity())
                                 .bitwise_equal(tril_mask_rowwise(m, -std::numeric_limits<float>::infinity()));
  }
  out.push_back({Suite::Masking, "static vs rowwise tril (1000 16x16)", all_equal, "bitwise", std::nullopt});

  const Tokens seq = random_tokens(rng, 1, 3 * cfg.chunk_size + 5, cfg.vocab_size);
  const auto a = prefill(params, seq, cfg, MaskStrategy::Static);
  const auto b = prefill(params, seq, cfg, MaskStrategy::Rowwise);
  bool same = a.logits.bitwise_equal(b.logits);
  for (std::size_t l = 0; l < a.cache.layers.size(); ++l)
    same = same && a.cache.layers[l].ssm_state.bitwise_equal(b.cache.layers[l].ssm_state);
  out.push_back({Suite::Masking, "prefill logits static vs rowwise", same, "bitwise", std::nullopt});
}

void bf16_suite(const ModelParams<float>& params, const ModelConfig& cfg, const VerifyOptions& opts,
                std::vector<CheckResult>& out) {
  CounterRng rng(opts.seed ^ 0x62663136ull);
  const Tokens seq = random_tokens(rng, 1, 64, cfg.vocab_size);
  ModelConfig base = cfg;
  base.elem_policy.decay_exp = DecayExp::F32;
  ModelConfig ablated = cfg;
  ablated.elem_policy.decay_exp = DecayExp::BF16E;
  const Tensor<float> ref = prefill(params, seq, base).logits;
  const double baseline = max_abs_diff(prefill(params, seq, base).logits, ref);
  const double divergence = max_abs_diff(prefill(params, seq, ablated).logits, ref);
  out.push_back({Suite::Bf16, "f32 decay baseline self-divergence == 0", baseline == 0.0, "max_abs " + sci(baseline),
                 std::nullopt});
  out.push_back({Suite::Bf16, "bf16 decay diverges (> 0, > 10x baseline)",
                 divergence > 0.0 && divergence > 10.0 * baseline, "max_abs " + sci(divergence), std::nullopt});
}

}  // namespace

VerifyReport run_verify(const ModelParams<float>& params, const ModelConfig& cfg_in, const VerifyOptions& opts) {
  ModelConfig cfg = cfg_in;
  cfg.elem_policy.compute = ElemType::F32;
  if (opts.ablate_bf16_decay) cfg.elem_policy.decay_exp = DecayExp::BF16E;
  cfg.validate();
  check_params(params, cfg);
  const ModelParams<double> params64 = params.cast<double>();

  VerifyReport rep;
  if (opts.suites.count(Suite::Oracle)) oracle_suite(opts, rep.checks);
  if (opts.suites.count(Suite::Chunk)) chunk_suite(opts, rep.checks);
  if (opts.suites.count(Suite::Cached)) cached_suite(params, params64, cfg, opts, rep.checks);
  if (opts.suites.count(Suite::Greedy)) greedy_suite(params, params64, cfg, opts, rep.checks);
  if (opts.suites.count(Suite::Masking)) masking_suite(params, cfg, opts, rep.checks);
  if (opts.suites.count(Suite::Bf16)) bf16_suite(params, cfg, opts, rep.checks);
  return rep;
}

}  // namespace ssd::verify
