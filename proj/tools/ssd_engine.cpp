// ssd-engine: command-line front end for the SSD inference engine.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "ssd/bench.hpp"
#include "ssd/verify.hpp"

namespace {

using namespace ssd;

enum Exit { kOk = 0, kVerifyFailed = 1, kUsage = 2, kIo = 3 };

struct Common {
  std::string bundle;
  std::vector<std::size_t> seq_len;
  std::size_t gen_len = 64;
  std::string mode = "cached";
  std::string device = "v6e";
  std::size_t runs = 5;
  std::size_t warmup = 1;
  std::string format = "table";
  std::uint64_t seed = 0;
  bool f64 = false;
  bool ablate_bf16_decay = false;
  std::string mask = "static";
};

// Parses "128,256,4096" into lengths.
std::vector<std::size_t> parse_lengths(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v < 1) throw InputError("bad length '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw InputError("empty length list");
  return out;
}

std::vector<std::int64_t> parse_ids(const std::string& s) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    long long v = -1;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw InputError("bad token id '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InputError("empty prompt");
  return out;
}

MaskStrategy mask_of(const std::string& s) { return s == "rowwise" ? MaskStrategy::Rowwise : MaskStrategy::Static; }
DecodeMode mode_of(const std::string& s) { return s == "non-cached" ? DecodeMode::NonCached : DecodeMode::Cached; }

std::string model_name(const Common& c) {
  return c.bundle.empty() ? "random" : std::filesystem::path(c.bundle).lexically_normal().filename().string();
}

void emit(const std::vector<cost::CostReport>& rows, const std::string& format) {
  if (format == "csv") std::cout << cost::to_csv(rows);
  else if (format == "jsonl") std::cout << cost::to_jsonl(rows);
  else std::cout << cost::to_table(rows);
}

ModelConfig preset(const std::string& name) {
  if (name == "tiny") return ModelConfig::tiny();
  if (name == "130m") return ModelConfig::mamba2_130m();
  throw InputError("unknown preset '" + name + "' (tiny or 130m)");
}

int cmd_init(const Common& c, const std::string& preset_name, std::size_t layers, std::size_t chunk) {
  if (c.bundle.empty()) throw InputError("init needs --bundle");
  ModelConfig cfg = preset(preset_name);
  if (layers != 0) cfg.n_layers = layers;
  if (chunk != 0) cfg.chunk_size = chunk;
  cfg.validate();
  save_bundle(random_init(cfg, c.seed), cfg, c.bundle);
  std::cerr << "wrote " << c.bundle << " (" << parameter_count(cfg) << " parameters, " << cfg.n_layers
            << " layers)\n";
  return kOk;
}

// Bundle from --bundle, or a seeded random tiny model when none is given.
LoadedBundle open_model(const Common& c) {
  if (!c.bundle.empty()) {
    LoadedBundle b = load_bundle(c.bundle);
    for (const std::string& w : b.warnings) std::cerr << "warning: " << w << '\n';
    return b;
  }
  LoadedBundle b;
  b.config = ModelConfig::tiny();
  b.params = random_init(b.config, c.seed);
  return b;
}

int cmd_verify(const Common& c, const std::vector<std::string>& suites, std::size_t instances) {
  if (c.format == "csv") throw InputError("verify supports --format table|jsonl");
  const LoadedBundle b = open_model(c);
  verify::VerifyOptions opts;
  if (!suites.empty()) {
    opts.suites.clear();
    for (const std::string& s : suites) {
      const auto su = verify::suite_from_name(s);
      if (!su) throw InputError("unknown suite '" + s + "'");
      opts.suites.insert(*su);
    }
  }
  opts.instances = instances;
  opts.greedy_steps = c.gen_len;
  opts.seed = c.seed;
  opts.f64_only = c.f64;
  opts.mask = mask_of(c.mask);
  opts.ablate_bf16_decay = c.ablate_bf16_decay;
  const verify::VerifyReport rep = verify::run_verify(b.params, b.config, opts);
  if (c.format == "jsonl") std::cout << rep.to_jsonl();
  else std::cout << rep.to_table();
  return rep.pass() ? kOk : kVerifyFailed;
}

template <Real T>
GenerationResult<T> run_generate(const ModelParams<T>& params, const Tokens& prompt, const Common& c,
                                 const ModelConfig& cfg) {
  return generate(params, prompt, c.gen_len, mode_of(c.mode), cfg, false, mask_of(c.mask));
}

int cmd_generate(const Common& c, const std::string& prompt_text) {
  LoadedBundle b = open_model(c);
  ModelConfig cfg = b.config;
  if (c.ablate_bf16_decay) cfg.elem_policy.decay_exp = DecayExp::BF16E;
  const std::vector<std::int64_t> ids = parse_ids(prompt_text);
  const Tokens prompt(1, ids.size(), ids);
  check_tokens(prompt, cfg);
  Tokens out;
  if (c.f64) {
    cfg.elem_policy.compute = ElemType::F64;
    out = run_generate(b.params.cast<double>(), prompt, c, cfg).tokens;
  } else {
    out = run_generate(b.params, prompt, c, cfg).tokens;
  }
  if (c.format == "jsonl") {
    nlohmann::json j = {{"prompt", ids}, {"tokens", out.ids}, {"mode", c.mode}};
    std::cout << j.dump() << '\n';
  } else {
    for (std::size_t i = 0; i < out.ids.size(); ++i) std::cout << (i ? "," : "") << out.ids[i];
    std::cout << '\n';
  }
  return kOk;
}

int cmd_bench(const Common& c, bench::BenchPhase phase, std::size_t prompt_len, std::uint64_t budget) {
  if (c.seq_len.empty()) throw InputError("need --seq-len");
  LoadedBundle b = open_model(c);
  ModelConfig cfg = b.config;
  if (c.ablate_bf16_decay) cfg.elem_policy.decay_exp = DecayExp::BF16E;
  bench::BenchProtocol proto;
  proto.warmup_runs = c.warmup;
  proto.timed_runs = c.runs;
  proto.prompt_len = prompt_len;
  proto.memory_budget_bytes = budget;
  proto.seed = c.seed;
  proto.f64 = c.f64;
  proto.mask = mask_of(c.mask);
  const auto rows = bench::run_bench(b.params, cfg, model_name(c), phase, c.seq_len, mode_of(c.mode),
                                     cost::device_from_string(c.device), proto);
  emit(rows, c.format);
  return kOk;
}

// Analytic rows only; no model is executed.
int cmd_cost(const Common& c, const std::string& preset_name, std::size_t prompt_len) {
  if (c.seq_len.empty()) throw InputError("need --seq-len");
  const ModelConfig cfg = c.bundle.empty() ? preset(preset_name) : read_manifest(c.bundle).config;
  const ElemType type = c.f64 ? ElemType::F64 : ElemType::F32;
  const DecodeMode mode = mode_of(c.mode);
  const std::string name = c.bundle.empty() ? preset_name : model_name(c);
  std::vector<cost::CostReport> rows;
  for (std::size_t len : c.seq_len) {
    cost::CostReport r;
    r.model = name;
    r.phase = "prefill";
    r.seq_len = len;
    r.mode = "-";
    r.flops = cost::flops_prefill(cfg, len);
    r.bytes = cost::bytes_model(cfg, cost::Phase::Prefill, len, 1, type);
    r.cache_bytes = cache_bytes(cfg, 1, type);
    r.peak_bytes = cost::peak_activation_bytes(cfg, len, 1, type);
    rows.push_back(r);
    if (len <= prompt_len) continue;
    cost::CostReport d;
    d.model = name;
    d.phase = "decode";
    d.seq_len = len;
    d.mode = c.mode;
    d.flops = cost::flops_decode(cfg, mode, prompt_len, len - prompt_len);
    if (mode == DecodeMode::Cached) {
      d.bytes = cost::bytes_model(cfg, cost::Phase::Prefill, prompt_len, 1, type) +
                (len - prompt_len) * cost::bytes_model(cfg, cost::Phase::DecodeStep, 1, 1, type);
      d.cache_bytes = cache_bytes(cfg, 1, type);
    } else {
      for (std::size_t g = 0; g < len - prompt_len; ++g)
        d.bytes += cost::bytes_model(cfg, cost::Phase::Prefill, prompt_len + g, 1, type);
    }
    d.peak_bytes = cost::decode_peak_bytes(cfg, mode, prompt_len, len, 1, type);
    rows.push_back(d);
  }
  emit(rows, c.format);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mamba-2 SSD inference engine"};
  app.require_subcommand(1);
  Common c;
  std::string seq_len_text;
  std::string preset_name = "tiny";
  std::size_t layers = 0, chunk = 0, instances = 24, prompt_len = 16;
  std::uint64_t budget = 0;
  std::string prompt_text = "0";
  std::vector<std::string> suites;

  const std::vector<std::string> formats{"table", "csv", "jsonl"};
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--bundle", c.bundle, "Bundle directory");
    sub->add_option("--seed", c.seed, "Seed for random weights and inputs");
    sub->add_option("--format", c.format, "Output format")->check(CLI::IsMember(formats));
    sub->add_flag("--f64", c.f64, "Run in f64");
    sub->add_option("--mask-strategy", c.mask, "Causal mask construction")
        ->check(CLI::IsMember({"static", "rowwise"}));
    sub->add_flag("--ablate-bf16-decay", c.ablate_bf16_decay, "Round exp(A_log) to bf16");
  };
  auto add_run = [&](CLI::App* sub) {
    sub->add_option("--seq-len", seq_len_text, "Lengths, comma separated");
    sub->add_option("--gen-len", c.gen_len, "Generated tokens")->check(CLI::PositiveNumber);
    sub->add_option("--mode", c.mode, "Decode mode")->check(CLI::IsMember({"cached", "non-cached"}));
  };
  auto add_timing = [&](CLI::App* sub) {
    sub->add_option("--device", c.device, "v6e, a100 or custom:TFLOPS:GBPS");
    sub->add_option("--runs", c.runs, "Timed runs")->check(CLI::PositiveNumber);
    sub->add_option("--warmup", c.warmup, "Warmup runs");
    sub->add_option("--prompt-len", prompt_len, "Decode prompt length")->check(CLI::PositiveNumber);
    sub->add_option("--memory-budget", budget, "Report configurations above this analytic peak as OOM (bytes)");
  };

  CLI::App* init = app.add_subcommand("init", "Write a random-weight bundle");
  add_common(init);
  init->add_option("--preset", preset_name, "tiny or 130m");
  init->add_option("--layers", layers, "Override layer count");
  init->add_option("--chunk-size", chunk, "Override chunk length");

  CLI::App* ver = app.add_subcommand("verify", "Run the correctness suites");
  add_common(ver);
  add_run(ver);
  ver->add_option("--suite", suites, "oracle, chunk, cached, greedy, masking, bf16 (repeatable)");
  ver->add_option("--instances", instances, "Random SSD instances per sweep")->check(CLI::PositiveNumber);

  CLI::App* gen = app.add_subcommand("generate", "Greedy generation");
  add_common(gen);
  add_run(gen);
  gen->add_option("--prompt", prompt_text, "Prompt token ids, comma separated");

  CLI::App* bp = app.add_subcommand("bench-prefill", "Time prefill");
  add_common(bp);
  add_run(bp);
  add_timing(bp);

  CLI::App* bd = app.add_subcommand("bench-decode", "Time decoding up to each length");
  add_common(bd);
  add_run(bd);
  add_timing(bd);

  CLI::App* co = app.add_subcommand("cost", "Analytic FLOP, byte and memory counts");
  add_common(co);
  add_run(co);
  add_timing(co);
  co->add_option("--preset", preset_name, "tiny or 130m, when no bundle is given");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (!seq_len_text.empty()) c.seq_len = parse_lengths(seq_len_text);
    if (init->parsed()) return cmd_init(c, preset_name, layers, chunk);
    if (ver->parsed()) return cmd_verify(c, suites, instances);
    if (gen->parsed()) return cmd_generate(c, prompt_text);
    if (bp->parsed()) return cmd_bench(c, bench::BenchPhase::Prefill, prompt_len, budget);
    if (bd->parsed()) return cmd_bench(c, bench::BenchPhase::Decode, prompt_len, budget);
    if (co->parsed()) return cmd_cost(c, preset_name, prompt_len);
  } catch (const BundleError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
