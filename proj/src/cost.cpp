#include "ssd/cost.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace ssd::cost {

namespace {

struct Dims {
  Count d, d_in, di, cd, H, P, N, k, V, layers;
};

Dims dims(const ModelConfig& cfg) {
  return {cfg.d_model, cfg.d_in_proj(), cfg.d_inner(), cfg.conv_dim(),  cfg.n_heads(),
          cfg.head_dim, cfg.d_state,    cfg.conv_kernel, cfg.vocab_size, cfg.n_layers};
}

Count elem_size(ElemType t) { return t == ElemType::F32 ? 4 : 8; }

}  // namespace

Count flops_prefill(const ModelConfig& cfg, std::size_t seq_len, std::size_t batch) {
  if (seq_len < 1) throw InputError("flops_prefill: seq_len must be >= 1");
  const Dims m = dims(cfg);
  const ChunkPlan plan = plan_chunks(seq_len, cfg.chunk_size);
  const Count T = seq_len, Nc = plan.num_chunks, L = plan.chunk_len;

  const Count proj = 2 * T * m.d * m.d_in + 2 * T * m.di * m.d;
  const Count conv = 2 * T * m.cd * m.k;
  const Count intra = 2 * Nc * L * L * m.H * m.N + Nc * L * L * m.H + 2 * Nc * L * L * m.H * m.P;
  const Count states = 2 * Nc * L * m.H * m.P * m.N * 2;
  const Count inter = 2 * Nc * Nc * m.H * m.P * m.N;
  const Count cross = 2 * Nc * L * m.H * m.P * m.N;
  const Count head = 2 * T * m.d * m.V;
  return batch * (m.layers * (proj + conv + intra + states + inter + cross) + head);
}

Count flops_step(const ModelConfig& cfg, std::size_t batch) {
  const Dims m = dims(cfg);
  const Count per_layer =
      2 * m.d * m.d_in + 2 * m.cd * m.k + 4 * m.H * m.P * m.N + 2 * m.H * m.P * m.N + 2 * m.di * m.d;
  return batch * (m.layers * per_layer + 2 * m.d * m.V);
}

Count flops_decode(const ModelConfig& cfg, DecodeMode mode, std::size_t prompt_len, std::size_t gen_len,
                   std::size_t batch) {
  if (gen_len < 1) throw InputError("flops_decode: gen_len must be >= 1");
  if (mode == DecodeMode::Cached) return flops_prefill(cfg, prompt_len, batch) + gen_len * flops_step(cfg, batch);
  Count total = 0;
  for (std::size_t g = 0; g < gen_len; ++g) total += flops_prefill(cfg, prompt_len + g, batch);
  return total;
}

Count bytes_model(const ModelConfig& cfg, Phase phase, std::size_t seq_len, std::size_t batch, ElemType type) {
  const Dims m = dims(cfg);
  const Count s = elem_size(type);
  const Count params = parameter_count(cfg);

  const Count T = phase == Phase::DecodeStep ? 1 : seq_len;
  if (T < 1) throw InputError("bytes_model: seq_len must be >= 1");

  // Per-layer element traffic shared by both phases (reads + writes).
  Count layer = 0;
  layer += 2 * T * m.d;                // input norm
  layer += T * m.d + T * m.d_in;       // in_proj
  layer += 2 * T * m.cd;               // conv + silu
  layer += T * m.H + 2 * T * m.H;      // discretize -> dt, a*dt
  layer += 3 * T * m.di + T * m.di;    // y + D x
  layer += 2 * T * m.di + T * m.di;    // gated norm
  layer += T * m.di + T * m.d;         // out_proj
  layer += 2 * T * m.d + T * m.d;      // residual add

  if (phase == Phase::Prefill) {
    const ChunkPlan plan = plan_chunks(seq_len, cfg.chunk_size);
    const Count Nc = plan.num_chunks, L = plan.chunk_len;
    const Count HPN = m.H * m.P * m.N;
    layer += 2 * m.H * Nc * L;                                                   // cumsum
    layer += m.H * Nc * L + m.H * Nc * L * L;                                    // segsum + exp
    layer += 2 * Nc * L * m.H * m.N + m.H * Nc * L * L + 2 * Nc * L * m.H * m.P; // intra
    layer += Nc * L * m.H * (m.N + m.P) + m.H * Nc * L + Nc * HPN;               // chunk states
    layer += Nc * HPN + m.H * Nc + (Nc + 1) * HPN;                               // inter-chunk scan
    layer += Nc * L * m.H * m.N + Nc * HPN + m.H * Nc * L + Nc * L * m.H * m.P;  // cross-chunk output
  } else {
    layer += 2 * m.H * m.P * m.N + m.H * m.P * m.N;  // state read/write + readout
    layer += 2 * m.cd * (m.k - 1);                   // conv window read/write
  }

  Count acts = 2 * T * m.d;                        // embedding gather
  acts += m.layers * layer;
  acts += 2 * T * m.d + T * m.d + T * m.V;         // final norm + head
  return s * (params + batch * acts);
}

Count peak_activation_bytes(const ModelConfig& cfg, std::size_t seq_len, std::size_t batch, ElemType type) {
  const Dims m = dims(cfg);
  const ChunkPlan plan = plan_chunks(seq_len, cfg.chunk_size);
  const Count T = seq_len, Nc = plan.num_chunks, L = plan.chunk_len, Tp = Nc * L;
  const Count HPN = m.H * m.P * m.N;
  const Count resid = T * m.d;

  const Count projection = resid + T * m.d + T * m.d_in;
  const Count conv = resid + T * m.di + T * m.H + 2 * T * m.cd;
  const Count chunked_inputs = Tp * m.H * (m.P + 2 * m.N);
  const Count intra = resid + 2 * T * m.di + T * m.H + chunked_inputs + m.H * Tp + m.H * Nc * L * L + Tp * m.H * m.P;
  const Count scan = resid + 2 * T * m.di + Tp * m.H * m.N + m.H * Tp + Tp * m.H * m.P + Nc * HPN +
                     m.H * (Nc + 1) * (Nc + 1) + (Nc + 1) * HPN;
  const Count output = resid + 3 * T * m.di + T * m.d;
  const Count head = resid + T * m.d + T * m.V;

  const Count peak = std::max({projection, conv, intra, scan, output, head});
  return batch * elem_size(type) * peak;
}

Count decode_peak_bytes(const ModelConfig& cfg, DecodeMode mode, std::size_t prompt_len, std::size_t seq_len,
                        std::size_t batch, ElemType type) {
  if (mode == DecodeMode::NonCached) return peak_activation_bytes(cfg, seq_len, batch, type);
  const Count step_peak = batch * elem_size(type) * (cfg.d_model + cfg.d_in_proj() + 2 * cfg.conv_dim() + cfg.vocab_size);
  return cache_bytes(cfg, batch, type) + std::max(peak_activation_bytes(cfg, prompt_len, batch, type), step_peak);
}

const std::vector<DeviceSpec>& known_devices() {
  static const std::vector<DeviceSpec> devices{{"v6e", 918.0, 1600.0}, {"a100", 312.0, 1555.0}};
  return devices;
}

DeviceSpec device_from_string(const std::string& spec) {
  for (const DeviceSpec& d : known_devices())
    if (d.name == spec) return d;
  if (spec.rfind("custom:", 0) == 0) {
    const std::string rest = spec.substr(7);
    const auto colon = rest.find(':');
    if (colon != std::string::npos) {
      try {
        std::size_t used1 = 0, used2 = 0;
        const double tf = std::stod(rest.substr(0, colon), &used1);
        const double bw = std::stod(rest.substr(colon + 1), &used2);
        if (used1 == colon && used2 == rest.size() - colon - 1 && tf > 0 && bw > 0) return {spec, tf, bw};
      } catch (const std::exception&) {
      }
    }
  }
  throw InputError("unknown device '" + spec + "' (use v6e, a100 or custom:TFLOPS:GBPS)");
}

double mfu(double flops, double wall_seconds, const DeviceSpec& dev) {
  return (flops / wall_seconds) / (dev.peak_tflops * 1e12);
}

double hbu(double bytes, double wall_seconds, const DeviceSpec& dev) {
  return (bytes / wall_seconds) / (dev.peak_gbps * 1e9);
}

bool CostReport::same_row(const CostReport& o) const {
  return model == o.model && phase == o.phase && seq_len == o.seq_len && mode == o.mode && oom == o.oom &&
         (oom || tokens_per_s == o.tokens_per_s) && flops == o.flops && bytes == o.bytes && mfu == o.mfu &&
         hbu == o.hbu && cache_bytes == o.cache_bytes && peak_bytes == o.peak_bytes;
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

template <typename N>
N parse_num(const std::string& s, const char* field) {
  N v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InputError(std::string("csv: bad ") + field + " value '" + s + "'");
  }
  return v;
}

double parse_double(const std::string& s, const char* field) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw InputError(std::string("csv: bad ") + field + " value '" + s + "'");
}

}  // namespace

std::string to_csv(const std::vector<CostReport>& reports) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const CostReport& r : reports) {
    os << r.model << ',' << r.phase << ',' << r.seq_len << ',' << r.mode << ','
       << (r.oom ? std::string("OOM") : fmt_double(r.tokens_per_s)) << ',' << r.flops << ',' << r.bytes << ','
       << fmt_double(r.mfu) << ',' << fmt_double(r.hbu) << ',' << r.cache_bytes << ',' << r.peak_bytes << '\n';
  }
  return os.str();
}

std::vector<CostReport> parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || split(line, ',') != split(kCsvHeader, ',')) {
    throw InputError("csv: missing or unexpected header");
  }
  std::vector<CostReport> out;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> f = split(line, ',');
    if (f.size() != 11) throw InputError("csv: expected 11 columns, got " + std::to_string(f.size()));
    CostReport r;
    r.model = f[0];
    r.phase = f[1];
    r.seq_len = parse_num<std::size_t>(f[2], "seq_len");
    r.mode = f[3];
    r.oom = f[4] == "OOM";
    if (!r.oom) r.tokens_per_s = parse_double(f[4], "tokens_per_s");
    r.flops = parse_num<Count>(f[5], "flops");
    r.bytes = parse_num<Count>(f[6], "bytes");
    r.mfu = parse_double(f[7], "mfu");
    r.hbu = parse_double(f[8], "hbu");
    r.cache_bytes = parse_num<Count>(f[9], "cache_bytes");
    r.peak_bytes = parse_num<Count>(f[10], "peak_bytes");
    out.push_back(std::move(r));
  }
  return out;
}

std::string to_table(const std::vector<CostReport>& reports) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %-8s %8s %-10s %12s %14s %14s %9s %9s %12s %12s\n", "model", "phase",
                "seq_len", "mode", "tokens/s", "flops", "bytes", "mfu%", "hbu%", "cache_B", "peak_B");
  os << buf;
  for (const CostReport& r : reports) {
    if (r.oom) {
      std::snprintf(buf, sizeof buf, "%-10s %-8s %8zu %-10s %12s\n", r.model.c_str(), r.phase.c_str(), r.seq_len,
                    r.mode.c_str(), "OOM");
    } else {
      std::snprintf(buf, sizeof buf, "%-10s %-8s %8zu %-10s %12.1f %14llu %14llu %9.4f %9.4f %12llu %12llu\n",
                    r.model.c_str(), r.phase.c_str(), r.seq_len, r.mode.c_str(), r.tokens_per_s,
                    static_cast<unsigned long long>(r.flops), static_cast<unsigned long long>(r.bytes),
                    100.0 * r.mfu, 100.0 * r.hbu, static_cast<unsigned long long>(r.cache_bytes),
                    static_cast<unsigned long long>(r.peak_bytes));
    }
    os << buf;
  }
  return os.str();
}

std::string to_jsonl(const std::vector<CostReport>& reports) {
  std::ostringstream os;
  for (const CostReport& r : reports) {
    nlohmann::json j{{"model", r.model},   {"phase", r.phase},   {"seq_len", r.seq_len},
                     {"mode", r.mode},     {"flops", r.flops},   {"bytes", r.bytes},
                     {"mfu", r.mfu},       {"hbu", r.hbu},       {"cache_bytes", r.cache_bytes},
                     {"peak_bytes", r.peak_bytes}, {"wall_mean_s", r.wall_mean},
                     {"wall_stddev_s", r.wall_stddev}, {"wall_p99_s", r.wall_p99}};
    j["tokens_per_s"] = r.oom ? nlohmann::json("OOM") : nlohmann::json(r.tokens_per_s);
    os << j.dump() << '\n';
  }
  return os.str();
}

}  // namespace ssd::cost
