#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssd/decode.hpp"

// Closed-form FLOP and byte counts for the engine's forward paths.
//
// FLOPs count one multiply and one add as 2. Per layer, for T tokens padded
// to Nc chunks of L:
//   in/out projections   2 T d_model d_in + 2 T d_inner d_model
//   conv                 2 T conv_dim k
//   intra-chunk          2 Nc L^2 H N  (C B^T)  +  Nc L^2 H  (mask)  +  2 Nc L^2 H P  (M Xbar)
//   chunk states         2 Nc L H P N * 2
//   inter-chunk scan     2 Nc^2 H P N
//   cross-chunk output   2 Nc L H P N
// plus the tied head 2 T d_model vocab once. Batch multiplies every term.
// A decode step replaces the SSD terms with 4 H P N (state update) +
// 2 H P N (readout) and uses T = 1; it does not depend on position.
namespace ssd::cost {

using Count = std::uint64_t;

Count flops_prefill(const ModelConfig& cfg, std::size_t seq_len, std::size_t batch = 1);
Count flops_step(const ModelConfig& cfg, std::size_t batch = 1);

// cached:     prefill(P) + G * step
// non-cached: sum_{g=0..G-1} prefill(P + g)
Count flops_decode(const ModelConfig& cfg, DecodeMode mode, std::size_t prompt_len, std::size_t gen_len,
                   std::size_t batch = 1);

enum class Phase { Prefill, DecodeStep };

// Unfused byte traffic: every parameter read once per invocation, plus
// every op's activation reads and writes. An upper bound on real traffic.
Count bytes_model(const ModelConfig& cfg, Phase phase, std::size_t seq_len = 1, std::size_t batch = 1,
                  ElemType type = ElemType::F32);

// Largest simultaneously-live activation set of one prefill over seq_len
// tokens (parameters excluded), maximised over the stages of a layer and
// the head.
Count peak_activation_bytes(const ModelConfig& cfg, std::size_t seq_len, std::size_t batch = 1,
                            ElemType type = ElemType::F32);

// Non-cached decoding to total length `seq_len` peaks at the final prefill;
// cached decoding holds the cache plus the prompt prefill or a step.
Count decode_peak_bytes(const ModelConfig& cfg, DecodeMode mode, std::size_t prompt_len, std::size_t seq_len,
                        std::size_t batch = 1, ElemType type = ElemType::F32);

struct DeviceSpec {
  std::string name;
  double peak_tflops = 0.0;
  double peak_gbps = 0.0;
};

// Known devices: "v6e" (918 TFLOPS, 1600 GB/s), "a100" (312, 1555); or
// "custom:TFLOPS:GBPS". Throws InputError otherwise.
DeviceSpec device_from_string(const std::string& spec);
const std::vector<DeviceSpec>& known_devices();

// (flops / wall) / (peak_tflops * 1e12)
double mfu(double flops, double wall_seconds, const DeviceSpec& dev);
// (bytes / wall) / (peak_gbps * 1e9)
double hbu(double bytes, double wall_seconds, const DeviceSpec& dev);

// One benchmark configuration. Field order matches the CSV columns.
struct CostReport {
  std::string model;
  std::string phase;  // "prefill" | "decode"
  std::size_t seq_len = 0;
  std::string mode;   // "cached" | "non-cached" | "-" for prefill
  double tokens_per_s = 0.0;
  Count flops = 0;
  Count bytes = 0;
  double mfu = 0.0;
  double hbu = 0.0;
  Count cache_bytes = 0;
  Count peak_bytes = 0;
  bool oom = false;  // emitted as tokens_per_s = OOM

  // Not part of the CSV.
  double wall_mean = 0.0;
  double wall_stddev = 0.0;
  double wall_p99 = 0.0;

  bool same_row(const CostReport& o) const;
};

inline constexpr const char* kCsvHeader =
    "model,phase,seq_len,mode,tokens_per_s,flops,bytes,mfu,hbu,cache_bytes,peak_bytes";

std::string to_csv(const std::vector<CostReport>& reports);
// Inverse of to_csv on the CSV columns. Throws InputError on malformed rows.
std::vector<CostReport> parse_csv(const std::string& text);
std::string to_table(const std::vector<CostReport>& reports);
std::string to_jsonl(const std::vector<CostReport>& reports);

}  // namespace ssd::cost
