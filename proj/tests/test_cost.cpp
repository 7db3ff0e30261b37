#include <doctest.h>

#include "helpers.hpp"
#include "ssd/cost.hpp"

using namespace ssd;

namespace {

ModelConfig unit_cfg() {
  ModelConfig c;
  c.vocab_size = 1;
  c.d_model = 1;
  c.n_layers = 1;
  c.d_state = 1;
  c.head_dim = 1;
  c.expand = 1;
  c.n_groups = 1;
  c.conv_kernel = 1;
  c.chunk_size = 1;
  return c;
}

}  // namespace

TEST_CASE("degenerate config is hand-countable") {
  // d_inner 1, H 1, conv_dim 3, d_in_proj 5.
  // proj 10 + 2, conv 6, intra 2 + 1 + 2, states 4, inter 2, cross 2, head 2.
  CHECK(cost::flops_prefill(unit_cfg(), 1) == 33);
  // 10 + 6 + 4 + 2 + 2, head 2.
  CHECK(cost::flops_step(unit_cfg()) == 26);
  CHECK(cost::flops_prefill(unit_cfg(), 1, 3) == 99);
}

TEST_CASE("prefill flops: doubling T adds exactly the inter-chunk excess") {
  const ModelConfig cfg = ModelConfig::mamba2_130m();
  const std::size_t HPN = cfg.n_heads() * cfg.head_dim * cfg.d_state;
  for (std::size_t nc : {1, 2, 5}) {
    const std::size_t T = nc * cfg.chunk_size;
    const cost::Count excess = cost::flops_prefill(cfg, 2 * T) - 2 * cost::flops_prefill(cfg, T);
    CHECK(excess == cfg.n_layers * 4 * HPN * nc * nc);
  }
}

TEST_CASE("decode flops structure") {
  const ModelConfig cfg = ModelConfig::mamba2_130m();
  const std::size_t P = 16;
  auto cached = [&](std::size_t g) { return static_cast<long double>(cost::flops_decode(cfg, DecodeMode::Cached, P, g)); };
  auto full = [&](std::size_t g) { return static_cast<long double>(cost::flops_decode(cfg, DecodeMode::NonCached, P, g)); };
  const long double d2 = full(3) - 2 * full(2) + full(1);
  CHECK(d2 > 0);
  for (std::size_t g = 1; g + 2 + P <= cfg.chunk_size; ++g) {
    CHECK(cached(g + 2) - 2 * cached(g + 1) + cached(g) == 0);
    CHECK(full(g + 2) - 2 * full(g + 1) + full(g) == d2);
  }
  CHECK(cost::flops_decode(cfg, DecodeMode::Cached, P, 1) == cost::flops_prefill(cfg, P) + cost::flops_step(cfg));
  CHECK(cost::flops_decode(cfg, DecodeMode::NonCached, P, 1) == cost::flops_prefill(cfg, P));
  CHECK(full(64) > 2 * full(32));
  CHECK_THROWS_AS(cost::flops_decode(cfg, DecodeMode::Cached, P, 0), InputError);
}

TEST_CASE("bytes model") {
  const ModelConfig cfg = ModelConfig::mamba2_130m();
  CHECK(cost::bytes_model(cfg, cost::Phase::DecodeStep) >= 4 * parameter_count(cfg));
  CHECK(cost::bytes_model(cfg, cost::Phase::DecodeStep, 1) == cost::bytes_model(cfg, cost::Phase::DecodeStep, 999));
  CHECK(cost::bytes_model(cfg, cost::Phase::Prefill, 1, 1, ElemType::F64) ==
        2 * cost::bytes_model(cfg, cost::Phase::Prefill, 1, 1, ElemType::F32));

  ModelConfig empty = ModelConfig::tiny();
  empty.n_layers = 0;
  const std::size_t T = 7, d = empty.d_model, V = empty.vocab_size;
  CHECK(cost::bytes_model(empty, cost::Phase::Prefill, T) == 4 * (V * d + d + 2 * T * d + 3 * T * d + T * V));
}

TEST_CASE("peak memory grows with length, cache does not") {
  const ModelConfig cfg = ModelConfig::mamba2_130m();
  CHECK(cost::decode_peak_bytes(cfg, DecodeMode::NonCached, 16, 4096) >=
        8 * cost::decode_peak_bytes(cfg, DecodeMode::NonCached, 16, 512));
  CHECK(cost::decode_peak_bytes(cfg, DecodeMode::Cached, 16, 128) ==
        cost::decode_peak_bytes(cfg, DecodeMode::Cached, 16, 4096));
}

TEST_CASE("MFU and HBU arithmetic") {
  const cost::DeviceSpec v6e = cost::device_from_string("v6e");
  CHECK(v6e.peak_tflops == 918.0);
  CHECK(v6e.peak_gbps == 1600.0);
  CHECK(cost::device_from_string("a100").peak_tflops == 312.0);
  const cost::DeviceSpec c = cost::device_from_string("custom:2.5:100");
  CHECK(c.peak_tflops == 2.5);
  CHECK(c.peak_gbps == 100.0);
  CHECK_THROWS_AS(cost::device_from_string("h100"), InputError);
  CHECK_THROWS_AS(cost::device_from_string("custom:1"), InputError);
  CHECK_THROWS_AS(cost::device_from_string("custom:x:1"), InputError);

  CHECK(cost::mfu(918e12 * 0.15, 1.0, v6e) == doctest::Approx(0.15).epsilon(1e-15));
  CHECK(cost::mfu(1.8e12, 2.0, c) == (1.8e12 / 2.0) / (2.5e12));
  CHECK(cost::hbu(1.28e12, 1.25, v6e) == (1.28e12 / 1.25) / (1600.0 * 1e9));
}

TEST_CASE("CSV round trip") {
  std::vector<cost::CostReport> rows(3);
  rows[0] = {"tiny", "prefill", 128, "-", 1234.5678901234567, 999, 12345, 1.0 / 3.0, 2.0 / 7.0, 0, 4096};
  rows[1] = {"tiny", "decode", 4096, "cached", 0.1, 1ull << 60, 7, 1e-300, 0.5, 1024, 8};
  rows[2] = {"tiny", "decode", 4096, "non-cached", 0.0, 5, 6, 0.0, 0.0, 0, 1ull << 40};
  rows[2].oom = true;
  const std::string csv = cost::to_csv(rows);
  CHECK(csv.rfind(cost::kCsvHeader, 0) == 0);
  CHECK(csv.find("OOM") != std::string::npos);
  const auto back = cost::parse_csv(csv);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(back[i].same_row(rows[i]));
  CHECK(cost::to_csv(back) == csv);
  CHECK_THROWS_AS(cost::parse_csv("bad,header\n"), InputError);
  CHECK_THROWS_AS(cost::parse_csv(std::string(cost::kCsvHeader) + "\n1,2\n"), InputError);
  CHECK_FALSE(cost::to_table(rows).empty());
  CHECK(cost::to_jsonl(rows).find("\"OOM\"") != std::string::npos);
}
