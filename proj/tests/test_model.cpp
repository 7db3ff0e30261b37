#include <doctest.h>

#include "helpers.hpp"
#include "ssd/decode.hpp"
#include "ssd/oracle.hpp"

using namespace ssd;

namespace {

ModelConfig small_cfg(std::size_t chunk = 4) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.chunk_size = chunk;
  return cfg;
}

}  // namespace

TEST_CASE("config presets and derived sizes") {
  const ModelConfig m = ModelConfig::mamba2_130m();
  CHECK(m.d_inner() == 1536);
  CHECK(m.n_heads() == 24);
  CHECK(m.conv_dim() == 1536 + 256);
  CHECK(m.d_in_proj() == 2 * 1536 + 256 + 24);
  CHECK_NOTHROW(m.validate());
  ModelConfig bad = ModelConfig::tiny();
  bad.head_dim = 5;
  CHECK_THROWS(bad.validate());
  bad = ModelConfig::tiny();
  bad.n_groups = 3;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("block_forward matches the reference block") {
  const ModelConfig cfg = small_cfg();
  const ModelParams<double> p = random_init(cfg, 3).cast<double>();
  const Tensor<double> h = test::randn<double>({2, 11, cfg.d_model}, 9);
  const BlockOutput<double> out = block_forward(p.layers[0], h, cfg);
  const Tensor<double> ref = oracle::reference_block(p.layers[0], h, cfg);
  CHECK(test::max_abs(out.hidden, ref) < 1e-10);
}

TEST_CASE("prefill matches the reference forward in f64 and f32") {
  const ModelConfig cfg = small_cfg();
  const ModelParams<float> pf = random_init(cfg, 4);
  const ModelParams<double> pd = pf.cast<double>();
  const Tokens tok = test::random_tokens(2, 13, cfg.vocab_size, 5);
  const Tensor<double> ref = oracle::reference_forward(pd, tok, cfg);

  ModelConfig cfg64 = cfg;
  cfg64.elem_policy.compute = ElemType::F64;
  CHECK(test::max_abs(prefill(pd, tok, cfg64).logits, ref) < 1e-10);
  const auto rep = oracle::compare(prefill(pf, tok, cfg).logits, ref, oracle::kLogitRtol, oracle::kLogitAtol);
  CHECK_MESSAGE(rep.pass, rep.summary());
}

TEST_CASE("batch rows are independent") {
  const ModelConfig cfg = small_cfg();
  const ModelParams<double> p = random_init(cfg, 6).cast<double>();
  const Tokens both = test::random_tokens(2, 9, cfg.vocab_size, 7);
  const Tensor<double> joint = prefill(p, both, cfg).logits;
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<std::int64_t> row(both.ids.begin() + b * 9, both.ids.begin() + (b + 1) * 9);
    const Tensor<double> solo = prefill(p, Tokens(1, 9, row), cfg).logits;
    for (std::size_t i = 0; i < solo.size(); ++i) CHECK(solo[i] == doctest::Approx(joint[b * solo.size() + i]).epsilon(1e-12));
  }
}

TEST_CASE("prefill is causal over tokens") {
  const ModelConfig cfg = small_cfg();
  const ModelParams<double> p = random_init(cfg, 8).cast<double>();
  Tokens tok = test::random_tokens(1, 10, cfg.vocab_size, 9);
  const Tensor<double> a = prefill(p, tok, cfg).logits;
  tok.ids[7] = (tok.ids[7] + 1) % static_cast<std::int64_t>(cfg.vocab_size);
  const Tensor<double> b = prefill(p, tok, cfg).logits;
  const std::size_t V = cfg.vocab_size;
  for (std::size_t i = 0; i < 7 * V; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("token and parameter validation") {
  const ModelConfig cfg = small_cfg();
  ModelParams<float> p = random_init(cfg, 1);
  CHECK_THROWS_AS(prefill(p, Tokens(1, 1, {static_cast<std::int64_t>(cfg.vocab_size)}), cfg), InputError);
  CHECK_THROWS_AS(prefill(p, Tokens(1, 1, {-1}), cfg), InputError);
  CHECK_THROWS_AS(Tokens(2, 2, {1, 2, 3}), ShapeError);
  p.layers[1].conv_w = Tensor<float>({3, 3});
  CHECK_THROWS_AS(check_params(p, cfg), ShapeError);
}

TEST_CASE("parameter count") {
  const ModelConfig cfg = ModelConfig::tiny();
  const ModelParams<float> p = random_init(cfg, 1);
  std::size_t n = p.embedding.size() + p.final_norm_w.size();
  for (const auto& l : p.layers)
    n += l.input_norm_w.size() + l.in_proj.size() + l.conv_w.size() + l.conv_b.size() + l.dt_bias.size() +
         l.a_log.size() + l.d_skip.size() + l.norm_w.size() + l.out_proj.size();
  CHECK(parameter_count(cfg) == n);
}

TEST_CASE("bf16 emulation changes f32 logits only when enabled") {
  ModelConfig cfg = small_cfg();
  const ModelParams<float> p = random_init(cfg, 2);
  const Tokens tok = test::random_tokens(1, 6, cfg.vocab_size, 3);
  const Tensor<float> base = prefill(p, tok, cfg).logits;
  CHECK(prefill(p, tok, cfg).logits.bitwise_equal(base));
  cfg.elem_policy.bf16_emulation = true;
  CHECK_FALSE(prefill(p, tok, cfg).logits.bitwise_equal(base));
}
