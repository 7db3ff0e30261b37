#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssd/ssd_core.hpp"

namespace ssd {

// Architecture hyperparameters. The in-projection output is laid out as
// [z (d_inner) | xBC (conv_dim) | dt_raw (H)] with xBC = [x | B | C].
struct ModelConfig {
  std::size_t vocab_size = 64;
  std::size_t d_model = 16;
  std::size_t n_layers = 2;
  std::size_t d_state = 8;
  std::size_t head_dim = 8;
  std::size_t expand = 2;
  std::size_t n_groups = 1;
  std::size_t conv_kernel = 4;
  std::size_t chunk_size = 256;
  double norm_eps = 1e-5;
  DtLimits dt_limits;
  ElemPolicy elem_policy;

  std::size_t d_inner() const { return expand * d_model; }
  std::size_t n_heads() const { return head_dim == 0 ? 0 : d_inner() / head_dim; }
  std::size_t conv_dim() const { return d_inner() + 2 * n_groups * d_state; }
  std::size_t d_in_proj() const { return 2 * d_inner() + 2 * n_groups * d_state + n_heads(); }

  void validate() const;
  bool operator==(const ModelConfig&) const;

  // state-spaces/mamba2-130m shape.
  static ModelConfig mamba2_130m();
  // Desk-scale shape used by tests and the default `init`.
  static ModelConfig tiny();
};

bool operator==(const DtLimits& a, const DtLimits& b);
bool operator==(const ElemPolicy& a, const ElemPolicy& b);

template <Real T>
struct LayerParams {
  Tensor<T> input_norm_w;  // (d_model)
  Tensor<T> in_proj;       // (d_model, d_in_proj)
  Tensor<T> conv_w;        // (conv_dim, k)
  Tensor<T> conv_b;        // (conv_dim)
  Tensor<T> dt_bias;       // (H)
  Tensor<T> a_log;         // (H)
  Tensor<T> d_skip;        // (H)
  Tensor<T> norm_w;        // (d_inner), gated norm
  Tensor<T> out_proj;      // (d_inner, d_model)

  template <Real U>
  LayerParams<U> cast() const {
    return {input_norm_w.template cast<U>(), in_proj.template cast<U>(), conv_w.template cast<U>(),
            conv_b.template cast<U>(),       dt_bias.template cast<U>(), a_log.template cast<U>(),
            d_skip.template cast<U>(),       norm_w.template cast<U>(),  out_proj.template cast<U>()};
  }
};

// The LM head is tied to the embedding.
template <Real T>
struct ModelParams {
  Tensor<T> embedding;  // (vocab, d_model)
  std::vector<LayerParams<T>> layers;
  Tensor<T> final_norm_w;  // (d_model)

  template <Real U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.embedding = embedding.template cast<U>();
    for (const auto& l : layers) out.layers.push_back(l.template cast<U>());
    out.final_norm_w = final_norm_w.template cast<U>();
    return out;
  }
};

// Throws ShapeError when any tensor disagrees with the config.
template <Real T>
void check_params(const ModelParams<T>& params, const ModelConfig& cfg);

std::size_t parameter_count(const ModelConfig& cfg);

// Row-major (batch, length) token ids.
struct Tokens {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int64_t> ids;

  Tokens() = default;
  Tokens(std::size_t b, std::size_t t, std::vector<std::int64_t> v);
  std::int64_t at(std::size_t b, std::size_t t) const { return ids[b * length + t]; }
  // First `t` positions of every row.
  Tokens prefix(std::size_t t) const;
  // Column (one id per batch row) at position t.
  std::vector<std::int64_t> column(std::size_t t) const;
  bool operator==(const Tokens&) const = default;
};

template <Real T>
struct LayerCache {
  Tensor<T> ssm_state;   // (B, H, P, N)
  Tensor<T> conv_state;  // (B, conv_dim, k-1), oldest input first
};

// Per-layer decode state; its size depends on (batch, config) only.
template <Real T>
struct Mamba2Cache {
  std::vector<LayerCache<T>> layers;

  std::size_t batch() const { return layers.empty() ? 0 : layers.front().ssm_state.dim(0); }
  std::size_t byte_size() const;
  // Raw little-endian dump of every state tensor, layer by layer.
  std::vector<std::uint8_t> serialize() const;
};

template <Real T>
struct BlockOutput {
  Tensor<T> hidden;       // (B, T, d_model)
  Tensor<T> final_state;  // (B, H, P, N)
  Tensor<T> conv_tail;    // (B, conv_dim, k-1), pre-activation conv inputs
};

// One residual block: norm -> in_proj -> conv -> SSD -> skip -> gated norm
// -> out_proj -> residual add.
template <Real T>
BlockOutput<T> block_forward(const LayerParams<T>& layer, const Tensor<T>& hidden, const ModelConfig& cfg,
                             MaskStrategy mask = MaskStrategy::Static);

template <Real T>
struct PrefillResult {
  Tensor<T> logits;  // (B, T, vocab)
  Mamba2Cache<T> cache;
};

template <Real T>
Tensor<T> embed(const ModelParams<T>& params, const Tokens& tokens, const ModelConfig& cfg);

// Final RMSNorm followed by the tied LM head. hidden: (..., d_model).
template <Real T>
Tensor<T> lm_head(const ModelParams<T>& params, const Tensor<T>& hidden, const ModelConfig& cfg);

template <Real T>
PrefillResult<T> prefill(const ModelParams<T>& params, const Tokens& tokens, const ModelConfig& cfg,
                         MaskStrategy mask = MaskStrategy::Static);

void check_tokens(const Tokens& tokens, const ModelConfig& cfg);

}  // namespace ssd
