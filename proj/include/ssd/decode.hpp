#pragma once

#include <optional>

#include "ssd/model.hpp"

namespace ssd {

template <Real T>
Mamba2Cache<T> cache_init(const ModelConfig& cfg, std::size_t batch);

// Byte size of a cache for `batch` rows, from the config alone.
std::size_t cache_bytes(const ModelConfig& cfg, std::size_t batch, ElemType type = ElemType::F32);

// Drops column 0, shifts left, writes `col` (B, C) into the last column.
template <Real T>
Tensor<T> roll_and_insert(const Tensor<T>& conv_state, const Tensor<T>& col);

template <Real T>
struct StepResult {
  Tensor<T> logits;  // (B, vocab)
  Mamba2Cache<T> cache;
};

// Advance every layer by one token using only the cached state.
template <Real T>
StepResult<T> decode_step(const ModelParams<T>& params, Mamba2Cache<T> cache, const std::vector<std::int64_t>& token,
                          const ModelConfig& cfg);

// Index of the largest entry along the last axis; ties go to the lowest index.
template <Real T>
std::vector<std::int64_t> argmax_last(const Tensor<T>& logits);

enum class DecodeMode { Cached, NonCached };

template <Real T>
struct GenerationResult {
  Tokens tokens;                               // (B, G)
  std::optional<Tensor<T>> per_step_logits;    // (B, G, vocab) when requested
  std::size_t steps = 0;
  std::optional<Mamba2Cache<T>> cache;         // cached mode: state after every generated token
};

// Greedy decoding. Cached mode runs one prefill then G decode steps (the
// last step only folds the final token into the cache). Non-cached mode
// re-runs prefill over the whole prefix for every generated token.
template <Real T>
GenerationResult<T> generate(const ModelParams<T>& params, const Tokens& prompt, std::size_t steps, DecodeMode mode,
                             const ModelConfig& cfg, bool keep_logits = false,
                             MaskStrategy mask = MaskStrategy::Static);

}  // namespace ssd
