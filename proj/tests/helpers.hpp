#pragma once

#include <cmath>

#include "ssd/bundle.hpp"

namespace test {

// Fills a tensor from a CounterRng stream, normal(0, scale).
template <ssd::Real T>
ssd::Tensor<T> randn(ssd::Shape shape, std::uint64_t seed, double scale = 1.0) {
  ssd::CounterRng rng(seed);
  ssd::Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, scale));
  return t;
}

template <ssd::Real T>
ssd::Tensor<T> uniform(ssd::Shape shape, std::uint64_t seed, double lo, double hi) {
  ssd::CounterRng rng(seed);
  ssd::Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline ssd::Tokens random_tokens(std::size_t batch, std::size_t len, std::size_t vocab, std::uint64_t seed) {
  ssd::CounterRng rng(seed);
  std::vector<std::int64_t> ids(batch * len);
  for (auto& id : ids) id = static_cast<std::int64_t>(rng.next_u64() % vocab);
  return ssd::Tokens(batch, len, std::move(ids));
}

template <ssd::Real A, ssd::Real B>
double max_abs(const ssd::Tensor<A>& a, const ssd::Tensor<B>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace test

namespace test {

// Random desk-scale config: d_model <= 64, n_layers <= 4, small chunks so
// prompts cross chunk boundaries.
inline ssd::ModelConfig random_tiny_config(ssd::CounterRng& rng) {
  auto pick = [&rng](std::initializer_list<std::size_t> xs) {
    return *(xs.begin() + rng.next_u64() % xs.size());
  };
  ssd::ModelConfig cfg = ssd::ModelConfig::tiny();
  cfg.vocab_size = pick({32, 64, 97});
  cfg.d_model = pick({16, 32, 48, 64});
  cfg.n_layers = pick({1, 2, 3, 4});
  cfg.head_dim = pick({8, 16});
  cfg.d_state = pick({4, 8, 16});
  cfg.chunk_size = pick({4, 8, 16, 32});
  cfg.n_groups = rng.uniform() < 0.5 ? 1 : cfg.n_heads();
  return cfg;
}

}  // namespace test
