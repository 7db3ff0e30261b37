#pragma once

#include <optional>
#include <string>

#include "ssd/model.hpp"

// Brute-force f64 references. Nothing here calls into the chunked path;
// everything is explicit loops over tokens.
namespace ssd::oracle {

struct SequentialResult {
  Tensor<double> y;            // (B, T, H, P)
  Tensor<double> final_state;  // (B, H, P, N)
};

// h <- exp(a dt_t) h + dt_t (B_t outer x_t);  y_t = C_t . h + D x_t
SequentialResult sequential_ssm(const Tensor<double>& x, const Tensor<double>& dt, const Tensor<double>& a,
                                const Tensor<double>& b, const Tensor<double>& c, const Tensor<double>& d,
                                const std::optional<Tensor<double>>& initial_state = std::nullopt);

// The same map written as one causal T x T matrix per (batch, head):
// Y = (Lmask * C B^T) Xbar + D x with Lmask[t,s] = exp(sum_{k=s+1..t} a dt_k).
// O(T^2) memory; refuses T > 64.
Tensor<double> dense_ssm(const Tensor<double>& x, const Tensor<double>& dt, const Tensor<double>& a,
                         const Tensor<double>& b, const Tensor<double>& c, const Tensor<double>& d);

inline constexpr std::size_t kDenseMaxLen = 64;

struct OracleReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::vector<std::size_t> worst_index;  // multi-index of the element with the largest tolerance excess
  double rtol = 0.0;
  double atol = 0.0;
  std::size_t violations = 0;
  bool pass = true;

  std::string summary() const;
};

// Element-wise |actual - expected| <= atol + rtol |expected|.
template <Real A, Real E>
OracleReport compare(const Tensor<A>& actual, const Tensor<E>& expected, double rtol, double atol);

// Gates for f32 logits against an f64 or independent reference.
inline constexpr double kLogitRtol = 1e-5;
inline constexpr double kLogitAtol = 2e-4;

// Straight-line f64 model: embedding, every block with sequential_ssm, final
// norm and tied head. Returns logits (B, T, vocab).
Tensor<double> reference_forward(const ModelParams<double>& params, const Tokens& tokens, const ModelConfig& cfg);

// One block of reference_forward; hidden: (B, T, d_model).
Tensor<double> reference_block(const LayerParams<double>& layer, const Tensor<double>& hidden, const ModelConfig& cfg);

}  // namespace ssd::oracle
