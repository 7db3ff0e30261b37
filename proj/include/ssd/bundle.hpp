#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssd/model.hpp"

namespace ssd {

// Tensor bundle on disk: a directory holding
//   manifest.json  UTF-8 JSON: {format_version, config, tensors: [{name, dtype, shape, offset, length}]}
//   data.bin       raw little-endian f32 sections, each starting on a 64-byte boundary
inline constexpr int kBundleFormatVersion = 1;
inline constexpr std::size_t kBundleAlignment = 64;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kPayloadFile = "data.bin";

class BundleError : public std::runtime_error {
 public:
  enum class Kind { Io, Version, Schema, MissingTensor, DuplicateTensor, ShapeMismatch, Layout, Length };

  BundleError(Kind kind, std::string tensor, const std::string& msg)
      : std::runtime_error(msg), kind_(kind), tensor_(std::move(tensor)) {}

  Kind kind() const { return kind_; }
  // Offending tensor name, empty when the error is not tensor-specific.
  const std::string& tensor() const { return tensor_; }

 private:
  Kind kind_;
  std::string tensor_;
};

struct TensorEntry {
  std::string name;
  std::string dtype = "f32";
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

struct BundleManifest {
  int format_version = kBundleFormatVersion;
  ModelConfig config;
  std::vector<TensorEntry> tensors;
};

// Canonical parameter names, in payload order.
std::vector<std::string> parameter_names(const ModelConfig& cfg);

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

void save_bundle(const ModelParams<float>& params, const ModelConfig& cfg, const std::filesystem::path& dir);

struct LoadedBundle {
  ModelParams<float> params;
  ModelConfig config;
  BundleManifest manifest;
  std::vector<std::string> warnings;  // e.g. unknown tensors that were skipped
};

LoadedBundle load_bundle(const std::filesystem::path& dir);

// Parse and validate a manifest without touching the payload.
BundleManifest read_manifest(const std::filesystem::path& dir);

// Counter-based generator: output i is the SplitMix64 finaliser applied to
// seed + (i + 1) * 0x9E3779B97F4A7C15, so every draw is addressable by index.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  static std::uint64_t mix(std::uint64_t z);
  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Box-Muller, one output per two uniforms (no caching of the sine branch).
  double normal(double mean, double stddev);
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

// Deterministic desk-scale weights: projections and embedding ~ N(0, 0.02),
// conv ~ U(-1/sqrt(k), 1/sqrt(k)), A_log = log U[1, 16],
// dt_bias = softplus^-1(U[1e-3, 1e-1]), D ~ N(0, 1), norm weights 1.
ModelParams<float> random_init(const ModelConfig& cfg, std::uint64_t seed);

// x such that softplus(x) = y, for y > 0.
double inverse_softplus(double y);

}  // namespace ssd
