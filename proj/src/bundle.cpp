#include "ssd/bundle.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <set>

#include "json.hpp"

namespace ssd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "bundle payload I/O assumes a little-endian host");

using Kind = BundleError::Kind;

[[noreturn]] void fail(Kind kind, const std::string& tensor, const std::string& msg) {
  throw BundleError(kind, tensor, tensor.empty() ? msg : "tensor '" + tensor + "': " + msg);
}

std::string layer_name(std::size_t i, const char* leaf) { return "layers." + std::to_string(i) + "." + leaf; }

// Name -> tensor pointer, in canonical payload order.
template <typename Params, typename Fn>
void for_each_tensor(Params& params, std::size_t n_layers, Fn&& fn) {
  fn(std::string("embedding"), params.embedding);
  for (std::size_t i = 0; i < n_layers; ++i) {
    auto& l = params.layers[i];
    fn(layer_name(i, "input_norm.weight"), l.input_norm_w);
    fn(layer_name(i, "in_proj.weight"), l.in_proj);
    fn(layer_name(i, "conv1d.weight"), l.conv_w);
    fn(layer_name(i, "conv1d.bias"), l.conv_b);
    fn(layer_name(i, "dt_bias"), l.dt_bias);
    fn(layer_name(i, "A_log"), l.a_log);
    fn(layer_name(i, "D"), l.d_skip);
    fn(layer_name(i, "norm.weight"), l.norm_w);
    fn(layer_name(i, "out_proj.weight"), l.out_proj);
  }
  fn(std::string("final_norm.weight"), params.final_norm_w);
}

ModelParams<float> empty_params(const ModelConfig& cfg) {
  ModelParams<float> p;
  const std::size_t H = cfg.n_heads();
  p.embedding = Tensor<float>({cfg.vocab_size, cfg.d_model});
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    p.layers.push_back({Tensor<float>({cfg.d_model}), Tensor<float>({cfg.d_model, cfg.d_in_proj()}),
                        Tensor<float>({cfg.conv_dim(), cfg.conv_kernel}), Tensor<float>({cfg.conv_dim()}),
                        Tensor<float>({H}), Tensor<float>({H}), Tensor<float>({H}), Tensor<float>({cfg.d_inner()}),
                        Tensor<float>({cfg.d_inner(), cfg.d_model})});
  }
  p.final_norm_w = Tensor<float>({cfg.d_model});
  return p;
}

std::uint64_t align_up(std::uint64_t v) { return (v + kBundleAlignment - 1) / kBundleAlignment * kBundleAlignment; }

json config_json(const ModelConfig& cfg) {
  const ElemPolicy& pol = cfg.elem_policy;
  return json{
      {"vocab_size", cfg.vocab_size},
      {"d_model", cfg.d_model},
      {"n_layers", cfg.n_layers},
      {"d_state", cfg.d_state},
      {"head_dim", cfg.head_dim},
      {"expand", cfg.expand},
      {"n_groups", cfg.n_groups},
      {"conv_kernel", cfg.conv_kernel},
      {"chunk_size", cfg.chunk_size},
      {"norm_eps", cfg.norm_eps},
      {"dt_min", cfg.dt_limits.min},
      // JSON has no infinity; null means unbounded.
      {"dt_max", std::isinf(cfg.dt_limits.max) ? json(nullptr) : json(cfg.dt_limits.max)},
      {"elem_policy",
       {{"compute", to_string(pol.compute)},
        {"residual", to_string(ElemPolicy::residual)},
        {"decay_exp", pol.decay_exp == DecayExp::F32 ? "f32" : "bf16e"},
        {"bf16_emulation", pol.bf16_emulation}}},
  };
}

ModelConfig config_from(const json& j) {
  ModelConfig cfg;
  try {
    cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.n_layers = j.at("n_layers").get<std::size_t>();
    cfg.d_state = j.at("d_state").get<std::size_t>();
    cfg.head_dim = j.at("head_dim").get<std::size_t>();
    cfg.expand = j.at("expand").get<std::size_t>();
    cfg.n_groups = j.value("n_groups", std::size_t{1});
    cfg.conv_kernel = j.at("conv_kernel").get<std::size_t>();
    cfg.chunk_size = j.at("chunk_size").get<std::size_t>();
    cfg.norm_eps = j.value("norm_eps", 1e-5);
    cfg.dt_limits.min = j.value("dt_min", 0.0);
    if (j.contains("dt_max") && !j.at("dt_max").is_null()) cfg.dt_limits.max = j.at("dt_max").get<double>();
    if (j.contains("elem_policy")) {
      const json& p = j.at("elem_policy");
      const std::string compute = p.value("compute", "f32");
      if (compute != "f32" && compute != "f64") fail(Kind::Schema, "", "unknown compute type '" + compute + "'");
      cfg.elem_policy.compute = compute == "f64" ? ElemType::F64 : ElemType::F32;
      if (p.value("residual", "f32") != "f32") fail(Kind::Schema, "", "residual type must be f32");
      const std::string decay = p.value("decay_exp", "f32");
      if (decay != "f32" && decay != "bf16e") fail(Kind::Schema, "", "unknown decay_exp '" + decay + "'");
      cfg.elem_policy.decay_exp = decay == "bf16e" ? DecayExp::BF16E : DecayExp::F32;
      cfg.elem_policy.bf16_emulation = p.value("bf16_emulation", false);
    }
  } catch (const json::exception& e) {
    fail(Kind::Schema, "", std::string("bad config: ") + e.what());
  }
  try {
    cfg.validate();
  } catch (const InputError& e) {
    fail(Kind::Schema, "", e.what());
  }
  return cfg;
}

BundleManifest manifest_from(const json& j) {
  BundleManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
  } catch (const json::exception&) {
    fail(Kind::Schema, "", "manifest lacks an integer format_version");
  }
  if (m.format_version != kBundleFormatVersion) {
    fail(Kind::Version, "", "unsupported bundle format_version " + std::to_string(m.format_version) +
                                " (expected " + std::to_string(kBundleFormatVersion) + ")");
  }
  if (!j.contains("config")) fail(Kind::Schema, "", "manifest lacks config");
  m.config = config_from(j.at("config"));
  if (!j.contains("tensors") || !j.at("tensors").is_array()) fail(Kind::Schema, "", "manifest lacks tensors[]");
  for (const json& t : j.at("tensors")) {
    TensorEntry e;
    try {
      e.name = t.at("name").get<std::string>();
      e.dtype = t.at("dtype").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      e.offset = t.at("offset").get<std::uint64_t>();
      e.length = t.at("length").get<std::uint64_t>();
    } catch (const json::exception& ex) {
      fail(Kind::Schema, e.name, std::string("malformed tensor entry: ") + ex.what());
    }
    if (e.dtype != "f32") fail(Kind::Schema, e.name, "dtype '" + e.dtype + "' is not f32");
    m.tensors.push_back(std::move(e));
  }
  return m;
}

void validate_layout(const BundleManifest& m) {
  std::uint64_t end = 0;
  bool first = true;
  std::set<std::string> seen;
  for (const TensorEntry& e : m.tensors) {
    if (!seen.insert(e.name).second) fail(Kind::DuplicateTensor, e.name, "listed more than once");
    if (e.length != 4 * num_elements(e.shape)) {
      fail(Kind::Length, e.name,
           "length " + std::to_string(e.length) + " != 4 * prod(shape " + shape_str(e.shape) + ")");
    }
    if (e.offset % kBundleAlignment != 0) {
      fail(Kind::Layout, e.name, "offset " + std::to_string(e.offset) + " is not 64-byte aligned");
    }
    if (!first && e.offset < end) {
      fail(Kind::Layout, e.name, "offset " + std::to_string(e.offset) + " overlaps the previous section");
    }
    end = e.offset + e.length;
    first = false;
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Kind::Io, "", "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

std::vector<std::string> parameter_names(const ModelConfig& cfg) {
  std::vector<std::string> names;
  ModelParams<float> dummy;
  dummy.layers.resize(cfg.n_layers);
  for_each_tensor(dummy, cfg.n_layers, [&](const std::string& n, const Tensor<float>&) { names.push_back(n); });
  return names;
}

std::string config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(2); }

ModelConfig config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::parse_error& e) {
    fail(Kind::Schema, "", std::string("config is not valid JSON: ") + e.what());
  }
}

void save_bundle(const ModelParams<float>& params, const ModelConfig& cfg, const fs::path& dir) {
  cfg.validate();
  check_params(params, cfg);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(Kind::Io, "", "cannot create " + dir.string() + ": " + ec.message());

  json tensors = json::array();
  std::vector<char> payload;
  for_each_tensor(params, cfg.n_layers, [&](const std::string& name, const Tensor<float>& t) {
    const std::uint64_t offset = align_up(payload.size());
    payload.resize(offset, 0);
    const auto* bytes = reinterpret_cast<const char*>(t.ptr());
    payload.insert(payload.end(), bytes, bytes + t.nbytes());
    tensors.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape()}, {"offset", offset}, {"length", t.nbytes()}});
  });

  const json manifest{{"format_version", kBundleFormatVersion}, {"config", config_json(cfg)}, {"tensors", tensors}};
  const fs::path mpath = dir / kManifestFile;
  const fs::path dpath = dir / kPayloadFile;
  {
    std::ofstream out(mpath, std::ios::binary | std::ios::trunc);
    out << manifest.dump(2) << '\n';
    if (!out) fail(Kind::Io, "", "failed writing " + mpath.string());
  }
  {
    std::ofstream out(dpath, std::ios::binary | std::ios::trunc);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) fail(Kind::Io, "", "failed writing " + dpath.string());
  }
}

BundleManifest read_manifest(const fs::path& dir) {
  const std::string text = read_text(dir / kManifestFile);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(Kind::Schema, "", (dir / kManifestFile).string() + " is not valid JSON: " + e.what());
  }
  BundleManifest m = manifest_from(j);
  validate_layout(m);
  return m;
}

LoadedBundle load_bundle(const fs::path& dir) {
  LoadedBundle out;
  out.manifest = read_manifest(dir);
  out.config = out.manifest.config;
  const std::string payload = read_text(dir / kPayloadFile);

  std::map<std::string, const TensorEntry*> by_name;
  for (const TensorEntry& e : out.manifest.tensors) by_name[e.name] = &e;

  out.params = empty_params(out.config);
  std::set<std::string> used;
  for_each_tensor(out.params, out.config.n_layers, [&](const std::string& name, Tensor<float>& t) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) fail(Kind::MissingTensor, name, "missing from manifest");
    const TensorEntry& e = *it->second;
    if (e.shape != t.shape()) {
      fail(Kind::ShapeMismatch, name, "shape " + shape_str(e.shape) + " does not match config " + shape_str(t.shape()));
    }
    if (e.offset + e.length > payload.size()) {
      fail(Kind::Length, name, "section [" + std::to_string(e.offset) + ", " + std::to_string(e.offset + e.length) +
                                   ") runs past the " + std::to_string(payload.size()) + "-byte payload");
    }
    std::memcpy(t.ptr(), payload.data() + e.offset, e.length);
    used.insert(name);
  });
  for (const TensorEntry& e : out.manifest.tensors) {
    if (!used.count(e.name)) out.warnings.push_back("ignoring unknown tensor '" + e.name + "'");
  }
  return out;
}

std::uint64_t CounterRng::mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t CounterRng::next_u64() {
  ++counter_;
  return mix(seed_ + counter_ * 0x9E3779B97F4A7C15ull);
}

double CounterRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double CounterRng::normal(double mean, double stddev) {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

ModelParams<float> random_init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<float> p = empty_params(cfg);
  CounterRng rng(seed);
  auto fill_normal = [&](Tensor<float>& t, double stddev) {
    for (float& v : t.data()) v = static_cast<float>(rng.normal(0.0, stddev));
  };
  auto fill_uniform = [&](Tensor<float>& t, double lo, double hi) {
    for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  };
  auto fill_const = [](Tensor<float>& t, float c) {
    for (float& v : t.data()) v = c;
  };

  fill_normal(p.embedding, 0.02);
  const double conv_bound = 1.0 / std::sqrt(static_cast<double>(cfg.conv_kernel));
  for (auto& l : p.layers) {
    fill_const(l.input_norm_w, 1.0f);
    fill_normal(l.in_proj, 0.02);
    fill_uniform(l.conv_w, -conv_bound, conv_bound);
    fill_uniform(l.conv_b, -conv_bound, conv_bound);
    for (float& v : l.dt_bias.data()) v = static_cast<float>(inverse_softplus(rng.uniform(1e-3, 1e-1)));
    for (float& v : l.a_log.data()) v = static_cast<float>(std::log(rng.uniform(1.0, 16.0)));
    fill_normal(l.d_skip, 1.0);
    fill_const(l.norm_w, 1.0f);
    fill_normal(l.out_proj, 0.02);
  }
  fill_const(p.final_norm_w, 1.0f);
  return p;
}

}  // namespace ssd
