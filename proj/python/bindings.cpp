#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ssd/bench.hpp"
#include "ssd/verify.hpp"

namespace py = pybind11;
using namespace ssd;

namespace {

template <Real T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <Real T>
Tensor<T> to_tensor(const Array<T>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(std::move(shape), std::vector<T>(a.data(), a.data() + a.size()));
}

template <Real T>
py::array_t<T> to_array(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::copy(t.ptr(), t.ptr() + t.size(), out.mutable_data());
  return out;
}

MaskStrategy mask_of(const std::string& s) {
  if (s == "static") return MaskStrategy::Static;
  if (s == "rowwise") return MaskStrategy::Rowwise;
  throw InputError("mask must be 'static' or 'rowwise'");
}

DecodeMode mode_of(const std::string& s) {
  if (s == "cached") return DecodeMode::Cached;
  if (s == "non-cached") return DecodeMode::NonCached;
  throw InputError("mode must be 'cached' or 'non-cached'");
}

template <Real T>
py::tuple ssd_forward_py(const Array<T>& x, const Array<T>& dt, const Array<T>& a, const Array<T>& b,
                         const Array<T>& c, std::size_t chunk_len, std::optional<Array<T>> init,
                         const std::string& mask) {
  SsdInputs<T> in{to_tensor(x), to_tensor(dt), to_tensor(a), to_tensor(b), to_tensor(c)};
  std::optional<Tensor<T>> state;
  if (init) state = to_tensor(*init);
  SsdOutputs<T> out = ssd_forward(in, chunk_len, state, mask_of(mask));
  return py::make_tuple(to_array(out.y), to_array(out.final_state));
}

Tokens to_tokens(const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& ids) {
  if (ids.ndim() == 1) return Tokens(1, ids.shape(0), std::vector<std::int64_t>(ids.data(), ids.data() + ids.size()));
  if (ids.ndim() != 2) throw ShapeError("token ids must be 1-D or (batch, length)");
  return Tokens(ids.shape(0), ids.shape(1), std::vector<std::int64_t>(ids.data(), ids.data() + ids.size()));
}

py::array_t<std::int64_t> tokens_array(const Tokens& t) {
  py::array_t<std::int64_t> out({static_cast<py::ssize_t>(t.batch), static_cast<py::ssize_t>(t.length)});
  std::copy(t.ids.begin(), t.ids.end(), out.mutable_data());
  return out;
}

struct Model {
  ModelParams<float> params;
  ModelConfig config;

  ModelConfig run_config(bool f64, bool bf16_decay) const {
    ModelConfig c = config;
    if (f64) c.elem_policy.compute = ElemType::F64;
    if (bf16_decay) c.elem_policy.decay_exp = DecayExp::BF16E;
    return c;
  }
};

ModelConfig preset(const std::string& name) {
  if (name == "tiny") return ModelConfig::tiny();
  if (name == "130m") return ModelConfig::mamba2_130m();
  throw InputError("preset must be 'tiny' or '130m'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Mamba-2 SSD inference engine";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<BundleError>(m, "BundleError", PyExc_IOError);

  m.def("ssd_forward", &ssd_forward_py<double>, py::arg("x"), py::arg("dt"), py::arg("a"), py::arg("b"), py::arg("c"),
        py::arg("chunk_len"), py::arg("initial_state") = py::none(), py::arg("mask") = "static");
  m.def("ssd_forward", &ssd_forward_py<float>, py::arg("x"), py::arg("dt"), py::arg("a"), py::arg("b"), py::arg("c"),
        py::arg("chunk_len"), py::arg("initial_state") = py::none(), py::arg("mask") = "static");

  m.def(
      "sequential_ssm",
      [](const Array<double>& x, const Array<double>& dt, const Array<double>& a, const Array<double>& b,
         const Array<double>& c, const Array<double>& d, std::optional<Array<double>> init) {
        std::optional<Tensor<double>> state;
        if (init) state = to_tensor(*init);
        const auto r = oracle::sequential_ssm(to_tensor(x), to_tensor(dt), to_tensor(a), to_tensor(b), to_tensor(c),
                                              to_tensor(d), state);
        return py::make_tuple(to_array(r.y), to_array(r.final_state));
      },
      py::arg("x"), py::arg("dt"), py::arg("a"), py::arg("b"), py::arg("c"), py::arg("d"),
      py::arg("initial_state") = py::none());

  m.def(
      "segsum", [](const Array<double>& x, const std::string& mask) { return to_array(segsum(to_tensor(x), mask_of(mask))); },
      py::arg("x"), py::arg("mask") = "static");

  py::class_<Model>(m, "Model")
      .def_static(
          "random",
          [](const std::string& name, std::uint64_t seed, std::optional<std::size_t> layers) {
            Model md;
            md.config = preset(name);
            if (layers) md.config.n_layers = *layers;
            md.config.validate();
            md.params = random_init(md.config, seed);
            return md;
          },
          py::arg("preset") = "tiny", py::arg("seed") = 0, py::arg("layers") = py::none())
      .def_static(
          "load",
          [](const std::string& path) {
            LoadedBundle b = load_bundle(path);
            return Model{std::move(b.params), std::move(b.config)};
          },
          py::arg("path"))
      .def("save", [](const Model& md, const std::string& path) { save_bundle(md.params, md.config, path); })
      .def_property_readonly("config_json", [](const Model& md) { return config_to_json(md.config); })
      .def_property_readonly("parameter_count", [](const Model& md) { return parameter_count(md.config); })
      .def(
          "prefill",
          [](const Model& md, const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& ids,
             bool f64, bool bf16_decay, const std::string& mask) -> py::object {
            const Tokens tok = to_tokens(ids);
            const ModelConfig cfg = md.run_config(f64, bf16_decay);
            if (f64) return to_array(prefill(md.params.cast<double>(), tok, cfg, mask_of(mask)).logits);
            return to_array(prefill(md.params, tok, cfg, mask_of(mask)).logits);
          },
          py::arg("tokens"), py::arg("f64") = false, py::arg("bf16_decay") = false, py::arg("mask") = "static")
      .def(
          "generate",
          [](const Model& md, const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& ids,
             std::size_t steps, const std::string& mode, bool f64) {
            const Tokens tok = to_tokens(ids);
            const ModelConfig cfg = md.run_config(f64, false);
            if (f64) return tokens_array(generate(md.params.cast<double>(), tok, steps, mode_of(mode), cfg).tokens);
            return tokens_array(generate(md.params, tok, steps, mode_of(mode), cfg).tokens);
          },
          py::arg("prompt"), py::arg("steps"), py::arg("mode") = "cached", py::arg("f64") = false)
      .def("cache_bytes", [](const Model& md, std::size_t batch) { return cache_bytes(md.config, batch); },
           py::arg("batch") = 1)
      .def("flops_prefill", [](const Model& md, std::size_t T) { return cost::flops_prefill(md.config, T); })
      .def("flops_step", [](const Model& md) { return cost::flops_step(md.config); })
      .def(
          "flops_decode",
          [](const Model& md, const std::string& mode, std::size_t P, std::size_t G) {
            return cost::flops_decode(md.config, mode_of(mode), P, G);
          },
          py::arg("mode"), py::arg("prompt_len"), py::arg("gen_len"))
      .def("peak_activation_bytes", [](const Model& md, std::size_t T) { return cost::peak_activation_bytes(md.config, T); });

  m.def(
      "mfu",
      [](double flops, double wall, const std::string& device) {
        return cost::mfu(flops, wall, cost::device_from_string(device));
      },
      py::arg("flops"), py::arg("wall_seconds"), py::arg("device") = "v6e");
  m.def(
      "hbu",
      [](double bytes, double wall, const std::string& device) {
        return cost::hbu(bytes, wall, cost::device_from_string(device));
      },
      py::arg("bytes"), py::arg("wall_seconds"), py::arg("device") = "v6e");
}
