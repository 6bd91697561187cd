#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "faultseg/experiment.hpp"

namespace py = pybind11;
using namespace faultseg;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

VolumeKind parse_kind(const std::string& s) {
  for (VolumeKind k : {VolumeKind::amplitude, VolumeKind::probability, VolumeKind::label, VolumeKind::weight})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown volume kind '" + s + "'");
}

Volume to_volume(const Array& a, VolumeKind kind) {
  if (a.ndim() != 3) throw ShapeError("expected a 3D array, got " + std::to_string(a.ndim()) + " dimensions");
  Volume v(Dims{a.shape(0), a.shape(1), a.shape(2)}, kind);
  std::memcpy(v.voxels.data(), a.data(), v.voxels.size() * sizeof(float));
  validate(v);
  return v;
}

Array to_array(const Volume& v) {
  Array a({v.dims.d, v.dims.h, v.dims.w});
  std::memcpy(a.mutable_data(), v.voxels.data(), v.voxels.size() * sizeof(float));
  return a;
}

py::dict metrics_dict(const MetricReport& r) {
  py::dict d;
  d["tp"] = r.tp, d["fp"] = r.fp, d["fn"] = r.fn, d["tn"] = r.tn;
  d["precision"] = r.precision, d["recall"] = r.recall, d["iou"] = r.iou, d["dice"] = r.dice;
  d["hausdorff"] = r.hausdorff ? py::cast(*r.hausdorff) : py::none();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sparse-slice 3D seismic fault segmentation";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  auto data_error = py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", data_error.ptr());
  auto numeric_error = py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<DivergenceError>(m, "DivergenceError", numeric_error.ptr());

  m.def(
      "load_volume",
      [](const std::filesystem::path& p) {
        const Volume v = load_volume(p);
        return py::make_tuple(to_array(v), to_string(v.kind));
      },
      py::arg("path"), "Reads an FVOL file as (array, kind).");
  m.def(
      "save_volume",
      [](const std::filesystem::path& p, const Array& a, const std::string& kind) {
        save_volume(to_volume(a, parse_kind(kind)), p);
      },
      py::arg("path"), py::arg("array"), py::arg("kind") = "amplitude");
  m.def(
      "standardize", [](const Array& a) { return to_array(standardize(to_volume(a, VolumeKind::amplitude))); },
      py::arg("amplitude"));

  py::class_<SynthParams>(m, "SynthParams")
      .def(py::init<>())
      .def_readwrite("seed", &SynthParams::seed)
      .def_readwrite("size", &SynthParams::size)
      .def_property(
          "fault_count", [](const SynthParams& p) { return py::make_tuple(p.fault_count.lo, p.fault_count.hi); },
          [](SynthParams& p, std::pair<int, int> r) { p.fault_count = {r.first, r.second}; })
      .def_property(
          "noise_std", [](const SynthParams& p) { return py::make_tuple(p.noise_std.lo, p.noise_std.hi); },
          [](SynthParams& p, std::pair<double, double> r) { p.noise_std = {r.first, r.second}; })
      .def_readwrite("peak_frequency", &SynthParams::peak_frequency);
  m.def(
      "generate",
      [](const SynthParams& p) {
        const SynthVolume s = generate(p);
        py::list faults;
        for (const auto& f : s.faults) faults.append(py::make_tuple(f.normal, f.offset, f.throw_));
        py::dict d;
        d["amplitude"] = to_array(s.amplitude);
        d["label"] = to_array(s.label);
        d["faults"] = faults;
        d["noise_level"] = s.noise_level;
        return d;
      },
      py::arg("params"), "Synthetic faulted cuboid: amplitude, label, faults as (normal, offset, throw).");

  m.def(
      "sparsify",
      [](const Array& dense, const std::string& mode) {
        return to_array(sparsify(to_volume(dense, VolumeKind::label), parse_mode(mode)));
      },
      py::arg("dense"), py::arg("mode"), "Keeps the mode's slices; every other voxel becomes -1.");
  m.def(
      "lambda_weights", [](const Array& sparse) { return to_array(lambda_weights(to_volume(sparse, VolumeKind::label))); },
      py::arg("sparse"));
  m.def(
      "count_labels",
      [](const Array& sparse) {
        const LabelCounts c = count_labels(to_volume(sparse, VolumeKind::label));
        return py::make_tuple(c.positives, c.negatives, c.unlabeled);
      },
      py::arg("sparse"), "(positives, negatives, unlabeled)");
  m.def(
      "attention_label",
      [](const Array& sparse, double sigma) {
        const AttentionLabel a = attention_label(to_volume(sparse, VolumeKind::label), sigma);
        return py::make_tuple(to_array(a.theta), to_array(a.mask));
      },
      py::arg("sparse"), py::arg("sigma") = 2.0, "(theta, mask)");

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("depth", &ModelConfig::depth)
      .def_readwrite("base_channels", &ModelConfig::base_channels)
      .def_readwrite("aam_levels", &ModelConfig::aam_levels)
      .def_readwrite("kernel", &ModelConfig::kernel)
      .def_readwrite("edge", &ModelConfig::edge)
      .def_readwrite("sigma", &ModelConfig::sigma)
      .def_property(
          "attention_activation", [](const ModelConfig& c) { return to_string(c.attention_activation); },
          [](ModelConfig& c, const std::string& s) { c.attention_activation = parse_attention_activation(s); })
      .def("validate", [](const ModelConfig& c) { validate(c); })
      .def("__eq__", [](const ModelConfig& a, const ModelConfig& b) { return a == b; });
  m.def("count_flops", py::overload_cast<const ModelConfig&>(&count_flops), py::arg("config"));
  m.def("parameter_count", &parameter_count, py::arg("config"));

  py::class_<ModelParams>(m, "ModelParams")
      .def_readonly("config", &ModelParams::config)
      .def("count", &ModelParams::count)
      .def("names",
           [](const ModelParams& p) {
             std::vector<std::string> out;
             for (const auto& t : p.tensors) out.push_back(t.name);
             return out;
           })
      .def(
          "tensor",
          [](const ModelParams& p, const std::string& name) {
            const Tensor<float>& t = p.at(name);
            std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
            py::array_t<float> a(shape);
            std::memcpy(a.mutable_data(), t.data().data(), t.data().size() * sizeof(float));
            return a;
          },
          py::arg("name"))
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });
  m.def("init_params", &init_params, py::arg("config"), py::arg("seed") = 0);
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def("save_checkpoint", &save_checkpoint, py::arg("params"), py::arg("path"));
  m.def(
      "predict",
      [](const ModelParams& p, const Array& x) {
        Volume v = to_volume(x, VolumeKind::amplitude);
        Volume out;
        {
          py::gil_scoped_release release;
          out = predict(p, v);
        }
        return to_array(out);
      },
      py::arg("params"), py::arg("cuboid"), "Fault probability of one cuboid of edge config.edge.");
  m.def(
      "predict_volume",
      [](const ModelParams& p, const Array& x, std::int64_t edge, std::int64_t overlap) {
        Volume v = to_volume(x, VolumeKind::amplitude);
        Volume out;
        {
          py::gil_scoped_release release;
          out = predict_volume(p, v, edge, overlap);
        }
        return to_array(out);
      },
      py::arg("params"), py::arg("volume"), py::arg("edge") = 64, py::arg("overlap") = 16,
      "Tiled prediction blended with Gaussian tile weights.");
  m.def(
      "gaussian_weight_field", [](std::int64_t edge, std::int64_t overlap) {
        return to_array(gaussian_weight_field(edge, overlap));
      },
      py::arg("edge"), py::arg("overlap"));

  m.def(
      "evaluate",
      [](const Array& prob, const Array& truth, double threshold) {
        return metrics_dict(
            evaluate(to_volume(prob, VolumeKind::probability), to_volume(truth, VolumeKind::label), threshold));
      },
      py::arg("prob"), py::arg("truth"), py::arg("threshold") = 0.5);
  m.def(
      "hausdorff",
      [](const Array& a, const Array& b) {
        return hausdorff(to_volume(a, VolumeKind::label), to_volume(b, VolumeKind::label));
      },
      py::arg("a"), py::arg("b"));

  m.def("experiment_keys", &experiment_keys);
  m.def(
      "resolve_config",
      [](const std::string& text, const std::string& profile) {
        if (profile != "desk" && profile != "quick") throw ConfigError("unknown profile '" + profile + "'");
        const ExperimentConfig c = parse_experiment(text, profile == "quick" ? quick_profile() : desk_profile());
        validate(c);
        return to_text(c);
      },
      py::arg("text") = "", py::arg("profile") = "desk",
      "Applies key=value lines over a profile and returns the fully resolved config text.");
}
