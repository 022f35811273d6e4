#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <iostream>
#include <string>
#include <vector>

#include "tof/checkpoint.hpp"
#include "tof/cli.hpp"
#include "tof/evaluate.hpp"
#include "tof/inference.hpp"
#include "tof/network.hpp"
#include "tof/preprocess.hpp"
#include "tof/synth.hpp"

namespace py = pybind11;
using namespace tof;

namespace {

template <class T>
Array<T> from_numpy(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  Array<T> out(shape);
  std::memcpy(out.data(), a.data(), out.size() * sizeof(T));
  return out;
}

template <class T>
py::array_t<T> to_numpy(const Array<T>& a) {
  std::vector<py::ssize_t> shape(a.shape().begin(), a.shape().end());
  py::array_t<T> out(shape);
  std::memcpy(out.mutable_data(), a.data(), a.size() * sizeof(T));
  return out;
}

NetConfig net_config(const py::dict& overrides) {
  nlohmann::json j = NetConfig{};
  for (auto item : overrides) {
    const std::string key = py::str(item.first);
    if (!j.contains(key)) throw ConfigError("unknown network option '" + key + "'");
    if (py::isinstance<py::int_>(item.second)) j[key] = item.second.cast<long long>();
    else j[key] = item.second.cast<double>();
  }
  return j.get<NetConfig>();
}

py::dict confusion_dict(const ToleranceConfusion& c) {
  py::dict d;
  d["tp"] = c.tp;
  d["fp"] = c.fp;
  d["fn"] = c.fn;
  d["tn"] = c.tn;
  return d;
}

}  // namespace

PYBIND11_MODULE(_tof, m) {
  m.doc() = "Tree detection on Sentinel-like time series";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "whittaker_smooth",
      [](const std::vector<double>& y, double lam) {
        return preprocess::whittaker_smooth(y, preprocess::WhittakerConfig{lam, 2});
      },
      py::arg("series"), py::arg("lam") = 800.0, "Second-order Whittaker smoother.");

  m.def(
      "synth_plot",
      [](std::uint64_t seed, double cover, double cloud_gap, double noise) {
        synth::SynthConfig c;
        c.seed = seed;
        c.cover_target = cover;
        c.cloud_gap_fraction = cloud_gap;
        c.noise_sigma = noise;
        const auto p = synth::generate_plot(c);
        py::dict d;
        d["stack"] = to_numpy(p.sample.stack.data());
        d["label"] = to_numpy(p.sample.label.values());
        d["clean_optical"] = to_numpy(p.clean_optical);
        d["timestamps"] = p.sample.stack.timestamps();
        d["background"] = std::string(synth::background_name(p.background));
        return d;
      },
      py::arg("seed") = 0, py::arg("cover") = 0.3, py::arg("cloud_gap") = 0.3, py::arg("noise") = 0.01,
      "One synthetic plot: stack [24, 14, 14, 16] float32 and label [14, 14] uint8.");

  py::class_<Network>(m, "Network")
      .def(py::init([](std::uint64_t seed, const py::dict& config) { return Network(net_config(config), seed); }),
           py::arg("seed") = 0, py::arg("config") = py::dict())
      .def_static(
          "load",
          [](const std::string& dir) {
            const auto ck = load_checkpoint(dir);
            return py::make_tuple(ck.network(), ck.threshold);
          },
          py::arg("path"), "Returns (network, threshold) from a checkpoint directory.")
      .def("param_count", py::overload_cast<>(&Network::param_count, py::const_))
      .def(
          "predict",
          [](const Network& net, const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
            const Tensor input = from_numpy<double>(x);
            py::gil_scoped_release release;
            Tensor p = net.predict(input);
            py::gil_scoped_acquire acquire;
            return to_numpy(p);
          },
          py::arg("input"), "Probabilities [H, W] for a [T, H, W, C] input.")
      .def(
          "predict_scene",
          [](const Network& net, const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
             std::size_t stride, double sigma) {
            const Tensor scene = from_numpy<double>(x);
            BlendPlan plan;
            plan.stride = stride;
            plan.sigma = sigma;
            return to_numpy(predict_scene(scene, [&](const Tensor& w) { return net.predict(w); }, plan));
          },
          py::arg("scene"), py::arg("stride") = 7, py::arg("sigma") = 3.5,
          "Blended probabilities over overlapping 14x14 windows.")
      .def("save", [](const Network& net, const std::string& dir, double threshold) {
        save_checkpoint(dir, net, 0, threshold);
      }, py::arg("path"), py::arg("threshold") = 0.5);

  m.def(
      "select_threshold",
      [](const std::vector<double>& p, const std::vector<std::uint8_t>& y) { return select_threshold(p, y); },
      py::arg("probs"), py::arg("labels"));

  m.def(
      "tolerant_confusion",
      [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& truth,
         const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& pred) {
        return confusion_dict(
            tolerant_confusion(LabelGrid(from_numpy<std::uint8_t>(truth)), LabelGrid(from_numpy<std::uint8_t>(pred))));
      },
      py::arg("truth"), py::arg("pred"));

  m.def(
      "users_producers",
      [](std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
        const auto a = users_producers({tp, fp, fn, 0});
        return py::make_tuple(a.ua, a.pa);
      },
      py::arg("tp"), py::arg("fp"), py::arg("fn"), "(UA, PA); None where undefined.");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        return cli::run(args, std::cout, std::cerr);
      },
      py::arg("args"), "Runs the command line with `args` (without the program name); returns the exit code.");
}
