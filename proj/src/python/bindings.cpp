#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ambiseg/cli.hpp"
#include "ambiseg/data.hpp"
#include "ambiseg/errors.hpp"
#include "ambiseg/metrics.hpp"
#include "ambiseg/schedule.hpp"

namespace py = pybind11;
using namespace ambiseg;

namespace {

using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Mask to_mask(const MaskArray& a) {
  if (a.ndim() != 2) throw ShapeError("mask must be a 2-d array");
  Mask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.pixels.begin());
  return m;
}

std::vector<Mask> to_masks(const std::vector<MaskArray>& arrays) {
  std::vector<Mask> out;
  out.reserve(arrays.size());
  for (const auto& a : arrays) out.push_back(to_mask(a));
  return out;
}

py::array_t<std::uint8_t> from_mask(const Mask& m) {
  py::array_t<std::uint8_t> a({m.height, m.width});
  std::copy(m.pixels.begin(), m.pixels.end(), a.mutable_data());
  return a;
}

py::dict sample_to_dict(const AnnotatedSample& s) {
  py::array_t<float> image({s.height(), s.width()});
  std::copy(s.image.data().begin(), s.image.data().end(), image.mutable_data());
  py::list masks;
  for (const auto& m : s.masks) masks.append(from_mask(m));
  py::dict d;
  d["image"] = image;
  d["masks"] = masks;
  if (s.meta) {
    py::dict meta;
    meta["center"] = py::make_tuple(s.meta->center_x, s.meta->center_y);
    meta["radius"] = s.meta->radius;
    meta["contrast"] = s.meta->contrast;
    meta["empty_prob"] = s.meta->empty_prob;
    meta["annotator_empty"] = s.meta->annotator_empty;
    meta["jitter"] = s.meta->jitter;
    d["meta"] = meta;
  } else {
    d["meta"] = py::none();
  }
  return d;
}

NoiseSchedule cosine(double b) {
  NoiseSchedule s{ScheduleFamily::kCosine, b};
  s.validate();
  return s;
}

}  // namespace

PYBIND11_MODULE(_ambiseg, m) {
  m.doc() = "Diffusion models for ambiguous segmentation";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("gamma", [](double t, double b) { return gamma(cosine(b), t); }, py::arg("t"), py::arg("b") = 1.0);
  m.def("snr", [](double t, double b) { return snr(cosine(b), t); }, py::arg("t"), py::arg("b") = 1.0);
  m.def("log_snr", [](double t, double b) { return log_snr(cosine(b), t); }, py::arg("t"), py::arg("b") = 1.0);
  m.def(
      "coefficients",
      [](double t, double b) {
        const auto c = coefficients(cosine(b), t);
        return py::make_tuple(c.alpha, c.sigma);
      },
      py::arg("t"), py::arg("b") = 1.0, "(alpha, sigma) of the scaled cosine schedule");
  m.def(
      "weight",
      [](const std::string& kind, double t, double b, double bias) {
        return weight({parse_weighting_kind(kind), bias}, cosine(b), t);
      },
      py::arg("kind"), py::arg("t"), py::arg("b") = 1.0, py::arg("sigmoid_bias") = 0.0);

  m.def("dice", [](const MaskArray& a, const MaskArray& b) { return dice(to_mask(a), to_mask(b)); });
  m.def("iou", [](const MaskArray& a, const MaskArray& b) { return iou(to_mask(a), to_mask(b)); });
  m.def(
      "ged",
      [](const std::vector<MaskArray>& preds, const std::vector<MaskArray>& gts) {
        return ged(to_masks(preds), to_masks(gts));
      },
      py::arg("preds"), py::arg("gts"));
  m.def(
      "postprocess",
      [](const std::vector<MaskArray>& masks, double r) {
        py::list out;
        for (const auto& mask : postprocess(to_masks(masks), r)) out.append(from_mask(mask));
        return out;
      },
      py::arg("masks"), py::arg("r"));

  m.def(
      "generate",
      [](int n, std::uint64_t seed, int image_size) {
        SynthConfig cfg;
        cfg.seed = seed;
        cfg.image_size = image_size;
        const auto ds = generate(cfg, n);
        py::list out;
        for (const auto& s : ds.samples) out.append(sample_to_dict(s));
        return out;
      },
      py::arg("n"), py::arg("seed") = 0, py::arg("image_size") = 32,
      "Synthetic samples with the default generator settings");
  m.def(
      "read_dataset",
      [](const std::string& dir) {
        const auto ds = read_dataset(dir);
        py::list out;
        for (const auto& s : ds.samples) out.append(sample_to_dict(s));
        return out;
      },
      py::arg("dir"));
  m.def(
      "oracle_ged",
      [](int n, std::uint64_t seed, int image_size, int n_preds) {
        SynthConfig cfg;
        cfg.seed = seed;
        cfg.image_size = image_size;
        const auto ds = generate(cfg, n);
        std::vector<double> out;
        for (const auto& s : ds.samples) out.push_back(oracle_ged(s, n_preds));
        return out;
      },
      py::arg("n"), py::arg("seed") = 0, py::arg("image_size") = 32, py::arg("n_preds") = 4,
      "Exact expected GED of a perfect model for each generated sample");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit code, stdout, stderr)");
}
