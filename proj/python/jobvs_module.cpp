// Python bindings. Volumes cross the boundary as Fortran-ordered numpy
// arrays indexed [x, y, z], matching the on-disk NIfTI layout.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "jobvs/config_json.hpp"
#include "jobvs/pipeline.hpp"
#include "jobvs/preprocess.hpp"
#include "jobvs/volume_io.hpp"

namespace py = pybind11;
using namespace jobvs;

namespace {

template <class T>
using FArray = py::array_t<T, py::array::f_style | py::array::forcecast>;

template <class T>
FArray<T> to_numpy(const Grid3<T>& g) {
  const Shape3& s = g.shape();
  FArray<T> out({s[0], s[1], s[2]});
  std::copy(g.values().begin(), g.values().end(), out.mutable_data());
  return out;
}

template <class T>
Grid3<T> from_numpy(const FArray<T>& a) {
  if (a.ndim() != 3) throw DataError("expected a 3-D array");
  const Shape3 s{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                 static_cast<std::size_t>(a.shape(2))};
  return Grid3<T>(s, std::vector<T>(a.data(), a.data() + a.size()));
}

Volume volume_from(const FArray<float>& a, const Vec3& spacing) {
  Volume v;
  v.grid = from_numpy(a);
  v.spacing = spacing;
  return v;
}

LabelVolume labels_from(const FArray<std::uint8_t>& a, const Vec3& spacing) {
  LabelVolume v;
  v.grid = from_numpy(a);
  v.spacing = spacing;
  validate(v);
  return v;
}

py::dict record_dict(const SubjectRecord& r) {
  py::dict d;
  d["id"] = r.id;
  d["image"] = to_numpy(r.image.grid);
  d["brain"] = to_numpy(r.brain.grid);
  d["vessel"] = to_numpy(r.vessel.grid);
  d["spacing"] = r.image.spacing;
  return d;
}

}  // namespace

PYBIND11_MODULE(_jobvs, m) {
  m.doc() = "Joint brain and vessel segmentation core";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def(
      "phantom",
      [](std::size_t index, std::size_t size, std::uint64_t seed, double noise_std) {
        PhantomConfig cfg;
        cfg.size = size;
        cfg.seed = seed;
        cfg.noise_std = noise_std;
        return record_dict(generate_phantom(cfg, index));
      },
      py::arg("index") = 0, py::arg("size") = 64, py::arg("seed") = 0, py::arg("noise_std") = PhantomConfig{}.noise_std,
      "Synthetic subject as a dict with image, brain, vessel arrays and spacing.");

  m.def(
      "load_volume",
      [](const std::filesystem::path& p) {
        const Volume v = load_volume(p);
        return py::make_tuple(to_numpy(v.grid), v.spacing);
      },
      py::arg("path"), "Returns (array[x, y, z], spacing).");
  m.def(
      "save_volume",
      [](const std::filesystem::path& p, const FArray<float>& a, const Vec3& spacing) {
        save_volume(volume_from(a, spacing), p);
      },
      py::arg("path"), py::arg("array"), py::arg("spacing") = Vec3{1, 1, 1});

  m.def(
      "zscore", [](const FArray<float>& a) { return to_numpy(zscore(volume_from(a, {1, 1, 1})).grid); },
      py::arg("array"));
  m.def(
      "resample",
      [](const FArray<float>& a, const Vec3& spacing, const Vec3& target) {
        return to_numpy(resample_to_spacing(volume_from(a, spacing), target).grid);
      },
      py::arg("array"), py::arg("spacing"), py::arg("target"));

  m.def(
      "dsc",
      [](const FArray<std::uint8_t>& p, const FArray<std::uint8_t>& g) {
        return dsc(labels_from(p, {1, 1, 1}).grid.values(), labels_from(g, {1, 1, 1}).grid.values());
      },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "average_precision",
      [](const FArray<float>& p, const FArray<std::uint8_t>& g) {
        return average_precision(from_numpy(p).values(), labels_from(g, {1, 1, 1}).grid.values());
      },
      py::arg("prob"), py::arg("gt"));
  m.def(
      "max_f1",
      [](const FArray<float>& p, const FArray<std::uint8_t>& g) {
        const F1Result r = max_f1(from_numpy(p).values(), labels_from(g, {1, 1, 1}).grid.values());
        return py::make_tuple(r.f1, r.threshold);
      },
      py::arg("prob"), py::arg("gt"), "Returns (f1, threshold).");
  m.def(
      "cl_dice",
      [](const FArray<std::uint8_t>& p, const FArray<std::uint8_t>& g) {
        return cl_dice(labels_from(p, {1, 1, 1}).grid, labels_from(g, {1, 1, 1}).grid);
      },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "skeletonize", [](const FArray<std::uint8_t>& a) { return to_numpy(skeletonize3d(labels_from(a, {1, 1, 1}).grid)); },
      py::arg("mask"));

  py::class_<ModelParams>(m, "Model")
      .def_static(
          "load", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"))
      .def_property_readonly("task_mode", [](const ModelParams& mp) { return to_string(mp.config.task_mode); })
      .def_property_readonly("parameter_count", &ModelParams::parameter_count)
      .def("checksum", &ModelParams::checksum)
      .def(
          "predict",
          [](const ModelParams& mp, const FArray<float>& image, const Vec3& spacing,
             const std::filesystem::path& stats_path, double overlap) {
            const CohortStats st = read_json_file(stats_path.string()).get<CohortStats>();
            PredictionVolume p;
            {
              py::gil_scoped_release release;
              p = predict_raw(mp, st, volume_from(image, spacing), overlap);
            }
            py::dict d;
            if (p.vessel_prob) d["vessel"] = to_numpy(p.vessel_prob->grid);
            if (p.brain_prob) d["brain"] = to_numpy(p.brain_prob->grid);
            return d;
          },
          py::arg("image"), py::arg("spacing"), py::arg("stats"), py::arg("overlap") = 0.5,
          "Foreground probabilities per head on the input grid.");
}
