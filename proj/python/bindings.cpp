#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <stdexcept>

#include "lercp/conformal.hpp"
#include "lercp/estimation.hpp"
#include "lercp/imaging.hpp"
#include "lercp/pipeline.hpp"
#include "lercp/roughness.hpp"

namespace py = pybind11;
using namespace lercp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Image = py::array_t<float, py::array::c_style | py::array::forcecast>;

std::span<const double> view(const Array& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-d array");
  return {a.data(), static_cast<std::size_t>(a.size())};
}

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

SemImage from_numpy(const Image& a, ImageKind kind) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d image (rows, columns)");
  SemImage img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), kind);
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

Image to_numpy(const SemImage& img) {
  Image out({img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

RenderStyle style_named(const std::string& name) {
  if (name == "default") return RenderStyle{};
  if (name == "ideal") return RenderStyle::ideal();
  if (name == "binary") return RenderStyle::binary();
  throw std::invalid_argument("style must be default, ideal or binary, got '" + name + "'");
}

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw std::invalid_argument("array lengths differ");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "LER synthesis, SEM imaging, and conformal prediction intervals";

  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<CalibrationError>(m, "CalibrationError", PyExc_ValueError);

  // roughness
  m.def(
      "psd_eval",
      [](double sigma, double hurst, double xi, const Array& f) {
        const PalasantzasParams p{sigma, hurst, xi};
        std::vector<double> out;
        for (double v : view(f)) out.push_back(psd_eval(p, v));
        return to_array(out);
      },
      py::arg("sigma"), py::arg("hurst"), py::arg("xi"), py::arg("f"),
      "Two-sided Palasantzas PSD (nm^3) at frequencies f (1/nm).");
  m.def(
      "synthesize_edge",
      [](double sigma, double hurst, double xi, std::size_t n, double pitch, std::uint64_t seed) {
        return to_array(synthesize_edge({sigma, hurst, xi}, n, pitch, seed).displacements);
      },
      py::arg("sigma"), py::arg("hurst"), py::arg("xi"), py::arg("n") = 1024, py::arg("pitch") = 2.0,
      py::arg("seed") = 0);
  m.def("compute_ler", [](const Array& d) { return compute_ler(view(d)); }, py::arg("displacements"));
  m.def(
      "periodogram", [](const Array& d, double pitch) { return to_array(periodogram(view(d), pitch)); },
      py::arg("displacements"), py::arg("pitch") = 2.0, "One-sided periodogram |DFT|^2 * pitch / n.");
  m.def("frequency_step", &frequency_step, py::arg("n"), py::arg("pitch"));

  // imaging
  m.def(
      "render_line",
      [](const Array& left, const Array& right, double center, double width, std::uint64_t seed,
         const std::string& style) {
        const ImageGeometry g;
        LineSpec line;
        line.left.displacements.assign(view(left).begin(), view(left).end());
        line.right.displacements.assign(view(right).begin(), view(right).end());
        line.center_offset = center;
        line.width = width;
        return to_numpy(render_clean(line, g, style_named(style), seed));
      },
      py::arg("left"), py::arg("right"), py::arg("center") = 16.0, py::arg("width") = 10.0, py::arg("seed") = 0,
      py::arg("style") = "default", "Clean 1024 x 64 image of one line with the given edge displacements (nm).");
  m.def(
      "apply_poisson",
      [](const Image& clean, double dose, std::uint64_t seed) {
        return to_numpy(apply_poisson(from_numpy(clean, ImageKind::clean), dose, seed));
      },
      py::arg("clean"), py::arg("dose"), py::arg("seed") = 0);
  m.def(
      "denoise",
      [](const Image& noisy, double dose) {
        SemImage img = from_numpy(noisy, ImageKind::noisy);
        img.dose = dose;
        return to_numpy(denoise(img));
      },
      py::arg("noisy"), py::arg("dose"));
  m.def(
      "estimate_ler",
      [](const Image& img) {
        const auto p = estimate_ler(from_numpy(img, ImageKind::noisy), ImageGeometry{});
        return py::make_tuple(p.left_ler, p.right_ler);
      },
      py::arg("image"), "(left, right) LER in nm from a 64-column image.");

  // conformal
  py::class_<IntervalModel>(m, "IntervalModel")
      .def_readonly("alpha", &IntervalModel::alpha)
      .def_readonly("n_calib", &IntervalModel::n_calib)
      .def_readonly("m", &IntervalModel::m)
      .def_readonly("constant", &IntervalModel::constant)
      .def_property_readonly("method", [](const IntervalModel& im) { return to_string(im.method); })
      .def("__repr__", [](const IntervalModel& im) {
        return "IntervalModel(" + to_string(im.method) + ", m=" + std::to_string(im.m) +
               ", constant=" + std::to_string(im.constant) + ")";
      });

  m.def("quantile_index", &quantile_index, py::arg("n"), py::arg("alpha"));
  m.def("pinball_loss", &pinball_loss, py::arg("eps"), py::arg("y"), py::arg("yhat"));
  m.def(
      "calibrate_cp", [](const Array& residuals, double alpha) { return calibrate_cp(view(residuals), alpha); },
      py::arg("residuals"), py::arg("alpha"));
  m.def(
      "calibrate_ncp",
      [](const Array& residuals, const Array& gammas, double alpha) {
        const auto r = view(residuals), g = view(gammas);
        check_lengths(r.size(), g.size());
        std::vector<NormalizedPair> pairs(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) pairs[i] = {r[i], g[i]};
        return calibrate_ncp(pairs, alpha);
      },
      py::arg("residuals"), py::arg("gammas"), py::arg("alpha"));
  m.def(
      "calibrate_cqr",
      [](const Array& y, const Array& lo, const Array& hi, double alpha) {
        const auto ys = view(y), l = view(lo), h = view(hi);
        check_lengths(ys.size(), l.size());
        check_lengths(ys.size(), h.size());
        std::vector<CqrSample> s(ys.size());
        for (std::size_t i = 0; i < ys.size(); ++i) s[i] = {ys[i], l[i], h[i]};
        return calibrate_cqr(s, alpha);
      },
      py::arg("y"), py::arg("lo"), py::arg("hi"), py::arg("alpha"));
  m.def(
      "interval_cp",
      [](double yhat, const IntervalModel& model) {
        const auto iv = interval_cp(yhat, model);
        return py::make_tuple(iv.lo, iv.hi);
      },
      py::arg("yhat"), py::arg("model"));
  m.def(
      "interval_ncp",
      [](double yhat, double gamma, const IntervalModel& model) {
        const auto iv = interval_ncp(yhat, gamma, model);
        return py::make_tuple(iv.lo, iv.hi);
      },
      py::arg("yhat"), py::arg("gamma"), py::arg("model"));
  m.def(
      "interval_cqr",
      [](double lo, double hi, const IntervalModel& model) {
        const auto iv = interval_cqr(lo, hi, model);
        return py::make_tuple(iv.lo, iv.hi, iv.degenerate);
      },
      py::arg("lo"), py::arg("hi"), py::arg("model"));

  // pipeline
  m.def(
      "generate_dataset",
      [](const std::filesystem::path& out, const std::string& preset, std::uint64_t seed, bool store_images,
         int jobs) {
        if (preset != "paper" && preset != "desk") throw std::invalid_argument("preset must be paper or desk");
        DatasetConfig c = preset == "paper" ? DatasetConfig::paper() : DatasetConfig::desk();
        c.root_seed = seed;
        c.store_images = store_images;
        c.jobs = jobs;
        c.output_root = out;
        DatasetManifest manifest;
        {
          py::gil_scoped_release release;
          manifest = generate_dataset(c);
        }
        py::dict d;
        d["examples"] = manifest.examples.size();
        d["groups"] = manifest.group_count();
        d["manifest"] = (out / kManifestFile).string();
        d["hash"] = manifest_hash(manifest);
        return d;
      },
      py::arg("out"), py::arg("preset") = "desk", py::arg("seed") = 20210101, py::arg("store_images") = false,
      py::arg("jobs") = 1, "Generates a preset dataset under `out`; returns counts, manifest path and hash.");
  m.def(
      "run_experiment_json",
      [](const std::filesystem::path& manifest_path, const std::string& method, double alpha, std::uint64_t seed,
         bool unit_gamma) {
        const DatasetManifest manifest = load_manifest(manifest_path, false);
        ExperimentOptions opts;
        opts.unit_gamma = unit_gamma;
        py::gil_scoped_release release;
        return report_to_json(run_experiment(manifest, {{}, seed}, parse_method(method), alpha, opts));
      },
      py::arg("manifest"), py::arg("method") = "cp", py::arg("alpha") = 0.1, py::arg("seed") = 0,
      py::arg("unit_gamma") = false);
}
