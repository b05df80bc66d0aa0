#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "dmp3dad/cli.hpp"
#include "dmp3dad/datastore.hpp"
#include "dmp3dad/error.hpp"
#include "dmp3dad/evaluation.hpp"
#include "dmp3dad/log.hpp"
#include "dmp3dad/synthetic.hpp"

namespace py = pybind11;
using namespace dmp3dad;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

PointCloud cloud_from_array(const DoubleArray& points) {
  if (points.ndim() != 2 || points.shape(1) != 3) throw InvalidArgument("points must have shape (N, 3)");
  PointCloud cloud;
  const auto p = points.unchecked<2>();
  cloud.points.resize(static_cast<std::size_t>(points.shape(0)));
  for (py::ssize_t i = 0; i < points.shape(0); ++i) cloud.points[i] = {p(i, 0), p(i, 1), p(i, 2)};
  return cloud;
}

py::array_t<double> cloud_to_array(const PointCloud& cloud) {
  py::array_t<double> out({static_cast<py::ssize_t>(cloud.points.size()), py::ssize_t{3}});
  auto o = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    o(i, 0) = cloud.points[i].x;
    o(i, 1) = cloud.points[i].y;
    o(i, 2) = cloud.points[i].z;
  }
  return out;
}

std::vector<DepthImage> images_from_array(const FloatArray& images) {
  if (images.ndim() != 3) throw InvalidArgument("images must have shape (V, H, W)");
  const auto v = images.shape(0), h = images.shape(1), w = images.shape(2);
  std::vector<DepthImage> out(static_cast<std::size_t>(v));
  const float* data = images.data();
  for (py::ssize_t i = 0; i < v; ++i) {
    out[i].height = static_cast<int>(h);
    out[i].width = static_cast<int>(w);
    out[i].view_index = static_cast<int>(i);
    out[i].intensities.assign(data + i * h * w, data + (i + 1) * h * w);
  }
  return out;
}

py::array_t<float> images_to_array(const std::vector<DepthImage>& images) {
  const py::ssize_t v = static_cast<py::ssize_t>(images.size());
  const py::ssize_t h = v ? images[0].height : 0, w = v ? images[0].width : 0;
  py::array_t<float> out({v, h, w});
  float* dst = out.mutable_data();
  for (const auto& img : images) dst = std::copy(img.intensities.begin(), img.intensities.end(), dst);
  return out;
}

FeatureMatrix features_from_array(const FloatArray& a) {
  if (a.ndim() != 2) throw InvalidArgument("features must have shape (V, C)");
  FeatureMatrix fm{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), {}};
  fm.values.assign(a.data(), a.data() + a.size());
  return fm;
}

using MutableBackend = std::shared_ptr<EncoderBackend>;

MutableBackend mutable_backend(BackendPtr b) { return std::const_pointer_cast<EncoderBackend>(std::move(b)); }

py::array_t<float> features_to_array(const FeatureMatrix& fm) {
  py::array_t<float> out({py::ssize_t{fm.views}, py::ssize_t{fm.dim}});
  std::copy(fm.values.begin(), fm.values.end(), out.mutable_data());
  return out;
}

ProjectionParams make_params(int grid_resolution, int image_size, int densify_kernel, double smooth_sigma) {
  ProjectionParams p;
  p.grid_resolution = grid_resolution;
  p.image_size = image_size;
  p.densify_kernel = densify_kernel;
  p.smooth_sigma = smooth_sigma;
  validate(p);
  return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-view depth projection anomaly detection core";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  static py::exception<ParseError> parse_error(m, "ParseError", error.ptr());
  static py::exception<InvalidArgument> invalid(m, "InvalidArgument", PyExc_ValueError);
  static py::exception<ModelError> model_error(m, "ModelError", error.ptr());
  static py::exception<MissingEmbedding> missing(m, "MissingEmbedding", error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ParseError& e) {
      py::set_error(parse_error, e.what());
    } catch (const InvalidArgument& e) {
      py::set_error(invalid, e.what());
    } catch (const ModelError& e) {
      py::set_error(model_error, e.what());
    } catch (const MissingEmbedding& e) {
      py::set_error(missing, e.what());
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.def("set_log_level", [](const std::string& level) { set_log_level(spdlog::level::from_str(level)); },
        py::arg("level"));

  m.def(
      "load_point_cloud",
      [](const std::filesystem::path& path, const std::string& format) {
        const CloudFormat f = format.empty() ? (path.extension() == ".pts" ? CloudFormat::pts_text
                                                                             : CloudFormat::xyz_binary)
                                             : parse_cloud_format(format);
        return cloud_to_array(load_point_cloud(path, f));
      },
      py::arg("path"), py::arg("format") = "");
  m.def(
      "normalize",
      [](const DoubleArray& points) {
        const auto n = normalize_to_unit_cube(cloud_from_array(points));
        return py::make_tuple(cloud_to_array(n.cloud), n.degenerate);
      },
      py::arg("points"), "Centre on the centroid and scale the largest |coordinate| to 1.");
  m.def(
      "make_shape",
      [](const std::string& shape, std::uint64_t seed, int points, double noise) {
        return cloud_to_array(make_shape(parse_shape(shape), seed, points, noise));
      },
      py::arg("shape"), py::arg("seed"), py::arg("points") = 2048, py::arg("noise") = 0.01);

  m.def(
      "view_grid",
      [](int views) {
        std::vector<std::tuple<double, double, double>> out;
        for (const auto& p : generate_view_grid(views).views) out.emplace_back(p.azimuth_deg, p.elevation_deg, p.radius);
        return out;
      },
      py::arg("views"), "(azimuth_deg, elevation_deg, radius) per view.");

  m.def(
      "render_views",
      [](const DoubleArray& points, int views, int grid_resolution, int image_size, int densify_kernel,
         double smooth_sigma) {
        const auto params = make_params(grid_resolution, image_size, densify_kernel, smooth_sigma);
        const auto cloud = normalize_to_unit_cube(cloud_from_array(points)).cloud;
        std::vector<DepthImage> images;
        {
          py::gil_scoped_release release;
          images = render_all_views(cloud, generate_view_grid(views), params);
        }
        return images_to_array(images);
      },
      py::arg("points"), py::arg("views") = 10, py::arg("grid_resolution") = 128, py::arg("image_size") = 224,
      py::arg("densify_kernel") = 2, py::arg("smooth_sigma") = 1.0,
      "Normalise, then render (V, H, W) depth images: background 1.0, foreground in [0, 0.9].");

  m.def(
      "view_weights",
      [](const std::vector<FloatArray>& references, double gamma) {
        std::vector<std::vector<DepthImage>> refs;
        for (const auto& r : references) refs.push_back(images_from_array(r));
        return compute_view_weights(refs, gamma).weights;
      },
      py::arg("references"), py::arg("gamma") = kDefaultGamma);

  py::class_<EncoderBackend, MutableBackend>(m, "Encoder")
      .def_static(
          "mock", [](std::uint64_t seed, int dim) { return mutable_backend(make_mock_backend(seed, dim)); },
          py::arg("seed") = 0, py::arg("dim") = 128)
      .def_static(
          "load", [](const std::filesystem::path& path) { return mutable_backend(load_model_backend(path)); },
          py::arg("path"))
      .def_property_readonly("id", &EncoderBackend::id)
      .def_property_readonly("dim", &EncoderBackend::dim)
      .def_property_readonly("backbone", &EncoderBackend::backbone_name)
      .def_property_readonly("input_size",
                             [](const EncoderBackend& b) -> std::optional<int> {
                               if (auto s = b.input_spec()) return s->size;
                               return std::nullopt;
                             })
      .def(
          "encode",
          [](const EncoderBackend& b, const FloatArray& images) {
            const auto imgs = images_from_array(images);
            FeatureMatrix fm;
            {
              py::gil_scoped_release release;
              fm = encode_views(imgs, b);
            }
            return features_to_array(fm);
          },
          py::arg("images"), "Encode (V, H, W) depth images into unit-norm (V, C) rows.")
      .def(
          "embed_raw",
          [](const EncoderBackend& b, const FloatArray& chw) {
            if (chw.ndim() != 3 || chw.shape(0) != 3 || chw.shape(1) != chw.shape(2)) {
              throw InvalidArgument("input must have shape (3, S, S)");
            }
            EncoderInput in{static_cast<int>(chw.shape(1)), std::vector<float>(chw.data(), chw.data() + chw.size())};
            const auto out = b.embed(in);
            return py::array_t<float>(static_cast<py::ssize_t>(out.size()), out.data());
          },
          py::arg("chw"), "Run the backbone on one preprocessed (3, S, S) input, unnormalised.");

  m.def(
      "anomaly_score",
      [](const FloatArray& test, const std::vector<FloatArray>& references, std::optional<std::vector<double>> weights,
         const std::string& metric, const std::string& aggregation) {
        const auto t = features_from_array(test);
        ReferenceSet refs;
        for (std::size_t i = 0; i < references.size(); ++i) {
          refs.members.push_back({std::to_string(i), features_from_array(references[i])});
        }
        const ViewWeights w = weights ? ViewWeights{*weights, kDefaultGamma} : uniform_weights(t.views);
        return anomaly_score(t, refs, w, parse_metric(metric), parse_aggregation(aggregation));
      },
      py::arg("test"), py::arg("references"), py::arg("weights") = py::none(), py::arg("metric") = "euclidean",
      py::arg("aggregation") = "sum");

  m.def(
      "auroc",
      [](const std::vector<int>& labels, const std::vector<double>& scores) {
        if (labels.size() != scores.size()) throw InvalidArgument("labels and scores differ in length");
        std::vector<LabeledScore> s;
        for (std::size_t i = 0; i < labels.size(); ++i) s.push_back({labels[i], scores[i]});
        return compute_auroc(s);
      },
      py::arg("labels"), py::arg("scores"), "Labels: 0 normal, 1 anomaly.");

  m.def(
      "write_synthetic_dataset",
      [](const std::filesystem::path& dir, int train, int test, int points, double noise, std::uint64_t seed) {
        write_synthetic_dataset(dir, {train, test, points, noise, seed});
        return dir / "manifest.tsv";
      },
      py::arg("dir"), py::arg("train") = 30, py::arg("test") = 20, py::arg("points") = 2048,
      py::arg("noise") = 0.01, py::arg("seed") = 7);

  m.def(
      "evaluate",
      [](const std::filesystem::path& manifest_path, const MutableBackend& backend, std::vector<int> n_refs, int seeds,
         int views, double gamma, const std::string& metric, const std::string& aggregation,
         std::optional<std::filesystem::path> cache, int workers) {
        const Manifest manifest = load_manifest(manifest_path);
        ProtocolConfig cfg;
        cfg.n_refs = std::move(n_refs);
        cfg.seeds = seeds;
        cfg.views = views;
        cfg.gamma = gamma;
        cfg.metric = parse_metric(metric);
        cfg.aggregation = parse_aggregation(aggregation);
        std::string json;
        {
          py::gil_scoped_release release;
          Workspace ws(manifest, {}, cache ? cache : cache_root_from_env(), workers);
          json = report_summary_json(run_protocol(cfg, ws, backend));
        }
        return json;
      },
      py::arg("manifest"), py::arg("backend"), py::arg("n_refs") = std::vector<int>{1, 3, 5}, py::arg("seeds") = 10,
      py::arg("views") = 10, py::arg("gamma") = kDefaultGamma, py::arg("metric") = "euclidean",
      py::arg("aggregation") = "sum", py::arg("cache") = py::none(), py::arg("workers") = 1,
      "Run the protocol and return the report summary as JSON text.");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::dispatch(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a CLI command; returns (exit_code, stdout, stderr).");
}
