#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "textcam/cam.hpp"
#include "textcam/channel_semantics.hpp"
#include "textcam/concept_eval.hpp"
#include "textcam/error.hpp"
#include "textcam/grouping.hpp"
#include "textcam/png_writer.hpp"
#include "textcam/sparse_select.hpp"
#include "textcam/synth_clevr.hpp"
#include "textcam/tensor_io.hpp"

namespace py = pybind11;
using namespace textcam;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// [d, H, W] array to a stack of flattened maps.
cam::ActivationStack to_stack(const DoubleArray& maps) {
  if (maps.ndim() != 3) throw Error(ErrorCode::kShapeMismatch, "expected a [d, H, W] array");
  const Index d = maps.shape(0), h = maps.shape(1), w = maps.shape(2);
  RowMatrix m = Eigen::Map<const RowMatrix>(maps.data(), d, h * w);
  return cam::ActivationStack(std::move(m), h, w);
}

cam::ChannelWeights to_weights(const Vector& w) {
  cam::ChannelWeights out;
  out.w = w;
  return out;
}

py::array image_to_array(const cam::Image& image) {
  std::vector<py::ssize_t> shape{image.height, image.width};
  if (image.channels > 1) shape.push_back(image.channels);
  py::array_t<std::uint8_t> out(shape);
  std::copy(image.pixels.begin(), image.pixels.end(), out.mutable_data());
  return out;
}

semantics::ChannelSemanticsTable to_table(const RowMatrix& directions, std::vector<bool> degenerate) {
  semantics::ChannelSemanticsTable table;
  table.directions = directions;
  table.degenerate = std::move(degenerate);
  if (static_cast<Index>(table.degenerate.size()) != directions.rows()) {
    throw Error(ErrorCode::kLengthMismatch, "one degenerate flag per direction row is required");
  }
  return table;
}

py::tuple read_bundle(const std::filesystem::path& dir) {
  const io::TensorBundle bundle = io::read_bundle(dir);
  py::dict arrays, roles;
  for (const auto& [name, t] : bundle.tensors) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> a(shape);
    std::copy(t.data.begin(), t.data.end(), a.mutable_data());
    arrays[py::str(name)] = a;
    roles[py::str(name)] = std::string(io::role_name(t.role));
  }
  return py::make_tuple(arrays, roles, bundle.metadata);
}

void write_bundle(const std::filesystem::path& dir, const std::map<std::string, FloatArray>& arrays,
                  const std::map<std::string, std::string>& roles,
                  const std::map<std::string, std::string>& metadata) {
  io::TensorBundle bundle;
  bundle.metadata = metadata;
  for (const auto& [name, a] : arrays) {
    auto it = roles.find(name);
    if (it == roles.end()) throw Error(ErrorCode::kInvalidArgument, "no role given for tensor " + name);
    const auto role = io::parse_role(it->second);
    if (!role) throw Error(ErrorCode::kInvalidArgument, "unknown role " + it->second);
    std::vector<std::int64_t> shape(a.shape(), a.shape() + a.ndim());
    bundle.tensors[name] = io::Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()), *role);
  }
  io::write_bundle(bundle, dir);
}

py::dict solution_dict(const sparse::Solution& s) {
  py::dict d;
  d["omega"] = s.omega;
  d["objective"] = s.objective;
  d["iterations"] = s.iterations;
  d["converged"] = s.converged;
  d["polished"] = s.polished;
  d["alpha"] = s.alpha;
  d["rho"] = s.rho;
  d["min_eigen_estimate"] = s.min_eigen_estimate;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Text-grounded class activation maps";

  static py::exception<Error> error_type(m, "TextcamError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::handle(error_type.ptr())(e.what());
      exc.attr("code") = std::string(error_code_name(e.code()));
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  m.def("read_bundle", &read_bundle, py::arg("path"),
        "Returns (arrays, roles, metadata) for a tensor bundle directory.");
  m.def("write_bundle", &write_bundle, py::arg("path"), py::arg("arrays"), py::arg("roles"),
        py::arg("metadata") = std::map<std::string, std::string>{});

  m.def("gap", [](const DoubleArray& maps) { return cam::gap(to_stack(maps)); }, py::arg("maps"));
  m.def("weights_from_head",
        [](const RowMatrix& head, int cls) { return cam::weights_from_head(head, cls).w; },
        py::arg("head"), py::arg("class_index"));
  m.def("weights_from_gradients",
        [](const DoubleArray& grads, const std::string& mode) {
          if (mode != "gradcam" && mode != "layercam") {
            throw Error(ErrorCode::kInvalidArgument, "mode must be gradcam or layercam");
          }
          return cam::weights_from_gradients(to_stack(grads), mode == "gradcam" ? cam::GradientMode::kGradCam
                                                                                : cam::GradientMode::kLayerCam)
              .w;
        },
        py::arg("gradients"), py::arg("mode") = "gradcam");
  m.def("saliency",
        [](const DoubleArray& maps, const Vector& w) {
          const auto stack = to_stack(maps);
          return cam::saliency(stack, to_weights(w)).values;
        },
        py::arg("maps"), py::arg("weights"));
  m.def("render",
        [](const RowMatrix& map, int height, int width, const std::string& colormap) {
          if (colormap != "gray" && colormap != "jet") {
            throw Error(ErrorCode::kInvalidArgument, "colormap must be gray or jet");
          }
          cam::SaliencyMap s;
          s.values = map;
          return image_to_array(
              cam::render(s, height, width, colormap == "jet" ? cam::Colormap::kJet : cam::Colormap::kGray));
        },
        py::arg("saliency"), py::arg("height"), py::arg("width"), py::arg("colormap") = "gray");
  m.def("encode_png",
        [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& pixels) {
          if (pixels.ndim() != 2 && !(pixels.ndim() == 3 && pixels.shape(2) == 3)) {
            throw Error(ErrorCode::kShapeMismatch, "expected [H, W] or [H, W, 3] pixels");
          }
          cam::Image image;
          image.height = static_cast<int>(pixels.shape(0));
          image.width = static_cast<int>(pixels.shape(1));
          image.channels = pixels.ndim() == 3 ? 3 : 1;
          image.pixels.assign(pixels.data(), pixels.data() + pixels.size());
          return py::bytes(encode_png(image));
        },
        py::arg("pixels"));

  m.def("select_extremes",
        [](const Vector& scores, int m_count) {
          const auto e = semantics::select_extremes(scores, m_count);
          return py::make_tuple(e.positive, e.negative);
        },
        py::arg("scores"), py::arg("m"));
  m.def("lda_direction", &semantics::lda_direction, py::arg("pos"), py::arg("neg"),
        py::arg("shrinkage") = 1e-3, "Unit discriminant direction, or None when the class means coincide.");
  m.def("build_table",
        [](const RowMatrix& embeddings, const RowMatrix& scores, int m_extremes, double shrinkage) {
          const auto table = semantics::build_table({embeddings, scores}, {m_extremes, shrinkage});
          return py::make_tuple(table.directions, table.degenerate);
        },
        py::arg("image_embeddings"), py::arg("channel_scores"), py::arg("m_extremes") = 100,
        py::arg("shrinkage") = 1e-3, "Returns (directions [d, D], degenerate flags).");
  m.def("semantic_representation",
        [](const RowMatrix& directions, std::vector<bool> degenerate, const Vector& activation,
           const Vector& w) {
          return semantics::semantic_representation(to_table(directions, std::move(degenerate)), activation,
                                                    to_weights(w))
              .t;
        },
        py::arg("directions"), py::arg("degenerate"), py::arg("activation"), py::arg("weights"));
  m.def("weighted_semantics",
        [](const RowMatrix& directions, std::vector<bool> degenerate, const Vector& activation,
           const Vector& w) {
          return semantics::weighted_semantics(to_table(directions, std::move(degenerate)), activation,
                                               to_weights(w));
        },
        py::arg("directions"), py::arg("degenerate"), py::arg("activation"), py::arg("weights"));

  m.def("gram_offdiag", &sparse::gram_offdiag, py::arg("embeddings"));
  m.def("admm_solve",
        [](const Vector& target, const RowMatrix& embeddings, std::optional<double> alpha, double beta,
           double rho, double tol, int max_iter, bool polish) {
          sparse::Config cfg;
          cfg.alpha = alpha;
          cfg.beta = beta;
          cfg.rho = rho;
          cfg.tol = tol;
          cfg.max_iter = max_iter;
          cfg.polish = polish;
          return solution_dict(sparse::admm_solve(target, embeddings, cfg));
        },
        py::arg("target"), py::arg("embeddings"), py::arg("alpha") = py::none(), py::arg("beta") = 0.1,
        py::arg("rho") = 1.0, py::arg("tol") = 1e-6, py::arg("max_iter") = 10000, py::arg("polish") = true,
        "Nonnegative sparse code of `target` over the columns of `embeddings` [D, N].");
  m.def("sparse_objective", &sparse::objective, py::arg("target"), py::arg("embeddings"),
        py::arg("omega"), py::arg("alpha"), py::arg("beta"));
  m.def("top_k_indices", &sparse::top_k_indices, py::arg("omega"), py::arg("k"));

  m.def("greedy_relocate",
        [](const RowMatrix& weighted, const RowMatrix& centers, int max_sweeps) {
          grouping::Problem p{weighted, centers};
          const auto a = grouping::greedy_relocate(p, max_sweeps);
          py::dict d;
          d["group"] = a.group;
          d["objective"] = a.objective;
          d["sweeps"] = a.sweeps;
          d["moves"] = a.moves;
          d["converged"] = a.converged;
          return d;
        },
        py::arg("weighted_semantics"), py::arg("centers"), py::arg("max_sweeps") = grouping::kDefaultMaxSweeps);
  m.def("partition_objective",
        [](const std::vector<int>& group, const RowMatrix& weighted, const RowMatrix& centers) {
          return grouping::objective(group, {weighted, centers});
        },
        py::arg("group"), py::arg("weighted_semantics"), py::arg("centers"));
  m.def("group_saliency",
        [](const DoubleArray& maps, const Vector& w, const std::vector<int>& group, int k) {
          const auto stack = to_stack(maps);
          return grouping::group_saliency(stack, to_weights(w), group, k).values;
        },
        py::arg("maps"), py::arg("weights"), py::arg("group"), py::arg("k"));

  m.def("concept_scores",
        [](const Vector& t, const RowMatrix& concepts) {
          std::vector<std::string> names;
          for (Index i = 0; i < concepts.rows(); ++i) names.push_back(std::to_string(i));
          return eval::concept_scores(t, eval::ConceptBank(std::move(names), concepts));
        },
        py::arg("t"), py::arg("concept_embeddings"));
  m.def("color_dominant_mask", &eval::color_dominant_mask, py::arg("probe"), py::arg("k"));
  m.def("ablate",
        [](const Vector& z, const std::vector<Index>& mask) { return eval::ablate(z, mask); },
        py::arg("z"), py::arg("mask"));

  m.def("synth_clevr_features",
        [](std::uint64_t seed, int n_per_class, double bias) {
          synth::Config cfg;
          cfg.seed = seed;
          cfg.n_per_class = n_per_class;
          cfg.bias = bias;
          const auto data = synth::synth_clevr_features(cfg);
          py::dict d;
          d["features"] = data.features;
          d["shapes"] = data.shapes;
          d["colors"] = data.colors;
          d["image_embeddings"] = data.image_embeddings;
          return d;
        },
        py::arg("seed") = 0, py::arg("n_per_class") = 300, py::arg("bias") = 0.9);
  m.def("run_clevr_protocol",
        [](std::uint64_t seed, int n_per_class, double bias) {
          synth::ProtocolConfig cfg;
          cfg.data.seed = seed;
          cfg.data.n_per_class = n_per_class;
          cfg.data.bias = bias;
          const auto r = synth::run_clevr_protocol(cfg);
          py::dict d;
          d["shape_acc_txt"] = r.shape_acc_txt;
          d["color_acc_txt"] = r.color_acc_txt;
          d["shape_accuracy_before"] = r.shape_accuracy_before;
          d["shape_accuracy_after"] = r.shape_accuracy_after;
          d["mask"] = r.mask;
          return d;
        },
        py::arg("seed") = 0, py::arg("n_per_class") = 300, py::arg("bias") = 0.9);
}
