#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "structssl/data.hpp"
#include "structssl/estimators.hpp"
#include "structssl/evaluation.hpp"
#include "structssl/exact_info.hpp"
#include "structssl/models.hpp"
#include "structssl/training.hpp"

namespace py = pybind11;
using namespace structssl;

namespace {

py::array_t<double> to_array(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
  py::array_t<double> a(shape);
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

exact::DiscreteJoint joint_from(py::array_t<double, py::array::c_style | py::array::forcecast> p) {
  if (p.ndim() != 3) throw std::invalid_argument("joint table must be 3-d (x, z, a)");
  const auto* d = p.data();
  return exact::DiscreteJoint(p.shape(0), p.shape(1), p.shape(2), std::vector<double>(d, d + p.size()));
}

exact::Pair pair_from(const std::string& s) {
  if (s == "XZ") return exact::Pair::XZ;
  if (s == "XA") return exact::Pair::XA;
  if (s == "ZA") return exact::Pair::ZA;
  throw std::invalid_argument("pair must be XZ, XA or ZA");
}

data::Dataset dataset_from(py::array_t<double, py::array::c_style | py::array::forcecast> images,
                           const std::vector<int>& labels, std::size_t num_classes) {
  if (images.ndim() != 4) throw std::invalid_argument("images must be [N, H, W, C]");
  data::Dataset ds;
  ds.height = images.shape(1);
  ds.width = images.shape(2);
  ds.channels = images.shape(3);
  ds.images.assign(images.data(), images.data() + images.size());
  ds.labels = labels;
  ds.num_classes = num_classes;
  if (ds.labels.size() != static_cast<std::size_t>(images.shape(0))) throw std::invalid_argument("one label per image");
  return ds;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Structured self-supervised learning toolkit";

  m.def("total_correlation", [](py::array_t<double> p) { return exact::total_correlation(joint_from(p)); });
  m.def("pairwise_mi", [](py::array_t<double> p, const std::string& pair) {
    return exact::pairwise_mi(joint_from(p), pair_from(pair));
  }, py::arg("joint"), py::arg("pair"));
  m.def("nwj_exact", [](py::array_t<double> p, const std::string& pair, const std::vector<double>& critic) {
    return exact::nwj_exact(joint_from(p), pair_from(pair), critic);
  }, py::arg("joint"), py::arg("pair"), py::arg("critic"));
  m.def("nwj_optimal_critic", [](py::array_t<double> p, const std::string& pair) {
    return exact::nwj_optimal_critic(joint_from(p), pair_from(pair));
  }, py::arg("joint"), py::arg("pair"));
  m.def("gaussian_mi", [](double rho, std::size_t dim) { return exact::gaussian_mi({dim, rho}); }, py::arg("rho"),
        py::arg("dim") = 1);
  m.def("gaussian_nwj_estimate", [](double rho, std::size_t n, std::uint64_t seed, std::size_t bins) {
    estimators::GaussianBenchConfig c;
    c.bins = bins;
    return estimators::gaussian_nwj_estimate(rho, n, seed, c);
  }, py::arg("rho"), py::arg("n"), py::arg("seed") = 0, py::arg("bins") = 20);

  m.def("synth_shapes", [](std::size_t n, std::uint64_t seed, std::size_t image_size) {
    data::ShapesSpec spec;
    spec.seed = seed;
    spec.image_size = image_size;
    const auto ds = data::synth_shapes(spec, n);
    const auto s = static_cast<py::ssize_t>(image_size);
    py::list boxes;
    for (const auto& per : ds.boxes) {
      py::list row;
      for (const auto& b : per) row.append(py::make_tuple(b.x0, b.y0, b.x1, b.y1));
      boxes.append(row);
    }
    return py::make_tuple(to_array(ds.images, {static_cast<py::ssize_t>(n), s, s, 3}), ds.labels, boxes);
  }, py::arg("n"), py::arg("seed") = 0, py::arg("image_size") = 32,
        "Returns (images [N,H,W,3], labels, boxes) for the synthetic two-shape corpus.");

  py::class_<models::Model>(m, "Model")
      .def_static("init", [](std::size_t S, std::size_t D, std::size_t K, std::vector<std::size_t> widths,
                             std::size_t size, std::uint64_t seed) {
        models::ModelConfig c;
        c.S = S;
        c.D = D;
        c.K = K;
        c.conv_widths = std::move(widths);
        c.height = c.width = size;
        return models::Model::init(c, seed);
      }, py::arg("S") = 8, py::arg("D") = 8, py::arg("K") = 2,
         py::arg("conv_widths") = std::vector<std::size_t>{32, 64, 128, 256}, py::arg("image_size") = 32,
         py::arg("seed") = 0)
      .def_static("load", &models::Model::load)
      .def("save", &models::Model::save)
      .def_property_readonly("S", [](const models::Model& m) { return m.config.S; })
      .def_property_readonly("D", [](const models::Model& m) { return m.config.D; })
      .def("parameter_names", [](const models::Model& m) {
        std::vector<std::string> names;
        for (const auto& [n, t] : m.named_parameters()) names.push_back(n);
        return names;
      })
      .def("encode", [](const models::Model& m, py::array_t<double, py::array::c_style | py::array::forcecast> images) {
        if (images.ndim() != 4) throw std::invalid_argument("images must be [N, H, W, C]");
        const std::size_t n = images.shape(0);
        const data::Dataset ds = dataset_from(images, std::vector<int>(n, 0), 1);
        const auto f = evaluation::extract_features(m, ds);
        return to_array(f.values, {static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(m.config.S),
                                   static_cast<py::ssize_t>(m.config.D)});
      }, "Latent tensors [N, S, D] for images [N, H, W, C] in [0, 1].");

  m.def("train", [](const std::string& config_text, py::array_t<double> images, const std::vector<int>& labels,
                    std::size_t num_classes) {
    const auto cfg = training::parse_config_text(config_text, "<python>");
    const auto result = training::train(cfg, dataset_from(images, labels, num_classes));
    std::vector<double> bounds;
    for (const auto& r : result.metrics) bounds.push_back(r.bound);
    return py::make_tuple(result.model, bounds);
  }, py::arg("config"), py::arg("images"), py::arg("labels"), py::arg("num_classes"),
        "Trains from key=value config text; returns (model, per-iteration bound).");

  m.def("linear_probe", [](py::array_t<double, py::array::c_style | py::array::forcecast> train_x,
                           const std::vector<int>& train_y,
                           py::array_t<double, py::array::c_style | py::array::forcecast> test_x,
                           const std::vector<int>& test_y, std::size_t num_classes, std::size_t epochs,
                           std::uint64_t seed) {
    auto fm = [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
      if (a.ndim() != 2) throw std::invalid_argument("features must be 2-d");
      return evaluation::FeatureMatrix{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                                       std::vector<double>(a.data(), a.data() + a.size())};
    };
    evaluation::ProbeConfig pc;
    pc.epochs = epochs;
    pc.seed = seed;
    return evaluation::linear_probe(fm(train_x), train_y, fm(test_x), test_y, num_classes, pc).accuracy;
  }, py::arg("train_features"), py::arg("train_labels"), py::arg("test_features"), py::arg("test_labels"),
        py::arg("num_classes"), py::arg("epochs") = 100, py::arg("seed") = 0);
}
