#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <numeric>

#include "json.hpp"
#include "madl/error.hpp"
#include "madl/eval.hpp"
#include "madl/experiment.hpp"
#include "madl/models.hpp"
#include "madl/simulate.hpp"
#include "madl/training.hpp"
#include "madl/weighting.hpp"

namespace py = pybind11;
using namespace madl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy_n(a.data(), m.data.size(), m.data.begin());
  return m;
}

Array from_matrix(const Matrix& m) {
  Array a({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), a.mutable_data());
  return a;
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

// 1-based classes with -1 for missing -> internal 0-based.
std::vector<int> classes_in(const IntArray& a) {
  std::vector<int> v(a.data(), a.data() + a.size());
  for (int& x : v) x = x == -1 ? kMissing : x - 1;
  return v;
}

IntArray classes_out(const std::vector<int>& v, std::size_t rows, std::size_t cols) {
  IntArray a({rows, cols});
  for (std::size_t i = 0; i < v.size(); ++i) a.mutable_data()[i] = v[i] == kMissing ? -1 : v[i] + 1;
  return a;
}

ConfusionMatrix to_confusion(const Array& a) {
  Matrix m = to_matrix(a);
  if (m.rows != m.cols) throw ShapeError("confusion matrix must be square");
  return {m.rows, m.data};
}

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_madl, m) {
  m.doc() = "Multi-annotator deep learning core";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  m.def("cosine_lr", &diffnet::cosine_lr, py::arg("step"), py::arg("total"), py::arg("base"));

  m.def(
      "annotation_probability",
      [](const Array& probs, const Array& confusion, int label) {
        return annotation_probability(to_vector(probs), to_confusion(confusion),
                                      static_cast<std::size_t>(label - 1));
      },
      py::arg("probs"), py::arg("confusion"), py::arg("label"));

  m.def(
      "weighted_loss",
      [](const Array& probs, const std::vector<Array>& confusions, const std::vector<int>& labels,
         const Array& weights, std::optional<double> gamma, double alpha, double beta) {
        Matrix p = to_matrix(probs);
        const std::size_t c = p.cols;
        if (confusions.size() != labels.size() || p.rows != labels.size()) {
          throw ShapeError("weighted_loss: one probability row, confusion matrix and label per annotation");
        }
        std::vector<double> flat;
        std::vector<std::size_t> z;
        for (std::size_t i = 0; i < labels.size(); ++i) {
          auto conf = to_vector(confusions[i]);
          flat.insert(flat.end(), conf.begin(), conf.end());
          z.push_back(static_cast<std::size_t>(labels[i] - 1));
        }
        Tensor logp = annotation_log_probs(Tensor::constant({p.rows, c}, p.data),
                                           Tensor::constant({labels.size(), c * c}, flat), z, c);
        Tensor w = Tensor::constant({labels.size()}, to_vector(weights));
        std::optional<Tensor> lg;
        if (gamma) lg = Tensor::constant({1}, {std::log(*gamma)});
        return weighted_loss(logp, w, lg, KernelScale{alpha, beta}).item();
      },
      py::arg("probs"), py::arg("confusions"), py::arg("labels"), py::arg("weights"),
      py::arg("gamma") = py::none(), py::arg("alpha") = 1.25, py::arg("beta") = 0.25);

  m.def(
      "annotator_weights",
      [](const Array& embeddings, double gamma) {
        Matrix e = to_matrix(embeddings);
        return annotator_weights(e.data, e.cols, gamma);
      },
      py::arg("embeddings"), py::arg("gamma"));

  m.def("gamma_log_prior", py::overload_cast<double, double, double>(&gamma_log_prior), py::arg("gamma"),
        py::arg("alpha"), py::arg("beta"));

  m.def(
      "initial_confusion",
      [](const std::string& variant, double eta, std::size_t num_classes) {
        auto dep = parse_class_dependency(variant);
        auto bias = init_output_bias(dep, eta, num_classes);
        ConfusionMatrix cm = expand_confusion(dep, bias, num_classes);
        Matrix out(num_classes, num_classes);
        out.data = cm.entries;
        return from_matrix(out);
      },
      py::arg("variant"), py::arg("eta"), py::arg("num_classes"));

  m.def(
      "bayes_gt", [](const Array& posterior) { return static_cast<int>(bayes_gt(to_vector(posterior))) + 1; },
      py::arg("posterior"));
  m.def(
      "bayes_ap",
      [](const Array& posterior, const Array& confusion) {
        return bayes_ap(to_vector(posterior), to_confusion(confusion));
      },
      py::arg("posterior"), py::arg("confusion"));

  m.def(
      "gt_metrics",
      [](const IntArray& y, const Array& probs) {
        auto labels = classes_in(y);
        Matrix p = to_matrix(probs);
        std::vector<std::size_t> pred(p.rows);
        for (std::size_t i = 0; i < p.rows; ++i) pred[i] = gt_predict(p.row(i));
        return py::dict(py::arg("gt_acc") = gt_acc(labels, pred), py::arg("gt_nll") = gt_nll(labels, p),
                        py::arg("gt_bs") = gt_bs(labels, p));
      },
      py::arg("y"), py::arg("probs"));

  m.def(
      "ap_metrics",
      [](const IntArray& y, const IntArray& z, const Array& correctness) {
        auto labels = classes_in(y);
        auto ann = classes_in(z);
        Matrix c = to_matrix(correctness);
        ApScores s = ap_metrics(labels, ann, c);
        return py::dict(py::arg("ap_acc") = s.acc, py::arg("ap_nll") = s.nll, py::arg("ap_bs") = s.bs,
                        py::arg("ap_bal_acc") = bal_acc(labels, ann, c));
      },
      py::arg("y"), py::arg("z"), py::arg("correctness"));

  m.def(
      "majority_vote",
      [](const IntArray& z, std::size_t num_classes, std::uint64_t seed) {
        if (z.ndim() != 2) throw ShapeError("expected an N x M annotation matrix");
        const auto n = static_cast<std::size_t>(z.shape(0));
        const auto cols = static_cast<std::size_t>(z.shape(1));
        std::vector<std::size_t> columns(cols);
        std::iota(columns.begin(), columns.end(), std::size_t{0});
        auto mv = majority_vote(classes_in(z), cols, columns, num_classes, seed);
        return py::make_tuple(classes_out(mv.labels, n, 1).attr("ravel")(), std::vector<bool>(mv.tie),
                              mv.excluded);
      },
      py::arg("z"), py::arg("num_classes"), py::arg("seed") = 0);

  m.def(
      "simulate",
      [](const std::string& source, const std::string& set, std::uint64_t seed, std::optional<double> ratio,
         const std::string& features) {
        ExperimentConfig c;
        c.source = source;
        c.annotator_set = set;
        c.annotation_ratio = ratio;
        c.features = parse_feature_mode(features);
        PreparedData p = prepare_data(c, seed);
        const auto n = p.data.size();
        const auto cols = p.data.num_annotators;
        py::list types;
        for (const auto& a : p.set->annotators) types.append(to_string(a.type));
        return py::dict(py::arg("x") = from_matrix(p.data.x),
                        py::arg("y") = classes_out(p.data.y, n, 1).attr("ravel")(),
                        py::arg("z") = classes_out(p.data.z, n, cols),
                        py::arg("z_full") = classes_out(p.data.z_full, n, cols),
                        py::arg("annotators") = from_matrix(p.features), py::arg("types") = types,
                        py::arg("training") = std::vector<bool>(p.set->training),
                        py::arg("num_classes") = p.data.num_classes);
      },
      py::arg("source") = "toy", py::arg("set") = "independent", py::arg("seed") = 0,
      py::arg("ratio") = py::none(), py::arg("features") = "onehot");

  m.def(
      "run_experiment",
      [](const std::map<std::string, std::string>& config) {
        ExperimentConfig c = ExperimentConfig::from_kv(config);
        RunReport r;
        {
          py::gil_scoped_release release;
          r = run_experiment(c);
        }
        return json_to_py(r.to_json());
      },
      py::arg("config") = std::map<std::string, std::string>{});
}
