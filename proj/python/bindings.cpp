#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mmkd/errors.hpp"
#include "mmkd/gradcheck.hpp"
#include "mmkd/heatmap.hpp"
#include "mmkd/synth_data.hpp"
#include "mmkd/train.hpp"

namespace py = pybind11;
using namespace mmkd;

namespace {

using Rows = std::vector<std::vector<double>>;

Tensor matrix_from_rows(const Rows& rows) {
  if (rows.empty() || rows.front().empty()) throw DimensionError("expected a non-empty matrix");
  std::vector<double> flat;
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw DimensionError("ragged matrix rows");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor::from({rows.size(), rows.front().size()}, std::move(flat));
}

Rows rows_from_matrix(const Matrix3& m) {
  Rows out;
  for (const auto& r : m) out.emplace_back(r.begin(), r.end());
  return out;
}

Matrix3 matrix3_from_rows(const Rows& rows) {
  if (rows.size() != 3) throw DimensionError("expected a 3x3 matrix");
  Matrix3 m{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (rows[i].size() != 3) throw DimensionError("expected a 3x3 matrix");
    for (std::size_t j = 0; j < 3; ++j) m[i][j] = rows[i][j];
  }
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multimodal knowledge distillation core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ParameterError>(m, "ParameterError", base);
  py::register_exception<DimensionError>(m, "DimensionError", base);
  py::register_exception<DataError>(m, "DataError", base);
  py::register_exception<ParseError>(m, "ParseError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<IoError>(m, "IoError", base);
  py::register_exception<NumericError>(m, "NumericError", base);
  py::register_exception<TrainingError>(m, "TrainingError", base);

  py::enum_<ModalityMode>(m, "ModalityMode")
      .value("TEXT_ONLY", ModalityMode::TextOnly)
      .value("IMAGE_ONLY", ModalityMode::ImageOnly)
      .value("JOINT", ModalityMode::Joint);
  py::enum_<ActivationSource>(m, "ActivationSource")
      .value("LOGITS", ActivationSource::Logits)
      .value("HIDDEN", ActivationSource::Hidden);
  py::enum_<RelationMode>(m, "RelationMode")
      .value("GRAM", RelationMode::Gram)
      .value("RAW", RelationMode::RawActivations);
  py::enum_<OptimizerKind>(m, "OptimizerKind").value("ADAM", OptimizerKind::Adam).value("SGD", OptimizerKind::SGD);
  py::enum_<ProbeInput>(m, "ProbeInput")
      .value("TEXT", ProbeInput::Text)
      .value("IMAGE", ProbeInput::Image)
      .value("BOTH", ProbeInput::Both);

  py::class_<DistillConfig>(m, "DistillConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &DistillConfig::alpha)
      .def_readwrite("beta", &DistillConfig::beta)
      .def_readwrite("gamma", &DistillConfig::gamma)
      .def_readwrite("temperature", &DistillConfig::temperature)
      .def_readwrite("lambda_kd", &DistillConfig::lambda_kd)
      .def_readwrite("lambda_mr", &DistillConfig::lambda_mr)
      .def_readwrite("relation_mode", &DistillConfig::relation_mode)
      .def_readwrite("relation_source", &DistillConfig::relation_source)
      .def_readwrite("normalize_rows", &DistillConfig::normalize_rows)
      .def_readwrite("optimizer", &DistillConfig::optimizer)
      .def_readwrite("learning_rate", &DistillConfig::learning_rate)
      .def_readwrite("adam_beta1", &DistillConfig::adam_beta1)
      .def_readwrite("adam_beta2", &DistillConfig::adam_beta2)
      .def_readwrite("adam_epsilon", &DistillConfig::adam_epsilon)
      .def_readwrite("epochs", &DistillConfig::epochs)
      .def_readwrite("batch_size", &DistillConfig::batch_size)
      .def_readwrite("seed", &DistillConfig::seed)
      .def_readwrite("hidden_dim", &DistillConfig::hidden_dim)
      .def_readwrite("teacher_depth", &DistillConfig::teacher_depth)
      .def_readwrite("student_depth", &DistillConfig::student_depth)
      .def("validate", &DistillConfig::validate)
      .def("to_json", [](const DistillConfig& c) { return config_to_json(c); })
      .def_static("from_json", [](const std::string& doc) { return config_from_json(doc); })
      .def("__eq__", [](const DistillConfig& a, const DistillConfig& b) { return a == b; });

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("text_dim", &Dataset::text_dim)
      .def_readonly("image_dim", &Dataset::image_dim)
      .def_readonly("num_classes", &Dataset::num_classes)
      .def("__len__", &Dataset::size)
      .def("class_counts", &Dataset::class_counts)
      .def_property_readonly("labels",
                             [](const Dataset& d) {
                               std::vector<int> out;
                               for (const auto& s : d.samples) out.push_back(s.label);
                               return out;
                             })
      .def_property_readonly("text_features",
                             [](const Dataset& d) {
                               Rows out;
                               for (const auto& s : d.samples) out.push_back(s.text_feats);
                               return out;
                             })
      .def_property_readonly("image_features",
                             [](const Dataset& d) {
                               Rows out;
                               for (const auto& s : d.samples) out.push_back(s.image_feats);
                               return out;
                             })
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });

  m.def("generate", &generate, py::arg("n"), py::arg("text_dim"), py::arg("image_dim"), py::arg("num_classes"),
        py::arg("noise_std"), py::arg("seed"));
  m.def(
      "split",
      [](const Dataset& ds, std::array<double, 3> fractions, std::uint64_t seed) {
        auto s = split(ds, fractions, seed);
        return py::make_tuple(std::move(s.train), std::move(s.val), std::move(s.test));
      },
      py::arg("ds"), py::arg("fractions") = kDefaultSplit, py::arg("seed") = 0);
  m.def("to_csv", &to_csv);
  m.def(
      "parse_csv", [](const std::string& text, const std::string& source) { return parse_csv(text, source); },
      py::arg("text"), py::arg("source") = "<csv>");
  m.def(
      "linear_probe_accuracy",
      [](const Dataset& train, const Dataset& eval, ProbeInput input) { return linear_probe_accuracy(train, eval, input); },
      py::arg("train"), py::arg("eval"), py::arg("input"));
  m.def(
      "rule_accuracy",
      [](const Dataset& ds, std::uint64_t seed) {
        return rule_accuracy(make_rule(ds.text_dim, ds.image_dim, ds.num_classes, seed), ds);
      },
      py::arg("ds"), py::arg("seed"), "Accuracy of the generating rule for `seed` on `ds`.");

  py::class_<ModalNet>(m, "ModalNet")
      .def_property_readonly("text_dim", &ModalNet::text_dim)
      .def_property_readonly("image_dim", &ModalNet::image_dim)
      .def_property_readonly("hidden_dim", &ModalNet::hidden_dim)
      .def_property_readonly("num_classes", &ModalNet::num_classes)
      .def_property_readonly("depth", &ModalNet::depth)
      .def("parameter_count", &ModalNet::parameter_count);

  m.def("new_modal_net", &new_modal_net, py::arg("text_dim"), py::arg("image_dim"), py::arg("hidden_dim"),
        py::arg("num_classes"), py::arg("depth"), py::arg("seed"));
  m.def("serialize", &serialize);
  m.def("deserialize", [](const std::string& doc) { return deserialize(doc); });
  m.def(
      "forward",
      [](const ModalNet& net, std::vector<double> text, std::vector<double> image, ModalityMode mode) {
        return forward(net, ModalSample{std::move(text), std::move(image), 0}, mode).logits.to_vector();
      },
      py::arg("net"), py::arg("text"), py::arg("image"), py::arg("mode") = ModalityMode::Joint);
  m.def(
      "activations",
      [](const ModalNet& net, std::vector<double> text, std::vector<double> image, ActivationSource source) {
        const auto a = activations_matrix(net, ModalSample{std::move(text), std::move(image), 0}, source).values;
        Rows out(a.rows());
        for (std::size_t i = 0; i < a.rows(); ++i) {
          for (std::size_t j = 0; j < a.cols(); ++j) out[i].push_back(a.at(i, j));
        }
        return out;
      },
      py::arg("net"), py::arg("text"), py::arg("image"), py::arg("source") = ActivationSource::Logits);

  m.def(
      "kd_loss",
      [](std::vector<double> t, std::vector<double> s, double temperature) {
        return kd_loss(Tensor::vector(std::move(t)), Tensor::vector(std::move(s)), temperature).item();
      },
      py::arg("teacher_logits"), py::arg("student_logits"), py::arg("temperature"));
  m.def(
      "ce_loss", [](std::vector<double> logits, int label) { return ce_loss(Tensor::vector(std::move(logits)), label).item(); },
      py::arg("logits"), py::arg("label"));
  m.def(
      "gram",
      [](const Rows& a, bool normalize_rows) {
        return rows_from_matrix(gram({matrix_from_rows(a), ActivationSource::Logits}, normalize_rows).values);
      },
      py::arg("activations"), py::arg("normalize_rows") = false);
  m.def(
      "relation_loss",
      [](const Rows& teacher, const Rows& student, const DistillConfig& cfg) {
        return relation_loss({matrix_from_rows(teacher), cfg.relation_source},
                             {matrix_from_rows(student), cfg.relation_source}, cfg)
            .item();
      },
      py::arg("teacher"), py::arg("student"), py::arg("cfg"));
  m.def(
      "total_distill_loss",
      [](const ModalNet& teacher, const ModalNet& student, std::vector<double> text, std::vector<double> image, int label,
         const DistillConfig& cfg) {
        const auto l = total_distill_loss(teacher, student, ModalSample{std::move(text), std::move(image), label}, cfg);
        py::dict d;
        d["total"] = l.parts.total;
        d["ce"] = l.parts.ce;
        d["kd"] = l.parts.kd;
        d["mr"] = l.parts.mr;
        return d;
      },
      py::arg("teacher"), py::arg("student"), py::arg("text"), py::arg("image"), py::arg("label"), py::arg("cfg"));

  m.def("evaluate", &evaluate, py::arg("net"), py::arg("ds"), py::arg("mode") = ModalityMode::Joint);
  m.def(
      "train_teacher",
      [](const Dataset& train, const Dataset& val, const DistillConfig& cfg) {
        auto run = [&] {
          py::gil_scoped_release release;
          return train_teacher(train, val, cfg);
        }();
        return py::make_tuple(std::move(run.net), report_to_json(run.report));
      },
      py::arg("train"), py::arg("val"), py::arg("cfg"), "Returns (teacher, report JSON).");
  m.def(
      "distill_student",
      [](const ModalNet& teacher, const Dataset& train, const Dataset& val, const DistillConfig& cfg) {
        auto run = [&] {
          py::gil_scoped_release release;
          return distill_student(teacher, train, val, cfg);
        }();
        return py::make_tuple(std::move(run.net), report_to_json(run.report), trace_to_json(run.trace));
      },
      py::arg("teacher"), py::arg("train"), py::arg("val"), py::arg("cfg"), "Returns (student, report JSON, trace JSON).");
  m.def(
      "compare_kd_vs_mr",
      [](const Dataset& ds, const DistillConfig& cfg, int num_seeds) {
        const auto table = [&] {
          py::gil_scoped_release release;
          return compare_kd_vs_mr(ds, cfg, num_seeds);
        }();
        return py::make_tuple(render_table(table), table_to_json(table));
      },
      py::arg("ds"), py::arg("cfg"), py::arg("num_seeds"), "Returns (rendered table, table JSON).");

  m.def(
      "gradcheck",
      [](std::uint64_t seed, int trials) {
        GradcheckOptions opts;
        opts.seed = seed;
        opts.trials = trials;
        const auto r = run_gradcheck(opts);
        py::dict d;
        d["passed"] = r.passed;
        d["max_rel_error"] = r.max_rel_error;
        d["cases"] = r.cases.size();
        return d;
      },
      py::arg("seed") = 0, py::arg("trials") = 50);
  m.def(
      "heatmap_pgm", [](const Rows& matrix) { return py::bytes(heatmap_pgm(matrix3_from_rows(matrix))); },
      py::arg("matrix"));
}
