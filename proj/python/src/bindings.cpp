// SPDX-License-Identifier: Apache-2.0
// Python bindings for the torch-free core: losses, CKA, recipes and jobs,
// subsets, schedules and gap tables. Structured values cross as JSON text.
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "kdkit/cka.hpp"
#include "kdkit/data.hpp"
#include "kdkit/errors.hpp"
#include "kdkit/hint_losses.hpp"
#include "kdkit/losses.hpp"
#include "kdkit/recipes.hpp"
#include "kdkit/report.hpp"
#include "kdkit/schedule.hpp"

namespace py = pybind11;
using kd::HardTargets;
using kd::Matrix;

namespace {

PyObject* g_error = nullptr;

using Array4 = py::array_t<double, py::array::c_style | py::array::forcecast>;

kd::FeatureMap to_feature(const Array4& a, const std::string& id) {
  if (a.ndim() != 2 && a.ndim() != 4) throw py::value_error("features must be (N, C) or (N, C, H, W)");
  const auto n = a.shape(0), c = a.shape(1);
  const auto h = a.ndim() == 4 ? a.shape(2) : 1, w = a.ndim() == 4 ? a.shape(3) : 1;
  kd::FeatureMap f(id, n, c, h, w);
  std::copy(a.data(), a.data() + a.size(), f.values.begin());
  return f;
}

Array4 from_feature(const kd::FeatureMap& f, int ndim) {
  std::vector<py::ssize_t> shape{f.n, f.c};
  if (ndim == 4) shape.insert(shape.end(), {f.h, f.w});
  Array4 out(shape);
  std::copy(f.values.begin(), f.values.end(), out.mutable_data());
  return out;
}

HardTargets targets_from(const py::object& t) {
  if (py::isinstance<py::array>(t) && py::cast<py::array>(t).ndim() == 2) {
    return HardTargets(py::cast<Matrix>(t));
  }
  return HardTargets(py::cast<std::vector<std::int64_t>>(t));
}

// Value alone, or (value, gradient) when grad is requested.
py::object with_grad(double value, const Matrix& g, bool grad) {
  if (!grad) return py::float_(value);
  return py::make_tuple(value, g);
}

py::dict breakdown(const kd::LossBreakdown& b) {
  py::dict d;
  d["total"] = b.total;
  d["hard"] = b.hard_component;
  d["soft"] = b.soft_component;
  for (const auto& [k, v] : b.extra) d[k.c_str()] = v;
  return d;
}

kd::LabelLoss label_kind(const std::string& s) {
  if (s == "CE") return kd::LabelLoss::CE;
  if (s == "BCE") return kd::LabelLoss::BCE;
  if (s == "NONE") return kd::LabelLoss::NONE;
  throw py::value_error("label loss must be CE, BCE or NONE");
}

kd::HintMetric metric_kind(const std::string& s) {
  if (s == "L2") return kd::HintMetric::L2;
  if (s == "L1") return kd::HintMetric::L1;
  throw py::value_error("metric must be L1 or L2");
}

py::object json_loads(const std::string& text) { return py::module_::import("json").attr("loads")(text); }
std::string json_dumps(const py::object& o) { return py::cast<std::string>(py::module_::import("json").attr("dumps")(o)); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "kdkit core: distillation losses, CKA, recipes and reporting";
  m.attr("__version__") = "0.1.0";

  g_error = PyErr_NewException("kdkit._core.KdError", PyExc_RuntimeError, nullptr);
  m.attr("KdError") = py::handle(g_error);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const kd::Error& e) {
      py::object inst = py::reinterpret_borrow<py::object>(g_error)(e.what());
      inst.attr("kind") = std::string(kd::to_string(e.kind()));
      inst.attr("exit_code") = kd::exit_code_for(e.kind());
      PyErr_SetObject(g_error, inst.ptr());
    }
  });

  // Logit losses.
  m.def("softmax_temperature", &kd::softmax_temperature, py::arg("logits"), py::arg("tau") = 1.0);
  m.def(
      "ce_loss",
      [](const Matrix& z, const py::object& t, double smoothing, bool grad) {
        Matrix g;
        const double v = kd::ce_loss(z, targets_from(t), smoothing, grad ? &g : nullptr);
        return with_grad(v, g, grad);
      },
      py::arg("logits"), py::arg("targets"), py::arg("smoothing") = 0.0, py::arg("grad") = false);
  m.def(
      "bce_loss",
      [](const Matrix& z, const py::object& t, double smoothing, bool grad) {
        Matrix g;
        const double v = kd::bce_loss(z, targets_from(t), smoothing, grad ? &g : nullptr);
        return with_grad(v, g, grad);
      },
      py::arg("logits"), py::arg("targets"), py::arg("smoothing") = 0.0, py::arg("grad") = false);
  m.def(
      "kl_soft_loss",
      [](const Matrix& zs, const Matrix& zt, double tau, bool grad) {
        Matrix g;
        return with_grad(kd::kl_soft_loss(zs, zt, tau, grad ? &g : nullptr), g, grad);
      },
      py::arg("student"), py::arg("teacher"), py::arg("tau") = 1.0, py::arg("grad") = false);
  m.def(
      "bkl_loss",
      [](const Matrix& zs, const Matrix& zt, double tau, bool grad) {
        Matrix g;
        return with_grad(kd::bkl_loss(zs, zt, tau, grad ? &g : nullptr), g, grad);
      },
      py::arg("student"), py::arg("teacher"), py::arg("tau") = 1.0, py::arg("grad") = false);
  m.def(
      "vanilla_kd_loss",
      [](const Matrix& zs, const Matrix& zt, const py::object& t, double alpha, double tau, const std::string& soft,
         const std::string& label) {
        kd::LogitLossSettings s;
        s.alpha = alpha;
        s.temperature = tau;
        s.soft_loss = soft == "BKL" ? kd::SoftLoss::BKL : kd::SoftLoss::KL;
        s.label_loss = label_kind(label);
        return breakdown(kd::vanilla_kd_loss(zs, zt, targets_from(t), s));
      },
      py::arg("student"), py::arg("teacher"), py::arg("targets"), py::arg("alpha") = 0.5, py::arg("tau") = 1.0,
      py::arg("soft_loss") = "KL", py::arg("label_loss") = "CE");
  m.def(
      "dkd_loss",
      [](const Matrix& zs, const Matrix& zt, const std::vector<std::int64_t>& targets, double a, double b,
         double tau) { return breakdown(kd::dkd_loss(zs, zt, targets, a, b, tau)); },
      py::arg("student"), py::arg("teacher"), py::arg("targets"), py::arg("dkd_alpha") = 1.0,
      py::arg("dkd_beta") = 2.0, py::arg("tau") = 1.0);
  m.def(
      "dist_loss",
      [](const Matrix& zs, const Matrix& zt, const py::object& t, double beta, double gamma, const std::string& label,
         double tau) { return breakdown(kd::dist_loss(zs, zt, targets_from(t), beta, gamma, label_kind(label), 0.0, tau)); },
      py::arg("student"), py::arg("teacher"), py::arg("targets"), py::arg("dist_beta") = 1.0,
      py::arg("dist_gamma") = 1.0, py::arg("label_loss") = "CE", py::arg("tau") = 1.0);
  m.def(
      "inter_class_relation", [](const Matrix& ps, const Matrix& pt) { return kd::inter_class_relation(ps, pt); },
      py::arg("student_probs"), py::arg("teacher_probs"));
  m.def(
      "intra_class_relation", [](const Matrix& ps, const Matrix& pt) { return kd::intra_class_relation(ps, pt); },
      py::arg("student_probs"), py::arg("teacher_probs"));

  // Feature losses. Projectors are identities; the trainer learns its own.
  m.def(
      "hint_loss",
      [](const Array4& fs, const Array4& ft, const std::string& metric, bool grad) -> py::object {
        const auto s = to_feature(fs, "student"), t = to_feature(ft, "teacher");
        kd::FeatureMap g;
        const double v = kd::hint_loss(s, t, kd::Projector::identity(s.c), kd::Projector::identity(t.c),
                                       metric_kind(metric), grad ? &g : nullptr);
        if (!grad) return py::float_(v);
        return py::make_tuple(v, from_feature(g, static_cast<int>(fs.ndim())));
      },
      py::arg("student"), py::arg("teacher"), py::arg("metric") = "L2", py::arg("grad") = false);
  m.def(
      "cc_loss",
      [](const Array4& fs, const Array4& ft) { return kd::cc_loss(to_feature(fs, "student"), to_feature(ft, "teacher")); },
      py::arg("student"), py::arg("teacher"));
  m.def(
      "rkd_loss",
      [](const Array4& fs, const Array4& ft, double dw, double aw) {
        const auto t = kd::rkd_loss(to_feature(fs, "student"), to_feature(ft, "teacher"), dw, aw);
        py::dict d;
        d["distance"] = t.distance;
        d["angle"] = t.angle;
        d["total"] = t.total;
        return d;
      },
      py::arg("student"), py::arg("teacher"), py::arg("distance_weight") = 25.0, py::arg("angle_weight") = 50.0);

  // CKA.
  m.def("cka_linear", &kd::cka_linear, py::arg("x"), py::arg("y"));
  m.def("hsic_unbiased", &kd::hsic_unbiased, py::arg("k"), py::arg("l"));

  // Recipes and jobs.
  m.def("builtin_recipe_names", &kd::builtin_recipe_names);
  m.def(
      "builtin_recipe", [](const std::string& name) { return json_loads(kd::to_json(kd::builtin_recipe(name)).dump()); },
      py::arg("name"));
  m.def(
      "describe_recipe", [](const std::string& name) { return kd::describe_recipe(kd::builtin_recipe(name)); },
      py::arg("name"));
  m.def(
      "parse_job", [](const py::object& config) {
        const std::string text = py::isinstance<py::str>(config) ? py::cast<std::string>(config) : json_dumps(config);
        return json_loads(kd::serialize_job(kd::parse_job(text)));
      },
      py::arg("config"), "Validate a job (JSON text or dict) and return it with every default filled in.");
  m.def(
      "merge_overrides",
      [](const py::object& config, const std::map<std::string, std::string>& overrides) {
        const std::string text = py::isinstance<py::str>(config) ? py::cast<std::string>(config) : json_dumps(config);
        return json_loads(kd::serialize_job(kd::merge_overrides(kd::parse_job(text), overrides)));
      },
      py::arg("config"), py::arg("overrides"));

  // Data, schedule, reporting.
  m.def(
      "stratified_subset",
      [](const std::vector<std::int64_t>& labels, int class_count, double fraction, std::uint64_t seed,
         bool stratified) { return kd::stratified_subset(labels, class_count, kd::SubsetSpec{fraction, stratified, seed}); },
      py::arg("labels"), py::arg("class_count"), py::arg("fraction"), py::arg("seed") = 0,
      py::arg("stratified") = true);
  m.def(
      "lr_at",
      [](double base_lr, std::int64_t total_steps, std::int64_t warmup_steps, std::int64_t step) {
        kd::ScheduleState s;
        s.base_lr = base_lr;
        s.total_steps = total_steps;
        s.warmup_steps = warmup_steps;
        return kd::lr_at(s, step);
      },
      py::arg("base_lr"), py::arg("total_steps"), py::arg("warmup_steps"), py::arg("step"));
  m.def(
      "gap_table_csv",
      [](const std::vector<std::map<std::string, py::object>>& rows) {
        std::vector<kd::MethodResult> results;
        for (const auto& r : rows) {
          results.push_back({py::cast<std::string>(r.at("scale")), py::cast<std::string>(r.at("pair")),
                             py::cast<std::string>(r.at("method")), py::cast<double>(r.at("top1"))});
        }
        return kd::gap_table_csv(kd::gap_table(results));
      },
      py::arg("results"), "Rows are dicts with scale, pair, method and top1.");
  m.def("exit_code_for_kind", [](const std::string& kind) {
    for (int k = 0; k <= static_cast<int>(kd::ErrorKind::Parse); ++k) {
      const auto e = static_cast<kd::ErrorKind>(k);
      if (kd::to_string(e) == kind) return kd::exit_code_for(e);
    }
    throw py::value_error("unknown error kind " + kind);
  });
}
