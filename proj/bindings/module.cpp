#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "l3dmc/continual.hpp"
#include "l3dmc/datasets.hpp"
#include "l3dmc/distill.hpp"
#include "l3dmc/experiment.hpp"
#include "l3dmc/kernels.hpp"
#include "l3dmc/manifold.hpp"
#include "l3dmc/tensor.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

l3dmc::Tensor vector_tensor(const Array& a) {
  if (a.ndim() != 1) throw l3dmc::ShapeError("expected a 1-d array");
  std::vector<double> data(a.data(), a.data() + a.size());
  return l3dmc::Tensor::from_data({static_cast<std::size_t>(a.shape(0))},
                                  std::move(data));
}

l3dmc::Tensor matrix_tensor(const Array& a) {
  if (a.ndim() != 2) throw l3dmc::ShapeError("expected a 2-d array");
  std::vector<double> data(a.data(), a.data() + a.size());
  return l3dmc::Tensor::from_data({static_cast<std::size_t>(a.shape(0)),
                                   static_cast<std::size_t>(a.shape(1))},
                                  std::move(data));
}

py::array_t<double> to_numpy(const l3dmc::Tensor& t) {
  const auto& shape = t.shape();
  std::vector<py::ssize_t> dims(shape.begin(), shape.end());
  py::array_t<double> out(dims);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

l3dmc::KernelSpec make_spec(const std::string& family, double lam, double c) {
  l3dmc::KernelSpec spec;
  spec.family = l3dmc::kernel_family_from_string(family);
  spec.lambda = lam;
  spec.curvature_c = c;
  spec.validate();
  return spec;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Mixed-curvature kernel-subspace distillation for class-incremental "
            "learning: Poincare-ball geometry, RBF kernels on fixed-curvature "
            "spaces, the closed-form RKHS subspace distance, and the experiment "
            "harness.";

  py::register_exception<l3dmc::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<l3dmc::NumericError>(m, "NumericError", PyExc_ArithmeticError);

  // ---- manifold ----
  m.def(
      "mobius_add",
      [](const Array& x, const Array& y, double c) {
        l3dmc::BallPoint out = l3dmc::mobius_add({vector_tensor(x), c},
                                                 {vector_tensor(y), c});
        return to_numpy(out.coords);
      },
      py::arg("x"), py::arg("y"), py::arg("c") = 1.0);
  m.def(
      "geodesic_distance",
      [](const Array& x, const Array& y, double c) {
        return l3dmc::geodesic_distance({vector_tensor(x), c}, {vector_tensor(y), c})
            .item();
      },
      py::arg("x"), py::arg("y"), py::arg("c") = 1.0);
  m.def(
      "conformal_factor",
      [](const Array& v, double c) {
        return l3dmc::conformal_factor({vector_tensor(v), c}).item();
      },
      py::arg("v"), py::arg("c") = 1.0);
  m.def(
      "log0",
      [](const Array& z, double c) { return to_numpy(l3dmc::log0(vector_tensor(z), c)); },
      py::arg("z"), py::arg("c") = 1.0);
  m.def(
      "exp0",
      [](const Array& v, double c) {
        return to_numpy(l3dmc::exp0(vector_tensor(v), c).coords);
      },
      py::arg("v"), py::arg("c") = 1.0);
  m.def(
      "log_map",
      [](const Array& anchor, const Array& x, double c) {
        l3dmc::BallPoint a{vector_tensor(anchor), c};
        return to_numpy(l3dmc::log_map(a, {vector_tensor(x), c}).coords);
      },
      py::arg("anchor"), py::arg("x"), py::arg("c") = 1.0);
  m.def(
      "exp_map",
      [](const Array& anchor, const Array& v, double c) {
        l3dmc::BallPoint a{vector_tensor(anchor), c};
        l3dmc::TangentVector tv{vector_tensor(v), a};
        return to_numpy(l3dmc::exp_map(a, tv).coords);
      },
      py::arg("anchor"), py::arg("v"), py::arg("c") = 1.0);
  m.def(
      "project_to_ball",
      [](const Array& x, double c) {
        return to_numpy(l3dmc::project_to_ball(vector_tensor(x), c).coords);
      },
      py::arg("x"), py::arg("c") = 1.0);

  // ---- kernels ----
  m.def(
      "kernel_value",
      [](const std::string& family, const Array& zi, const Array& zj, double lam,
         double c) {
        return l3dmc::kernel_value(make_spec(family, lam, c), vector_tensor(zi),
                                   vector_tensor(zj))
            .item();
      },
      py::arg("family"), py::arg("zi"), py::arg("zj"), py::arg("lam") = 1.0,
      py::arg("c") = 1.0);
  m.def(
      "gram_matrix",
      [](const std::string& family, const Array& z, double lam, double c) {
        return to_numpy(l3dmc::gram_matrix(make_spec(family, lam, c),
                                           matrix_tensor(z)));
      },
      py::arg("family"), py::arg("z"), py::arg("lam") = 1.0, py::arg("c") = 1.0);
  m.def(
      "cross_kernel",
      [](const std::string& family, const Array& z, const Array& big_z, double lam,
         double c) {
        return to_numpy(l3dmc::cross_kernel(make_spec(family, lam, c),
                                            vector_tensor(z), matrix_tensor(big_z)));
      },
      py::arg("family"), py::arg("z"), py::arg("Z"), py::arg("lam") = 1.0,
      py::arg("c") = 1.0);

  // ---- distillation ----
  m.def(
      "subspace_distance",
      [](const Array& z, const Array& z_old, const std::string& family, double lam,
         double c) {
        auto basis = l3dmc::build_subspace_basis(make_spec(family, lam, c),
                                                 matrix_tensor(z_old));
        return l3dmc::subspace_distance(vector_tensor(z), basis).item();
      },
      py::arg("z"), py::arg("z_old"), py::arg("family") = "euclidean-rbf",
      py::arg("lam") = 1.0, py::arg("c") = 1.0);
  m.def(
      "subspace_distance_batch",
      [](const Array& z_new, const Array& z_old, const std::string& family,
         double lam, double c) {
        auto basis = l3dmc::build_subspace_basis(make_spec(family, lam, c),
                                                 matrix_tensor(z_old));
        return to_numpy(l3dmc::subspace_distances(matrix_tensor(z_new), basis));
      },
      py::arg("z_new"), py::arg("z_old"), py::arg("family") = "euclidean-rbf",
      py::arg("lam") = 1.0, py::arg("c") = 1.0);
  m.def(
      "alpha_solve",
      [](const Array& z, const Array& z_old, const std::string& family, double lam,
         double c) {
        auto basis = l3dmc::build_subspace_basis(make_spec(family, lam, c),
                                                 matrix_tensor(z_old));
        return to_numpy(l3dmc::alpha_solve(vector_tensor(z), basis));
      },
      py::arg("z"), py::arg("z_old"), py::arg("family") = "euclidean-rbf",
      py::arg("lam") = 1.0, py::arg("c") = 1.0);
  m.def(
      "spd_solve",
      [](const Array& k, const Array& b) {
        auto [x, report] = l3dmc::spd_solve(matrix_tensor(k), matrix_tensor(b));
        return py::make_tuple(to_numpy(x), report.ridge_added,
                              report.condition_estimate);
      },
      py::arg("K"), py::arg("b"),
      "Solves (K + ridge*I) X = b through the ridge ladder; returns "
      "(X, ridge, condition_estimate).");

  // ---- continual-learning pieces ----
  m.def(
      "herding_select",
      [](const Array& features, std::size_t quota) {
        return l3dmc::herding_select(matrix_tensor(features), quota);
      },
      py::arg("features"), py::arg("quota"));
  m.def(
      "compute_metrics",
      [](const std::vector<std::vector<double>>& rows, std::size_t t) {
        l3dmc::MetricsLedger ledger;
        for (std::size_t i = 0; i < rows.size(); ++i) ledger.record(i, rows[i]);
        auto [acc, forgetting] = l3dmc::compute_metrics(ledger, t);
        return py::make_tuple(acc, forgetting ? py::cast(*forgetting)
                                              : py::object(py::none()));
      },
      py::arg("accuracy_rows"), py::arg("t"));

  // ---- data ----
  m.def(
      "make_blobs",
      [](std::size_t num_classes, std::size_t per_class, std::size_t dim,
         double spread, std::uint64_t seed) {
        l3dmc::LabeledDataset ds =
            l3dmc::make_blobs(num_classes, per_class, dim, spread, seed);
        return py::make_tuple(to_numpy(ds.x), py::cast(ds.labels));
      },
      py::arg("num_classes"), py::arg("per_class"), py::arg("dim"),
      py::arg("spread"), py::arg("seed"));
  m.def(
      "make_tree_data",
      [](std::size_t branching, std::size_t depth, std::size_t per_leaf,
         std::size_t dim, double noise, std::uint64_t seed) {
        l3dmc::LabeledDataset ds =
            l3dmc::make_tree_data(branching, depth, per_leaf, dim, noise, seed);
        return py::make_tuple(to_numpy(ds.x), py::cast(ds.labels));
      },
      py::arg("branching"), py::arg("depth"), py::arg("per_leaf"), py::arg("dim"),
      py::arg("noise"), py::arg("seed"));

  // ---- experiment harness ----
  m.def(
      "run_single_seed",
      [](const std::string& config_json, std::uint64_t seed) {
        l3dmc::ExperimentConfig cfg;
        cfg.apply_json(nlohmann::json::parse(config_json));
        if (auto errors = cfg.validate(); !errors.empty()) {
          throw l3dmc::ConfigError(std::move(errors));
        }
        return l3dmc::run_single_seed(cfg, seed, /*with_timing=*/false).dump(2);
      },
      py::arg("config_json"), py::arg("seed"),
      "Runs one seed of an experiment config (JSON string) and returns the "
      "seed-result document as a JSON string.");
  m.def(
      "run_experiment",
      [](const std::string& config_json) {
        l3dmc::ExperimentConfig cfg;
        cfg.apply_json(nlohmann::json::parse(config_json));
        l3dmc::ExperimentSummary summary = l3dmc::run_experiment(cfg);
        return summary.summary_path;
      },
      py::arg("config_json"),
      "Runs every seed of the config, writes result files, returns the summary "
      "path.");
  m.def("default_config",
        [] { return l3dmc::ExperimentConfig{}.to_json().dump(2); });

  m.attr("__version__") = "0.1.0";
}
