#include "frailty/cli.hpp"
#include "frailty/cox_em.hpp"
#include "frailty/error.hpp"
#include "frailty/estimator.hpp"
#include "frailty/io.hpp"
#include "frailty/simulation.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <sstream>

namespace py = pybind11;
using namespace frailty;

namespace {

RunConfig config_from(const std::string& json) {
  return apply_config(json.empty() ? nlohmann::json::object() : nlohmann::json::parse(json), RunConfig{});
}

ClusteredDataset from_arrays(const std::vector<std::string>& family_id, const std::vector<double>& time,
                             const std::vector<int>& status, const Eigen::MatrixXd& z) {
  const std::size_t n = family_id.size();
  if (time.size() != n || status.size() != n) {
    throw FrailtyError(ErrorCode::invalid_input, "family_id, time and status must have the same length");
  }
  if (z.size() > 0 && static_cast<std::size_t>(z.rows()) != n) {
    throw FrailtyError(ErrorCode::invalid_input, "covariates must have one row per subject");
  }
  std::vector<Family> fams;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) {
    Subject s{time[i], status[i], {}};
    for (Eigen::Index r = 0; r < z.cols(); ++r) s.covariates.push_back(z(static_cast<Eigen::Index>(i), r));
    auto [it, fresh] = index.try_emplace(family_id[i], fams.size());
    if (fresh) fams.push_back(Family{family_id[i], {}});
    fams[it->second].subjects.push_back(std::move(s));
  }
  return ClusteredDataset(std::move(fams));
}

std::string to_csv_string(const ClusteredDataset& ds) {
  std::ostringstream out;
  write_csv(ds, out);
  return out.str();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Shared frailty model estimators (compiled core)";

  static py::exception<FrailtyError> error(m, "FrailtyError", PyExc_ValueError);
  // Messages carry the machine-readable code as a prefix, e.g. "no_events: ...".
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const FrailtyError& e) {
      const std::string msg = std::string(to_string(e.code())) + ": " + e.what();
      py::set_error(error, msg.c_str());
    }
  });

  py::class_<ClusteredDataset>(m, "Dataset")
      .def(py::init(&from_arrays), py::arg("family_id"), py::arg("time"), py::arg("status"),
           py::arg("covariates") = Eigen::MatrixXd())
      .def_static("read_csv", py::overload_cast<const std::string&>(&parse_csv), py::arg("path"))
      .def_static(
          "from_csv_string",
          [](const std::string& text) {
            std::istringstream in(text);
            return parse_csv(in, "<string>");
          },
          py::arg("text"))
      .def("to_csv_string", &to_csv_string)
      .def_property_readonly("num_families", &ClusteredDataset::num_families)
      .def_property_readonly("num_subjects", &ClusteredDataset::num_subjects)
      .def_property_readonly("dim", &ClusteredDataset::dim)
      .def_property_readonly("tau", &ClusteredDataset::tau)
      .def_property_readonly("total_events", &ClusteredDataset::total_events)
      .def_property_readonly("event_times",
                             [](const ClusteredDataset& ds) {
                               return std::vector<double>(ds.event_times().begin(), ds.event_times().end());
                             })
      .def("__repr__", [](const ClusteredDataset& ds) {
        return "<Dataset families=" + std::to_string(ds.num_families()) +
               " subjects=" + std::to_string(ds.num_subjects()) + " p=" + std::to_string(ds.dim()) + ">";
      });

  py::class_<FrailtyFamily>(m, "Frailty")
      .def(py::init([](const std::string& name, double theta, int nodes) {
             QuadratureConfig q;
             q.nodes = nodes;
             return FrailtyFamily::from_name(name, theta, q);
           }),
           py::arg("name"), py::arg("theta"), py::arg("nodes") = QuadratureConfig{}.nodes)
      .def_property_readonly("name", &FrailtyFamily::name)
      .def_property_readonly("theta", &FrailtyFamily::theta)
      .def("phi", &FrailtyFamily::phi, py::arg("k"), py::arg("n_events"), py::arg("h"))
      .def("phi_theta", &FrailtyFamily::phi_theta, py::arg("k"), py::arg("n_events"), py::arg("h"))
      .def("phi_theta2", &FrailtyFamily::phi_theta2, py::arg("n_events"), py::arg("h"))
      .def("psi", &FrailtyFamily::psi, py::arg("n_events"), py::arg("h"))
      .def("eta1", &FrailtyFamily::eta1, py::arg("n_events"), py::arg("h"));

  m.def(
      "fit_json",
      [](const ClusteredDataset& ds, const std::string& config) {
        const RunConfig c = config_from(config);
        FitResult res;
        {
          py::gil_scoped_release release;
          res = fit(ds, make_family(c), make_fit_config(c));
        }
        return dump(to_json(res, ds, c.frailty));
      },
      py::arg("dataset"), py::arg("config") = "");

  m.def(
      "em_json",
      [](const ClusteredDataset& ds) {
        py::gil_scoped_release release;
        return dump(to_json(em_fit(ds)));
      },
      py::arg("dataset"));

  m.def(
      "bootstrap_json",
      [](const ClusteredDataset& ds, const std::string& config) {
        const RunConfig c = config_from(config);
        if (!c.seed) throw FrailtyError(ErrorCode::invalid_input, "bootstrap needs a seed");
        const StudyEstimator est = c.estimator == "em" ? StudyEstimator::em : StudyEstimator::pseudo_full;
        BootstrapResult boot;
        {
          py::gil_scoped_release release;
          boot = cluster_bootstrap(ds, make_family(c), c.B, *c.seed, est, make_fit_config(c), EmConfig{}, c.threads);
        }
        return dump(to_json(boot, c.estimator, c.B, *c.seed));
      },
      py::arg("dataset"), py::arg("config"));

  m.def(
      "generate",
      [](const std::string& config, std::uint64_t replicate) { return generate(make_design(config_from(config)), replicate); },
      py::arg("config"), py::arg("replicate") = 0);

  m.def(
      "run",
      [](const std::string& config) {
        const RunConfig c = config_from(config);
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run(c, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("config"),
      "Runs one command from a flat JSON config. Returns (exit_code, stdout, stderr).");
}
