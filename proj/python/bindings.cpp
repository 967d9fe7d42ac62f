#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>

#include "couplekit/analytics.hpp"
#include "couplekit/error.hpp"
#include "couplekit/harness.hpp"
#include "couplekit/matching.hpp"
#include "couplekit/transport.hpp"

namespace py = pybind11;
namespace ck = couplekit;

namespace {

ck::SimulationConfig config_from(const std::string& text, const std::string& base_dir) {
  try {
    return ck::parse_config(ck::Json::parse(text), base_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ck::ValidationError(std::string("config: ") + e.what());
  }
}

std::string simulate_json(const std::string& config, const std::string& base_dir) {
  const ck::SimulationConfig c = config_from(config, base_dir);
  ck::SimulationReport report;
  {
    py::gil_scoped_release release;
    report = ck::simulate(c, ck::build_population(c), ck::build_transport(c));
  }
  const ck::Json j = report.to_json(c);
  ck::validate_report_json(j);
  return j.dump();
}

std::string analyze_json(const std::string& config, const std::string& base_dir) {
  const ck::SimulationConfig c = config_from(config, base_dir);
  ck::Json j;
  {
    py::gil_scoped_release release;
    j = ck::analyze(c, ck::build_population(c), ck::build_transport(c));
  }
  ck::validate_report_json(j);
  return j.dump();
}

std::string sweep_csv(const std::string& config, const std::string& base_dir) {
  const ck::SimulationConfig c = config_from(config, base_dir);
  std::string csv;
  {
    py::gil_scoped_release release;
    csv = ck::sweep_csv(ck::sweep_tradeoff(c, ck::build_population(c), ck::build_transport(c)));
  }
  ck::validate_sweep_csv(csv);
  return csv;
}

std::string design_csv(const std::string& config, const std::string& base_dir) {
  const ck::SimulationConfig c = config_from(config, base_dir);
  if (c.designs.size() != 1) throw ck::ValidationError("design: the config must list exactly one design");
  const ck::Population pop = ck::build_population(c);
  const ck::DesignRun run =
      ck::run_design(pop.covariates, c.designs.front(), ck::build_transport(c), ck::RandomStream(c.seed), c.matching);
  const std::string csv = ck::design_csv(run);
  ck::validate_design_csv(csv, pop.size(), c.designs.front().k);
  return csv;
}

py::dict match(const ck::Matrix& x, ck::Index k, std::uint64_t seed, bool standardize) {
  ck::MatchingOptions o;
  o.standardize = standardize;
  const ck::Matching m = ck::match_k_tuples(x, k, ck::RandomStream(seed), o);
  py::dict out;
  out["group"] = m.group;
  out["position"] = m.position;
  out["discrepancy"] = m.discrepancy;
  return out;
}

ck::Matrix sample_uniforms(const std::string& kind, ck::Index k, ck::Index m, std::uint64_t seed) {
  ck::CouplingSpec spec;
  spec.kind = ck::coupling_kind_from_string(kind);
  spec.k = k;
  spec.m = m;
  spec.validate();
  return ck::sample_uniform_tuple(spec, ck::RandomStream(seed)).u;
}

py::dict fit_ot(const ck::Matrix& points, const ck::Vector& weights, std::uint64_t seed, ck::Index mc_samples, double tol) {
  ck::SemiDiscreteOptions o;
  o.mc_samples = mc_samples;
  o.tol = tol;
  ck::TransportMap map = [&] {
    py::gil_scoped_release release;
    return ck::fit_semidiscrete(points, weights, ck::RandomStream(seed), o);
  }();
  py::dict out;
  out["potentials"] = map.potentials();
  out["mass_error"] = map.diagnostics().mass_error;
  out["iterations"] = map.diagnostics().iterations;
  out["converged"] = map.diagnostics().converged;
  return out;
}

py::dict rate(const std::string& kind, ck::Index k) {
  const ck::WorstCaseRate w = ck::worst_case_rate(ck::coupling_kind_from_string(kind), k);
  py::dict out;
  out["inf_dispersion"] = w.id;
  out["sup_dispersion"] = w.sd;
  out["rate"] = w.rate;
  return out;
}

}  // namespace

PYBIND11_MODULE(_couplekit, m) {
  m.doc() = "Coupled treatment-assignment designs";
  py::register_exception<ck::ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ck::NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.attr("SCHEMA_VERSION") = ck::kSchemaVersion;
  m.def("simulate_json", &simulate_json, py::arg("config"), py::arg("base_dir") = ".");
  m.def("analyze_json", &analyze_json, py::arg("config"), py::arg("base_dir") = ".");
  m.def("sweep_csv", &sweep_csv, py::arg("config"), py::arg("base_dir") = ".");
  m.def("design_csv", &design_csv, py::arg("config"), py::arg("base_dir") = ".");
  m.def("match_k_tuples", &match, py::arg("x"), py::arg("k"), py::arg("seed") = 0, py::arg("standardize") = true);
  m.def("sample_uniforms", &sample_uniforms, py::arg("kind"), py::arg("k"), py::arg("m") = 1, py::arg("seed") = 0);
  m.def("fit_semidiscrete", &fit_ot, py::arg("points"), py::arg("weights"), py::arg("seed") = 0,
        py::arg("mc_samples") = 200000, py::arg("tol") = 1e-3);
  m.def("dispersion_closed_form",
        [](const std::string& kind, ck::Index k, const std::string& label) {
          return ck::dispersion_closed_form(ck::coupling_kind_from_string(kind), k, label);
        },
        py::arg("kind"), py::arg("k"), py::arg("label"));
  m.def("worst_case_rate", &rate, py::arg("kind"), py::arg("k"));
}
