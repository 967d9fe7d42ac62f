// couplekit command line: design, analyze, simulate, sweep, ot-fit.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "couplekit/error.hpp"
#include "couplekit/harness.hpp"
#include "couplekit/io.hpp"

namespace ck = couplekit;

namespace {

struct Options {
  std::string config;
  std::string covariates;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<long long> reps;
};

ck::SimulationConfig load(const Options& o) {
  ck::SimulationConfig c = ck::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.reps) {
    if (*o.reps < 100) throw ck::ValidationError("--reps must be at least 100");
    c.replications = static_cast<ck::Index>(*o.reps);
  }
  if (!o.covariates.empty()) c.covariates_path = o.covariates;
  c.validate();
  return c;
}

void write_json(const std::string& path, const ck::Json& j, void (*check)(const ck::Json&)) {
  ck::io::write_file(path, j.dump(2) + "\n");
  check(ck::Json::parse(ck::io::read_file(path)));
}

void write_potentials(const std::string& path, const ck::TransportMap& map) {
  ck::save_transport_json(map, path);
  ck::validate_potentials_json(ck::Json::parse(ck::io::read_file(path)));
}

int run_design(const Options& o) {
  const ck::SimulationConfig c = load(o);
  if (c.designs.size() != 1) throw ck::ValidationError("design: the config must list exactly one design");
  const ck::Population pop = ck::build_population(c);
  const ck::CouplingSpec& spec = c.designs.front();
  const ck::Index n = pop.size();
  if (spec.k > n || n % spec.k != 0)
    throw ck::ValidationError("tuple size must divide n (k=" + std::to_string(spec.k) + ", n=" + std::to_string(n) + ")");
  const ck::TransportMap map = ck::build_transport(c);
  const ck::DesignRun run = ck::run_design(pop.covariates, spec, map, ck::RandomStream(c.seed), c.matching);
  ck::io::ensure_directory(o.out);
  const std::string path = ck::io::join_path(o.out, "design.csv");
  ck::io::write_file(path, ck::design_csv(run));
  ck::validate_design_csv(ck::io::read_file(path), n, spec.k);
  if (map.kind() == ck::TransportKind::SemiDiscrete && c.transport.potentials_path.empty())
    write_potentials(ck::io::join_path(o.out, "potentials.json"), map);
  std::cerr << "design: wrote " << path << " (n=" << n << ", k=" << spec.k << ", discrepancy " << run.matching.discrepancy
            << ")\n";
  return 0;
}

int run_analyze(const Options& o) {
  const ck::SimulationConfig c = load(o);
  const ck::Population pop = ck::build_population(c);
  const ck::TransportMap map = ck::build_transport(c);
  ck::io::ensure_directory(o.out);
  const std::string path = ck::io::join_path(o.out, "report.json");
  write_json(path, ck::analyze(c, pop, map), ck::validate_report_json);
  std::cerr << "analyze: wrote " << path << "\n";
  return 0;
}

int run_simulate(const Options& o) {
  const ck::SimulationConfig c = load(o);
  const ck::Population pop = ck::build_population(c);
  const ck::TransportMap map = ck::build_transport(c);
  const ck::SimulationReport report = ck::simulate(c, pop, map);
  ck::io::ensure_directory(o.out);
  const std::string path = ck::io::join_path(o.out, "report.json");
  write_json(path, report.to_json(c), ck::validate_report_json);
  int failed = 0;
  for (const auto& d : report.designs) {
    if (d.status != "ok") {
      std::cerr << "simulate: design " << ck::to_string(d.spec.kind) << " k=" << d.spec.k << " failed: " << d.error << "\n";
      ++failed;
    }
  }
  std::cerr << "simulate: wrote " << path << "\n";
  return failed ? 2 : 0;
}

int run_sweep(const Options& o) {
  const ck::SimulationConfig c = load(o);
  const ck::Population pop = ck::build_population(c);
  const ck::TransportMap map = ck::build_transport(c);
  const auto rows = ck::sweep_tradeoff(c, pop, map);
  ck::io::ensure_directory(o.out);
  const std::string path = ck::io::join_path(o.out, "sweep.csv");
  ck::io::write_file(path, ck::sweep_csv(rows));
  ck::validate_sweep_csv(ck::io::read_file(path));
  std::cerr << "sweep: wrote " << path << "\n";
  return 0;
}

int run_ot_fit(const Options& o) {
  ck::SimulationConfig c = load(o);
  if (c.marginal.kind() != ck::MarginalKind::DiscretePoints || c.marginal.dimension() < 2)
    throw ck::ValidationError("ot-fit: the marginal must be a multivariate point cloud");
  c.transport.potentials_path.clear();
  const ck::TransportMap map = ck::fit_semidiscrete(c.marginal.points(), c.marginal.weights(),
                                                    ck::RandomStream(c.seed, {ck::stream_tag::kTransport}),
                                                    c.transport.options);
  ck::io::ensure_directory(o.out);
  const std::string path = ck::io::join_path(o.out, "potentials.json");
  write_potentials(path, map);
  std::cerr << "ot-fit: wrote " << path << " (mass error " << map.diagnostics().mass_error << " after "
            << map.diagnostics().iterations << " iterations)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"couplekit: coupled treatment-assignment designs"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "configuration JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--covariates", o.covariates, "covariate CSV (overrides the config)")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "root seed (overrides the config)");
    sub->add_option("--reps", o.reps, "replications (overrides the config)");
  };
  CLI::App* design = app.add_subcommand("design", "match units and draw one assignment; writes design.csv");
  CLI::App* analyze = app.add_subcommand("analyze", "dispersion, match quality and eigenspace decomposition; writes report.json");
  CLI::App* simulate = app.add_subcommand("simulate", "Monte Carlo replications of every design; writes report.json");
  CLI::App* sweep = app.add_subcommand("sweep", "match quality / dispersion tradeoff over a k grid; writes sweep.csv");
  CLI::App* ot_fit = app.add_subcommand("ot-fit", "fit semi-discrete transport potentials; writes potentials.json");
  for (CLI::App* sub : {design, analyze, simulate, sweep, ot_fit}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (design->parsed()) return run_design(o);
    if (analyze->parsed()) return run_analyze(o);
    if (simulate->parsed()) return run_simulate(o);
    if (sweep->parsed()) return run_sweep(o);
    if (ot_fit->parsed()) return run_ot_fit(o);
  } catch (const ck::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ck::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const ck::Json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
