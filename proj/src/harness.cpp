#include "couplekit/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "couplekit/error.hpp"
#include "couplekit/io.hpp"
#include "couplekit/parallel.hpp"
#include "couplekit/stats.hpp"

namespace couplekit {

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

double first_coordinate_cdf(const Marginal& marginal, double x) {
  if (marginal.kind() == MarginalKind::DiscretePoints) {
    double cum = 0.0;
    for (Index i = 0; i < marginal.points().rows(); ++i)
      if (marginal.points()(i, 0) <= x) cum += marginal.weights()(i);
    return std::min(cum, 1.0);
  }
  return marginal.factors().front().cdf(x);
}

}  // namespace

std::string to_string(OutcomeFamily family) {
  switch (family) {
    case OutcomeFamily::Null:
      return "null";
    case OutcomeFamily::Linear:
      return "linear";
    case OutcomeFamily::Quadratic:
      return "quadratic";
    case OutcomeFamily::Histogram:
      return "histogram";
    case OutcomeFamily::Cyclic:
      return "cyclic";
    case OutcomeFamily::Logistic:
      return "logistic";
  }
  return "?";
}

OutcomeFamily outcome_family_from_string(const std::string& name) {
  const std::string s = lower(name);
  if (s == "null") return OutcomeFamily::Null;
  if (s == "linear") return OutcomeFamily::Linear;
  if (s == "quadratic") return OutcomeFamily::Quadratic;
  if (s == "histogram") return OutcomeFamily::Histogram;
  if (s == "cyclic") return OutcomeFamily::Cyclic;
  if (s == "logistic" || s == "logit") return OutcomeFamily::Logistic;
  throw ValidationError("unknown outcome family '" + name + "' (null, linear, quadratic, histogram, cyclic, logistic)");
}

SyntheticOutcomes::SyntheticOutcomes(OutcomeFamily family, Vector a, Vector b, Vector c, Vector v, Marginal marginal,
                                     Index bins, Index frequency, Vector level)
    : family_(family),
      a_(std::move(a)),
      b_(std::move(b)),
      c_(std::move(c)),
      v_(std::move(v)),
      level_(std::move(level)),
      marginal_(std::move(marginal)),
      bins_(bins),
      frequency_(frequency) {
  const Index n = a_.size();
  if (b_.size() != n || c_.size() != n || v_.size() != n) throw ValidationError("outcomes: coefficient lengths differ");
  if (family_ == OutcomeFamily::Null && level_.size() != n) throw ValidationError("outcomes: null family needs one level per unit");
  if ((family_ == OutcomeFamily::Histogram || family_ == OutcomeFamily::Cyclic) &&
      marginal_.kind() == MarginalKind::DiscretePoints && marginal_.dimension() > 1) {
    throw ValidationError("outcomes: " + to_string(family_) + " family needs a marginal with a univariate first coordinate");
  }
  if (family_ == OutcomeFamily::Histogram && bins_ < 1) throw ValidationError("outcomes: bins must be positive");
  if (family_ == OutcomeFamily::Cyclic && frequency_ < 1) throw ValidationError("outcomes: frequency must be positive");
}

double SyntheticOutcomes::position(const Vector& d) const { return first_coordinate_cdf(marginal_, d(0)); }

double SyntheticOutcomes::outcome(Index i, const Vector& d) const {
  const double t = d.sum();
  switch (family_) {
    case OutcomeFamily::Null:
      return level_(i);
    case OutcomeFamily::Linear:
      return a_(i) + b_(i) * t;
    case OutcomeFamily::Quadratic:
      return a_(i) + b_(i) * t + c_(i) * t * t;
    case OutcomeFamily::Histogram: {
      const double u = position(d);
      const double bin = std::min(std::floor(static_cast<double>(bins_) * u), static_cast<double>(bins_ - 1));
      return a_(i) + b_(i) * bin / static_cast<double>(bins_);
    }
    case OutcomeFamily::Cyclic:
      return a_(i) + b_(i) * std::sin(2.0 * std::numbers::pi * static_cast<double>(frequency_) * position(d));
    case OutcomeFamily::Logistic:
      return v_(i) < logistic(a_(i) + b_(i) * t) ? 1.0 : 0.0;
  }
  return 0.0;
}

std::string SyntheticOutcomes::describe() const {
  std::ostringstream os;
  os << to_string(family_) << " outcomes, n=" << a_.size();
  return os.str();
}

std::optional<Matrix> SyntheticOutcomes::exact_unit_blp() const {
  if (family_ == OutcomeFamily::Null) return Matrix::Zero(level_.size(), marginal_.dimension());
  if (family_ != OutcomeFamily::Linear) return std::nullopt;
  Matrix out(b_.size(), marginal_.dimension());
  for (Index i = 0; i < b_.size(); ++i) out.row(i).setConstant(b_(i));
  return out;
}

Population make_population(const PopulationSpec& spec, const Marginal& marginal, RandomStream stream,
                           const std::optional<Matrix>& covariates) {
  if (!(spec.r2 >= 0.0 && spec.r2 <= 1.0)) throw ValidationError("population: r2 must lie in [0, 1]");
  Matrix x;
  if (covariates) {
    x = *covariates;
  } else {
    if (spec.n < 2 || spec.p < 1) throw ValidationError("population: need n >= 2 and p >= 1");
    x.resize(spec.n, spec.p);
    RandomStream s = stream.child(0);
    for (Index i = 0; i < spec.n; ++i)
      for (Index j = 0; j < spec.p; ++j) x(i, j) = s.normal();
  }
  const Index n = x.rows();
  const Index p = x.cols();
  auto coefficient = [&](std::uint64_t id, double mean, double spread) {
    RandomStream s = stream.child(id);
    Vector gamma(p);
    for (Index j = 0; j < p; ++j) gamma(j) = s.normal();
    Vector lin = x * gamma;
    lin.array() -= lin.mean();
    const double sd = std::sqrt(lin.squaredNorm() / static_cast<double>(n));
    if (sd > 0.0) lin /= sd;
    Vector out(n);
    for (Index i = 0; i < n; ++i)
      out(i) = mean + spread * (std::sqrt(spec.r2) * lin(i) + std::sqrt(1.0 - spec.r2) * s.normal());
    return out;
  };
  Vector a = coefficient(1, spec.baseline, spec.spread);
  Vector b = coefficient(2, spec.effect, spec.spread);
  Vector c = coefficient(3, 0.5 * spec.effect, 0.5 * spec.spread);
  Vector v(n);
  RandomStream sv = stream.child(4);
  for (Index i = 0; i < n; ++i) v(i) = sv.uniform_open();
  Vector level = x.rowwise().sum();
  Population pop;
  pop.covariates = std::move(x);
  pop.outcomes = std::make_shared<SyntheticOutcomes>(spec.family, std::move(a), std::move(b), std::move(c), std::move(v),
                                                     marginal, spec.bins, spec.frequency, std::move(level));
  pop.validate();
  return pop;
}

// ---------------------------------------------------------------------------
// configuration

namespace {

void check_keys(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ValidationError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T get_or(const Json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(where + "." + key + ": wrong type");
  }
}

Index positive_index(const Json& obj, const char* key, Index fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_number_integer()) throw ValidationError(where + "." + key + ": integer required");
  const auto v = obj.at(key).get<long long>();
  if (v < 0) throw ValidationError(where + "." + key + ": must be nonnegative");
  return static_cast<Index>(v);
}

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(base_dir) / path).string();
}

Univariate univariate_from_json(const Json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("family")) throw ValidationError(where + ": 'family' required");
  const std::string fam = lower(j.at("family").get<std::string>());
  if (fam == "uniform") {
    check_keys(j, {"family", "low", "high"}, where);
    return Univariate::uniform(get_or(j, "low", 0.0, where), get_or(j, "high", 1.0, where));
  }
  if (fam == "exponential") {
    check_keys(j, {"family", "rate"}, where);
    return Univariate::exponential(get_or(j, "rate", 1.0, where));
  }
  if (fam == "normal") {
    check_keys(j, {"family", "mean", "sd"}, where);
    return Univariate::normal(get_or(j, "mean", 0.0, where), get_or(j, "sd", 1.0, where));
  }
  if (fam == "discrete") {
    check_keys(j, {"family", "support", "weights"}, where);
    auto support = get_or(j, "support", std::vector<double>{}, where);
    std::vector<double> weights = j.contains("weights") ? get_or(j, "weights", std::vector<double>{}, where)
                                                        : std::vector<double>(support.size(), 1.0 / static_cast<double>(std::max<std::size_t>(1, support.size())));
    return Univariate::discrete(std::move(support), std::move(weights));
  }
  throw ValidationError(where + ": unknown family '" + fam + "'");
}

Json univariate_to_json(const Univariate& u) {
  switch (u.family()) {
    case Family::Uniform:
      return Json{{"family", "uniform"}, {"low", u.param1()}, {"high", u.param2()}};
    case Family::Exponential:
      return Json{{"family", "exponential"}, {"rate", u.param1()}};
    case Family::Normal:
      return Json{{"family", "normal"}, {"mean", u.param1()}, {"sd", u.param2()}};
    case Family::Discrete:
      return Json{{"family", "discrete"}, {"support", u.support()}, {"weights", u.weights()}};
  }
  return Json{};
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

CouplingSpec coupling_from_json(const Json& j, const Marginal& marginal, const std::string& where) {
  check_keys(j, {"coupling", "k", "z"}, where);
  if (!j.contains("coupling")) throw ValidationError(where + ": 'coupling' required");
  CouplingSpec spec;
  spec.kind = coupling_kind_from_string(j.at("coupling").get<std::string>());
  spec.k = positive_index(j, "k", 0, where);
  spec.m = marginal.dimension();
  spec.z = get_or(j, "z", std::vector<std::int64_t>{}, where);
  if (spec.kind == CouplingKind::CompleteRandomization) spec.marginal = marginal;
  return spec;
}

Json coupling_to_json(const CouplingSpec& spec) {
  Json j{{"coupling", to_string(spec.kind)}, {"k", spec.k}};
  if (spec.kind == CouplingKind::ShiftedLattice) j["z"] = spec.lattice_vector();
  return j;
}

}  // namespace

Marginal marginal_from_json(const Json& j, const std::string& base_dir) {
  const std::string where = "marginal";
  if (!j.is_object() || !j.contains("family")) throw ValidationError(where + ": 'family' required");
  const std::string fam = lower(j.at("family").get<std::string>());
  if (fam == "product") {
    check_keys(j, {"family", "factors"}, where);
    if (!j.contains("factors") || !j.at("factors").is_array()) throw ValidationError(where + ".factors: array required");
    std::vector<Univariate> factors;
    for (std::size_t i = 0; i < j.at("factors").size(); ++i)
      factors.push_back(univariate_from_json(j.at("factors")[i], where + ".factors[" + std::to_string(i) + "]"));
    return Marginal::product(std::move(factors));
  }
  if (fam == "points") {
    check_keys(j, {"family", "points", "points_csv", "weights"}, where);
    Matrix pts;
    if (j.contains("points_csv")) {
      pts = io::read_matrix_csv(resolve(base_dir, j.at("points_csv").get<std::string>()));
    } else if (j.contains("points") && j.at("points").is_array() && !j.at("points").empty()) {
      const auto& arr = j.at("points");
      const std::size_t m = arr[0].size();
      pts.resize(static_cast<Index>(arr.size()), static_cast<Index>(m));
      for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_array() || arr[i].size() != m) throw ValidationError(where + ".points: ragged rows");
        for (std::size_t c = 0; c < m; ++c) pts(static_cast<Index>(i), static_cast<Index>(c)) = arr[i][c].get<double>();
      }
    } else {
      throw ValidationError(where + ": 'points' or 'points_csv' required");
    }
    if (!j.contains("weights")) return Marginal::discrete_uniform(std::move(pts));
    const auto w = get_or(j, "weights", std::vector<double>{}, where);
    if (static_cast<Index>(w.size()) != pts.rows()) throw ValidationError(where + ".weights: length differs from point count");
    return Marginal::discrete(std::move(pts), Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size())));
  }
  Univariate u = univariate_from_json(j, where);
  if (u.family() == Family::Discrete) {
    Matrix pts(static_cast<Index>(u.support().size()), 1);
    for (std::size_t i = 0; i < u.support().size(); ++i) pts(static_cast<Index>(i), 0) = u.support()[i];
    return Marginal::discrete(std::move(pts), Eigen::Map<const Vector>(u.weights().data(), static_cast<Index>(u.weights().size())));
  }
  return Marginal::univariate(std::move(u));
}

Json marginal_to_json(const Marginal& marginal) {
  switch (marginal.kind()) {
    case MarginalKind::UnivariateNamed:
      return univariate_to_json(marginal.factors().front());
    case MarginalKind::ProductOfUnivariates: {
      Json factors = Json::array();
      for (const auto& f : marginal.factors()) factors.push_back(univariate_to_json(f));
      return Json{{"family", "product"}, {"factors", factors}};
    }
    case MarginalKind::DiscretePoints: {
      std::vector<double> w(marginal.weights().data(), marginal.weights().data() + marginal.weights().size());
      if (marginal.dimension() == 1) {
        std::vector<double> support(marginal.points().data(), marginal.points().data() + marginal.points().rows());
        return Json{{"family", "discrete"}, {"support", support}, {"weights", w}};
      }
      return Json{{"family", "points"}, {"points", matrix_to_json(marginal.points())}, {"weights", w}};
    }
  }
  return Json{};
}

void SimulationConfig::validate() const {
  if (schema_version != kSchemaVersion)
    throw ValidationError("config: unsupported schema_version " + std::to_string(schema_version) + " (expected " +
                          std::to_string(kSchemaVersion) + ")");
  if (replications < 100) throw ValidationError("config: replications must be at least 100");
  if (table_draws < 2) throw ValidationError("config: table_draws must be at least 2");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("config: alpha must lie in (0, 1)");
  if (component < 0 || component >= marginal.dimension()) throw ValidationError("config: component out of range");
  for (const auto& d : designs) d.validate();
  for (Index k : sweep.k_grid)
    if (k < 2) throw ValidationError("config: sweep k_grid entries must be at least 2");
  if (sweep.dispersion_reps < 100) throw ValidationError("config: sweep dispersion_reps must be at least 100");
  if (sweep.populations < 1) throw ValidationError("config: sweep populations must be at least 1");
}

Json SimulationConfig::to_json() const {
  Json designs_json = Json::array();
  for (const auto& d : designs) designs_json.push_back(coupling_to_json(d));
  Json j;
  j["schema_version"] = schema_version;
  j["seed"] = seed;
  j["population"] = Json{{"n", population.n},           {"p", population.p},
                         {"family", to_string(population.family)},
                         {"r2", population.r2},         {"baseline", population.baseline},
                         {"effect", population.effect}, {"spread", population.spread},
                         {"bins", population.bins},     {"frequency", population.frequency}};
  if (!covariates_path.empty()) j["covariates"] = covariates_path;
  j["marginal"] = marginal_to_json(marginal);
  j["designs"] = designs_json;
  j["estimator"] = to_string(estimator);
  j["component"] = component;
  j["replications"] = replications;
  j["table_draws"] = table_draws;
  j["alpha"] = alpha;
  j["matching"] = Json{{"local_search_budget", matching.local_search_budget},
                       {"standardize", matching.standardize},
                       {"exact_max_units", matching.exact_max_units}};
  Json t{{"mc_samples", transport.options.mc_samples},
         {"tol", transport.options.tol},
         {"max_iterations", transport.options.max_iterations},
         {"check_every", transport.options.check_every},
         {"preconditioned", transport.options.preconditioned}};
  if (!transport.potentials_path.empty()) t["potentials"] = transport.potentials_path;
  j["transport"] = t;
  j["sweep"] = Json{{"coupling", to_string(sweep.coupling)}, {"k_grid", sweep.k_grid}, {"dispersion_reps", sweep.dispersion_reps},
                    {"populations", sweep.populations}};
  j["logit"] = Json{{"tol", logit.tol}, {"max_iter", logit.max_iter}, {"intercept", logit.intercept}};
  return j;
}

SimulationConfig parse_config(const Json& j, const std::string& base_dir) {
  check_keys(j, {"schema_version", "seed", "population", "covariates", "marginal", "k", "designs", "estimator", "component",
                 "replications", "table_draws", "alpha", "matching", "transport", "sweep", "logit"},
             "config");
  SimulationConfig c;
  if (!j.contains("schema_version")) throw ValidationError("config: 'schema_version' required");
  c.schema_version = get_or(j, "schema_version", 0, "config");
  c.seed = get_or<std::uint64_t>(j, "seed", 0, "config");
  if (j.contains("population")) {
    const Json& p = j.at("population");
    check_keys(p, {"n", "p", "family", "r2", "baseline", "effect", "spread", "bins", "frequency"}, "population");
    c.population.n = positive_index(p, "n", 0, "population");
    c.population.p = positive_index(p, "p", 0, "population");
    c.population.family = outcome_family_from_string(get_or<std::string>(p, "family", "linear", "population"));
    c.population.r2 = get_or(p, "r2", 0.7, "population");
    c.population.baseline = get_or(p, "baseline", 0.0, "population");
    c.population.effect = get_or(p, "effect", 1.0, "population");
    c.population.spread = get_or(p, "spread", 1.0, "population");
    c.population.bins = positive_index(p, "bins", 4, "population");
    c.population.frequency = positive_index(p, "frequency", 4, "population");
  }
  if (j.contains("covariates")) c.covariates_path = resolve(base_dir, j.at("covariates").get<std::string>());
  if (!j.contains("marginal")) throw ValidationError("config: 'marginal' required");
  c.marginal = marginal_from_json(j.at("marginal"), base_dir);
  const Index default_k = positive_index(j, "k", 0, "config");
  if (j.contains("designs")) {
    if (!j.at("designs").is_array()) throw ValidationError("config.designs: array required");
    for (std::size_t i = 0; i < j.at("designs").size(); ++i) {
      Json d = j.at("designs")[i];
      if (!d.contains("k") && default_k > 0) d["k"] = default_k;
      c.designs.push_back(coupling_from_json(d, c.marginal, "designs[" + std::to_string(i) + "]"));
    }
  }
  c.estimator = estimator_kind_from_string(get_or<std::string>(j, "estimator", "ht", "config"));
  c.component = positive_index(j, "component", 0, "config");
  c.replications = positive_index(j, "replications", 1000, "config");
  c.table_draws = positive_index(j, "table_draws", 4096, "config");
  c.alpha = get_or(j, "alpha", 0.05, "config");
  if (j.contains("matching")) {
    const Json& m = j.at("matching");
    check_keys(m, {"local_search_budget", "standardize", "exact_max_units"}, "matching");
    c.matching.local_search_budget = positive_index(m, "local_search_budget", c.matching.local_search_budget, "matching");
    c.matching.standardize = get_or(m, "standardize", true, "matching");
    c.matching.exact_max_units = positive_index(m, "exact_max_units", c.matching.exact_max_units, "matching");
  }
  if (j.contains("transport")) {
    const Json& t = j.at("transport");
    check_keys(t, {"potentials", "mc_samples", "tol", "max_iterations", "check_every", "step_scale", "preconditioned"},
               "transport");
    if (t.contains("potentials")) c.transport.potentials_path = resolve(base_dir, t.at("potentials").get<std::string>());
    auto& o = c.transport.options;
    o.mc_samples = positive_index(t, "mc_samples", o.mc_samples, "transport");
    o.tol = get_or(t, "tol", o.tol, "transport");
    o.max_iterations = positive_index(t, "max_iterations", o.max_iterations, "transport");
    o.check_every = positive_index(t, "check_every", o.check_every, "transport");
    o.step_scale = get_or(t, "step_scale", o.step_scale, "transport");
    o.preconditioned = get_or(t, "preconditioned", o.preconditioned, "transport");
  }
  if (j.contains("sweep")) {
    const Json& s = j.at("sweep");
    check_keys(s, {"coupling", "k_grid", "dispersion_reps", "populations"}, "sweep");
    c.sweep.coupling = coupling_kind_from_string(get_or<std::string>(s, "coupling", "lhs", "sweep"));
    c.sweep.k_grid = get_or(s, "k_grid", std::vector<Index>{}, "sweep");
    c.sweep.dispersion_reps = positive_index(s, "dispersion_reps", c.sweep.dispersion_reps, "sweep");
    c.sweep.populations = positive_index(s, "populations", c.sweep.populations, "sweep");
  }
  if (j.contains("logit")) {
    const Json& l = j.at("logit");
    check_keys(l, {"tol", "max_iter", "intercept"}, "logit");
    c.logit.tol = get_or(l, "tol", c.logit.tol, "logit");
    c.logit.max_iter = positive_index(l, "max_iter", c.logit.max_iter, "logit");
    c.logit.intercept = get_or(l, "intercept", c.logit.intercept, "logit");
  }
  c.validate();
  return c;
}

SimulationConfig load_config(const std::string& path) {
  Json j;
  try {
    j = Json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": invalid JSON: " + e.what());
  }
  const auto parent = std::filesystem::path(path).parent_path().string();
  try {
    return parse_config(j, parent.empty() ? "." : parent);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

Population build_population(const SimulationConfig& config, const std::optional<Matrix>& covariates) {
  std::optional<Matrix> x = covariates;
  if (!x && !config.covariates_path.empty()) x = io::read_matrix_csv(config.covariates_path);
  if (x && config.population.n > 0 && x->rows() != config.population.n) {
    throw ValidationError("population: covariate file has " + std::to_string(x->rows()) + " rows but population.n is " +
                          std::to_string(config.population.n));
  }
  return make_population(config.population, config.marginal, RandomStream(config.seed, {stream_tag::kPopulation}), x);
}

TransportMap build_transport(const SimulationConfig& config) {
  if (config.marginal.has_quantile()) return TransportMap::quantile(config.marginal);
  if (!config.transport.potentials_path.empty()) {
    TransportMap map = load_transport_json(config.transport.potentials_path);
    if (map.points().rows() != config.marginal.points().rows() ||
        !map.points().isApprox(config.marginal.points(), 1e-12) ||
        (map.weights() - config.marginal.weights()).cwiseAbs().maxCoeff() > 1e-12) {
      throw ValidationError("transport: potentials file does not match the configured point cloud");
    }
    return map;
  }
  bool needs_map = false;
  for (const auto& d : config.designs) needs_map = needs_map || d.kind != CouplingKind::CompleteRandomization;
  if (!needs_map && config.sweep.k_grid.empty()) {
    return TransportMap::semidiscrete(config.marginal.points(), config.marginal.weights(),
                                      Vector::Zero(config.marginal.points().rows()));
  }
  return fit_semidiscrete(config.marginal.points(), config.marginal.weights(),
                          RandomStream(config.seed, {stream_tag::kTransport}), config.transport.options);
}

// ---------------------------------------------------------------------------
// designs

DesignRun assign_treatments(const Matching& matching, const CouplingSpec& spec, const TransportMap& map,
                            RandomStream stream) {
  spec.validate();
  if (matching.k != spec.k) {
    throw ValidationError("design: matching k=" + std::to_string(matching.k) + " differs from coupling k=" +
                          std::to_string(spec.k));
  }
  const Index n = matching.units();
  const Index groups = matching.groups();
  const bool cr = spec.kind == CouplingKind::CompleteRandomization;
  const Index dim = cr ? (spec.marginal ? spec.marginal->dimension() : map.dimension()) : map.dimension();
  DesignRun run;
  run.matching = matching;
  run.uniforms = Matrix::Zero(n, cr ? 0 : spec.m);
  run.treatments.resize(n, dim);
  run.cell.assign(static_cast<std::size_t>(n), -1);
  const auto members = matching.members();
  for (Index g = 0; g < groups; ++g) {
    const TreatmentTuple t = draw_treatments(spec, map, stream.child(static_cast<std::uint64_t>(g)));
    for (Index slot = 0; slot < spec.k; ++slot) {
      const Index unit = members[static_cast<std::size_t>(g)][static_cast<std::size_t>(slot)];
      run.treatments.row(unit) = t.treatments.row(slot);
      if (!cr) run.uniforms.row(unit) = t.uniforms.row(slot);
      run.cell[static_cast<std::size_t>(unit)] = t.cell[static_cast<std::size_t>(slot)];
    }
  }
  return run;
}

DesignRun run_design(const Matrix& x, const CouplingSpec& spec, const TransportMap& map, RandomStream stream,
                     const MatchingOptions& options) {
  spec.validate();
  const Matching matching = match_k_tuples(x, spec.k, stream.child(stream_tag::kMatching), options);
  return assign_treatments(matching, spec, map, stream.child(stream_tag::kCoupling));
}

std::string design_csv(const DesignRun& run) {
  std::ostringstream os;
  os << "unit,group,position";
  for (Index j = 0; j < run.uniforms.cols(); ++j) os << ",u" << j + 1;
  for (Index j = 0; j < run.treatments.cols(); ++j) os << ",d" << j + 1;
  os << ",cell\n";
  for (Index i = 0; i < run.treatments.rows(); ++i) {
    os << i << ',' << run.matching.group[static_cast<std::size_t>(i)] << ','
       << run.matching.position[static_cast<std::size_t>(i)];
    for (Index j = 0; j < run.uniforms.cols(); ++j) os << ',' << io::format_double(run.uniforms(i, j));
    for (Index j = 0; j < run.treatments.cols(); ++j) os << ',' << io::format_double(run.treatments(i, j));
    os << ',' << run.cell[static_cast<std::size_t>(i)] << '\n';
  }
  return os.str();
}

void validate_design_csv(const std::string& text, Index n, Index k) {
  const io::CsvTable t = io::parse_csv(text, "design.csv");
  if (t.rows.empty()) throw ValidationError("design.csv: empty");
  const auto& header = t.rows.front();
  if (header.size() < 5 || header[0] != "unit" || header[1] != "group" || header[2] != "position" || header.back() != "cell")
    throw ValidationError("design.csv: bad header");
  bool has_d = false;
  for (const auto& h : header) has_d = has_d || (h.size() > 1 && h[0] == 'd');
  if (!has_d) throw ValidationError("design.csv: no treatment columns");
  if (static_cast<Index>(t.rows.size()) != n + 1) throw ValidationError("design.csv: expected " + std::to_string(n) + " rows");
  std::map<long, std::set<long>> positions;
  for (std::size_t r = 1; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row.size() != header.size()) throw ValidationError("design.csv: row " + std::to_string(r) + " has the wrong width");
    for (const auto& f : row) {
      char* end = nullptr;
      const double v = std::strtod(f.c_str(), &end);
      if (f.empty() || *end != '\0' || !std::isfinite(v)) throw ValidationError("design.csv: non-numeric field in row " + std::to_string(r));
    }
    if (std::stol(row[0]) != static_cast<long>(r - 1)) throw ValidationError("design.csv: unit ids out of order");
    positions[std::stol(row[1])].insert(std::stol(row[2]));
  }
  if (static_cast<Index>(positions.size()) * k != n) throw ValidationError("design.csv: wrong number of groups");
  for (const auto& [g, pos] : positions)
    if (static_cast<Index>(pos.size()) != k || *pos.begin() != 0 || *pos.rbegin() != k - 1)
      throw ValidationError("design.csv: group " + std::to_string(g) + " does not hold positions 0..k-1");
}

// ---------------------------------------------------------------------------
// influence tables

namespace {

std::pair<TableLayout, Index> layout_for(const CouplingSpec& spec, const Marginal& marginal) {
  if (!marginal.has_quantile()) return {TableLayout::Independent, 1};
  if (spec.kind == CouplingKind::ShiftedLattice) return {TableLayout::ShiftOrbit, spec.k};
  if (spec.kind == CouplingKind::Antithetic || (spec.kind == CouplingKind::GaussianCopula && spec.k == 2))
    return {TableLayout::ReflectionOrbit, 2};
  return {TableLayout::Independent, 1};
}

Index round_up(Index count, Index orbit) { return (count + orbit - 1) / orbit * orbit; }

Index logit_coefficient(const SimulationConfig& config) { return config.component + (config.logit.intercept ? 1 : 0); }

}  // namespace

LinearizedTarget influence_table_for(const SimulationConfig& config, const Population& population,
                                     const CouplingSpec& spec, RandomStream stream) {
  const auto [layout, orbit] = layout_for(spec, config.marginal);
  const Index count = round_up(std::max<Index>(config.table_draws, 2 * orbit), std::max<Index>(orbit, 2));
  const Index n = population.size();
  switch (config.estimator) {
    case EstimatorKind::HT: {
      LinearizedTarget out;
      out.table = build_function_table(config.marginal, ht_influence(population.outcomes, n, config.marginal, config.component),
                                       count, stream, layout, orbit);
      out.theta = Vector::Constant(1, out.table.values.mean());
      out.jacobian = config.marginal.moments().covariance;
      return out;
    }
    case EstimatorKind::OLS:
      return blp_influence_table(*population.outcomes, n, config.marginal, count, stream, config.component, layout, orbit);
    case EstimatorKind::Logit:
      return logit_influence_table(*population.outcomes, n, config.marginal, count, stream, logit_coefficient(config),
                                   config.logit, layout, orbit);
  }
  throw ValidationError("unknown estimator");
}

// ---------------------------------------------------------------------------
// simulation

namespace {

struct Replicate {
  double estimate = 0.0;
  double sigma2 = 0.0;
};

/// Point estimate and per-unit linearized contributions for one assignment.
double estimate_once(const SimulationConfig& config, const HtWeight& h, const Vector& y, const Matrix& d,
                     Vector& contributions) {
  const Index n = y.size();
  const Index j = config.component;
  contributions.resize(n);
  switch (config.estimator) {
    case EstimatorKind::HT: {
      for (Index i = 0; i < n; ++i) contributions(i) = y(i) * h(d.row(i).transpose())(j);
      return contributions.mean();
    }
    case EstimatorKind::OLS: {
      const EstimateRecord rec = ols_blp(y, d);
      const double ybar = y.mean();
      const Vector dbar = d.colwise().mean().transpose();
      for (Index i = 0; i < n; ++i) {
        const Vector di = d.row(i).transpose();
        const double e = y(i) - ybar - rec.theta.dot(di - dbar);
        contributions(i) = e * h(di)(j);
      }
      return rec.theta(j);
    }
    case EstimatorKind::Logit: {
      const EstimateRecord rec = logit_mle(y, d, config.logit);
      const Index c = logit_coefficient(config);
      const Index p = rec.theta.size();
      Matrix jn = Matrix::Zero(p, p);
      std::vector<Vector> xs(static_cast<std::size_t>(n));
      Vector prob(n);
      for (Index i = 0; i < n; ++i) {
        xs[static_cast<std::size_t>(i)] = logit_features(d.row(i).transpose(), config.logit.intercept);
        prob(i) = logistic(xs[static_cast<std::size_t>(i)].dot(rec.theta));
        jn += prob(i) * (1.0 - prob(i)) * xs[static_cast<std::size_t>(i)] * xs[static_cast<std::size_t>(i)].transpose();
      }
      jn /= static_cast<double>(n);
      const Matrix jinv = symmetric_inverse(jn, "logit Jacobian");
      for (Index i = 0; i < n; ++i)
        contributions(i) = (y(i) - prob(i)) * jinv.row(c).dot(xs[static_cast<std::size_t>(i)]);
      return rec.theta(c);
    }
  }
  return 0.0;
}

Vector group_means(const Vector& values, const Matching& matching) {
  Vector out = Vector::Zero(matching.groups());
  for (Index i = 0; i < values.size(); ++i) out(matching.group[static_cast<std::size_t>(i)]) += values(i);
  return out / static_cast<double>(matching.k);
}

struct Moments2 {
  double mean = 0.0;
  double variance = 0.0;
  double variance_se = 0.0;
};

Moments2 moments_of(const std::vector<double>& x) {
  Moments2 m;
  const auto r = static_cast<double>(x.size());
  m.mean = stats::mean(x);
  std::vector<double> c2(x.size()), c4(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - m.mean;
    c2[i] = d * d;
    c4[i] = c2[i] * c2[i];
  }
  const double mu2 = stats::pairwise_sum(c2) / r;
  const double mu4 = stats::pairwise_sum(c4) / r;
  m.variance = mu2 * r / (r - 1.0);
  m.variance_se = std::sqrt(std::max(0.0, mu4 - mu2 * mu2) / r);
  return m;
}

}  // namespace

SimulationReport simulate(const SimulationConfig& config, const Population& population, const TransportMap& map) {
  config.validate();
  population.validate();
  if (config.designs.empty()) throw ValidationError("simulate: no designs configured");
  const Index n = population.size();
  const RandomStream root(config.seed);
  const HtWeight h(config.marginal);

  std::vector<CouplingSpec> specs = config.designs;
  std::vector<bool> is_baseline(specs.size(), false);
  std::size_t baseline = specs.size();
  for (std::size_t d = 0; d < specs.size(); ++d)
    if (specs[d].kind == CouplingKind::IID && baseline == specs.size()) baseline = d;
  if (baseline == specs.size()) {
    CouplingSpec iid;
    iid.kind = CouplingKind::IID;
    iid.k = specs.front().k;
    iid.m = config.marginal.dimension();
    specs.push_back(iid);
    is_baseline.push_back(true);
  }

  // Target and unit effects from an independent-layout table.
  CouplingSpec iid_spec;
  iid_spec.kind = CouplingKind::IID;
  iid_spec.k = 2;
  iid_spec.m = config.marginal.dimension();
  const LinearizedTarget target = influence_table_for(config, population, iid_spec, root.child(stream_tag::kTable));
  Vector unit_effects = target.table.values.rowwise().mean();
  double theta_n = 0.0;
  switch (config.estimator) {
    case EstimatorKind::HT:
    case EstimatorKind::OLS: {
      const auto* synthetic = dynamic_cast<const SyntheticOutcomes*>(population.outcomes.get());
      std::optional<Matrix> exact = synthetic ? synthetic->exact_unit_blp() : std::nullopt;
      if (exact) {
        unit_effects = exact->col(config.component);
        theta_n = unit_effects.mean();
      } else {
        theta_n = config.estimator == EstimatorKind::HT ? target.theta(0) : target.theta(config.component);
      }
      break;
    }
    case EstimatorKind::Logit:
      theta_n = target.theta(logit_coefficient(config));
      break;
  }

  std::map<Index, Matching> matchings;
  SimulationReport report;
  report.seed = config.seed;
  for (std::size_t d = 0; d < specs.size(); ++d) {
    DesignResult res;
    res.spec = specs[d];
    res.baseline = is_baseline[d];
    res.theta_n = theta_n;
    try {
      const CouplingSpec& spec = specs[d];
      spec.validate();
      if (n % spec.k != 0)
        throw ValidationError("tuple size must divide n (k=" + std::to_string(spec.k) + ", n=" + std::to_string(n) + ")");
      if (!matchings.count(spec.k))
        matchings.emplace(spec.k, match_k_tuples(population.covariates, spec.k, root.child(stream_tag::kMatching), config.matching));
      const Matching& matching = matchings.at(spec.k);
      const std::vector<Index> pairing = pair_groups(population.covariates, matching);
      const Vector theta_g = group_means(unit_effects, matching);
      double ss = 0.0;
      for (Index g = 0; g < theta_g.size(); ++g) {
        const double diff = theta_g(g) - theta_g(pairing[static_cast<std::size_t>(g)]);
        ss += diff * diff;
      }
      res.delta2 = ss * static_cast<double>(spec.k) / static_cast<double>(n);

      const Index reps = config.replications;
      std::vector<Replicate> out(static_cast<std::size_t>(reps));
      parallel_for(out.size(), [&](std::size_t r) {
        const RandomStream s = root.child({stream_tag::kSimulation, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(r)});
        const DesignRun run = assign_treatments(matching, spec, map, s);
        Vector y(n);
        for (Index i = 0; i < n; ++i) y(i) = population.outcomes->outcome(i, run.treatments.row(i).transpose());
        Vector contrib;
        out[r].estimate = estimate_once(config, h, y, run.treatments, contrib);
        out[r].sigma2 = collapsed_strata_variance(group_means(contrib, matching), spec.k, n, pairing).sigma2;
      });
      const double z = stats::normal_quantile(1.0 - config.alpha / 2.0);
      std::vector<double> covered(out.size());
      res.estimates.resize(out.size());
      res.sigma2.resize(out.size());
      for (std::size_t r = 0; r < out.size(); ++r) {
        res.estimates[r] = out[r].estimate;
        res.sigma2[r] = out[r].sigma2;
        covered[r] = std::abs(out[r].estimate - theta_n) <= z * std::sqrt(out[r].sigma2) ? 1.0 : 0.0;
      }
      const Moments2 est = moments_of(res.estimates);
      const Moments2 sig = moments_of(res.sigma2);
      const auto rd = static_cast<double>(reps);
      res.replications = reps;
      res.mean_estimate = est.mean;
      res.bias = est.mean - theta_n;
      res.bias_se = std::sqrt(est.variance / rd);
      res.variance = est.variance;
      res.variance_se = est.variance_se;
      res.coverage = stats::mean(covered);
      res.coverage_se = std::sqrt(res.coverage * (1.0 - res.coverage) / rd);
      res.mean_sigma2 = sig.mean;
      res.mean_sigma2_se = std::sqrt(sig.variance / rd);
      res.sigma2_ratio = est.variance > 0.0 ? sig.mean / est.variance : 0.0;
      res.predicted_sigma2_ratio =
          est.variance > 0.0 ? 1.0 + static_cast<double>(spec.k) * res.delta2 / (2.0 * static_cast<double>(n) * est.variance) : 0.0;

      const LinearizedTarget table =
          influence_table_for(config, population, spec, root.child({stream_tag::kTable, static_cast<std::uint64_t>(d + 1)}));
      res.match_quality = match_quality(table.table, matching).q;
      const EfficiencyReport eff = efficiency_decomposition(spec, table.table, matching);
      if (!eff.monte_carlo_only) {
        res.predicted_efficiency = eff.predicted_efficiency;
        res.eigen_rows = eff.rows;
      }
    } catch (const Error& e) {
      res.status = "failed";
      res.error = e.what();
    }
    report.designs.push_back(std::move(res));
  }

  const std::size_t base = baseline == config.designs.size() ? report.designs.size() - 1 : baseline;
  const DesignResult& b = report.designs[base];
  for (auto& res : report.designs) {
    if (res.status != "ok" || b.status != "ok" || b.variance <= 0.0) continue;
    if (&res == &b) {
      res.relative_efficiency = 0.0;
      res.relative_efficiency_se = 0.0;
      continue;
    }
    const double ratio = res.variance / b.variance;
    res.relative_efficiency = 1.0 - ratio;
    const double rel_a = res.variance > 0.0 ? res.variance_se / res.variance : 0.0;
    const double rel_b = b.variance_se / b.variance;
    res.relative_efficiency_se = ratio * std::sqrt(rel_a * rel_a + rel_b * rel_b);
  }
  return report;
}

Json SimulationReport::to_json(const SimulationConfig& config) const {
  Json designs_json = Json::array();
  for (std::size_t d = 0; d < designs.size(); ++d) {
    const DesignResult& r = designs[d];
    Json row;
    row["index"] = d;
    row["coupling"] = to_string(r.spec.kind);
    row["k"] = r.spec.k;
    row["baseline"] = r.baseline;
    row["status"] = r.status;
    if (r.status != "ok") {
      row["error"] = r.error;
      designs_json.push_back(std::move(row));
      continue;
    }
    row["replications"] = r.replications;
    row["theta_n"] = r.theta_n;
    row["mean_estimate"] = r.mean_estimate;
    row["bias"] = r.bias;
    row["bias_se"] = r.bias_se;
    row["empirical_variance"] = r.variance;
    row["empirical_variance_se"] = r.variance_se;
    row["empirical_efficiency"] = r.relative_efficiency;
    row["empirical_efficiency_se"] = r.relative_efficiency_se;
    if (r.predicted_efficiency) {
      row["predicted_efficiency"] = *r.predicted_efficiency;
      const double se = r.relative_efficiency_se;
      row["efficiency_z"] = se > 0.0 ? (r.relative_efficiency - *r.predicted_efficiency) / se : 0.0;
    } else {
      row["predicted_efficiency"] = nullptr;
      row["efficiency_z"] = nullptr;
    }
    row["match_quality"] = r.match_quality;
    row["coverage"] = r.coverage;
    row["coverage_se"] = r.coverage_se;
    row["mean_sigma2"] = r.mean_sigma2;
    row["mean_sigma2_se"] = r.mean_sigma2_se;
    row["sigma2_ratio"] = r.sigma2_ratio;
    row["delta2"] = r.delta2;
    row["predicted_sigma2_ratio"] = r.predicted_sigma2_ratio;
    Json rows = Json::array();
    for (const auto& e : r.eigen_rows)
      rows.push_back(Json{{"label", e.label},
                          {"weight", e.weight},
                          {"dispersion", e.dispersion},
                          {"match_quality", e.match_quality}});
    row["eigenspaces"] = rows;
    row["stream_path"] = {stream_tag::kSimulation, d, "replication", "group"};
    designs_json.push_back(std::move(row));
  }
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = "simulate";
  j["seed_lineage"] = Json{{"root_seed", seed},
                           {"engine", "xoshiro256** keyed by a hash of (seed, path)"},
                           {"population", {stream_tag::kPopulation}},
                           {"matching", {stream_tag::kMatching}},
                           {"transport", {stream_tag::kTransport}},
                           {"target_table", {stream_tag::kTable}},
                           {"design_table", {stream_tag::kTable, "design + 1"}},
                           {"replication", {stream_tag::kSimulation, "design", "replication"}},
                           {"group", {stream_tag::kSimulation, "design", "replication", "group"}}};
  j["config"] = config.to_json();
  j["estimator"] = to_string(config.estimator);
  j["designs"] = designs_json;
  return j;
}

// ---------------------------------------------------------------------------
// sweep and analysis

std::vector<SweepRow> sweep_tradeoff(const SimulationConfig& config, const Population& population,
                                     const TransportMap& map) {
  config.validate();
  if (config.sweep.k_grid.empty()) throw ValidationError("sweep: k_grid is empty");
  const Index n = population.size();
  for (Index k : config.sweep.k_grid)
    if (k < 2 || n % k != 0)
      throw ValidationError("sweep: tuple size must divide n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
  const Index pops = config.sweep.populations;
  if (pops > 1 && !config.covariates_path.empty())
    throw ValidationError("sweep: populations > 1 needs synthetic covariates, not a covariate file");
  std::vector<Population> populations{population};
  for (Index p = 1; p < pops; ++p)
    populations.push_back(make_population(config.population, config.marginal,
                                          RandomStream(config.seed, {stream_tag::kPopulation, static_cast<std::uint64_t>(p)})));
  const RandomStream root(config.seed);
  const HtWeight h(config.marginal);
  const Index j = config.component;
  const Phi phi = [&h, j](const Vector& d) { return h(d)(j); };
  std::vector<SweepRow> rows;
  for (Index k : config.sweep.k_grid) {
    CouplingSpec spec;
    spec.kind = config.sweep.coupling;
    spec.k = k;
    spec.m = config.marginal.dimension();
    if (spec.kind == CouplingKind::CompleteRandomization) spec.marginal = config.marginal;
    spec.validate();
    const auto [layout, orbit] = layout_for(spec, config.marginal);
    const RandomStream table_stream = layout == TableLayout::Independent
                                          ? root.child(stream_tag::kTable)
                                          : root.child({stream_tag::kTable, static_cast<std::uint64_t>(k)});
    const DispersionEstimate disp = dispersion_mc(spec, map, phi, config.sweep.dispersion_reps,
                                                  root.child({stream_tag::kAnalytics, static_cast<std::uint64_t>(k)}));
    std::vector<double> q(populations.size()), pred(populations.size());
    bool predicted = true;
    for (std::size_t p = 0; p < populations.size(); ++p) {
      const Population& pop = populations[p];
      const Matching matching = match_k_tuples(pop.covariates, k, root.child(stream_tag::kMatching), config.matching);
      const LinearizedTarget table = influence_table_for(config, pop, spec, table_stream);
      q[p] = match_quality(table.table, matching).q;
      const EfficiencyReport eff = efficiency_decomposition(spec, table.table, matching);
      predicted = predicted && !eff.monte_carlo_only;
      pred[p] = eff.predicted_efficiency;
    }
    SweepRow row;
    row.k = k;
    row.populations = pops;
    row.match_quality = stats::mean(q);
    row.match_quality_se = pops > 1 ? std::sqrt(stats::sample_variance(q) / static_cast<double>(pops)) : 0.0;
    row.dispersion = disp.value;
    row.dispersion_se = disp.se;
    row.efficiency_product = row.dispersion * row.match_quality;
    row.efficiency_product_se = std::hypot(row.dispersion * row.match_quality_se, row.match_quality * row.dispersion_se);
    if (predicted) row.predicted_efficiency = stats::mean(pred);
    rows.push_back(row);
  }
  return rows;
}

namespace {

const std::vector<std::string>& sweep_header() {
  static const std::vector<std::string> h{"k",          "populations",   "match_quality",      "match_quality_se",
                                          "dispersion", "dispersion_se", "efficiency_product", "efficiency_product_se",
                                          "predicted_efficiency"};
  return h;
}

}  // namespace

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  const auto& h = sweep_header();
  for (std::size_t c = 0; c < h.size(); ++c) os << (c ? "," : "") << h[c];
  os << '\n';
  for (const auto& r : rows) {
    os << r.k << ',' << r.populations << ',' << io::format_double(r.match_quality) << ','
       << io::format_double(r.match_quality_se) << ',' << io::format_double(r.dispersion) << ','
       << io::format_double(r.dispersion_se) << ',' << io::format_double(r.efficiency_product) << ','
       << io::format_double(r.efficiency_product_se) << ','
       << (r.predicted_efficiency ? io::format_double(*r.predicted_efficiency) : std::string("nan")) << '\n';
  }
  return os.str();
}

void validate_sweep_csv(const std::string& text) {
  const io::CsvTable t = io::parse_csv(text, "sweep.csv");
  const auto& header = sweep_header();
  if (t.rows.empty() || t.rows.front() != header) throw ValidationError("sweep.csv: bad header");
  if (t.rows.size() < 2) throw ValidationError("sweep.csv: no rows");
  for (std::size_t r = 1; r < t.rows.size(); ++r) {
    if (t.rows[r].size() != header.size()) throw ValidationError("sweep.csv: row " + std::to_string(r) + " has the wrong width");
    for (std::size_t c = 0; c < header.size(); ++c) {
      char* end = nullptr;
      const std::string& f = t.rows[r][c];
      const double v = std::strtod(f.c_str(), &end);
      if (f.empty() || *end != '\0') throw ValidationError("sweep.csv: non-numeric field in row " + std::to_string(r));
      if (c + 1 < header.size() && !std::isfinite(v)) throw ValidationError("sweep.csv: non-finite field in row " + std::to_string(r));
    }
  }
}

Json analyze(const SimulationConfig& config, const Population& population, const TransportMap& map) {
  config.validate();
  if (config.designs.empty()) throw ValidationError("analyze: no designs configured");
  const Index n = population.size();
  const RandomStream root(config.seed);
  const HtWeight h(config.marginal);
  const Index j = config.component;
  const Phi phi = [&h, j](const Vector& d) { return h(d)(j); };
  Json designs_json = Json::array();
  for (std::size_t d = 0; d < config.designs.size(); ++d) {
    const CouplingSpec& spec = config.designs[d];
    Json row{{"index", d}, {"coupling", to_string(spec.kind)}, {"k", spec.k}};
    try {
      if (n % spec.k != 0)
        throw ValidationError("tuple size must divide n (k=" + std::to_string(spec.k) + ", n=" + std::to_string(n) + ")");
      const Matching matching = match_k_tuples(population.covariates, spec.k, root.child(stream_tag::kMatching), config.matching);
      const LinearizedTarget table =
          influence_table_for(config, population, spec, root.child({stream_tag::kTable, static_cast<std::uint64_t>(d + 1)}));
      const MatchQualityReport q = match_quality(table.table, matching);
      const DispersionEstimate disp = dispersion_mc(spec, map, phi, config.sweep.dispersion_reps,
                                                    root.child({stream_tag::kAnalytics, static_cast<std::uint64_t>(d)}));
      const EfficiencyReport eff = efficiency_decomposition(spec, table.table, matching);
      const WorstCaseRate rate = worst_case_rate(spec.kind, spec.k);
      row["status"] = "ok";
      row["matching_discrepancy"] = matching.discrepancy;
      row["match_quality"] = Json{{"q", q.q}, {"v_iid", q.v_iid}, {"v_delta", q.v_delta}, {"v_g", q.v_g}, {"c", q.c}};
      row["dispersion_ht"] = Json{{"value", disp.value}, {"se", disp.se}, {"replications", disp.replications}};
      row["monte_carlo_only"] = eff.monte_carlo_only;
      if (eff.monte_carlo_only) {
        row["predicted_efficiency"] = nullptr;
      } else {
        row["predicted_efficiency"] = eff.predicted_efficiency;
        row["nominal_variance"] = eff.nominal_variance;
        row["nominal_variance_kind"] = eff.nominal_variance_kind;
      }
      Json rows = Json::array();
      for (const auto& e : eff.rows)
        rows.push_back(Json{{"label", e.label},
                            {"weight", e.weight},
                            {"dispersion", e.dispersion},
                            {"match_quality", e.match_quality},
                            {"v_iid", e.v_iid},
                            {"v_delta", e.v_delta},
                            {"v_g", e.v_g}});
      row["eigenspaces"] = rows;
      row["worst_case"] = Json{{"inf_dispersion", rate.id}, {"sup_dispersion", rate.sd}, {"rate", rate.rate}};
    } catch (const Error& e) {
      row["status"] = "failed";
      row["error"] = e.what();
    }
    designs_json.push_back(std::move(row));
  }
  Json j_out;
  j_out["schema_version"] = kSchemaVersion;
  j_out["command"] = "analyze";
  j_out["seed_lineage"] = Json{{"root_seed", config.seed},
                               {"matching", {stream_tag::kMatching}},
                               {"design_table", {stream_tag::kTable, "design + 1"}},
                               {"dispersion", {stream_tag::kAnalytics, "design"}}};
  j_out["config"] = config.to_json();
  j_out["designs"] = designs_json;
  return j_out;
}

// ---------------------------------------------------------------------------
// output schemas

namespace {

void require(const Json& obj, const char* key, bool (Json::*check)() const noexcept, const std::string& where) {
  if (!obj.contains(key) || !(obj.at(key).*check)())
    throw ValidationError(where + ": field '" + std::string(key) + "' missing or of the wrong type");
}

}  // namespace

void validate_report_json(const Json& report) {
  const std::string where = "report.json";
  if (!report.is_object()) throw ValidationError(where + ": not an object");
  require(report, "schema_version", &Json::is_number_integer, where);
  if (report.at("schema_version").get<int>() != kSchemaVersion) throw ValidationError(where + ": wrong schema_version");
  require(report, "command", &Json::is_string, where);
  require(report, "seed_lineage", &Json::is_object, where);
  require(report.at("seed_lineage"), "root_seed", &Json::is_number_unsigned, where + ".seed_lineage");
  require(report, "config", &Json::is_object, where);
  require(report, "designs", &Json::is_array, where);
  const std::string command = report.at("command").get<std::string>();
  for (std::size_t i = 0; i < report.at("designs").size(); ++i) {
    const Json& row = report.at("designs")[i];
    const std::string w = where + ".designs[" + std::to_string(i) + "]";
    require(row, "coupling", &Json::is_string, w);
    require(row, "k", &Json::is_number_integer, w);
    require(row, "status", &Json::is_string, w);
    if (row.at("status") != "ok") {
      require(row, "error", &Json::is_string, w);
      continue;
    }
    if (command == "simulate") {
      for (const char* key : {"theta_n", "mean_estimate", "bias", "bias_se", "empirical_variance", "empirical_variance_se",
                              "empirical_efficiency", "empirical_efficiency_se", "coverage", "coverage_se", "mean_sigma2",
                              "sigma2_ratio", "match_quality"})
        require(row, key, &Json::is_number, w);
      if (!row.contains("predicted_efficiency") || !(row.at("predicted_efficiency").is_number() || row.at("predicted_efficiency").is_null()))
        throw ValidationError(w + ": field 'predicted_efficiency' missing or of the wrong type");
    } else {
      require(row, "match_quality", &Json::is_object, w);
      require(row, "dispersion_ht", &Json::is_object, w);
      require(row, "eigenspaces", &Json::is_array, w);
    }
  }
}

void validate_potentials_json(const Json& j) {
  const std::string where = "potentials.json";
  require(j, "schema_version", &Json::is_number_integer, where);
  require(j, "points", &Json::is_array, where);
  require(j, "weights", &Json::is_array, where);
  require(j, "potentials", &Json::is_array, where);
  const std::size_t count = j.at("points").size();
  if (count == 0 || j.at("weights").size() != count || j.at("potentials").size() != count)
    throw ValidationError(where + ": points, weights and potentials differ in length");
  for (const auto& v : j.at("potentials"))
    if (!v.is_number() || !std::isfinite(v.get<double>())) throw ValidationError(where + ": non-finite potential");
}

}  // namespace couplekit
