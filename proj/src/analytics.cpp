#include "couplekit/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "couplekit/error.hpp"
#include "couplekit/parallel.hpp"
#include "couplekit/stats.hpp"

namespace couplekit {

namespace {

Matrix center_rows(const Matrix& values) {
  return values.colwise() - values.rowwise().mean();
}

double variance_of(const Vector& v) {
  if (v.size() == 0) return 0.0;
  return (v.array() - v.mean()).square().mean();
}

struct Moments2 {
  double mean = 0.0;
  double sd = 0.0;
};

Moments2 mean_sd(const std::vector<double>& x) {
  Moments2 m;
  m.mean = stats::mean(x);
  m.sd = std::sqrt(stats::sample_variance(x));
  return m;
}

}  // namespace

TupleSampler coupling_sampler(const CouplingSpec& spec, const TransportMap& map) {
  spec.validate();
  return [spec, map](RandomStream s) { return draw_treatments(spec, map, s).treatments; };
}

DispersionEstimate dispersion_mc(const TupleSampler& sampler, const Phi& phi, Index reps, RandomStream stream) {
  if (reps < 100) throw ValidationError("dispersion_mc: need at least 100 replications");
  const Matrix first = sampler(stream.child(0));
  const Index k = first.rows();
  if (k < 2) throw ValidationError("dispersion_mc: tuples must have k >= 2 slots");
  Matrix y(reps, k);
  parallel_for(static_cast<std::size_t>(reps), [&](std::size_t r) {
    const Matrix d = r == 0 ? first : sampler(stream.child(r));
    if (d.rows() != k) throw ValidationError("dispersion_mc: sampler returned tuples of varying size");
    for (Index i = 0; i < k; ++i) y(static_cast<Index>(r), i) = phi(d.row(i).transpose());
  });
  if (!y.allFinite()) throw NumericalError("dispersion_mc: phi produced non-finite values");
  std::vector<double> flat(y.data(), y.data() + y.size());
  const double mu = stats::mean(flat);
  std::vector<double> a(static_cast<std::size_t>(reps)), b(static_cast<std::size_t>(reps));
  const auto kd = static_cast<double>(k);
  for (Index r = 0; r < reps; ++r) {
    double sum = 0.0, sq = 0.0;
    for (Index i = 0; i < k; ++i) {
      const double v = y(r, i) - mu;
      sum += v;
      sq += v * v;
    }
    a[static_cast<std::size_t>(r)] = (sum * sum - sq) / (kd * (kd - 1.0));
    b[static_cast<std::size_t>(r)] = sq / kd;
  }
  DispersionEstimate est;
  est.replications = reps;
  const double mean_b = stats::mean(b);
  if (mean_b < 1e-12) {
    est.method = DispersionMethod::ClosedForm;
    return est;
  }
  const double rho = stats::mean(a) / mean_b;
  std::vector<double> z(a.size());
  for (std::size_t r = 0; r < a.size(); ++r) z[r] = a[r] - rho * b[r];
  const double se_rho = std::sqrt(stats::sample_variance(z) / static_cast<double>(reps)) / mean_b;
  est.value = -(kd - 1.0) * rho;
  est.se = (kd - 1.0) * se_rho;
  return est;
}

DispersionEstimate dispersion_mc(const CouplingSpec& spec, const TransportMap& map, const Phi& phi, Index reps,
                                 RandomStream stream) {
  return dispersion_mc(coupling_sampler(spec, map), phi, reps, stream);
}

double dispersion_closed_form(CouplingKind kind, Index k, const std::string& label) {
  if (k < 2) throw ValidationError("dispersion_closed_form: k must be at least 2");
  const auto kd = static_cast<double>(k);
  auto unknown = [&]() {
    return ValidationError("dispersion_closed_form: unknown eigenspace '" + label + "' for " + to_string(kind));
  };
  switch (kind) {
    case CouplingKind::IID:
      if (label == "any") return 0.0;
      throw unknown();
    case CouplingKind::CompleteRandomization:
      if (label == "any") return 1.0;
      throw unknown();
    case CouplingKind::LatinHypercube:
      if (label == "hist") return 1.0;
      if (label == "hist_perp") return 0.0;
      throw unknown();
    case CouplingKind::ShiftedLattice:
      if (label == "acyclic") return 1.0;
      if (label == "cyclic") return -(kd - 1.0);
      throw unknown();
    case CouplingKind::Antithetic:
      if (k != 2) throw ValidationError("dispersion_closed_form: Antithetic requires k = 2");
      if (label == "odd") return 1.0;
      if (label == "even") return -1.0;
      throw unknown();
    case CouplingKind::GaussianCopula: {
      std::string digits;
      if (label.rfind("hermite:", 0) == 0) digits = label.substr(8);
      else if (label.size() > 1 && label[0] == 'h') digits = label.substr(1);
      else if (k == 2 && label == "odd") return 1.0;
      else if (k == 2 && label == "even") return -1.0;
      else throw unknown();
      int m = 0;
      try {
        m = std::stoi(digits);
      } catch (...) {
        throw unknown();
      }
      if (m < 1) throw unknown();
      const double sign = (m % 2 == 1) ? 1.0 : -1.0;
      return sign * std::pow(kd - 1.0, 1.0 - m);
    }
  }
  throw unknown();
}

MatchQualityReport variance_parts(const Matrix& values, const Matching& matching) {
  if (matching.units() != values.rows()) throw ValidationError("match_quality: matching and table disagree on n");
  matching.validate();
  const Index n = values.rows();
  const Index k = matching.k;
  const auto R = static_cast<double>(values.cols());
  const Matrix c = center_rows(values);
  const auto members = matching.members();
  const auto groups = members.size();
  // Per group: sum var_i, var(sbar), sum_{i != j} cov_ij, sum_{i != j} var(s_i - s_j), centered sum.
  Matrix parts(static_cast<Index>(groups), 5);
  parallel_for(groups, [&](std::size_t g) {
    const auto& mem = members[g];
    Vector sum = Vector::Zero(values.cols());
    double var_sum = 0.0, cov_sum = 0.0, diff_sum = 0.0;
    for (Index a = 0; a < k; ++a) {
      const auto ca = c.row(mem[static_cast<std::size_t>(a)]);
      sum += ca.transpose();
      var_sum += ca.squaredNorm() / R;
      for (Index b = 0; b < k; ++b) {
        if (a == b) continue;
        const auto cb = c.row(mem[static_cast<std::size_t>(b)]);
        cov_sum += ca.dot(cb) / R;
        diff_sum += (ca - cb).squaredNorm() / R;
      }
    }
    const Vector gmean = sum / static_cast<double>(k);
    double centered = 0.0;
    for (Index a = 0; a < k; ++a) centered += (c.row(mem[static_cast<std::size_t>(a)]).transpose() - gmean).squaredNorm() / R;
    const auto gi = static_cast<Index>(g);
    parts(gi, 0) = var_sum;
    parts(gi, 1) = gmean.squaredNorm() / R;
    parts(gi, 2) = cov_sum;
    parts(gi, 3) = diff_sum;
    parts(gi, 4) = centered;
  });
  const auto nd = static_cast<double>(n);
  const auto kd = static_cast<double>(k);
  const double n_groups = nd / kd;
  MatchQualityReport rep;
  rep.v_iid = parts.col(0).sum() / nd;
  rep.v_g = parts.col(1).sum() / n_groups;
  rep.c = parts.col(2).sum() / nd;
  rep.v_delta = parts.col(3).sum() / (2.0 * nd * (kd - 1.0));
  rep.v_delta_centered = parts.col(4).sum() / ((kd - 1.0) * n_groups);
  rep.q = rep.v_iid > 0.0 ? 1.0 - rep.v_delta / rep.v_iid : 0.0;
  return rep;
}

MatchQualityReport match_quality(const FunctionTable& table, const Matching& matching) {
  MatchQualityReport rep = variance_parts(table.values, matching);
  const double scale = table.values.array().square().mean();
  if (!(rep.v_iid > 1e-14 * scale) || rep.v_iid == 0.0) throw ValidationError("match_quality: degenerate influence functions (v_iid = 0)");
  return rep;
}

double covariate_match_quality(const Vector& b, const Matching& matching) {
  if (matching.units() != b.size()) throw ValidationError("covariate_match_quality: matching and b disagree on n");
  matching.validate();
  const double var_n = variance_of(b);
  if (!(var_n > 0.0)) throw ValidationError("covariate_match_quality: b is constant (var_n(b) = 0)");
  const Index k = matching.k;
  double within = 0.0;
  for (const auto& mem : matching.members()) {
    double mean = 0.0;
    for (Index i : mem) mean += b(i);
    mean /= static_cast<double>(k);
    double ss = 0.0;
    for (Index i : mem) ss += (b(i) - mean) * (b(i) - mean);
    within += ss / static_cast<double>(k - 1);
  }
  const double n_groups = static_cast<double>(b.size()) / static_cast<double>(k);
  return 1.0 - within / n_groups / var_n;
}

ImbalanceEstimate imbalance_ratio(const CouplingSpec& spec, const TransportMap& map, const Phi& phi, const Vector& b,
                                  const Matching& matching, Index reps, RandomStream stream) {
  if (reps < 100) throw ValidationError("imbalance_ratio: need at least 100 replications");
  spec.validate();
  ImbalanceEstimate est;
  est.q_b = covariate_match_quality(b, matching);
  est.replications = reps;
  const Index n = b.size();
  const Vector bc = b.array() - b.mean();
  const auto members = matching.members();
  CouplingSpec iid = spec;
  iid.kind = CouplingKind::IID;
  std::vector<double> cov_g(static_cast<std::size_t>(reps)), cov_i(static_cast<std::size_t>(reps));
  parallel_for(static_cast<std::size_t>(reps), [&](std::size_t r) {
    RandomStream rs = stream.child(r);
    Vector phi_g(n), phi_i(n);
    for (std::size_t g = 0; g < members.size(); ++g) {
      const Matrix dg = draw_treatments(spec, map, rs.child({0, g})).treatments;
      for (std::size_t p = 0; p < members[g].size(); ++p) phi_g(members[g][p]) = phi(dg.row(static_cast<Index>(p)).transpose());
      if (spec.kind == CouplingKind::CompleteRandomization) {
        RandomStream s = rs.child({1, g});
        for (Index mem : members[g]) phi_i(mem) = phi(spec.marginal->sample(s));
      } else {
        const Matrix di = draw_treatments(iid, map, rs.child({1, g})).treatments;
        for (std::size_t p = 0; p < members[g].size(); ++p) phi_i(members[g][p]) = phi(di.row(static_cast<Index>(p)).transpose());
      }
    }
    const double cg = bc.dot(phi_g) / static_cast<double>(n);
    const double ci = bc.dot(phi_i) / static_cast<double>(n);
    cov_g[r] = cg * cg;
    cov_i[r] = ci * ci;
  });
  const Moments2 mg = mean_sd(cov_g);
  const Moments2 mi = mean_sd(cov_i);
  if (!(mi.mean > 0.0)) throw ValidationError("imbalance_ratio: phi is degenerate under F");
  est.imbalance = mg.mean;
  est.imbalance_iid = mi.mean;
  est.ratio = mg.mean / mi.mean;
  const auto rd = static_cast<double>(reps);
  est.se = est.ratio * std::sqrt((mg.sd * mg.sd) / (rd * mg.mean * mg.mean + 1e-300) + (mi.sd * mi.sd) / (rd * mi.mean * mi.mean));
  return est;
}

Projection histogram_projection(const Vector& values, const Vector& u, Index k) {
  if (values.size() != u.size()) throw ValidationError("histogram_projection: values and draws differ in length");
  if (k < 1) throw ValidationError("histogram_projection: k must be positive");
  Vector sums = Vector::Zero(k);
  Vector counts = Vector::Zero(k);
  std::vector<Index> bin(static_cast<std::size_t>(u.size()));
  for (Index r = 0; r < u.size(); ++r) {
    if (!(u(r) >= 0.0 && u(r) <= 1.0)) throw ValidationError("histogram_projection: draws must lie in [0, 1] (canonical marginal)");
    const Index j = std::min<Index>(static_cast<Index>(std::floor(u(r) * static_cast<double>(k))), k - 1);
    bin[static_cast<std::size_t>(r)] = j;
    sums(j) += values(r);
    counts(j) += 1.0;
  }
  for (Index j = 0; j < k; ++j) {
    if (counts(j) == 0.0) {
      std::ostringstream os;
      os << "histogram_projection: bin " << j << " of " << k << " is empty; increase the number of draws R";
      throw ValidationError(os.str());
    }
  }
  const double grand = values.mean();
  Projection p;
  p.projected.resize(values.size());
  for (Index r = 0; r < values.size(); ++r) {
    const Index j = bin[static_cast<std::size_t>(r)];
    p.projected(r) = sums(j) / counts(j) - grand;
  }
  const double v = variance_of(values);
  p.weight = v > 0.0 ? variance_of(p.projected) / v : 0.0;
  return p;
}

namespace {

CyclicProjection finish_cyclic(const Vector& values, const Vector& averages) {
  CyclicProjection p;
  const double grand = values.mean();
  p.cyclic = averages.array() - grand;
  p.acyclic = values - averages;
  const double v = variance_of(values);
  if (v > 0.0) {
    p.w_cyclic = variance_of(p.cyclic) / v;
    p.w_acyclic = variance_of(p.acyclic) / v;
  }
  return p;
}

}  // namespace

CyclicProjection cyclic_projection(const std::function<double(double)>& phi, const Vector& u, Index k) {
  if (k < 2) throw ValidationError("cyclic_projection: k must be at least 2");
  Vector values(u.size()), averages(u.size());
  for (Index r = 0; r < u.size(); ++r) {
    values(r) = phi(u(r));
    double acc = 0.0;
    for (Index l = 0; l < k; ++l) {
      double x = u(r) + static_cast<double>(l) / static_cast<double>(k);
      x -= std::floor(x);
      acc += phi(x);
    }
    averages(r) = acc / static_cast<double>(k);
  }
  return finish_cyclic(values, averages);
}

CyclicProjection cyclic_projection(const Vector& values, Index k) {
  if (k < 2) throw ValidationError("cyclic_projection: k must be at least 2");
  if (values.size() % k != 0) throw ValidationError("cyclic_projection: values are not laid out in orbits of length k");
  Vector averages(values.size());
  for (Index b = 0; b < values.size() / k; ++b) averages.segment(b * k, k).setConstant(values.segment(b * k, k).mean());
  return finish_cyclic(values, averages);
}

double hermite(Index m, double x) {
  if (m < 0) throw ValidationError("hermite: order must be nonnegative");
  double prev = 1.0;
  if (m == 0) return prev;
  double cur = x;
  for (Index j = 1; j < m; ++j) {
    const double next = (x * cur - std::sqrt(static_cast<double>(j)) * prev) / std::sqrt(static_cast<double>(j + 1));
    prev = cur;
    cur = next;
  }
  return cur;
}

HermiteProjection hermite_projection(const Vector& values, const Vector& z, Index max_order) {
  if (max_order < 1) throw ValidationError("hermite_projection: max order must be at least 1");
  if (values.size() != z.size() || values.size() < 2) throw ValidationError("hermite_projection: values and draws differ in length");
  const Vector c = values.array() - values.mean();
  const double v = c.squaredNorm() / static_cast<double>(c.size());
  HermiteProjection p;
  p.coefficients.resize(max_order);
  p.weights.resize(max_order);
  p.se.resize(max_order);
  for (Index m = 1; m <= max_order; ++m) {
    Vector prod(values.size());
    for (Index r = 0; r < values.size(); ++r) prod(r) = c(r) * hermite(m, z(r));
    const double mean = prod.mean();
    p.coefficients(m - 1) = mean;
    p.weights(m - 1) = v > 0.0 ? mean * mean / v : 0.0;
    p.se(m - 1) = std::sqrt(variance_of(prod) / static_cast<double>(prod.size()));
  }
  return p;
}

namespace {

struct Component {
  std::string label;
  double dispersion;
  Matrix values;
  /// Variance parts taken as the total minus the preceding components.
  bool residual = false;
};

std::vector<Component> hist_components(const FunctionTable& table, Index k) {
  const Vector u = table.uniforms.col(0);
  Matrix hist(table.units(), table.size());
  for (Index i = 0; i < table.units(); ++i) hist.row(i) = histogram_projection(table.values.row(i).transpose(), u, k).projected.transpose();
  return {{"hist", 1.0, hist}, {"hist_perp", 0.0, table.values - hist}};
}

std::vector<Component> orbit_components(const FunctionTable& table, Index orbit, const std::string& stay,
                                        const std::string& move, double d_stay, double d_move) {
  // Orbit average (invariant part) and the remainder.
  const Index R = table.size();
  Matrix avg(table.units(), R);
  for (Index b = 0; b < R / orbit; ++b) {
    const Vector m = table.values.middleCols(b * orbit, orbit).rowwise().mean();
    for (Index l = 0; l < orbit; ++l) avg.col(b * orbit + l) = m;
  }
  const Matrix invariant = avg.colwise() - table.values.rowwise().mean();
  return {{move, d_move, table.values - avg}, {stay, d_stay, invariant}};
}

std::vector<Component> hermite_components(const FunctionTable& table, Index k, Index order) {
  const Index R = table.size();
  Vector z(R);
  for (Index r = 0; r < R; ++r) z(r) = stats::normal_quantile(table.uniforms(r, 0));
  const Matrix c = center_rows(table.values);
  std::vector<Component> out;
  for (Index m = 1; m <= order; ++m) {
    Vector h(R);
    for (Index r = 0; r < R; ++r) h(r) = hermite(m, z(r));
    const Vector coef = c * h / static_cast<double>(R);
    // Unit-variance version of h_m on the table, so each part carries exactly coef_i^2.
    Vector e = h.array() - h.mean();
    e /= std::sqrt(e.squaredNorm() / static_cast<double>(R));
    out.push_back({"hermite:" + std::to_string(m), dispersion_closed_form(CouplingKind::GaussianCopula, k, "hermite:" + std::to_string(m)),
                   coef * e.transpose()});
  }
  out.push_back({"hermite_tail", 0.0, Matrix(), true});
  return out;
}

}  // namespace

EfficiencyReport efficiency_decomposition(const CouplingSpec& spec, const FunctionTable& table, const Matching& matching,
                                          Index hermite_order) {
  spec.validate();
  if (matching.k != spec.k) throw ValidationError("efficiency_decomposition: matching k differs from coupling k");
  if (matching.units() != table.units()) throw ValidationError("efficiency_decomposition: matching and table disagree on n");
  EfficiencyReport rep;
  rep.kind = spec.kind;
  rep.k = spec.k;
  const MatchQualityReport total = match_quality(table, matching);
  rep.v_iid = total.v_iid;
  const bool univariate = table.marginal.dimension() == 1 && table.uniforms.cols() == 1;
  std::vector<Component> comps;
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("efficiency_decomposition: ") + what);
  };
  switch (spec.kind) {
    case CouplingKind::IID:
      comps.push_back({"any", 0.0, table.values});
      break;
    case CouplingKind::CompleteRandomization:
      comps.push_back({"any", 1.0, table.values});
      break;
    case CouplingKind::LatinHypercube:
      if (!univariate) {
        rep.monte_carlo_only = true;
        return rep;
      }
      comps = hist_components(table, spec.k);
      break;
    case CouplingKind::ShiftedLattice:
      if (!univariate) {
        rep.monte_carlo_only = true;
        return rep;
      }
      need(table.layout == TableLayout::ShiftOrbit && table.orbit == spec.k,
           "rotation sampling needs a table built with the shift-orbit layout and orbit k");
      comps = orbit_components(table, spec.k, "cyclic", "acyclic", -(static_cast<double>(spec.k) - 1.0), 1.0);
      break;
    case CouplingKind::Antithetic:
      need(univariate && table.layout == TableLayout::ReflectionOrbit, "antithetic analysis needs a reflection-layout table");
      comps = orbit_components(table, 2, "even", "odd", -1.0, 1.0);
      break;
    case CouplingKind::GaussianCopula:
      if (!univariate) {
        rep.monte_carlo_only = true;
        return rep;
      }
      if (spec.k == 2) {
        need(table.layout == TableLayout::ReflectionOrbit, "Gaussian coupling with k = 2 needs a reflection-layout table");
        comps = orbit_components(table, 2, "even", "odd", -1.0, 1.0);
      } else {
        comps = hermite_components(table, spec.k, hermite_order);
      }
      break;
  }
  MatchQualityReport used;
  for (const auto& comp : comps) {
    MatchQualityReport p;
    if (comp.residual) {
      p.v_iid = std::max(0.0, total.v_iid - used.v_iid);
      p.v_delta = std::max(0.0, total.v_delta - used.v_delta);
      p.v_g = std::max(0.0, total.v_g - used.v_g);
    } else {
      p = variance_parts(comp.values, matching);
      used.v_iid += p.v_iid;
      used.v_delta += p.v_delta;
      used.v_g += p.v_g;
    }
    EigenRow row;
    row.label = comp.label;
    row.dispersion = comp.dispersion;
    row.weight = p.v_iid / total.v_iid;
    row.match_quality = p.v_iid > 1e-14 * total.v_iid ? 1.0 - p.v_delta / p.v_iid : 0.0;
    row.v_iid = p.v_iid;
    row.v_delta = p.v_delta;
    row.v_g = p.v_g;
    rep.predicted_efficiency += comp.dispersion * (p.v_iid - p.v_delta) / total.v_iid;
    rep.nominal_variance += comp.dispersion * p.v_delta + (1.0 - comp.dispersion) * p.v_iid;
    rep.rows.push_back(std::move(row));
  }
  const auto kd = static_cast<double>(spec.k);
  const auto find = [&](const std::string& label) -> const EigenRow& {
    for (const auto& r : rep.rows)
      if (r.label == label) return r;
    throw ValidationError("efficiency_decomposition: missing row " + label);
  };
  switch (spec.kind) {
    case CouplingKind::IID:
      rep.nominal_variance_kind = total.v_iid;
      break;
    case CouplingKind::CompleteRandomization:
      rep.nominal_variance_kind = total.v_delta;
      break;
    case CouplingKind::LatinHypercube:
      rep.nominal_variance_kind = find("hist").v_delta + find("hist_perp").v_iid;
      break;
    case CouplingKind::ShiftedLattice:
      rep.nominal_variance_kind = find("acyclic").v_delta + kd * find("cyclic").v_g;
      break;
    case CouplingKind::Antithetic:
      rep.nominal_variance_kind = find("odd").v_delta + 2.0 * find("even").v_g;
      break;
    case CouplingKind::GaussianCopula:
      if (spec.k == 2) {
        rep.nominal_variance_kind = find("odd").v_delta + 2.0 * find("even").v_g;
      } else {
        rep.nominal_variance_kind = rep.nominal_variance;
      }
      break;
  }
  return rep;
}

double total_variation(const Vector& grid, const Vector& values) {
  if (grid.size() != values.size()) throw ValidationError("total_variation: grid and values differ in length");
  if (grid.size() < 1000) throw ValidationError("total_variation: grid needs at least 1000 points");
  double tv = 0.0;
  for (Index r = 1; r < grid.size(); ++r) {
    if (!(grid(r) > grid(r - 1))) throw ValidationError("total_variation: unordered grid");
    tv += std::abs(values(r) - values(r - 1));
  }
  return tv;
}

double eta_tv(const Vector& variations, double v_iid) {
  if (!(v_iid > 0.0)) throw ValidationError("eta_tv: v_iid must be positive");
  return variations.squaredNorm() / static_cast<double>(variations.size()) / v_iid;
}

WorstCaseRate worst_case_rate(CouplingKind kind, Index k) {
  if (k < 2) throw ValidationError("worst_case_rate: k must be at least 2");
  const auto kd = static_cast<double>(k);
  WorstCaseRate w;
  switch (kind) {
    case CouplingKind::IID:
      w.id = 0.0;
      w.sd = 0.0;
      break;
    case CouplingKind::LatinHypercube:
      w.id = 0.0;
      w.sd = 1.0;
      break;
    case CouplingKind::GaussianCopula:
      w.id = -1.0 / (kd - 1.0);
      w.sd = 1.0;
      break;
    case CouplingKind::ShiftedLattice:
      w.id = -(kd - 1.0);
      w.sd = 1.0;
      break;
    case CouplingKind::Antithetic:
      if (k != 2) throw ValidationError("worst_case_rate: Antithetic requires k = 2");
      w.id = -1.0;
      w.sd = 1.0;
      break;
    case CouplingKind::CompleteRandomization:
      w.id = 1.0;
      w.sd = 1.0;
      break;
  }
  w.rate = 1.0 + std::max(-w.id, w.sd / (kd - 1.0));
  return w;
}

}  // namespace couplekit
