#include "couplekit/transport.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "couplekit/error.hpp"
#include "couplekit/parallel.hpp"

namespace couplekit {

namespace {

constexpr Index kBlock = 4096;
constexpr double kBelowOne = 1.0 - 0x1p-53;

void check_cloud(const Matrix& points, const Vector& weights) {
  if (points.rows() < 1 || points.cols() < 1) throw ValidationError("semi-discrete: need at least one point");
  if (weights.size() != points.rows()) throw ValidationError("semi-discrete: weights length differs from point count");
  if (!points.allFinite() || !weights.allFinite()) throw ValidationError("semi-discrete: non-finite input");
  if ((weights.array() <= 0.0).any()) throw ValidationError("semi-discrete: weights must be positive");
  if (std::abs(weights.sum() - 1.0) > 1e-12) throw ValidationError("semi-discrete: weights must sum to 1");
  // Reuses the duplicate-row check of the discrete marginal.
  (void)Marginal::discrete(points, weights);
}

Index lookup(const Matrix& points, const Vector& offsets, const double* u) {
  Index best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (Index j = 0; j < points.rows(); ++j) {
    double s = offsets(j);
    for (Index c = 0; c < points.cols(); ++c) s -= 2.0 * u[c] * points(j, c);
    if (s < best_score) {
      best_score = s;
      best = j;
    }
  }
  return best;
}

struct Evaluation {
  Vector masses;
  double dual = 0.0;  // sampled dual up to the constant mean |u|^2
  Matrix laplacian;   // estimated negative dual Hessian, when requested
  Vector best;        // per-sample minimal score, when requested
};

// Cell masses and sampled dual of potentials `psi` on the rows of `samples`.
// With `hessian`, also estimates d m_j / d psi_l from the samples whose two
// best cells are within a small score gap of each other.
Evaluation evaluate(const Matrix& points, const Vector& weights, const Vector& psi, const Matrix& samples,
                    bool hessian = false) {
  const Index count = samples.rows();
  const Index n_points = points.rows();
  const Vector offsets = points.rowwise().squaredNorm() - psi;
  const Index blocks = (count + kBlock - 1) / kBlock;
  Matrix counts = Matrix::Zero(n_points, blocks);
  Vector block_min(blocks);
  std::vector<Index> first(hessian ? static_cast<std::size_t>(count) : 0);
  std::vector<Index> second(first.size());
  std::vector<double> gap(first.size());
  Vector best_score = hessian ? Vector(count) : Vector();
  parallel_for(static_cast<std::size_t>(blocks), [&](std::size_t bi) {
    const auto b = static_cast<Index>(bi);
    const Index begin = b * kBlock;
    const Index rows = std::min(kBlock, count - begin);
    Matrix scores = -2.0 * samples.middleRows(begin, rows) * points.transpose();
    scores.rowwise() += offsets.transpose();
    double total = 0.0;
    for (Index r = 0; r < rows; ++r) {
      Index arg = 0, arg2 = -1;
      double best = scores(r, 0);
      double best2 = std::numeric_limits<double>::infinity();
      for (Index j = 1; j < n_points; ++j) {
        const double v = scores(r, j);
        if (v < best) {
          best2 = best;
          arg2 = arg;
          best = v;
          arg = j;
        } else if (v < best2) {
          best2 = v;
          arg2 = j;
        }
      }
      counts(arg, b) += 1.0;
      total += best;
      if (hessian) {
        const auto idx = static_cast<std::size_t>(begin + r);
        first[idx] = arg;
        second[idx] = arg2;
        gap[idx] = best2 - best;
        best_score(begin + r) = best;
      }
    }
    block_min(b) = total;
  });
  Evaluation e;
  e.masses = counts.rowwise().sum() / static_cast<double>(count);
  e.dual = weights.dot(psi) + block_min.sum() / static_cast<double>(count);
  if (hessian) {
    e.best = std::move(best_score);
    // Slab half-width: the 5% quantile of the best/second-best score gaps.
    std::vector<double> sorted = gap;
    const auto q = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 20);
    std::nth_element(sorted.begin(), q, sorted.end());
    const double eps = std::max(*q, 1e-300);
    e.laplacian = Matrix::Zero(n_points, n_points);
    const double unit = 1.0 / (2.0 * eps * static_cast<double>(count));
    for (std::size_t i = 0; i < gap.size(); ++i) {
      if (gap[i] >= eps || second[i] < 0) continue;
      const Index a = first[i], b = second[i];
      e.laplacian(a, b) -= unit;
      e.laplacian(b, a) -= unit;
      e.laplacian(a, a) += unit;
      e.laplacian(b, b) += unit;
    }
  }
  return e;
}

// Newton-type direction: solves (L + ridge) x = g with x_0 = 0.
Vector newton_direction(const Matrix& laplacian, const Vector& grad) {
  const Index n = grad.size();
  const double mean_diag = std::max(laplacian.diagonal().mean(), 1e-12);
  const double ridge = 1e-3 * mean_diag;
  Matrix a = laplacian.bottomRightCorner(n - 1, n - 1);
  // Cells with no boundary samples get a plain gradient step.
  for (Index j = 0; j < n - 1; ++j)
    if (a(j, j) < ridge) a(j, j) = mean_diag;
  a.diagonal().array() += ridge;
  Vector x = Vector::Zero(n);
  x.tail(n - 1) = a.ldlt().solve(grad.tail(n - 1));
  return x;
}

// Raises the potential of every empty cell until it wins a few samples.
bool lift_empty_cells(const Matrix& points, const Matrix& samples, const Evaluation& eval, Vector& psi) {
  bool lifted = false;
  const Index count = samples.rows();
  for (Index j = 0; j < points.rows(); ++j) {
    if (eval.masses(j) > 0.0) continue;
    const double offset = points.row(j).squaredNorm() - psi(j);
    Vector deficit = (-2.0 * samples * points.row(j).transpose()).array() + offset;
    deficit -= eval.best;
    const auto q = static_cast<std::ptrdiff_t>(std::max<Index>(1, count / (4 * points.rows())));
    std::nth_element(deficit.data(), deficit.data() + q, deficit.data() + count);
    psi(j) += deficit(q);
    lifted = true;
  }
  return lifted;
}

double default_step_scale(const Matrix& points) {
  const Index n = points.rows();
  const auto m = static_cast<double>(points.cols());
  double nn_sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j)
      if (j != i) best = std::min(best, (points.row(i) - points.row(j)).norm());
    nn_sum += best;
  }
  const double r_d = nn_sum / static_cast<double>(n);
  const double r_u = std::pow(static_cast<double>(n), -1.0 / m);
  return r_d / (m * std::pow(r_u, m - 1.0));
}

}  // namespace

TransportMap TransportMap::quantile(Marginal marginal) {
  if (!marginal.has_quantile())
    throw ValidationError("quantile map: marginal is a multivariate point cloud; fit a semi-discrete map instead");
  TransportMap t;
  t.kind_ = TransportKind::Quantile;
  t.marginal_ = std::move(marginal);
  return t;
}

TransportMap TransportMap::semidiscrete(Matrix points, Vector weights, Vector potentials, FitDiagnostics diagnostics) {
  check_cloud(points, weights);
  if (potentials.size() != points.rows()) throw ValidationError("semi-discrete: potentials length differs from point count");
  TransportMap t;
  t.kind_ = TransportKind::SemiDiscrete;
  t.marginal_ = Marginal::discrete(points, weights);
  t.potentials_ = potentials.array() - potentials(0);
  t.offsets_ = points.rowwise().squaredNorm() - t.potentials_;
  t.points_ = std::move(points);
  t.weights_ = std::move(weights);
  t.diagnostics_ = std::move(diagnostics);
  return t;
}

Index TransportMap::dimension() const noexcept { return marginal_.dimension(); }

Index TransportMap::cell(const Vector& u) const {
  if (u.size() != dimension()) throw ValidationError("transport: uniform has the wrong dimension");
  if (kind_ == TransportKind::Quantile) return marginal_.quantile_index(u(0));
  return lookup(points_, offsets_, u.data());
}

Vector TransportMap::apply(const Vector& u) const {
  if (kind_ == TransportKind::Quantile) return marginal_.quantile(u);
  return points_.row(cell(u)).transpose();
}

TreatmentTuple quantile_map(const Marginal& marginal, const UniformTuple& tuple) {
  return apply_transport(TransportMap::quantile(marginal), tuple);
}

TreatmentTuple apply_transport(const TransportMap& map, const UniformTuple& tuple) {
  const Index k = tuple.u.rows();
  TreatmentTuple out;
  out.uniforms = tuple.u;
  out.treatments.resize(k, map.dimension());
  out.cell.assign(static_cast<std::size_t>(k), -1);
  for (Index i = 0; i < k; ++i) {
    const Vector u = tuple.u.row(i).transpose();
    const Index c = map.cell(u);
    out.cell[static_cast<std::size_t>(i)] = c;
    if (map.kind() == TransportKind::SemiDiscrete) {
      out.treatments.row(i) = map.points().row(c);
    } else {
      out.treatments.row(i) = map.apply(u).transpose();
    }
  }
  return out;
}

TreatmentTuple draw_treatments(const CouplingSpec& spec, const TransportMap& map, RandomStream stream) {
  if (spec.kind == CouplingKind::CompleteRandomization) {
    const Marginal& f = spec.marginal ? *spec.marginal : map.marginal();
    DiscreteTuple d = sample_complete_randomization(f, spec.k, stream);
    return TreatmentTuple{Matrix(0, 0), std::move(d.treatments), std::move(d.index)};
  }
  if (spec.m != map.dimension()) throw ValidationError("design: coupling dimension differs from the transport dimension");
  return apply_transport(map, sample_uniform_tuple(spec, stream));
}

Matrix jittered_grid(Index count, Index m, RandomStream stream) {
  if (m < 1 || count < 1) throw ValidationError("jittered_grid: need m >= 1 and count >= 1");
  Index g = std::max<Index>(1, static_cast<Index>(std::floor(std::pow(static_cast<double>(count), 1.0 / static_cast<double>(m)))));
  auto power = [m](Index base) {
    double p = 1.0;
    for (Index j = 0; j < m; ++j) p *= static_cast<double>(base);
    return p;
  };
  while (power(g + 1) <= static_cast<double>(count)) ++g;
  while (g > 1 && power(g) > static_cast<double>(count)) --g;
  const auto total = static_cast<Index>(power(g));
  Matrix s(total, m);
  for (Index c = 0; c < total; ++c) {
    Index rest = c;
    for (Index j = 0; j < m; ++j) {
      const Index digit = rest % g;
      rest /= g;
      s(c, j) = std::min((static_cast<double>(digit) + stream.uniform()) / static_cast<double>(g), kBelowOne);
    }
  }
  return s;
}

Vector cell_masses(const TransportMap& map, Index count, RandomStream stream) {
  if (map.kind() != TransportKind::SemiDiscrete) throw ValidationError("cell_masses: map is not semi-discrete");
  return evaluate(map.points(), map.weights(), map.potentials(), jittered_grid(count, map.dimension(), stream)).masses;
}

TransportMap fit_semidiscrete(const Matrix& points, const Vector& weights, RandomStream stream,
                              const SemiDiscreteOptions& options) {
  check_cloud(points, weights);
  if (options.mc_samples < 100) throw ValidationError("semi-discrete: mc_samples must be at least 100");
  if (!(options.tol > 0.0)) throw ValidationError("semi-discrete: tol must be positive");
  if (options.max_iterations < 1 || options.check_every < 1) throw ValidationError("semi-discrete: invalid iteration budget");
  const Index n = points.rows();
  const Index m = points.cols();
  FitDiagnostics diag;
  if (n == 1) {
    diag.converged = true;
    diag.samples_per_iteration = 0;
    return TransportMap::semidiscrete(points, weights, Vector::Zero(1), diag);
  }

  const Matrix check = jittered_grid(options.mc_samples, m, stream.child(0));
  diag.check_samples = check.rows();
  double scale = options.step_scale > 0.0 ? options.step_scale : default_step_scale(points);

  Vector psi = Vector::Zero(n);
  Vector psi_avg = psi;
  Index avg_count = 0;
  Index next_reset = 1;
  Vector best_psi = psi;
  double best_error = (evaluate(points, weights, psi, check).masses - weights).cwiseAbs().maxCoeff();

  for (Index t = 1; t <= options.max_iterations && best_error > options.tol; ++t) {
    diag.iterations = t;
    const Matrix batch = jittered_grid(options.mc_samples, m, stream.child({1, static_cast<std::uint64_t>(t)}));
    diag.samples_per_iteration = batch.rows();
    Evaluation old_eval = evaluate(points, weights, psi, batch, options.preconditioned);
    if (options.preconditioned && lift_empty_cells(points, batch, old_eval, psi))
      old_eval = evaluate(points, weights, psi, batch, true);
    const Vector grad = weights - old_eval.masses;
    const double old_error = grad.cwiseAbs().maxCoeff();
    Vector direction = grad;
    double eta = scale / std::sqrt(static_cast<double>(t));
    if (options.preconditioned) {
      direction = newton_direction(old_eval.laplacian, grad);
      eta = 1.0;
    }
    bool accepted = false;
    double batch_error = old_error;
    for (int attempt = 0; attempt < (options.preconditioned ? 6 : 1); ++attempt, eta *= 0.5) {
      const Vector proposal = psi + eta * direction;
      const Evaluation new_eval = evaluate(points, weights, proposal, batch);
      const double new_error = (weights - new_eval.masses).cwiseAbs().maxCoeff();
      if (new_eval.dual >= old_eval.dual && (!options.preconditioned || new_error <= old_error)) {
        diag.dual_gains.push_back(new_eval.dual - old_eval.dual);
        psi = proposal;
        batch_error = new_error;
        accepted = true;
        break;
      }
    }
    if (accepted) {
      ++diag.accepted;
      if (diag.accepted == next_reset) {
        psi_avg = psi;
        avg_count = 1;
        next_reset *= 2;
      } else {
        ++avg_count;
        psi_avg += (psi - psi_avg) / static_cast<double>(avg_count);
      }
    } else if (!options.preconditioned) {
      scale *= 0.5;
    }
    if (t % options.check_every == 0 || t == options.max_iterations || batch_error <= 0.5 * options.tol) {
      for (const Vector* cand : {&psi, &psi_avg}) {
        const double err = (evaluate(points, weights, *cand, check).masses - weights).cwiseAbs().maxCoeff();
        if (err < best_error) {
          best_error = err;
          best_psi = *cand;
        }
      }
    }
  }
  diag.mass_error = best_error;
  diag.step_scale = scale;
  diag.converged = best_error <= options.tol;
  if (!diag.converged) {
    std::ostringstream os;
    os << "semi-discrete fit did not converge in " << options.max_iterations << " iterations; best mass error "
       << best_error << " > tol " << options.tol;
    throw NumericalError(os.str());
  }
  return TransportMap::semidiscrete(points, weights, best_psi, diag);
}

MonotonicityResult cyclic_monotonicity_check(const std::function<Vector(const Vector&)>& map, Index m, Index points,
                                             Index trials, RandomStream stream, double tol) {
  if (points < 2) throw ValidationError("cyclic monotonicity: need at least 2 points");
  MonotonicityResult res;
  res.trials = trials;
  res.worst_margin = std::numeric_limits<double>::infinity();
  for (Index t = 0; t < trials; ++t) {
    RandomStream s = stream.child(static_cast<std::uint64_t>(t));
    Matrix u(points, m);
    for (Index l = 0; l < points; ++l)
      for (Index j = 0; j < m; ++j) u(l, j) = s.uniform();
    std::vector<Vector> image;
    image.reserve(static_cast<std::size_t>(points));
    for (Index l = 0; l < points; ++l) image.push_back(map(u.row(l).transpose()));
    const auto sigma = s.permutation(static_cast<std::size_t>(points));
    double lhs = 0.0, rhs = 0.0;
    for (Index l = 0; l < points; ++l) {
      lhs += u.row(l).dot(image[static_cast<std::size_t>(l)]);
      rhs += u.row(l).dot(image[sigma[static_cast<std::size_t>(l)]]);
    }
    const double margin = lhs - rhs;
    res.worst_margin = std::min(res.worst_margin, margin);
    if (margin < -tol) ++res.violations;
  }
  res.passed = res.violations == 0;
  return res;
}

MonotonicityResult cyclic_monotonicity_check(const TransportMap& map, Index points, Index trials, RandomStream stream,
                                             double tol) {
  return cyclic_monotonicity_check([&map](const Vector& u) { return map.apply(u); }, map.dimension(), points, trials,
                                   stream, tol);
}

Matrix discretize_constrained(const Vector& lower, const Vector& upper, const std::function<double(const Vector&)>& cost,
                              double budget, Index count, RandomStream stream, Index max_proposals) {
  if (lower.size() != upper.size() || lower.size() < 1) throw ValidationError("discretize: box bounds have mismatched sizes");
  if ((upper.array() <= lower.array()).any()) throw ValidationError("discretize: box must have positive width");
  if (count < 1) throw ValidationError("discretize: count must be positive");
  const Index cap = max_proposals > 0 ? max_proposals : 1000 * count;
  Matrix out(count, lower.size());
  Index accepted = 0;
  Index proposed = 0;
  while (accepted < count) {
    if (proposed >= cap) {
      std::ostringstream os;
      os << "discretize: accepted only " << accepted << " of " << count << " points after " << proposed << " proposals";
      throw NumericalError(os.str());
    }
    ++proposed;
    Vector d(lower.size());
    for (Index j = 0; j < d.size(); ++j) d(j) = lower(j) + stream.uniform() * (upper(j) - lower(j));
    if (cost(d) <= budget) out.row(accepted++) = d.transpose();
  }
  return out;
}

void save_transport_json(const TransportMap& map, const std::string& path) {
  if (map.kind() != TransportKind::SemiDiscrete) throw ValidationError("save_transport_json: only semi-discrete maps carry potentials");
  nlohmann::json j;
  j["schema_version"] = 1;
  j["kind"] = "SemiDiscrete";
  j["dimension"] = map.dimension();
  auto& pts = j["points"] = nlohmann::json::array();
  for (Index r = 0; r < map.points().rows(); ++r) {
    std::vector<double> row;
    for (Index c = 0; c < map.points().cols(); ++c) row.push_back(map.points()(r, c));
    pts.push_back(row);
  }
  j["weights"] = std::vector<double>(map.weights().data(), map.weights().data() + map.weights().size());
  j["potentials"] = std::vector<double>(map.potentials().data(), map.potentials().data() + map.potentials().size());
  const auto& d = map.diagnostics();
  j["diagnostics"] = {{"mass_error", d.mass_error},
                      {"samples_per_iteration", d.samples_per_iteration},
                      {"check_samples", d.check_samples},
                      {"iterations", d.iterations},
                      {"accepted", d.accepted},
                      {"step_scale", d.step_scale},
                      {"converged", d.converged}};
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << std::setprecision(17) << j.dump(2) << '\n';
}

TransportMap load_transport_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
    if (j.at("kind").get<std::string>() != "SemiDiscrete") throw ValidationError(path + ": unsupported transport kind");
    const auto pts = j.at("points").get<std::vector<std::vector<double>>>();
    const auto w = j.at("weights").get<std::vector<double>>();
    const auto psi = j.at("potentials").get<std::vector<double>>();
    if (pts.empty()) throw ValidationError(path + ": no points");
    Matrix p(static_cast<Index>(pts.size()), static_cast<Index>(pts.front().size()));
    for (std::size_t r = 0; r < pts.size(); ++r) {
      if (pts[r].size() != pts.front().size()) throw ValidationError(path + ": ragged point rows");
      for (std::size_t c = 0; c < pts[r].size(); ++c) p(static_cast<Index>(r), static_cast<Index>(c)) = pts[r][c];
    }
    FitDiagnostics d;
    if (j.contains("diagnostics")) {
      const auto& jd = j["diagnostics"];
      d.mass_error = jd.value("mass_error", 0.0);
      d.samples_per_iteration = jd.value("samples_per_iteration", Index{0});
      d.check_samples = jd.value("check_samples", Index{0});
      d.iterations = jd.value("iterations", Index{0});
      d.accepted = jd.value("accepted", Index{0});
      d.step_scale = jd.value("step_scale", 0.0);
      d.converged = jd.value("converged", false);
    }
    return TransportMap::semidiscrete(std::move(p), Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size())),
                                      Eigen::Map<const Vector>(psi.data(), static_cast<Index>(psi.size())), d);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": malformed transport JSON (" + e.what() + ")");
  }
}

}  // namespace couplekit
