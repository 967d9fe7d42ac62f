#include "couplekit/couplings.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "couplekit/error.hpp"

namespace couplekit {

namespace {

constexpr double kBelowOne = 1.0 - 0x1p-53;

double below_one(double u) { return std::min(u, kBelowOne); }

void check_k(Index k, Index minimum = 2) {
  if (k < minimum) throw ValidationError("coupling: tuple size k must be at least " + std::to_string(minimum));
}

void check_m(Index m) {
  if (m < 1) throw ValidationError("coupling: dimension m must be at least 1");
}

}  // namespace

std::string to_string(CouplingKind kind) {
  switch (kind) {
    case CouplingKind::IID:
      return "IID";
    case CouplingKind::GaussianCopula:
      return "GaussianCopula";
    case CouplingKind::LatinHypercube:
      return "LatinHypercube";
    case CouplingKind::ShiftedLattice:
      return "ShiftedLattice";
    case CouplingKind::Antithetic:
      return "Antithetic";
    case CouplingKind::CompleteRandomization:
      return "CompleteRandomization";
  }
  return "?";
}

CouplingKind coupling_kind_from_string(const std::string& name) {
  std::string s;
  for (char c : name) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "iid") return CouplingKind::IID;
  if (s == "gaussiancopula" || s == "gaussian") return CouplingKind::GaussianCopula;
  if (s == "latinhypercube" || s == "lhs") return CouplingKind::LatinHypercube;
  if (s == "shiftedlattice" || s == "lattice" || s == "rs" || s == "rotation") return CouplingKind::ShiftedLattice;
  if (s == "antithetic" || s == "av") return CouplingKind::Antithetic;
  if (s == "completerandomization" || s == "cr") return CouplingKind::CompleteRandomization;
  throw ValidationError("unknown coupling kind '" + name + "'");
}

void CouplingSpec::validate() const {
  check_k(k);
  check_m(m);
  switch (kind) {
    case CouplingKind::Antithetic:
      if (k != 2) throw ValidationError("coupling: Antithetic requires k = 2");
      if (m != 1) throw ValidationError("coupling: Antithetic requires m = 1");
      break;
    case CouplingKind::ShiftedLattice: {
      const auto vec = lattice_vector();
      if (static_cast<Index>(vec.size()) != m) throw ValidationError("coupling: generating vector length must equal m");
      for (auto zj : vec) {
        if (zj <= 0 || std::gcd(zj, static_cast<std::int64_t>(k)) != 1) {
          std::ostringstream os;
          os << "coupling: generating vector incompatible with k (z_j=" << zj << ", k=" << k << ")";
          throw ValidationError(os.str());
        }
      }
      break;
    }
    case CouplingKind::CompleteRandomization: {
      if (!marginal || marginal->kind() != MarginalKind::DiscretePoints)
        throw ValidationError("coupling: CompleteRandomization requires a discrete marginal");
      if (marginal->dimension() != m) throw ValidationError("coupling: marginal dimension differs from m");
      for (Index j = 0; j < marginal->weights().size(); ++j) {
        const double kf = static_cast<double>(k) * marginal->weights()(j);
        if (std::abs(kf - std::round(kf)) > 1e-9) {
          std::ostringstream os;
          os << "coupling: complete randomization infeasible, k * f_" << j << " = " << kf << " is not an integer";
          throw ValidationError(os.str());
        }
      }
      break;
    }
    default:
      break;
  }
}

std::vector<std::int64_t> CouplingSpec::lattice_vector() const {
  return z.empty() ? default_lattice_vector(k, m) : z;
}

std::vector<std::int64_t> default_lattice_vector(Index k, Index m) {
  check_k(k);
  check_m(m);
  std::vector<std::int64_t> best(static_cast<std::size_t>(m), 1);
  if (m == 1) return best;
  double best_score = -1.0;
  for (std::int64_t a = 1; a < k; ++a) {
    if (std::gcd(a, static_cast<std::int64_t>(k)) != 1) continue;
    std::vector<std::int64_t> cand(static_cast<std::size_t>(m));
    cand[0] = 1;
    for (std::size_t j = 1; j < cand.size(); ++j) cand[j] = (cand[j - 1] * a) % k;
    double score = std::numeric_limits<double>::infinity();
    for (Index i = 1; i < k; ++i) {
      double d2 = 0.0;
      for (auto zj : cand) {
        double x = static_cast<double>((i * zj) % k) / static_cast<double>(k);
        x = std::min(x, 1.0 - x);
        d2 += x * x;
      }
      score = std::min(score, d2);
    }
    if (score > best_score + 1e-15) {
      best_score = score;
      best = cand;
    }
  }
  return best;
}

UniformTuple sample_iid(Index k, Index m, RandomStream stream) {
  check_k(k, 1);
  check_m(m);
  UniformTuple t{Matrix(k, m)};
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < m; ++j) t.u(i, j) = stream.uniform();
  return t;
}

UniformTuple sample_gaussian_copula(Index k, Index m, RandomStream stream) {
  check_k(k);
  check_m(m);
  UniformTuple t{Matrix(k, m)};
  if (k == 2) {
    // (g_1 - g_2) / sqrt 2 ~ N(0, 1) and the second slot is its exact reflection.
    for (Index j = 0; j < m; ++j) {
      double u = 0.0;
      while (u == 0.0) u = below_one(0.5 * std::erfc(-stream.normal() / std::numbers::sqrt2));
      t.u(0, j) = u;
      t.u(1, j) = 1.0 - u;
    }
    return t;
  }
  const double scale = std::sqrt(static_cast<double>(k) / static_cast<double>(k - 1));
  Vector g(k);
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < k; ++i) g(i) = stream.normal();
    const double mean = g.mean();
    for (Index i = 0; i < k; ++i) {
      const double z = scale * (g(i) - mean);
      t.u(i, j) = below_one(0.5 * std::erfc(-z / std::numbers::sqrt2));
    }
  }
  return t;
}

UniformTuple sample_latin_hypercube(Index k, Index m, RandomStream stream) {
  check_k(k);
  check_m(m);
  UniformTuple t{Matrix(k, m)};
  for (Index j = 0; j < m; ++j) {
    const auto perm = stream.permutation(static_cast<std::size_t>(k));
    for (Index i = 0; i < k; ++i) {
      const double v = stream.uniform();
      t.u(i, j) = below_one((static_cast<double>(perm[static_cast<std::size_t>(i)]) + v) / static_cast<double>(k));
    }
  }
  return t;
}

UniformTuple sample_shifted_lattice(Index k, Index m, const std::vector<std::int64_t>& z, RandomStream stream) {
  CouplingSpec spec{.kind = CouplingKind::ShiftedLattice, .k = k, .m = m, .z = z};
  spec.validate();
  const auto vec = spec.lattice_vector();
  UniformTuple t{Matrix(k, m)};
  const auto perm = stream.permutation(static_cast<std::size_t>(k));
  Vector shift(m);
  for (Index j = 0; j < m; ++j) shift(j) = stream.uniform();
  for (Index i = 0; i < k; ++i) {
    const auto p = static_cast<std::int64_t>(perm[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < m; ++j) {
      double x = static_cast<double>((p * vec[static_cast<std::size_t>(j)]) % k) / static_cast<double>(k) + shift(j);
      x -= std::floor(x);
      t.u(i, j) = below_one(x);
    }
  }
  return t;
}

UniformTuple sample_antithetic(RandomStream stream) {
  double u = stream.uniform();
  while (u == 0.0) u = stream.uniform();
  UniformTuple t{Matrix(2, 1)};
  t.u(0, 0) = u;
  t.u(1, 0) = 1.0 - u;
  return t;
}

UniformTuple sample_uniform_tuple(const CouplingSpec& spec, RandomStream stream) {
  switch (spec.kind) {
    case CouplingKind::IID:
      return sample_iid(spec.k, spec.m, stream);
    case CouplingKind::GaussianCopula:
      return sample_gaussian_copula(spec.k, spec.m, stream);
    case CouplingKind::LatinHypercube:
      return sample_latin_hypercube(spec.k, spec.m, stream);
    case CouplingKind::ShiftedLattice:
      return sample_shifted_lattice(spec.k, spec.m, spec.z, stream);
    case CouplingKind::Antithetic:
      if (spec.k != 2 || spec.m != 1) throw ValidationError("coupling: Antithetic requires k = 2 and m = 1");
      return sample_antithetic(stream);
    case CouplingKind::CompleteRandomization:
      throw ValidationError("coupling: complete randomization assigns treatments directly, not uniforms");
  }
  return {};
}

DiscreteTuple sample_complete_randomization(const Marginal& marginal, Index k, RandomStream stream) {
  CouplingSpec spec{.kind = CouplingKind::CompleteRandomization, .k = k, .m = marginal.dimension(), .marginal = marginal};
  spec.validate();
  std::vector<Index> pool;
  pool.reserve(static_cast<std::size_t>(k));
  for (Index j = 0; j < marginal.weights().size(); ++j) {
    const auto count = static_cast<Index>(std::llround(static_cast<double>(k) * marginal.weights()(j)));
    for (Index c = 0; c < count; ++c) pool.push_back(j);
  }
  const auto perm = stream.permutation(pool.size());
  DiscreteTuple t;
  t.index.resize(pool.size());
  t.treatments.resize(k, marginal.dimension());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    t.index[i] = pool[perm[i]];
    t.treatments.row(static_cast<Index>(i)) = marginal.points().row(t.index[i]);
  }
  return t;
}

}  // namespace couplekit
