#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "couplekit/core.hpp"

namespace couplekit {

enum class CouplingKind { IID, GaussianCopula, LatinHypercube, ShiftedLattice, Antithetic, CompleteRandomization };

std::string to_string(CouplingKind kind);
/// Accepts the enum names and the short aliases iid, gaussian, lhs, rs, lattice, av, cr.
CouplingKind coupling_kind_from_string(const std::string& name);

struct CouplingSpec {
  CouplingKind kind = CouplingKind::IID;
  Index k = 2;
  Index m = 1;
  /// Generating vector for ShiftedLattice; empty selects the default.
  std::vector<std::int64_t> z;
  /// Discrete marginal for CompleteRandomization.
  std::optional<Marginal> marginal;

  void validate() const;
  /// Generating vector actually used by the lattice sampler.
  std::vector<std::int64_t> lattice_vector() const;
};

/// k x m uniforms in [0, 1), one row per slot.
struct UniformTuple {
  Matrix u;
};

UniformTuple sample_iid(Index k, Index m, RandomStream stream);
UniformTuple sample_gaussian_copula(Index k, Index m, RandomStream stream);
UniformTuple sample_latin_hypercube(Index k, Index m, RandomStream stream);
UniformTuple sample_shifted_lattice(Index k, Index m, const std::vector<std::int64_t>& z, RandomStream stream);
UniformTuple sample_antithetic(RandomStream stream);

/// Uniform tuple for every kind except CompleteRandomization.
UniformTuple sample_uniform_tuple(const CouplingSpec& spec, RandomStream stream);

struct DiscreteTuple {
  std::vector<Index> index;  // support row per slot
  Matrix treatments;         // k x m
};

/// Uniformly random allocation of k slots whose arm counts equal k * f_j.
DiscreteTuple sample_complete_randomization(const Marginal& marginal, Index k, RandomStream stream);

/// Korobov-type vector (1, a, a^2, ...) mod k, with a coprime to k chosen to
/// maximize the minimum toroidal distance between lattice points.
std::vector<std::int64_t> default_lattice_vector(Index k, Index m);

}  // namespace couplekit
