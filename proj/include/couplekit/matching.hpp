#pragma once

#include <vector>

#include "couplekit/core.hpp"

namespace couplekit {

/// Unit -> (group, position) bijection with groups of exactly k units.
struct Matching {
  Index k = 0;
  std::vector<Index> group;     // per unit, in [0, n/k)
  std::vector<Index> position;  // per unit, in [0, k)
  double discrepancy = 0.0;     // objective on the raw covariates

  Index units() const noexcept { return static_cast<Index>(group.size()); }
  Index groups() const noexcept { return k > 0 ? units() / k : 0; }
  /// members()[g][p] is the unit in group g at position p.
  std::vector<std::vector<Index>> members() const;
  void validate() const;
};

struct MatchingOptions {
  Index local_search_budget = 10000;
  /// Standardize covariate columns to unit variance before matching.
  bool standardize = true;
  /// Exhaustive optimum for n up to this size (0 disables).
  Index exact_max_units = 12;
};

/// Sum over groups of sum over ordered pairs (i, j) of |X_i - X_j|^2.
double matching_discrepancy(const Matrix& x, const Matching& matching);

/// Builds a matching from group labels, assigning positions by a random
/// permutation per group drawn from `stream`.
Matching matching_from_groups(const Matrix& x, Index k, const std::vector<Index>& group, RandomStream stream);

/// Partition into k-tuples minimizing the within-group discrepancy.
///
/// Greedy seed along the first principal direction, then best-improvement
/// pairwise swaps until no cross-group swap improves the objective or the
/// budget is exhausted. Small problems are solved exactly.
Matching match_k_tuples(const Matrix& x, Index k, RandomStream stream, const MatchingOptions& options = {});

/// Uniformly random partition into k-tuples.
Matching random_matching(const Matrix& x, Index k, RandomStream stream);

/// True when no single swap of two units in different groups lowers the
/// objective by more than `tol` (relative).
bool is_swap_optimal(const Matrix& x, const Matching& matching, bool standardize = true, double tol = 1e-9);

Matrix standardize_columns(const Matrix& x);

/// First principal direction of the centered rows (largest eigenvector).
Vector principal_direction(const Matrix& x);

}  // namespace couplekit
