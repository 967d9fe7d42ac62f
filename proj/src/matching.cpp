#include "couplekit/matching.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "couplekit/error.hpp"

namespace couplekit {

namespace {

void check_shape(Index n, Index k) {
  if (k < 2) throw ValidationError("matching: tuple size k must be at least 2");
  if (k > n) {
    std::ostringstream os;
    os << "matching: tuple size k=" << k << " exceeds n=" << n;
    throw ValidationError(os.str());
  }
  if (n % k != 0) {
    std::ostringstream os;
    os << "matching: tuple size must divide n (k=" << k << ", n=" << n << ")";
    throw ValidationError(os.str());
  }
}

Matrix squared_distances(const Matrix& x) {
  const Index n = x.rows();
  Matrix d(n, n);
  for (Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Index j = i + 1; j < n; ++j) {
      const double v = (x.row(i) - x.row(j)).squaredNorm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

double objective(const Matrix& dist, const std::vector<Index>& group, Index groups) {
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(groups));
  for (std::size_t i = 0; i < group.size(); ++i) members[static_cast<std::size_t>(group[i])].push_back(static_cast<Index>(i));
  double total = 0.0;
  for (const auto& g : members)
    for (Index a : g)
      for (Index b : g) total += dist(a, b);
  return total;
}

// Groups are renumbered in order of their smallest member.
std::vector<Index> canonical_labels(const std::vector<Index>& group) {
  std::vector<Index> relabel(group.size(), -1);
  std::vector<Index> out(group.size());
  Index next = 0;
  for (std::size_t i = 0; i < group.size(); ++i) {
    auto& slot = relabel[static_cast<std::size_t>(group[i])];
    if (slot < 0) slot = next++;
    out[i] = slot;
  }
  return out;
}

std::vector<Index> exact_partition(const Matrix& dist, Index k) {
  const Index n = dist.rows();
  const std::size_t full = (std::size_t{1} << n) - 1;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> best(full + 1, inf);
  std::vector<std::size_t> choice(full + 1, 0);
  best[full] = 0.0;
  // best[mask] = optimal cost of partitioning the complement of mask.
  for (std::size_t mask = full; mask-- > 0;) {
    if (std::popcount(mask) % k != 0) continue;
    Index first = 0;
    while (mask >> first & 1U) ++first;
    std::vector<Index> free;
    for (Index j = first + 1; j < n; ++j)
      if (!(mask >> j & 1U)) free.push_back(j);
    const Index need = k - 1;
    std::vector<Index> pick(static_cast<std::size_t>(need));
    std::iota(pick.begin(), pick.end(), Index{0});
    if (static_cast<Index>(free.size()) < need) continue;
    while (true) {
      std::size_t group_mask = std::size_t{1} << first;
      double cost = 0.0;
      for (Index a = 0; a < need; ++a) {
        const Index ua = free[static_cast<std::size_t>(pick[static_cast<std::size_t>(a)])];
        group_mask |= std::size_t{1} << ua;
        cost += 2.0 * dist(first, ua);
        for (Index b = a + 1; b < need; ++b) cost += 2.0 * dist(ua, free[static_cast<std::size_t>(pick[static_cast<std::size_t>(b)])]);
      }
      const double total = cost + best[mask | group_mask];
      if (total < best[mask]) {
        best[mask] = total;
        choice[mask] = group_mask;
      }
      Index pos = need - 1;
      while (pos >= 0 && pick[static_cast<std::size_t>(pos)] == static_cast<Index>(free.size()) - need + pos) --pos;
      if (pos < 0) break;
      ++pick[static_cast<std::size_t>(pos)];
      for (Index q = pos + 1; q < need; ++q) pick[static_cast<std::size_t>(q)] = pick[static_cast<std::size_t>(q - 1)] + 1;
    }
  }
  std::vector<Index> group(static_cast<std::size_t>(n), -1);
  std::size_t mask = 0;
  Index label = 0;
  while (mask != full) {
    const std::size_t g = choice[mask];
    for (Index j = 0; j < n; ++j)
      if (g >> j & 1U) group[static_cast<std::size_t>(j)] = label;
    ++label;
    mask |= g;
  }
  return group;
}

std::vector<Index> swap_search(const Matrix& dist, Index k, std::vector<Index> group, Index budget) {
  const Index n = dist.rows();
  const Index groups = n / k;
  // to_group(i, g) = sum of squared distances from unit i to members of group g.
  Matrix to_group = Matrix::Zero(n, groups);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) to_group(i, group[static_cast<std::size_t>(j)]) += dist(i, j);
  const double scale = std::max(1.0, dist.maxCoeff());
  for (Index iter = 0; iter < budget; ++iter) {
    double best_delta = -1e-12 * scale;
    Index bu = -1, bv = -1;
    for (Index u = 0; u < n; ++u) {
      const Index a = group[static_cast<std::size_t>(u)];
      for (Index v = u + 1; v < n; ++v) {
        const Index b = group[static_cast<std::size_t>(v)];
        if (a == b) continue;
        const double delta =
            2.0 * (to_group(v, a) - to_group(u, a) + to_group(u, b) - to_group(v, b) - 2.0 * dist(u, v));
        if (delta < best_delta) {
          best_delta = delta;
          bu = u;
          bv = v;
        }
      }
    }
    if (bu < 0) break;
    const Index a = group[static_cast<std::size_t>(bu)];
    const Index b = group[static_cast<std::size_t>(bv)];
    for (Index i = 0; i < n; ++i) {
      const double shift = dist(i, bv) - dist(i, bu);
      to_group(i, a) += shift;
      to_group(i, b) -= shift;
    }
    group[static_cast<std::size_t>(bu)] = b;
    group[static_cast<std::size_t>(bv)] = a;
  }
  return group;
}

}  // namespace

std::vector<std::vector<Index>> Matching::members() const {
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(groups()), std::vector<Index>(static_cast<std::size_t>(k), -1));
  for (Index i = 0; i < units(); ++i)
    out[static_cast<std::size_t>(group[static_cast<std::size_t>(i)])][static_cast<std::size_t>(position[static_cast<std::size_t>(i)])] = i;
  return out;
}

void Matching::validate() const {
  const Index n = units();
  check_shape(n, k);
  if (position.size() != group.size()) throw ValidationError("matching: group and position arrays differ in length");
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (Index i = 0; i < n; ++i) {
    const Index g = group[static_cast<std::size_t>(i)];
    const Index p = position[static_cast<std::size_t>(i)];
    if (g < 0 || g >= groups() || p < 0 || p >= k) throw ValidationError("matching: group or position out of range");
    auto& s = seen[static_cast<std::size_t>(g * k + p)];
    if (s) throw ValidationError("matching: two units share a (group, position) slot");
    s = 1;
  }
}

Matrix standardize_columns(const Matrix& x) {
  Matrix out = x;
  for (Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    const double var = (x.col(c).array() - mean).square().mean();
    out.col(c).array() -= mean;
    if (var > 0.0) out.col(c) /= std::sqrt(var);
  }
  return out;
}

Vector principal_direction(const Matrix& x) {
  const Index p = x.cols();
  if (p == 1) return Vector::Ones(1);
  const Matrix centered = x.rowwise() - x.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(centered.transpose() * centered);
  Vector v = eig.eigenvectors().col(p - 1);
  Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v(arg) < 0) v = -v;
  return v;
}

double matching_discrepancy(const Matrix& x, const Matching& matching) {
  if (matching.units() != x.rows()) throw ValidationError("matching_discrepancy: matching and covariates disagree on n");
  matching.validate();
  double total = 0.0;
  for (const auto& g : matching.members())
    for (Index a : g)
      for (Index b : g) total += (x.row(a) - x.row(b)).squaredNorm();
  return total;
}

Matching matching_from_groups(const Matrix& x, Index k, const std::vector<Index>& group, RandomStream stream) {
  const Index n = x.rows();
  check_shape(n, k);
  if (static_cast<Index>(group.size()) != n) throw ValidationError("matching: label count differs from n");
  Matching m;
  m.k = k;
  m.group = canonical_labels(group);
  m.position.assign(static_cast<std::size_t>(n), -1);
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(n / k));
  for (Index i = 0; i < n; ++i) members[static_cast<std::size_t>(m.group[static_cast<std::size_t>(i)])].push_back(i);
  for (std::size_t g = 0; g < members.size(); ++g) {
    if (static_cast<Index>(members[g].size()) != k) throw ValidationError("matching: every group needs exactly k units");
    const auto perm = stream.child(g).permutation(static_cast<std::size_t>(k));
    for (std::size_t p = 0; p < perm.size(); ++p) m.position[static_cast<std::size_t>(members[g][p])] = static_cast<Index>(perm[p]);
  }
  m.discrepancy = matching_discrepancy(x, m);
  return m;
}

Matching match_k_tuples(const Matrix& x, Index k, RandomStream stream, const MatchingOptions& options) {
  const Index n = x.rows();
  if (x.cols() < 1) throw ValidationError("matching: need at least one covariate");
  check_shape(n, k);
  if (!x.allFinite()) throw ValidationError("matching: non-finite covariates");
  const Matrix z = options.standardize ? standardize_columns(x) : x;
  const Matrix dist = squared_distances(z);
  std::vector<Index> group(static_cast<std::size_t>(n));
  if (k == n) {
    std::fill(group.begin(), group.end(), 0);
  } else if (n <= options.exact_max_units && n <= 20) {
    group = exact_partition(dist, k);
  } else {
    const Vector dir = principal_direction(z);
    const Vector score = z * dir;
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return score(a) < score(b); });
    for (Index r = 0; r < n; ++r) group[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r / k;
    group = swap_search(dist, k, std::move(group), options.local_search_budget);
  }
  return matching_from_groups(x, k, group, stream);
}

Matching random_matching(const Matrix& x, Index k, RandomStream stream) {
  const Index n = x.rows();
  check_shape(n, k);
  const auto perm = stream.child(0).permutation(static_cast<std::size_t>(n));
  std::vector<Index> group(static_cast<std::size_t>(n));
  for (std::size_t r = 0; r < perm.size(); ++r) group[perm[r]] = static_cast<Index>(r) / k;
  return matching_from_groups(x, k, group, stream.child(1));
}

bool is_swap_optimal(const Matrix& x, const Matching& matching, bool standardize, double tol) {
  const Matrix z = standardize ? standardize_columns(x) : x;
  const Matrix dist = squared_distances(z);
  const Index n = x.rows();
  const double base = objective(dist, matching.group, matching.groups());
  const double slack = tol * std::max(1.0, base);
  std::vector<Index> group = matching.group;
  for (Index u = 0; u < n; ++u) {
    for (Index v = u + 1; v < n; ++v) {
      if (group[static_cast<std::size_t>(u)] == group[static_cast<std::size_t>(v)]) continue;
      std::swap(group[static_cast<std::size_t>(u)], group[static_cast<std::size_t>(v)]);
      const double trial = objective(dist, group, matching.groups());
      std::swap(group[static_cast<std::size_t>(u)], group[static_cast<std::size_t>(v)]);
      if (trial < base - slack) return false;
    }
  }
  return true;
}

}  // namespace couplekit
