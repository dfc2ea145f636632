#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

#include "heatsvc/error.hpp"
#include "heatsvc/gmrf.hpp"

namespace heatsvc {

/// Municipality neighbourhood graph with canton membership.
struct AreaGraph {
  int n_areas = 0;
  std::vector<std::pair<int, int>> edges;  // a < b, sorted, unique
  std::vector<std::vector<int>> neighbours;
  std::vector<int> canton_of;
  std::vector<std::vector<int>> components;
  std::vector<int> component_of;

  int n_cantons() const {
    return canton_of.empty() ? 0 : *std::max_element(canton_of.begin(), canton_of.end()) + 1;
  }
  int degree(int i) const { return static_cast<int>(neighbours[static_cast<std::size_t>(i)].size()); }
};

/// Validates an undirected edge list over dense ids 0..n-1 and decomposes
/// the graph into connected components. Canton ids must be dense 0..C-1.
inline AreaGraph build_graph(int n_areas, const std::vector<std::pair<int, int>>& edge_list,
                             const std::vector<int>& canton_of) {
  if (n_areas <= 0) throw InputError("graph needs at least one area");
  if (static_cast<int>(canton_of.size()) != n_areas)
    throw InputError("canton map covers " + std::to_string(canton_of.size()) + " areas, graph has " + std::to_string(n_areas));
  AreaGraph g;
  g.n_areas = n_areas;
  g.canton_of = canton_of;
  std::set<int> cantons;
  for (int i = 0; i < n_areas; ++i) {
    if (canton_of[static_cast<std::size_t>(i)] < 0) throw InputError("area " + std::to_string(i) + " has no canton");
    cantons.insert(canton_of[static_cast<std::size_t>(i)]);
  }
  if (*cantons.rbegin() + 1 != static_cast<int>(cantons.size())) throw InputError("canton ids must be dense 0..C-1");

  std::set<std::pair<int, int>> uniq;
  for (auto [a, b] : edge_list) {
    if (a < 0 || b < 0 || a >= n_areas || b >= n_areas)
      throw InputError("edge (" + std::to_string(a) + "," + std::to_string(b) + ") references an unknown area");
    if (a == b) throw InputError("self-loop on area " + std::to_string(a));
    uniq.insert({std::min(a, b), std::max(a, b)});
  }
  g.edges.assign(uniq.begin(), uniq.end());
  g.neighbours.assign(static_cast<std::size_t>(n_areas), {});
  for (auto [a, b] : g.edges) {
    g.neighbours[static_cast<std::size_t>(a)].push_back(b);
    g.neighbours[static_cast<std::size_t>(b)].push_back(a);
  }
  for (auto& nb : g.neighbours) std::sort(nb.begin(), nb.end());

  g.component_of.assign(static_cast<std::size_t>(n_areas), -1);
  for (int s = 0; s < n_areas; ++s) {
    if (g.component_of[static_cast<std::size_t>(s)] >= 0) continue;
    const int id = static_cast<int>(g.components.size());
    std::vector<int> members{s};
    g.component_of[static_cast<std::size_t>(s)] = id;
    for (std::size_t head = 0; head < members.size(); ++head)
      for (int nb : g.neighbours[static_cast<std::size_t>(members[head])])
        if (g.component_of[static_cast<std::size_t>(nb)] < 0) {
          g.component_of[static_cast<std::size_t>(nb)] = id;
          members.push_back(nb);
        }
    std::sort(members.begin(), members.end());
    g.components.push_back(std::move(members));
  }
  return g;
}

/// ICAR structure matrix: degree on the diagonal, -1 for each edge.
inline SpMat icar_structure(const AreaGraph& g) {
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < g.n_areas; ++i) t.emplace_back(i, i, static_cast<double>(g.degree(i)));
  for (auto [a, b] : g.edges) {
    t.emplace_back(a, b, -1.0);
    t.emplace_back(b, a, -1.0);
  }
  SpMat q(g.n_areas, g.n_areas);
  q.setFromTriplets(t.begin(), t.end());
  return q;
}

/// ICAR structure with each connected component scaled so that the
/// sum-to-zero generalized inverse has marginal variances of geometric mean 1.
struct ScaledStructure {
  AreaGraph graph;
  SpMat structure;                      // unscaled Q
  SpMat scaled;                         // kappa_c * Q on each component
  std::vector<double> kappa;            // per component; 1 for singletons
  std::vector<double> scaled_variances; // diag of the scaled generalized inverse (0 for singletons)

  bool singleton(int area) const {
    return graph.components[static_cast<std::size_t>(graph.component_of[static_cast<std::size_t>(area)])].size() < 2;
  }
};

inline constexpr int kDenseScalingLimit = 3000;

namespace detail {

inline SpMat component_laplacian(const AreaGraph& g, const std::vector<int>& members) {
  std::vector<int> local(static_cast<std::size_t>(g.n_areas), -1);
  for (std::size_t i = 0; i < members.size(); ++i) local[static_cast<std::size_t>(members[i])] = static_cast<int>(i);
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const int a = members[i];
    t.emplace_back(static_cast<int>(i), static_cast<int>(i), static_cast<double>(g.degree(a)));
    for (int b : g.neighbours[static_cast<std::size_t>(a)]) t.emplace_back(static_cast<int>(i), local[static_cast<std::size_t>(b)], -1.0);
  }
  const auto n = static_cast<Eigen::Index>(members.size());
  SpMat q(n, n);
  q.setFromTriplets(t.begin(), t.end());
  return q;
}

// diag of the Moore-Penrose inverse of a connected Laplacian, using
// pinv(Q) = (Q + J/n)^{-1} - J/n.
inline Eigen::VectorXd pinv_diag_dense(const SpMat& q) {
  const Eigen::Index n = q.rows();
  Eigen::MatrixXd m = Eigen::MatrixXd(q).array() + 1.0 / static_cast<double>(n);
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NumericError("Laplacian completion is not positive definite");
  Eigen::MatrixXd linv = llt.matrixL().solve(Eigen::MatrixXd::Identity(n, n));
  return linv.colwise().squaredNorm().transpose().array() - 1.0 / static_cast<double>(n);
}

// Same quantity for large components: G = (Q + e_0 e_0')^{-1} is a
// generalized inverse, and pinv(Q) = P G P with P the centering projector.
inline Eigen::VectorXd pinv_diag_sparse(const SpMat& q) {
  const Eigen::Index n = q.rows();
  SpMat m = q;
  m.coeffRef(0, 0) += 1.0;
  Eigen::SimplicialLLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> llt(m);
  if (llt.info() != Eigen::Success) throw NumericError("pinned Laplacian is not positive definite");
  const Eigen::VectorXd g1 = llt.solve(Eigen::VectorXd::Ones(n));
  const double total = g1.sum();
  Eigen::VectorXd out(n);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
  const double dn = static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    e[i] = 1.0;
    const double gii = llt.solve(e)[i];
    e[i] = 0.0;
    out[i] = gii - 2.0 * g1[i] / dn + total / (dn * dn);
  }
  return out;
}

}  // namespace detail

/// Per-component scaling factor kappa = geometric mean of diag(pinv(Q_c)).
inline ScaledStructure bym2_scaling(const AreaGraph& g) {
  ScaledStructure s;
  s.graph = g;
  s.structure = icar_structure(g);
  s.kappa.assign(g.components.size(), 1.0);
  s.scaled_variances.assign(static_cast<std::size_t>(g.n_areas), 0.0);
  std::vector<double> node_scale(static_cast<std::size_t>(g.n_areas), 1.0);
  for (std::size_t c = 0; c < g.components.size(); ++c) {
    const auto& members = g.components[c];
    if (members.size() < 2) continue;
    SpMat qc = detail::component_laplacian(g, members);
    Eigen::VectorXd d = members.size() <= static_cast<std::size_t>(kDenseScalingLimit) ? detail::pinv_diag_dense(qc)
                                                                                      : detail::pinv_diag_sparse(qc);
    const double kappa = std::exp(d.array().log().mean());
    s.kappa[c] = kappa;
    for (std::size_t i = 0; i < members.size(); ++i) {
      node_scale[static_cast<std::size_t>(members[i])] = kappa;
      s.scaled_variances[static_cast<std::size_t>(members[i])] = d[static_cast<Eigen::Index>(i)] / kappa;
    }
  }
  std::vector<Eigen::Triplet<double>> t;
  for (int k = 0; k < s.structure.outerSize(); ++k)
    for (SpMat::InnerIterator it(s.structure, k); it; ++it)
      t.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value() * node_scale[static_cast<std::size_t>(it.row())]);
  s.scaled = SpMat(g.n_areas, g.n_areas);
  s.scaled.setFromTriplets(t.begin(), t.end());
  return s;
}

/// Eigenvalues of the scaled generalized inverse, one list over all areas:
/// a zero per component of size >= 2, 1/lambda for the other eigenvalues,
/// and 1 for singleton areas (purely unstructured there).
inline std::vector<double> scaled_inverse_eigenvalues(const ScaledStructure& s) {
  std::vector<double> out;
  const auto& g = s.graph;
  for (std::size_t c = 0; c < g.components.size(); ++c) {
    const auto& members = g.components[c];
    if (members.size() < 2) {
      out.push_back(1.0);
      continue;
    }
    Eigen::MatrixXd qc = Eigen::MatrixXd(detail::component_laplacian(g, members)) * s.kappa[c];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(qc, Eigen::EigenvaluesOnly);
    const Eigen::VectorXd& ev = es.eigenvalues();  // ascending; ev[0] ~ 0
    out.push_back(0.0);
    for (Eigen::Index i = 1; i < ev.size(); ++i) out.push_back(1.0 / ev[i]);
  }
  return out;
}

/// Sum-to-zero constraint rows on the areas of every component (one row per
/// component; a singleton's row pins its value to zero).
inline Eigen::MatrixXd component_sum_constraints(const AreaGraph& g) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g.components.size()), g.n_areas);
  for (std::size_t c = 0; c < g.components.size(); ++c)
    for (int m : g.components[c]) a(static_cast<Eigen::Index>(c), m) = 1.0;
  return a;
}

/// One pinned area per component, enough to make the scaled structure
/// positive definite.
inline std::vector<Eigen::Index> component_pins(const AreaGraph& g) {
  std::vector<Eigen::Index> pins;
  for (const auto& c : g.components) pins.push_back(c.front());
  return pins;
}

/// Constrained draw of the scaled ICAR field u* (zero on singletons).
inline Eigen::VectorXd sample_scaled_icar(const ScaledStructure& s, Rng& rng) {
  const auto& g = s.graph;
  std::vector<Eigen::Triplet<double>> t;
  for (int k = 0; k < s.scaled.outerSize(); ++k)
    for (SpMat::InnerIterator it(s.scaled, k); it; ++it)
      if (it.row() >= it.col()) t.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  for (int i = 0; i < g.n_areas; ++i)
    if (s.singleton(i)) t.emplace_back(i, i, 1.0);
  SpMat lower = lower_from_triplets(g.n_areas, t);
  ConstrainedFactor f;
  auto pins = component_pins(g);
  f.factorize(lower, component_sum_constraints(g), pins);
  return f.sample(rng);
}

/// sigma * (sqrt(1 - phi) v* + sqrt(phi) u*); singleton areas get sigma * v*.
inline Eigen::VectorXd sample_bym2(double sigma, double phi, const ScaledStructure& s, Rng& rng) {
  if (!(phi >= 0.0 && phi <= 1.0)) throw InputError("BYM2 mixing parameter must lie in [0, 1]");
  if (!(sigma >= 0.0)) throw InputError("BYM2 standard deviation must be non-negative");
  const int n = s.graph.n_areas;
  Eigen::VectorXd v = standard_normal(rng, n);
  Eigen::VectorXd u = sample_scaled_icar(s, rng);
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) {
    if (s.singleton(i))
      out[i] = sigma * v[i];
    else
      out[i] = sigma * (std::sqrt(1.0 - phi) * v[i] + std::sqrt(phi) * u[i]);
  }
  return out;
}

}  // namespace heatsvc
