#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "quiver/error.hpp"
#include "quiver/graph.hpp"
#include "quiver/sensitivity.hpp"

namespace quiver {

enum class CellStatus : unsigned char { infeasible, insufficient, estimated };

// Sigma over node order; nonzero only on edges that have an estimate.
class SensitivityMatrix {
 public:
  explicit SensitivityMatrix(const PipelineGraphSpec& spec)
      : n_(spec.size()), values_(n_ * n_, 0.0), status_(n_ * n_, CellStatus::infeasible) {
    for (const auto& [a, b] : spec.edges()) status_[spec.index_of(a) * n_ + spec.index_of(b)] = CellStatus::insufficient;
  }

  SensitivityMatrix(const PipelineGraphSpec& spec, const std::vector<EdgeStats>& stats) : SensitivityMatrix(spec) {
    for (const auto& s : stats)
      if (s.estimated()) set(spec.index_of(s.from), spec.index_of(s.to), s.sigma_hat);
  }

  std::size_t size() const { return n_; }
  double at(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
  CellStatus status(std::size_t i, std::size_t j) const { return status_[i * n_ + j]; }

  void set(std::size_t i, std::size_t j, double sigma) {
    if (status_[i * n_ + j] == CellStatus::infeasible)
      throw ValidationError("cannot assign a sensitivity to a non-edge");
    if (!(sigma >= 0)) throw ValidationError("sensitivity must be nonnegative");
    values_[i * n_ + j] = sigma;
    status_[i * n_ + j] = CellStatus::estimated;
  }

 private:
  std::size_t n_;
  std::vector<double> values_;
  std::vector<CellStatus> status_;
};

inline double path_sensitivity(const std::vector<std::string>& path, const SensitivityMatrix& m,
                               const PipelineGraphSpec& spec) {
  if (path.size() < 2) throw ValidationError("a path needs at least one edge");
  double prod = 1.0;
  for (std::size_t k = 0; k + 1 < path.size(); ++k) {
    const auto i = spec.index_of(path[k]), j = spec.index_of(path[k + 1]);
    if (!spec.has_edge(i, j)) throw ValidationError("path step (" + path[k] + "," + path[k + 1] + ") is not an edge");
    prod *= m.at(i, j);
  }
  return prod;
}

// Edges used for path enumeration: the loop is unrolled once by dropping the
// feedback edges into the controller.
inline bool forward_edge(const PipelineGraphSpec& spec, std::size_t i, std::size_t j) {
  return !spec.is_feedback_edge(i, j);
}

struct ScoredPath {
  std::vector<std::string> nodes;
  double value = 0.0;
};

inline std::vector<std::vector<std::size_t>> source_sink_paths(const PipelineGraphSpec& spec,
                                                               std::size_t cap = 100000) {
  std::vector<std::size_t> sources;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    bool has_parent = false;
    for (auto p : spec.parents(i)) has_parent = has_parent || forward_edge(spec, p, i);
    if (!has_parent) sources.push_back(i);
  }
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur;
  auto dfs = [&](auto&& self, std::size_t v) -> void {
    cur.push_back(v);
    bool extended = false;
    for (auto c : spec.children(v)) {
      if (!forward_edge(spec, v, c)) continue;
      extended = true;
      self(self, c);
    }
    if (!extended && cur.size() >= 2) {
      if (out.size() >= cap)
        throw ValidationError("path enumeration exceeds the cap of " + std::to_string(cap) + " paths");
      out.push_back(cur);
    }
    cur.pop_back();
  };
  for (auto s : sources) dfs(dfs, s);
  return out;
}

inline std::vector<ScoredPath> score_paths(const SensitivityMatrix& m, const PipelineGraphSpec& spec,
                                           std::size_t cap = 100000) {
  std::vector<ScoredPath> out;
  for (const auto& p : source_sink_paths(spec, cap)) {
    ScoredPath sp;
    sp.value = 1.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      sp.nodes.push_back(spec.name(p[k]));
      if (k + 1 < p.size()) sp.value *= m.at(p[k], p[k + 1]);
    }
    out.push_back(std::move(sp));
  }
  return out;
}

// Argmax of the path product over all source-to-sink paths; first path wins ties.
inline Estimate<ScoredPath> critical_amplification_path(const SensitivityMatrix& m, const PipelineGraphSpec& spec,
                                                        std::size_t cap = 100000) {
  const auto paths = score_paths(m, spec, cap);
  if (paths.empty()) return Estimate<ScoredPath>::absent("graph has no edges");
  std::size_t best = 0;
  for (std::size_t k = 1; k < paths.size(); ++k)
    if (paths[k].value > paths[best].value) best = k;
  return Estimate<ScoredPath>::of(paths[best]);
}

// Independence reference sqrt(sum_i sigma_ij^2) over the parents of j.
inline double joint_sensitivity(std::size_t j, const SensitivityMatrix& m, const PipelineGraphSpec& spec) {
  if (spec.parents(j).empty()) throw ValidationError("'" + spec.name(j) + "' has no parents");
  double s = 0.0;
  for (auto i : spec.parents(j)) s += m.at(i, j) * m.at(i, j);
  return std::sqrt(s);
}

struct ImpactMember {
  std::string node;
  double max_path = 0.0;
  bool via_bifurcation = false;
};

// Descendants j with some path product from i above alpha, plus loop-body nodes
// whose shape threshold lies below the measured perturbation magnitude.
inline std::vector<ImpactMember> impact_set(std::size_t i, const SensitivityMatrix& m, const PipelineGraphSpec& spec,
                                            double alpha, const std::map<std::string, double>& beta_shape = {},
                                            std::optional<double> magnitude = std::nullopt) {
  // Max path product by relaxation in dependency order over forward edges.
  std::vector<std::optional<double>> best(spec.size());
  best[i] = 1.0;
  std::vector<std::size_t> order;
  {
    std::vector<int> indeg(spec.size(), 0);
    for (std::size_t v = 0; v < spec.size(); ++v)
      for (auto c : spec.children(v))
        if (forward_edge(spec, v, c)) ++indeg[c];
    std::vector<std::size_t> ready;
    for (std::size_t v = 0; v < spec.size(); ++v)
      if (indeg[v] == 0) ready.push_back(v);
    while (!ready.empty()) {
      const auto v = ready.front();
      ready.erase(ready.begin());
      order.push_back(v);
      for (auto c : spec.children(v))
        if (forward_edge(spec, v, c) && --indeg[c] == 0) ready.push_back(c);
    }
  }
  for (auto v : order) {
    if (!best[v]) continue;
    for (auto c : spec.children(v)) {
      if (!forward_edge(spec, v, c)) continue;
      const double val = *best[v] * m.at(v, c);
      if (!best[c] || val > *best[c]) best[c] = val;
    }
  }
  std::vector<ImpactMember> out;
  for (std::size_t j = 0; j < spec.size(); ++j) {
    if (j == i) continue;
    if (best[j] && *best[j] > alpha) out.push_back({spec.name(j), *best[j], false});
  }
  if (magnitude) {
    for (std::size_t j = 0; j < spec.size(); ++j) {
      if (!spec.in_loop(j)) continue;
      auto it = beta_shape.find(spec.name(j));
      if (it == beta_shape.end() || !(it->second < *magnitude)) continue;
      const bool present = std::any_of(out.begin(), out.end(), [&](const auto& x) { return x.node == spec.name(j); });
      if (!present) out.push_back({spec.name(j), best[j].value_or(0.0), true});
    }
  }
  return out;
}

}  // namespace quiver
