#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "quiver/distance.hpp"
#include "quiver/error.hpp"
#include "quiver/graph.hpp"
#include "quiver/sensitivity.hpp"
#include "quiver/trace.hpp"

namespace quiver {

struct DivergenceTriple {
  std::size_t d_iter = 0;
  std::size_t d_shape = 0;
  double d_output = 0.0;
  bool d_struct = false;
  std::vector<std::pair<std::size_t, std::size_t>> counts;  // (c, c') per node

  bool operator==(const DivergenceTriple&) const = default;
};

// Raw node weights w_i for D_output; missing nodes weigh 1. Normalized over
// the nodes present in both traces.
using NodeWeights = std::map<std::string, double>;

inline DivergenceTriple trajectory_divergence(const Trace& a, const Trace& b, const PipelineGraphSpec& spec,
                                              const PairNodeDistances& dist, const NodeWeights& weights = {}) {
  DivergenceTriple t;
  const auto ca = invocation_counts(a, spec);
  const auto cb = invocation_counts(b, spec);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    t.counts.emplace_back(ca[i], cb[i]);
    t.d_iter += ca[i] > cb[i] ? ca[i] - cb[i] : cb[i] - ca[i];
    if ((ca[i] > 0) != (cb[i] > 0)) t.d_struct = true;
  }
  const auto ga = derive_topology(a, spec);
  const auto gb = derive_topology(b, spec);
  const auto shared = std::min(ga.shapes.size(), gb.shapes.size());
  for (std::size_t k = 0; k < shared; ++k)
    if (!(ga.shapes[k] == gb.shapes[k])) ++t.d_shape;

  double wsum = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (!dist.d[i]) continue;
    double w = 1.0;
    if (auto it = weights.find(spec.name(i)); it != weights.end()) w = it->second;
    wsum += w;
    acc += w * *dist.d[i];
  }
  t.d_output = wsum > 0 ? acc / wsum : 0.0;
  return t;
}

inline DivergenceTriple trajectory_divergence(const Trace& a, const Trace& b, const PipelineGraphSpec& spec,
                                              const KernelConfig& cfg, const NodeWeights& weights = {}) {
  return trajectory_divergence(a, b, spec, pair_distances(a, b, spec, cfg), weights);
}

inline std::vector<DivergenceTriple> compute_divergences(const TraceCorpus& corpus, const DistanceTable& table,
                                                         const PipelineGraphSpec& spec, const NodeWeights& weights = {},
                                                         unsigned jobs = 1) {
  std::vector<DivergenceTriple> out(table.pair_count());
  parallel_for(table.pair_count(), jobs, [&](std::size_t p) {
    const auto& pr = table.pair(p);
    PairNodeDistances row;
    row.d.resize(spec.size());
    row.presence.resize(spec.size());
    for (std::size_t i = 0; i < spec.size(); ++i) {
      row.d[i] = table.at(p, i);
      row.presence[i] = table.presence(p, i);
    }
    out[p] = trajectory_divergence(corpus[pr.left], corpus[pr.right], spec, row, weights);
  });
  return out;
}

struct DivergenceRates {
  std::size_t n = 0;
  double iter = 0.0;
  double shape = 0.0;
  double output = 0.0;
  double output_only = 0.0;
  double structural = 0.0;
};

inline DivergenceRates divergence_rates(const std::vector<DivergenceTriple>& divs) {
  DivergenceRates r;
  r.n = divs.size();
  if (divs.empty()) return r;
  std::size_t it = 0, sh = 0, out = 0, only = 0, st = 0;
  for (const auto& d : divs) {
    it += d.d_iter > 0;
    sh += d.d_shape > 0;
    out += d.d_output > 0;
    only += d.d_output > 0 && d.d_iter == 0 && d.d_shape == 0;
    st += d.d_struct;
  }
  const double n = static_cast<double>(divs.size());
  r.iter = static_cast<double>(it) / n;
  r.shape = static_cast<double>(sh) / n;
  r.output = static_cast<double>(out) / n;
  r.output_only = static_cast<double>(only) / n;
  r.structural = static_cast<double>(st) / n;
  return r;
}

enum class BifurcationMode { observational, interventional };

struct BifurcationEstimate {
  std::string node;
  BifurcationMode mode = BifurcationMode::observational;
  std::optional<double> beta_shape;
  std::optional<double> beta_iter;
  std::size_t n_support = 0;
  double spread = 0.0;  // IQR of the qualifying distances
  std::string coverage_note;
  std::string reason;

  bool has_value() const { return beta_shape || beta_iter; }
};

inline std::string format_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

// Nodes whose drift can reach a gate decision or the loop controller.
inline std::vector<bool> decision_ancestors(const PipelineGraphSpec& spec) {
  std::vector<bool> out(spec.size(), false);
  auto mark = [&](std::size_t c) {
    out[c] = true;
    const auto anc = spec.ancestors(c);
    for (std::size_t i = 0; i < spec.size(); ++i)
      if (anc[i]) out[i] = true;
  };
  for (const auto& g : spec.gates()) mark(spec.index_of(g.node));
  if (spec.has_loop()) mark(spec.index_of(spec.loop().controller));
  return out;
}

namespace detail {

inline double iqr(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  return quantile_of(xs, 0.75) - quantile_of(xs, 0.25);
}

}  // namespace detail

inline BifurcationEstimate bifurcation_observational(std::size_t i, const PipelineGraphSpec& spec,
                                                     const DistanceTable& table,
                                                     const std::vector<DivergenceTriple>& divs, double epsilon) {
  if (divs.size() != table.pair_count()) throw ValidationError("divergence table does not match the pair table");
  BifurcationEstimate e;
  e.node = spec.name(i);
  e.mode = BifurcationMode::observational;
  if (!decision_ancestors(spec)[i]) {
    e.reason = "node is not upstream of any gate or the loop controller";
    return e;
  }
  std::vector<double> shape_d, iter_d;
  bool shape_clean = false, iter_clean = false;
  for (std::size_t p = 0; p < table.pair_count(); ++p) {
    const auto d = table.at(p, i);
    if (!d) continue;
    if (divs[p].d_shape > 0) {
      shape_d.push_back(*d);
      shape_clean = shape_clean || *d <= epsilon;
    }
    if (divs[p].d_iter > 0) {
      iter_d.push_back(*d);
      iter_clean = iter_clean || *d <= epsilon;
    }
  }
  if (shape_d.empty() && iter_d.empty()) {
    e.reason = "no structurally divergent pairs";
    return e;
  }
  if (!shape_d.empty()) e.beta_shape = shape_clean ? 0.0 : *std::min_element(shape_d.begin(), shape_d.end());
  if (!iter_d.empty()) e.beta_iter = iter_clean ? 0.0 : *std::min_element(iter_d.begin(), iter_d.end());
  e.n_support = std::max(shape_d.size(), iter_d.size());
  e.spread = detail::iqr(shape_d.empty() ? iter_d : shape_d);
  e.coverage_note = "observational minimum over naturally divergent pairs; restricted to nodes upstream of a decision";
  return e;
}

enum class Stratum { effective, no_op };

inline const char* to_string(Stratum s) { return s == Stratum::effective ? "effective" : "no_op"; }

struct SweepResult {
  std::string baseline_trace;
  std::string group_key;
  double magnitude = 0.0;
  double realized_d = 0.0;
  DivergenceTriple divergence;
  Stratum stratum = Stratum::effective;
  std::string perturbation_ref;
};

inline BifurcationEstimate bifurcation_interventional(const std::string& node, const std::vector<SweepResult>& results) {
  BifurcationEstimate e;
  e.node = node;
  e.mode = BifurcationMode::interventional;
  std::vector<const SweepResult*> eff;
  for (const auto& r : results) {
    if (r.stratum == Stratum::no_op) {
      if (r.divergence.d_shape > 0 || r.divergence.d_iter > 0 || r.divergence.d_output > 0 || r.divergence.d_struct)
        throw HarnessError("negative control failed: no-op perturbation of '" + r.baseline_trace +
                           "' at magnitude " + format_number(r.magnitude) + " produced divergence");
    } else {
      eff.push_back(&r);
    }
  }
  if (eff.empty()) throw InsufficientDataError("empty effective stratum for '" + node + "'");

  std::vector<double> shape_d, iter_d;
  for (const auto* r : eff) {
    if (r->divergence.d_shape > 0) shape_d.push_back(r->realized_d);
    if (r->divergence.d_iter > 0) iter_d.push_back(r->realized_d);
  }
  std::set<double> sampled;
  for (const auto* r : eff) sampled.insert(r->realized_d);
  if (shape_d.empty() && iter_d.empty()) {
    e.reason = "no bifurcation observed in sweep range";
    e.coverage_note = "sampled realized magnitudes up to " + format_number(*sampled.rbegin());
    return e;
  }
  if (!shape_d.empty()) e.beta_shape = *std::min_element(shape_d.begin(), shape_d.end());
  if (!iter_d.empty()) e.beta_iter = *std::min_element(iter_d.begin(), iter_d.end());
  const auto& basis = shape_d.empty() ? iter_d : shape_d;
  e.n_support = basis.size();
  e.spread = detail::iqr(basis);

  const double beta = shape_d.empty() ? *e.beta_iter : *e.beta_shape;
  std::optional<double> below;
  for (double m : sampled)
    if (m < beta) below = m;
  if (below) {
    e.coverage_note = "upper bound: no magnitudes sampled in (" + format_number(*below) + ", " +
                      format_number(beta) + ")";
  } else {
    e.coverage_note = "upper bound: no magnitudes sampled below " + format_number(beta);
  }
  return e;
}

}  // namespace quiver
