#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "quiver/distance.hpp"
#include "quiver/error.hpp"
#include "quiver/graph.hpp"

namespace quiver {

struct SensitivityConfig {
  double epsilon = 0.01;
  double insensitive_floor = 0.01;
  double delta_band = 0.4;

  void validate() const {
    if (!(epsilon > 0)) throw ValidationError("epsilon must be positive");
    if (!(insensitive_floor >= 0)) throw ValidationError("insensitive_floor must be nonnegative");
    if (!(delta_band > 0)) throw ValidationError("delta_band must be positive");
  }
};

enum class EdgeClass { amplifier, absorber, insensitive };

inline const char* to_string(EdgeClass c) {
  switch (c) {
    case EdgeClass::amplifier: return "amplifier";
    case EdgeClass::absorber: return "absorber";
    case EdgeClass::insensitive: return "insensitive";
  }
  return "?";
}

inline EdgeClass classify_sigma(double sigma, const SensitivityConfig& cfg) {
  if (sigma <= cfg.insensitive_floor) return EdgeClass::insensitive;
  if (sigma > 1.0) return EdgeClass::amplifier;
  return EdgeClass::absorber;
}

struct EdgeStats {
  std::string from;
  std::string to;
  std::size_t n = 0;
  double sigma_hat = 0.0;
  double median_ratio = 0.0;
  double frac_below_1 = 0.0;
  double frac_above_1_5 = 0.0;
  double max_ratio = 0.0;
  // Smallest upstream distance that entered a ratio; always > epsilon.
  double min_denominator = 0.0;
  EdgeClass cls = EdgeClass::insensitive;
  bool near_unity = false;
  std::optional<double> lambda_hat;
  std::string reason;

  bool estimated() const { return n > 0; }
};

inline double median_of(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const auto m = xs.size() / 2;
  return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

// Linear-interpolated quantile of an unsorted sample.
inline double quantile_of(std::vector<double> xs, double q) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

namespace detail {

inline EdgeStats ratio_stats(std::size_t i, std::size_t j, const PipelineGraphSpec& spec,
                             const DistanceTable& table, const SensitivityConfig& cfg) {
  EdgeStats s;
  s.from = spec.name(i);
  s.to = spec.name(j);
  std::vector<double> ratios;
  double min_den = 0.0;
  for (std::size_t p = 0; p < table.pair_count(); ++p) {
    const auto di = table.at(p, i);
    const auto dj = table.at(p, j);
    if (!di || !dj || !(*di > cfg.epsilon)) continue;
    if (ratios.empty() || *di < min_den) min_den = *di;
    ratios.push_back(*dj / *di);
  }
  s.n = ratios.size();
  if (ratios.empty()) {
    s.reason = "no qualifying pairs";
    return s;
  }
  double sum = 0.0;
  std::size_t below = 0, above = 0;
  for (double r : ratios) {
    sum += r;
    if (r < 1.0) ++below;
    if (r > 1.5) ++above;
    s.max_ratio = std::max(s.max_ratio, r);
  }
  const double n = static_cast<double>(ratios.size());
  s.sigma_hat = sum / n;
  s.frac_below_1 = static_cast<double>(below) / n;
  s.frac_above_1_5 = static_cast<double>(above) / n;
  s.median_ratio = median_of(std::move(ratios));
  s.min_denominator = min_den;
  s.cls = classify_sigma(s.sigma_hat, cfg);
  s.near_unity = std::fabs(s.sigma_hat - 1.0) < cfg.delta_band;
  return s;
}

}  // namespace detail

// Per-node mean same-group distance.
inline std::vector<std::optional<double>> noise_floor(const DistanceTable& table) {
  if (table.pair_count() == 0) throw InsufficientDataError("noise floor needs at least one same-group pair");
  std::vector<std::optional<double>> out(table.node_count());
  for (std::size_t i = 0; i < table.node_count(); ++i) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < table.pair_count(); ++p)
      if (auto d = table.at(p, i)) sum += *d, ++n;
    if (n) out[i] = sum / static_cast<double>(n);
  }
  return out;
}

struct LiftEstimate {
  std::optional<double> lambda;
  std::size_t n_dirty = 0;
  std::size_t n_clean = 0;
  std::size_t dirty_hits = 0;
  std::size_t clean_hits = 0;
  std::string reason;
};

inline LiftEstimate estimate_occurrence_lift(std::size_t i, std::size_t j, const DistanceTable& table,
                                             const SensitivityConfig& cfg) {
  LiftEstimate e;
  for (std::size_t p = 0; p < table.pair_count(); ++p) {
    const auto di = table.at(p, i);
    const auto dj = table.at(p, j);
    if (!di || !dj) continue;
    const bool hit = *dj > cfg.epsilon;
    if (*di > cfg.epsilon) ++e.n_dirty, e.dirty_hits += hit;
    else ++e.n_clean, e.clean_hits += hit;
  }
  if (e.n_dirty == 0) e.reason = "no pairs with upstream drift";
  else if (e.n_clean == 0) e.reason = "no pairs without upstream drift";
  else
    e.lambda = static_cast<double>(e.dirty_hits) / static_cast<double>(e.n_dirty) -
               static_cast<double>(e.clean_hits) / static_cast<double>(e.n_clean);
  return e;
}

inline EdgeStats estimate_edge_sensitivity(std::size_t i, std::size_t j, const PipelineGraphSpec& spec,
                                           const DistanceTable& table, const SensitivityConfig& cfg) {
  if (!spec.has_edge(i, j))
    throw ValidationError("(" + spec.name(i) + "," + spec.name(j) + ") is not an edge of the graph");
  auto s = detail::ratio_stats(i, j, spec, table, cfg);
  s.lambda_hat = estimate_occurrence_lift(i, j, table, cfg).lambda;
  return s;
}

inline std::vector<EdgeStats> estimate_all_edges(const PipelineGraphSpec& spec, const DistanceTable& table,
                                                 const SensitivityConfig& cfg) {
  std::vector<EdgeStats> out;
  for (const auto& [a, b] : spec.edges())
    out.push_back(estimate_edge_sensitivity(spec.index_of(a), spec.index_of(b), spec, table, cfg));
  return out;
}

// The edge estimator applied to a reachable, non-adjacent (or adjacent) pair.
inline EdgeStats transitive_sensitivity(std::size_t i, std::size_t j, const PipelineGraphSpec& spec,
                                        const DistanceTable& table, const SensitivityConfig& cfg) {
  if (i == j) throw ValidationError("transitive sensitivity of a node with itself is undefined");
  if (!spec.reachable(i, j))
    throw ValidationError("'" + spec.name(j) + "' is not reachable from '" + spec.name(i) + "'");
  auto s = detail::ratio_stats(i, j, spec, table, cfg);
  s.lambda_hat = estimate_occurrence_lift(i, j, table, cfg).lambda;
  return s;
}

enum class NoiseOriginClass { origin, propagator, indeterminate };

inline const char* to_string(NoiseOriginClass c) {
  switch (c) {
    case NoiseOriginClass::origin: return "origin";
    case NoiseOriginClass::propagator: return "propagator";
    case NoiseOriginClass::indeterminate: return "indeterminate";
  }
  return "?";
}

struct NoiseOrigin {
  std::string node;
  NoiseOriginClass cls = NoiseOriginClass::indeterminate;
  std::size_t clean_upstream = 0;
  std::size_t clean_upstream_drift = 0;
  std::size_t dirty_upstream = 0;
  std::size_t dirty_upstream_drift = 0;
  std::string note;

  double dirty_drift_rate() const {
    return dirty_upstream ? static_cast<double>(dirty_upstream_drift) / static_cast<double>(dirty_upstream) : 0.0;
  }
};

inline std::vector<NoiseOrigin> noise_origin_classify(const DistanceTable& table, const PipelineGraphSpec& spec,
                                                      const SensitivityConfig& cfg) {
  std::vector<NoiseOrigin> out;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    NoiseOrigin r;
    r.node = spec.name(i);
    for (std::size_t p = 0; p < table.pair_count(); ++p) {
      const auto di = table.at(p, i);
      if (!di) continue;
      bool clean = true;
      for (auto q : spec.parents(i)) {
        const auto pres = table.presence(p, q);
        if (pres == Presence::neither) continue;
        const auto dq = table.at(p, q);
        if (!dq || *dq > cfg.epsilon) {
          clean = false;
          break;
        }
      }
      const bool drift = *di > cfg.epsilon;
      if (clean) ++r.clean_upstream, r.clean_upstream_drift += drift;
      else ++r.dirty_upstream, r.dirty_upstream_drift += drift;
    }
    if (r.clean_upstream == 0) {
      r.cls = NoiseOriginClass::indeterminate;
      r.note = "always upstream-dirty";
    } else if (r.clean_upstream_drift > 0) {
      r.cls = NoiseOriginClass::origin;
    } else {
      r.cls = NoiseOriginClass::propagator;
    }
    out.push_back(std::move(r));
  }
  return out;
}

struct DriftBudget {
  std::string from;
  std::string to;
  double floor = 0.0;
  std::size_t n = 0;
  // alpha -> tau, or nullopt for "never".
  std::map<double, std::optional<double>> tau;
};

// Smallest observed upstream drift tau with P(d_j > D_noise(j) | d_i > tau) >= alpha.
inline DriftBudget drift_budget(std::size_t i, std::size_t j, const PipelineGraphSpec& spec,
                                const DistanceTable& table, const std::vector<std::optional<double>>& floors,
                                const std::vector<double>& alpha_levels) {
  if (!floors.at(j)) throw InsufficientDataError("no noise floor for '" + spec.name(j) + "'");
  DriftBudget b;
  b.from = spec.name(i);
  b.to = spec.name(j);
  b.floor = *floors[j];
  std::vector<std::pair<double, bool>> obs;
  for (std::size_t p = 0; p < table.pair_count(); ++p) {
    const auto di = table.at(p, i);
    const auto dj = table.at(p, j);
    if (di && dj) obs.emplace_back(*di, *dj > b.floor);
  }
  b.n = obs.size();
  if (obs.empty())
    throw InsufficientDataError("no pairs score both '" + b.from + "' and '" + b.to + "'");
  std::sort(obs.begin(), obs.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  // Walk tau downward over distinct values; `count`/`hits` describe {d_i > tau}.
  struct Level {
    double tau;
    double prob;
  };
  std::vector<Level> levels;
  std::size_t count = 0, hits = 0, k = 0;
  while (k < obs.size()) {
    const double tau = obs[k].first;
    if (count > 0) levels.push_back({tau, static_cast<double>(hits) / static_cast<double>(count)});
    while (k < obs.size() && obs[k].first == tau) {
      ++count;
      hits += obs[k].second;
      ++k;
    }
  }
  std::reverse(levels.begin(), levels.end());
  for (double alpha : alpha_levels) {
    std::optional<double> tau;
    for (const auto& l : levels)
      if (l.prob >= alpha) {
        tau = l.tau;
        break;
      }
    b.tau[alpha] = tau;
  }
  return b;
}

}  // namespace quiver
