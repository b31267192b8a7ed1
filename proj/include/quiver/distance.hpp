#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "quiver/embedding.hpp"
#include "quiver/error.hpp"
#include "quiver/graph.hpp"
#include "quiver/trace.hpp"
#include "quiver/typed_value.hpp"

namespace quiver {

struct KernelConfig {
  double epsilon = 0.01;
  double numeric_floor = 1e-9;
  double weight_base = 1.0;
  std::shared_ptr<const EmbeddingProvider> embedding = default_embedding();
  // Raw (pre-normalization) weight per "node.field", replacing the category weight.
  std::map<std::string, double> field_weights;
  std::map<std::string, OrderSemantics> order_overrides;

  void validate() const {
    if (!(epsilon > 0)) throw ValidationError("epsilon must be positive");
    if (!(numeric_floor > 0)) throw ValidationError("numeric_floor must be positive");
    if (!(weight_base > 0)) throw ValidationError("weight_base must be positive");
    if (!embedding) throw ValidationError("no embedding provider configured");
    for (const auto& [k, w] : field_weights)
      if (!(w >= 0)) throw ValidationError("field weight for '" + k + "' must be nonnegative");
  }
};

namespace kernel {

inline double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) ++inter, ++i, ++j;
    else if (a[i] < b[j]) ++i;
    else ++j;
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::vector<std::string> sorted_unique(std::vector<std::string> xs) {
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  return xs;
}

inline std::size_t levenshtein(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::size_t lo = 0;
  while (lo < a.size() && lo < b.size() && a[lo] == b[lo]) ++lo;
  std::size_t ea = a.size(), eb = b.size();
  while (ea > lo && eb > lo && a[ea - 1] == b[eb - 1]) --ea, --eb;
  const std::size_t n = ea - lo, m = eb - lo;
  if (n == 0 || m == 0) return std::max(n, m);
  // Disjoint middles cannot do better than substituting across the shorter one.
  std::set<std::string_view> left;
  for (std::size_t i = lo; i < ea; ++i) left.insert(a[i]);
  bool shared = false;
  for (std::size_t j = lo; j < eb && !shared; ++j) shared = left.count(b[j]) > 0;
  if (!shared) return std::max(n, m);
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[lo + i - 1] == b[lo + j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

inline double normalized_edit(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t denom = std::max({a.size(), b.size(), std::size_t{1}});
  return static_cast<double>(levenshtein(a, b)) / static_cast<double>(denom);
}

// Half element-set Jaccard, half Kendall discordance over the shared elements.
inline double rank_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const auto sa = sorted_unique(a), sb = sorted_unique(b);
  const double set_part = jaccard(sa, sb);
  std::map<std::string_view, std::size_t> pos_a, pos_b;
  for (std::size_t i = 0; i < a.size(); ++i) pos_a.emplace(a[i], i);
  for (std::size_t i = 0; i < b.size(); ++i) pos_b.emplace(b[i], i);
  std::vector<std::pair<std::size_t, std::size_t>> shared;
  for (const auto& [k, ia] : pos_a)
    if (auto it = pos_b.find(k); it != pos_b.end()) shared.emplace_back(ia, it->second);
  double order_part = 0.0;
  if (shared.size() >= 2) {
    std::size_t discordant = 0;
    for (std::size_t i = 0; i < shared.size(); ++i)
      for (std::size_t j = i + 1; j < shared.size(); ++j) {
        const bool x = shared[i].first < shared[j].first;
        const bool y = shared[i].second < shared[j].second;
        if (x != y) ++discordant;
      }
    const double total = 0.5 * static_cast<double>(shared.size()) * static_cast<double>(shared.size() - 1);
    order_part = static_cast<double>(discordant) / total;
  }
  return 0.5 * set_part + 0.5 * order_part;
}

inline double text_distance(std::string_view a, std::string_view b, const EmbeddingProvider& phi) {
  if (a == b) return 0.0;
  const double d = 1.0 - cosine(phi.embed(a), phi.embed(b));
  return std::clamp(d, 0.0, 2.0);
}

inline std::string join_tokens(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out.push_back(' ');
    out += xs[i];
  }
  return out;
}

inline double mapping_distance(const Mapping& a, const Mapping& b, const EmbeddingProvider& phi) {
  std::vector<std::string> ka, kb;
  for (const auto& [k, v] : a.entries) ka.push_back(k);
  for (const auto& [k, v] : b.entries) kb.push_back(k);
  const double keys = jaccard(ka, kb);
  double sum = 0.0;
  std::size_t shared = 0;
  for (const auto& [k, va] : a.entries) {
    auto it = b.entries.find(k);
    if (it == b.entries.end()) continue;
    sum += text_distance(join_tokens(va), join_tokens(it->second), phi);
    ++shared;
  }
  const double values = shared ? sum / static_cast<double>(shared) : 0.0;
  return 0.5 * (keys + values);
}

}  // namespace kernel

inline double field_distance(const FieldSpec& spec, const TypedValue& a, const TypedValue& b,
                             const KernelConfig& cfg, std::optional<OrderSemantics> order = std::nullopt) {
  if (a.kind() != spec.kind || b.kind() != spec.kind)
    throw ValidationError("field '" + spec.name + "' declared " + to_string(spec.kind) + " but got " +
                          to_string(a.kind()) + " vs " + to_string(b.kind()));
  switch (spec.kind) {
    case FieldKind::categorical:
      return a.as<Categorical>() == b.as<Categorical>() ? 0.0 : 1.0;
    case FieldKind::boolean:
      return a.as<Boolean>() == b.as<Boolean>() ? 0.0 : 1.0;
    case FieldKind::set:
      return kernel::jaccard(a.as<LabelSet>().elements, b.as<LabelSet>().elements);
    case FieldKind::ordered_list: {
      const auto& x = a.as<OrderedList>().elements;
      const auto& y = b.as<OrderedList>().elements;
      return order.value_or(spec.order) == OrderSemantics::rank ? kernel::rank_distance(x, y)
                                                                 : kernel::normalized_edit(x, y);
    }
    case FieldKind::numeric: {
      const double x = a.as<Numeric>().value, y = b.as<Numeric>().value;
      if (x == y) return 0.0;
      if (spec.scale) return std::fabs(x - y) / *spec.scale;
      return std::fabs(x - y) / std::max({std::fabs(x), std::fabs(y), cfg.numeric_floor});
    }
    case FieldKind::text:
      return kernel::text_distance(a.as<Text>().value, b.as<Text>().value, *cfg.embedding);
    case FieldKind::mapping:
      return kernel::mapping_distance(a.as<Mapping>(), b.as<Mapping>(), *cfg.embedding);
  }
  throw ValidationError("unreachable field kind");
}

// Normalized w_k per declared field; all zeros if every field is observability.
inline std::vector<double> field_weights(const NodeSchema& schema, const KernelConfig& cfg) {
  std::vector<double> w(schema.fields.size(), 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < schema.fields.size(); ++k) {
    const auto& f = schema.fields[k];
    double raw = 0.0;
    if (f.weight == WeightCategory::routing) raw = 2.0 * cfg.weight_base;
    else if (f.weight == WeightCategory::context) raw = cfg.weight_base;
    if (f.weight != WeightCategory::observability) {
      if (auto it = cfg.field_weights.find(schema.node_id + "." + f.name); it != cfg.field_weights.end())
        raw = it->second;
    }
    w[k] = raw;
    total += raw;
  }
  if (total > 0)
    for (auto& x : w) x /= total;
  return w;
}

struct DistanceBreakdown {
  std::string node_id;
  std::map<std::string, double> per_field;
  double aggregate = 0.0;
};

inline DistanceBreakdown node_distance(const NodeSchema& schema, const NodeOutput& x, const NodeOutput& y,
                                       const KernelConfig& cfg) {
  DistanceBreakdown out;
  out.node_id = schema.node_id;
  const auto w = field_weights(schema, cfg);
  for (std::size_t k = 0; k < schema.fields.size(); ++k) {
    const auto& f = schema.fields[k];
    auto ix = x.find(f.name);
    auto iy = y.find(f.name);
    if (ix == x.end() || iy == y.end())
      throw ValidationError("node '" + schema.node_id + "' output is missing field '" + f.name + "'");
    std::optional<OrderSemantics> order;
    if (auto it = cfg.order_overrides.find(schema.node_id + "." + f.name); it != cfg.order_overrides.end())
      order = it->second;
    const double d = w[k] == 0.0 && f.weight == WeightCategory::observability
                         ? 0.0
                         : field_distance(f, ix->second, iy->second, cfg, order);
    out.per_field[f.name] = d;
    out.aggregate += w[k] * d;
  }
  return out;
}

// Per-node invocation lists of one trace, indexed by declaration order.
inline std::vector<std::vector<const InvocationRecord*>> invocations_by_node(const Trace& t,
                                                                            const PipelineGraphSpec& spec) {
  std::vector<std::vector<const InvocationRecord*>> out(spec.size());
  for (const auto& inv : t.invocations) out[spec.index_of(inv.node_id)].push_back(&inv);
  return out;
}

enum class Presence : unsigned char { both, left_only, right_only, neither };

struct PairNodeDistances {
  std::vector<std::optional<double>> d;  // scored only when present in both
  std::vector<Presence> presence;
};

// d_i for every node; repeated invocations are compared positionally and averaged.
inline PairNodeDistances pair_distances(const Trace& a, const Trace& b, const PipelineGraphSpec& spec,
                                        const KernelConfig& cfg) {
  const auto ia = invocations_by_node(a, spec);
  const auto ib = invocations_by_node(b, spec);
  PairNodeDistances out;
  out.d.assign(spec.size(), std::nullopt);
  out.presence.assign(spec.size(), Presence::neither);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const auto ca = ia[i].size(), cb = ib[i].size();
    if (ca && cb) out.presence[i] = Presence::both;
    else if (ca) out.presence[i] = Presence::left_only;
    else if (cb) out.presence[i] = Presence::right_only;
    if (!ca || !cb) continue;
    const auto m = std::min(ca, cb);
    double sum = 0.0;
    for (std::size_t r = 0; r < m; ++r) sum += node_distance(spec.node(i), ia[i][r]->output, ib[i][r]->output, cfg).aggregate;
    out.d[i] = sum / static_cast<double>(m);
  }
  return out;
}

// Dense pair x node table of d_i; NaN marks an unscored cell.
class DistanceTable {
 public:
  DistanceTable() = default;
  DistanceTable(std::vector<TracePair> pairs, std::size_t nodes)
      : pairs_(std::move(pairs)), nodes_(nodes),
        values_(pairs_.size() * nodes, std::numeric_limits<double>::quiet_NaN()),
        presence_(pairs_.size() * nodes, Presence::neither) {}

  std::size_t pair_count() const { return pairs_.size(); }
  std::size_t node_count() const { return nodes_; }
  const std::vector<TracePair>& pairs() const { return pairs_; }
  const TracePair& pair(std::size_t p) const { return pairs_[p]; }

  std::optional<double> at(std::size_t p, std::size_t i) const {
    const double v = values_[p * nodes_ + i];
    if (std::isnan(v)) return std::nullopt;
    return v;
  }
  Presence presence(std::size_t p, std::size_t i) const { return presence_[p * nodes_ + i]; }

  void set(std::size_t p, const PairNodeDistances& row) {
    for (std::size_t i = 0; i < nodes_; ++i) {
      values_[p * nodes_ + i] = row.d[i] ? *row.d[i] : std::numeric_limits<double>::quiet_NaN();
      presence_[p * nodes_ + i] = row.presence[i];
    }
  }

 private:
  std::vector<TracePair> pairs_;
  std::size_t nodes_ = 0;
  std::vector<double> values_;
  std::vector<Presence> presence_;
};

// Runs `fn(k)` for k in [0, n) on up to `jobs` threads; each k is handled exactly once.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  if (jobs <= 1 || n < 2) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, n));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(jobs);
  for (unsigned w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t k = w; k < n; k += jobs) fn(k);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline DistanceTable compute_distances(const TraceCorpus& corpus, std::vector<TracePair> pairs,
                                       const PipelineGraphSpec& spec, const KernelConfig& cfg,
                                       unsigned jobs = 1) {
  DistanceTable table(std::move(pairs), spec.size());
  parallel_for(table.pair_count(), jobs, [&](std::size_t p) {
    const auto& pr = table.pair(p);
    table.set(p, pair_distances(corpus[pr.left], corpus[pr.right], spec, cfg));
  });
  return table;
}

}  // namespace quiver
