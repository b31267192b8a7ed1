#pragma once

#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "quiver/quiver.hpp"

namespace qt {

using namespace quiver;

inline std::string demo(const std::string& rel) { return std::string(QUIVER_DEMO_DIR) + "/" + rel; }

// SplitMix64 generator for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : s_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (s_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }
  bool coin(double p = 0.5) { return uniform() < p; }

  std::string label(std::size_t alphabet) { return "x" + std::to_string(below(alphabet)); }

  std::vector<std::string> list(std::size_t max_len, std::size_t alphabet) {
    std::vector<std::string> xs(below(max_len + 1));
    for (auto& x : xs) x = label(alphabet);
    return xs;
  }
  std::vector<std::string> unique_list(std::size_t max_len, std::size_t alphabet) {
    return kernel::sorted_unique(list(max_len, alphabet));
  }
  std::string sentence(std::size_t max_len, std::size_t alphabet) { return kernel::join_tokens(list(max_len, alphabet)); }

  TypedValue value(FieldKind k) {
    switch (k) {
      case FieldKind::categorical: return TypedValue::categorical(label(4));
      case FieldKind::boolean: return TypedValue::boolean(coin());
      case FieldKind::set: return TypedValue::set(unique_list(8, 12));
      case FieldKind::ordered_list: return TypedValue::ordered_list(list(8, 12));
      case FieldKind::numeric: return TypedValue::numeric(uniform(-5, 5));
      case FieldKind::text: return TypedValue::text(sentence(10, 20));
      case FieldKind::mapping: {
        std::map<std::string, std::vector<std::string>> m;
        for (const auto& k2 : unique_list(4, 6)) m[k2] = list(3, 5);
        return TypedValue::mapping(std::move(m));
      }
    }
    return TypedValue::boolean(false);
  }

 private:
  std::uint64_t s_;
};

inline PipelineGraphSpec graph(const std::string& text) { return graph_spec_from_json(json::parse(text)); }

// Single numeric field "level" per node, scale 1.
inline PipelineGraphSpec numeric_graph(const std::vector<std::string>& nodes,
                                       const std::vector<std::pair<std::string, std::string>>& edges) {
  json j{{"nodes", json::array()}, {"edges", json::array()}};
  for (const auto& n : nodes)
    j["nodes"].push_back({{"id", n}, {"fields", {{{"name", "level"}, {"kind", "numeric"}, {"weight", "routing"}, {"scale", 1.0}}}}});
  for (const auto& [a, b] : edges) j["edges"].push_back({a, b});
  return graph_spec_from_json(j);
}

// A table whose rows are supplied directly; nullopt marks an unscored cell.
inline DistanceTable table_of(const std::vector<std::vector<std::optional<double>>>& rows, std::size_t nodes) {
  std::vector<TracePair> pairs;
  for (std::size_t p = 0; p < rows.size(); ++p) pairs.push_back({2 * p, 2 * p + 1, "g" + std::to_string(p)});
  DistanceTable t(pairs, nodes);
  for (std::size_t p = 0; p < rows.size(); ++p) {
    PairNodeDistances row;
    row.d = rows[p];
    for (const auto& d : rows[p]) row.presence.push_back(d ? Presence::both : Presence::neither);
    t.set(p, row);
  }
  return t;
}

inline InvocationRecord inv(const std::string& node, std::size_t index, NodeOutput out, int iteration = 0,
                            std::optional<std::string> action = std::nullopt) {
  InvocationRecord r;
  r.node_id = node;
  r.invocation_index = index;
  r.iteration_index = iteration;
  r.action = std::move(action);
  r.output = std::move(out);
  return r;
}

inline NodeOutput level(double x) { return {{"level", TypedValue::numeric(x)}}; }

// One invocation per node in the given order with numeric levels.
inline Trace numeric_trace(const std::string& id, const std::string& group, const std::vector<std::string>& nodes,
                           const std::vector<double>& levels) {
  Trace t;
  t.trace_id = id;
  t.group_key = group;
  for (std::size_t k = 0; k < nodes.size(); ++k) t.invocations.push_back(inv(nodes[k], k, level(levels[k])));
  return t;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace qt
