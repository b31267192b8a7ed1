#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "quiver/error.hpp"
#include "quiver/typed_value.hpp"

namespace quiver {

enum class WeightCategory { routing, context, observability };

inline const char* to_string(WeightCategory c) {
  switch (c) {
    case WeightCategory::routing: return "routing";
    case WeightCategory::context: return "context";
    case WeightCategory::observability: return "observability";
  }
  return "?";
}

inline WeightCategory parse_weight_category(std::string_view s) {
  if (s == "routing") return WeightCategory::routing;
  if (s == "context") return WeightCategory::context;
  if (s == "observability") return WeightCategory::observability;
  throw ValidationError("unknown weight category '" + std::string(s) + "'");
}

// Ordered lists compare by edit distance unless their order is a ranking.
enum class OrderSemantics { edit, rank };

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::categorical;
  WeightCategory weight = WeightCategory::context;
  OrderSemantics order = OrderSemantics::edit;
  // Numeric only: compare |a-b|/scale instead of the relative difference.
  std::optional<double> scale;
  // Categorical only: label order used by "flip to next class".
  std::vector<std::string> categories;
  // Numeric only: bin edges for histogram-based divergence checks.
  std::vector<double> bins;
};

struct NodeSchema {
  std::string node_id;
  std::vector<FieldSpec> fields;

  const FieldSpec* field(std::string_view name) const {
    for (const auto& f : fields)
      if (f.name == name) return &f;
    return nullptr;
  }
};

// A conditional branch. Realized decisions are recorded in each trace; the
// condition is only evaluated by the simulator.
struct GateSpec {
  std::string id;
  std::string node;
  std::string field;
  std::vector<std::string> gated;
  std::vector<TypedValue> taken_when;
  std::optional<double> at_least;

  bool taken(const TypedValue& v) const {
    if (at_least) {
      if (const auto* n = v.get_if<Numeric>()) return n->value >= *at_least;
      return false;
    }
    return std::find(taken_when.begin(), taken_when.end(), v) != taken_when.end();
  }
};

struct LoopSpec {
  std::vector<std::string> body;
  std::string controller;
  int k_max = 0;
  std::vector<std::string> actions;

  bool empty() const { return body.empty(); }
};

class PipelineGraphSpec {
 public:
  using Edge = std::pair<std::string, std::string>;

  PipelineGraphSpec() = default;
  PipelineGraphSpec(std::vector<NodeSchema> nodes, std::vector<Edge> edges, LoopSpec loop = {},
                    std::vector<GateSpec> gates = {})
      : nodes_(std::move(nodes)), edges_(std::move(edges)), loop_(std::move(loop)),
        gates_(std::move(gates)) {
    build();
  }

  const std::vector<NodeSchema>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const LoopSpec& loop() const { return loop_; }
  const std::vector<GateSpec>& gates() const { return gates_; }
  std::size_t size() const { return nodes_.size(); }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(std::string_view id) const {
    if (auto i = find(id)) return *i;
    throw ValidationError("unknown node '" + std::string(id) + "'");
  }

  const NodeSchema& node(std::string_view id) const { return nodes_[index_of(id)]; }
  const NodeSchema& node(std::size_t i) const { return nodes_[i]; }
  const std::string& name(std::size_t i) const { return nodes_[i].node_id; }

  const std::vector<std::size_t>& parents(std::size_t i) const { return parents_[i]; }
  const std::vector<std::size_t>& children(std::size_t i) const { return children_[i]; }

  bool has_edge(std::size_t i, std::size_t j) const {
    const auto& c = children_[i];
    return std::find(c.begin(), c.end(), j) != c.end();
  }

  bool in_loop(std::size_t i) const { return in_loop_[i]; }
  bool is_controller(std::size_t i) const {
    return !loop_.empty() && nodes_[i].node_id == loop_.controller;
  }
  bool has_loop() const { return !loop_.empty(); }

  std::vector<std::size_t> sources() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (parents_[i].empty()) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> sinks() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (children_[i].empty()) out.push_back(i);
    return out;
  }

  // All nodes reachable from i by one or more edges.
  std::vector<bool> descendants(std::size_t i) const {
    std::vector<bool> seen(size(), false);
    std::vector<std::size_t> stack(children_[i].begin(), children_[i].end());
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      if (seen[v]) continue;
      seen[v] = true;
      for (auto c : children_[v]) stack.push_back(c);
    }
    return seen;
  }

  std::vector<bool> ancestors(std::size_t i) const {
    std::vector<bool> seen(size(), false);
    std::vector<std::size_t> stack(parents_[i].begin(), parents_[i].end());
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      if (seen[v]) continue;
      seen[v] = true;
      for (auto p : parents_[v]) stack.push_back(p);
    }
    return seen;
  }

  bool reachable(std::size_t from, std::size_t to) const { return descendants(from)[to]; }

  // Non-loop nodes in dependency order, with the loop body as one step
  // (represented by std::nullopt) placed where its dependencies allow.
  const std::vector<std::optional<std::size_t>>& execution_order() const { return order_; }

  // Loop body in per-iteration order; the controller always runs first.
  const std::vector<std::size_t>& body_order() const { return body_order_; }

  // Edges whose target is the controller and whose source is in the body carry
  // state into the next iteration; they are exempt from per-iteration ordering.
  bool is_feedback_edge(std::size_t from, std::size_t to) const {
    return in_loop_[from] && in_loop_[to] && is_controller(to);
  }

  std::vector<const GateSpec*> gates_on(std::size_t node) const {
    std::vector<const GateSpec*> out;
    for (const auto& g : gates_)
      if (std::find(g.gated.begin(), g.gated.end(), nodes_[node].node_id) != g.gated.end())
        out.push_back(&g);
    return out;
  }

 private:
  void build();

  std::vector<NodeSchema> nodes_;
  std::vector<Edge> edges_;
  LoopSpec loop_;
  std::vector<GateSpec> gates_;

  std::map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<bool> in_loop_;
  std::vector<std::optional<std::size_t>> order_;
  std::vector<std::size_t> body_order_;
};

inline void PipelineGraphSpec::build() {
  const std::size_t n = nodes_.size();
  if (n == 0) throw ValidationError("graph has no nodes");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& nd = nodes_[i];
    if (nd.node_id.empty()) throw ValidationError("node with empty id");
    if (!index_.emplace(nd.node_id, i).second)
      throw ValidationError("duplicate node id '" + nd.node_id + "'");
    std::set<std::string> names;
    for (const auto& f : nd.fields) {
      if (f.name.empty()) throw ValidationError("node '" + nd.node_id + "' has an unnamed field");
      if (!names.insert(f.name).second)
        throw ValidationError("node '" + nd.node_id + "' declares field '" + f.name + "' twice");
      if (f.scale && !(*f.scale > 0.0))
        throw ValidationError("field '" + nd.node_id + "." + f.name + "' scale must be positive");
      if (!f.bins.empty() && !std::is_sorted(f.bins.begin(), f.bins.end()))
        throw ValidationError("field '" + nd.node_id + "." + f.name + "' bins must be sorted");
    }
  }

  parents_.assign(n, {});
  children_.assign(n, {});
  std::set<std::pair<std::size_t, std::size_t>> seen_edges;
  for (const auto& [a, b] : edges_) {
    auto ia = find(a);
    auto ib = find(b);
    if (!ia) throw ValidationError("edge (" + a + "," + b + ") references undeclared node '" + a + "'");
    if (!ib) throw ValidationError("edge (" + a + "," + b + ") references undeclared node '" + b + "'");
    if (!seen_edges.insert({*ia, *ib}).second)
      throw ValidationError("duplicate edge (" + a + "," + b + ")");
    children_[*ia].push_back(*ib);
    parents_[*ib].push_back(*ia);
  }

  in_loop_.assign(n, false);
  if (!loop_.body.empty()) {
    for (const auto& id : loop_.body) {
      auto i = find(id);
      if (!i) throw ValidationError("loop body references undeclared node '" + id + "'");
      in_loop_[*i] = true;
    }
    if (loop_.k_max < 1) throw ValidationError("loop body is nonempty but k_max < 1");
    if (loop_.actions.empty()) throw ValidationError("loop body is nonempty but the action set is empty");
    auto c = find(loop_.controller);
    if (!c || !in_loop_[*c])
      throw ValidationError("loop controller '" + loop_.controller + "' is not in the loop body");
  } else if (loop_.k_max != 0) {
    throw ValidationError("k_max must be 0 for a loop-free graph");
  }

  // Dependency order over the graph with the loop body condensed to one step.
  const std::size_t loop_step = n;
  auto step_of = [&](std::size_t i) { return in_loop_[i] ? loop_step : i; };
  const std::size_t steps = n + 1;
  std::vector<std::set<std::size_t>> succ(steps);
  std::vector<int> indeg(steps, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto j : children_[i]) {
      const auto a = step_of(i);
      const auto b = step_of(j);
      if (a == b && a == loop_step) continue;
      if (a == b) throw ValidationError("cycle outside the loop body at node '" + nodes_[i].node_id + "'");
      if (succ[a].insert(b).second) ++indeg[b];
    }
  }
  const bool loop_present = !loop_.body.empty();
  std::vector<bool> done(steps, false);
  std::size_t emitted = 0;
  const std::size_t total = n - static_cast<std::size_t>(std::count(in_loop_.begin(), in_loop_.end(), true)) +
                            (loop_present ? 1 : 0);
  while (emitted < total) {
    std::optional<std::size_t> pick;
    // Declaration order breaks ties; the loop step sorts at its controller's position.
    for (std::size_t i = 0; i < n && !pick; ++i) {
      const auto s = step_of(i);
      if (!done[s] && indeg[s] == 0) pick = s;
    }
    if (!pick) throw ValidationError("cycle outside the loop body");
    done[*pick] = true;
    ++emitted;
    order_.push_back(*pick == loop_step ? std::nullopt : std::optional<std::size_t>(*pick));
    for (auto b : succ[*pick]) --indeg[b];
  }

  if (loop_present) {
    const auto ctrl = *find(loop_.controller);
    body_order_.push_back(ctrl);
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
      if (in_loop_[i] && i != ctrl) rest.push_back(i);
    std::map<std::size_t, int> deg;
    for (auto v : rest) {
      deg[v] = 0;
      for (auto p : parents_[v])
        if (in_loop_[p] && p != ctrl) ++deg[v];
    }
    std::vector<bool> placed(n, false);
    while (body_order_.size() < rest.size() + 1) {
      std::optional<std::size_t> pick;
      for (auto v : rest)
        if (!placed[v] && deg[v] == 0) {
          pick = v;
          break;
        }
      if (!pick) throw ValidationError("loop body has a cycle that does not pass through the controller");
      placed[*pick] = true;
      body_order_.push_back(*pick);
      for (auto c : children_[*pick])
        if (deg.count(c)) --deg[c];
    }
  }

  for (const auto& g : gates_) {
    auto c = find(g.node);
    if (!c) throw ValidationError("gate '" + g.id + "' is controlled by undeclared node '" + g.node + "'");
    if (!nodes_[*c].field(g.field))
      throw ValidationError("gate '" + g.id + "' reads undeclared field '" + g.node + "." + g.field + "'");
    if (in_loop_[*c]) throw ValidationError("gate '" + g.id + "' is controlled by a loop-body node");
    const auto anc = ancestors(*c);
    for (const auto& t : g.gated) {
      auto gi = find(t);
      if (!gi) throw ValidationError("gate '" + g.id + "' gates undeclared node '" + t + "'");
      if (*gi == *c || anc[*gi])
        throw ValidationError("gate '" + g.id + "' gates node '" + t + "' that runs before its controller");
    }
  }
  std::set<std::string> gate_ids;
  for (const auto& g : gates_)
    if (!gate_ids.insert(g.id).second) throw ValidationError("duplicate gate id '" + g.id + "'");
}

// ---------------------------------------------------------------------------
// JSON form

inline FieldSpec field_spec_from_json(const json& j, const std::string& node) {
  FieldSpec f;
  try {
    f.name = j.at("name").get<std::string>();
    f.kind = parse_field_kind(j.at("kind").get<std::string>());
    f.weight = parse_weight_category(j.value("weight", std::string("context")));
    const auto order = j.value("order", std::string("edit"));
    if (order == "edit") f.order = OrderSemantics::edit;
    else if (order == "rank") f.order = OrderSemantics::rank;
    else throw ValidationError("unknown order semantics '" + order + "'");
    if (j.contains("scale")) f.scale = j.at("scale").get<double>();
    if (j.contains("categories")) f.categories = j.at("categories").get<std::vector<std::string>>();
    if (j.contains("bins")) f.bins = j.at("bins").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ValidationError("node '" + node + "' field: " + e.what());
  }
  return f;
}

inline json field_spec_to_json(const FieldSpec& f) {
  json j{{"name", f.name}, {"kind", to_string(f.kind)}, {"weight", to_string(f.weight)}};
  if (f.kind == FieldKind::ordered_list) j["order"] = f.order == OrderSemantics::edit ? "edit" : "rank";
  if (f.scale) j["scale"] = *f.scale;
  if (!f.categories.empty()) j["categories"] = f.categories;
  if (!f.bins.empty()) j["bins"] = f.bins;
  return j;
}

inline PipelineGraphSpec graph_spec_from_json(const json& j) {
  std::vector<NodeSchema> nodes;
  std::vector<PipelineGraphSpec::Edge> edges;
  LoopSpec loop;
  std::vector<GateSpec> gates;
  try {
    for (const auto& jn : j.at("nodes")) {
      NodeSchema n;
      n.node_id = jn.at("id").get<std::string>();
      for (const auto& jf : jn.value("fields", json::array())) n.fields.push_back(field_spec_from_json(jf, n.node_id));
      nodes.push_back(std::move(n));
    }
    for (const auto& je : j.value("edges", json::array())) {
      if (je.is_array() && je.size() == 2) edges.emplace_back(je[0].get<std::string>(), je[1].get<std::string>());
      else if (je.is_object()) edges.emplace_back(je.at("from").get<std::string>(), je.at("to").get<std::string>());
      else throw ValidationError("edge must be [from, to] or {from, to}");
    }
    if (j.contains("loop") && !j.at("loop").is_null()) {
      const auto& jl = j.at("loop");
      loop.body = jl.value("body", std::vector<std::string>{});
      loop.controller = jl.value("controller", std::string{});
      loop.k_max = jl.value("k_max", 0);
      loop.actions = jl.value("actions", std::vector<std::string>{});
    }
    std::map<std::string, const NodeSchema*> by_id;
    for (const auto& n : nodes) by_id[n.node_id] = &n;
    for (const auto& jg : j.value("gates", json::array())) {
      GateSpec g;
      g.id = jg.at("id").get<std::string>();
      g.node = jg.at("node").get<std::string>();
      g.field = jg.at("field").get<std::string>();
      g.gated = jg.value("gated", std::vector<std::string>{});
      if (jg.contains("at_least")) g.at_least = jg.at("at_least").get<double>();
      if (jg.contains("when")) {
        auto it = by_id.find(g.node);
        const FieldSpec* fs = it == by_id.end() ? nullptr : it->second->field(g.field);
        if (!fs) throw ValidationError("gate '" + g.id + "' reads undeclared field '" + g.node + "." + g.field + "'");
        for (const auto& jv : jg.at("when")) g.taken_when.push_back(value_from_json(fs->kind, jv));
      }
      gates.push_back(std::move(g));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("graph spec: ") + e.what());
  }
  return PipelineGraphSpec(std::move(nodes), std::move(edges), std::move(loop), std::move(gates));
}

inline json graph_spec_to_json(const PipelineGraphSpec& g) {
  json j;
  j["nodes"] = json::array();
  for (const auto& n : g.nodes()) {
    json jn{{"id", n.node_id}, {"fields", json::array()}};
    for (const auto& f : n.fields) jn["fields"].push_back(field_spec_to_json(f));
    j["nodes"].push_back(std::move(jn));
  }
  j["edges"] = json::array();
  for (const auto& [a, b] : g.edges()) j["edges"].push_back({a, b});
  if (g.has_loop()) {
    j["loop"] = {{"body", g.loop().body},
                 {"controller", g.loop().controller},
                 {"k_max", g.loop().k_max},
                 {"actions", g.loop().actions}};
  }
  j["gates"] = json::array();
  for (const auto& gt : g.gates()) {
    json jg{{"id", gt.id}, {"node", gt.node}, {"field", gt.field}, {"gated", gt.gated}};
    if (gt.at_least) jg["at_least"] = *gt.at_least;
    if (!gt.taken_when.empty()) {
      jg["when"] = json::array();
      for (const auto& v : gt.taken_when) jg["when"].push_back(value_to_json(v));
    }
    j["gates"].push_back(std::move(jg));
  }
  return j;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("'" + path + "' does not parse: " + e.what());
  }
}

inline PipelineGraphSpec load_graph_spec(const std::string& path) {
  return graph_spec_from_json(read_json_file(path));
}

}  // namespace quiver
