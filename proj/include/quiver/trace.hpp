#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "quiver/error.hpp"
#include "quiver/graph.hpp"
#include "quiver/typed_value.hpp"

namespace quiver {

enum class TraceMode { observational, interventional };

inline const char* to_string(TraceMode m) {
  return m == TraceMode::observational ? "observational" : "interventional";
}

inline TraceMode parse_trace_mode(std::string_view s) {
  if (s == "observational") return TraceMode::observational;
  if (s == "interventional") return TraceMode::interventional;
  throw ValidationError("unknown trace mode '" + std::string(s) + "'");
}

using ActionParams = std::map<std::string, std::string>;

struct InvocationRecord {
  std::string node_id;
  std::size_t invocation_index = 0;
  int iteration_index = 0;
  std::optional<std::string> action;
  ActionParams action_params;
  NodeOutput output;

  bool operator==(const InvocationRecord&) const = default;
};

// Coordinates of the simulator randomness that produced a trace.
struct StreamRef {
  std::uint64_t seed = 0;
  std::uint32_t group = 0;
  std::uint32_t repeat = 0;

  bool operator==(const StreamRef&) const = default;
};

struct Trace {
  std::string trace_id;
  std::string group_key;
  TraceMode mode = TraceMode::observational;
  std::optional<std::string> perturbation_ref;
  std::vector<InvocationRecord> invocations;
  int realized_k = 1;
  std::map<std::string, bool> gates;
  std::optional<StreamRef> stream;

  bool operator==(const Trace&) const = default;
};

struct TracePair {
  std::size_t left = 0;
  std::size_t right = 0;
  std::string group_key;

  bool operator==(const TracePair&) const = default;
};

// One iteration's shape g(t): the controller action, its parameters, and the
// trace's realized gate decisions.
struct IterationShape {
  std::string action;
  ActionParams params;
  std::map<std::string, bool> gates;

  bool operator==(const IterationShape&) const = default;
};

struct TrajectoryTopology {
  int k = 0;
  std::vector<IterationShape> shapes;

  bool operator==(const TrajectoryTopology&) const = default;
};

inline TrajectoryTopology derive_topology(const Trace& t, const PipelineGraphSpec& spec) {
  TrajectoryTopology topo;
  if (!spec.has_loop()) {
    topo.k = 1;
    topo.shapes.push_back(IterationShape{{}, {}, t.gates});
    return topo;
  }
  topo.k = t.realized_k;
  topo.shapes.resize(static_cast<std::size_t>(std::max(0, t.realized_k)));
  std::vector<bool> seen(topo.shapes.size(), false);
  for (const auto& inv : t.invocations) {
    if (inv.node_id != spec.loop().controller) continue;
    const int it = inv.iteration_index;
    if (it < 1 || it > t.realized_k) continue;
    auto& slot = topo.shapes[static_cast<std::size_t>(it - 1)];
    if (seen[static_cast<std::size_t>(it - 1)]) continue;
    seen[static_cast<std::size_t>(it - 1)] = true;
    slot.action = inv.action.value_or("");
    slot.params = inv.action_params;
    slot.gates = t.gates;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i])
      throw ValidationError("trace '" + t.trace_id + "' has no controller action for iteration " +
                            std::to_string(i + 1));
  }
  return topo;
}

// Invocation count c_i per declared node, in declaration order.
inline std::vector<std::size_t> invocation_counts(const Trace& t, const PipelineGraphSpec& spec) {
  std::vector<std::size_t> c(spec.size(), 0);
  for (const auto& inv : t.invocations) {
    if (auto i = spec.find(inv.node_id)) ++c[*i];
  }
  return c;
}

inline std::map<std::string, std::size_t> invocation_count_map(const Trace& t,
                                                               const PipelineGraphSpec& spec) {
  const auto c = invocation_counts(t, spec);
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < spec.size(); ++i) out[spec.name(i)] = c[i];
  return out;
}

// Checks every trace invariant against the graph; throws ValidationError.
inline void validate_trace(Trace& t, const PipelineGraphSpec& spec) {
  const std::string where = "trace '" + t.trace_id + "'";
  const auto& loop = spec.loop();
  int max_iter = 0;
  int last_body_iter = 0;
  for (std::size_t pos = 0; pos < t.invocations.size(); ++pos) {
    const auto& inv = t.invocations[pos];
    const auto idx = spec.find(inv.node_id);
    if (!idx) throw ValidationError(where + ": invocation of undeclared node '" + inv.node_id + "'");
    if (inv.invocation_index != pos)
      throw ValidationError(where + ": invocation_index " + std::to_string(inv.invocation_index) +
                            " out of order at position " + std::to_string(pos));
    const auto& schema = spec.node(*idx);
    for (const auto& f : schema.fields) {
      auto it = inv.output.find(f.name);
      if (it == inv.output.end())
        throw ValidationError(where + ": node '" + inv.node_id + "' output is missing field '" + f.name + "'");
      if (it->second.kind() != f.kind)
        throw ValidationError(where + ": node '" + inv.node_id + "' field '" + f.name + "' has kind " +
                              to_string(it->second.kind()) + ", declared " + to_string(f.kind));
    }
    for (const auto& [name, v] : inv.output) {
      (void)v;
      if (!schema.field(name))
        throw ValidationError(where + ": node '" + inv.node_id + "' output has undeclared field '" + name + "'");
    }
    if (spec.in_loop(*idx)) {
      if (inv.iteration_index < 1)
        throw ValidationError(where + ": loop-body node '" + inv.node_id + "' has iteration_index < 1");
      if (inv.iteration_index > loop.k_max)
        throw ValidationError(where + ": iteration_index " + std::to_string(inv.iteration_index) +
                              " exceeds k_max " + std::to_string(loop.k_max));
      if (inv.iteration_index < last_body_iter)
        throw ValidationError(where + ": loop iteration indices are not monotone");
      last_body_iter = inv.iteration_index;
      max_iter = std::max(max_iter, inv.iteration_index);
    } else if (inv.iteration_index != 0) {
      throw ValidationError(where + ": node '" + inv.node_id + "' outside the loop has iteration_index " +
                            std::to_string(inv.iteration_index));
    }
    const bool ctrl = spec.is_controller(*idx);
    if (ctrl && !inv.action) throw ValidationError(where + ": controller invocation without an action");
    if (!ctrl && inv.action) throw ValidationError(where + ": node '" + inv.node_id + "' is not the controller but records an action");
    if (ctrl && std::find(loop.actions.begin(), loop.actions.end(), *inv.action) == loop.actions.end())
      throw ValidationError(where + ": action '" + *inv.action + "' is not in the action set");
  }

  const int expected_k = spec.has_loop() ? max_iter : 1;
  if (t.realized_k < 0) t.realized_k = expected_k;  // absent in the record
  if (t.realized_k != expected_k)
    throw ValidationError(where + ": realized_k " + std::to_string(t.realized_k) + " but invocations imply " +
                          std::to_string(expected_k));
  if (spec.has_loop() && t.realized_k > loop.k_max)
    throw ValidationError(where + ": realized_k exceeds k_max");

  for (const auto& [gid, taken] : t.gates) {
    (void)taken;
    const bool declared = std::any_of(spec.gates().begin(), spec.gates().end(),
                                      [&](const GateSpec& g) { return g.id == gid; });
    if (!declared) throw ValidationError(where + ": gate '" + gid + "' is not declared in the graph");
  }
  const auto counts = invocation_counts(t, spec);
  for (const auto& g : spec.gates()) {
    auto it = t.gates.find(g.id);
    if (it == t.gates.end()) throw ValidationError(where + ": no activation recorded for gate '" + g.id + "'");
    if (!it->second) {
      for (const auto& gated : g.gated)
        if (counts[spec.index_of(gated)] != 0)
          throw ValidationError(where + ": node '" + gated + "' ran although gate '" + g.id + "' was skipped");
    }
  }

  // Dependency order: within an iteration for body edges, by first invocation otherwise.
  std::vector<std::optional<std::size_t>> first(spec.size());
  std::map<std::pair<std::size_t, int>, std::size_t> first_in_iter;
  for (std::size_t pos = 0; pos < t.invocations.size(); ++pos) {
    const auto i = spec.index_of(t.invocations[pos].node_id);
    if (!first[i]) first[i] = pos;
    first_in_iter.emplace(std::make_pair(i, t.invocations[pos].iteration_index), pos);
  }
  for (std::size_t i = 0; i < spec.size(); ++i) {
    for (auto j : spec.children(i)) {
      if (spec.in_loop(i) && spec.in_loop(j)) {
        if (spec.is_feedback_edge(i, j)) continue;
        for (int it = 1; it <= t.realized_k; ++it) {
          auto a = first_in_iter.find({i, it});
          auto b = first_in_iter.find({j, it});
          if (a != first_in_iter.end() && b != first_in_iter.end() && a->second > b->second)
            throw ValidationError(where + ": '" + spec.name(j) + "' runs before its parent '" + spec.name(i) +
                                  "' in iteration " + std::to_string(it));
        }
      } else if (first[i] && first[j] && *first[i] > *first[j]) {
        throw ValidationError(where + ": '" + spec.name(j) + "' runs before its parent '" + spec.name(i) + "'");
      }
    }
  }
  if (spec.has_loop()) (void)derive_topology(t, spec);
}

// ---------------------------------------------------------------------------
// Corpus

class TraceCorpus {
 public:
  TraceCorpus() = default;
  explicit TraceCorpus(std::vector<Trace> traces) : traces_(std::move(traces)) { reindex(); }

  const std::vector<Trace>& traces() const { return traces_; }
  std::size_t size() const { return traces_.size(); }
  bool empty() const { return traces_.empty(); }
  const Trace& operator[](std::size_t i) const { return traces_[i]; }

  // Trace indices per group, groups in key order, members in corpus order.
  const std::map<std::string, std::vector<std::size_t>>& groups() const { return groups_; }

  std::vector<std::size_t> with_mode(TraceMode m) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < traces_.size(); ++i)
      if (traces_[i].mode == m) out.push_back(i);
    return out;
  }

  const std::vector<std::string>& warnings() const { return warnings_; }
  void warn(std::string w) { warnings_.push_back(std::move(w)); }

  void add(Trace t) {
    traces_.push_back(std::move(t));
    groups_[traces_.back().group_key].push_back(traces_.size() - 1);
  }

 private:
  void reindex() {
    groups_.clear();
    for (std::size_t i = 0; i < traces_.size(); ++i) groups_[traces_[i].group_key].push_back(i);
  }

  std::vector<Trace> traces_;
  std::map<std::string, std::vector<std::size_t>> groups_;
  std::vector<std::string> warnings_;
};

// All unordered same-group pairs; left is the member with the smaller trace_id.
inline std::vector<TracePair> form_pairs(const TraceCorpus& corpus,
                                         std::optional<TraceMode> mode = std::nullopt) {
  std::vector<TracePair> pairs;
  for (const auto& [key, members_all] : corpus.groups()) {
    std::vector<std::size_t> members;
    for (auto m : members_all)
      if (!mode || corpus[m].mode == *mode) members.push_back(m);
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return corpus[a].trace_id < corpus[b].trace_id;
    });
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b) pairs.push_back({members[a], members[b], key});
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// JSON-lines form

inline Trace trace_from_json(const json& j, const PipelineGraphSpec& spec) {
  Trace t;
  try {
    t.trace_id = j.at("trace_id").get<std::string>();
    t.group_key = j.at("group_key").get<std::string>();
    t.mode = parse_trace_mode(j.value("mode", std::string("observational")));
    if (j.contains("perturbation_ref") && !j.at("perturbation_ref").is_null())
      t.perturbation_ref = j.at("perturbation_ref").get<std::string>();
    t.realized_k = j.contains("realized_k") ? j.at("realized_k").get<int>() : -1;
    if (j.contains("gates")) t.gates = j.at("gates").get<std::map<std::string, bool>>();
    if (j.contains("stream") && !j.at("stream").is_null()) {
      const auto& s = j.at("stream");
      t.stream = StreamRef{s.at("seed").get<std::uint64_t>(), s.at("group").get<std::uint32_t>(),
                           s.at("repeat").get<std::uint32_t>()};
    }
    for (const auto& ji : j.at("invocations")) {
      InvocationRecord r;
      r.node_id = ji.at("node_id").get<std::string>();
      r.invocation_index = ji.at("invocation_index").get<std::size_t>();
      r.iteration_index = ji.value("iteration_index", 0);
      if (ji.contains("action") && !ji.at("action").is_null()) r.action = ji.at("action").get<std::string>();
      if (ji.contains("action_params")) r.action_params = ji.at("action_params").get<ActionParams>();
      const auto idx = spec.find(r.node_id);
      if (!idx) throw ValidationError("invocation of undeclared node '" + r.node_id + "'");
      const auto& schema = spec.node(*idx);
      const auto& out = ji.at("output");
      if (!out.is_object()) throw ValidationError("node '" + r.node_id + "' output is not an object");
      for (auto it = out.begin(); it != out.end(); ++it) {
        const auto* f = schema.field(it.key());
        if (!f) throw ValidationError("node '" + r.node_id + "' output has undeclared field '" + it.key() + "'");
        try {
          r.output.emplace(it.key(), value_from_json(f->kind, it.value()));
        } catch (const ValidationError& e) {
          throw ValidationError("node '" + r.node_id + "' field '" + it.key() + "': " + e.what());
        }
      }
      t.invocations.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("trace record: ") + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError("trace '" + t.trace_id + "': " + e.what());
  }
  validate_trace(t, spec);
  return t;
}

inline json trace_to_json(const Trace& t) {
  json j;
  j["trace_id"] = t.trace_id;
  j["group_key"] = t.group_key;
  j["mode"] = to_string(t.mode);
  j["perturbation_ref"] = t.perturbation_ref ? json(*t.perturbation_ref) : json(nullptr);
  j["realized_k"] = t.realized_k;
  j["gates"] = t.gates;
  if (t.stream) j["stream"] = {{"seed", t.stream->seed}, {"group", t.stream->group}, {"repeat", t.stream->repeat}};
  j["invocations"] = json::array();
  for (const auto& r : t.invocations) {
    json ji;
    ji["node_id"] = r.node_id;
    ji["invocation_index"] = r.invocation_index;
    ji["iteration_index"] = r.iteration_index;
    ji["action"] = r.action ? json(*r.action) : json(nullptr);
    ji["action_params"] = r.action_params;
    json out = json::object();
    for (const auto& [k, v] : r.output) out[k] = value_to_json(v);
    ji["output"] = std::move(out);
    j["invocations"].push_back(std::move(ji));
  }
  return j;
}

inline TraceCorpus parse_traces(std::istream& in, const PipelineGraphSpec& spec) {
  TraceCorpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      corpus.add(trace_from_json(j, spec));
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (corpus.empty()) corpus.warn("trace corpus is empty");
  return corpus;
}

inline TraceCorpus load_traces(const std::string& path, const PipelineGraphSpec& spec) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return parse_traces(in, spec);
}

inline void write_traces(std::ostream& out, const TraceCorpus& corpus) {
  for (const auto& t : corpus.traces()) out << trace_to_json(t).dump() << '\n';
}

inline void write_traces(const std::string& path, const TraceCorpus& corpus) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  write_traces(out, corpus);
}

}  // namespace quiver
