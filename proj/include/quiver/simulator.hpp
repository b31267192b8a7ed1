#pragma once

// Synthetic pipeline lab. Every node computes a scalar latent u from its
// parents' latents and its own randomness stream, then renders u into its
// declared typed fields. Randomness is addressed by (node, group, repeat,
// iteration, draw), so a trace can be re-executed with every unperturbed draw
// held fixed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "quiver/distance.hpp"
#include "quiver/error.hpp"
#include "quiver/graph.hpp"
#include "quiver/hash.hpp"
#include "quiver/philox.hpp"
#include "quiver/trace.hpp"
#include "quiver/typed_value.hpp"

namespace quiver {

enum class SynthKind { constant, linear, absorber, threshold_flip, noise_origin, gate_controller, loop_controller, coupling };

inline SynthKind parse_synth_kind(std::string_view s) {
  if (s == "constant") return SynthKind::constant;
  if (s == "linear" || s == "linear_propagator") return SynthKind::linear;
  if (s == "absorber") return SynthKind::absorber;
  if (s == "threshold_flip") return SynthKind::threshold_flip;
  if (s == "noise_origin") return SynthKind::noise_origin;
  if (s == "gate_controller") return SynthKind::gate_controller;
  if (s == "loop_controller") return SynthKind::loop_controller;
  if (s == "coupling") return SynthKind::coupling;
  throw ValidationError("unknown synth node kind '" + std::string(s) + "'");
}

inline const char* to_string(SynthKind k) {
  switch (k) {
    case SynthKind::constant: return "constant";
    case SynthKind::linear: return "linear";
    case SynthKind::absorber: return "absorber";
    case SynthKind::threshold_flip: return "threshold_flip";
    case SynthKind::noise_origin: return "noise_origin";
    case SynthKind::gate_controller: return "gate_controller";
    case SynthKind::loop_controller: return "loop_controller";
    case SynthKind::coupling: return "coupling";
  }
  return "?";
}

enum class NoiseDist { none, uniform, bernoulli, stratified };

// uniform: 3L*U, so two independent draws differ by L on average.
// bernoulli: L with probability p.  stratified: L*(repeat + U/2).
struct NoiseSpec {
  NoiseDist dist = NoiseDist::none;
  double level = 0.0;
  double prob = 1.0;
};

enum class EmitKind { level, above, decision, bucket, window, tokens, constant };

struct EmitRule {
  EmitKind kind = EmitKind::level;
  double at = 0.5;
  std::vector<double> cuts;
  std::vector<std::string> labels;
  int universe = 100;
  int width = 10;
  std::string prefix = "e";
  std::optional<TypedValue> value;
};

struct SynthNodeSpec {
  std::string node_id;
  SynthKind kind = SynthKind::linear;
  double base = 0.0;
  double default_coef = 1.0;
  std::map<std::string, double> coef;
  std::map<std::pair<std::string, std::string>, double> gamma;
  NoiseSpec noise;
  double group_spread = 0.0;
  // threshold_flip: f(x) = low*x below theta, low*theta + jump + high*(x - theta) above.
  double theta = 0.5;
  double low = 0.0;
  double high = 0.0;
  double jump = 1.0;
  // gate_controller
  std::optional<double> branch_prob;
  double flip_prob = 0.0;
  // loop_controller
  int base_k = 1;
  double k_gain = 0.0;
  double extra_prob = 0.0;
  double action_flip_prob = 0.0;
  std::string step_action;
  std::string terminal_action;
  std::string flip_action;
  std::vector<double> param_cuts;
  // coupling
  double transmit = 1.0;

  std::optional<std::string> latent;
  std::map<std::string, EmitRule> emit;
  json raw;

  double coefficient(const std::string& parent) const {
    auto it = coef.find(parent);
    return it == coef.end() ? default_coef : it->second;
  }
};

struct SimulationOptions {
  std::size_t groups = 100;
  std::size_t repeats = 2;
  std::uint64_t seed = 1;
  // Repeat 0 of every group runs with all intrinsic randomness switched off.
  bool reference_repeat = false;
};

struct Scenario {
  PipelineGraphSpec graph;
  std::vector<SynthNodeSpec> synth;  // graph node order
  SimulationOptions options;
  json source;
};

namespace detail {

inline NoiseSpec noise_from_json(const json& j) {
  NoiseSpec n;
  if (j.is_null()) return n;
  if (j.is_number()) {
    n.dist = NoiseDist::uniform;
    n.level = j.get<double>();
    return n;
  }
  const auto d = j.value("dist", std::string("uniform"));
  if (d == "uniform") n.dist = NoiseDist::uniform;
  else if (d == "bernoulli") n.dist = NoiseDist::bernoulli;
  else if (d == "stratified") n.dist = NoiseDist::stratified;
  else if (d == "none") n.dist = NoiseDist::none;
  else throw ValidationError("unknown noise distribution '" + d + "'");
  n.level = j.value("level", 0.0);
  n.prob = j.value("prob", 1.0);
  if (n.level < 0) throw ValidationError("noise level must be nonnegative");
  if (n.prob < 0 || n.prob > 1) throw ValidationError("noise probability must lie in [0, 1]");
  return n;
}

inline EmitRule emit_from_json(const json& j, const FieldSpec& f) {
  EmitRule r;
  const auto rule = j.value("rule", std::string("level"));
  if (rule == "level") r.kind = EmitKind::level;
  else if (rule == "above") r.kind = EmitKind::above;
  else if (rule == "decision") r.kind = EmitKind::decision;
  else if (rule == "bucket") r.kind = EmitKind::bucket;
  else if (rule == "window") r.kind = EmitKind::window;
  else if (rule == "tokens") r.kind = EmitKind::tokens;
  else if (rule == "constant") r.kind = EmitKind::constant;
  else throw ValidationError("unknown emit rule '" + rule + "'");
  r.at = j.value("at", 0.5);
  r.cuts = j.value("cuts", std::vector<double>{});
  r.labels = j.value("labels", std::vector<std::string>{});
  r.universe = j.value("universe", 100);
  r.width = j.value("width", 10);
  r.prefix = j.value("prefix", f.name);
  if (j.contains("value")) r.value = value_from_json(f.kind, j.at("value"));

  auto need = [&](bool ok) {
    if (!ok) throw ValidationError("emit rule '" + rule + "' cannot produce field '" + f.name + "' of kind " + to_string(f.kind));
  };
  switch (r.kind) {
    case EmitKind::level: need(f.kind == FieldKind::numeric); break;
    case EmitKind::above:
    case EmitKind::decision: need(f.kind == FieldKind::boolean); break;
    case EmitKind::bucket:
      need(f.kind == FieldKind::categorical);
      if (r.labels.size() != r.cuts.size() + 1) throw ValidationError("bucket rule needs one more label than cuts");
      break;
    case EmitKind::window:
      need(f.kind == FieldKind::set || f.kind == FieldKind::ordered_list || f.kind == FieldKind::mapping);
      if (r.universe <= 0 || r.width < 0) throw ValidationError("window rule needs positive universe and nonnegative width");
      break;
    case EmitKind::tokens:
      need(f.kind == FieldKind::text);
      if (r.universe <= 0 || r.width < 0) throw ValidationError("tokens rule needs positive universe and nonnegative width");
      break;
    case EmitKind::constant:
      if (!r.value) throw ValidationError("constant emit rule needs a value");
      break;
  }
  return r;
}

inline double prob_in_range(const json& j, const char* key, double dflt) {
  const double p = j.value(key, dflt);
  if (p < 0 || p > 1) throw ValidationError(std::string(key) + " must lie in [0, 1]");
  return p;
}

inline SynthNodeSpec synth_from_json(const json& j, const NodeSchema& schema, const PipelineGraphSpec& g) {
  SynthNodeSpec s;
  s.node_id = schema.node_id;
  s.raw = j;
  s.kind = parse_synth_kind(j.value("kind", std::string("linear")));
  s.base = j.value("base", 0.0);
  if (j.contains("coef")) {
    const auto& c = j.at("coef");
    if (c.is_number()) s.default_coef = c.get<double>();
    else
      for (auto it = c.begin(); it != c.end(); ++it) s.coef[it.key()] = it.value().get<double>();
  }
  const auto idx = g.index_of(schema.node_id);
  for (const auto& [p, c] : s.coef) {
    const auto pi = g.find(p);
    if (!pi || !g.has_edge(*pi, idx)) throw ValidationError("coef for '" + p + "' on '" + s.node_id + "' names a non-parent");
    if (c < 0) throw ValidationError("coefficients must be nonnegative");
  }
  if (s.default_coef < 0) throw ValidationError("coefficients must be nonnegative");
  if (j.contains("gamma")) {
    for (auto it = j.at("gamma").begin(); it != j.at("gamma").end(); ++it) {
      const auto key = it.key();
      const auto star = key.find('*');
      if (star == std::string::npos) throw ValidationError("gamma key '" + key + "' must look like 'a*b'");
      s.gamma[{key.substr(0, star), key.substr(star + 1)}] = it.value().get<double>();
    }
  }
  s.noise = noise_from_json(j.value("noise", json()));
  s.group_spread = j.value("group_spread", 0.0);
  s.theta = j.value("theta", 0.5);
  s.low = j.value("low", 0.0);
  s.high = j.value("high", 0.0);
  s.jump = j.value("jump", 1.0);
  if (s.kind == SynthKind::threshold_flip && !(s.theta > 0)) throw ValidationError("threshold theta must be positive");
  if (j.contains("branch_prob")) s.branch_prob = prob_in_range(j, "branch_prob", 0.5);
  s.flip_prob = prob_in_range(j, "flip_prob", 0.0);
  s.base_k = j.value("base_k", 1);
  s.k_gain = j.value("k_gain", 0.0);
  s.extra_prob = prob_in_range(j, "extra_prob", 0.0);
  s.action_flip_prob = prob_in_range(j, "action_flip_prob", 0.0);
  s.transmit = prob_in_range(j, "transmit", 1.0);
  s.param_cuts = j.value("param_cuts", std::vector<double>{});
  if (s.kind == SynthKind::loop_controller) {
    if (!g.has_loop() || g.loop().controller != s.node_id)
      throw ValidationError("loop_controller '" + s.node_id + "' is not the graph's loop controller");
    const auto& acts = g.loop().actions;
    s.step_action = j.value("step_action", acts.front());
    s.terminal_action = j.value("terminal_action", acts.back());
    s.flip_action = j.value("flip_action", acts.size() > 1 ? acts[1] : acts.front());
    for (const auto* a : {&s.step_action, &s.terminal_action, &s.flip_action})
      if (std::find(acts.begin(), acts.end(), *a) == acts.end())
        throw ValidationError("action '" + *a + "' is not in the action set");
  } else if (g.has_loop() && g.loop().controller == s.node_id) {
    throw ValidationError("loop controller '" + s.node_id + "' must use the loop_controller kind");
  }
  if (s.kind == SynthKind::gate_controller && g.gates().end() == std::find_if(g.gates().begin(), g.gates().end(), [&](const GateSpec& gt) { return gt.node == s.node_id; }))
    throw ValidationError("gate_controller '" + s.node_id + "' controls no gate");

  const json emit = j.value("emit", json::object());
  for (auto it = emit.begin(); it != emit.end(); ++it)
    if (!schema.field(it.key())) throw ValidationError("emit rule for undeclared field '" + s.node_id + "." + it.key() + "'");
  for (const auto& f : schema.fields) {
    if (emit.contains(f.name)) {
      s.emit[f.name] = emit_from_json(emit.at(f.name), f);
    } else if (f.kind == FieldKind::numeric) {
      s.emit[f.name] = emit_from_json(json{{"rule", "level"}}, f);
    } else if (f.kind == FieldKind::boolean) {
      s.emit[f.name] = emit_from_json(json{{"rule", s.kind == SynthKind::gate_controller ? "decision" : "above"}}, f);
    } else {
      throw ValidationError("field '" + s.node_id + "." + f.name + "' needs an emit rule");
    }
  }
  if (j.contains("latent")) {
    const auto name = j.at("latent").get<std::string>();
    const auto* f = schema.field(name);
    if (!f || f->kind != FieldKind::numeric || s.emit.at(name).kind != EmitKind::level)
      throw ValidationError("latent '" + name + "' of '" + s.node_id + "' must be a numeric level field");
    s.latent = name;
  } else {
    for (const auto& f : schema.fields)
      if (f.kind == FieldKind::numeric && s.emit.at(f.name).kind == EmitKind::level) {
        s.latent = f.name;
        break;
      }
  }
  return s;
}

}  // namespace detail

inline Scenario scenario_from_json(const json& j) {
  Scenario sc;
  sc.source = j;
  sc.graph = graph_spec_from_json(j);
  std::map<std::string, json> blocks;
  for (const auto& jn : j.at("nodes")) blocks[jn.at("id").get<std::string>()] = jn.value("synth", json::object());
  for (const auto& n : sc.graph.nodes()) {
    try {
      sc.synth.push_back(detail::synth_from_json(blocks.at(n.node_id), n, sc.graph));
    } catch (const json::exception& e) {
      throw ValidationError("synth block of '" + n.node_id + "': " + e.what());
    }
  }
  const json sim = j.value("simulation", json::object());
  try {
    sc.options.groups = sim.value("groups", sc.options.groups);
    sc.options.repeats = sim.value("repeats", sc.options.repeats);
    sc.options.seed = sim.value("seed", sc.options.seed);
    sc.options.reference_repeat = sim.value("reference_repeat", false);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("simulation block: ") + e.what());
  }
  return sc;
}

inline Scenario load_scenario(const std::string& path) { return scenario_from_json(read_json_file(path)); }

// Draw slots within one (group, repeat, iteration) cell of a node stream.
enum DrawSlot : std::uint32_t {
  kNoiseValue = 0,
  kNoiseHit = 1,
  kTransmit = 2,
  kGateFlip = 3,
  kExtraIteration = 4,
  kActionFlip = 5,
  kGroupSpread = 6,
  kBranch = 7,
};

inline constexpr std::uint32_t kGroupLevel = 0xFFFFFFFFu;

inline std::string group_key_for(std::size_t group) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "g%06zu", group);
  return buf;
}

inline std::string trace_id_for(std::size_t group, std::size_t repeat) {
  return group_key_for(group) + "-r" + std::to_string(repeat);
}

class Simulator {
 public:
  explicit Simulator(const Scenario& sc) : sc_(sc) {
    for (const auto& s : sc_.synth) streams_.emplace_back(sc_.options.seed, fnv1a64(s.node_id));
  }

  Simulator(const Scenario& sc, std::uint64_t seed) : sc_(sc) {
    for (const auto& s : sc_.synth) streams_.emplace_back(seed, fnv1a64(s.node_id));
    seed_ = seed;
  }

  std::uint64_t seed() const { return seed_ ? *seed_ : sc_.options.seed; }

  // One execution; `overrides` replace the listed nodes' outputs at every invocation.
  Trace run(std::size_t group, std::size_t repeat, const std::map<std::size_t, NodeOutput>& overrides = {}) const {
    const auto& g = sc_.graph;
    const std::size_t n = g.size();
    const bool clean = sc_.options.reference_repeat && repeat == 0;
    const auto gr = static_cast<std::uint32_t>(group);
    const auto rp = static_cast<std::uint32_t>(repeat);

    Trace t;
    t.group_key = group_key_for(group);
    t.trace_id = trace_id_for(group, repeat);
    t.stream = StreamRef{seed(), gr, rp};

    std::vector<bool> invoked(n, false);
    std::vector<double> latent(n, 0.0);
    std::vector<bool> decision(n, false);
    std::map<std::string, bool> gate_state;
    std::vector<bool> controller_done(n, false);

    auto gate_open = [&](std::size_t v) {
      for (const auto* gs : g.gates_on(v)) {
        const auto c = g.index_of(gs->node);
        if (!controller_done[c])
          throw ValidationError("node '" + g.name(v) + "' is scheduled before its gate controller '" + gs->node + "'");
        if (!gate_state.at(gs->id)) return false;
      }
      return true;
    };

    auto emit = [&](std::size_t v, std::uint32_t iter, const std::vector<double>& inputs, const ActionParams* params,
                    std::optional<std::string> action) {
      const auto& s = sc_.synth[v];
      const auto& rs = streams_[v];
      double x = 0.0;
      const auto& pa = g.parents(v);
      for (std::size_t k = 0; k < pa.size(); ++k) x += s.coefficient(g.name(pa[k])) * inputs[k];
      for (const auto& [key, gm] : s.gamma) {
        double a = 0, b = 0;
        for (std::size_t k = 0; k < pa.size(); ++k) {
          if (g.name(pa[k]) == key.first) a = inputs[k];
          if (g.name(pa[k]) == key.second) b = inputs[k];
        }
        x += gm * a * b;
      }
      double u = s.base;
      switch (s.kind) {
        case SynthKind::constant: break;
        case SynthKind::threshold_flip:
          u += x < s.theta ? s.low * x : s.low * s.theta + s.jump + s.high * (x - s.theta);
          break;
        case SynthKind::coupling: {
          const bool pass = clean || rs.bernoulli(s.transmit, gr, rp, iter, kTransmit);
          u += pass ? x : 0.0;
          break;
        }
        default: u += x; break;
      }
      if (s.kind != SynthKind::constant && !clean) {
        switch (s.noise.dist) {
          case NoiseDist::none: break;
          case NoiseDist::uniform: u += 3.0 * s.noise.level * rs.uniform(gr, rp, iter, kNoiseValue); break;
          case NoiseDist::bernoulli:
            if (rs.bernoulli(s.noise.prob, gr, rp, iter, kNoiseHit)) u += s.noise.level;
            break;
          case NoiseDist::stratified:
            u += s.noise.level * (static_cast<double>(repeat) + 0.5 * rs.uniform(gr, rp, iter, kNoiseValue));
            break;
        }
      }
      if (s.group_spread != 0.0) u += s.group_spread * rs.uniform(gr, kGroupLevel, 0, kGroupSpread);

      bool dec = false;
      if (s.kind == SynthKind::gate_controller) {
        dec = s.branch_prob ? rs.bernoulli(*s.branch_prob, gr, kGroupLevel, 0, kBranch) : u >= s.theta;
        if (!clean && rs.bernoulli(s.flip_prob, gr, rp, iter, kGateFlip)) dec = !dec;
      }
      decision[v] = dec;

      InvocationRecord rec;
      rec.node_id = g.name(v);
      rec.invocation_index = t.invocations.size();
      rec.iteration_index = static_cast<int>(iter);
      rec.action = std::move(action);
      if (params) rec.action_params = *params;
      if (auto it = overrides.find(v); it != overrides.end()) {
        rec.output = it->second;
      } else {
        for (const auto& f : g.node(v).fields) rec.output.emplace(f.name, render(s.emit.at(f.name), f, u, dec));
      }
      latent[v] = u;
      if (s.latent) {
        if (const auto* num = rec.output.at(*s.latent).get_if<Numeric>()) latent[v] = num->value;
      }
      invoked[v] = true;
      t.invocations.push_back(std::move(rec));
      return u;
    };

    auto inputs_of = [&](std::size_t v, const std::vector<double>* feedback) {
      std::vector<double> in;
      for (auto p : g.parents(v)) {
        if (feedback && g.is_feedback_edge(p, v)) in.push_back((*feedback)[p]);
        else in.push_back(invoked[p] ? latent[p] : 0.0);
      }
      return in;
    };

    auto finish_controller = [&](std::size_t v) {
      controller_done[v] = true;
      for (const auto& gs : g.gates())
        if (gs.node == g.name(v)) {
          bool taken = false;
          if (invoked[v]) taken = gs.taken(t.invocations.back().output.at(gs.field));
          gate_state[gs.id] = taken;
        }
    };

    int realized_k = 0;
    for (const auto& step : g.execution_order()) {
      if (step) {
        const auto v = *step;
        if (gate_open(v)) emit(v, 0, inputs_of(v, nullptr), nullptr, std::nullopt);
        finish_controller(v);
        continue;
      }
      // Loop body.
      const auto& body = g.body_order();
      const auto ctrl = body.front();
      const auto& cs = sc_.synth[ctrl];
      const auto& crs = streams_[ctrl];
      if (!gate_open(ctrl)) {
        for (auto v : body) finish_controller(v);
        continue;
      }
      std::vector<double> prev(n, 0.0);
      int k = 1;
      for (int it = 1; it <= k; ++it) {
        const auto iter = static_cast<std::uint32_t>(it);
        const auto in = inputs_of(ctrl, &prev);
        // The controller input level fixes k on the first iteration.
        double x = cs.base;
        const auto& pa = g.parents(ctrl);
        for (std::size_t q = 0; q < pa.size(); ++q) x += cs.coefficient(g.name(pa[q])) * in[q];
        if (it == 1) {
          k = cs.base_k + static_cast<int>(std::floor(cs.k_gain * x));
          if (!clean && crs.bernoulli(cs.extra_prob, gr, rp, 0, kExtraIteration)) ++k;
          k = std::clamp(k, 1, g.loop().k_max);
        }
        std::string action = it < k ? cs.step_action : cs.terminal_action;
        if (!clean && it < k && crs.bernoulli(cs.action_flip_prob, gr, rp, iter, kActionFlip)) action = cs.flip_action;
        ActionParams params;
        if (!cs.param_cuts.empty()) {
          const auto bin = std::upper_bound(cs.param_cuts.begin(), cs.param_cuts.end(), x) - cs.param_cuts.begin();
          params["bin"] = std::to_string(bin);
        }
        emit(ctrl, iter, in, &params, action);
        for (std::size_t b = 1; b < body.size(); ++b) {
          const auto v = body[b];
          if (gate_open(v)) emit(v, iter, inputs_of(v, &prev), nullptr, std::nullopt);
        }
        for (auto v : body) prev[v] = invoked[v] ? latent[v] : 0.0;
        realized_k = it;
      }
      for (auto v : body) finish_controller(v);
    }
    t.gates = gate_state;
    t.realized_k = g.has_loop() ? realized_k : 1;
    return t;
  }

  const Scenario& scenario() const { return sc_; }

 private:
  static TypedValue render(const EmitRule& r, const FieldSpec& f, double u, bool dec) {
    switch (r.kind) {
      case EmitKind::level: return TypedValue::numeric(u);
      case EmitKind::above: return TypedValue::boolean(u >= r.at);
      case EmitKind::decision: return TypedValue::boolean(dec);
      case EmitKind::bucket: {
        const auto idx = std::upper_bound(r.cuts.begin(), r.cuts.end(), u) - r.cuts.begin();
        return TypedValue::categorical(r.labels[static_cast<std::size_t>(idx)]);
      }
      case EmitKind::window:
      case EmitKind::tokens: {
        const auto start = static_cast<long long>(std::floor(u * r.universe));
        std::vector<std::string> xs;
        for (long long k = start; k < start + r.width; ++k) xs.push_back(r.prefix + std::to_string(k));
        if (r.kind == EmitKind::tokens) return TypedValue::text(kernel::join_tokens(xs));
        if (f.kind == FieldKind::set) return TypedValue::set(std::move(xs));
        if (f.kind == FieldKind::mapping) {
          // One key per window element, each holding a single derived sub-query.
          std::map<std::string, std::vector<std::string>> m;
          for (const auto& x : xs) m[x] = {x + "_q"};
          return TypedValue::mapping(std::move(m));
        }
        return TypedValue::ordered_list(std::move(xs));
      }
      case EmitKind::constant: return *r.value;
    }
    return *r.value;
  }

  const Scenario& sc_;
  std::vector<RandomStream> streams_;
  std::optional<std::uint64_t> seed_;
};

inline json ground_truth_report(const Scenario& sc) {
  json j;
  j["seed"] = sc.options.seed;
  j["groups"] = sc.options.groups;
  j["repeats"] = sc.options.repeats;
  j["reference_repeat"] = sc.options.reference_repeat;
  j["nodes"] = json::array();
  for (const auto& s : sc.synth) {
    json n{{"id", s.node_id}, {"kind", to_string(s.kind)}, {"base", s.base}};
    const char* dist = "none";
    if (s.noise.dist == NoiseDist::uniform) dist = "uniform";
    else if (s.noise.dist == NoiseDist::bernoulli) dist = "bernoulli";
    else if (s.noise.dist == NoiseDist::stratified) dist = "stratified";
    n["noise"] = {{"dist", dist}, {"level", s.noise.level}, {"prob", s.noise.prob}};
    if (s.kind == SynthKind::threshold_flip)
      n["threshold"] = {{"theta", s.theta}, {"low", s.low}, {"high", s.high}, {"jump", s.jump}};
    if (s.kind == SynthKind::gate_controller) {
      n["gate"] = {{"theta", s.theta}, {"flip_prob", s.flip_prob}};
      if (s.branch_prob) n["gate"]["branch_prob"] = *s.branch_prob;
    }
    if (s.kind == SynthKind::loop_controller)
      n["loop"] = {{"base_k", s.base_k}, {"k_gain", s.k_gain}, {"extra_prob", s.extra_prob},
                   {"action_flip_prob", s.action_flip_prob}};
    if (s.kind == SynthKind::coupling) n["transmit"] = s.transmit;
    if (!s.gamma.empty()) {
      n["interactions"] = json::array();
      for (const auto& [k, v] : s.gamma) n["interactions"].push_back({{"a", k.first}, {"b", k.second}, {"gamma", v}});
    }
    j["nodes"].push_back(std::move(n));
  }
  j["edges"] = json::array();
  for (const auto& [a, b] : sc.graph.edges()) {
    const auto& s = sc.synth[sc.graph.index_of(b)];
    j["edges"].push_back({{"from", a}, {"to", b}, {"coefficient", s.kind == SynthKind::constant ? 0.0 : s.coefficient(a)}});
  }
  return j;
}

struct SimulationResult {
  TraceCorpus corpus;
  json ground_truth;
};

inline SimulationResult simulate_corpus(const Scenario& sc, unsigned jobs = 1) {
  const Simulator sim(sc);
  const auto& o = sc.options;
  if (o.groups == 0 || o.repeats == 0) throw ValidationError("simulation needs at least one group and one repeat");
  std::vector<Trace> traces(o.groups * o.repeats);
  parallel_for(o.groups, jobs, [&](std::size_t gidx) {
    for (std::size_t r = 0; r < o.repeats; ++r) traces[gidx * o.repeats + r] = sim.run(gidx, r);
  });
  for (auto& t : traces) validate_trace(t, sc.graph);
  return {TraceCorpus(std::move(traces)), ground_truth_report(sc)};
}

// Re-runs `trace` with `node`'s output replaced at every invocation and all
// randomness held fixed; ancestors of `node` are checked to be unchanged.
inline Trace reexecute_from(const Trace& trace, const std::string& node, const NodeOutput& perturbed, const Scenario& sc) {
  if (!trace.stream) throw ValidationError("trace '" + trace.trace_id + "' carries no randomness stream");
  const auto v = sc.graph.index_of(node);
  const Simulator sim(sc, trace.stream->seed);
  Trace out = sim.run(trace.stream->group, trace.stream->repeat, {{v, perturbed}});
  out.trace_id = trace.trace_id;
  out.group_key = trace.group_key;

  // Only ancestor records that ran before the first intervention are fixed; inside a loop the
  // later iterations of an ancestor also descend from the target.
  const auto anc = sc.graph.ancestors(v);
  auto ancestor_records = [&](const Trace& t) {
    std::vector<const InvocationRecord*> rs;
    for (const auto& r : t.invocations) {
      if (r.node_id == node) break;
      if (anc[sc.graph.index_of(r.node_id)]) rs.push_back(&r);
    }
    return rs;
  };
  const auto before = ancestor_records(trace);
  const auto after = ancestor_records(out);
  bool same = before.size() == after.size();
  for (std::size_t k = 0; same && k < before.size(); ++k) {
    same = before[k]->node_id == after[k]->node_id && before[k]->iteration_index == after[k]->iteration_index &&
           before[k]->action == after[k]->action && before[k]->action_params == after[k]->action_params &&
           before[k]->output == after[k]->output;
  }
  if (!same) throw HarnessError("re-execution of '" + trace.trace_id + "' changed an ancestor of '" + node + "'");
  validate_trace(out, sc.graph);
  return out;
}

}  // namespace quiver
