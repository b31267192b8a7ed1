#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "quiver/distance.hpp"
#include "quiver/embedding.hpp"
#include "quiver/error.hpp"
#include "quiver/simulator.hpp"
#include "quiver/trace.hpp"
#include "quiver/trajectory.hpp"

namespace quiver {

enum class PerturbOp { categorical_flip, boolean_flip, list_edit, text_noise, field_override, numeric_shift };

inline PerturbOp parse_perturb_op(std::string_view s) {
  if (s == "categorical_flip") return PerturbOp::categorical_flip;
  if (s == "boolean_flip") return PerturbOp::boolean_flip;
  if (s == "list_edit") return PerturbOp::list_edit;
  if (s == "text_noise") return PerturbOp::text_noise;
  if (s == "field_override") return PerturbOp::field_override;
  if (s == "numeric_shift") return PerturbOp::numeric_shift;
  throw ValidationError("unknown perturbation operator '" + std::string(s) + "'");
}

inline const char* to_string(PerturbOp op) {
  switch (op) {
    case PerturbOp::categorical_flip: return "categorical_flip";
    case PerturbOp::boolean_flip: return "boolean_flip";
    case PerturbOp::list_edit: return "list_edit";
    case PerturbOp::text_noise: return "text_noise";
    case PerturbOp::field_override: return "field_override";
    case PerturbOp::numeric_shift: return "numeric_shift";
  }
  return "?";
}

enum class ListEdit { remove, add, replace };

struct PerturbationSpec {
  std::string name = "perturbation";
  std::string target;
  std::string field;
  PerturbOp op = PerturbOp::field_override;
  std::vector<double> schedule{1.0};
  std::optional<TypedValue> value;
  ListEdit edit = ListEdit::remove;
  // Explicit edit counts; otherwise round(magnitude * length).
  std::optional<std::size_t> removals;
  std::optional<std::size_t> additions;
  // Baseline repeats to perturb; empty means all.
  std::vector<std::size_t> repeats;
};

inline bool operator_fits(PerturbOp op, FieldKind k) {
  switch (op) {
    case PerturbOp::categorical_flip: return k == FieldKind::categorical;
    case PerturbOp::boolean_flip: return k == FieldKind::boolean;
    case PerturbOp::list_edit: return k == FieldKind::set || k == FieldKind::ordered_list;
    case PerturbOp::text_noise: return k == FieldKind::text;
    case PerturbOp::field_override: return true;
    case PerturbOp::numeric_shift: return k == FieldKind::numeric;
  }
  return false;
}

inline void validate_perturbation(const PerturbationSpec& p, const PipelineGraphSpec& g) {
  const auto& schema = g.node(p.target);
  const auto* f = schema.field(p.field);
  if (!f) throw ValidationError("perturbation targets undeclared field '" + p.target + "." + p.field + "'");
  if (!operator_fits(p.op, f->kind))
    throw ValidationError(std::string("operator ") + to_string(p.op) + " is incompatible with " + to_string(f->kind) +
                          " field '" + p.target + "." + p.field + "'");
  if (p.op == PerturbOp::field_override && (!p.value || p.value->kind() != f->kind))
    throw ValidationError("field_override needs a value of kind " + std::string(to_string(f->kind)));
  if (p.op == PerturbOp::categorical_flip && f->categories.size() < 2)
    throw ValidationError("categorical_flip needs the field to declare at least two categories");
  if (p.schedule.empty()) throw ValidationError("magnitude schedule is empty");
  for (std::size_t k = 1; k < p.schedule.size(); ++k)
    if (!(p.schedule[k] > p.schedule[k - 1])) throw ValidationError("magnitude schedule must be strictly increasing");
}

inline PerturbationSpec perturbation_from_json(const json& j, const PipelineGraphSpec& g) {
  PerturbationSpec p;
  try {
    p.name = j.value("name", p.name);
    p.target = j.at("target").get<std::string>();
    p.field = j.at("field").get<std::string>();
    p.op = parse_perturb_op(j.at("operator").get<std::string>());
    if (j.contains("schedule")) p.schedule = j.at("schedule").get<std::vector<double>>();
    if (j.contains("value")) {
      const auto* f = g.node(p.target).field(p.field);
      if (!f) throw ValidationError("perturbation targets undeclared field '" + p.target + "." + p.field + "'");
      p.value = value_from_json(f->kind, j.at("value"));
    }
    const auto e = j.value("edit", std::string("remove"));
    if (e == "remove") p.edit = ListEdit::remove;
    else if (e == "add") p.edit = ListEdit::add;
    else if (e == "replace") p.edit = ListEdit::replace;
    else throw ValidationError("unknown list edit '" + e + "'");
    if (j.contains("removals")) p.removals = j.at("removals").get<std::size_t>();
    if (j.contains("additions")) p.additions = j.at("additions").get<std::size_t>();
    p.repeats = j.value("repeats", std::vector<std::size_t>{});
  } catch (const json::exception& e) {
    throw ValidationError(std::string("perturbation spec: ") + e.what());
  }
  validate_perturbation(p, g);
  return p;
}

struct PerturbedOutput {
  NodeOutput output;
  Stratum stratum = Stratum::effective;
};

inline std::vector<std::string> elements_of(const TypedValue& v) {
  if (const auto* s = v.get_if<LabelSet>()) return s->elements;
  return v.as<OrderedList>().elements;
}

inline TypedValue apply_operator(const FieldSpec& f, const TypedValue& v, const PerturbationSpec& p, double m) {
  auto count = [&](std::size_t len) { return static_cast<std::size_t>(std::llround(m * static_cast<double>(len))); };
  switch (p.op) {
    case PerturbOp::categorical_flip: {
      const auto& cats = f.categories;
      auto it = std::find(cats.begin(), cats.end(), v.as<Categorical>().label);
      const std::size_t k = it == cats.end() ? 0 : static_cast<std::size_t>(it - cats.begin()) + 1;
      return TypedValue::categorical(cats[k % cats.size()]);
    }
    case PerturbOp::boolean_flip: return TypedValue::boolean(!v.as<Boolean>().flag);
    case PerturbOp::field_override: return *p.value;
    case PerturbOp::numeric_shift: return TypedValue::numeric(v.as<Numeric>().value + m * f.scale.value_or(1.0));
    case PerturbOp::list_edit: {
      auto xs = elements_of(v);
      const std::size_t len = xs.size();
      std::size_t rm = 0, add = 0;
      if (p.edit != ListEdit::add) rm = p.removals.value_or(count(len));
      if (p.edit != ListEdit::remove) add = p.additions.value_or(p.edit == ListEdit::replace ? rm : count(len));
      rm = std::min(rm, xs.size());
      xs.resize(xs.size() - rm);
      for (std::size_t k = 0; k < add; ++k) xs.push_back("~added" + std::to_string(k));
      if (f.kind == FieldKind::set) return TypedValue::set(std::move(xs));
      return TypedValue::ordered_list(std::move(xs));
    }
    case PerturbOp::text_noise: {
      auto toks = tokenize(v.as<Text>().value);
      const std::size_t r = std::min(count(toks.size()), toks.size());
      for (std::size_t k = 0; k < r; ++k) toks[toks.size() - 1 - k] = "~noise" + std::to_string(k);
      return TypedValue::text(kernel::join_tokens(toks));
    }
  }
  throw ValidationError("unreachable perturbation operator");
}

inline PerturbedOutput apply_perturbation(const NodeOutput& baseline, const PipelineGraphSpec& g,
                                          const PerturbationSpec& p, double magnitude) {
  const auto* f = g.node(p.target).field(p.field);
  if (!f) throw ValidationError("perturbation targets undeclared field '" + p.target + "." + p.field + "'");
  if (!operator_fits(p.op, f->kind))
    throw ValidationError(std::string("operator ") + to_string(p.op) + " is incompatible with " + to_string(f->kind));
  PerturbedOutput out;
  out.output = baseline;
  out.output.at(p.field) = apply_operator(*f, baseline.at(p.field), p, magnitude);
  out.stratum = out.output == baseline ? Stratum::no_op : Stratum::effective;
  return out;
}

// Perturbs the target's first invocation in `t`.
inline std::optional<PerturbedOutput> apply_perturbation(const Trace& t, const PipelineGraphSpec& g,
                                                         const PerturbationSpec& p, double magnitude) {
  for (const auto& inv : t.invocations)
    if (inv.node_id == p.target) return apply_perturbation(inv.output, g, p, magnitude);
  return std::nullopt;
}

inline std::string perturbation_ref(const PerturbationSpec& p, double m) { return p.name + "@" + format_number(m); }

struct SweepOutput {
  std::vector<SweepResult> results;
  TraceCorpus perturbed;
  std::size_t skipped = 0;  // baseline traces in which the target never ran
};

inline SweepOutput sweep(const TraceCorpus& baseline, const PerturbationSpec& p, const Scenario& sc,
                         const KernelConfig& cfg, unsigned jobs = 1) {
  const auto& g = sc.graph;
  validate_perturbation(p, g);
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < baseline.size(); ++i) {
    const auto& t = baseline[i];
    if (t.mode != TraceMode::observational) continue;
    if (!p.repeats.empty()) {
      if (!t.stream || std::find(p.repeats.begin(), p.repeats.end(), t.stream->repeat) == p.repeats.end()) continue;
    }
    members.push_back(i);
  }
  const auto& schema = g.node(p.target);
  const std::size_t cells = members.size() * p.schedule.size();
  std::vector<std::optional<SweepResult>> results(cells);
  std::vector<std::optional<Trace>> traces(cells);
  parallel_for(cells, jobs, [&](std::size_t c) {
    const auto& base = baseline[members[c / p.schedule.size()]];
    const double m = p.schedule[c % p.schedule.size()];
    auto pert = apply_perturbation(base, g, p, m);
    if (!pert) return;
    Trace t = reexecute_from(base, p.target, pert->output, sc);
    t.mode = TraceMode::interventional;
    t.perturbation_ref = perturbation_ref(p, m);
    t.trace_id = base.trace_id + "~" + *t.perturbation_ref;
    const NodeOutput* before = nullptr;
    for (const auto& inv : base.invocations)
      if (inv.node_id == p.target) {
        before = &inv.output;
        break;
      }
    SweepResult r;
    r.baseline_trace = base.trace_id;
    r.group_key = base.group_key;
    r.magnitude = m;
    r.realized_d = node_distance(schema, *before, pert->output, cfg).aggregate;
    r.divergence = trajectory_divergence(base, t, g, cfg);
    r.stratum = pert->stratum;
    r.perturbation_ref = *t.perturbation_ref;
    results[c] = std::move(r);
    traces[c] = std::move(t);
  });
  SweepOutput out;
  for (std::size_t c = 0; c < cells; ++c) {
    if (!results[c]) {
      ++out.skipped;
      continue;
    }
    out.results.push_back(std::move(*results[c]));
    out.perturbed.add(std::move(*traces[c]));
  }
  return out;
}

inline json sweep_result_to_json(const SweepResult& r) {
  return json{{"baseline_trace", r.baseline_trace},
              {"group_key", r.group_key},
              {"perturbation_ref", r.perturbation_ref},
              {"magnitude", r.magnitude},
              {"realized_d", r.realized_d},
              {"stratum", to_string(r.stratum)},
              {"d_iter", r.divergence.d_iter},
              {"d_shape", r.divergence.d_shape},
              {"d_output", r.divergence.d_output},
              {"d_struct", r.divergence.d_struct}};
}

inline SweepResult sweep_result_from_json(const json& j) {
  SweepResult r;
  try {
    r.baseline_trace = j.at("baseline_trace").get<std::string>();
    r.group_key = j.value("group_key", std::string{});
    r.perturbation_ref = j.value("perturbation_ref", std::string{});
    r.magnitude = j.at("magnitude").get<double>();
    r.realized_d = j.at("realized_d").get<double>();
    const auto s = j.at("stratum").get<std::string>();
    if (s == "effective") r.stratum = Stratum::effective;
    else if (s == "no_op") r.stratum = Stratum::no_op;
    else throw ValidationError("unknown stratum '" + s + "'");
    r.divergence.d_iter = j.at("d_iter").get<std::size_t>();
    r.divergence.d_shape = j.at("d_shape").get<std::size_t>();
    r.divergence.d_output = j.at("d_output").get<double>();
    r.divergence.d_struct = j.at("d_struct").get<bool>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("sweep record: ") + e.what());
  }
  return r;
}

}  // namespace quiver
