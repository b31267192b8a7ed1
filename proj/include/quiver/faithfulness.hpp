#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "quiver/distance.hpp"
#include "quiver/error.hpp"
#include "quiver/graph.hpp"
#include "quiver/trace.hpp"

namespace quiver {

struct GoldenRecord {
  std::string group_key;
  std::string node_id;
  NodeOutput expected;  // any subset of the node's fields
};

inline GoldenRecord golden_from_json(const json& j, const PipelineGraphSpec& spec) {
  GoldenRecord g;
  try {
    g.group_key = j.at("group_key").get<std::string>();
    g.node_id = j.at("node_id").get<std::string>();
    const auto idx = spec.find(g.node_id);
    if (!idx) throw ValidationError("golden references unknown node '" + g.node_id + "'");
    const auto& schema = spec.node(*idx);
    const auto& exp = j.at("expected");
    for (auto it = exp.begin(); it != exp.end(); ++it) {
      const auto* f = schema.field(it.key());
      if (!f) throw ValidationError("golden references unknown field '" + g.node_id + "." + it.key() + "'");
      g.expected.emplace(it.key(), value_from_json(f->kind, it.value()));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("golden record: ") + e.what());
  }
  return g;
}

inline json golden_to_json(const GoldenRecord& g) {
  json exp = json::object();
  for (const auto& [k, v] : g.expected) exp[k] = value_to_json(v);
  return json{{"group_key", g.group_key}, {"node_id", g.node_id}, {"expected", exp}};
}

inline std::vector<GoldenRecord> load_goldens(const std::string& path, const PipelineGraphSpec& spec) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::vector<GoldenRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(golden_from_json(json::parse(line), spec));
    } catch (const json::parse_error& e) {
      throw ValidationError("goldens line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("goldens line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

struct FaithfulnessOptions {
  // "node.field" entries scored by recall 1 - |A n G|/|G| instead of Jaccard.
  std::set<std::string> recall_fields;
};

struct FaithfulnessGap {
  std::string node;
  std::size_t n = 0;
  double mean_gap = 0.0;
  std::map<std::string, double> per_field;
  std::map<std::string, std::size_t> per_field_n;
  std::string min_field;
  std::string max_field;
};

struct FaithfulnessReport {
  std::vector<FaithfulnessGap> nodes;
  double system_mean = 0.0;  // unweighted mean over reported nodes
  std::vector<std::string> warnings;
};

inline double recall_gap(const TypedValue& actual, const TypedValue& golden) {
  auto as_set = [](const TypedValue& v) {
    std::vector<std::string> xs = v.get_if<LabelSet>() ? v.as<LabelSet>().elements : v.as<OrderedList>().elements;
    return kernel::sorted_unique(std::move(xs));
  };
  const auto a = as_set(actual), g = as_set(golden);
  if (g.empty()) return 0.0;
  std::vector<std::string> inter;
  std::set_intersection(a.begin(), a.end(), g.begin(), g.end(), std::back_inserter(inter));
  return 1.0 - static_cast<double>(inter.size()) / static_cast<double>(g.size());
}

inline FaithfulnessReport per_node_gap(const TraceCorpus& corpus, const std::vector<GoldenRecord>& goldens,
                                       const PipelineGraphSpec& spec, const KernelConfig& cfg,
                                       const FaithfulnessOptions& opt = {}) {
  FaithfulnessReport rep;
  struct Acc {
    std::map<std::string, double> sum;
    std::map<std::string, std::size_t> n;
  };
  std::vector<Acc> acc(spec.size());
  std::vector<bool> covered(spec.size(), false);
  for (const auto& g : goldens) {
    const auto idx = spec.find(g.node_id);
    if (!idx) throw ValidationError("golden references unknown node '" + g.node_id + "'");
    const auto& schema = spec.node(*idx);
    for (const auto& [f, v] : g.expected) {
      (void)v;
      if (!schema.field(f)) throw ValidationError("golden references unknown field '" + g.node_id + "." + f + "'");
    }
    if (g.expected.empty()) continue;
    covered[*idx] = true;
    auto grp = corpus.groups().find(g.group_key);
    if (grp == corpus.groups().end()) {
      rep.warnings.push_back("golden for group '" + g.group_key + "' matches no trace");
      continue;
    }
    for (auto ti : grp->second) {
      for (const auto& inv : corpus[ti].invocations) {
        if (inv.node_id != g.node_id) continue;
        for (const auto& [fname, expected] : g.expected) {
          const auto* f = schema.field(fname);
          const auto& actual = inv.output.at(fname);
          double d;
          if (opt.recall_fields.count(g.node_id + "." + fname) &&
              (f->kind == FieldKind::set || f->kind == FieldKind::ordered_list))
            d = recall_gap(actual, expected);
          else
            d = field_distance(*f, actual, expected, cfg);
          acc[*idx].sum[fname] += d;
          ++acc[*idx].n[fname];
        }
      }
    }
  }
  double sys = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (acc[i].n.empty()) {
      if (!covered[i]) continue;
      rep.warnings.push_back("node '" + spec.name(i) + "' has goldens but no matching invocations");
      continue;
    }
    FaithfulnessGap gap;
    gap.node = spec.name(i);
    double total = 0.0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [f, s] : acc[i].sum) {
      const auto n = acc[i].n[f];
      const double m = s / static_cast<double>(n);
      gap.per_field[f] = m;
      gap.per_field_n[f] = n;
      gap.n += n;
      total += m;
      if (m < lo) lo = m, gap.min_field = f;
      if (m > hi) hi = m, gap.max_field = f;
    }
    gap.mean_gap = total / static_cast<double>(gap.per_field.size());
    sys += gap.mean_gap;
    rep.nodes.push_back(std::move(gap));
  }
  for (std::size_t i = 0; i < spec.size(); ++i)
    if (!covered[i]) rep.warnings.push_back("node '" + spec.name(i) + "' has no golden coverage");
  if (!rep.nodes.empty()) rep.system_mean = sys / static_cast<double>(rep.nodes.size());
  return rep;
}

struct KlResult {
  double kl = 0.0;
  bool faithful = false;
  bool support_mismatch = false;
  std::size_t n_prod = 0;
  std::size_t n_eval = 0;
  std::vector<std::string> bins;
  std::vector<double> p;
  std::vector<double> q;
};

inline constexpr double kKlPseudoCount = 0.5;

// Histogram label of one field value; numeric values fall into the declared bins.
inline std::string kl_bin(const FieldSpec& f, const TypedValue& v) {
  switch (f.kind) {
    case FieldKind::categorical: return v.as<Categorical>().label;
    case FieldKind::boolean: return v.as<Boolean>().flag ? "true" : "false";
    case FieldKind::numeric: {
      const double x = v.as<Numeric>().value;
      const auto k = std::upper_bound(f.bins.begin(), f.bins.end(), x) - f.bins.begin();
      return "bin" + std::to_string(k);
    }
    default: break;
  }
  throw ValidationError("unreachable histogram kind");
}

inline std::vector<std::string> field_samples(const TraceCorpus& c, const std::string& node, const FieldSpec& f) {
  std::vector<std::string> out;
  for (const auto& t : c.traces())
    for (const auto& inv : t.invocations)
      if (inv.node_id == node) out.push_back(kl_bin(f, inv.output.at(f.name)));
  return out;
}

// Plug-in KL(prod || eval) over a smoothed histogram.
inline KlResult kl_from_samples(const FieldSpec& f, const std::vector<std::string>& prod,
                                const std::vector<std::string>& eval, double delta) {
  if (prod.empty() || eval.empty()) throw InsufficientDataError("KL check needs nonempty production and evaluation samples");
  std::set<std::string> support(prod.begin(), prod.end());
  support.insert(eval.begin(), eval.end());
  if (f.kind == FieldKind::categorical) support.insert(f.categories.begin(), f.categories.end());
  if (f.kind == FieldKind::boolean) support.insert({"false", "true"});
  if (f.kind == FieldKind::numeric)
    for (std::size_t k = 0; k <= f.bins.size(); ++k) support.insert("bin" + std::to_string(k));
  std::map<std::string, double> cp, ce;
  for (const auto& s : prod) cp[s] += 1;
  for (const auto& s : eval) ce[s] += 1;
  KlResult r;
  r.n_prod = prod.size();
  r.n_eval = eval.size();
  const double K = static_cast<double>(support.size());
  const double np = static_cast<double>(prod.size()) + kKlPseudoCount * K;
  const double ne = static_cast<double>(eval.size()) + kKlPseudoCount * K;
  for (const auto& s : support) {
    const double a = cp.count(s) ? cp[s] : 0.0;
    const double b = ce.count(s) ? ce[s] : 0.0;
    if (a > 0 && b == 0) r.support_mismatch = true;
    const double p = (a + kKlPseudoCount) / np;
    const double q = (b + kKlPseudoCount) / ne;
    r.bins.push_back(s);
    r.p.push_back(p);
    r.q.push_back(q);
    if (p != q) r.kl += p * std::log(p / q);
  }
  r.kl = std::max(r.kl, 0.0);
  r.faithful = r.kl < delta;
  return r;
}

inline KlResult kl_check(const TraceCorpus& prod, const TraceCorpus& eval, const PipelineGraphSpec& spec,
                         const std::string& node, const std::string& field, double delta = 0.1) {
  const auto* f = spec.node(node).field(field);
  if (!f) throw ValidationError("unknown field '" + node + "." + field + "'");
  const bool ok = f->kind == FieldKind::categorical || f->kind == FieldKind::boolean ||
                  (f->kind == FieldKind::numeric && !f->bins.empty());
  if (!ok)
    throw ValidationError("KL check supports categorical, boolean, or binned numeric fields; use per_node_gap for " +
                          std::string(to_string(f->kind)) + " field '" + node + "." + field + "'");
  if (!(delta > 0)) throw ValidationError("faithfulness delta must be positive");
  return kl_from_samples(*f, field_samples(prod, node, *f), field_samples(eval, node, *f), delta);
}

}  // namespace quiver
