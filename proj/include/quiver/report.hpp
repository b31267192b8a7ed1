#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "quiver/distance.hpp"
#include "quiver/error.hpp"
#include "quiver/faithfulness.hpp"
#include "quiver/graph.hpp"
#include "quiver/hash.hpp"
#include "quiver/paths.hpp"
#include "quiver/regression.hpp"
#include "quiver/sensitivity.hpp"
#include "quiver/trace.hpp"
#include "quiver/trajectory.hpp"

namespace quiver {

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<json>> rows;

  void add(std::vector<json> row) {
    if (row.size() != columns.size()) throw HarnessError("table row width does not match its header");
    rows.push_back(std::move(row));
  }
};

inline std::string tsv_cell(const json& v) {
  if (v.is_null()) return "NA";
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) return format_number(v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

inline void write_tsv(std::ostream& out, const Table& t) {
  for (std::size_t c = 0; c < t.columns.size(); ++c) out << (c ? "\t" : "") << t.columns[c];
  out << '\n';
  for (const auto& r : t.rows) {
    for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "\t" : "") << tsv_cell(r[c]);
    out << '\n';
  }
}

inline std::string to_tsv(const Table& t) {
  std::ostringstream s;
  write_tsv(s, t);
  return s.str();
}

inline json table_json(const Table& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json o = json::object();
    for (std::size_t c = 0; c < r.size(); ++c) o[t.columns[c]] = r[c];
    rows.push_back(std::move(o));
  }
  return rows;
}

struct Section {
  std::string name;
  Table table;
  json extra = json::object();  // non-tabular payload (summary values, notes)
};

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// ---------------------------------------------------------------------------
// Section builders

inline Section pairs_section(const TraceCorpus& corpus, const std::vector<TracePair>& pairs) {
  Section s{"pairs", {{"group_key", "traces", "pairs"}, {}}, json::object()};
  std::map<std::string, std::size_t> per;
  for (const auto& p : pairs) ++per[p.group_key];
  for (const auto& [g, members] : corpus.groups()) s.table.add({g, members.size(), per.count(g) ? per[g] : 0});
  s.extra["total_pairs"] = pairs.size();
  s.extra["groups"] = corpus.groups().size();
  return s;
}

inline Section distances_section(const TraceCorpus& corpus, const DistanceTable& table, const PipelineGraphSpec& spec) {
  Section s{"distances", {{"left", "right", "group_key"}, {}}, json::object()};
  for (std::size_t i = 0; i < spec.size(); ++i) s.table.columns.push_back(spec.name(i));
  for (std::size_t p = 0; p < table.pair_count(); ++p) {
    const auto& pr = table.pair(p);
    std::vector<json> row{corpus[pr.left].trace_id, corpus[pr.right].trace_id, pr.group_key};
    for (std::size_t i = 0; i < spec.size(); ++i) {
      const auto pres = table.presence(p, i);
      if (pres == Presence::left_only || pres == Presence::right_only) row.emplace_back("one-sided");
      else row.push_back(opt_json(table.at(p, i)));
    }
    s.table.add(std::move(row));
  }
  const auto floors = noise_floor(table);
  json jf = json::object();
  for (std::size_t i = 0; i < spec.size(); ++i) jf[spec.name(i)] = opt_json(floors[i]);
  s.extra["noise_floor"] = jf;
  s.extra["pairs"] = table.pair_count();
  return s;
}

inline Section sensitivity_section(const std::vector<EdgeStats>& stats) {
  Section s{"sensitivity",
            {{"from", "to", "n", "sigma_hat", "median_ratio", "frac_below_1", "frac_above_1_5", "max_ratio", "class",
              "near_unity", "lambda_hat", "note"},
             {}},
            json::object()};
  for (const auto& e : stats) {
    if (!e.estimated()) {
      s.table.add({e.from, e.to, e.n, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr,
                   opt_json(e.lambda_hat), e.reason});
      continue;
    }
    s.table.add({e.from, e.to, e.n, e.sigma_hat, e.median_ratio, e.frac_below_1, e.frac_above_1_5, e.max_ratio,
                 to_string(e.cls), e.near_unity, opt_json(e.lambda_hat), e.reason});
  }
  return s;
}

inline Section heatmap_section(const SensitivityMatrix& m, const PipelineGraphSpec& spec) {
  Section s{"heatmap", {{"from"}, {}}, json::object()};
  for (std::size_t j = 0; j < spec.size(); ++j) s.table.columns.push_back(spec.name(j));
  for (std::size_t i = 0; i < spec.size(); ++i) {
    std::vector<json> row{spec.name(i)};
    for (std::size_t j = 0; j < spec.size(); ++j) {
      switch (m.status(i, j)) {
        case CellStatus::infeasible: row.emplace_back("infeasible"); break;
        case CellStatus::insufficient: row.emplace_back("insufficient"); break;
        case CellStatus::estimated: row.emplace_back(m.at(i, j)); break;
      }
    }
    s.table.add(std::move(row));
  }
  return s;
}

inline Section lift_section(const PipelineGraphSpec& spec, const DistanceTable& table, const SensitivityConfig& cfg) {
  Section s{"lift", {{"from", "to", "lambda_hat", "n_dirty", "n_clean", "p_given_dirty", "p_given_clean", "note"}, {}},
            json::object()};
  for (const auto& [a, b] : spec.edges()) {
    const auto l = estimate_occurrence_lift(spec.index_of(a), spec.index_of(b), table, cfg);
    auto frac = [](std::size_t h, std::size_t n) { return n ? json(static_cast<double>(h) / static_cast<double>(n)) : json(nullptr); };
    s.table.add({a, b, opt_json(l.lambda), l.n_dirty, l.n_clean, frac(l.dirty_hits, l.n_dirty),
                 frac(l.clean_hits, l.n_clean), l.reason});
  }
  return s;
}

inline Section paths_section(const SensitivityMatrix& m, const PipelineGraphSpec& spec, std::size_t cap) {
  Section s{"paths", {{"path", "edges", "sigma_path", "cascade_amplifier"}, {}}, json::object()};
  for (const auto& p : score_paths(m, spec, cap)) {
    std::string joined;
    for (std::size_t k = 0; k < p.nodes.size(); ++k) joined += (k ? ">" : "") + p.nodes[k];
    s.table.add({joined, p.nodes.size() - 1, p.value, p.value > 1.0});
  }
  const auto crit = critical_amplification_path(m, spec, cap);
  if (crit) s.extra["critical_path"] = {{"nodes", crit->nodes}, {"sigma_path", crit->value}};
  else s.extra["critical_path"] = {{"nodes", json::array()}, {"note", crit.reason}};
  return s;
}

inline Section joint_section(const SensitivityMatrix& m, const PipelineGraphSpec& spec, const DistanceTable& table,
                             const SensitivityConfig& cfg) {
  Section s{"joint", {{"node", "parents", "sigma_joint_reference", "label"}, {}}, json::object()};
  for (std::size_t j = 0; j < spec.size(); ++j) {
    if (spec.parents(j).empty()) continue;
    s.table.add({spec.name(j), spec.parents(j).size(), joint_sensitivity(j, m, spec), "independence baseline"});
  }
  // The empirical per-source transitive estimate is reported next to the reference.
  json transitive = json::array();
  for (auto src : spec.sources())
    for (std::size_t j = 0; j < spec.size(); ++j) {
      if (j == src || !spec.reachable(src, j) || spec.has_edge(src, j)) continue;
      const auto t = transitive_sensitivity(src, j, spec, table, cfg);
      transitive.push_back({{"from", spec.name(src)}, {"to", spec.name(j)}, {"n", t.n},
                            {"sigma_hat", t.estimated() ? json(t.sigma_hat) : json(nullptr)}});
    }
  s.extra["transitive"] = transitive;
  return s;
}

inline Section origins_section(const std::vector<NoiseOrigin>& origins) {
  Section s{"origins",
            {{"node", "class", "clean_upstream", "clean_upstream_drift", "dirty_upstream", "dirty_upstream_drift",
              "dirty_drift_rate", "note"},
             {}},
            json::object()};
  for (const auto& o : origins)
    s.table.add({o.node, to_string(o.cls), o.clean_upstream, o.clean_upstream_drift, o.dirty_upstream,
                 o.dirty_upstream_drift, o.dirty_drift_rate(), o.note});
  return s;
}

inline Section budgets_section(const std::vector<DriftBudget>& budgets, const std::vector<double>& alphas) {
  Section s{"budgets", {{"from", "to", "n", "floor"}, {}}, json::object()};
  for (double a : alphas) s.table.columns.push_back("tau@" + format_number(a));
  for (const auto& b : budgets) {
    std::vector<json> row{b.from, b.to, b.n, b.floor};
    for (double a : alphas) {
      const auto& t = b.tau.at(a);
      row.push_back(t ? json(*t) : json("never"));
    }
    s.table.add(std::move(row));
  }
  return s;
}

inline Section impact_section(const std::string& node, double alpha, const std::vector<ImpactMember>& members) {
  Section s{"impact", {{"node", "max_path_sigma", "via_bifurcation"}, {}}, json::object()};
  for (const auto& m : members) s.table.add({m.node, m.max_path, m.via_bifurcation});
  s.extra["changed_node"] = node;
  s.extra["alpha"] = alpha;
  return s;
}

inline Section divergence_section(const TraceCorpus& corpus, const DistanceTable& table,
                                  const std::vector<DivergenceTriple>& divs) {
  Section s{"divergence",
            {{"left", "right", "group_key", "d_iter", "d_shape", "d_output", "d_struct", "mode", "perturbation_ref"}, {}},
            json::object()};
  for (std::size_t p = 0; p < divs.size(); ++p) {
    const auto& pr = table.pair(p);
    const auto& l = corpus[pr.left];
    const auto& r = corpus[pr.right];
    const auto& ref = r.perturbation_ref ? r.perturbation_ref : l.perturbation_ref;
    s.table.add({l.trace_id, r.trace_id, pr.group_key, divs[p].d_iter, divs[p].d_shape, divs[p].d_output,
                 divs[p].d_struct, to_string(r.mode), ref ? json(*ref) : json(nullptr)});
  }
  const auto rates = divergence_rates(divs);
  s.extra["rates"] = {{"n", rates.n},
                      {"d_iter", rates.iter},
                      {"d_shape", rates.shape},
                      {"d_output", rates.output},
                      {"d_output_only", rates.output_only},
                      {"d_struct", rates.structural}};
  return s;
}

inline Section rates_section(const DivergenceRates& r) {
  Section s{"rates", {{"component", "rate", "n"}, {}}, json::object()};
  s.table.add({"D_iter>0", r.iter, r.n});
  s.table.add({"D_shape>0", r.shape, r.n});
  s.table.add({"D_output>0", r.output, r.n});
  s.table.add({"D_output only", r.output_only, r.n});
  s.table.add({"D_struct>0", r.structural, r.n});
  return s;
}

inline Section bifurcation_section(const std::vector<BifurcationEstimate>& est) {
  Section s{"bifurcation", {{"node", "mode", "beta_shape", "beta_iter", "n_support", "spread_iqr", "coverage_note", "note"}, {}},
            json::object()};
  for (const auto& e : est)
    s.table.add({e.node, e.mode == BifurcationMode::observational ? "observational" : "interventional",
                 opt_json(e.beta_shape), opt_json(e.beta_iter), e.n_support, e.spread, e.coverage_note, e.reason});
  return s;
}

inline Section sweep_section(const std::vector<SweepResult>& results) {
  Section s{"sweep",
            {{"baseline_trace", "perturbation_ref", "magnitude", "realized_d", "stratum", "d_iter", "d_shape", "d_output",
              "d_struct"},
             {}},
            json::object()};
  std::size_t eff = 0;
  for (const auto& r : results) {
    s.table.add({r.baseline_trace, r.perturbation_ref, r.magnitude, r.realized_d, to_string(r.stratum), r.divergence.d_iter,
                 r.divergence.d_shape, r.divergence.d_output, r.divergence.d_struct});
    eff += r.stratum == Stratum::effective;
  }
  s.extra["effective"] = eff;
  s.extra["no_op"] = results.size() - eff;
  return s;
}

inline Section faithfulness_section(const FaithfulnessReport& rep) {
  Section s{"faithfulness", {{"node", "n", "mean_gap", "min_field", "max_field"}, {}}, json::object()};
  json per = json::object();
  for (const auto& g : rep.nodes) {
    s.table.add({g.node, g.n, g.mean_gap, g.min_field, g.max_field});
    json f = json::object();
    for (const auto& [k, v] : g.per_field) f[k] = {{"mean_gap", v}, {"n", g.per_field_n.at(k)}};
    per[g.node] = f;
  }
  s.table.add({"system (unweighted mean over nodes)", nullptr, rep.nodes.empty() ? json(nullptr) : json(rep.system_mean),
               nullptr, nullptr});
  s.extra["per_field"] = per;
  s.extra["warnings"] = rep.warnings;
  return s;
}

inline Section kl_section(const std::string& node, const std::string& field, const KlResult& r, double delta) {
  Section s{"kl", {{"bin", "p_prod", "q_eval"}, {}}, json::object()};
  for (std::size_t k = 0; k < r.bins.size(); ++k) s.table.add({r.bins[k], r.p[k], r.q[k]});
  s.extra = {{"node", node},     {"field", field}, {"kl_nats", r.kl}, {"delta", delta}, {"faithful", r.faithful},
             {"n_prod", r.n_prod}, {"n_eval", r.n_eval}, {"support_mismatch", r.support_mismatch}};
  return s;
}

inline Section regression_section(const std::vector<RegressionResult>& fits) {
  Section s{"regression", {{"node", "term", "coefficient", "sample_size", "parameters", "residual_variance", "ridge_fallback"}, {}},
            json::object()};
  for (const auto& r : fits) {
    for (const auto& [p, a] : r.main_effects)
      s.table.add({r.node, p, a, r.sample_size, r.parameter_count, r.residual_variance, r.ridge_fallback});
    for (const auto& [pq, g] : r.interactions)
      s.table.add({r.node, pq.first + "*" + pq.second, g, r.sample_size, r.parameter_count, r.residual_variance,
                   r.ridge_fallback});
  }
  json coll = json::object();
  for (const auto& r : fits)
    if (!r.collinear.empty()) coll[r.node] = r.collinear;
  s.extra["collinear"] = coll;
  return s;
}

// ---------------------------------------------------------------------------
// Emission

struct Stamp {
  std::string command;
  std::string config_hash;
  std::string corpus_hash;
  std::string graph_hash;
};

inline json section_payload(const Section& s, const Stamp& st) {
  return json{{"report", s.name},
              {"command", st.command},
              {"config_hash", st.config_hash},
              {"corpus_hash", st.corpus_hash},
              {"graph_hash", st.graph_hash},
              {"rows", table_json(s.table)},
              {"summary", s.extra}};
}

inline std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::uint64_t h = kFnvOffset;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
  }
  return hex64(h);
}

inline std::string corpus_hash(const TraceCorpus& c) {
  std::uint64_t h = kFnvOffset;
  for (const auto& t : c.traces()) {
    h = fnv1a64(trace_to_json(t).dump(), h);
    h = fnv1a64("\n", h);
  }
  return hex64(h);
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Writes <dir>/<name>.tsv, <name>.json and <name>.meta.json (the only file with a timestamp).
inline void write_section(const std::string& dir, const Section& s, const Stamp& st) {
  std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir) / s.name;
  {
    std::ofstream out(base.string() + ".tsv");
    if (!out) throw ValidationError("cannot write '" + base.string() + ".tsv'");
    write_tsv(out, s.table);
  }
  {
    std::ofstream out(base.string() + ".json");
    if (!out) throw ValidationError("cannot write '" + base.string() + ".json'");
    out << section_payload(s, st).dump(2) << '\n';
  }
  {
    std::ofstream out(base.string() + ".meta.json");
    out << json{{"report", s.name}, {"command", st.command}, {"generated_at", utc_timestamp()}}.dump(2) << '\n';
  }
}

}  // namespace quiver
