#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "quiver/quiver.hpp"

namespace {

using namespace quiver;

struct Options {
  std::string config;
  std::string out;
  unsigned jobs = 0;
  std::optional<double> epsilon;
  bool quiet = false;

  std::string graph;
  std::string traces;
  std::string scenario;
  std::string node;
  std::string field;
  std::string goldens;
  std::string eval;
  std::string sweep_file;
  std::string perturbation;
  std::string traces_out;
  std::string sweep_out;
  std::string truth_out;
  std::optional<double> alpha;
  std::optional<double> magnitude;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> groups;
  std::optional<std::size_t> repeats;
  std::string mode;
};

AnalysisConfig resolve_config(const Options& o) {
  AnalysisConfig c;
  std::string path = o.config;
  if (path.empty())
    if (const char* env = std::getenv("QUIVER_CONFIG"); env && *env) path = env;
  if (!path.empty()) c = load_config(path);
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.jobs) c.jobs = o.jobs;
  if (o.epsilon) c.epsilon = *o.epsilon;
  c.validate();
  return c;
}

struct Context {
  Options opt;
  AnalysisConfig cfg;
  PipelineGraphSpec spec;
  std::optional<Scenario> scenario;
  TraceCorpus corpus;
  Stamp stamp;
  KernelConfig kernel;
};

Context open_context(const Options& o, const std::string& command, bool need_traces) {
  Context c;
  c.opt = o;
  c.cfg = resolve_config(o);
  if (!o.scenario.empty()) {
    c.scenario = load_scenario(o.scenario);
    c.spec = c.scenario->graph;
    c.stamp.graph_hash = file_hash(o.scenario);
  } else if (!o.graph.empty()) {
    c.spec = load_graph_spec(o.graph);
    c.stamp.graph_hash = file_hash(o.graph);
  } else {
    throw ValidationError("--graph or --scenario is required");
  }
  c.cfg.resolve(c.spec);
  c.kernel = c.cfg.kernel();
  if (need_traces) {
    if (o.traces.empty()) throw ValidationError("--traces is required");
    c.corpus = load_traces(o.traces, c.spec);
    c.stamp.corpus_hash = file_hash(o.traces);
    if (!o.quiet)
      for (const auto& w : c.corpus.warnings()) std::cerr << "warning: " << w << '\n';
  }
  c.stamp.command = command;
  c.stamp.config_hash = config_hash(c.cfg);
  return c;
}

void emit(const Context& c, const std::vector<Section>& sections, bool print = true) {
  for (const auto& s : sections) {
    write_section(c.cfg.output_dir, s, c.stamp);
    if (c.opt.quiet || !print) continue;
    if (sections.size() > 1) std::cout << "# " << s.name << '\n';
    write_tsv(std::cout, s.table);
  }
}

std::vector<TracePair> observational_pairs(const Context& c) { return form_pairs(c.corpus, TraceMode::observational); }

DistanceTable distances_for(const Context& c) {
  return compute_distances(c.corpus, observational_pairs(c), c.spec, c.kernel, c.cfg.jobs);
}

std::size_t node_arg(const Context& c) {
  if (c.opt.node.empty()) throw ValidationError("--node is required");
  return c.spec.index_of(c.opt.node);
}

std::vector<DriftBudget> all_budgets(const Context& c, const DistanceTable& t, json& skipped) {
  const auto floors = noise_floor(t);
  std::vector<DriftBudget> out;
  for (const auto& [a, b] : c.spec.edges()) {
    try {
      out.push_back(drift_budget(c.spec.index_of(a), c.spec.index_of(b), c.spec, t, floors, c.cfg.alpha_levels));
    } catch (const InsufficientDataError& e) {
      skipped.push_back({{"from", a}, {"to", b}, {"reason", e.what()}});
    }
  }
  return out;
}

std::vector<RegressionResult> all_regressions(const Context& c, const DistanceTable& t, json& skipped) {
  std::vector<RegressionResult> out;
  for (std::size_t j = 0; j < c.spec.size(); ++j) {
    if (c.spec.parents(j).size() < 2) continue;
    try {
      out.push_back(partial_regression(j, c.spec, t));
    } catch (const InsufficientDataError& e) {
      skipped.push_back({{"node", c.spec.name(j)}, {"reason", e.what()}});
    }
  }
  return out;
}

std::vector<BifurcationEstimate> observational_bifurcations(const Context& c, const DistanceTable& t,
                                                            const std::vector<DivergenceTriple>& divs) {
  std::vector<BifurcationEstimate> out;
  const auto anc = decision_ancestors(c.spec);
  for (std::size_t i = 0; i < c.spec.size(); ++i)
    if (anc[i]) out.push_back(bifurcation_observational(i, c.spec, t, divs, c.cfg.epsilon));
  return out;
}

std::vector<SweepResult> load_sweep_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::vector<SweepResult> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(sweep_result_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw ValidationError("sweep line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_validate(const Options& o) {
  auto c = open_context(o, "validate", !o.traces.empty());
  std::cout << "graph ok: " << c.spec.size() << " nodes, " << c.spec.edges().size() << " edges";
  if (c.spec.has_loop()) std::cout << ", loop of " << c.spec.loop().body.size() << " nodes";
  std::cout << ", " << c.spec.gates().size() << " gates\n";
  if (!o.traces.empty())
    std::cout << "traces ok: " << c.corpus.size() << " traces in " << c.corpus.groups().size() << " groups, "
              << c.corpus.warnings().size() << " warnings\n";
  std::cout << "config ok: " << c.stamp.config_hash << '\n';
  return 0;
}

int cmd_pairs(const Options& o) {
  auto c = open_context(o, "pairs", true);
  std::optional<TraceMode> mode;
  if (!o.mode.empty() && o.mode != "all") mode = parse_trace_mode(o.mode);
  emit(c, {pairs_section(c.corpus, form_pairs(c.corpus, mode))});
  return 0;
}

int cmd_distances(const Options& o) {
  auto c = open_context(o, "distances", true);
  emit(c, {distances_section(c.corpus, distances_for(c), c.spec)});
  return 0;
}

int cmd_sensitivity(const Options& o) {
  auto c = open_context(o, "sensitivity", true);
  const auto t = distances_for(c);
  const auto stats = estimate_all_edges(c.spec, t, c.cfg.sensitivity());
  emit(c, {sensitivity_section(stats), heatmap_section(SensitivityMatrix(c.spec, stats), c.spec)});
  return 0;
}

int cmd_lift(const Options& o) {
  auto c = open_context(o, "lift", true);
  emit(c, {lift_section(c.spec, distances_for(c), c.cfg.sensitivity())});
  return 0;
}

int cmd_paths(const Options& o) {
  auto c = open_context(o, "paths", true);
  const auto t = distances_for(c);
  const SensitivityMatrix m(c.spec, estimate_all_edges(c.spec, t, c.cfg.sensitivity()));
  emit(c, {paths_section(m, c.spec, c.cfg.path_cap)});
  return 0;
}

int cmd_joint(const Options& o) {
  auto c = open_context(o, "joint", true);
  const auto t = distances_for(c);
  const SensitivityMatrix m(c.spec, estimate_all_edges(c.spec, t, c.cfg.sensitivity()));
  json skipped = json::array();
  auto reg = regression_section(all_regressions(c, t, skipped));
  reg.extra["skipped"] = skipped;
  emit(c, {joint_section(m, c.spec, t, c.cfg.sensitivity()), reg});
  return 0;
}

int cmd_origins(const Options& o) {
  auto c = open_context(o, "origins", true);
  emit(c, {origins_section(noise_origin_classify(distances_for(c), c.spec, c.cfg.sensitivity()))});
  return 0;
}

int cmd_budgets(const Options& o) {
  auto c = open_context(o, "budgets", true);
  json skipped = json::array();
  auto s = budgets_section(all_budgets(c, distances_for(c), skipped), c.cfg.alpha_levels);
  s.extra["skipped"] = skipped;
  emit(c, {s});
  return 0;
}

int cmd_impact(const Options& o) {
  auto c = open_context(o, "impact", true);
  const auto i = node_arg(c);
  const auto t = distances_for(c);
  const SensitivityMatrix m(c.spec, estimate_all_edges(c.spec, t, c.cfg.sensitivity()));
  std::map<std::string, double> beta;
  if (o.magnitude) {
    const auto divs = compute_divergences(c.corpus, t, c.spec, c.cfg.node_weights, c.cfg.jobs);
    for (const auto& b : observational_bifurcations(c, t, divs))
      if (b.beta_shape) beta[b.node] = *b.beta_shape;
  }
  const double alpha = o.alpha.value_or(c.cfg.impact_alpha);
  auto s = impact_section(c.spec.name(i), alpha, impact_set(i, m, c.spec, alpha, beta, o.magnitude));
  if (o.magnitude) s.extra["magnitude"] = *o.magnitude;
  emit(c, {s});
  return 0;
}

int cmd_divergence(const Options& o) {
  auto c = open_context(o, "divergence", true);
  const auto t = distances_for(c);
  const auto divs = compute_divergences(c.corpus, t, c.spec, c.cfg.node_weights, c.cfg.jobs);
  emit(c, {divergence_section(c.corpus, t, divs), rates_section(divergence_rates(divs))});
  return 0;
}

int cmd_bifurcate(const Options& o) {
  if (!o.sweep_file.empty()) {
    auto c = open_context(o, "bifurcate", false);
    if (o.node.empty()) throw ValidationError("--node is required with --sweep");
    (void)c.spec.index_of(o.node);
    c.stamp.corpus_hash = file_hash(o.sweep_file);
    emit(c, {bifurcation_section({bifurcation_interventional(o.node, load_sweep_results(o.sweep_file))})});
    return 0;
  }
  auto c = open_context(o, "bifurcate", true);
  const auto t = distances_for(c);
  const auto divs = compute_divergences(c.corpus, t, c.spec, c.cfg.node_weights, c.cfg.jobs);
  if (!o.node.empty()) emit(c, {bifurcation_section({bifurcation_observational(node_arg(c), c.spec, t, divs, c.cfg.epsilon)})});
  else emit(c, {bifurcation_section(observational_bifurcations(c, t, divs))});
  return 0;
}

int cmd_faithfulness(const Options& o) {
  auto c = open_context(o, "faithfulness", true);
  std::vector<Section> out;
  if (!o.goldens.empty()) {
    const auto gold = load_goldens(o.goldens, c.spec);
    out.push_back(faithfulness_section(per_node_gap(c.corpus, gold, c.spec, c.kernel, c.cfg.faithfulness())));
  }
  if (!o.eval.empty()) {
    if (o.node.empty() || o.field.empty()) throw ValidationError("KL check needs --node and --field");
    const auto eval = load_traces(o.eval, c.spec);
    const auto r = kl_check(c.corpus, eval, c.spec, o.node, o.field, c.cfg.faithfulness_delta);
    out.push_back(kl_section(o.node, o.field, r, c.cfg.faithfulness_delta));
  }
  if (out.empty()) throw ValidationError("faithfulness needs --goldens and/or --eval");
  emit(c, out);
  return 0;
}

int cmd_simulate(const Options& o) {
  if (o.scenario.empty()) throw ValidationError("--scenario is required");
  if (o.traces_out.empty()) throw ValidationError("--traces-out is required");
  auto c = open_context(o, "simulate", false);
  auto& sc = *c.scenario;
  if (o.seed) sc.options.seed = *o.seed;
  if (o.groups) sc.options.groups = *o.groups;
  if (o.repeats) sc.options.repeats = *o.repeats;
  const auto res = simulate_corpus(sc, c.cfg.jobs);
  write_traces(o.traces_out, res.corpus);
  const auto truth = o.truth_out.empty() ? o.traces_out + ".truth.json" : o.truth_out;
  std::ofstream(truth) << res.ground_truth.dump(2) << '\n';
  if (!o.quiet)
    std::cout << "wrote " << res.corpus.size() << " traces (" << sc.options.groups << " groups x " << sc.options.repeats
              << " repeats, seed " << sc.options.seed << ") to " << o.traces_out << "; ground truth in " << truth << '\n';
  return 0;
}

int cmd_sweep(const Options& o) {
  if (o.scenario.empty()) throw ValidationError("--scenario is required");
  if (o.perturbation.empty()) throw ValidationError("--perturbation is required");
  auto c = open_context(o, "sweep", true);
  const auto p = perturbation_from_json(read_json_file(o.perturbation), c.spec);
  const auto out = sweep(c.corpus, p, *c.scenario, c.kernel, c.cfg.jobs);
  if (!o.sweep_out.empty()) {
    std::ofstream f(o.sweep_out);
    if (!f) throw ValidationError("cannot write '" + o.sweep_out + "'");
    for (const auto& r : out.results) f << sweep_result_to_json(r).dump() << '\n';
  }
  if (!o.traces_out.empty()) write_traces(o.traces_out, out.perturbed);
  auto s = sweep_section(out.results);
  s.extra["skipped"] = out.skipped;
  s.extra["perturbation"] = p.name;
  std::vector<Section> sections{s};
  try {
    sections.push_back(bifurcation_section({bifurcation_interventional(p.target, out.results)}));
  } catch (const InsufficientDataError& e) {
    if (!o.quiet) std::cerr << "warning: " << e.what() << '\n';
  }
  emit(c, sections);
  return 0;
}

int cmd_report(const Options& o) {
  auto c = open_context(o, "report", true);
  const auto pairs = observational_pairs(c);
  const auto t = compute_distances(c.corpus, pairs, c.spec, c.kernel, c.cfg.jobs);
  const auto sc = c.cfg.sensitivity();
  const auto stats = estimate_all_edges(c.spec, t, sc);
  const SensitivityMatrix m(c.spec, stats);
  const auto divs = compute_divergences(c.corpus, t, c.spec, c.cfg.node_weights, c.cfg.jobs);

  std::vector<Section> out;
  out.push_back(pairs_section(c.corpus, pairs));
  out.push_back(distances_section(c.corpus, t, c.spec));
  out.push_back(sensitivity_section(stats));
  out.push_back(heatmap_section(m, c.spec));
  out.push_back(lift_section(c.spec, t, sc));
  out.push_back(paths_section(m, c.spec, c.cfg.path_cap));
  out.push_back(joint_section(m, c.spec, t, sc));
  json reg_skipped = json::array(), budget_skipped = json::array();
  out.push_back(regression_section(all_regressions(c, t, reg_skipped)));
  out.back().extra["skipped"] = reg_skipped;
  out.push_back(origins_section(noise_origin_classify(t, c.spec, sc)));
  out.push_back(budgets_section(all_budgets(c, t, budget_skipped), c.cfg.alpha_levels));
  out.back().extra["skipped"] = budget_skipped;
  out.push_back(divergence_section(c.corpus, t, divs));
  out.push_back(rates_section(divergence_rates(divs)));
  out.push_back(bifurcation_section(observational_bifurcations(c, t, divs)));
  if (!o.goldens.empty())
    out.push_back(faithfulness_section(
        per_node_gap(c.corpus, load_goldens(o.goldens, c.spec), c.spec, c.kernel, c.cfg.faithfulness())));

  emit(c, out, false);
  if (!o.quiet) {
    std::cout << "report\tfile\n";
    for (const auto& s : out) std::cout << s.name << '\t' << (std::filesystem::path(c.cfg.output_dir) / (s.name + ".tsv")).string() << '\n';
  }
  return 0;
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("-c,--config", o.config, "analysis config JSON (default: $QUIVER_CONFIG)");
  sub->add_option("-o,--out", o.out, "report output directory");
  sub->add_option("-j,--jobs", o.jobs, "worker threads");
  sub->add_option("--epsilon", o.epsilon, "drift threshold");
  sub->add_flag("-q,--quiet", o.quiet, "do not print tables");
}

void add_inputs(CLI::App* sub, Options& o) {
  sub->add_option("-g,--graph", o.graph, "pipeline graph spec JSON");
  sub->add_option("-t,--traces", o.traces, "trace corpus (JSON lines)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quiver: trace analytics for compound pipelines"};
  app.require_subcommand(1);
  Options o;

  struct Cmd {
    const char* name;
    const char* help;
    int (*fn)(const Options&);
  };
  const std::vector<Cmd> cmds{
      {"validate", "check a graph spec, config, and optional traces", cmd_validate},
      {"pairs", "form same-group pairs", cmd_pairs},
      {"distances", "per-node pair distances and noise floors", cmd_distances},
      {"sensitivity", "per-edge sensitivity and heatmap", cmd_sensitivity},
      {"lift", "per-edge occurrence lift", cmd_lift},
      {"paths", "path sensitivities and the critical path", cmd_paths},
      {"joint", "joint sensitivity reference and interaction regression", cmd_joint},
      {"origins", "noise-origin classification", cmd_origins},
      {"budgets", "per-edge drift budgets", cmd_budgets},
      {"impact", "impact set of a changed node", cmd_impact},
      {"divergence", "trajectory divergence per pair and rate table", cmd_divergence},
      {"bifurcate", "bifurcation thresholds", cmd_bifurcate},
      {"faithfulness", "per-field golden gaps and KL check", cmd_faithfulness},
      {"simulate", "generate a corpus from a scenario", cmd_simulate},
      {"sweep", "interventional magnitude sweep", cmd_sweep},
      {"report", "every analysis in one run", cmd_report},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& c : cmds) {
    auto* s = app.add_subcommand(c.name, c.help);
    add_common(s, o);
    subs[c.name] = s;
  }
  for (const char* n : {"validate", "pairs", "distances", "sensitivity", "lift", "paths", "joint", "origins", "budgets",
                        "impact", "divergence", "bifurcate", "faithfulness", "report"})
    add_inputs(subs[n], o);
  subs["pairs"]->add_option("--mode", o.mode, "observational, interventional, or all")->default_val("all");
  for (const char* n : {"impact", "bifurcate", "faithfulness"}) subs[n]->add_option("-n,--node", o.node, "node id");
  subs["impact"]->add_option("--alpha", o.alpha, "path-product threshold");
  subs["impact"]->add_option("--magnitude", o.magnitude, "perturbation magnitude for bifurcation-mediated impact");
  subs["bifurcate"]->add_option("--sweep", o.sweep_file, "sweep results (JSON lines) for the interventional estimate");
  subs["faithfulness"]->add_option("--goldens", o.goldens, "golden records (JSON lines)");
  subs["faithfulness"]->add_option("--eval", o.eval, "evaluation corpus for the KL check");
  subs["faithfulness"]->add_option("-f,--field", o.field, "field for the KL check");
  subs["report"]->add_option("--goldens", o.goldens, "golden records (JSON lines)");
  for (const char* n : {"simulate", "sweep"}) subs[n]->add_option("-s,--scenario", o.scenario, "scenario JSON")->required();
  auto* sim = subs["simulate"];
  sim->add_option("--traces-out", o.traces_out, "output corpus path")->required();
  sim->add_option("--truth-out", o.truth_out, "ground-truth report path");
  sim->add_option("--seed", o.seed, "master seed");
  sim->add_option("--groups", o.groups, "number of groups");
  sim->add_option("--repeats", o.repeats, "repeats per group");
  auto* sw = subs["sweep"];
  sw->add_option("-t,--traces", o.traces, "baseline corpus")->required();
  sw->add_option("-p,--perturbation", o.perturbation, "perturbation spec JSON")->required();
  sw->add_option("--results-out", o.sweep_out, "sweep results (JSON lines)");
  sw->add_option("--traces-out", o.traces_out, "perturbed corpus path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error category=validation: " << e.what() << '\n';
    return exit_code(ErrorCategory::validation);
  }

  try {
    for (const auto& c : cmds)
      if (subs[c.name]->parsed()) return c.fn(o);
  } catch (const quiver::Error& e) {
    std::cerr << "error category=" << to_string(e.category()) << ": " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error category=internal: " << e.what() << '\n';
    return exit_code(ErrorCategory::internal);
  }
  return 0;
}
