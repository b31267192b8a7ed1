#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace quiver;
using qt::inv;
using qt::level;

namespace {

const char* kLoop = R"({
  "nodes": [
    {"id": "q", "fields": [{"name": "level", "kind": "numeric", "scale": 1.0}]},
    {"id": "cls", "fields": [{"name": "small", "kind": "boolean"}]},
    {"id": "plan", "fields": [{"name": "level", "kind": "numeric", "scale": 1.0}]},
    {"id": "tool", "fields": [{"name": "level", "kind": "numeric", "scale": 1.0}]},
    {"id": "out", "fields": [{"name": "level", "kind": "numeric", "scale": 1.0}]},
    {"id": "side", "fields": [{"name": "level", "kind": "numeric", "scale": 1.0}]}
  ],
  "edges": [["q", "cls"], ["q", "plan"], ["plan", "tool"], ["tool", "plan"], ["plan", "out"], ["tool", "out"], ["out", "side"]],
  "loop": {"body": ["plan", "tool"], "controller": "plan", "k_max": 4, "actions": ["search", "answer"]},
  "gates": [{"id": "engage", "node": "cls", "field": "small", "when": [false], "gated": ["plan", "tool"]}]
})";

Trace loop_trace(int k, double out_level = 1.0, bool engaged = true) {
  Trace t;
  t.trace_id = "t" + std::to_string(k);
  t.group_key = "g";
  std::size_t i = 0;
  t.invocations.push_back(inv("q", i++, level(0.5)));
  t.invocations.push_back(inv("cls", i++, {{"small", TypedValue::boolean(!engaged)}}));
  if (engaged)
    for (int it = 1; it <= k; ++it) {
      t.invocations.push_back(inv("plan", i++, level(it), it, it < k ? "search" : "answer"));
      t.invocations.push_back(inv("tool", i++, level(it), it));
    }
  t.invocations.push_back(inv("out", i++, level(out_level)));
  t.invocations.push_back(inv("side", i++, level(0.0)));
  t.realized_k = engaged ? k : 0;
  t.gates = {{"engage", engaged}};
  return t;
}

const KernelConfig kCfg{};

// Source feeds a gate controller whose decision flips independently per run with probability f.
std::string gate_flip_scenario(double f, bool reference) {
  json j = json::parse(R"({
    "nodes": [
      {"id": "src", "fields": [{"name": "level", "kind": "numeric"}], "synth": {"kind": "constant", "base": 1.0}},
      {"id": "cls", "fields": [{"name": "go", "kind": "boolean"}], "synth": {"kind": "gate_controller", "branch_prob": 0.0}},
      {"id": "work", "fields": [{"name": "level", "kind": "numeric"}], "synth": {"kind": "linear"}},
      {"id": "out", "fields": [{"name": "level", "kind": "numeric"}], "synth": {"kind": "linear"}}
    ],
    "edges": [["src", "cls"], ["src", "work"], ["cls", "work"], ["work", "out"]],
    "gates": [{"id": "run", "node": "cls", "field": "go", "when": [false], "gated": ["work"]}],
    "simulation": {"groups": 4000, "repeats": 2, "seed": 5}
  })");
  j["nodes"][1]["synth"]["flip_prob"] = f;
  j["simulation"]["reference_repeat"] = reference;
  return j.dump();
}

}  // namespace

TEST(Divergence, IterationAndShapeCounts) {
  const auto g = qt::graph(kLoop);
  const auto a = loop_trace(2), b = loop_trace(3);
  const auto d = trajectory_divergence(a, b, g, kCfg);
  EXPECT_EQ(d.d_iter, 2u);
  EXPECT_EQ(d.d_shape, 1u);
  EXPECT_FALSE(d.d_struct);
  EXPECT_EQ(d.counts[g.index_of("plan")], (std::pair<std::size_t, std::size_t>{2, 3}));
  EXPECT_EQ(trajectory_divergence(a, a, g, kCfg), trajectory_divergence(loop_trace(2), loop_trace(2), g, kCfg));
  EXPECT_EQ(trajectory_divergence(a, a, g, kCfg).d_output, 0.0);
}

TEST(Divergence, GateSkipIsStructural) {
  const auto g = qt::graph(kLoop);
  const auto d = trajectory_divergence(loop_trace(2), loop_trace(0, 1.0, false), g, kCfg);
  EXPECT_TRUE(d.d_struct);
  EXPECT_EQ(d.d_iter, 4u);
  EXPECT_EQ(d.d_shape, 0u);
}

TEST(Divergence, OutputIsWeightedOverSharedNodes) {
  const auto g = qt::graph(kLoop);
  const auto a = loop_trace(2, 1.0), b = loop_trace(2, 1.6);
  // Only `out` differs (by 0.6); six nodes scored.
  EXPECT_NEAR(trajectory_divergence(a, b, g, kCfg).d_output, 0.6 / 6.0, 1e-12);
  EXPECT_NEAR(trajectory_divergence(a, b, g, kCfg, {{"out", 4.0}}).d_output, 0.6 * 4.0 / 9.0, 1e-12);
  EXPECT_EQ(trajectory_divergence(a, b, g, kCfg, {{"out", 0.0}}).d_output, 0.0);
}

TEST(Divergence, RatesOverPairs) {
  std::vector<DivergenceTriple> divs(4);
  divs[0].d_output = 0.1;
  divs[1].d_iter = 1;
  divs[1].d_output = 0.1;
  divs[2].d_shape = 2;
  divs[2].d_struct = true;
  const auto r = divergence_rates(divs);
  EXPECT_EQ(r.n, 4u);
  EXPECT_EQ(r.iter, 0.25);
  EXPECT_EQ(r.shape, 0.25);
  EXPECT_EQ(r.output, 0.5);
  EXPECT_EQ(r.output_only, 0.25);
  EXPECT_EQ(r.structural, 0.25);
  EXPECT_EQ(divergence_rates({}).n, 0u);
}

TEST(Divergence, TableDrivenMatchesDirect) {
  const auto g = qt::graph(kLoop);
  TraceCorpus c;
  for (int k = 1; k <= 4; ++k) {
    auto a = loop_trace(k), b = loop_trace(5 - k, 0.5 * k);
    a.group_key = b.group_key = "g" + std::to_string(k);
    a.trace_id += "a";
    b.trace_id += "b";
    c.add(a);
    c.add(b);
  }
  const auto table = compute_distances(c, form_pairs(c), g, kCfg);
  const auto divs = compute_divergences(c, table, g, {}, 3);
  ASSERT_EQ(divs.size(), 4u);
  for (std::size_t p = 0; p < divs.size(); ++p)
    EXPECT_EQ(divs[p], trajectory_divergence(c[table.pair(p).left], c[table.pair(p).right], g, kCfg));
}

TEST(Bifurcation, DecisionAncestors) {
  const auto g = qt::graph(kLoop);
  const auto anc = decision_ancestors(g);
  EXPECT_TRUE(anc[g.index_of("q")]);
  EXPECT_TRUE(anc[g.index_of("cls")]);
  EXPECT_TRUE(anc[g.index_of("tool")]);
  EXPECT_FALSE(anc[g.index_of("out")]);
  EXPECT_FALSE(anc[g.index_of("side")]);
}

TEST(Bifurcation, ObservationalMinimumOverDivergentPairs) {
  const auto g = qt::graph(kLoop);
  const auto q = g.index_of("q");
  std::vector<std::vector<std::optional<double>>> rows;
  std::vector<DivergenceTriple> divs;
  for (double d : {0.05, 0.2, 0.3, 0.4, 0.6}) {
    std::vector<std::optional<double>> row(g.size(), 0.0);
    row[q] = d;
    rows.push_back(row);
    DivergenceTriple t;
    t.d_shape = d >= 0.3 ? 1 : 0;
    t.d_iter = d >= 0.4 ? 1 : 0;
    divs.push_back(t);
  }
  const auto table = qt::table_of(rows, g.size());
  const auto e = bifurcation_observational(q, g, table, divs, 0.01);
  ASSERT_TRUE(e.has_value());
  EXPECT_EQ(*e.beta_shape, 0.3);
  EXPECT_EQ(*e.beta_iter, 0.4);
  EXPECT_EQ(e.n_support, 3u);
  EXPECT_FALSE(e.coverage_note.empty());

  const auto off = bifurcation_observational(g.index_of("side"), g, table, divs, 0.01);
  EXPECT_FALSE(off.has_value());
  EXPECT_FALSE(off.reason.empty());
  EXPECT_THROW(bifurcation_observational(q, g, table, {}, 0.01), ValidationError);

  // Clean-input divergence means the node cannot be blamed: threshold zero.
  divs[0].d_shape = 1;
  EXPECT_EQ(*bifurcation_observational(q, g, table, divs, 0.1).beta_shape, 0.0);
}

TEST(Bifurcation, InterventionalThresholdAndCoverage) {
  std::vector<SweepResult> rs;
  for (double m : {0.1, 0.2, 0.35, 0.5}) {
    SweepResult r;
    r.magnitude = m;
    r.realized_d = m;
    r.divergence.d_shape = m > 0.3 ? 1 : 0;
    rs.push_back(r);
  }
  SweepResult noop;
  noop.stratum = Stratum::no_op;
  rs.push_back(noop);
  const auto e = bifurcation_interventional("src", rs);
  ASSERT_TRUE(e.beta_shape);
  EXPECT_EQ(*e.beta_shape, 0.35);
  EXPECT_FALSE(e.beta_iter);
  EXPECT_EQ(e.coverage_note, "upper bound: no magnitudes sampled in (0.2, 0.35)");
  EXPECT_EQ(e.mode, BifurcationMode::interventional);

  rs.back().divergence.d_output = 1e-6;
  EXPECT_THROW(bifurcation_interventional("src", rs), HarnessError);
  EXPECT_THROW(bifurcation_interventional("src", {noop}), InsufficientDataError);

  std::vector<SweepResult> flat(2);
  flat[0].realized_d = 0.1;
  flat[1].realized_d = 0.4;
  const auto none = bifurcation_interventional("src", flat);
  EXPECT_FALSE(none.has_value());
  EXPECT_EQ(none.reason, "no bifurcation observed in sweep range");
}

TEST(Bifurcation, LowestMagnitudeHasNoLowerBracket) {
  SweepResult r;
  r.realized_d = 0.1;
  r.divergence.d_iter = 1;
  const auto e = bifurcation_interventional("src", {r});
  EXPECT_EQ(*e.beta_iter, 0.1);
  EXPECT_EQ(e.coverage_note, "upper bound: no magnitudes sampled below 0.1");
}

TEST(GateFlip, StructuralRateMatchesTwoIndependentFlips) {
  const double f = 0.2;
  for (bool reference : {false, true}) {
    const auto sc = scenario_from_json(json::parse(gate_flip_scenario(f, reference)));
    const auto sim = simulate_corpus(sc, 4);
    const auto table = compute_distances(sim.corpus, form_pairs(sim.corpus), sc.graph, kCfg, 4);
    const auto rates = divergence_rates(compute_divergences(sim.corpus, table, sc.graph));
    const double expected = reference ? f : 2 * f * (1 - f);
    const double se = std::sqrt(expected * (1 - expected) / static_cast<double>(rates.n));
    EXPECT_NEAR(rates.structural, expected, 4 * se) << "reference=" << reference;
  }
}

namespace {

// Loop trace with explicit controller actions and a tunable output level.
Trace custom(const std::vector<std::string>& actions, double out) {
  Trace t;
  t.trace_id = "c";
  t.group_key = "g";
  std::size_t i = 0;
  t.invocations.push_back(inv("q", i++, level(0.5)));
  t.invocations.push_back(inv("cls", i++, {{"small", TypedValue::boolean(false)}}));
  for (std::size_t it = 1; it <= actions.size(); ++it) {
    t.invocations.push_back(inv("plan", i++, level(1.0), static_cast<int>(it), actions[it - 1]));
    t.invocations.push_back(inv("tool", i++, level(1.0), static_cast<int>(it)));
  }
  t.invocations.push_back(inv("out", i++, level(out)));
  t.invocations.push_back(inv("side", i++, level(0.0)));
  t.realized_k = static_cast<int>(actions.size());
  t.gates = {{"engage", true}};
  return t;
}

}  // namespace

TEST(Divergence, AxesAreOrthogonalAcrossAllEightCombinations) {
  const auto g = qt::graph(kLoop);
  const Trace base = custom({"search", "answer"}, 1.0);
  for (int mask = 0; mask < 8; ++mask) {
    const bool iter = mask & 1, shape = mask & 2, output = mask & 4;
    std::vector<std::string> acts{shape ? "answer" : "search", "answer"};
    if (iter) acts.push_back("answer");
    const auto d = trajectory_divergence(base, custom(acts, output ? 2.0 : 1.0), g, kCfg);
    EXPECT_EQ(d.d_iter > 0, iter) << mask;
    EXPECT_EQ(d.d_shape > 0, shape) << mask;
    EXPECT_EQ(d.d_output > 0, output) << mask;
    EXPECT_FALSE(d.d_struct) << mask;
  }
}
