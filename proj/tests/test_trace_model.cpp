#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace quiver;
using qt::graph;
using qt::inv;
using qt::level;

namespace {

const char* kLoopGraph = R"({
  "nodes": [
    {"id": "q", "fields": [{"name": "level", "kind": "numeric"}]},
    {"id": "cls", "fields": [{"name": "small", "kind": "boolean"}]},
    {"id": "plan", "fields": [{"name": "level", "kind": "numeric"}]},
    {"id": "tool", "fields": [{"name": "level", "kind": "numeric"}]},
    {"id": "out", "fields": [{"name": "level", "kind": "numeric"}]}
  ],
  "edges": [["q", "cls"], ["q", "plan"], ["plan", "tool"], ["tool", "plan"], ["plan", "out"], ["tool", "out"]],
  "loop": {"body": ["plan", "tool"], "controller": "plan", "k_max": 3, "actions": ["search", "answer"]},
  "gates": [{"id": "engage", "node": "cls", "field": "small", "when": [false], "gated": ["plan", "tool"]}]
})";

NodeOutput small(bool b) { return {{"small", TypedValue::boolean(b)}}; }

Trace loop_trace(int k, bool engaged = true) {
  Trace t;
  t.trace_id = "t";
  t.group_key = "g";
  std::size_t i = 0;
  t.invocations.push_back(inv("q", i++, level(0.5)));
  t.invocations.push_back(inv("cls", i++, small(!engaged)));
  if (engaged) {
    for (int it = 1; it <= k; ++it) {
      t.invocations.push_back(inv("plan", i++, level(it), it, it < k ? "search" : "answer"));
      t.invocations.push_back(inv("tool", i++, level(it), it));
    }
  }
  t.invocations.push_back(inv("out", i++, level(1)));
  t.realized_k = engaged ? k : 0;
  t.gates = {{"engage", engaged}};
  return t;
}

}  // namespace

TEST(GraphSpec, WorkedExampleParentsFollowTheEdgeSet) {
  const auto g = load_graph_spec(qt::demo("worked_example.json"));
  ASSERT_EQ(g.size(), 5u);
  EXPECT_EQ(g.edges().size(), 6u);
  EXPECT_EQ(g.parents(g.index_of("planner")).size(), 3u);
  EXPECT_EQ(g.parents(g.index_of("composer")).size(), 2u);
  EXPECT_EQ(g.sources(), (std::vector<std::size_t>{g.index_of("rewriter"), g.index_of("signal")}));
  EXPECT_EQ(g.sinks(), (std::vector<std::size_t>{g.index_of("composer")}));
  EXPECT_TRUE(g.reachable(g.index_of("rewriter"), g.index_of("composer")));
  EXPECT_FALSE(g.reachable(g.index_of("composer"), g.index_of("rewriter")));
}

TEST(GraphSpec, RejectsMalformedGraphs) {
  EXPECT_THROW(graph(R"({"nodes": []})"), ValidationError);
  EXPECT_THROW(graph(R"({"nodes": [{"id": "a"}, {"id": "a"}]})"), ValidationError);
  EXPECT_THROW(graph(R"({"nodes": [{"id": "a"}], "edges": [["a", "b"]]})"), ValidationError);
  EXPECT_THROW(graph(R"({"nodes": [{"id": "a"}, {"id": "b"}], "edges": [["a", "b"], ["a", "b"]]})"), ValidationError);
  EXPECT_THROW(graph(R"({"nodes": [{"id": "a"}, {"id": "b"}], "edges": [["a", "b"], ["b", "a"]]})"), ValidationError);
  EXPECT_THROW(graph(R"({"nodes": [{"id": "a", "fields": [{"name": "x", "kind": "numeric"}, {"name": "x", "kind": "text"}]}]})"),
               ValidationError);
  EXPECT_THROW(graph(R"({"nodes": [{"id": "a", "fields": [{"name": "x", "kind": "vector"}]}]})"), ValidationError);
  EXPECT_THROW(graph(R"({"nodes": [{"id": "a", "fields": [{"name": "x", "kind": "numeric", "scale": 0}]}]})"), ValidationError);
  EXPECT_THROW(graph(R"({"nodes": [{"id": "a"}], "loop": {"body": [], "k_max": 2, "actions": ["x"]}})"), ValidationError);
  EXPECT_THROW(graph(R"({"nodes": [{"id": "a"}, {"id": "b"}], "loop": {"body": ["a"], "controller": "b", "k_max": 2, "actions": ["x"]}})"),
               ValidationError);
  EXPECT_THROW(graph(R"({"nodes": [{"id": "a"}], "loop": {"body": ["a"], "controller": "a", "k_max": 0, "actions": ["x"]}})"),
               ValidationError);
}

TEST(GraphSpec, GateMayNotGateItsOwnAncestors) {
  EXPECT_THROW(graph(R"({"nodes": [{"id": "a"}, {"id": "b", "fields": [{"name": "f", "kind": "boolean"}]}],
                         "edges": [["a", "b"]],
                         "gates": [{"id": "g", "node": "b", "field": "f", "when": [true], "gated": ["a"]}]})"),
               ValidationError);
  EXPECT_THROW(graph(R"({"nodes": [{"id": "a"}, {"id": "b", "fields": [{"name": "f", "kind": "boolean"}]}],
                         "gates": [{"id": "g", "node": "b", "field": "missing", "gated": ["a"]}]})"),
               ValidationError);
}

TEST(GraphSpec, LoopBodyIsOneScheduledStepWithControllerFirst) {
  const auto g = graph(kLoopGraph);
  EXPECT_TRUE(g.has_loop());
  EXPECT_TRUE(g.in_loop(g.index_of("tool")));
  EXPECT_TRUE(g.is_feedback_edge(g.index_of("tool"), g.index_of("plan")));
  EXPECT_FALSE(g.is_feedback_edge(g.index_of("plan"), g.index_of("tool")));
  const auto& order = g.execution_order();
  ASSERT_EQ(order.size(), 4u);
  EXPECT_EQ(order[0], g.index_of("q"));
  EXPECT_EQ(order[1], g.index_of("cls"));
  EXPECT_FALSE(order[2].has_value());
  EXPECT_EQ(order[3], g.index_of("out"));
  EXPECT_EQ(g.body_order(), (std::vector<std::size_t>{g.index_of("plan"), g.index_of("tool")}));
}

TEST(GraphSpec, JsonRoundTrip) {
  const auto g = graph(kLoopGraph);
  const auto again = graph_spec_from_json(graph_spec_to_json(g));
  EXPECT_EQ(graph_spec_to_json(again), graph_spec_to_json(g));
}

TEST(Trace, ValidLoopTracePasses) {
  const auto g = graph(kLoopGraph);
  auto t = loop_trace(2);
  EXPECT_NO_THROW(validate_trace(t, g));
  const auto topo = derive_topology(t, g);
  EXPECT_EQ(topo.k, 2);
  ASSERT_EQ(topo.shapes.size(), 2u);
  EXPECT_EQ(topo.shapes[0].action, "search");
  EXPECT_EQ(topo.shapes[1].action, "answer");
  EXPECT_EQ(topo.shapes[0].gates.at("engage"), true);
}

TEST(Trace, SkippedLoopHasZeroIterations) {
  const auto g = graph(kLoopGraph);
  auto t = loop_trace(2, false);
  EXPECT_NO_THROW(validate_trace(t, g));
  EXPECT_EQ(derive_topology(t, g).k, 0);
  EXPECT_EQ(invocation_count_map(t, g).at("plan"), 0u);
}

TEST(Trace, MissingRealizedKIsFilledIn) {
  const auto g = graph(kLoopGraph);
  auto t = loop_trace(3);
  t.realized_k = -1;
  validate_trace(t, g);
  EXPECT_EQ(t.realized_k, 3);
}

TEST(Trace, RejectsInvariantViolations) {
  const auto g = graph(kLoopGraph);
  auto expect_bad = [&](auto mutate) {
    auto t = loop_trace(2);
    mutate(t);
    EXPECT_THROW(validate_trace(t, g), ValidationError);
  };
  expect_bad([](Trace& t) { t.invocations[0].node_id = "ghost"; });
  expect_bad([](Trace& t) { t.invocations[0].output.clear(); });
  expect_bad([](Trace& t) { t.invocations[0].output["level"] = TypedValue::text("x"); });
  expect_bad([](Trace& t) { t.invocations[0].output["extra"] = TypedValue::numeric(1); });
  expect_bad([](Trace& t) { t.invocations[1].invocation_index = 7; });
  expect_bad([](Trace& t) { t.invocations[0].iteration_index = 1; });
  expect_bad([](Trace& t) { t.invocations[2].action.reset(); });
  expect_bad([](Trace& t) { t.invocations[2].action = "dance"; });
  expect_bad([](Trace& t) { t.invocations[3].action = "search"; });
  expect_bad([](Trace& t) { t.invocations[2].iteration_index = 4; });
  expect_bad([](Trace& t) { t.realized_k = 1; });
  expect_bad([](Trace& t) { t.gates["engage"] = false; });
  expect_bad([](Trace& t) { t.gates["ghost"] = true; });
  expect_bad([](Trace& t) { t.gates.clear(); });
  expect_bad([](Trace& t) { std::swap(t.invocations[0], t.invocations[1]); t.invocations[0].invocation_index = 0; t.invocations[1].invocation_index = 1; });
  expect_bad([](Trace& t) {
    std::swap(t.invocations[2], t.invocations[3]);
    t.invocations[2].invocation_index = 2;
    t.invocations[3].invocation_index = 3;
  });
}

TEST(Trace, LoopFreeTopologyIsTheGateVector) {
  const auto g = graph(R"({"nodes": [{"id": "a", "fields": [{"name": "f", "kind": "boolean"}]}, {"id": "b"}],
                          "edges": [["a", "b"]],
                          "gates": [{"id": "go", "node": "a", "field": "f", "when": [true], "gated": ["b"]}]})");
  Trace t;
  t.trace_id = "x";
  t.group_key = "g";
  t.invocations.push_back(inv("a", 0, {{"f", TypedValue::boolean(false)}}));
  t.gates = {{"go", false}};
  validate_trace(t, g);
  const auto topo = derive_topology(t, g);
  EXPECT_EQ(topo.k, 1);
  ASSERT_EQ(topo.shapes.size(), 1u);
  EXPECT_EQ(topo.shapes[0].gates, t.gates);
}

TEST(Trace, JsonRoundTripPreservesEverything) {
  const auto g = graph(kLoopGraph);
  auto t = loop_trace(2);
  t.mode = TraceMode::interventional;
  t.perturbation_ref = "p@0.5";
  t.stream = StreamRef{42, 3, 1};
  t.invocations[2].action_params = {{"bin", "1"}};
  validate_trace(t, g);
  const auto back = trace_from_json(json::parse(trace_to_json(t).dump()), g);
  EXPECT_EQ(back, t);
}

TEST(Trace, ParseErrorsCarryTheLineNumber) {
  const auto g = graph(kLoopGraph);
  std::stringstream in;
  in << trace_to_json(loop_trace(1)).dump() << "\n\n{not json}\n";
  try {
    parse_traces(in, g);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  std::stringstream empty;
  const auto c = parse_traces(empty, g);
  EXPECT_TRUE(c.empty());
  EXPECT_EQ(c.warnings().size(), 1u);
}

TEST(Trace, SetValuesRejectDuplicates) {
  EXPECT_THROW(TypedValue::set({"a", "b", "a"}), ValidationError);
  EXPECT_THROW(value_from_json(FieldKind::numeric, json("3")), ValidationError);
  EXPECT_THROW(value_from_json(FieldKind::mapping, json::parse(R"({"k": "v"})")), ValidationError);
}

TEST(Pairs, BalancedDesignGivesRepeatChooseTwoPerGroup) {
  TraceCorpus c;
  for (int gidx = 0; gidx < 4; ++gidx)
    for (int r = 0; r < 3; ++r) c.add(qt::numeric_trace("g" + std::to_string(gidx) + "-" + std::to_string(r), "g" + std::to_string(gidx), {}, {}));
  const auto pairs = form_pairs(c);
  EXPECT_EQ(pairs.size(), 12u);
  for (const auto& p : pairs) {
    EXPECT_EQ(c[p.left].group_key, p.group_key);
    EXPECT_EQ(c[p.right].group_key, p.group_key);
    EXPECT_LT(c[p.left].trace_id, c[p.right].trace_id);
  }
}

TEST(Pairs, ModeFilterAndSingletons) {
  TraceCorpus c;
  c.add(qt::numeric_trace("a", "g1", {}, {}));
  c.add(qt::numeric_trace("b", "g1", {}, {}));
  auto t = qt::numeric_trace("c", "g1", {}, {});
  t.mode = TraceMode::interventional;
  c.add(t);
  c.add(qt::numeric_trace("d", "g2", {}, {}));
  EXPECT_EQ(form_pairs(c).size(), 3u);
  EXPECT_EQ(form_pairs(c, TraceMode::observational).size(), 1u);
  EXPECT_EQ(form_pairs(c, TraceMode::interventional).size(), 0u);
}

TEST(Philox, KnownAnswerVectors) {
  using C = Philox4x32::Counter;
  EXPECT_EQ(Philox4x32::block({0, 0, 0, 0}, {0, 0}), (C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  EXPECT_EQ(Philox4x32::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
            (C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  EXPECT_EQ(Philox4x32::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
            (C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Philox, StreamsArePureFunctionsOfCoordinates) {
  const RandomStream a(7, 1), b(7, 1), c(7, 2), d(8, 1);
  EXPECT_EQ(a.uniform(1, 2, 3), b.uniform(1, 2, 3));
  EXPECT_NE(a.uniform(1, 2, 3), a.uniform(1, 2, 4));
  EXPECT_NE(a.uniform(1, 2, 3), c.uniform(1, 2, 3));
  EXPECT_NE(a.uniform(1, 2, 3), d.uniform(1, 2, 3));
  double sum = 0;
  for (std::uint32_t k = 0; k < 20000; ++k) {
    const double u = a.uniform(k, 0, 0);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 20000, 0.5, 0.01);
}

TEST(Hash, Fnv1aReferenceValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}
