#include <gtest/gtest.h>

#include <atomic>
#include <cmath>

#include "test_support.hpp"

using namespace quiver;

namespace {

constexpr int kCases = 300;
const KernelConfig kCfg{};
const FieldKind kKinds[] = {FieldKind::categorical, FieldKind::boolean, FieldKind::set, FieldKind::ordered_list,
                            FieldKind::numeric, FieldKind::text, FieldKind::mapping};

FieldSpec field_of(FieldKind k, OrderSemantics order = OrderSemantics::edit) {
  FieldSpec f;
  f.name = "f";
  f.kind = k;
  f.order = order;
  return f;
}

double upper_bound_for(FieldKind k) {
  if (k == FieldKind::numeric) return 2.0;  // relative difference of opposite signs
  if (k == FieldKind::text) return 2.0;
  if (k == FieldKind::mapping) return 1.5;
  return 1.0;
}

}  // namespace

TEST(Properties, KernelsAreBoundedSymmetricAndZeroOnIdentity) {
  qt::Gen gen(101);
  for (auto k : kKinds)
    for (auto order : {OrderSemantics::edit, OrderSemantics::rank}) {
      const auto f = field_of(k, order);
      for (int c = 0; c < kCases; ++c) {
        const auto a = gen.value(k), b = gen.value(k);
        const double ab = field_distance(f, a, b, kCfg), ba = field_distance(f, b, a, kCfg);
        EXPECT_GE(ab, 0.0) << to_string(k);
        EXPECT_LE(ab, upper_bound_for(k) + 1e-12) << to_string(k);
        EXPECT_NEAR(ab, ba, 1e-12) << to_string(k);
        EXPECT_EQ(field_distance(f, a, a, kCfg), 0.0) << to_string(k);
      }
    }
}

TEST(Properties, JaccardAndEditDistanceObeyTheTriangleInequality) {
  qt::Gen gen(102);
  for (int c = 0; c < kCases; ++c) {
    const auto a = gen.unique_list(8, 10), b = gen.unique_list(8, 10), x = gen.unique_list(8, 10);
    EXPECT_LE(kernel::jaccard(a, x), kernel::jaccard(a, b) + kernel::jaccard(b, x) + 1e-12);
    const auto p = gen.list(8, 5), q = gen.list(8, 5), r = gen.list(8, 5);
    EXPECT_LE(kernel::levenshtein(p, r), kernel::levenshtein(p, q) + kernel::levenshtein(q, r));
    EXPECT_EQ(kernel::levenshtein(p, q) == 0, p == q);
    EXPECT_LE(kernel::levenshtein(p, q), std::max(p.size(), q.size()));
  }
}

TEST(Properties, PairCountIsSumOfBinomials) {
  qt::Gen gen(103);
  for (int c = 0; c < 50; ++c) {
    TraceCorpus corpus;
    std::size_t expected = 0;
    const auto groups = 1 + gen.below(20);
    for (std::size_t g = 0; g < groups; ++g) {
      const auto n = gen.below(7);
      expected += n * (n ? n - 1 : 0) / 2;
      for (std::size_t r = 0; r < n; ++r)
        corpus.add(qt::numeric_trace("g" + std::to_string(g) + "r" + std::to_string(gen.next() % 1000) + "_" + std::to_string(r),
                                     "g" + std::to_string(g), {"a"}, {0.0}));
    }
    const auto pairs = form_pairs(corpus);
    ASSERT_EQ(pairs.size(), expected);
    for (const auto& p : pairs) {
      EXPECT_EQ(corpus[p.left].group_key, corpus[p.right].group_key);
      EXPECT_LT(corpus[p.left].trace_id, corpus[p.right].trace_id);
    }
  }
}

TEST(Properties, SensitivityScalesWithTheDownstreamDistance) {
  qt::Gen gen(104);
  const auto g = qt::numeric_graph({"a", "b"}, {{"a", "b"}});
  for (int c = 0; c < 50; ++c) {
    std::vector<std::vector<std::optional<double>>> rows, scaled;
    const double k = gen.uniform(0.1, 5.0);
    for (int p = 0; p < 40; ++p) {
      const double di = gen.uniform(0.0, 1.0), dj = gen.uniform(0.0, 1.0);
      rows.push_back({di, dj});
      scaled.push_back({di, k * dj});
    }
    const auto s = estimate_edge_sensitivity(0, 1, g, qt::table_of(rows, 2), {});
    const auto t = estimate_edge_sensitivity(0, 1, g, qt::table_of(scaled, 2), {});
    ASSERT_EQ(s.n, t.n);
    EXPECT_NEAR(t.sigma_hat, k * s.sigma_hat, 1e-9 * (1 + t.sigma_hat));
    EXPECT_NEAR(t.median_ratio, k * s.median_ratio, 1e-9 * (1 + t.median_ratio));
    const auto l = estimate_occurrence_lift(0, 1, qt::table_of(rows, 2), {});
    if (l.lambda) {
      EXPECT_GE(*l.lambda, -1.0);
      EXPECT_LE(*l.lambda, 1.0);
    }
  }
}

TEST(Properties, PathProductsComposeOverConcatenation) {
  qt::Gen gen(105);
  std::vector<std::string> names;
  std::vector<std::pair<std::string, std::string>> edges;
  for (int k = 0; k < 8; ++k) names.push_back("n" + std::to_string(k));
  for (int k = 0; k + 1 < 8; ++k) edges.emplace_back(names[k], names[k + 1]);
  const auto g = qt::numeric_graph(names, edges);
  for (int c = 0; c < 100; ++c) {
    SensitivityMatrix m(g);
    for (int k = 0; k + 1 < 8; ++k) m.set(k, k + 1, gen.uniform(0.0, 3.0));
    const auto cut = 1 + gen.below(6);
    const std::vector<std::string> left(names.begin(), names.begin() + static_cast<long>(cut) + 1);
    const std::vector<std::string> right(names.begin() + static_cast<long>(cut), names.end());
    EXPECT_NEAR(path_sensitivity(names, m, g), path_sensitivity(left, m, g) * path_sensitivity(right, m, g),
                1e-12 * (1 + path_sensitivity(names, m, g)));
  }
}

TEST(Properties, NoiseOriginsPartitionTheScoredPairs) {
  qt::Gen gen(106);
  const auto g = qt::numeric_graph({"a", "b", "c"}, {{"a", "b"}, {"a", "c"}, {"b", "c"}});
  for (int c = 0; c < 100; ++c) {
    std::vector<std::vector<std::optional<double>>> rows;
    std::vector<std::size_t> scored(3, 0);
    for (int p = 0; p < 30; ++p) {
      std::vector<std::optional<double>> row;
      for (int i = 0; i < 3; ++i) {
        std::optional<double> d;
        if (gen.coin(0.9)) d = gen.coin(0.5) ? 0.0 : gen.uniform(0.0, 0.5);
        if (d) ++scored[i];
        row.push_back(d);
      }
      rows.push_back(row);
    }
    const auto r = noise_origin_classify(qt::table_of(rows, 3), g, {});
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(r[i].clean_upstream + r[i].dirty_upstream, scored[i]);
      const bool origin = r[i].clean_upstream_drift > 0;
      const bool indet = r[i].clean_upstream == 0;
      EXPECT_EQ(r[i].cls == NoiseOriginClass::indeterminate, indet);
      EXPECT_EQ(r[i].cls == NoiseOriginClass::origin, !indet && origin);
      EXPECT_EQ(r[i].cls == NoiseOriginClass::propagator, !indet && !origin);
    }
  }
}

TEST(Properties, DivergenceIsSymmetric) {
  qt::Gen gen(107);
  const auto g = qt::graph(R"({
    "nodes": [
      {"id": "c", "fields": [{"name": "level", "kind": "numeric"}]},
      {"id": "t", "fields": [{"name": "level", "kind": "numeric"}]},
      {"id": "o", "fields": [{"name": "level", "kind": "numeric"}]}
    ],
    "edges": [["c", "t"], ["t", "c"], ["t", "o"]],
    "loop": {"body": ["c", "t"], "controller": "c", "k_max": 5, "actions": ["go", "stop", "alt"]}
  })");
  auto random_trace = [&] {
    Trace t;
    t.trace_id = "x";
    t.group_key = "g";
    const int k = 1 + static_cast<int>(gen.below(5));
    std::size_t i = 0;
    for (int it = 1; it <= k; ++it) {
      t.invocations.push_back(qt::inv("c", i++, qt::level(gen.uniform()), it, gen.coin() ? "go" : "alt"));
      t.invocations.push_back(qt::inv("t", i++, qt::level(gen.uniform()), it));
    }
    t.invocations.push_back(qt::inv("o", i++, qt::level(gen.uniform())));
    t.realized_k = k;
    return t;
  };
  for (int c = 0; c < kCases; ++c) {
    const auto a = random_trace(), b = random_trace();
    const auto ab = trajectory_divergence(a, b, g, kCfg), ba = trajectory_divergence(b, a, g, kCfg);
    EXPECT_EQ(ab.d_iter, ba.d_iter);
    EXPECT_EQ(ab.d_shape, ba.d_shape);
    EXPECT_EQ(ab.d_struct, ba.d_struct);
    EXPECT_NEAR(ab.d_output, ba.d_output, 1e-12);
    EXPECT_EQ(ab.d_iter % 2, 0u);
    const auto self = trajectory_divergence(a, a, g, kCfg);
    EXPECT_EQ(self.d_iter + self.d_shape, 0u);
    EXPECT_EQ(self.d_output, 0.0);
  }
}

TEST(Properties, KlIsNonnegativeAndZeroOnIdenticalSamples) {
  qt::Gen gen(108);
  FieldSpec f;
  f.name = "route";
  f.kind = FieldKind::categorical;
  for (int c = 0; c < kCases; ++c) {
    std::vector<std::string> p, q;
    const auto np = 1 + gen.below(40), nq = 1 + gen.below(40);
    for (std::size_t k = 0; k < np; ++k) p.push_back(gen.label(4));
    for (std::size_t k = 0; k < nq; ++k) q.push_back(gen.label(4));
    EXPECT_GE(kl_from_samples(f, p, q, 0.1).kl, 0.0);
    EXPECT_EQ(kl_from_samples(f, p, p, 0.1).kl, 0.0);
  }
}

TEST(Properties, TraceJsonRoundTrip) {
  qt::Gen gen(109);
  const auto g = qt::graph(R"({
    "nodes": [{"id": "n", "fields": [
      {"name": "c", "kind": "categorical"}, {"name": "b", "kind": "boolean"}, {"name": "s", "kind": "set"},
      {"name": "l", "kind": "ordered_list"}, {"name": "x", "kind": "numeric"}, {"name": "t", "kind": "text"},
      {"name": "m", "kind": "mapping"}]}],
    "edges": []
  })");
  for (int c = 0; c < kCases; ++c) {
    Trace t;
    t.trace_id = "t" + std::to_string(c);
    t.group_key = gen.label(5);
    NodeOutput out;
    out["c"] = gen.value(FieldKind::categorical);
    out["b"] = gen.value(FieldKind::boolean);
    out["s"] = gen.value(FieldKind::set);
    out["l"] = gen.value(FieldKind::ordered_list);
    out["x"] = gen.value(FieldKind::numeric);
    out["t"] = gen.value(FieldKind::text);
    out["m"] = gen.value(FieldKind::mapping);
    t.invocations.push_back(qt::inv("n", 0, out));
    EXPECT_EQ(trace_from_json(trace_to_json(t), g), t);
  }
}

TEST(Properties, ParallelForVisitsEachIndexOnce) {
  qt::Gen gen(110);
  for (int c = 0; c < 30; ++c) {
    const auto n = gen.below(500);
    const auto jobs = static_cast<unsigned>(1 + gen.below(8));
    std::vector<std::atomic<int>> hits(n);
    parallel_for(n, jobs, [&](std::size_t k) { hits[k].fetch_add(1); });
    for (std::size_t k = 0; k < n; ++k) EXPECT_EQ(hits[k].load(), 1);
  }
}
