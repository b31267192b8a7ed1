#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

#include "test_support.hpp"

using namespace quiver;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("quiver_reporting_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(QUIVER_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, MergeKeepsUnsetFields) {
  AnalysisConfig c;
  merge_config(c, json{{"epsilon", 0.05}, {"node_weights", {{"planner", 2.0}}}, {"order_overrides", {{"discovery.fragment_ids", "rank"}}}});
  EXPECT_EQ(c.epsilon, 0.05);
  EXPECT_EQ(c.delta_band, 0.4);
  EXPECT_EQ(c.node_weights.at("planner"), 2.0);
  EXPECT_EQ(c.order_overrides.at("discovery.fragment_ids"), OrderSemantics::rank);
  EXPECT_EQ(c.kernel().epsilon, 0.05);
  EXPECT_EQ(c.sensitivity().epsilon, 0.05);
  EXPECT_THROW(merge_config(c, json{{"epsilon", "big"}}), ValidationError);
  EXPECT_THROW(merge_config(c, json{{"order_overrides", {{"a.b", "sideways"}}}}), ValidationError);
}

TEST(Config, ValidateAndResolve) {
  const auto g = load_graph_spec(qt::demo("worked_example.json"));
  auto c = load_config(qt::demo("config.json"));
  c.validate();
  c.resolve(g);
  EXPECT_TRUE(c.recall_fields.count("composer.selected_refs"));

  AnalysisConfig bad;
  bad.epsilon = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = {};
  bad.alpha_levels = {0.0};
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = {};
  bad.embedding = "table";
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = {};
  bad.node_weights["ghost"] = 1;
  EXPECT_THROW(bad.resolve(g), ValidationError);
  bad = {};
  bad.field_weights["planner"] = 1;
  EXPECT_THROW(bad.resolve(g), ValidationError);
  bad = {};
  bad.recall_fields = {"planner.ghost"};
  EXPECT_THROW(bad.resolve(g), ValidationError);
}

TEST(Config, HashIgnoresOutputDirAndJobs) {
  AnalysisConfig a, b;
  b.output_dir = "elsewhere";
  b.jobs = 8;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.epsilon = 0.02;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Tsv, CellFormatting) {
  EXPECT_EQ(tsv_cell(nullptr), "NA");
  EXPECT_EQ(tsv_cell(true), "true");
  EXPECT_EQ(tsv_cell(3), "3");
  EXPECT_EQ(tsv_cell(0.1), "0.1");
  EXPECT_EQ(tsv_cell(1.0 / 3.0), "0.3333333333");
  EXPECT_EQ(tsv_cell("x"), "x");
  Table t{{"a", "b"}, {}};
  t.add({1, nullptr});
  EXPECT_EQ(to_tsv(t), "a\tb\n1\tNA\n");
  EXPECT_THROW(t.add({1}), HarnessError);
  EXPECT_EQ(table_json(t), json::parse(R"([{"a": 1, "b": null}])"));
}

TEST(Sections, PairsAndDistances) {
  const auto g = qt::numeric_graph({"a", "b"}, {{"a", "b"}});
  TraceCorpus c;
  c.add(qt::numeric_trace("x1", "x", {"a", "b"}, {1.0, 1.0}));
  c.add(qt::numeric_trace("x2", "x", {"a"}, {1.5}));
  c.add(qt::numeric_trace("y1", "y", {"a", "b"}, {1.0, 1.0}));
  const auto pairs = form_pairs(c);
  const auto ps = pairs_section(c, pairs);
  EXPECT_EQ(ps.extra["total_pairs"], 1);
  EXPECT_EQ(to_tsv(ps.table), "group_key\ttraces\tpairs\nx\t2\t1\ny\t1\t0\n");
  const auto table = compute_distances(c, pairs, g, {});
  const auto ds = distances_section(c, table, g);
  ASSERT_EQ(ds.table.rows.size(), 1u);
  EXPECT_EQ(ds.table.rows[0][3], 0.5);
  EXPECT_EQ(ds.table.rows[0][4], "one-sided");
  EXPECT_EQ(ds.extra["noise_floor"]["a"], 0.5);
  EXPECT_TRUE(ds.extra["noise_floor"]["b"].is_null());
}

TEST(Sections, HeatmapSentinelsAndPaths) {
  const auto g = qt::numeric_graph({"a", "b", "c"}, {{"a", "b"}, {"b", "c"}});
  SensitivityMatrix m(g);
  m.set(0, 1, 2.0);
  const auto h = heatmap_section(m, g);
  EXPECT_EQ(h.table.rows[0][2], 2.0);
  EXPECT_EQ(h.table.rows[0][3], "infeasible");
  EXPECT_EQ(h.table.rows[1][3], "insufficient");
  const auto p = paths_section(m, g, 10);
  ASSERT_EQ(p.table.rows.size(), 1u);
  EXPECT_EQ(p.table.rows[0][0], "a>b>c");
  EXPECT_EQ(p.extra["critical_path"]["nodes"], json({"a", "b", "c"}));
}

TEST(Sections, BudgetsSayNever) {
  DriftBudget b;
  b.from = "a";
  b.to = "b";
  b.floor = 0.1;
  b.n = 5;
  b.tau[0.9] = std::nullopt;
  b.tau[0.5] = 0.2;
  const auto s = budgets_section({b}, {0.5, 0.9});
  EXPECT_NE(to_tsv(s.table).find("never"), std::string::npos);
}

TEST(Emission, WriteSectionProducesDeterministicPayloads) {
  const auto dir = scratch("write");
  Table t{{"k", "v"}, {}};
  t.add({"x", 0.25});
  const Section s{"demo", t, json{{"note", "ok"}}};
  const Stamp st{"test", "c0", "t0", "g0"};
  write_section(dir.string(), s, st);
  for (const char* ext : {".tsv", ".json", ".meta.json"}) EXPECT_TRUE(fs::exists(dir / (std::string("demo") + ext)));
  const auto first = qt::read_file((dir / "demo.json").string());
  write_section(dir.string(), s, st);
  EXPECT_EQ(qt::read_file((dir / "demo.json").string()), first);
  const auto payload = json::parse(first);
  EXPECT_EQ(payload["report"], "demo");
  EXPECT_EQ(payload["summary"]["note"], "ok");
  EXPECT_FALSE(payload.contains("generated_at"));
  EXPECT_TRUE(json::parse(qt::read_file((dir / "demo.meta.json").string())).contains("generated_at"));
  EXPECT_EQ(file_hash((dir / "demo.json").string()), file_hash((dir / "demo.json").string()));
  fs::remove_all(dir);
}

TEST(Errors, CategoriesMapToExitCodes) {
  EXPECT_EQ(exit_code(ErrorCategory::validation), 2);
  EXPECT_EQ(exit_code(ErrorCategory::insufficient_data), 3);
  EXPECT_EQ(exit_code(ErrorCategory::internal), 4);
  EXPECT_EQ(ValidationError("x").category(), ErrorCategory::validation);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  const auto graph = qt::demo("worked_example.json");
  EXPECT_EQ(run_cli("validate -g " + graph), 0);
  EXPECT_EQ(run_cli("validate"), 2);
  EXPECT_EQ(run_cli("validate -g " + graph + " --no-such-flag"), 2);
  EXPECT_EQ(run_cli("validate -g /nonexistent.json"), 2);
  EXPECT_EQ(run_cli("validate -g " + graph + " --epsilon -1"), 2);

  const auto traces = (dir / "single.jsonl").string();
  ASSERT_EQ(run_cli("simulate -s " + graph + " --traces-out " + traces + " --groups 5 --repeats 1"), 0);
  EXPECT_EQ(run_cli("validate -g " + graph + " -t " + traces), 0);
  // One run per group leaves no same-group pairs to measure.
  EXPECT_EQ(run_cli("distances -g " + graph + " -t " + traces + " -o " + (dir / "out").string()), 3);
  fs::remove_all(dir);
}
