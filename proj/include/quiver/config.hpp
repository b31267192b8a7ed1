#pragma once

#include <cstdlib>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "quiver/distance.hpp"
#include "quiver/embedding.hpp"
#include "quiver/error.hpp"
#include "quiver/faithfulness.hpp"
#include "quiver/graph.hpp"
#include "quiver/hash.hpp"
#include "quiver/sensitivity.hpp"
#include "quiver/trajectory.hpp"

namespace quiver {

struct AnalysisConfig {
  double epsilon = 0.01;
  double numeric_floor = 1e-9;
  double weight_base = 1.0;
  double delta_band = 0.4;
  double insensitive_floor = 0.01;
  double faithfulness_delta = 0.1;
  std::vector<double> alpha_levels{0.5, 0.9, 0.95};
  double impact_alpha = 1.0;
  std::size_t path_cap = 100000;
  NodeWeights node_weights;
  std::map<std::string, double> field_weights;
  std::map<std::string, OrderSemantics> order_overrides;
  std::set<std::string> recall_fields;
  std::string embedding = "hashed";
  std::size_t embedding_dim = 1024;
  std::string embedding_table;
  std::string output_dir = "quiver-out";
  unsigned jobs = 1;

  void validate() const {
    if (!(epsilon > 0)) throw ValidationError("epsilon must be positive");
    if (!(numeric_floor > 0)) throw ValidationError("numeric_floor must be positive");
    if (!(weight_base > 0)) throw ValidationError("weight_base must be positive");
    if (!(delta_band > 0)) throw ValidationError("delta_band must be positive");
    if (!(insensitive_floor >= 0)) throw ValidationError("insensitive_floor must be nonnegative");
    if (!(faithfulness_delta > 0)) throw ValidationError("faithfulness_delta must be positive");
    if (!(impact_alpha >= 0)) throw ValidationError("impact_alpha must be nonnegative");
    for (double a : alpha_levels)
      if (!(a > 0 && a <= 1)) throw ValidationError("alpha levels must lie in (0, 1]");
    if (path_cap == 0) throw ValidationError("path_cap must be positive");
    if (embedding != "hashed" && embedding != "table") throw ValidationError("embedding must be 'hashed' or 'table'");
    if (embedding == "table" && embedding_table.empty()) throw ValidationError("embedding 'table' needs embedding_table");
    if (embedding_dim == 0) throw ValidationError("embedding_dim must be positive");
    for (const auto& [k, w] : node_weights)
      if (!(w >= 0)) throw ValidationError("node weight for '" + k + "' must be nonnegative");
    for (const auto& [k, w] : field_weights)
      if (!(w >= 0)) throw ValidationError("field weight for '" + k + "' must be nonnegative");
  }

  // Every override must name a declared node (and field).
  void resolve(const PipelineGraphSpec& spec) const {
    for (const auto& [k, w] : node_weights) {
      (void)w;
      if (!spec.find(k)) throw ValidationError("node_weights names unknown node '" + k + "'");
    }
    auto check_field = [&](const std::string& key, const char* what) {
      const auto dot = key.find('.');
      if (dot == std::string::npos) throw ValidationError(std::string(what) + " key '" + key + "' must be node.field");
      const auto node = key.substr(0, dot);
      if (!spec.find(node) || !spec.node(node).field(key.substr(dot + 1)))
        throw ValidationError(std::string(what) + " names unknown field '" + key + "'");
    };
    for (const auto& [k, w] : field_weights) (void)w, check_field(k, "field_weights");
    for (const auto& [k, o] : order_overrides) (void)o, check_field(k, "order_overrides");
    for (const auto& k : recall_fields) check_field(k, "recall_fields");
  }

  KernelConfig kernel() const {
    KernelConfig k;
    k.epsilon = epsilon;
    k.numeric_floor = numeric_floor;
    k.weight_base = weight_base;
    k.field_weights = field_weights;
    k.order_overrides = order_overrides;
    if (embedding == "table") k.embedding = std::make_shared<const EmbeddingTable>(EmbeddingTable::load(embedding_table));
    else if (embedding_dim != 1024) k.embedding = std::make_shared<const HashedBagOfTokens>(embedding_dim);
    return k;
  }

  SensitivityConfig sensitivity() const { return {epsilon, insensitive_floor, delta_band}; }

  FaithfulnessOptions faithfulness() const { return {recall_fields}; }
};

inline json config_to_json(const AnalysisConfig& c) {
  json orders = json::object();
  for (const auto& [k, o] : c.order_overrides) orders[k] = o == OrderSemantics::rank ? "rank" : "edit";
  return json{{"epsilon", c.epsilon},
              {"numeric_floor", c.numeric_floor},
              {"weight_base", c.weight_base},
              {"delta_band", c.delta_band},
              {"insensitive_floor", c.insensitive_floor},
              {"faithfulness_delta", c.faithfulness_delta},
              {"alpha_levels", c.alpha_levels},
              {"impact_alpha", c.impact_alpha},
              {"path_cap", c.path_cap},
              {"node_weights", c.node_weights},
              {"field_weights", c.field_weights},
              {"order_overrides", orders},
              {"recall_fields", c.recall_fields},
              {"embedding", c.embedding},
              {"embedding_dim", c.embedding_dim},
              {"embedding_table", c.embedding_table}};
}

// Fields absent from `j` keep their current values.
inline void merge_config(AnalysisConfig& c, const json& j) {
  try {
    c.epsilon = j.value("epsilon", c.epsilon);
    c.numeric_floor = j.value("numeric_floor", c.numeric_floor);
    c.weight_base = j.value("weight_base", c.weight_base);
    c.delta_band = j.value("delta_band", c.delta_band);
    c.insensitive_floor = j.value("insensitive_floor", c.insensitive_floor);
    c.faithfulness_delta = j.value("faithfulness_delta", c.faithfulness_delta);
    c.alpha_levels = j.value("alpha_levels", c.alpha_levels);
    c.impact_alpha = j.value("impact_alpha", c.impact_alpha);
    c.path_cap = j.value("path_cap", c.path_cap);
    if (j.contains("node_weights")) c.node_weights = j.at("node_weights").get<NodeWeights>();
    if (j.contains("field_weights")) c.field_weights = j.at("field_weights").get<std::map<std::string, double>>();
    if (j.contains("order_overrides")) {
      c.order_overrides.clear();
      for (auto it = j.at("order_overrides").begin(); it != j.at("order_overrides").end(); ++it) {
        const auto v = it.value().get<std::string>();
        if (v != "rank" && v != "edit") throw ValidationError("order override must be 'rank' or 'edit'");
        c.order_overrides[it.key()] = v == "rank" ? OrderSemantics::rank : OrderSemantics::edit;
      }
    }
    if (j.contains("recall_fields")) c.recall_fields = j.at("recall_fields").get<std::set<std::string>>();
    c.embedding = j.value("embedding", c.embedding);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.embedding_table = j.value("embedding_table", c.embedding_table);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.jobs = j.value("jobs", c.jobs);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

inline AnalysisConfig load_config(const std::string& path) {
  AnalysisConfig c;
  merge_config(c, read_json_file(path));
  return c;
}

// Hash of the settings that affect report payloads (output_dir and jobs excluded).
inline std::string config_hash(const AnalysisConfig& c) { return hex64(fnv1a64(config_to_json(c).dump())); }

}  // namespace quiver
