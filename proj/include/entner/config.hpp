// Run configuration: one JSON document covering data paths, prompt
// selections, sampling, training, decoding, and the backbone, with
// dotted-path command-line overrides.
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "entner/backend.hpp"
#include "entner/common.hpp"
#include "entner/decoding.hpp"
#include "entner/instances.hpp"
#include "entner/scoring.hpp"
#include "entner/training.hpp"

namespace entner {

inline void to_json(nlohmann::json& j, const SamplingConfig& c) {
  j = {{"neg_ratio", c.neg_ratio},
       {"fp_weight", c.kind_mix.at(TemplateKind::false_positive)},
       {"null_weight", c.kind_mix.at(TemplateKind::null_candidate)},
       {"nonent_weight", c.kind_mix.at(TemplateKind::non_entity)},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SamplingConfig& c) {
  SamplingConfig d;
  c.neg_ratio = j.value("neg_ratio", d.neg_ratio);
  c.kind_mix[TemplateKind::false_positive] = j.value("fp_weight", 1.0);
  c.kind_mix[TemplateKind::null_candidate] = j.value("null_weight", 1.0);
  c.kind_mix[TemplateKind::non_entity] = j.value("nonent_weight", 1.0);
  c.seed = j.value("seed", d.seed);
}

inline void to_json(nlohmann::json& j, const DecodeConfig& c) {
  j = {{"tau", c.tau},
       {"grid", c.grid},
       {"null_mode",
        c.null_mode == NullEmissionMode::null_template ? "null_template" : "one_minus_max"}};
}

inline void from_json(const nlohmann::json& j, DecodeConfig& c) {
  DecodeConfig d;
  c.tau = j.value("tau", d.tau);
  c.grid = j.value("grid", d.grid);
  const std::string nm = j.value("null_mode", std::string("null_template"));
  if (nm != "null_template" && nm != "one_minus_max") throw ConfigError("unknown null_mode: " + nm);
  c.null_mode =
      nm == "one_minus_max" ? NullEmissionMode::one_minus_max : NullEmissionMode::null_template;
  c.validate();
}

struct RunConfig {
  std::string train_path, dev_path, test_path;
  int tag_column = -1;  // last column by default
  int kshot_k = 0;      // 0 trains on the full split
  std::uint64_t kshot_seed = 1;
  std::map<std::string, int> per_type_target;  // overrides k per type when set
  std::size_t max_span_length = 8;

  ScorerOptions scorer;
  SamplingConfig sampling;
  TrainConfig train;
  DecodeConfig decode;
  MlmConfig model;
  std::string backbone_dir;  // pretrained checkpoint; empty trains from scratch
  std::string output_dir = "runs/default";

  // Paths are checked only for the stages that need them.
  void validate_paths(bool need_train, bool need_dev, bool need_test) const {
    namespace fs = std::filesystem;
    auto check = [](const std::string& p, const char* what) {
      if (p.empty()) throw ConfigError(std::string(what) + " path not configured");
      if (!fs::exists(p)) throw ConfigError(std::string(what) + " path does not exist: " + p);
    };
    if (need_train) check(train_path, "train");
    if (need_dev) check(dev_path, "dev");
    if (need_test) check(test_path, "test");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"data",
        {{"train", c.train_path},
         {"dev", c.dev_path},
         {"test", c.test_path},
         {"tag_column", c.tag_column},
         {"kshot_k", c.kshot_k},
         {"kshot_seed", c.kshot_seed},
         {"per_type_target", c.per_type_target},
         {"max_span_length", c.max_span_length}}},
       {"scorer", c.scorer},
       {"sampling", c.sampling},
       {"train", c.train},
       {"decode", c.decode},
       {"model", c.model},
       {"backbone_dir", c.backbone_dir},
       {"output_dir", c.output_dir}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  RunConfig d;
  if (j.contains("data")) {
    const auto& data = j.at("data");
    c.train_path = data.value("train", d.train_path);
    c.dev_path = data.value("dev", d.dev_path);
    c.test_path = data.value("test", d.test_path);
    c.tag_column = data.value("tag_column", d.tag_column);
    c.kshot_k = data.value("kshot_k", d.kshot_k);
    c.kshot_seed = data.value("kshot_seed", d.kshot_seed);
    c.per_type_target = data.value("per_type_target", d.per_type_target);
    c.max_span_length = data.value("max_span_length", d.max_span_length);
  }
  if (j.contains("scorer")) c.scorer = j.at("scorer").get<ScorerOptions>();
  if (j.contains("sampling")) c.sampling = j.at("sampling").get<SamplingConfig>();
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  if (j.contains("decode")) c.decode = j.at("decode").get<DecodeConfig>();
  if (j.contains("model")) c.model = j.at("model").get<MlmConfig>();
  c.backbone_dir = j.value("backbone_dir", d.backbone_dir);
  c.output_dir = j.value("output_dir", d.output_dir);
}

// A typo in an override path would otherwise land in a key from_json never
// reads and silently change nothing.
inline void validate_override_path(const std::string& path) {
  // Maps keyed by user-chosen names accept one extra path segment.
  static const std::vector<std::string> open_maps = {"data.per_type_target", "scorer.type_names"};
  for (const auto& m : open_maps) {
    if (path.size() > m.size() + 1 && path.compare(0, m.size(), m) == 0 &&
        path[m.size()] == '.' && path.find('.', m.size() + 1) == std::string::npos)
      return;
  }
  static const nlohmann::json canon = [] {
    nlohmann::json j;
    to_json(j, RunConfig{});
    return j;
  }();
  const nlohmann::json* node = &canon;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key =
        path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key))
      throw ConfigError("unknown config key in override: " + path);
    node = &(*node)[key];
    if (dot == std::string::npos) return;
    start = dot + 1;
  }
}

// "a.b.c=value" assignments on top of the loaded document. Values parse as
// JSON when possible, otherwise as strings.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like path.to.key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  validate_override_path(path);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("empty key in override path: " + path);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline RunConfig load_run_config(const std::string& path,
                                 const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config " + path + ": " + e.what());
  }
  for (const auto& ov : overrides) apply_override(doc, ov);
  try {
    return doc.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

}  // namespace entner
