// Exact-match entity scoring (micro precision/recall/F1 plus per-type
// breakdown) and the ablation harness that expands a plan into cells and
// runs them through an injected trainer callback.
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "entner/common.hpp"
#include "entner/corpus.hpp"

namespace entner {

struct TypePRF {
  std::size_t gold = 0, predicted = 0, correct = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct EvalReport {
  std::size_t gold = 0, predicted = 0, correct = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::map<std::string, TypePRF> per_type;
};

inline void finalize_prf(std::size_t gold, std::size_t predicted, std::size_t correct, double& p,
                         double& r, double& f1) {
  p = predicted == 0 ? 0.0 : static_cast<double>(correct) / predicted;
  r = gold == 0 ? 0.0 : static_cast<double>(correct) / gold;
  f1 = (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

// A prediction is correct iff sentence, span, and type all match exactly.
inline EvalReport score_predictions(const std::vector<std::vector<EntityMention>>& gold,
                                    const std::vector<std::vector<EntityMention>>& pred) {
  if (gold.size() != pred.size())
    throw std::invalid_argument("gold and predicted sentence counts differ: " +
                                std::to_string(gold.size()) + " vs " + std::to_string(pred.size()));
  EvalReport rep;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    using Key = std::tuple<std::size_t, std::size_t, std::string>;
    std::multiset<Key> gset;
    for (const auto& m : gold[s]) {
      gset.insert({m.start, m.end, m.type});
      rep.gold++;
      rep.per_type[m.type].gold++;
    }
    for (const auto& m : pred[s]) {
      rep.predicted++;
      rep.per_type[m.type].predicted++;
      auto it = gset.find({m.start, m.end, m.type});
      if (it != gset.end()) {
        gset.erase(it);
        rep.correct++;
        rep.per_type[m.type].correct++;
      }
    }
  }
  finalize_prf(rep.gold, rep.predicted, rep.correct, rep.precision, rep.recall, rep.f1);
  for (auto& [t, prf] : rep.per_type)
    finalize_prf(prf.gold, prf.predicted, prf.correct, prf.precision, prf.recall, prf.f1);
  return rep;
}

inline EvalReport score_tagged(const std::vector<TaggedSentence>& gold,
                               const std::vector<std::vector<std::string>>& pred_tags) {
  if (gold.size() != pred_tags.size())
    throw std::invalid_argument("gold and predicted sentence counts differ");
  std::vector<std::vector<EntityMention>> g, p;
  g.reserve(gold.size());
  p.reserve(gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].tokens.size() != pred_tags[i].size())
      throw std::invalid_argument("token count mismatch in sentence " + std::to_string(i));
    g.push_back(extract_mentions(gold[i]));
    TaggedSentence ps{gold[i].tokens, pred_tags[i]};
    p.push_back(extract_mentions(ps));
  }
  return score_predictions(g, p);
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [t, prf] : r.per_type)
    per[t] = {{"gold", prf.gold},           {"predicted", prf.predicted},
              {"correct", prf.correct},     {"precision", prf.precision},
              {"recall", prf.recall},       {"f1", prf.f1}};
  return {{"gold", r.gold},         {"predicted", r.predicted}, {"correct", r.correct},
          {"precision", r.precision}, {"recall", r.recall},     {"f1", r.f1},
          {"per_type", per}};
}

inline std::string report_to_text(const EvalReport& r) {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof buf, "overall  P %.4f  R %.4f  F1 %.4f  (gold %zu pred %zu correct %zu)\n",
                r.precision, r.recall, r.f1, r.gold, r.predicted, r.correct);
  out += buf;
  for (const auto& [t, prf] : r.per_type) {
    std::snprintf(buf, sizeof buf, "%-8s P %.4f  R %.4f  F1 %.4f  (gold %zu pred %zu correct %zu)\n",
                  t.c_str(), prf.precision, prf.recall, prf.f1, prf.gold, prf.predicted,
                  prf.correct);
    out += buf;
  }
  return out;
}

// --- ablation harness ---

enum class AblationToggle {
  drop_null_negatives,
  drop_fp_negatives,
  drop_nonent_negatives,
  disable_label_conditioning,
  soft_mode,
  discrete_mode,
};

inline std::string to_string(AblationToggle t) {
  switch (t) {
    case AblationToggle::drop_null_negatives: return "drop_null_negatives";
    case AblationToggle::drop_fp_negatives: return "drop_fp_negatives";
    case AblationToggle::drop_nonent_negatives: return "drop_nonent_negatives";
    case AblationToggle::disable_label_conditioning: return "disable_label_conditioning";
    case AblationToggle::soft_mode: return "soft_mode";
    case AblationToggle::discrete_mode: return "discrete_mode";
  }
  throw std::logic_error("unreachable");
}

inline AblationToggle toggle_from_string(const std::string& s) {
  for (AblationToggle t :
       {AblationToggle::drop_null_negatives, AblationToggle::drop_fp_negatives,
        AblationToggle::drop_nonent_negatives, AblationToggle::disable_label_conditioning,
        AblationToggle::soft_mode, AblationToggle::discrete_mode}) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("unknown ablation toggle: " + s);
}

// Each "setting" is a named set of toggles; the plan crosses settings with
// patterns, K values, and seeds.
struct AblationSetting {
  std::string name;
  std::set<AblationToggle> toggles;
};

struct AblationPlan {
  std::vector<AblationSetting> settings;
  std::vector<int> patterns;
  std::vector<int> k_values;
  std::vector<std::uint64_t> seeds;

  void validate() const {
    if (settings.empty()) throw ConfigError("ablation plan needs at least one setting");
    for (int p : patterns)
      if (p < 1 || p > 4) throw ConfigError("ablation pattern out of range: " + std::to_string(p));
    for (const auto& s : settings)
      if (s.toggles.count(AblationToggle::soft_mode) &&
          s.toggles.count(AblationToggle::discrete_mode))
        throw ConfigError("setting '" + s.name + "' requests both soft and discrete mode");
  }
};

struct AblationCell {
  std::string setting;
  std::set<AblationToggle> toggles;
  int pattern_id = 1;
  int k = 0;
  std::uint64_t seed = 0;
  double f1 = 0.0;
  std::vector<std::pair<int, double>> learning_curve;  // (step, dev F1)
  bool failed = false;
  std::string error;
};

struct CellResult {
  double f1 = 0.0;
  std::vector<std::pair<int, double>> learning_curve;
};

using CellRunner = std::function<CellResult(const AblationCell&)>;

// Expands the plan and runs every cell; a throwing cell is recorded as
// failed and the remaining cells still run.
inline std::vector<AblationCell> run_ablation(const AblationPlan& plan, const CellRunner& runner) {
  plan.validate();
  const std::vector<int> patterns = plan.patterns.empty() ? std::vector<int>{1} : plan.patterns;
  const std::vector<int> ks = plan.k_values.empty() ? std::vector<int>{0} : plan.k_values;
  const std::vector<std::uint64_t> seeds =
      plan.seeds.empty() ? std::vector<std::uint64_t>{42} : plan.seeds;
  std::vector<AblationCell> cells;
  for (const auto& setting : plan.settings)
    for (int p : patterns)
      for (int k : ks)
        for (std::uint64_t seed : seeds) {
          AblationCell cell;
          cell.setting = setting.name;
          cell.toggles = setting.toggles;
          cell.pattern_id = p;
          cell.k = k;
          cell.seed = seed;
          try {
            CellResult res = runner(cell);
            cell.f1 = res.f1;
            cell.learning_curve = std::move(res.learning_curve);
          } catch (const std::exception& e) {
            cell.failed = true;
            cell.error = e.what();
          }
          cells.push_back(std::move(cell));
        }
  return cells;
}

inline std::vector<AblationCell> run_pattern_ablation(const AblationPlan& plan,
                                                      const CellRunner& runner) {
  AblationPlan p = plan;
  if (p.patterns.empty()) p.patterns = {1, 2, 3, 4};
  return run_ablation(p, runner);
}

inline std::vector<AblationCell> run_negatives_ablation(const AblationPlan& plan,
                                                        const CellRunner& runner) {
  AblationPlan p = plan;
  if (p.settings.empty()) {
    p.settings = {{"full", {}},
                  {"drop_null_negatives", {AblationToggle::drop_null_negatives}},
                  {"drop_fp_negatives", {AblationToggle::drop_fp_negatives}},
                  {"drop_nonent_negatives", {AblationToggle::drop_nonent_negatives}},
                  {"disable_label_conditioning", {AblationToggle::disable_label_conditioning}}};
  }
  return run_ablation(p, runner);
}

inline nlohmann::json cells_to_json(const std::vector<AblationCell>& cells) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json toggles = nlohmann::json::array();
    for (const auto& t : c.toggles) toggles.push_back(to_string(t));
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& [step, f1] : c.learning_curve) curve.push_back({step, f1});
    out.push_back({{"setting", c.setting},
                   {"toggles", toggles},
                   {"pattern", c.pattern_id},
                   {"k", c.k},
                   {"seed", c.seed},
                   {"f1", c.f1},
                   {"learning_curve", curve},
                   {"failed", c.failed},
                   {"error", c.error}});
  }
  return out;
}

inline std::string cells_to_table(const std::vector<AblationCell>& cells) {
  std::string out = "setting\tpattern\tk\tseed\tf1\tstatus\n";
  char buf[256];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%s\t%d\t%d\t%llu\t%.4f\t%s\n", c.setting.c_str(), c.pattern_id,
                  c.k, static_cast<unsigned long long>(c.seed), c.f1,
                  c.failed ? ("failed: " + c.error).c_str() : "ok");
    out += buf;
  }
  return out;
}

}  // namespace entner
