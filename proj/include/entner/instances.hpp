// Converts tagged sentences into labeled entailment instances: word-level
// (linear) and span-level (quadratic) candidate generation, positive
// instance construction, and the three-kind negative sampler.
#pragma once

#include <cstdint>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "entner/corpus.hpp"
#include "entner/prompting.hpp"

namespace entner {

struct Candidate {
  CandidateMode mode = CandidateMode::word;
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive; word mode has end == start + 1
  std::string surface;
  std::string gold_type;  // empty = NULL (not an entity / not exactly a mention)
};

struct Provenance {
  std::size_t sentence_id = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  std::string surface;
  std::string entity_type;  // the type used in the hypothesis (empty for null kinds)
};

struct EntailmentInstance {
  std::string premise;
  std::string hypothesis;
  int pattern_id = 1;
  Answer answer = Answer::entail;
  TemplateKind kind = TemplateKind::positive;
  Provenance provenance;
};

struct SamplingConfig {
  double neg_ratio = 1.5;  // negatives per positive
  // Weights over the three negative kinds; defaults to uniform.
  std::map<TemplateKind, double> kind_mix = {{TemplateKind::false_positive, 1.0},
                                             {TemplateKind::null_candidate, 1.0},
                                             {TemplateKind::non_entity, 1.0}};
  std::uint64_t seed = 0;
};

// Word mode emits exactly L candidates; span mode all spans of length
// <= max_span_length. A span's gold type is set only on an exact mention
// match.
inline std::vector<Candidate> generate_candidates(const TaggedSentence& s, CandidateMode mode,
                                                  std::size_t max_span_length = 8) {
  std::vector<Candidate> out;
  const std::size_t L = s.size();
  if (mode == CandidateMode::word) {
    out.reserve(L);
    for (std::size_t i = 0; i < L; ++i) {
      Candidate c;
      c.mode = mode;
      c.start = i;
      c.end = i + 1;
      c.surface = s.tokens[i];
      c.gold_type = tag_type(s.tags[i]);
      out.push_back(std::move(c));
    }
    return out;
  }

  std::map<std::pair<std::size_t, std::size_t>, std::string> mention_types;
  for (const auto& m : extract_mentions(s)) mention_types[{m.start, m.end}] = m.type;
  for (std::size_t len = 1; len <= std::min(max_span_length, L); ++len) {
    for (std::size_t i = 0; i + len <= L; ++i) {
      Candidate c;
      c.mode = mode;
      c.start = i;
      c.end = i + len;
      c.surface = s.tokens[i];
      for (std::size_t k = i + 1; k < c.end; ++k) c.surface += " " + s.tokens[k];
      auto it = mention_types.find({c.start, c.end});
      if (it != mention_types.end()) c.gold_type = it->second;
      out.push_back(std::move(c));
    }
  }
  return out;
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 step over seed+salt; decouples per-sentence streams.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Builds instances for one sentence against a fixed template/pattern choice.
struct InstanceFactory {
  TemplateSet templates = TemplateSet::defaults(CandidateMode::word);
  PatternLayout pattern = pattern_by_id(1);
  TypeNameMap type_names;
  std::size_t max_span_length = 8;

  EntailmentInstance make(const TaggedSentence& s, const Candidate& c, TemplateKind kind,
                          const std::string& asserted_type, std::size_t sentence_id) const {
    EntailmentInstance inst;
    inst.premise = s.text();
    const HypothesisTemplate tmpl = templates.for_kind(kind);
    const std::string type_word =
        asserted_type.empty() ? std::string() : type_names.word_for(asserted_type);
    inst.hypothesis = render_hypothesis(tmpl, c.surface, type_word);
    inst.pattern_id = pattern.id;
    inst.kind = kind;
    inst.answer = answer_for_kind(kind);
    inst.provenance = {sentence_id, c.start, c.end, c.surface, asserted_type};
    return inst;
  }

  // One positive per entity-bearing candidate plus a null_other (answer Y)
  // per non-entity candidate.
  std::vector<EntailmentInstance> build_positives(const TaggedSentence& s,
                                                  std::size_t sentence_id = 0) const {
    std::vector<EntailmentInstance> out;
    for (const auto& c : generate_candidates(s, templates.mode, max_span_length)) {
      if (!c.gold_type.empty()) {
        out.push_back(make(s, c, TemplateKind::positive, c.gold_type, sentence_id));
      } else {
        out.push_back(make(s, c, TemplateKind::null_other, {}, sentence_id));
      }
    }
    return out;
  }

  // Draws round(neg_ratio x |positives|) negatives with kinds sampled by
  // kind_mix, restricted per draw to kinds the sentence can support.
  std::vector<EntailmentInstance> sample_negatives(const TaggedSentence& s,
                                                   const std::vector<EntailmentInstance>& positives,
                                                   const SamplingConfig& cfg,
                                                   const std::set<std::string>& type_inventory,
                                                   std::size_t sentence_id = 0) const {
    if (cfg.neg_ratio <= 0) throw ConfigError("neg_ratio must be positive");
    double mix_sum = 0;
    for (const auto& [kind, w] : cfg.kind_mix) {
      if (w < 0) throw ConfigError("kind_mix weights must be non-negative");
      mix_sum += w;
    }
    if (mix_sum <= 0) throw ConfigError("kind_mix must have positive total weight");
    auto weight = [&](TemplateKind k) {
      auto it = cfg.kind_mix.find(k);
      return it == cfg.kind_mix.end() ? 0.0 : it->second;
    };
    if (type_inventory.size() < 2 && weight(TemplateKind::false_positive) > 0) {
      throw ConfigError("false_positive negatives need at least 2 entity types");
    }

    std::vector<Candidate> entity_cands, null_cands;
    for (auto& c : generate_candidates(s, templates.mode, max_span_length)) {
      (c.gold_type.empty() ? null_cands : entity_cands).push_back(std::move(c));
    }

    const long long n_neg = std::llround(cfg.neg_ratio * static_cast<double>(positives.size()));
    std::mt19937_64 rng(detail::mix_seed(cfg.seed, sentence_id));
    std::vector<EntailmentInstance> out;

    std::vector<TemplateKind> kinds = {TemplateKind::false_positive, TemplateKind::null_candidate,
                                       TemplateKind::non_entity};
    std::vector<std::string> types(type_inventory.begin(), type_inventory.end());

    for (long long i = 0; i < n_neg; ++i) {
      std::vector<double> w;
      for (auto k : kinds) {
        bool available = k == TemplateKind::non_entity ? !null_cands.empty()
                                                       : !entity_cands.empty();
        w.push_back(available ? weight(k) : 0.0);
      }
      if (w[0] + w[1] + w[2] <= 0) break;  // sentence cannot support the mix
      std::discrete_distribution<int> pick_kind(w.begin(), w.end());
      const TemplateKind kind = kinds[pick_kind(rng)];

      if (kind == TemplateKind::false_positive) {
        const Candidate& c = entity_cands[std::uniform_int_distribution<std::size_t>(
            0, entity_cands.size() - 1)(rng)];
        std::vector<std::string> others;
        for (const auto& t : types)
          if (t != c.gold_type) others.push_back(t);
        const std::string& other =
            others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
        out.push_back(make(s, c, kind, other, sentence_id));
      } else if (kind == TemplateKind::null_candidate) {
        const Candidate& c = entity_cands[std::uniform_int_distribution<std::size_t>(
            0, entity_cands.size() - 1)(rng)];
        out.push_back(make(s, c, kind, {}, sentence_id));
      } else {
        const Candidate& c = null_cands[std::uniform_int_distribution<std::size_t>(
            0, null_cands.size() - 1)(rng)];
        const std::string& type =
            types[std::uniform_int_distribution<std::size_t>(0, types.size() - 1)(rng)];
        out.push_back(make(s, c, kind, type, sentence_id));
      }
    }
    return out;
  }

  std::vector<EntailmentInstance> build_all(const std::vector<TaggedSentence>& data,
                                            const SamplingConfig& cfg) const {
    const std::set<std::string> inventory = type_inventory(data);
    std::vector<EntailmentInstance> out;
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto pos = build_positives(data[i], i);
      auto neg = sample_negatives(data[i], pos, cfg, inventory, i);
      out.insert(out.end(), pos.begin(), pos.end());
      out.insert(out.end(), neg.begin(), neg.end());
    }
    return out;
  }
};

inline TemplateKind kind_from_string(const std::string& s) {
  for (auto k : {TemplateKind::positive, TemplateKind::false_positive, TemplateKind::non_entity,
                 TemplateKind::null_candidate, TemplateKind::null_other}) {
    if (s == to_string(k)) return k;
  }
  throw ParseError("unknown instance kind '" + s + "'");
}

inline Answer answer_from_string(const std::string& s) {
  if (s == "entail") return Answer::entail;
  if (s == "contradict") return Answer::contradict;
  throw ParseError("unknown answer '" + s + "'");
}

// Line-delimited JSON records.
inline void serialize_instances(const std::vector<EntailmentInstance>& instances,
                                std::ostream& out) {
  for (const auto& inst : instances) {
    nlohmann::json j{
        {"premise", inst.premise},
        {"hypothesis", inst.hypothesis},
        {"pattern_id", inst.pattern_id},
        {"answer", to_string(inst.answer)},
        {"kind", to_string(inst.kind)},
        {"provenance",
         {{"sentence_id", inst.provenance.sentence_id},
          {"start", inst.provenance.start},
          {"end", inst.provenance.end},
          {"surface", inst.provenance.surface},
          {"entity_type", inst.provenance.entity_type}}},
    };
    out << j.dump() << '\n';
  }
}

inline std::vector<EntailmentInstance> deserialize_instances(std::istream& in) {
  std::vector<EntailmentInstance> out;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      EntailmentInstance inst;
      inst.premise = j.at("premise").get<std::string>();
      inst.hypothesis = j.at("hypothesis").get<std::string>();
      inst.pattern_id = j.at("pattern_id").get<int>();
      inst.answer = answer_from_string(j.at("answer").get<std::string>());
      inst.kind = kind_from_string(j.at("kind").get<std::string>());
      const auto& p = j.at("provenance");
      inst.provenance.sentence_id = p.at("sentence_id").get<std::size_t>();
      inst.provenance.start = p.at("start").get<std::size_t>();
      inst.provenance.end = p.at("end").get<std::size_t>();
      inst.provenance.surface = p.at("surface").get<std::string>();
      inst.provenance.entity_type = p.at("entity_type").get<std::string>();
      out.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("record " + std::to_string(index) + ": " + e.what());
    }
    ++index;
  }
  return out;
}

}  // namespace entner
