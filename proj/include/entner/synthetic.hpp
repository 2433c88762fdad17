// Seeded synthetic corpus with four entity types, small per-type lexicons,
// and type-revealing sentence frames. Small enough for a desk-scale
// backbone to learn quickly, varied enough that held-out sentences are new
// combinations rather than repeats.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "entner/common.hpp"
#include "entner/corpus.hpp"

namespace entner::synth {

inline const std::vector<std::string>& type_inventory() {
  static const std::vector<std::string> types = {"LOC", "MISC", "ORG", "PER"};
  return types;
}

inline const std::vector<std::string>& lexicon(const std::string& type) {
  static const std::vector<std::string> per = {"anna",  "boris", "clara", "dmitri",
                                               "elena", "felix", "greta", "hugo"};
  static const std::vector<std::string> loc = {"avalon",   "brinport", "calera",  "dorvik",
                                               "eastmere", "fenwick",  "gulmara", "harlow"};
  static const std::vector<std::string> org = {"apexcorp",  "bluecore", "cindral",    "dynacorp",
                                               "emberworks", "fluxline", "gritworks", "hollowtech"};
  static const std::vector<std::string> misc = {"aurorafest", "bronzecup", "chromaday",
                                                "droneexpo",  "emberfair", "frostrun"};
  if (type == "PER") return per;
  if (type == "LOC") return loc;
  if (type == "ORG") return org;
  if (type == "MISC") return misc;
  throw ConfigError("unknown synthetic type: " + type);
}

namespace detail {

// Frames are token lists; {X} slots draw from type X's lexicon.
inline const std::vector<std::vector<std::string>>& frames() {
  static const std::vector<std::vector<std::string>> f = {
      {"{PER}", "works", "at", "{ORG}", "."},
      {"{PER}", "lives", "in", "{LOC}", "."},
      {"{PER}", "moved", "from", "{LOC}", "to", "{LOC}", "."},
      {"{ORG}", "opened", "an", "office", "in", "{LOC}", "."},
      {"{ORG}", "hired", "{PER}", "last", "spring", "."},
      {"the", "{MISC}", "takes", "place", "in", "{LOC}", "."},
      {"{PER}", "attended", "the", "{MISC}", "yesterday", "."},
      {"{ORG}", "sponsors", "the", "{MISC}", "every", "year", "."},
      {"{PER}", "met", "with", "{PER}", "near", "{LOC}", "."},
      {"the", "{MISC}", "was", "organized", "by", "{ORG}", "."},
      {"reporters", "said", "{PER}", "visited", "{ORG}", "headquarters", "."},
      {"crowds", "gathered", "in", "{LOC}", "for", "the", "{MISC}", "."},
  };
  return f;
}

inline const std::vector<std::vector<std::string>>& plain_sentences() {
  static const std::vector<std::vector<std::string>> f = {
      {"the", "weather", "stayed", "cold", "and", "wet", "yesterday", "."},
      {"prices", "rose", "sharply", "during", "the", "quarter", "."},
      {"the", "meeting", "ended", "without", "any", "decision", "."},
      {"traffic", "slowed", "down", "near", "the", "old", "bridge", "."},
      {"sales", "figures", "improved", "after", "the", "holidays", "."},
      {"the", "committee", "will", "publish", "its", "report", "soon", "."},
      {"workers", "finished", "the", "repairs", "ahead", "of", "schedule", "."},
      {"no", ",", "the", "office", "stayed", "closed", "on", "monday", "."},
      {"yes", ",", "the", "market", "opened", "early", "today", "."},
      {"nobody", "expected", "the", "results", "so", "quickly", "."},
  };
  return f;
}

}  // namespace detail

// Labeled sentences; roughly 70% carry entities. Deterministic per seed.
inline std::vector<TaggedSentence> make_corpus(std::size_t n_sentences, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<TaggedSentence> out;
  out.reserve(n_sentences);
  for (std::size_t i = 0; i < n_sentences; ++i) {
    TaggedSentence s;
    if (coin(rng) < 0.3) {
      const auto& plain = detail::plain_sentences();
      std::uniform_int_distribution<std::size_t> pick(0, plain.size() - 1);
      s.tokens = plain[pick(rng)];
      s.tags.assign(s.tokens.size(), "O");
    } else {
      const auto& fs = detail::frames();
      std::uniform_int_distribution<std::size_t> pick(0, fs.size() - 1);
      for (const auto& slot : fs[pick(rng)]) {
        if (slot.size() > 2 && slot.front() == '{' && slot.back() == '}') {
          const std::string type = slot.substr(1, slot.size() - 2);
          const auto& lex = lexicon(type);
          std::uniform_int_distribution<std::size_t> draw(0, lex.size() - 1);
          s.tokens.push_back(lex[draw(rng)]);
          s.tags.push_back("B-" + type);
        } else {
          s.tokens.push_back(slot);
          s.tags.push_back("O");
        }
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// Unlabeled text for backbone pretraining: same generator, tags dropped.
inline std::vector<std::vector<std::string>> make_pretrain_text(std::size_t n_sentences,
                                                                std::uint64_t seed) {
  std::vector<std::vector<std::string>> out;
  out.reserve(n_sentences);
  for (auto& s : make_corpus(n_sentences, seed)) out.push_back(std::move(s.tokens));
  return out;
}

}  // namespace entner::synth
