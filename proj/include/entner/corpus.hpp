// CoNLL-style corpus ingestion: column parsing, BIO tag validation and
// repair, mention extraction, dataset statistics, and seeded sub-sampling
// (k-shot and per-type targets) for low-resource experiments.
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "entner/common.hpp"

namespace entner {

struct TaggedSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;  // same length as tokens, "O" or B-/I-<type>

  std::size_t size() const { return tokens.size(); }
  std::string text() const { return join(tokens); }
};

struct EntityMention {
  std::size_t start = 0;  // inclusive token index
  std::size_t end = 0;    // exclusive token index
  std::string type;
  std::string surface;

  bool operator==(const EntityMention&) const = default;
};

struct DatasetSummary {
  std::size_t sentence_count = 0;
  std::size_t token_count = 0;
  std::set<std::string> type_inventory;
  std::map<std::string, std::size_t> mentions_per_type;

  std::size_t mention_count() const {
    std::size_t n = 0;
    for (const auto& [type, c] : mentions_per_type) n += c;
    return n;
  }
};

struct KShotConfig {
  int k = 0;
  std::uint64_t seed = 0;
  // Defaults to k for every type in the data's inventory when empty.
  std::map<std::string, int> per_type_target;
};

// "O", "B-XXX" or "I-XXX" with a non-empty type.
inline bool is_valid_tag(std::string_view tag) {
  if (tag == "O") return true;
  if (tag.size() < 3) return false;
  if (tag[0] != 'B' && tag[0] != 'I') return false;
  return tag[1] == '-';
}

inline std::string tag_type(std::string_view tag) {
  return tag == "O" ? std::string() : std::string(tag.substr(2));
}

// conlleval convention: an I-<type> opening a run (after O, start of
// sentence, or a different type) is promoted to B-<type>.
inline void repair_scheme(std::vector<std::string>& tags) {
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i].empty() || tags[i][0] != 'I') continue;
    const bool continues = i > 0 && tags[i - 1] != "O" &&
                           tag_type(tags[i - 1]) == tag_type(tags[i]);
    if (!continues) tags[i][0] = 'B';
  }
}

// Parses a CoNLL column document: one token per line, whitespace-separated
// columns, blank line between sentences. tag_column = -1 selects the last
// column. -DOCSTART- lines are dropped.
inline std::vector<TaggedSentence> parse_conll(std::string_view text, int tag_column = -1) {
  if (tag_column == 0) throw ConfigError("tag column 0 is the token column");
  std::vector<TaggedSentence> sentences;
  TaggedSentence current;

  auto flush = [&] {
    if (current.tokens.empty()) return;
    repair_scheme(current.tags);
    sentences.push_back(std::move(current));
    current = {};
  };

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;

    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      flush();
    } else {
      auto cols = split_ws(line);
      if (cols[0] == "-DOCSTART-") {
        flush();
      } else {
        std::size_t needed = tag_column < 0 ? 2 : static_cast<std::size_t>(tag_column) + 1;
        if (cols.size() < needed) {
          throw ParseError("line " + std::to_string(line_no) + ": expected at least " +
                           std::to_string(needed) + " columns, got " + std::to_string(cols.size()));
        }
        const std::string& tag = tag_column < 0 ? cols.back() : cols[tag_column];
        if (!is_valid_tag(tag)) {
          throw ParseError("line " + std::to_string(line_no) + ": malformed tag '" + tag + "'");
        }
        current.tokens.push_back(cols[0]);
        current.tags.push_back(tag);
      }
    }
    if (eol == text.size()) break;
    pos = eol + 1;
  }
  flush();
  return sentences;
}

inline std::vector<TaggedSentence> load_conll(const std::string& path, int tag_column = -1) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open corpus file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_conll(text, tag_column);
}

inline void write_conll(std::ostream& out, const std::vector<TaggedSentence>& data) {
  for (const auto& s : data) {
    for (std::size_t i = 0; i < s.size(); ++i) out << s.tokens[i] << ' ' << s.tags[i] << '\n';
    out << '\n';
  }
}

inline void write_conll(const std::string& path, const std::vector<TaggedSentence>& data) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write corpus file: " + path);
  write_conll(out, data);
}

// Maximal B,I* runs of one type. Assumes scheme-valid tags.
inline std::vector<EntityMention> extract_mentions(const TaggedSentence& s) {
  std::vector<EntityMention> mentions;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s.tags[i][0] != 'B') {
      ++i;
      continue;
    }
    EntityMention m;
    m.start = i;
    m.type = tag_type(s.tags[i]);
    std::size_t j = i + 1;
    while (j < s.size() && s.tags[j][0] == 'I' && tag_type(s.tags[j]) == m.type) ++j;
    m.end = j;
    m.surface = s.tokens[m.start];
    for (std::size_t k = m.start + 1; k < m.end; ++k) m.surface += " " + s.tokens[k];
    mentions.push_back(std::move(m));
    i = j;
  }
  return mentions;
}

inline std::vector<std::string> tags_from_mentions(const std::vector<EntityMention>& mentions,
                                                   std::size_t length) {
  std::vector<std::string> tags(length, "O");
  for (const auto& m : mentions) {
    tags[m.start] = "B-" + m.type;
    for (std::size_t i = m.start + 1; i < m.end; ++i) tags[i] = "I-" + m.type;
  }
  return tags;
}

inline std::set<std::string> type_inventory(const std::vector<TaggedSentence>& data) {
  std::set<std::string> types;
  for (const auto& s : data)
    for (const auto& tag : s.tags)
      if (tag != "O") types.insert(tag_type(tag));
  return types;
}

inline DatasetSummary summarize(const std::vector<TaggedSentence>& data) {
  DatasetSummary sum;
  sum.sentence_count = data.size();
  for (const auto& s : data) {
    sum.token_count += s.size();
    for (const auto& m : extract_mentions(s)) {
      sum.type_inventory.insert(m.type);
      ++sum.mentions_per_type[m.type];
    }
  }
  return sum;
}

namespace detail {

// Greedy seeded cover: shuffle, then add sentences that still contribute to
// an unmet per-type target. Overshoot per type is bounded by the largest
// per-sentence mention count, since a sentence is only taken while some
// type it contains is below target.
inline std::vector<TaggedSentence> greedy_mention_cover(const std::vector<TaggedSentence>& data,
                                                        const std::map<std::string, int>& targets,
                                                        std::uint64_t seed) {
  std::map<std::string, long> available;
  for (const auto& s : data)
    for (const auto& m : extract_mentions(s)) ++available[m.type];
  for (const auto& [type, target] : targets) {
    if (target > 0 && available[type] < target) {
      throw SamplingError("infeasible target for type '" + type + "': need " +
                          std::to_string(target) + ", corpus has " +
                          std::to_string(available[type]));
    }
  }

  bool any_positive = false;
  for (const auto& [type, target] : targets) any_positive |= target > 0;
  if (!any_positive) return {};

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::map<std::string, long> have;
  auto satisfied = [&] {
    for (const auto& [type, target] : targets)
      if (have[type] < target) return false;
    return true;
  };

  std::vector<std::size_t> chosen;
  for (std::size_t idx : order) {
    if (satisfied()) break;
    std::map<std::string, long> contrib;
    for (const auto& m : extract_mentions(data[idx])) ++contrib[m.type];
    bool useful = false;
    for (const auto& [type, c] : contrib) {
      auto it = targets.find(type);
      if (it != targets.end() && have[type] < it->second) useful = true;
    }
    if (!useful) continue;
    chosen.push_back(idx);
    for (const auto& [type, c] : contrib) have[type] += c;
  }

  std::sort(chosen.begin(), chosen.end());
  std::vector<TaggedSentence> out;
  out.reserve(chosen.size());
  for (std::size_t idx : chosen) out.push_back(data[idx]);
  return out;
}

}  // namespace detail

// Sample a subset with at least k mentions of every type ("at least K"
// reading; exact-K is unattainable because one sentence may carry several
// entities). Deterministic for a fixed (data order, seed).
inline std::vector<TaggedSentence> kshot_sample(const std::vector<TaggedSentence>& data,
                                                const KShotConfig& cfg) {
  if (cfg.k < 0) throw ConfigError("k must be >= 0");
  std::map<std::string, int> targets = cfg.per_type_target;
  if (targets.empty()) {
    for (const auto& type : type_inventory(data)) targets[type] = cfg.k;
  }
  return detail::greedy_mention_cover(data, targets, cfg.seed);
}

inline std::vector<TaggedSentence> cross_type_sample(const std::vector<TaggedSentence>& data,
                                                     const std::map<std::string, int>& targets,
                                                     std::uint64_t seed) {
  return detail::greedy_mention_cover(data, targets, seed);
}

}  // namespace entner
