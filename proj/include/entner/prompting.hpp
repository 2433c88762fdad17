// Hypothesis templates, input patterns, verbalizers, and soft-prompt slot
// construction. Templates render entity-type-specific hypotheses; patterns
// wrap premise + hypothesis into a single masked input stream.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "entner/common.hpp"

namespace entner {

enum class TemplateKind { positive, false_positive, non_entity, null_candidate, null_other };
enum class Answer { entail, contradict };

inline const char* to_string(TemplateKind k) {
  switch (k) {
    case TemplateKind::positive: return "positive";
    case TemplateKind::false_positive: return "false_positive";
    case TemplateKind::non_entity: return "non_entity";
    case TemplateKind::null_candidate: return "null_candidate";
    case TemplateKind::null_other: return "null_other";
  }
  return "?";
}

inline const char* to_string(Answer a) { return a == Answer::entail ? "entail" : "contradict"; }

// Answer polarity per template kind: positive/null_other assert something
// true of the sentence, the three negative kinds assert something false.
inline Answer answer_for_kind(TemplateKind k) {
  switch (k) {
    case TemplateKind::positive:
    case TemplateKind::null_other:
      return Answer::entail;
    default:
      return Answer::contradict;
  }
}

inline bool is_null_kind(TemplateKind k) {
  return k == TemplateKind::null_candidate || k == TemplateKind::null_other;
}

enum class CandidateMode { word, span };

struct HypothesisTemplate {
  TemplateKind kind = TemplateKind::positive;
  // Token pattern with <candidate> and (unless a null kind) <entity_type>.
  std::vector<std::string> pattern_tokens;
  Answer gold_answer = Answer::entail;
};

namespace detail {

inline bool attaches_left(const std::string& tok) {
  return tok == "." || tok == "," || tok == "?" || tok == "!" || tok == ";" || tok == ":";
}

// Join tokens with spaces, attaching sentence punctuation to the previous
// token ("entity" + "." -> "entity.").
inline std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i && !attaches_left(tokens[i])) out += ' ';
    out += tokens[i];
  }
  return out;
}

// Whitespace split; a sentence-final attached punctuation mark becomes its
// own token so "entity." and "entity" share one vocabulary entry.
inline std::vector<std::string> tokenize_segment(const std::string& text) {
  std::vector<std::string> toks = split_ws(text);
  while (!toks.empty()) {
    std::string& last = toks.back();
    if (last.size() > 1 && attaches_left(std::string(1, last.back()))) {
      char p = last.back();
      last.pop_back();
      toks.emplace_back(1, p);
    } else {
      break;
    }
  }
  return toks;
}

inline void validate_template(const HypothesisTemplate& t) {
  int cand = 0, type = 0;
  for (const auto& tok : t.pattern_tokens) {
    if (tok == "<candidate>") ++cand;
    if (tok == "<entity_type>") ++type;
  }
  if (cand != 1) throw ConfigError("template must contain <candidate> exactly once");
  int want_type = is_null_kind(t.kind) ? 0 : 1;
  if (type != want_type) {
    throw ConfigError(std::string("template for kind '") + to_string(t.kind) +
                      (want_type ? "' must contain <entity_type> exactly once"
                                 : "' must not contain <entity_type>"));
  }
}

}  // namespace detail

inline HypothesisTemplate make_template(TemplateKind kind, const std::string& text_form) {
  HypothesisTemplate t;
  t.kind = kind;
  t.pattern_tokens = detail::tokenize_segment(text_form);
  t.gold_answer = answer_for_kind(kind);
  detail::validate_template(t);
  return t;
}

// The manually crafted discrete templates. Word mode phrases membership
// ("is the part of a"), span mode asserts the whole span ("is an"). The
// null template's "name entity" wording is intentional.
struct TemplateSet {
  CandidateMode mode = CandidateMode::word;
  std::string typed_form;
  std::string null_form = "<candidate> is not a name entity.";

  static TemplateSet defaults(CandidateMode mode) {
    TemplateSet s;
    s.mode = mode;
    s.typed_form = mode == CandidateMode::word
                       ? "<candidate> is the part of a <entity_type> entity."
                       : "<candidate> is an <entity_type> entity.";
    return s;
  }

  HypothesisTemplate for_kind(TemplateKind kind) const {
    return make_template(kind, is_null_kind(kind) ? null_form : typed_form);
  }
};

namespace detail {

enum class TokenOrigin { fixed, candidate, entity_type };

inline std::vector<std::string> render_tokens(const HypothesisTemplate& t,
                                              const std::string& candidate,
                                              const std::string& entity_type_word,
                                              std::vector<TokenOrigin>* origins = nullptr) {
  if (candidate.empty()) throw std::invalid_argument("empty candidate");
  if (!is_null_kind(t.kind) && entity_type_word.empty()) {
    throw std::invalid_argument(std::string("kind '") + to_string(t.kind) +
                                "' requires an entity type");
  }
  std::vector<std::string> out;
  auto push = [&](const std::string& tok, TokenOrigin o) {
    out.push_back(tok);
    if (origins) origins->push_back(o);
  };
  for (const auto& tok : t.pattern_tokens) {
    if (tok == "<candidate>") {
      for (auto& c : split_ws(candidate)) push(c, TokenOrigin::candidate);
    } else if (tok == "<entity_type>") {
      for (auto& w : split_ws(entity_type_word)) push(w, TokenOrigin::entity_type);
    } else {
      push(tok, TokenOrigin::fixed);
    }
  }
  return out;
}

}  // namespace detail

inline std::vector<std::string> render_hypothesis_tokens(const HypothesisTemplate& t,
                                                         const std::string& candidate,
                                                         const std::string& entity_type_word) {
  return detail::render_tokens(t, candidate, entity_type_word);
}

inline std::string render_hypothesis(const HypothesisTemplate& t, const std::string& candidate,
                                     const std::string& entity_type_word = {}) {
  return detail::detokenize(render_hypothesis_tokens(t, candidate, entity_type_word));
}

// Tag symbols render as natural words inside hypotheses ("LOC" -> "location").
class TypeNameMap {
 public:
  TypeNameMap()
      : names_{{"LOC", "location"},
               {"PER", "person"},
               {"ORG", "organization"},
               {"MISC", "miscellaneous"}} {}

  explicit TypeNameMap(std::map<std::string, std::string> names) : names_(std::move(names)) {}

  std::string word_for(const std::string& type) const {
    auto it = names_.find(type);
    if (it != names_.end()) return it->second;
    std::string lower = type;
    for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return lower;
  }

  void set(const std::string& type, const std::string& word) { names_[type] = word; }

  const std::map<std::string, std::string>& names() const { return names_; }

 private:
  std::map<std::string, std::string> names_;
};

// One of the four input arrangements. Patterns differ only in quoting and
// in the punctuation after the mask.
struct PatternLayout {
  int id = 1;
  bool quoted = false;
  std::string mask_punct = ",";
};

inline PatternLayout pattern_by_id(int id) {
  switch (id) {
    case 1: return {1, false, ","};
    case 2: return {2, true, ","};
    case 3: return {3, false, "."};
    case 4: return {4, true, "."};
    default: throw ConfigError("pattern id must be 1..4, got " + std::to_string(id));
  }
}

constexpr const char* kMaskToken = "[MASK]";
constexpr const char* kSepToken = "</s>";
constexpr const char* kOpenQuote = "``";
constexpr const char* kCloseQuote = "''";
constexpr const char* kSoftPrefix = "[SOFT:";

// A token stream with one marked mask position. `text` is the exact layout
// string; `tokens` is the same content as backend-ready units. For soft
// inputs, soft_slots[i] >= 0 marks position i as learnable slot k of
// `soft_family`, and slot_sources lists the discrete tokens the slots
// replaced (empty when the slot count was overridden).
struct MaskedInput {
  std::vector<std::string> tokens;
  std::size_t mask_pos = 0;
  std::string text;
  std::vector<int> soft_slots;
  std::string soft_family;
  std::vector<std::string> slot_sources;

  bool is_soft() const { return !soft_family.empty(); }
};

namespace detail {

inline MaskedInput assemble_pattern(const PatternLayout& p,
                                    const std::vector<std::string>& hyp_tokens,
                                    const std::vector<std::string>& prem_tokens,
                                    const std::string& hypothesis, const std::string& premise) {
  MaskedInput out;
  if (p.quoted) out.tokens.push_back(kOpenQuote);
  out.tokens.insert(out.tokens.end(), hyp_tokens.begin(), hyp_tokens.end());
  if (p.quoted) out.tokens.push_back(kCloseQuote);
  out.tokens.push_back("?");
  out.tokens.push_back(kSepToken);
  out.tokens.push_back(kSepToken);
  out.mask_pos = out.tokens.size();
  out.tokens.push_back(kMaskToken);
  out.tokens.push_back(p.mask_punct);
  if (p.quoted) out.tokens.push_back(kOpenQuote);
  out.tokens.insert(out.tokens.end(), prem_tokens.begin(), prem_tokens.end());
  if (p.quoted) out.tokens.push_back(kCloseQuote);
  out.tokens.push_back(kSepToken);

  const std::string hq = p.quoted ? std::string(kOpenQuote) + " " + hypothesis + " " + kCloseQuote
                                  : hypothesis;
  const std::string pq = p.quoted ? std::string(kOpenQuote) + " " + premise + " " + kCloseQuote
                                  : premise;
  out.text = hq + " ? " + kSepToken + kSepToken + " " + kMaskToken + p.mask_punct + " " + pq +
             " " + kSepToken;
  return out;
}

}  // namespace detail

inline MaskedInput apply_pattern(const PatternLayout& p, const std::string& premise,
                                 const std::string& hypothesis) {
  if (premise.empty() || hypothesis.empty()) {
    throw std::invalid_argument("premise and hypothesis must be non-empty");
  }
  return detail::assemble_pattern(p, detail::tokenize_segment(hypothesis),
                                  detail::tokenize_segment(premise), hypothesis, premise);
}

struct SoftPromptSpec {
  int slot_count = 0;          // 0 derives the count from the replaced template tokens
  bool per_entity_type = false;
};

namespace detail {

inline std::string slot_token(const std::string& family, int k) {
  return kSoftPrefix + family + ":" + std::to_string(k) + "]";
}

inline void check_no_reserved(const std::vector<std::string>& tokens) {
  for (const auto& t : tokens) {
    if (t.rfind(kSoftPrefix, 0) == 0) {
      throw ConfigError("input token '" + t + "' collides with reserved slot symbols");
    }
  }
}

}  // namespace detail

// Soft-prompt family for a template: per-type families get disjoint slots
// (the type word is absorbed into the family); shared families keep the
// type word as a natural token.
inline std::string soft_family_name(TemplateKind kind, bool per_entity_type,
                                    const std::string& type_word) {
  std::string base = is_null_kind(kind) ? "null" : "typed";
  if (is_null_kind(kind)) return base;
  return per_entity_type ? base + ":" + type_word : base + ":*";
}

// Builds the pattern-assembled input with the template's fixed tokens (and
// the hypothesis-side pattern glue before the mask) replaced in place by
// learnable slot markers. Candidate tokens always stay natural; the type
// word stays natural for shared families. In-place substitution keeps
// sequence length and positions identical to the discrete input, so slots
// initialized from the replaced tokens reproduce discrete scores.
inline MaskedInput build_soft_input(const SoftPromptSpec& spec, const HypothesisTemplate& tmpl,
                                    const PatternLayout& pattern,
                                    const std::vector<std::string>& premise_tokens,
                                    const std::string& candidate,
                                    const std::string& type_word = {}) {
  if (spec.slot_count < 0) throw ConfigError("slot_count must be >= 0");
  detail::check_no_reserved(premise_tokens);
  detail::check_no_reserved(detail::tokenize_segment(candidate));

  std::vector<detail::TokenOrigin> origins;
  std::vector<std::string> hyp_tokens = detail::render_tokens(tmpl, candidate, type_word, &origins);
  MaskedInput input =
      detail::assemble_pattern(pattern, hyp_tokens, premise_tokens,
                               detail::detokenize(hyp_tokens), detail::detokenize(premise_tokens));
  input.soft_family = soft_family_name(tmpl.kind, spec.per_entity_type, type_word);
  input.soft_slots.assign(input.tokens.size(), -1);

  // Pre-mask region layout: [``] hyp_tokens [''] ? </s> </s>. Candidate
  // tokens stay natural, as does the type word for shared families.
  std::vector<bool> kept(input.mask_pos, false);
  const std::size_t hyp_start = pattern.quoted ? 1 : 0;
  for (std::size_t i = 0; i < hyp_tokens.size(); ++i) {
    const bool keep = origins[i] == detail::TokenOrigin::candidate ||
                      (origins[i] == detail::TokenOrigin::entity_type && !spec.per_entity_type);
    kept[hyp_start + i] = keep;
  }

  std::vector<std::size_t> replace_pos;
  for (std::size_t i = 0; i < input.mask_pos; ++i)
    if (!kept[i]) replace_pos.push_back(i);

  if (spec.slot_count == 0 || spec.slot_count == static_cast<int>(replace_pos.size())) {
    // Derived count: substitute in place and remember the replaced tokens.
    for (std::size_t k = 0; k < replace_pos.size(); ++k) {
      std::size_t i = replace_pos[k];
      input.slot_sources.push_back(input.tokens[i]);
      input.tokens[i] = detail::slot_token(input.soft_family, static_cast<int>(k));
      input.soft_slots[i] = static_cast<int>(k);
    }
    return input;
  }

  // Overridden count: rebuild the pre-mask region as candidate (+ kept type
  // word) followed by exactly slot_count markers.
  std::vector<std::string> head;
  for (std::size_t i = 0; i < input.mask_pos; ++i)
    if (kept[i]) head.push_back(input.tokens[i]);
  std::vector<std::string> tokens = head;
  std::vector<int> slots(head.size(), -1);
  for (int k = 0; k < spec.slot_count; ++k) {
    tokens.push_back(detail::slot_token(input.soft_family, k));
    slots.push_back(k);
  }
  std::size_t mask_pos = tokens.size();
  for (std::size_t i = input.mask_pos; i < input.tokens.size(); ++i) {
    tokens.push_back(input.tokens[i]);
    slots.push_back(-1);
  }
  input.tokens = std::move(tokens);
  input.soft_slots = std::move(slots);
  input.mask_pos = mask_pos;
  input.slot_sources.clear();
  input.text = detail::detokenize(input.tokens);
  return input;
}

inline MaskedInput build_soft_input(const SoftPromptSpec& spec, const HypothesisTemplate& tmpl,
                                    const PatternLayout& pattern, const std::string& premise,
                                    const std::string& candidate,
                                    const std::string& type_word = {}) {
  return build_soft_input(spec, tmpl, pattern, detail::tokenize_segment(premise), candidate,
                          type_word);
}

// Label -> answer-token mapping. Both tokens must be distinct; the backend
// checks at configuration load that each maps to a single vocabulary unit.
struct Verbalizer {
  std::string entail_token = "yes";
  std::string contradict_token = "no";

  const std::string& token_for(Answer a) const {
    return a == Answer::entail ? entail_token : contradict_token;
  }
};

inline Verbalizer make_verbalizer(const std::string& name) {
  if (name == "yes_no") return {"yes", "no"};
  if (name == "true_false") return {"true", "false"};
  throw ConfigError("unknown verbalizer '" + name + "' (expected yes_no or true_false)");
}

inline void validate_verbalizer(const Verbalizer& v) {
  if (v.entail_token.empty() || v.contradict_token.empty() ||
      v.entail_token == v.contradict_token) {
    throw ConfigError("verbalizer tokens must be distinct and non-empty");
  }
}

}  // namespace entner
