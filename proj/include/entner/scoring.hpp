// Entailment scoring on top of the masked-LM backbone: verbalizer softmax,
// the PET cross-entropy and decoupled label losses, the label-conditioned
// MLM objective, and the scorer that renders instances (discrete or soft
// prompts) into backend inputs.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "entner/backend.hpp"
#include "entner/common.hpp"
#include "entner/instances.hpp"
#include "entner/nn.hpp"
#include "entner/prompting.hpp"

namespace entner {

struct BackendScores {
  Eigen::RowVectorXd mask_logits;
  std::optional<Eigen::MatrixXd> all_position_logits;
};

struct VerbalizerDistribution {
  double entail = 0.0;
  double contradict = 0.0;

  double prob(Answer a) const { return a == Answer::entail ? entail : contradict; }
};

struct ResolvedVerbalizer {
  int entail_id = -1;
  int contradict_id = -1;

  int id_for(Answer a) const { return a == Answer::entail ? entail_id : contradict_id; }
  int other_id(Answer a) const { return a == Answer::entail ? contradict_id : entail_id; }
};

// Both tokens must map to single vocabulary units; checked when the
// configuration is loaded, not at scoring time.
inline ResolvedVerbalizer resolve_verbalizer(const Verbalizer& v, const Vocab& vocab) {
  validate_verbalizer(v);
  ResolvedVerbalizer r;
  for (const auto* tok : {&v.entail_token, &v.contradict_token}) {
    if (tok->find(' ') != std::string::npos)
      throw ConfigError("verbalizer token is not a single unit: '" + *tok + "'");
    if (!vocab.contains(*tok))
      throw ConfigError("verbalizer token not in backend vocabulary: '" + *tok + "'");
  }
  r.entail_id = vocab.id(v.entail_token);
  r.contradict_id = vocab.id(v.contradict_token);
  return r;
}

// Softmax restricted to the two verbalizer logits.
inline VerbalizerDistribution verbalizer_softmax(const BackendScores& s,
                                                 const ResolvedVerbalizer& v) {
  const double ze = s.mask_logits(v.entail_id);
  const double zc = s.mask_logits(v.contradict_id);
  const double m = std::max(ze, zc);
  const double ee = std::exp(ze - m), ec = std::exp(zc - m);
  return {ee / (ee + ec), ec / (ee + ec)};
}

inline VerbalizerDistribution verbalizer_softmax(const BackendScores& s, const Verbalizer& v,
                                                 const Vocab& vocab) {
  return verbalizer_softmax(s, resolve_verbalizer(v, vocab));
}

inline double pet_loss(const VerbalizerDistribution& q, Answer gold) {
  return -std::log(std::max(q.prob(gold), 1e-300));
}

inline Eigen::ArrayXd full_softmax(const Eigen::RowVectorXd& logits) {
  Eigen::ArrayXd z = logits.transpose().array();
  z -= z.maxCoeff();
  Eigen::ArrayXd e = z.exp();
  return e / e.sum();
}

// -log p(gold) - log(1 - p(non-gold)) over the full-vocabulary softmax.
inline double decoupled_label_loss(const BackendScores& s, const ResolvedVerbalizer& v,
                                   Answer gold) {
  Eigen::ArrayXd p = full_softmax(s.mask_logits);
  const double pg = std::max(p(v.id_for(gold)), 1e-300);
  const double pn = std::min(p(v.other_id(gold)), 1.0 - 1e-12);
  return -std::log(pg) - std::log(1.0 - pn);
}

inline double decoupled_label_loss(const BackendScores& s, const Verbalizer& v, const Vocab& vocab,
                                   Answer gold) {
  return decoupled_label_loss(s, resolve_verbalizer(v, vocab), gold);
}

// Deterministic choice of positions to mask for label-conditioned MLM.
// `maskable` marks content positions; the count is floor(rate * content).
// The spec'd error path (nothing maskable) surfaces as skipped=true.
struct MlmMaskPlan {
  std::vector<int> positions;
  bool skipped = false;
};

inline MlmMaskPlan plan_label_conditioned_mlm(const std::vector<bool>& maskable, double mask_rate,
                                              std::uint64_t seed) {
  if (mask_rate <= 0.0 || mask_rate >= 1.0)
    throw ConfigError("mask_rate must lie strictly between 0 and 1");
  std::vector<int> content;
  for (std::size_t i = 0; i < maskable.size(); ++i)
    if (maskable[i]) content.push_back(static_cast<int>(i));
  const int n = static_cast<int>(std::floor(mask_rate * content.size()));
  MlmMaskPlan plan;
  if (n == 0) {
    plan.skipped = true;
    return plan;
  }
  std::mt19937_64 rng(seed);
  std::shuffle(content.begin(), content.end(), rng);
  content.resize(n);
  std::sort(content.begin(), content.end());
  plan.positions = std::move(content);
  return plan;
}

// Standalone form of the MLM objective, testable against any logits
// provider: substitutes mask tokens at the planned positions and averages
// recovery cross-entropy. `scores_fn` maps masked ids to L x V logits.
inline double label_conditioned_mlm_loss(
    const std::vector<int>& ids, const std::vector<bool>& maskable, int mask_id, double mask_rate,
    std::uint64_t seed, const std::function<Eigen::MatrixXd(const std::vector<int>&)>& scores_fn,
    bool* skipped = nullptr) {
  MlmMaskPlan plan = plan_label_conditioned_mlm(maskable, mask_rate, seed);
  if (skipped) *skipped = plan.skipped;
  if (plan.skipped) return 0.0;
  std::vector<int> masked = ids;
  for (int p : plan.positions) masked[p] = mask_id;
  Eigen::MatrixXd logits = scores_fn(masked);
  double total = 0.0;
  for (int p : plan.positions) {
    Eigen::ArrayXd z = logits.row(p).transpose().array();
    z -= z.maxCoeff();
    total += -(z(ids[p]) - std::log(z.exp().sum()));
  }
  return total / plan.positions.size();
}

enum class PromptMode { discrete, soft };
enum class PetNormalization { verbalizer_restricted, full_vocab };
enum class Objective { pet, adapet };

inline std::string to_string(PromptMode m) { return m == PromptMode::discrete ? "discrete" : "soft"; }
inline std::string to_string(Objective o) { return o == Objective::pet ? "pet" : "adapet"; }

struct ScorerOptions {
  PromptMode prompt_mode = PromptMode::discrete;
  CandidateMode candidate_mode = CandidateMode::word;
  int pattern_id = 1;
  Verbalizer verbalizer;
  PetNormalization pet_normalization = PetNormalization::verbalizer_restricted;
  SoftPromptSpec soft_spec;
  TypeNameMap type_names;
  std::string typed_form;  // empty selects the mode default
  std::string null_form;
  int max_seq_len = 256;
};

inline void to_json(nlohmann::json& j, const ScorerOptions& o) {
  j = {{"prompt_mode", to_string(o.prompt_mode)},
       {"candidate_mode", o.candidate_mode == CandidateMode::word ? "word" : "span"},
       {"pattern_id", o.pattern_id},
       {"verbalizer", {o.verbalizer.entail_token, o.verbalizer.contradict_token}},
       {"pet_normalization",
        o.pet_normalization == PetNormalization::verbalizer_restricted ? "verbalizer" : "full_vocab"},
       {"soft_slot_count", o.soft_spec.slot_count},
       {"soft_per_entity_type", o.soft_spec.per_entity_type},
       {"type_names", o.type_names.names()},
       {"typed_form", o.typed_form},
       {"null_form", o.null_form},
       {"max_seq_len", o.max_seq_len}};
}

inline void from_json(const nlohmann::json& j, ScorerOptions& o) {
  const std::string pm = j.at("prompt_mode").get<std::string>();
  if (pm != "discrete" && pm != "soft") throw ConfigError("unknown prompt_mode: " + pm);
  o.prompt_mode = pm == "soft" ? PromptMode::soft : PromptMode::discrete;
  const std::string cm = j.at("candidate_mode").get<std::string>();
  if (cm != "word" && cm != "span") throw ConfigError("unknown candidate_mode: " + cm);
  o.candidate_mode = cm == "span" ? CandidateMode::span : CandidateMode::word;
  j.at("pattern_id").get_to(o.pattern_id);
  o.verbalizer.entail_token = j.at("verbalizer")[0].get<std::string>();
  o.verbalizer.contradict_token = j.at("verbalizer")[1].get<std::string>();
  const std::string pn = j.at("pet_normalization").get<std::string>();
  o.pet_normalization =
      pn == "full_vocab" ? PetNormalization::full_vocab : PetNormalization::verbalizer_restricted;
  j.at("soft_slot_count").get_to(o.soft_spec.slot_count);
  j.at("soft_per_entity_type").get_to(o.soft_spec.per_entity_type);
  o.type_names = TypeNameMap(j.at("type_names").get<std::map<std::string, std::string>>());
  j.at("typed_form").get_to(o.typed_form);
  j.at("null_form").get_to(o.null_form);
  j.at("max_seq_len").get_to(o.max_seq_len);
}

// Word- or span-level entailment probability provider; the decoder only
// sees this surface. An empty type asks the null hypothesis.
class EntailmentScorer {
 public:
  virtual ~EntailmentScorer() = default;
  virtual double entail_probability(const std::vector<std::string>& tokens, std::size_t start,
                                    std::size_t end, const std::string& type_tag) = 0;
};

struct LossOptions {
  Objective objective = Objective::adapet;
  bool label_conditioning = true;
  double mlm_mask_rate = 0.15;
  std::uint64_t mlm_seed = 0;  // per-instance stream, supplied by the trainer
};

class MlmScorer : public EntailmentScorer {
 public:
  MlmScorer(MlmBackend& model, ScorerOptions opts, std::vector<std::string> type_tags)
      : model_(model), opts_(std::move(opts)), type_tags_(std::move(type_tags)) {
    templates_ = TemplateSet::defaults(opts_.candidate_mode);
    if (!opts_.typed_form.empty()) templates_.typed_form = opts_.typed_form;
    if (!opts_.null_form.empty()) templates_.null_form = opts_.null_form;
    pattern_ = pattern_by_id(opts_.pattern_id);
    verbalizer_ids_ = resolve_verbalizer(opts_.verbalizer, model_.vocab());
    std::sort(type_tags_.begin(), type_tags_.end());
    type_tags_.erase(std::unique(type_tags_.begin(), type_tags_.end()), type_tags_.end());
    if (opts_.prompt_mode == PromptMode::soft) init_soft_tables();
  }

  const ScorerOptions& options() const { return opts_; }
  const TemplateSet& templates() const { return templates_; }
  const PatternLayout& pattern() const { return pattern_; }
  const std::vector<std::string>& type_tags() const { return type_tags_; }
  std::size_t truncation_count() const { return truncations_; }

  // Input assembly for one instance, as stored (premise/hypothesis strings).
  MaskedInput render(const EntailmentInstance& inst) const {
    MaskedInput input;
    if (opts_.prompt_mode == PromptMode::discrete) {
      input = apply_pattern(pattern_, inst.premise, inst.hypothesis);
    } else {
      const HypothesisTemplate& tmpl = templates_.for_kind(inst.kind);
      const std::string word =
          is_null_kind(inst.kind) ? std::string() : opts_.type_names.word_for(inst.provenance.entity_type);
      input = build_soft_input(opts_.soft_spec, tmpl, pattern_, inst.premise,
                               inst.provenance.surface, word);
    }
    return input;
  }

  double score_instance(const EntailmentInstance& inst) {
    MaskedInput input = render(inst);
    return entail_from_input(input);
  }

  std::vector<double> score_batch(const std::vector<EntailmentInstance>& batch) {
    std::vector<double> out;
    out.reserve(batch.size());
    for (const auto& inst : batch) out.push_back(score_instance(inst));
    return out;
  }

  double entail_probability(const std::vector<std::string>& tokens, std::size_t start,
                            std::size_t end, const std::string& type_tag) override {
    if (start >= end || end > tokens.size()) throw std::invalid_argument("bad candidate span");
    std::vector<std::string> span(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                                  tokens.begin() + static_cast<std::ptrdiff_t>(end));
    const std::string candidate = join(span, " ");
    const bool null_hyp = type_tag.empty();
    const HypothesisTemplate& tmpl =
        null_hyp ? templates_.for_kind(TemplateKind::null_candidate)
                 : templates_.for_kind(TemplateKind::positive);
    const std::string word = null_hyp ? std::string() : opts_.type_names.word_for(type_tag);

    MaskedInput input;
    if (opts_.prompt_mode == PromptMode::discrete) {
      std::vector<std::string> hyp = detail::render_tokens(tmpl, candidate, word);
      input = detail::assemble_pattern(pattern_, hyp, tokens, detail::detokenize(hyp),
                                       detail::detokenize(tokens));
    } else {
      input = build_soft_input(opts_.soft_spec, tmpl, pattern_, tokens, candidate, word);
    }
    return entail_from_input(input);
  }

  BackendScores forward(const MaskedInput& in) {
    MaskedInput input = in;
    truncate_to_fit(input);
    SoftBinding binding = soft_binding(input);
    BackendScores s;
    s.mask_logits = model_.mask_logits(model_.vocab().encode(input.tokens),
                                       static_cast<int>(input.mask_pos),
                                       binding.positions.empty() ? nullptr : &binding);
    return s;
  }

  // Training-time loss graph for one instance. Returns the objective terms
  // summed; MLM conditioning adds a second forward over the label-filled,
  // content-masked input.
  nn::Node* build_loss(nn::Graph& g, const EntailmentInstance& inst, const LossOptions& lo,
                       std::mt19937_64& rng, bool* mlm_skipped = nullptr) {
    MaskedInput input = render(inst);
    truncate_to_fit(input);
    SoftBinding binding = soft_binding(input);
    const SoftBinding* bp = binding.positions.empty() ? nullptr : &binding;
    std::vector<int> ids = model_.vocab().encode(input.tokens);
    const int mask_row = static_cast<int>(input.mask_pos);
    const int gold = verbalizer_ids_.id_for(inst.answer);
    const int other = verbalizer_ids_.other_id(inst.answer);

    nn::Node* z = model_.logits(g, ids, bp, true, &rng);
    nn::Node* loss = nullptr;
    if (lo.objective == Objective::pet) {
      loss = opts_.pet_normalization == PetNormalization::verbalizer_restricted
                 ? g.pair_cross_entropy(z, mask_row, gold, other)
                 : g.rows_cross_entropy(z, {mask_row}, {gold});
    } else {
      loss = g.decoupled_pair_loss(z, mask_row, gold, other);
    }

    if (mlm_skipped) *mlm_skipped = true;
    if (lo.objective == Objective::adapet && lo.label_conditioning) {
      std::vector<int> filled = ids;
      filled[input.mask_pos] = gold;
      std::vector<bool> maskable = content_positions(input);
      MlmMaskPlan plan = plan_label_conditioned_mlm(maskable, lo.mlm_mask_rate, lo.mlm_seed);
      if (!plan.skipped) {
        if (mlm_skipped) *mlm_skipped = false;
        std::vector<int> targets;
        std::vector<int> masked = filled;
        for (int p : plan.positions) {
          targets.push_back(filled[p]);
          masked[p] = model_.vocab().mask_id;
        }
        nn::Node* z2 = model_.logits(g, masked, bp, true, &rng);
        loss = g.add(loss, g.rows_cross_entropy(z2, plan.positions, targets));
      }
    }
    return loss;
  }

  // Content positions for the MLM objective: natural tokens only, never
  // the answer slot, separators, or learnable slots.
  std::vector<bool> content_positions(const MaskedInput& input) const {
    std::vector<bool> maskable(input.tokens.size(), false);
    for (std::size_t i = 0; i < input.tokens.size(); ++i) {
      if (i == input.mask_pos) continue;
      if (!input.soft_slots.empty() && input.soft_slots[i] >= 0) continue;
      const std::string& t = input.tokens[i];
      if (t == kSepToken || t == kMaskToken || t == "[PAD]" || t == "[UNK]" || t == kOpenQuote ||
          t == kCloseQuote)
        continue;
      maskable[i] = true;
    }
    return maskable;
  }

  std::vector<nn::Parameter*> soft_parameters() { return model_.extra_parameters("soft:"); }

  std::vector<nn::Parameter*> trainable_parameters() {
    if (opts_.prompt_mode == PromptMode::soft) {
      // Soft mode tunes the slot embeddings and the backbone jointly.
      return model_.parameters(true);
    }
    return model_.parameters(false);
  }

 private:
  double entail_from_input(MaskedInput input) {
    truncate_to_fit(input);
    SoftBinding binding = soft_binding(input);
    BackendScores s;
    s.mask_logits = model_.mask_logits(model_.vocab().encode(input.tokens),
                                       static_cast<int>(input.mask_pos),
                                       binding.positions.empty() ? nullptr : &binding);
    return verbalizer_softmax(s, verbalizer_ids_).entail;
  }

  SoftBinding soft_binding(const MaskedInput& input) const {
    SoftBinding b;
    if (!input.is_soft()) return b;
    b.family = "soft:" + input.soft_family;
    for (std::size_t i = 0; i < input.soft_slots.size(); ++i) {
      if (input.soft_slots[i] >= 0) {
        b.positions.push_back(static_cast<int>(i));
        b.rows.push_back(input.soft_slots[i]);
      }
    }
    return b;
  }

  // Right-truncate the premise region to fit the sequence budget; the
  // hypothesis and mask always survive.
  void truncate_to_fit(MaskedInput& input) {
    const std::size_t limit = static_cast<std::size_t>(opts_.max_seq_len);
    if (input.tokens.size() <= limit) return;
    const std::size_t quote = pattern_.quoted ? 1 : 0;
    const std::size_t prem_begin = input.mask_pos + 2 + quote;
    const std::size_t prem_end = input.tokens.size() - 1 - quote;
    const std::size_t overflow = input.tokens.size() - limit;
    if (prem_end <= prem_begin || overflow > prem_end - prem_begin - 1)
      throw ConfigError("input cannot fit max sequence length even with premise truncation");
    input.tokens.erase(input.tokens.begin() + static_cast<std::ptrdiff_t>(prem_end - overflow),
                       input.tokens.begin() + static_cast<std::ptrdiff_t>(prem_end));
    if (!input.soft_slots.empty())
      input.soft_slots.erase(
          input.soft_slots.begin() + static_cast<std::ptrdiff_t>(prem_end - overflow),
          input.soft_slots.begin() + static_cast<std::ptrdiff_t>(prem_end));
    input.text = detail::detokenize(input.tokens);
    ++truncations_;
  }

  // One table per slot family, rows copied from the embeddings of the
  // template tokens they replace so an untrained soft scorer reproduces
  // discrete scores exactly.
  void init_soft_tables() {
    if (type_tags_.empty()) throw ConfigError("soft mode needs a known entity type inventory");
    std::vector<std::pair<HypothesisTemplate, std::string>> reps;
    reps.emplace_back(templates_.for_kind(TemplateKind::null_candidate), std::string());
    if (opts_.soft_spec.per_entity_type) {
      for (const auto& tag : type_tags_)
        reps.emplace_back(templates_.for_kind(TemplateKind::positive),
                          opts_.type_names.word_for(tag));
    } else {
      reps.emplace_back(templates_.for_kind(TemplateKind::positive),
                        opts_.type_names.word_for(type_tags_.front()));
    }
    for (const auto& [tmpl, word] : reps) {
      SoftPromptSpec natural = opts_.soft_spec;
      natural.slot_count = 0;
      MaskedInput probe = build_soft_input(natural, tmpl, pattern_, std::string("x"), "x", word);
      const std::string key = "soft:" + probe.soft_family;
      if (model_.has_extra(key)) continue;
      const int hidden = model_.config().hidden;
      const int natural_count = static_cast<int>(probe.slot_sources.size());
      const int rows = opts_.soft_spec.slot_count > 0 ? opts_.soft_spec.slot_count : natural_count;
      nn::Parameter& table = model_.extra(key, rows, hidden);
      if (rows == natural_count) {
        for (int k = 0; k < rows; ++k)
          table.value.row(k) =
              model_.core("tok_emb").value.row(model_.vocab().id(probe.slot_sources[k]));
      } else {
        std::mt19937_64 rng(model_.config().seed ^ std::hash<std::string>{}(key));
        nn::normal_init(table, 0.02, rng);
      }
    }
  }

  MlmBackend& model_;
  ScorerOptions opts_;
  std::vector<std::string> type_tags_;
  TemplateSet templates_;
  PatternLayout pattern_;
  ResolvedVerbalizer verbalizer_ids_;
  std::size_t truncations_ = 0;
};

}  // namespace entner
