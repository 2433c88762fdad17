#pragma once

// Shared plumbing between the CLI and the end-to-end tests: toggle-aware
// instance building, the train / tau-sweep / test cycle, and a pinned
// small-scale synthetic setup with a cached backbone.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "entner/config.hpp"
#include "entner/evaluation.hpp"
#include "entner/synthetic.hpp"
#include "entner/training.hpp"

namespace entner {

inline bool toggles_drop_kind(const std::set<AblationToggle>& toggles, TemplateKind kind) {
  switch (kind) {
    // Dropping the null label removes every instance rendered with the null
    // template, on both entity and non-entity candidates.
    case TemplateKind::null_candidate:
    case TemplateKind::null_other:
      return toggles.count(AblationToggle::drop_null_negatives) > 0;
    case TemplateKind::false_positive:
      return toggles.count(AblationToggle::drop_fp_negatives) > 0;
    case TemplateKind::non_entity:
      return toggles.count(AblationToggle::drop_nonent_negatives) > 0;
    default:
      return false;
  }
}

inline std::vector<EntailmentInstance> filter_instances(std::vector<EntailmentInstance> instances,
                                                        const std::set<AblationToggle>& toggles) {
  instances.erase(std::remove_if(instances.begin(), instances.end(),
                                 [&](const EntailmentInstance& i) {
                                   return toggles_drop_kind(toggles, i.kind);
                                 }),
                  instances.end());
  return instances;
}

inline void apply_toggles(const std::set<AblationToggle>& toggles, RunConfig& cfg) {
  if (toggles.count(AblationToggle::disable_label_conditioning))
    cfg.train.label_conditioning = false;
  if (toggles.count(AblationToggle::soft_mode)) cfg.scorer.prompt_mode = PromptMode::soft;
  if (toggles.count(AblationToggle::discrete_mode)) cfg.scorer.prompt_mode = PromptMode::discrete;
}

// Factory whose templates and pattern agree with what the scorer will render.
inline InstanceFactory factory_for(const RunConfig& cfg) {
  InstanceFactory fac;
  fac.templates = TemplateSet::defaults(cfg.scorer.candidate_mode);
  if (!cfg.scorer.typed_form.empty()) fac.templates.typed_form = cfg.scorer.typed_form;
  if (!cfg.scorer.null_form.empty()) fac.templates.null_form = cfg.scorer.null_form;
  fac.pattern = pattern_by_id(cfg.scorer.pattern_id);
  fac.type_names = cfg.scorer.type_names;
  fac.max_span_length = cfg.max_span_length;
  return fac;
}

inline std::vector<TaggedSentence> effective_train_split(const RunConfig& cfg,
                                                         const std::vector<TaggedSentence>& pool) {
  if (cfg.kshot_k <= 0 && cfg.per_type_target.empty()) return pool;
  KShotConfig kc;
  kc.k = cfg.kshot_k;
  kc.seed = cfg.kshot_seed;
  kc.per_type_target = cfg.per_type_target;
  return kshot_sample(pool, kc);
}

inline std::vector<EntailmentInstance> build_pipeline_instances(
    const RunConfig& cfg, const std::vector<TaggedSentence>& train_split,
    const std::set<AblationToggle>& toggles = {}) {
  return filter_instances(factory_for(cfg).build_all(train_split, cfg.sampling), toggles);
}

struct PipelineResult {
  RunRecord record;
  double tau = 0.0;
  EvalReport dev_report;
  EvalReport test_report;
  std::size_t instance_count = 0;
  std::size_t train_sentence_count = 0;
  std::vector<std::string> types;
  TransitionModel transitions;
};

// Full cycle on pre-loaded splits: K-shot sampling, instance building,
// fine-tuning, tau sweep on dev, final test evaluation (skipped when the
// test split is empty). Fine-tuning mutates the model, so callers run each
// configuration on its own copy.
inline PipelineResult run_pipeline(MlmBackend& model, const RunConfig& cfg,
                                   const std::vector<TaggedSentence>& train_pool,
                                   const std::vector<TaggedSentence>& dev,
                                   const std::vector<TaggedSentence>& test,
                                   const std::set<AblationToggle>& toggles = {},
                                   const std::string& checkpoint_dir = {},
                                   const std::function<void(const EvalPoint&)>& on_eval = nullptr) {
  RunConfig run = cfg;
  apply_toggles(toggles, run);
  run.train.validate();
  run.decode.validate();

  std::vector<TaggedSentence> train_split = effective_train_split(run, train_pool);
  std::set<std::string> inventory = type_inventory(train_split);
  for (const auto& t : type_inventory(dev)) inventory.insert(t);
  std::vector<std::string> types(inventory.begin(), inventory.end());
  if (types.empty()) throw ConfigError("no entity types present in the training or dev split");

  std::vector<EntailmentInstance> instances = build_pipeline_instances(run, train_split, toggles);

  MlmScorer scorer(model, run.scorer, types);
  TransitionModel tm = estimate_transitions(train_split, types);

  PipelineResult out;
  out.train_sentence_count = train_split.size();
  out.instance_count = instances.size();
  out.types = types;
  out.transitions = tm;
  out.record = train_entailment(scorer, model, std::move(instances), run.train, dev, types, tm,
                                run.decode, checkpoint_dir, on_eval);

  DecodeConfig final_decode = run.decode;
  if (run.scorer.candidate_mode == CandidateMode::word) {
    TauSelection sel =
        sweep_tau(dev, emission_fn(scorer, types, run.decode.null_mode), tm, run.decode.grid);
    out.tau = sel.tau;
    out.dev_report = sel.report;
    out.record.selected_tau = sel.tau;
    final_decode.tau = sel.tau;
  } else {
    out.tau = run.decode.tau;
    out.dev_report = evaluate_corpus(scorer, dev, types, tm, final_decode);
  }
  if (!test.empty()) out.test_report = evaluate_corpus(scorer, test, types, tm, final_decode);
  return out;
}

struct BaselineOutcome {
  RunRecord record;
  EvalReport test_report;
};

inline BaselineOutcome run_baseline(MlmBackend& model, const TrainConfig& cfg,
                                    const std::vector<TaggedSentence>& train_split,
                                    const std::vector<TaggedSentence>& dev,
                                    const std::vector<TaggedSentence>& test,
                                    const std::vector<std::string>& types) {
  BaselineTagger tagger(model, types);
  BaselineOutcome out;
  out.record = tagger.train(train_split, dev, cfg);
  out.test_report = tagger.evaluate(test);
  return out;
}

// Pinned small-scale configuration: 4-type synthetic corpus, one shared
// pretrained backbone, K=10 fine-tuning runs that finish in about a minute
// each on a single CPU core.
namespace smoke {

struct Dataset {
  std::vector<TaggedSentence> pool;  // training pool, K-shot sampled per seed
  std::vector<TaggedSentence> dev;
  std::vector<TaggedSentence> test;
  std::vector<std::string> types;
};

inline Dataset dataset() {
  Dataset d;
  d.pool = synth::make_corpus(200, 1);
  d.dev = synth::make_corpus(60, 2);
  d.test = synth::make_corpus(60, 3);
  d.types = synth::type_inventory();
  return d;
}

// Tokens the prompts and verbalizers need that plain synthetic text may not
// contain; added so none of them lands on [UNK].
inline std::vector<std::string> vocab_extras() {
  return {"yes", "no",  "true", "false",  "is",       "the",    "part",
          "of",  "a",   "an",   "not",    "name",     "entity", "location",
          "person", "organization", "miscellaneous", "x"};
}

inline MlmConfig backbone_config() {
  MlmConfig mc;
  mc.hidden = 64;
  mc.layers = 2;
  mc.heads = 4;
  mc.ffn = 128;
  mc.max_seq = 64;
  mc.dropout = 0.1;
  mc.seed = 1000;
  return mc;
}

inline PretrainConfig pretrain_config() {
  PretrainConfig pc;
  pc.steps = 8000;
  pc.batch = 8;
  pc.lr = 5e-4;
  pc.mask_rate = 0.3;
  pc.seed = 1000;
  return pc;
}

inline MlmBackend pretrain_backbone(const std::function<void(int, double)>& progress = nullptr) {
  auto text = synth::make_pretrain_text(12000, 7);
  Vocab vocab = Vocab::build(text, vocab_extras());
  MlmBackend model(vocab, backbone_config());
  pretrain_mlm(model, text, pretrain_config(), progress);
  return model;
}

// Backbone checkpoint cache: explicit directory first, then ENTNER_CACHE_DIR,
// otherwise pretrain in memory. A stale or unreadable cache entry is
// retrained and overwritten rather than reported as an error.
inline MlmBackend shared_backbone(std::string cache_dir = {},
                                  const std::function<void(int, double)>& progress = nullptr) {
  if (cache_dir.empty())
    if (const char* env = std::getenv("ENTNER_CACHE_DIR")) cache_dir = env;
  if (cache_dir.empty()) return pretrain_backbone(progress);
  namespace fs = std::filesystem;
  const fs::path slot = fs::path(cache_dir) / "smoke-backbone-h64-l2-seed1000";
  if (fs::exists(slot / "config.json") && fs::exists(slot / "weights.bin")) {
    try {
      return MlmBackend::load(slot.string());
    } catch (const std::exception&) {
    }
  }
  MlmBackend model = pretrain_backbone(progress);
  model.save(slot.string());
  return model;
}

inline RunConfig run_config(std::uint64_t seed) {
  RunConfig rc;
  rc.kshot_k = 10;
  rc.kshot_seed = seed;
  rc.scorer.max_seq_len = 64;
  rc.sampling.seed = seed + 7;
  rc.train.objective = Objective::pet;
  rc.train.learning_rate = 1.2e-3;
  rc.train.batch_size = 16;
  rc.train.grad_accum = 8;
  rc.train.max_steps = 500;
  rc.train.dropout = 0.0;
  rc.train.eval_interval = 50;
  rc.train.max_seq_len = 64;
  rc.train.seed = seed;
  return rc;
}

inline TrainConfig baseline_config(std::uint64_t seed) {
  TrainConfig tc;
  tc.learning_rate = 1e-5;
  tc.batch_size = 32;
  tc.grad_accum = 1;
  tc.max_steps = 500;
  tc.eval_interval = 100;
  tc.max_seq_len = 64;
  tc.seed = seed;
  return tc;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  PipelineResult entail;
  BaselineOutcome baseline;
};

inline SeedOutcome run_seed(const MlmBackend& backbone, const Dataset& data, std::uint64_t seed,
                            const std::set<AblationToggle>& toggles = {},
                            bool with_baseline = true) {
  SeedOutcome out;
  out.seed = seed;
  RunConfig rc = run_config(seed);
  {
    MlmBackend model = backbone;
    out.entail = run_pipeline(model, rc, data.pool, data.dev, data.test, toggles);
  }
  if (with_baseline) {
    MlmBackend model = backbone;
    out.baseline = run_baseline(model, baseline_config(seed),
                                effective_train_split(rc, data.pool), data.dev, data.test,
                                data.types);
  }
  return out;
}

// Runner for ablation plans over one shared backbone. The returned closure
// holds references; keep backbone and data alive while the plan runs.
inline CellRunner cell_runner(const MlmBackend& backbone, const Dataset& data) {
  return [&backbone, &data](const AblationCell& cell) {
    RunConfig rc = run_config(cell.seed);
    rc.scorer.pattern_id = cell.pattern_id;
    if (cell.k > 0) rc.kshot_k = cell.k;
    MlmBackend model = backbone;
    PipelineResult res = run_pipeline(model, rc, data.pool, data.dev, data.test, cell.toggles);
    CellResult out;
    out.f1 = res.test_report.f1;
    out.learning_curve.reserve(res.record.evals.size());
    for (const auto& e : res.record.evals) out.learning_curve.emplace_back(e.step, e.f1);
    return out;
  };
}

}  // namespace smoke
}  // namespace entner
