// Fine-tuning loop for entailment instances, the token-classification
// baseline it is compared against, and the rich-to-low-resource transfer
// protocol. Dev-set early stopping uses entity F1 through the full decode
// path.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "entner/backend.hpp"
#include "entner/common.hpp"
#include "entner/corpus.hpp"
#include "entner/decoding.hpp"
#include "entner/evaluation.hpp"
#include "entner/instances.hpp"
#include "entner/scoring.hpp"

namespace entner {

struct TrainConfig {
  double learning_rate = 1e-5;
  double weight_decay = 0.01;
  int batch_size = 16;
  int max_steps = 7000;
  double warmup_ratio = 0.06;
  int grad_accum = 16;
  int max_seq_len = 256;
  double dropout = 0.1;
  std::uint64_t seed = 42;
  int eval_interval = 250;
  int patience = 0;  // evaluation rounds without improvement; 0 disables
  Objective objective = Objective::adapet;
  bool label_conditioning = true;
  double mlm_mask_rate = 0.15;

  static std::vector<double> learning_rate_grid() { return {1e-5, 2e-5, 3e-5, 4e-5, 5e-5}; }
  static std::vector<double> weight_decay_grid() { return {0.1, 0.01, 0.005, 0.001}; }
  static std::vector<int> batch_size_grid() { return {8, 16, 32}; }

  void validate() const {
    if (learning_rate <= 0 || weight_decay < 0 || batch_size <= 0 || max_steps <= 0 ||
        grad_accum <= 0 || max_seq_len <= 0 || eval_interval <= 0 || patience < 0)
      throw ConfigError("train config fields must be positive");
    if (warmup_ratio <= 0.0 || warmup_ratio >= 1.0)
      throw ConfigError("warmup_ratio must lie strictly between 0 and 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0,1)");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},
       {"max_steps", c.max_steps},
       {"warmup_ratio", c.warmup_ratio},
       {"grad_accum", c.grad_accum},
       {"max_seq_len", c.max_seq_len},
       {"dropout", c.dropout},
       {"seed", c.seed},
       {"eval_interval", c.eval_interval},
       {"patience", c.patience},
       {"objective", to_string(c.objective)},
       {"label_conditioning", c.label_conditioning},
       {"mlm_mask_rate", c.mlm_mask_rate}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.warmup_ratio = j.value("warmup_ratio", d.warmup_ratio);
  c.grad_accum = j.value("grad_accum", d.grad_accum);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.dropout = j.value("dropout", d.dropout);
  c.seed = j.value("seed", d.seed);
  c.eval_interval = j.value("eval_interval", d.eval_interval);
  c.patience = j.value("patience", d.patience);
  const std::string obj = j.value("objective", std::string("adapet"));
  if (obj != "pet" && obj != "adapet") throw ConfigError("unknown objective: " + obj);
  c.objective = obj == "pet" ? Objective::pet : Objective::adapet;
  c.label_conditioning = j.value("label_conditioning", d.label_conditioning);
  c.mlm_mask_rate = j.value("mlm_mask_rate", d.mlm_mask_rate);
}

struct EvalPoint {
  int step = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  double train_loss = 0.0;
};

struct RunRecord {
  nlohmann::json config_snapshot;
  nlohmann::json data_lineage;
  std::vector<EvalPoint> evals;
  int best_step = -1;
  double best_f1 = 0.0;
  std::string checkpoint_dir;
  double wall_clock_sec = 0.0;
  double selected_tau = -1.0;  // negative until a sweep ran
};

inline nlohmann::json run_record_to_json(const RunRecord& r) {
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& e : r.evals)
    evals.push_back({{"step", e.step},
                     {"precision", e.precision},
                     {"recall", e.recall},
                     {"f1", e.f1},
                     {"train_loss", e.train_loss}});
  return {{"config", r.config_snapshot}, {"data_lineage", r.data_lineage},
          {"evals", evals},              {"best_step", r.best_step},
          {"best_f1", r.best_f1},        {"checkpoint_dir", r.checkpoint_dir},
          {"wall_clock_sec", r.wall_clock_sec}, {"selected_tau", r.selected_tau}};
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.config_snapshot = j.value("config", nlohmann::json::object());
  r.data_lineage = j.value("data_lineage", nlohmann::json::object());
  for (const auto& e : j.value("evals", nlohmann::json::array()))
    r.evals.push_back({e.at("step").get<int>(), e.at("precision").get<double>(),
                       e.at("recall").get<double>(), e.at("f1").get<double>(),
                       e.at("train_loss").get<double>()});
  r.best_step = j.value("best_step", -1);
  r.best_f1 = j.value("best_f1", 0.0);
  r.checkpoint_dir = j.value("checkpoint_dir", std::string());
  r.wall_clock_sec = j.value("wall_clock_sec", 0.0);
  r.selected_tau = j.value("selected_tau", -1.0);
  return r;
}

inline EmissionFn emission_fn(MlmScorer& scorer, const std::vector<std::string>& types,
                              NullEmissionMode null_mode = NullEmissionMode::null_template) {
  return [&scorer, types, null_mode](const TaggedSentence& s) {
    return build_emissions(s.tokens, scorer, types, null_mode);
  };
}

inline EvalReport evaluate_corpus(MlmScorer& scorer, const std::vector<TaggedSentence>& sentences,
                                  const std::vector<std::string>& types, const TransitionModel& tm,
                                  const DecodeConfig& decode) {
  std::vector<std::vector<EntityMention>> gold, pred;
  gold.reserve(sentences.size());
  pred.reserve(sentences.size());
  for (const auto& s : sentences) {
    gold.push_back(extract_mentions(s));
    if (scorer.options().candidate_mode == CandidateMode::span) {
      pred.push_back(decode_spans(s.tokens, scorer, types));
    } else {
      EmissionMatrix em = build_emissions(s.tokens, scorer, types, decode.null_mode);
      pred.push_back(labels_to_mentions(viterbi(em, tm, decode), types, s.tokens));
    }
  }
  return score_predictions(gold, pred);
}

// Fine-tunes the scorer's parameters on entailment instances. Each step
// consumes grad_accum micro-batches of batch_size instances; gradients are
// scaled so accumulation matches one large batch exactly.
inline RunRecord train_entailment(MlmScorer& scorer, MlmBackend& model,
                                  std::vector<EntailmentInstance> instances,
                                  const TrainConfig& cfg,
                                  const std::vector<TaggedSentence>& dev,
                                  const std::vector<std::string>& types,
                                  const TransitionModel& tm, const DecodeConfig& decode,
                                  const std::string& checkpoint_dir = {},
                                  const std::function<void(const EvalPoint&)>& on_eval = nullptr) {
  if (instances.empty()) throw std::invalid_argument("no training instances");
  cfg.validate();
  model.set_dropout(cfg.dropout);
  const auto t0 = std::chrono::steady_clock::now();

  RunRecord record;
  record.config_snapshot = cfg;
  record.checkpoint_dir = checkpoint_dir;

  std::mt19937_64 rng(cfg.seed);
  nn::AdamW opt(cfg.weight_decay);
  std::vector<nn::Parameter*> params = scorer.trainable_parameters();

  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  auto next_instance = [&]() -> const EntailmentInstance& {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    return instances[order[cursor++]];
  };

  // Best checkpoint kept in memory; written to disk only when a directory
  // was supplied.
  std::vector<Eigen::MatrixXd> best_values;
  std::vector<nn::Parameter*> all_params = model.parameters(true);
  auto snapshot = [&] {
    best_values.clear();
    for (nn::Parameter* p : all_params) best_values.push_back(p->value);
  };
  auto restore = [&] {
    for (std::size_t i = 0; i < all_params.size(); ++i) all_params[i]->value = best_values[i];
  };

  const double scale = 1.0 / (static_cast<double>(cfg.batch_size) * cfg.grad_accum);
  int rounds_since_best = 0;
  bool stop = false;
  for (int step = 1; step <= cfg.max_steps && !stop; ++step) {
    opt.zero_grad(params);
    double step_loss = 0.0;
    for (int a = 0; a < cfg.grad_accum; ++a) {
      for (int b = 0; b < cfg.batch_size; ++b) {
        const EntailmentInstance& inst = next_instance();
        nn::Graph g(true);
        LossOptions lo;
        lo.objective = cfg.objective;
        lo.label_conditioning = cfg.label_conditioning;
        lo.mlm_mask_rate = cfg.mlm_mask_rate;
        lo.mlm_seed = rng();
        nn::Node* loss = scorer.build_loss(g, inst, lo, rng);
        g.backward(g.scale(loss, scale));
        step_loss += loss->value(0, 0) * scale;
      }
    }
    if (!std::isfinite(step_loss))
      throw std::runtime_error("non-finite training loss at step " + std::to_string(step) +
                               " (lr " + std::to_string(cfg.learning_rate) + ")");
    opt.step(params, nn::scheduled_lr(step, cfg.max_steps, cfg.warmup_ratio, cfg.learning_rate));

    if (step % cfg.eval_interval == 0 || step == cfg.max_steps) {
      // Checkpoint selection sweeps tau so a poorly chosen fixed tau cannot
      // hide a genuinely better model state. Span mode has no tau.
      EvalReport rep;
      double eval_tau = decode.tau;
      if (scorer.options().candidate_mode == CandidateMode::span) {
        rep = evaluate_corpus(scorer, dev, types, tm, decode);
      } else {
        TauSelection sel = sweep_tau(dev, emission_fn(scorer, types, decode.null_mode), tm,
                                     decode.grid);
        rep = sel.report;
        eval_tau = sel.tau;
      }
      EvalPoint pt{step, rep.precision, rep.recall, rep.f1, step_loss};
      record.evals.push_back(pt);
      if (on_eval) on_eval(pt);
      if (rep.f1 > record.best_f1 || record.best_step < 0) {
        record.best_f1 = rep.f1;
        record.best_step = step;
        record.selected_tau = eval_tau;
        snapshot();
        // The model currently holds the new best weights, so an interrupted
        // run can resume from the last improvement.
        if (!checkpoint_dir.empty()) model.save(checkpoint_dir);
        rounds_since_best = 0;
      } else if (cfg.patience > 0 && ++rounds_since_best >= cfg.patience) {
        stop = true;
      }
    }
  }

  if (!best_values.empty()) restore();
  if (!checkpoint_dir.empty()) model.save(checkpoint_dir);
  record.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return record;
}

// --- Eq. 1 style baseline: linear tag head over token representations ---

enum class Reduction { mean, sum };

// Token-level cross-entropy from per-token tag logits.
inline double baseline_loss(const Eigen::MatrixXd& token_logits, const std::vector<int>& gold_tags,
                            Reduction reduction = Reduction::mean) {
  if (static_cast<std::size_t>(token_logits.rows()) != gold_tags.size())
    throw std::invalid_argument("one tag per token representation required");
  double total = 0.0;
  for (Eigen::Index i = 0; i < token_logits.rows(); ++i) {
    Eigen::ArrayXd z = token_logits.row(i).transpose().array();
    z -= z.maxCoeff();
    total += -(z(gold_tags[static_cast<std::size_t>(i)]) - std::log(z.exp().sum()));
  }
  return reduction == Reduction::mean ? total / static_cast<double>(gold_tags.size()) : total;
}

// Backbone plus a freshly initialized linear BIO-tag classifier, trained
// with token-level cross-entropy. This is the comparison system; it has a
// domain-specific head, unlike the entailment route.
class BaselineTagger {
 public:
  BaselineTagger(MlmBackend& model, std::vector<std::string> types)
      : model_(model), types_(std::move(types)) {
    std::sort(types_.begin(), types_.end());
    types_.erase(std::unique(types_.begin(), types_.end()), types_.end());
    tagset_.emplace_back("O");
    for (const auto& t : types_) {
      tagset_.push_back("B-" + t);
      tagset_.push_back("I-" + t);
    }
    const int h = model_.config().hidden;
    const int y = static_cast<int>(tagset_.size());
    nn::Parameter& w = model_.extra("tagger:w", h, y);
    if (w.value.isZero(0.0)) {
      std::mt19937_64 rng(model_.config().seed + 1);
      nn::normal_init(w, 0.02, rng);
    }
    model_.extra("tagger:b", 1, y);
  }

  const std::vector<std::string>& tagset() const { return tagset_; }

  int tag_id(const std::string& tag) const {
    auto it = std::find(tagset_.begin(), tagset_.end(), tag);
    if (it == tagset_.end()) return 0;  // unknown types train as O
    return static_cast<int>(it - tagset_.begin());
  }

  nn::Node* sentence_loss(nn::Graph& g, const TaggedSentence& s, bool train,
                          std::mt19937_64* rng) {
    std::vector<int> ids = model_.vocab().encode(s.tokens);
    nn::Node* h = model_.encode(g, ids, nullptr, train, rng);
    nn::Node* logits =
        g.add_rowvec(g.matmul(h, g.param(model_.extra("tagger:w", model_.config().hidden,
                                                      static_cast<int>(tagset_.size())))),
                     g.param(model_.extra("tagger:b", 1, static_cast<int>(tagset_.size()))));
    std::vector<int> rows(s.tokens.size());
    std::iota(rows.begin(), rows.end(), 0);
    std::vector<int> gold;
    gold.reserve(s.tags.size());
    for (const auto& t : s.tags) gold.push_back(tag_id(t));
    return g.rows_cross_entropy(logits, rows, gold);
  }

  std::vector<std::string> predict(const std::vector<std::string>& tokens) {
    nn::Graph g(false);
    std::vector<int> ids = model_.vocab().encode(tokens);
    nn::Node* h = model_.encode(g, ids, nullptr, false, nullptr);
    nn::Node* logits =
        g.add_rowvec(g.matmul(h, g.param(model_.extra("tagger:w", model_.config().hidden,
                                                      static_cast<int>(tagset_.size())))),
                     g.param(model_.extra("tagger:b", 1, static_cast<int>(tagset_.size()))));
    std::vector<std::string> tags;
    tags.reserve(tokens.size());
    for (Eigen::Index i = 0; i < logits->value.rows(); ++i) {
      Eigen::Index arg = 0;
      logits->value.row(i).maxCoeff(&arg);
      tags.push_back(tagset_[static_cast<std::size_t>(arg)]);
    }
    repair_scheme(tags);
    return tags;
  }

  EvalReport evaluate(const std::vector<TaggedSentence>& sentences) {
    std::vector<std::vector<std::string>> pred;
    pred.reserve(sentences.size());
    for (const auto& s : sentences) pred.push_back(predict(s.tokens));
    return score_tagged(sentences, pred);
  }

  RunRecord train(const std::vector<TaggedSentence>& train_set,
                  const std::vector<TaggedSentence>& dev, const TrainConfig& cfg) {
    if (train_set.empty()) throw std::invalid_argument("no training sentences");
    cfg.validate();
    model_.set_dropout(cfg.dropout);
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord record;
    record.config_snapshot = cfg;

    std::mt19937_64 rng(cfg.seed);
    nn::AdamW opt(cfg.weight_decay);
    std::vector<nn::Parameter*> params = model_.parameters(false);
    for (nn::Parameter* p : model_.extra_parameters("tagger:")) params.push_back(p);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;
    auto next = [&]() -> const TaggedSentence& {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      return train_set[order[cursor++]];
    };

    std::vector<Eigen::MatrixXd> best_values;
    std::vector<nn::Parameter*> all_params = model_.parameters(true);
    const double scale = 1.0 / (static_cast<double>(cfg.batch_size) * cfg.grad_accum);
    int rounds_since_best = 0;
    for (int step = 1; step <= cfg.max_steps; ++step) {
      opt.zero_grad(params);
      double step_loss = 0.0;
      for (int a = 0; a < cfg.grad_accum; ++a) {
        for (int b = 0; b < cfg.batch_size; ++b) {
          const TaggedSentence& s = next();
          if (s.tokens.empty()) continue;
          nn::Graph g(true);
          nn::Node* loss = sentence_loss(g, s, true, &rng);
          g.backward(g.scale(loss, scale));
          step_loss += loss->value(0, 0) * scale;
        }
      }
      if (!std::isfinite(step_loss))
        throw std::runtime_error("non-finite baseline loss at step " + std::to_string(step));
      opt.step(params, nn::scheduled_lr(step, cfg.max_steps, cfg.warmup_ratio, cfg.learning_rate));
      if (step % cfg.eval_interval == 0 || step == cfg.max_steps) {
        EvalReport rep = evaluate(dev);
        record.evals.push_back({step, rep.precision, rep.recall, rep.f1, step_loss});
        if (rep.f1 > record.best_f1 || record.best_step < 0) {
          record.best_f1 = rep.f1;
          record.best_step = step;
          best_values.clear();
          for (nn::Parameter* p : all_params) best_values.push_back(p->value);
          rounds_since_best = 0;
        } else if (cfg.patience > 0 && ++rounds_since_best >= cfg.patience) {
          break;
        }
      }
    }
    if (!best_values.empty())
      for (std::size_t i = 0; i < all_params.size(); ++i) all_params[i]->value = best_values[i];
    record.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return record;
  }

 private:
  MlmBackend& model_;
  std::vector<std::string> types_;
  std::vector<std::string> tagset_;
};

// Rich-resource training followed by continued training on the low-resource
// split with every parameter carried over (the architecture has no
// type-specific head to reinitialize). Transitions are re-estimated on the
// low-resource training split; tau is swept on its dev set.
struct TransferResult {
  RunRecord rich;
  RunRecord low;
  double tau = 0.0;
  EvalReport test_report;
};

inline TransferResult transfer_pipeline(
    MlmScorer& scorer, MlmBackend& model, std::vector<EntailmentInstance> rich_instances,
    const std::vector<TaggedSentence>& rich_dev, const std::vector<std::string>& rich_types,
    const TransitionModel& rich_tm, std::vector<EntailmentInstance> low_instances,
    const std::vector<TaggedSentence>& low_train, const std::vector<TaggedSentence>& low_dev,
    const std::vector<TaggedSentence>& low_test, const std::vector<std::string>& low_types,
    const TrainConfig& rich_cfg, const TrainConfig& low_cfg, const DecodeConfig& decode,
    const std::string& checkpoint_dir = {}) {
  TransferResult out;
  out.rich = train_entailment(scorer, model, std::move(rich_instances), rich_cfg, rich_dev,
                              rich_types, rich_tm, decode);
  TransitionModel low_tm = estimate_transitions(low_train, low_types);
  out.low = train_entailment(scorer, model, std::move(low_instances), low_cfg, low_dev, low_types,
                             low_tm, decode, checkpoint_dir);
  out.tau = select_tau(low_dev, emission_fn(scorer, low_types, decode.null_mode), low_tm,
                       DecodeConfig{}.grid);
  out.low.selected_tau = out.tau;
  DecodeConfig final_decode = decode;
  final_decode.tau = out.tau;
  out.test_report = evaluate_corpus(scorer, low_test, low_types, low_tm, final_decode);
  return out;
}

}  // namespace entner
