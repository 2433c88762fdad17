#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "entner/training.hpp"
#include "test_util.hpp"

using namespace entner;

namespace {

MlmConfig train_backbone_config() {
  MlmConfig c;
  c.hidden = 16;
  c.layers = 1;
  c.heads = 2;
  c.ffn = 24;
  c.max_seq = 48;
  c.dropout = 0.0;
  c.seed = 5;
  return c;
}

std::vector<TaggedSentence> train_corpus() {
  return {
      {{"anna", "works", "here"}, {"B-PER", "O", "O"}},
      {{"brinport", "is", "north"}, {"B-LOC", "O", "O"}},
      {{"dmitri", "visits", "brinport"}, {"B-PER", "O", "B-LOC"}},
      {{"rivers", "flow"}, {"O", "O"}},
  };
}

MlmBackend make_backend() {
  std::vector<std::vector<std::string>> text;
  for (const auto& s : train_corpus()) text.push_back(s.tokens);
  Vocab v = Vocab::build(text, {"yes", "no", "is", "the", "part", "of", "a", "an", "not", "name",
                                "entity", "person", "location"});
  return MlmBackend(v, train_backbone_config());
}

TrainConfig quick_train_config() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.batch_size = 4;
  cfg.grad_accum = 2;
  cfg.max_steps = 1;
  cfg.eval_interval = 1;
  cfg.dropout = 0.0;
  cfg.max_seq_len = 48;
  cfg.seed = 11;
  return cfg;
}

struct RunOutput {
  RunRecord record;
  std::vector<Eigen::MatrixXd> params;
};

RunOutput run_once(const TrainConfig& cfg) {
  MlmBackend model = make_backend();
  ScorerOptions so;
  so.max_seq_len = cfg.max_seq_len;
  std::vector<std::string> types = {"LOC", "PER"};
  MlmScorer scorer(model, so, types);
  auto train = train_corpus();
  InstanceFactory fac;
  SamplingConfig sc;
  sc.seed = 3;
  auto instances = fac.build_all(train, sc);
  TransitionModel tm = estimate_transitions(train, types);
  RunOutput out;
  out.record = train_entailment(scorer, model, instances, cfg, train, types, tm, DecodeConfig{});
  for (auto* p : model.parameters(true)) out.params.push_back(p->value);
  return out;
}

double max_param_gap(const RunOutput& a, const RunOutput& b) {
  if (a.params.size() != b.params.size()) return 1e9;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].rows() != b.params[i].rows() || a.params[i].cols() != b.params[i].cols())
      return 1e9;
    worst = std::max(worst, (a.params[i] - b.params[i]).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace

TEST(TrainConfig, ValidationRejectsBadRanges) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.warmup_ratio = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.dropout = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.patience = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.grad_accum = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(TrainConfig, SearchGridsArePinned) {
  const std::vector<double> lr = {1e-5, 2e-5, 3e-5, 4e-5, 5e-5};
  const std::vector<double> wd = {0.1, 0.01, 0.005, 0.001};
  const std::vector<int> bs = {8, 16, 32};
  EXPECT_EQ(TrainConfig::learning_rate_grid(), lr);
  EXPECT_EQ(TrainConfig::weight_decay_grid(), wd);
  EXPECT_EQ(TrainConfig::batch_size_grid(), bs);
}

TEST(TrainConfig, JsonRoundTripAndDefaults) {
  TrainConfig cfg;
  cfg.learning_rate = 3e-5;
  cfg.objective = Objective::pet;
  cfg.label_conditioning = false;
  cfg.patience = 4;
  nlohmann::json j;
  to_json(j, cfg);
  TrainConfig back;
  from_json(j, back);
  EXPECT_EQ(back.learning_rate, 3e-5);
  EXPECT_EQ(back.objective, Objective::pet);
  EXPECT_FALSE(back.label_conditioning);
  EXPECT_EQ(back.patience, 4);

  TrainConfig sparse;
  from_json(nlohmann::json{{"batch_size", 8}}, sparse);
  EXPECT_EQ(sparse.batch_size, 8);
  EXPECT_EQ(sparse.max_steps, TrainConfig{}.max_steps);
  EXPECT_EQ(sparse.objective, Objective::adapet);

  TrainConfig bad;
  EXPECT_THROW(from_json(nlohmann::json{{"objective", "mystery"}}, bad), ConfigError);
}

TEST(RunRecord, JsonRoundTrip) {
  RunRecord r;
  r.config_snapshot = {{"k", 1}};
  r.data_lineage = {{"train", "a.conll"}};
  r.evals = {{100, 0.5, 0.4, 0.44, 1.25}, {200, 0.8, 0.7, 0.74, 0.62}};
  r.best_step = 200;
  r.best_f1 = 0.74;
  r.checkpoint_dir = "/tmp/ckpt";
  r.wall_clock_sec = 12.5;
  r.selected_tau = 0.35;

  RunRecord back = run_record_from_json(run_record_to_json(r));
  EXPECT_EQ(back.config_snapshot, r.config_snapshot);
  EXPECT_EQ(back.data_lineage, r.data_lineage);
  ASSERT_EQ(back.evals.size(), 2u);
  EXPECT_EQ(back.evals[1].step, 200);
  EXPECT_DOUBLE_EQ(back.evals[1].train_loss, 0.62);
  EXPECT_EQ(back.best_step, 200);
  EXPECT_DOUBLE_EQ(back.best_f1, 0.74);
  EXPECT_EQ(back.checkpoint_dir, "/tmp/ckpt");
  EXPECT_DOUBLE_EQ(back.selected_tau, 0.35);
}

TEST(BaselineLoss, UniformLogitsCostLogTagsetSize) {
  const int L = 7, Y = 9;
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(L, Y);
  std::vector<int> gold(L, 3);
  EXPECT_NEAR(baseline_loss(logits, gold), std::log(static_cast<double>(Y)), 1e-12);
  EXPECT_NEAR(baseline_loss(logits, gold, Reduction::sum), L * std::log(static_cast<double>(Y)),
              1e-12);

  // Independent recomputation on non-trivial logits.
  Eigen::MatrixXd z(2, 3);
  z << 0.2, 1.4, -0.7, 2.0, 0.0, 0.5;
  std::vector<int> g = {1, 0};
  double manual = 0.0;
  for (int i = 0; i < 2; ++i) {
    double denom = 0.0;
    for (int j = 0; j < 3; ++j) denom += std::exp(z(i, j));
    manual += -std::log(std::exp(z(i, g[static_cast<std::size_t>(i)])) / denom);
  }
  EXPECT_NEAR(baseline_loss(z, g, Reduction::sum), manual, 1e-12);

  EXPECT_THROW(baseline_loss(z, {1}), std::invalid_argument);
}

TEST(BaselineTagger, TagsetAndHeadSetup) {
  MlmBackend model = make_backend();
  BaselineTagger tagger(model, {"PER", "LOC", "PER"});
  const std::vector<std::string> expected = {"O", "B-LOC", "I-LOC", "B-PER", "I-PER"};
  EXPECT_EQ(tagger.tagset(), expected);
  EXPECT_EQ(tagger.tag_id("O"), 0);
  EXPECT_EQ(tagger.tag_id("B-PER"), 3);
  EXPECT_EQ(tagger.tag_id("B-MISC"), 0);  // unknown trains as O
  EXPECT_TRUE(model.has_extra("tagger:w"));

  // A second tagger over the same backend reuses the head.
  nn::Parameter& w = model.extra("tagger:w", 16, 5);
  BaselineTagger again(model, {"LOC", "PER"});
  EXPECT_EQ(&model.extra("tagger:w", 16, 5), &w);

  auto tags = tagger.predict({"anna", "works", "here"});
  ASSERT_EQ(tags.size(), 3u);
  for (const auto& t : tags)
    EXPECT_NE(std::find(expected.begin(), expected.end(), t), expected.end());
}

TEST(BaselineTagger, MemorizesTinyCorpus) {
  MlmBackend model = make_backend();
  BaselineTagger tagger(model, {"PER", "LOC"});
  auto data = train_corpus();
  TrainConfig cfg;
  cfg.learning_rate = 2e-3;
  cfg.batch_size = 4;
  cfg.grad_accum = 1;
  cfg.max_steps = 150;
  cfg.eval_interval = 50;
  cfg.dropout = 0.0;
  cfg.max_seq_len = 48;
  cfg.seed = 1;
  RunRecord rec = tagger.train(data, data, cfg);
  EXPECT_EQ(rec.evals.size(), 3u);
  EXPECT_GE(rec.best_step, 50);
  EXPECT_GE(rec.best_f1, 0.9);
  EXPECT_GE(tagger.evaluate(data).f1, 0.9);

  EXPECT_THROW(tagger.train({}, data, cfg), std::invalid_argument);
}

TEST(Training, GradAccumulationMatchesLargerBatch) {
  TrainConfig small = quick_train_config();  // 4 x 2
  TrainConfig large = quick_train_config();
  large.batch_size = 8;
  large.grad_accum = 1;
  RunOutput a = run_once(small);
  RunOutput b = run_once(large);
  EXPECT_LT(max_param_gap(a, b), 1e-12);
  ASSERT_EQ(a.record.evals.size(), 1u);
  ASSERT_EQ(b.record.evals.size(), 1u);
  EXPECT_NEAR(a.record.evals[0].train_loss, b.record.evals[0].train_loss, 1e-12);
}

TEST(Training, DeterministicForFixedSeed) {
  TrainConfig cfg = quick_train_config();
  cfg.max_steps = 2;
  cfg.eval_interval = 2;
  RunOutput a = run_once(cfg);
  RunOutput b = run_once(cfg);
  EXPECT_EQ(max_param_gap(a, b), 0.0);
  ASSERT_EQ(a.record.evals.size(), b.record.evals.size());
  EXPECT_EQ(a.record.evals[0].train_loss, b.record.evals[0].train_loss);

  cfg.seed = 12;
  RunOutput c = run_once(cfg);
  EXPECT_GT(max_param_gap(a, c), 0.0);
}

TEST(Training, KeepsBestWeightsAndWritesCheckpoint) {
  TempDir dir;
  MlmBackend model = make_backend();
  ScorerOptions so;
  so.max_seq_len = 48;
  std::vector<std::string> types = {"LOC", "PER"};
  MlmScorer scorer(model, so, types);
  auto train = train_corpus();
  InstanceFactory fac;
  SamplingConfig sc;
  sc.seed = 3;
  auto instances = fac.build_all(train, sc);
  TransitionModel tm = estimate_transitions(train, types);

  TrainConfig cfg = quick_train_config();
  cfg.max_steps = 4;
  cfg.eval_interval = 2;
  RunRecord rec =
      train_entailment(scorer, model, instances, cfg, train, types, tm, DecodeConfig{}, dir.str());
  EXPECT_EQ(rec.evals.size(), 2u);
  EXPECT_GT(rec.best_step, 0);
  EXPECT_GE(rec.selected_tau, 0.0);  // word mode always sweeps
  EXPECT_GT(rec.wall_clock_sec, 0.0);
  EXPECT_EQ(rec.checkpoint_dir, dir.str());

  // The checkpoint on disk equals the restored best weights.
  MlmBackend reloaded = MlmBackend::load(dir.str());
  auto live = model.parameters(true);
  auto disk = reloaded.parameters(true);
  ASSERT_EQ(live.size(), disk.size());
  for (std::size_t i = 0; i < live.size(); ++i)
    EXPECT_EQ((live[i]->value - disk[i]->value).cwiseAbs().maxCoeff(), 0.0) << live[i]->name;

  EXPECT_THROW(
      train_entailment(scorer, model, {}, cfg, train, types, tm, DecodeConfig{}),
      std::invalid_argument);
}

TEST(Training, PatienceStopsWhenDevCannotImprove) {
  MlmBackend model = make_backend();
  ScorerOptions so;
  so.max_seq_len = 48;
  std::vector<std::string> types = {"LOC", "PER"};
  MlmScorer scorer(model, so, types);
  auto train = train_corpus();
  InstanceFactory fac;
  SamplingConfig sc;
  sc.seed = 3;
  auto instances = fac.build_all(train, sc);
  TransitionModel tm = estimate_transitions(train, types);

  // Dev has no entities, so F1 is pinned at zero and never improves.
  std::vector<TaggedSentence> flat_dev = {{{"rivers", "flow"}, {"O", "O"}}};
  TrainConfig cfg = quick_train_config();
  cfg.max_steps = 50;
  cfg.eval_interval = 1;
  cfg.patience = 1;
  int eval_calls = 0;
  RunRecord rec = train_entailment(scorer, model, instances, cfg, flat_dev, types, tm,
                                   DecodeConfig{}, {}, [&](const EvalPoint&) { ++eval_calls; });
  EXPECT_EQ(rec.evals.size(), 2u);  // first eval records, second triggers the stop
  EXPECT_EQ(eval_calls, 2);
  EXPECT_EQ(rec.best_step, 1);
}

TEST(Transfer, RichThenLowResourceKeepsAllWeights) {
  MlmBackend model = make_backend();
  ScorerOptions so;
  so.max_seq_len = 48;
  std::vector<std::string> types = {"LOC", "PER"};
  MlmScorer scorer(model, so, types);
  auto rich = train_corpus();
  auto low = std::vector<TaggedSentence>{rich[0], rich[1]};
  InstanceFactory fac;
  SamplingConfig sc;
  sc.seed = 3;
  TransitionModel rich_tm = estimate_transitions(rich, types);

  TrainConfig step1 = quick_train_config();
  RunRecord probe;  // keep configs cheap: one step each
  TransferResult res = transfer_pipeline(scorer, model, fac.build_all(rich, sc), rich, types,
                                         rich_tm, fac.build_all(low, sc), low, low, low, types,
                                         step1, step1, DecodeConfig{});
  (void)probe;
  EXPECT_EQ(res.rich.evals.size(), 1u);
  EXPECT_EQ(res.low.evals.size(), 1u);
  EXPECT_GE(res.tau, 0.0);
  EXPECT_LE(res.tau, 1.0);
  EXPECT_DOUBLE_EQ(res.low.selected_tau, res.tau);
  EXPECT_EQ(res.test_report.gold, 2u);  // one mention in each low sentence
}

TEST(EvaluateCorpus, WordAndSpanModesProduceReports) {
  MlmBackend model = make_backend();
  std::vector<std::string> types = {"LOC", "PER"};
  auto data = train_corpus();
  TransitionModel tm = estimate_transitions(data, types);

  ScorerOptions word;
  word.max_seq_len = 48;
  MlmScorer word_scorer(model, word, types);
  EvalReport wr = evaluate_corpus(word_scorer, data, types, tm, DecodeConfig{});
  EXPECT_EQ(wr.gold, 4u);
  EXPECT_GE(wr.f1, 0.0);
  EXPECT_LE(wr.f1, 1.0);

  ScorerOptions span;
  span.max_seq_len = 48;
  span.candidate_mode = CandidateMode::span;
  MlmScorer span_scorer(model, span, types);
  EvalReport sr = evaluate_corpus(span_scorer, data, types, tm, DecodeConfig{});
  EXPECT_EQ(sr.gold, 4u);
  EXPECT_LE(sr.correct, sr.predicted);
  EXPECT_LE(sr.correct, sr.gold);
}
