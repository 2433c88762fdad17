#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <tuple>
#include <vector>

#include "entner/decoding.hpp"

using namespace entner;

namespace {

// Deterministic score formula both the scorer and the test recompute.
double formula_score(std::size_t start, std::size_t end, const std::string& type) {
  const int c0 = type.empty() ? 0 : type[0];
  return ((start * 31 + end * 17 + static_cast<std::size_t>(c0) * 7) % 89 + 1) / 90.0;
}

struct FormulaScorer : EntailmentScorer {
  double entail_probability(const std::vector<std::string>&, std::size_t start, std::size_t end,
                            const std::string& type) override {
    return formula_score(start, end, type);
  }
};

struct ThrowingScorer : EntailmentScorer {
  double entail_probability(const std::vector<std::string>&, std::size_t start, std::size_t,
                            const std::string&) override {
    if (start == 2) throw std::runtime_error("boom");
    return 0.5;
  }
};

struct TableScorer : EntailmentScorer {
  std::map<std::tuple<std::size_t, std::size_t, std::string>, double> table;
  double fallback = 0.1;

  double entail_probability(const std::vector<std::string>&, std::size_t start, std::size_t end,
                            const std::string& type) override {
    auto it = table.find({start, end, type});
    return it == table.end() ? fallback : it->second;
  }
};

double path_score(const EmissionMatrix& em, const TransitionModel& tm, double tau,
                  const std::vector<int>& path) {
  auto lf = [](double v) { return std::log(std::max(v, 1e-12)); };
  double s = lf(em.scores(0, path[0])) + tau * lf(tm.start(path[0]));
  for (std::size_t i = 1; i < path.size(); ++i)
    s += lf(em.scores(static_cast<Eigen::Index>(i), path[i])) +
         tau * lf(tm.trans(path[i - 1], path[i]));
  return s;
}

double brute_force_best(const EmissionMatrix& em, const TransitionModel& tm, double tau) {
  const int L = static_cast<int>(em.scores.rows());
  const int S = static_cast<int>(em.scores.cols());
  std::vector<int> path(L, 0);
  double best = -std::numeric_limits<double>::infinity();
  while (true) {
    best = std::max(best, path_score(em, tm, tau, path));
    int i = 0;
    while (i < L && ++path[i] == S) path[i++] = 0;
    if (i == L) break;
  }
  return best;
}

}  // namespace

TEST(TauGrid, TwentyOneStepsOfFivePercent) {
  auto grid = tau_grid();
  ASSERT_EQ(grid.size(), 21u);
  EXPECT_EQ(grid.front(), 0.0);
  EXPECT_EQ(grid.back(), 1.0);
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_NEAR(grid[i], 0.05 * i, 1e-12);
}

TEST(Emissions, RowNormalizedOverTypedPlusNullColumns) {
  FormulaScorer scorer;
  std::vector<std::string> tokens = {"a", "b", "c"};
  std::vector<std::string> types = {"PER", "LOC"};
  EmissionMatrix em = build_emissions(tokens, scorer, types);
  ASSERT_EQ(em.scores.rows(), 3);
  ASSERT_EQ(em.scores.cols(), 3);
  EXPECT_EQ(em.types, types);
  EXPECT_EQ(em.null_col(), 2);
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(em.scores.row(i).sum(), 1.0, 1e-12);
    const std::size_t w = static_cast<std::size_t>(i);
    const double raw_per = formula_score(w, w + 1, "PER");
    const double raw_loc = formula_score(w, w + 1, "LOC");
    const double raw_null = formula_score(w, w + 1, "");
    const double z = raw_per + raw_loc + raw_null;
    EXPECT_NEAR(em.scores(i, 0), raw_per / z, 1e-12);
    EXPECT_NEAR(em.scores(i, 1), raw_loc / z, 1e-12);
    EXPECT_NEAR(em.scores(i, 2), raw_null / z, 1e-12);
  }

  EmissionMatrix alt = build_emissions(tokens, scorer, types, NullEmissionMode::one_minus_max);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const std::size_t w = static_cast<std::size_t>(i);
    const double raw_per = formula_score(w, w + 1, "PER");
    const double raw_loc = formula_score(w, w + 1, "LOC");
    const double raw_null = std::clamp(1.0 - std::max(raw_per, raw_loc), 0.0, 1.0);
    const double z = raw_per + raw_loc + raw_null;
    EXPECT_NEAR(alt.scores(i, 2), raw_null / z, 1e-12);
  }

  EXPECT_THROW(build_emissions(tokens, scorer, {}), ConfigError);
}

TEST(Emissions, ScorerFailureNamesTheWord) {
  ThrowingScorer scorer;
  std::vector<std::string> tokens = {"a", "b", "c"};
  try {
    build_emissions(tokens, scorer, {"PER"});
    FAIL() << "expected a wrapped error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("word 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("'c'"), std::string::npos);
  }
}

TEST(Transitions, HandCountedAddOneSmoothing) {
  std::vector<TaggedSentence> train = {
      {{"anna", "maria", "runs"}, {"B-PER", "I-PER", "O"}},
      {{"near", "brinport"}, {"O", "B-LOC"}},
  };
  TransitionModel tm = estimate_transitions(train, {"PER", "LOC"});
  ASSERT_EQ(tm.trans.rows(), 3);
  // PER row: one PER->PER, one PER->NULL, denom 2 + 3.
  EXPECT_NEAR(tm.trans(0, 0), 2.0 / 5.0, 1e-12);
  EXPECT_NEAR(tm.trans(0, 1), 1.0 / 5.0, 1e-12);
  EXPECT_NEAR(tm.trans(0, 2), 2.0 / 5.0, 1e-12);
  // LOC row: unseen, uniform.
  for (int b = 0; b < 3; ++b) EXPECT_NEAR(tm.trans(1, b), 1.0 / 3.0, 1e-12);
  // NULL row: one NULL->LOC.
  EXPECT_NEAR(tm.trans(2, 0), 1.0 / 4.0, 1e-12);
  EXPECT_NEAR(tm.trans(2, 1), 2.0 / 4.0, 1e-12);
  EXPECT_NEAR(tm.trans(2, 2), 1.0 / 4.0, 1e-12);
  // Starts: PER once, NULL once, two sentences.
  EXPECT_NEAR(tm.start(0), 2.0 / 5.0, 1e-12);
  EXPECT_NEAR(tm.start(1), 1.0 / 5.0, 1e-12);
  EXPECT_NEAR(tm.start(2), 2.0 / 5.0, 1e-12);

  // Types outside the inventory count as NULL.
  std::vector<TaggedSentence> odd = {{{"x", "y"}, {"B-MISC", "I-MISC"}}};
  TransitionModel tm2 = estimate_transitions(odd, {"PER"});
  EXPECT_NEAR(tm2.start(1), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(tm2.trans(1, 1), 2.0 / 4.0, 1e-12);

  EXPECT_THROW(estimate_transitions({}, {"PER"}), std::invalid_argument);
}

TEST(Transitions, RowsAreStrictlyPositiveDistributions) {
  std::mt19937_64 rng(7);
  std::vector<std::string> types = {"PER", "LOC", "ORG"};
  std::vector<TaggedSentence> train;
  std::uniform_int_distribution<int> len(1, 8), lab(0, 3);
  for (int s = 0; s < 50; ++s) {
    TaggedSentence sent;
    for (int i = len(rng); i > 0; --i) {
      sent.tokens.push_back("w");
      const int l = lab(rng);
      sent.tags.push_back(l == 3 ? "O" : "B-" + types[static_cast<std::size_t>(l)]);
    }
    train.push_back(std::move(sent));
  }
  TransitionModel tm = estimate_transitions(train, types);
  for (Eigen::Index a = 0; a < 4; ++a) {
    EXPECT_NEAR(tm.trans.row(a).sum(), 1.0, 1e-12);
    EXPECT_GT(tm.trans.row(a).minCoeff(), 0.0);
  }
  EXPECT_NEAR(tm.start.sum(), 1.0, 1e-12);
  EXPECT_GT(tm.start.minCoeff(), 0.0);
}

TEST(Viterbi, MatchesBruteForceOnRandomProblems) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> len(1, 6), ntypes(1, 5);
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  const double taus[] = {0.0, 0.3, 0.7, 1.0};
  for (int trial = 0; trial < 200; ++trial) {
    const int L = len(rng);
    const int T = ntypes(rng);
    const int S = T + 1;
    EmissionMatrix em;
    for (int t = 0; t < T; ++t) em.types.push_back("T" + std::to_string(t));
    em.scores.resize(L, S);
    for (int i = 0; i < L; ++i) {
      for (int y = 0; y < S; ++y) em.scores(i, y) = unit(rng);
      em.scores.row(i) /= em.scores.row(i).sum();
    }
    TransitionModel tm;
    tm.types = em.types;
    tm.trans.resize(S, S);
    tm.start.resize(S);
    for (int a = 0; a < S; ++a) {
      for (int b = 0; b < S; ++b) tm.trans(a, b) = unit(rng);
      tm.trans.row(a) /= tm.trans.row(a).sum();
      tm.start(a) = unit(rng);
    }
    tm.start /= tm.start.sum();

    DecodeConfig cfg;
    cfg.tau = taus[trial % 4];
    std::vector<int> path = viterbi(em, tm, cfg);
    ASSERT_EQ(path.size(), static_cast<std::size_t>(L));
    for (int y : path) {
      EXPECT_GE(y, 0);
      EXPECT_LT(y, S);
    }
    EXPECT_NEAR(path_score(em, tm, cfg.tau, path), brute_force_best(em, tm, cfg.tau), 1e-9)
        << "trial " << trial;
  }
}

TEST(Viterbi, TauZeroReducesToPerWordArgmax) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int L = 1 + trial % 7;
    EmissionMatrix em;
    em.types = {"A", "B", "C"};
    em.scores.resize(L, 4);
    for (int i = 0; i < L; ++i) {
      for (int y = 0; y < 4; ++y) em.scores(i, y) = unit(rng);
      em.scores.row(i) /= em.scores.row(i).sum();
    }
    TransitionModel tm;
    tm.types = em.types;
    tm.trans = Eigen::MatrixXd::Constant(4, 4, 0.25);
    tm.start = Eigen::VectorXd::Constant(4, 0.25);
    std::vector<int> path = viterbi(em, tm, DecodeConfig{});
    for (int i = 0; i < L; ++i) {
      Eigen::Index argmax = 0;
      em.scores.row(i).maxCoeff(&argmax);
      EXPECT_EQ(path[static_cast<std::size_t>(i)], static_cast<int>(argmax));
    }
  }
}

TEST(Viterbi, ValidatesShapesAndConfig) {
  EmissionMatrix em;
  em.types = {"PER"};
  em.scores = Eigen::MatrixXd::Constant(2, 2, 0.5);
  TransitionModel tm;
  tm.types = {"LOC"};
  tm.trans = Eigen::MatrixXd::Constant(2, 2, 0.5);
  tm.start = Eigen::VectorXd::Constant(2, 0.5);
  EXPECT_THROW(viterbi(em, tm, DecodeConfig{}), std::invalid_argument);

  tm.types = {"PER"};
  tm.trans = Eigen::MatrixXd::Constant(3, 3, 1.0 / 3);
  EXPECT_THROW(viterbi(em, tm, DecodeConfig{}), std::invalid_argument);

  tm.trans = Eigen::MatrixXd::Constant(2, 2, 0.5);
  DecodeConfig bad;
  bad.tau = 1.5;
  EXPECT_THROW(viterbi(em, tm, bad), ConfigError);
  bad.tau = 0.5;
  bad.grid = {0.2, 2.0};
  EXPECT_THROW(bad.validate(), ConfigError);

  EmissionMatrix empty;
  empty.types = {"PER"};
  empty.scores = Eigen::MatrixXd(0, 2);
  EXPECT_TRUE(viterbi(empty, tm, DecodeConfig{}).empty());
}

TEST(Labels, MentionsAndTagsFromLabelRuns) {
  std::vector<std::string> types = {"PER", "LOC"};
  std::vector<int> labels = {0, 0, 2, 1, 2, 0};
  std::vector<std::string> tokens = {"anna", "maria", "of", "brinport", "and", "dmitri"};
  auto mentions = labels_to_mentions(labels, types, tokens);
  ASSERT_EQ(mentions.size(), 3u);
  EXPECT_EQ(mentions[0].start, 0u);
  EXPECT_EQ(mentions[0].end, 2u);
  EXPECT_EQ(mentions[0].type, "PER");
  EXPECT_EQ(mentions[0].surface, "anna maria");
  EXPECT_EQ(mentions[1].type, "LOC");
  EXPECT_EQ(mentions[2].start, 5u);

  auto tags = labels_to_tags(labels, types);
  const std::vector<std::string> expected = {"B-PER", "I-PER", "O", "B-LOC", "O", "B-PER"};
  EXPECT_EQ(tags, expected);

  // Adjacent distinct labels restart with B-.
  auto tags2 = labels_to_tags({0, 1, 1}, types);
  const std::vector<std::string> expected2 = {"B-PER", "B-LOC", "I-LOC"};
  EXPECT_EQ(tags2, expected2);

  EXPECT_THROW(labels_to_mentions({0}, types, tokens), std::invalid_argument);
}

TEST(SweepTau, PositiveTauProvablyHelpsAndTiesGoLow) {
  // One dev sentence whose second word only decodes correctly when the
  // transition prior is mixed in.
  TaggedSentence dev_sentence{{"anna", "maria"}, {"B-PER", "I-PER"}};
  TransitionModel tm;
  tm.types = {"PER"};
  tm.trans.resize(2, 2);
  tm.trans << 0.9, 0.1, 0.5, 0.5;
  tm.start.resize(2);
  tm.start << 0.9, 0.1;

  EmissionFn em_fn = [&](const TaggedSentence&) {
    EmissionMatrix em;
    em.types = {"PER"};
    em.scores.resize(2, 2);
    em.scores << 0.9, 0.1, 0.45, 0.55;
    return em;
  };
  TauSelection sel = sweep_tau({dev_sentence}, em_fn, tm, tau_grid());
  ASSERT_EQ(sel.sweep.size(), 21u);
  EXPECT_EQ(sel.sweep.front().second, 0.0);  // tau 0 truncates the mention
  // 0.45 * 0.9^tau > 0.55 * 0.1^tau first holds at tau = 0.10.
  EXPECT_NEAR(sel.tau, 0.10, 1e-12);
  EXPECT_EQ(sel.report.f1, 1.0);
  for (const auto& [tau, f1] : sel.sweep) {
    if (tau > 0.10 + 1e-9) EXPECT_EQ(f1, 1.0);
  }

  // All-equal outcomes keep the smallest grid point.
  EmissionFn confident = [&](const TaggedSentence&) {
    EmissionMatrix em;
    em.types = {"PER"};
    em.scores.resize(2, 2);
    em.scores << 0.99, 0.01, 0.99, 0.01;
    return em;
  };
  TauSelection tie = sweep_tau({dev_sentence}, confident, tm, tau_grid());
  EXPECT_EQ(tie.tau, 0.0);
  EXPECT_EQ(tie.report.f1, 1.0);

  EXPECT_THROW(sweep_tau({}, em_fn, tm, tau_grid()), std::invalid_argument);
  EXPECT_THROW(sweep_tau({dev_sentence}, em_fn, tm, {}), ConfigError);

  std::vector<std::pair<double, double>> sweep;
  EXPECT_NEAR(select_tau({dev_sentence}, em_fn, tm, tau_grid(), &sweep), 0.10, 1e-12);
  EXPECT_EQ(sweep.size(), 21u);
}

TEST(DecodeSpans, GreedyBestFirstWithoutOverlap) {
  TableScorer scorer;
  scorer.table[{0, 2, "PER"}] = 0.9;
  scorer.table[{1, 3, "PER"}] = 0.8;
  scorer.table[{3, 4, "LOC"}] = 0.7;
  scorer.table[{2, 3, "PER"}] = 0.6;
  scorer.table[{2, 4, "LOC"}] = 0.5;  // exactly at threshold: rejected
  std::vector<std::string> tokens = {"anna", "maria", "visits", "brinport"};

  auto out = decode_spans(tokens, scorer, {"PER", "LOC"}, 8, 0.5);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].start, 0u);
  EXPECT_EQ(out[0].end, 2u);
  EXPECT_EQ(out[0].type, "PER");
  EXPECT_EQ(out[0].surface, "anna maria");
  EXPECT_EQ(out[1].start, 2u);
  EXPECT_EQ(out[1].end, 3u);
  EXPECT_EQ(out[1].type, "PER");
  EXPECT_EQ(out[2].start, 3u);
  EXPECT_EQ(out[2].end, 4u);
  EXPECT_EQ(out[2].type, "LOC");

  // A span cap of 1 hides every multi-word candidate.
  auto short_only = decode_spans(tokens, scorer, {"PER", "LOC"}, 1, 0.5);
  ASSERT_EQ(short_only.size(), 2u);
  EXPECT_EQ(short_only[0].end, short_only[0].start + 1);
  EXPECT_EQ(short_only[1].end, short_only[1].start + 1);
}
