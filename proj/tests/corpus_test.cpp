#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "entner/corpus.hpp"
#include "entner/synthetic.hpp"

using namespace entner;

namespace {

// Independent run-length scanner used as the oracle for extract_mentions.
std::vector<EntityMention> mention_oracle(const TaggedSentence& s) {
  std::vector<EntityMention> out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s.tags[i] == "O") {
      ++i;
      continue;
    }
    const std::string type = s.tags[i].substr(2);
    std::size_t j = i;
    while (j + 1 < s.size() && s.tags[j + 1] == "I-" + type) ++j;
    EntityMention m;
    m.start = i;
    m.end = j + 1;
    m.type = type;
    for (std::size_t k = i; k <= j; ++k) m.surface += (k > i ? " " : "") + s.tokens[k];
    out.push_back(std::move(m));
    i = j + 1;
  }
  return out;
}

TaggedSentence random_sentence(std::mt19937_64& rng) {
  static const std::vector<std::string> types = {"PER", "LOC", "ORG"};
  std::uniform_int_distribution<int> len(1, 12);
  std::uniform_int_distribution<int> pick(0, 4);  // 0..2 type starts, 3..4 O
  TaggedSentence s;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) {
    s.tokens.push_back("w" + std::to_string(i));
    const int p = pick(rng);
    if (p < 3) {
      const std::string& t = types[static_cast<std::size_t>(p)];
      const bool extend = !s.tags.empty() && tag_type(s.tags.back()) == t &&
                          std::bernoulli_distribution(0.5)(rng);
      s.tags.push_back((extend ? "I-" : "B-") + t);
    } else {
      s.tags.push_back("O");
    }
  }
  repair_scheme(s.tags);
  return s;
}

}  // namespace

TEST(ParseConll, ColumnsAndSentenceBreaks) {
  const char* text =
      "-DOCSTART- -X- O O\n"
      "\n"
      "anna NNP x B-PER\n"
      "visits VBZ x O\n"
      "brinport NNP x B-LOC\n"
      "\n"
      "\n"
      "apexcorp NNP x B-ORG\r\n"
      "hired VBD x O\n";
  auto data = parse_conll(text);
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data[0].tokens, (std::vector<std::string>{"anna", "visits", "brinport"}));
  EXPECT_EQ(data[0].tags, (std::vector<std::string>{"B-PER", "O", "B-LOC"}));
  EXPECT_EQ(data[1].tokens, (std::vector<std::string>{"apexcorp", "hired"}));
  EXPECT_EQ(data[1].tags, (std::vector<std::string>{"B-ORG", "O"}));
}

TEST(ParseConll, TagColumnSelection) {
  const char* text = "anna B-LOC B-PER\n";
  EXPECT_EQ(parse_conll(text)[0].tags[0], "B-PER");
  EXPECT_EQ(parse_conll(text, 1)[0].tags[0], "B-LOC");
  EXPECT_EQ(parse_conll(text, 2)[0].tags[0], "B-PER");
  EXPECT_THROW(parse_conll(text, 0), ConfigError);
  EXPECT_THROW(parse_conll(text, 3), ParseError);
}

TEST(ParseConll, MalformedInputs) {
  EXPECT_THROW(parse_conll("anna\n"), ParseError);           // tag column missing
  EXPECT_THROW(parse_conll("anna PERSON\n"), ParseError);    // not O/B-/I-
  EXPECT_THROW(parse_conll("anna B\n"), ParseError);         // truncated tag
  EXPECT_NO_THROW(parse_conll(""));
  EXPECT_TRUE(parse_conll("\n\n\n").empty());
}

TEST(ParseConll, RepairsRawIOTags) {
  // Files tagged with the IO convention (every mention token I-) parse into
  // scheme-valid tags.
  auto data = parse_conll("anna x I-PER\npetrova x I-PER\nvisits x O\nboris x I-PER\n");
  ASSERT_EQ(data.size(), 1u);
  EXPECT_EQ(data[0].tags,
            (std::vector<std::string>{"B-PER", "I-PER", "O", "B-PER"}));
}

TEST(Tags, ValidityAndType) {
  EXPECT_TRUE(is_valid_tag("O"));
  EXPECT_TRUE(is_valid_tag("B-PER"));
  EXPECT_TRUE(is_valid_tag("I-LOC"));
  EXPECT_FALSE(is_valid_tag(""));
  EXPECT_FALSE(is_valid_tag("B-"));
  EXPECT_FALSE(is_valid_tag("B"));
  EXPECT_FALSE(is_valid_tag("X-PER"));
  EXPECT_FALSE(is_valid_tag("BPER"));
  EXPECT_EQ(tag_type("B-MISC"), "MISC");
  EXPECT_EQ(tag_type("O"), "");
}

TEST(RepairScheme, PromotesOrphanedContinuations) {
  std::vector<std::string> tags = {"I-PER", "I-PER", "O", "I-LOC", "B-ORG", "I-PER"};
  repair_scheme(tags);
  EXPECT_EQ(tags, (std::vector<std::string>{"B-PER", "I-PER", "O", "B-LOC", "B-ORG", "B-PER"}));
  std::vector<std::string> valid = {"B-PER", "I-PER", "O", "B-PER"};
  auto copy = valid;
  repair_scheme(copy);
  EXPECT_EQ(copy, valid);
}

TEST(Mentions, MatchesRunLengthOracleOnRandomSentences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    TaggedSentence s = random_sentence(rng);
    EXPECT_EQ(extract_mentions(s), mention_oracle(s)) << "trial " << trial;
  }
}

TEST(Mentions, TagsRoundTrip) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    TaggedSentence s = random_sentence(rng);
    EXPECT_EQ(tags_from_mentions(extract_mentions(s), s.size()), s.tags) << "trial " << trial;
  }
}

TEST(Summarize, CountsAgreeWithDirectRecount) {
  auto data = synth::make_corpus(50, 3);
  DatasetSummary sum = summarize(data);
  std::size_t tokens = 0, mentions = 0;
  std::map<std::string, std::size_t> per_type;
  for (const auto& s : data) {
    tokens += s.size();
    for (const auto& m : mention_oracle(s)) {
      ++mentions;
      ++per_type[m.type];
    }
  }
  EXPECT_EQ(sum.sentence_count, data.size());
  EXPECT_EQ(sum.token_count, tokens);
  EXPECT_EQ(sum.mention_count(), mentions);
  EXPECT_EQ(sum.mentions_per_type, per_type);
  EXPECT_EQ(sum.type_inventory, type_inventory(data));
}

TEST(KShot, SampleMeetsPerTypeMinimum) {
  auto data = synth::make_corpus(300, 11);
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    KShotConfig cfg;
    cfg.k = 5;
    cfg.seed = seed;
    auto sample = kshot_sample(data, cfg);
    DatasetSummary sum = summarize(sample);
    for (const auto& type : type_inventory(data)) {
      EXPECT_GE(sum.mentions_per_type[type], 5u) << "type " << type << " seed " << seed;
    }
    EXPECT_LT(sample.size(), data.size());
  }
}

TEST(KShot, DeterministicForFixedSeed) {
  auto data = synth::make_corpus(120, 5);
  KShotConfig cfg;
  cfg.k = 3;
  cfg.seed = 9;
  auto a = kshot_sample(data, cfg);
  auto b = kshot_sample(data, cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    EXPECT_EQ(a[i].tags, b[i].tags);
  }
}

TEST(KShot, PerTypeTargetsOverrideK) {
  auto data = synth::make_corpus(300, 13);
  KShotConfig cfg;
  cfg.k = 50;  // ignored once explicit targets are set
  cfg.per_type_target = {{"PER", 8}, {"LOC", 2}};
  auto sample = kshot_sample(data, cfg);
  DatasetSummary sum = summarize(sample);
  EXPECT_GE(sum.mentions_per_type["PER"], 8u);
  EXPECT_GE(sum.mentions_per_type["LOC"], 2u);
}

TEST(KShot, InfeasibleTargetThrows) {
  auto data = synth::make_corpus(10, 17);
  KShotConfig cfg;
  cfg.k = 100000;
  EXPECT_THROW(kshot_sample(data, cfg), SamplingError);
  cfg.k = -1;
  EXPECT_THROW(kshot_sample(data, cfg), ConfigError);
}

TEST(KShot, ZeroKSelectsNothing) {
  auto data = synth::make_corpus(20, 19);
  KShotConfig cfg;
  cfg.k = 0;
  EXPECT_TRUE(kshot_sample(data, cfg).empty());
}

TEST(CrossTypeSample, HonorsExplicitTargets) {
  auto data = synth::make_corpus(300, 23);
  auto sample = cross_type_sample(data, {{"ORG", 6}}, 4);
  DatasetSummary sum = summarize(sample);
  EXPECT_GE(sum.mentions_per_type["ORG"], 6u);
}

TEST(ConllIo, WriteParseRoundTrip) {
  auto data = synth::make_corpus(40, 29);
  std::ostringstream out;
  write_conll(out, data);
  auto back = parse_conll(out.str());
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].tokens, data[i].tokens);
    EXPECT_EQ(back[i].tags, data[i].tags);
  }
}

TEST(ConllIo, FileRoundTrip) {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "entner_corpus_roundtrip.conll";
  auto data = synth::make_corpus(10, 31);
  write_conll(path.string(), data);
  auto back = load_conll(path.string());
  EXPECT_EQ(back.size(), data.size());
  fs::remove(path);
  EXPECT_THROW(load_conll((path / "missing").string()), ParseError);
}
