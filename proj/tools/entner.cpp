// Command line front end: data preparation, instance building, training,
// prediction, evaluation, tau sweeps, and ablation plans, all driven by one
// structured config file with dotted-path overrides.
//
// Exit codes: 0 success, 1 user error (config, input files, CLI usage),
// 2 internal error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "entner/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace entner;

namespace {

struct CommonOpts {
  std::string config;
  std::vector<std::string> overrides;
};

RunConfig load_cfg(const CommonOpts& c) {
  if (!c.config.empty()) return load_run_config(c.config, c.overrides);
  json doc = json::object();
  to_json(doc, RunConfig{});
  for (const auto& ov : c.overrides) apply_override(doc, ov);
  return doc.get<RunConfig>();
}

void add_common(CLI::App* sub, CommonOpts& opts, bool config_required = true) {
  auto* o = sub->add_option("-c,--config", opts.config, "run config file (json)");
  if (config_required) o->required();
  sub->add_option("-O,--override", opts.overrides,
                  "config override as path.to.key=value, repeatable");
}

std::string cache_dir_env() {
  const char* e = std::getenv("ENTNER_CACHE_DIR");
  return e ? std::string(e) : std::string();
}

fs::path run_dir_of(const RunConfig& cfg) {
  if (cfg.output_dir.empty()) throw ConfigError("output_dir is empty");
  fs::create_directories(cfg.output_dir);
  return fs::path(cfg.output_dir);
}

json summary_json(const DatasetSummary& s) {
  json per_type = json::object();
  for (const auto& [t, n] : s.mentions_per_type) per_type[t] = n;
  return {{"sentences", s.sentence_count},
          {"tokens", s.token_count},
          {"types", std::vector<std::string>(s.type_inventory.begin(), s.type_inventory.end())},
          {"mentions", s.mention_count()},
          {"mentions_per_type", per_type}};
}

json tm_to_json(const TransitionModel& tm) {
  json trans = json::array();
  for (Eigen::Index i = 0; i < tm.trans.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < tm.trans.cols(); ++j) row.push_back(tm.trans(i, j));
    trans.push_back(std::move(row));
  }
  json start = json::array();
  for (Eigen::Index i = 0; i < tm.start.size(); ++i) start.push_back(tm.start(i));
  return {{"types", tm.types}, {"trans", trans}, {"start", start}};
}

TransitionModel tm_from_json(const json& j) {
  TransitionModel tm;
  tm.types = j.at("types").get<std::vector<std::string>>();
  const auto n = static_cast<Eigen::Index>(tm.types.size()) + 1;
  const auto& trans = j.at("trans");
  const auto& start = j.at("start");
  if (static_cast<Eigen::Index>(trans.size()) != n || static_cast<Eigen::Index>(start.size()) != n)
    throw ParseError("transition table size does not match its type list");
  tm.trans.resize(n, n);
  tm.start.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(trans[static_cast<std::size_t>(i)].size()) != n)
      throw ParseError("transition table is not square");
    for (Eigen::Index k = 0; k < n; ++k)
      tm.trans(i, k) = trans[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
    tm.start(i) = start[static_cast<std::size_t>(i)].get<double>();
  }
  return tm;
}

void write_json_file(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  out << doc.dump(2) << '\n';
  if (!out) throw ConfigError("cannot write " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    json doc;
    in >> doc;
    return doc;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// Every token a rendered hypothesis can contain, so prompts never land on
// [UNK] when a vocabulary is built from plain text.
std::vector<std::string> prompt_vocab_extras(const ScorerOptions& so,
                                             const std::vector<std::string>& types) {
  TemplateSet ts = TemplateSet::defaults(so.candidate_mode);
  if (!so.typed_form.empty()) ts.typed_form = so.typed_form;
  if (!so.null_form.empty()) ts.null_form = so.null_form;
  std::set<std::string> toks{so.verbalizer.entail_token, so.verbalizer.contradict_token, "x"};
  for (TemplateKind k : {TemplateKind::positive, TemplateKind::false_positive,
                         TemplateKind::non_entity, TemplateKind::null_candidate,
                         TemplateKind::null_other}) {
    for (const auto& ty : types) {
      for (const auto& t : render_hypothesis_tokens(ts.for_kind(k), "x", so.type_names.word_for(ty)))
        toks.insert(t);
    }
  }
  return {toks.begin(), toks.end()};
}

// A configured backbone path is taken as-is when it holds a checkpoint,
// otherwise it is retried under ENTNER_CACHE_DIR.
std::string resolve_backbone_dir(const std::string& configured) {
  if (fs::exists(fs::path(configured) / "config.json")) return configured;
  const std::string cache = cache_dir_env();
  if (!cache.empty() && fs::exists(fs::path(cache) / configured / "config.json"))
    return (fs::path(cache) / configured).string();
  throw ConfigError("backbone checkpoint not found: " + configured +
                    (cache.empty() ? " (ENTNER_CACHE_DIR not set)"
                                   : " (also tried under " + cache + ")"));
}

MlmBackend make_or_load_backbone(const RunConfig& cfg, const std::vector<TaggedSentence>& train,
                                 const std::vector<TaggedSentence>& dev,
                                 const std::vector<std::string>& types) {
  if (!cfg.backbone_dir.empty()) return MlmBackend::load(resolve_backbone_dir(cfg.backbone_dir));
  std::vector<std::vector<std::string>> text;
  text.reserve(train.size() + dev.size());
  for (const auto& s : train) text.push_back(s.tokens);
  for (const auto& s : dev) text.push_back(s.tokens);
  Vocab vocab = Vocab::build(text, prompt_vocab_extras(cfg.scorer, types));
  return MlmBackend(vocab, cfg.model);
}

void check_scorer_backbone(const RunConfig& cfg, const MlmBackend& model) {
  if (cfg.scorer.max_seq_len > model.config().max_seq)
    throw ConfigError("scorer max_seq_len " + std::to_string(cfg.scorer.max_seq_len) +
                      " exceeds the backbone's max_seq " +
                      std::to_string(model.config().max_seq));
}

std::vector<std::string> merged_types(const std::vector<TaggedSentence>& a,
                                      const std::vector<TaggedSentence>& b) {
  std::set<std::string> inv = type_inventory(a);
  for (const auto& t : type_inventory(b)) inv.insert(t);
  return {inv.begin(), inv.end()};
}

// One sentence per line, whitespace-tokenized; tags filled with O.
std::vector<TaggedSentence> read_raw_sentences(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open input file: " + path);
  std::vector<TaggedSentence> out;
  std::string line;
  while (std::getline(in, line)) {
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    TaggedSentence s;
    s.tags.assign(toks.size(), "O");
    s.tokens = std::move(toks);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<std::string>> read_text_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open text file: " + path);
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    auto toks = split_ws(line);
    if (!toks.empty()) out.push_back(std::move(toks));
  }
  return out;
}

void write_text_lines(const fs::path& path, const std::vector<std::vector<std::string>>& text) {
  std::ofstream out(path);
  for (const auto& toks : text) out << join(toks) << '\n';
  if (!out) throw ConfigError("cannot write " + path.string());
}

void write_predictions(const fs::path& path, const std::vector<TaggedSentence>& input,
                       const std::vector<std::vector<std::string>>& pred, bool keep_gold) {
  std::ofstream out(path);
  for (std::size_t i = 0; i < input.size(); ++i) {
    for (std::size_t w = 0; w < input[i].tokens.size(); ++w) {
      out << input[i].tokens[w];
      if (keep_gold) out << ' ' << input[i].tags[w];
      out << ' ' << pred[i][w] << '\n';
    }
    out << '\n';
  }
  if (!out) throw ConfigError("cannot write " + path.string());
}

// --- prepare ---

struct PrepareOpts {
  CommonOpts common;
};

int cmd_prepare(const PrepareOpts& o) {
  RunConfig cfg = load_cfg(o.common);
  cfg.validate_paths(true, false, false);
  const fs::path out = run_dir_of(cfg);

  std::vector<TaggedSentence> pool = load_conll(cfg.train_path, cfg.tag_column);
  std::vector<TaggedSentence> train = effective_train_split(cfg, pool);
  write_conll((out / "train.conll").string(), train);

  json doc = {{"train_source", summary_json(summarize(pool))},
              {"train", summary_json(summarize(train))},
              {"kshot", {{"k", cfg.kshot_k}, {"seed", cfg.kshot_seed}}}};
  auto copy_split = [&](const std::string& path, const char* name) {
    if (path.empty()) return;
    if (!fs::exists(path)) throw ConfigError(std::string(name) + " path does not exist: " + path);
    std::vector<TaggedSentence> split = load_conll(path, cfg.tag_column);
    write_conll((out / (std::string(name) + ".conll")).string(), split);
    doc[name] = summary_json(summarize(split));
  };
  copy_split(cfg.dev_path, "dev");
  copy_split(cfg.test_path, "test");
  write_json_file(out / "summary.json", doc);

  const DatasetSummary s = summarize(train);
  std::cout << "[prepare] wrote " << (out / "train.conll").string() << " (" << s.sentence_count
            << " sentences, " << s.token_count << " tokens, " << s.mention_count()
            << " mentions)\n[prepare] summary: " << (out / "summary.json").string() << '\n';
  return 0;
}

// --- build-instances ---

struct BuildOpts {
  CommonOpts common;
};

int cmd_build_instances(const BuildOpts& o) {
  RunConfig cfg = load_cfg(o.common);
  cfg.validate_paths(true, false, false);
  const fs::path out = run_dir_of(cfg);

  std::vector<TaggedSentence> train =
      effective_train_split(cfg, load_conll(cfg.train_path, cfg.tag_column));
  std::vector<EntailmentInstance> instances = build_pipeline_instances(cfg, train);

  std::ofstream of(out / "instances.jsonl");
  serialize_instances(instances, of);
  if (!of) throw ConfigError("cannot write " + (out / "instances.jsonl").string());

  std::map<std::string, int> by_kind;
  int entail = 0;
  for (const auto& inst : instances) {
    by_kind[to_string(inst.kind)]++;
    if (inst.answer == Answer::entail) entail++;
  }
  std::cout << "[build-instances] " << instances.size() << " instances (" << entail
            << " entail, " << instances.size() - static_cast<std::size_t>(entail)
            << " contradict) from " << train.size() << " sentences\n";
  for (const auto& [k, n] : by_kind) std::cout << "  " << k << ": " << n << '\n';
  std::cout << "[build-instances] wrote " << (out / "instances.jsonl").string() << '\n';
  return 0;
}

// --- train ---

struct TrainOpts {
  CommonOpts common;
  bool dry_run = false;
  bool force = false;
  bool resume = false;
};

int last_step_in_progress(const fs::path& path) {
  std::ifstream in(path);
  int last = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // A crash can truncate the final line; skip what does not parse.
    json j = json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.contains("step")) last = std::max(last, j["step"].get<int>());
  }
  return last;
}

int cmd_train(const TrainOpts& o) {
  RunConfig cfg = load_cfg(o.common);
  cfg.validate_paths(true, true, false);
  cfg.train.validate();
  cfg.decode.validate();

  std::vector<TaggedSentence> pool = load_conll(cfg.train_path, cfg.tag_column);
  std::vector<TaggedSentence> dev = load_conll(cfg.dev_path, cfg.tag_column);
  std::vector<TaggedSentence> test;
  if (!cfg.test_path.empty()) {
    cfg.validate_paths(false, false, true);
    test = load_conll(cfg.test_path, cfg.tag_column);
  }
  std::vector<TaggedSentence> train = effective_train_split(cfg, pool);
  std::vector<std::string> types = merged_types(train, dev);
  std::vector<EntailmentInstance> instances = build_pipeline_instances(cfg, train);

  if (o.dry_run) {
    MlmBackend model = make_or_load_backbone(cfg, train, dev, types);
    check_scorer_backbone(cfg, model);
    MlmScorer scorer(model, cfg.scorer, types);
    std::cout << "[train] dry run: config valid\n"
              << "  train sentences: " << train.size() << " (pool " << pool.size() << ")\n"
              << "  dev sentences: " << dev.size() << '\n'
              << "  types: " << join(types, ", ") << '\n'
              << "  instances: " << instances.size() << '\n'
              << "  vocab size: " << model.vocab().size() << '\n'
              << "  trainable tensors: " << scorer.trainable_parameters().size() << '\n';
    return 0;
  }

  const fs::path out = run_dir_of(cfg);
  const fs::path manifest = out / "run.json";
  if (fs::exists(manifest) && !o.force && !o.resume)
    throw ConfigError(manifest.string() +
                      " already exists; pass --force to overwrite or --resume to continue");

  const fs::path checkpoint = out / "checkpoint";
  int base_step = 0;
  MlmBackend model = [&] {
    if (!o.resume) return make_or_load_backbone(cfg, train, dev, types);
    if (!fs::exists(checkpoint / "config.json"))
      throw ConfigError("cannot resume: no checkpoint under " + checkpoint.string());
    try {
      return MlmBackend::load(checkpoint.string());
    } catch (const std::exception& e) {
      throw ConfigError("cannot resume: checkpoint is unreadable (" + std::string(e.what()) +
                        ")");
    }
  }();
  check_scorer_backbone(cfg, model);

  if (o.resume) {
    base_step = last_step_in_progress(out / "progress.jsonl");
    if (base_step >= cfg.train.max_steps) {
      std::cout << "[train] nothing to resume: " << base_step << " of " << cfg.train.max_steps
                << " steps already done\n";
      return 0;
    }
    // Optimizer moments are not checkpointed; the remaining budget restarts
    // with a fresh schedule from the best weights so far.
    cfg.train.max_steps -= base_step;
    std::cout << "[train] resuming at step " << base_step << ", " << cfg.train.max_steps
              << " steps remaining\n";
  }

  std::ofstream progress(out / "progress.jsonl", o.resume ? std::ios::app : std::ios::trunc);
  auto on_eval = [&](const EvalPoint& p) {
    json j = {{"step", base_step + p.step},
              {"train_loss", p.train_loss},
              {"precision", p.precision},
              {"recall", p.recall},
              {"f1", p.f1}};
    progress << j.dump() << '\n';
    progress.flush();
    std::cout << "  step " << base_step + p.step << "  loss " << p.train_loss << "  dev F1 "
              << p.f1 << '\n';
  };

  std::cout << "[train] " << instances.size() << " instances from " << train.size()
            << " sentences, " << cfg.train.max_steps << " steps\n";
  PipelineResult res =
      run_pipeline(model, cfg, pool, dev, test, {}, checkpoint.string(), on_eval);

  res.record.data_lineage = {{"train", cfg.train_path},
                             {"dev", cfg.dev_path},
                             {"test", cfg.test_path},
                             {"tag_column", cfg.tag_column},
                             {"kshot_k", cfg.kshot_k},
                             {"kshot_seed", cfg.kshot_seed},
                             {"train_sentences", res.train_sentence_count},
                             {"instances", res.instance_count},
                             {"resumed_from_step", base_step}};

  write_json_file(out / "transitions.json", tm_to_json(res.transitions));
  json doc = {{"run", run_record_to_json(res.record)},
              {"config", json(cfg)},
              {"types", res.types},
              {"tau", res.tau},
              {"dev", report_to_json(res.dev_report)}};
  if (!test.empty()) doc["test"] = report_to_json(res.test_report);
  write_json_file(manifest, doc);

  std::cout << "[train] best dev F1 " << res.record.best_f1 << " at step "
            << base_step + res.record.best_step << ", tau " << res.tau << '\n';
  if (!test.empty())
    std::cout << "[train] test P " << res.test_report.precision << " R "
              << res.test_report.recall << " F1 " << res.test_report.f1 << '\n';
  std::cout << "[train] manifest: " << manifest.string() << '\n';
  return 0;
}

// --- predict ---

struct PredictOpts {
  CommonOpts common;
  std::string input;
  std::string checkpoint;
  std::string transitions;
  std::string out_name = "predictions.conll";
  double tau = -1.0;
  bool raw = false;
};

MlmBackend load_checkpoint(const RunConfig& cfg, const std::string& flag) {
  std::string dir = flag;
  if (dir.empty()) dir = (fs::path(cfg.output_dir) / "checkpoint").string();
  if (!fs::exists(fs::path(dir) / "config.json"))
    throw ConfigError("no model checkpoint under " + dir);
  return MlmBackend::load(dir);
}

TransitionModel load_transitions(const RunConfig& cfg, const std::string& flag) {
  std::string path = flag;
  if (path.empty()) path = (fs::path(cfg.output_dir) / "transitions.json").string();
  if (!fs::exists(path))
    throw ConfigError("no transition table at " + path + "; train writes one per run");
  return tm_from_json(read_json_file(path));
}

int cmd_predict(const PredictOpts& o) {
  RunConfig cfg = load_cfg(o.common);
  std::string input = o.input.empty() ? cfg.test_path : o.input;
  if (input.empty()) throw ConfigError("no input: pass --input or set the test path");
  if (!fs::exists(input)) throw ConfigError("input path does not exist: " + input);

  std::vector<TaggedSentence> sentences =
      o.raw ? read_raw_sentences(input) : load_conll(input, cfg.tag_column);

  MlmBackend model = load_checkpoint(cfg, o.checkpoint);
  check_scorer_backbone(cfg, model);

  const fs::path out = run_dir_of(cfg);
  DecodeConfig decode = cfg.decode;
  if (o.tau >= 0.0) {
    decode.tau = o.tau;
  } else if (fs::exists(out / "run.json")) {
    json manifest = read_json_file(out / "run.json");
    if (manifest.contains("tau")) decode.tau = manifest["tau"].get<double>();
  }

  std::vector<std::vector<std::string>> pred;
  pred.reserve(sentences.size());
  if (cfg.scorer.candidate_mode == CandidateMode::word) {
    TransitionModel tm = load_transitions(cfg, o.transitions);
    MlmScorer scorer(model, cfg.scorer, tm.types);
    for (const auto& s : sentences) {
      EmissionMatrix em = build_emissions(s.tokens, scorer, tm.types, decode.null_mode);
      pred.push_back(labels_to_tags(viterbi(em, tm, decode), tm.types));
    }
    write_predictions(out / o.out_name, sentences, pred, !o.raw);
    std::cout << "[predict] tau " << decode.tau << ", " << sentences.size() << " sentences -> "
              << (out / o.out_name).string() << '\n';
  } else {
    json manifest_types;
    std::vector<std::string> types;
    if (fs::exists(out / "run.json")) {
      json manifest = read_json_file(out / "run.json");
      if (manifest.contains("types")) types = manifest["types"].get<std::vector<std::string>>();
    }
    if (types.empty()) {
      for (const auto& [t, w] : cfg.scorer.type_names.names()) types.push_back(t);
    }
    if (types.empty()) throw ConfigError("span prediction needs a type inventory");
    MlmScorer scorer(model, cfg.scorer, types);
    for (const auto& s : sentences) {
      auto mentions = decode_spans(s.tokens, scorer, types, cfg.max_span_length);
      pred.push_back(tags_from_mentions(mentions, s.tokens.size()));
    }
    write_predictions(out / o.out_name, sentences, pred, !o.raw);
    std::cout << "[predict] " << sentences.size() << " sentences -> "
              << (out / o.out_name).string() << '\n';
  }
  return 0;
}

// --- eval ---

struct EvalOpts {
  CommonOpts common;
  std::string gold;
  std::string pred;
  bool as_json = false;
};

int cmd_eval(const EvalOpts& o) {
  RunConfig cfg = load_cfg(o.common);
  std::string gold_path = o.gold.empty() ? cfg.test_path : o.gold;
  if (gold_path.empty()) throw ConfigError("no gold file: pass --gold or set the test path");
  std::string pred_path =
      o.pred.empty() ? (fs::path(cfg.output_dir) / "predictions.conll").string() : o.pred;
  if (!fs::exists(gold_path)) throw ConfigError("gold path does not exist: " + gold_path);
  if (!fs::exists(pred_path)) throw ConfigError("predictions path does not exist: " + pred_path);

  std::vector<TaggedSentence> gold = load_conll(gold_path, cfg.tag_column);
  std::vector<TaggedSentence> pred = load_conll(pred_path, -1);
  if (gold.size() != pred.size())
    throw ConfigError("gold has " + std::to_string(gold.size()) + " sentences, predictions " +
                      std::to_string(pred.size()));
  std::vector<std::vector<std::string>> pred_tags;
  pred_tags.reserve(pred.size());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].tokens != pred[i].tokens)
      throw ConfigError("token mismatch in sentence " + std::to_string(i) +
                        "; predictions do not align with the gold file");
    pred_tags.push_back(pred[i].tags);
  }

  EvalReport rep = score_tagged(gold, pred_tags);
  if (o.as_json) {
    std::cout << report_to_json(rep).dump(2) << '\n';
  } else {
    std::cout << report_to_text(rep);
  }
  const fs::path out = run_dir_of(cfg);
  write_json_file(out / "eval.json", report_to_json(rep));
  return 0;
}

// --- sweep-tau ---

struct SweepOpts {
  CommonOpts common;
  std::string checkpoint;
  std::string transitions;
};

int cmd_sweep_tau(const SweepOpts& o) {
  RunConfig cfg = load_cfg(o.common);
  cfg.validate_paths(false, true, false);
  if (cfg.scorer.candidate_mode != CandidateMode::word)
    throw ConfigError("tau applies to word-mode decoding only");

  std::vector<TaggedSentence> dev = load_conll(cfg.dev_path, cfg.tag_column);
  MlmBackend model = load_checkpoint(cfg, o.checkpoint);
  check_scorer_backbone(cfg, model);
  TransitionModel tm = load_transitions(cfg, o.transitions);
  MlmScorer scorer(model, cfg.scorer, tm.types);

  TauSelection sel =
      sweep_tau(dev, emission_fn(scorer, tm.types, cfg.decode.null_mode), tm, cfg.decode.grid);
  json sweep = json::array();
  for (const auto& [tau, f1] : sel.sweep) {
    std::cout << "  tau " << tau << "  dev F1 " << f1 << '\n';
    sweep.push_back({{"tau", tau}, {"f1", f1}});
  }
  std::cout << "[sweep-tau] selected tau " << sel.tau << " (dev F1 " << sel.report.f1 << ")\n";
  const fs::path out = run_dir_of(cfg);
  write_json_file(out / "tau_sweep.json",
                  {{"tau", sel.tau}, {"dev", report_to_json(sel.report)}, {"sweep", sweep}});
  return 0;
}

// --- ablate ---

struct AblateOpts {
  CommonOpts common;
  bool smoke = false;
  std::string out_dir;
  std::vector<std::string> settings;
  std::vector<int> patterns;
  std::vector<int> ks;
  std::vector<std::uint64_t> seeds;
};

AblationPlan plan_from(const AblateOpts& o, int default_pattern) {
  AblationPlan plan;
  for (const auto& name : o.settings) {
    AblationSetting s;
    s.name = name;
    if (name != "full")
      for (const auto& part : split_ws(
               [&] {  // '+' joins toggles within one setting
                 std::string spaced = name;
                 for (auto& c : spaced)
                   if (c == '+') c = ' ';
                 return spaced;
               }()))
        s.toggles.insert(toggle_from_string(part));
    plan.settings.push_back(std::move(s));
  }
  plan.patterns = o.patterns.empty() ? std::vector<int>{default_pattern} : o.patterns;
  plan.k_values = o.ks;
  plan.seeds = o.seeds;
  return plan;
}

int cmd_ablate(const AblateOpts& o) {
  std::vector<AblationCell> cells;
  fs::path out;
  if (o.smoke) {
    out = o.out_dir.empty() ? fs::path("runs/ablation-smoke") : fs::path(o.out_dir);
    fs::create_directories(out);
    AblateOpts defaults = o;
    if (defaults.settings.empty()) defaults.settings = {"full", "drop_null_negatives"};
    if (defaults.seeds.empty()) defaults.seeds = {42, 43, 44};
    AblationPlan plan = plan_from(defaults, 1);
    std::cout << "[ablate] preparing shared backbone\n";
    smoke::Dataset data = smoke::dataset();
    MlmBackend backbone = smoke::shared_backbone();
    std::cout << "[ablate] running " << plan.settings.size() << " settings x "
              << plan.seeds.size() << " seeds\n";
    cells = run_ablation(plan, smoke::cell_runner(backbone, data));
  } else {
    RunConfig cfg = load_cfg(o.common);
    cfg.validate_paths(true, true, true);
    out = o.out_dir.empty() ? run_dir_of(cfg) : fs::path(o.out_dir);
    fs::create_directories(out);

    std::vector<TaggedSentence> pool = load_conll(cfg.train_path, cfg.tag_column);
    std::vector<TaggedSentence> dev = load_conll(cfg.dev_path, cfg.tag_column);
    std::vector<TaggedSentence> test = load_conll(cfg.test_path, cfg.tag_column);
    std::vector<std::string> types = merged_types(pool, dev);
    MlmBackend backbone = make_or_load_backbone(cfg, pool, dev, types);
    check_scorer_backbone(cfg, backbone);

    AblateOpts defaults = o;
    if (defaults.settings.empty())
      defaults.settings = {"full", "drop_null_negatives", "drop_fp_negatives",
                           "drop_nonent_negatives", "disable_label_conditioning"};
    AblationPlan plan = plan_from(defaults, cfg.scorer.pattern_id);
    auto runner = [&](const AblationCell& cell) {
      RunConfig rc = cfg;
      rc.kshot_seed = cell.seed;
      rc.sampling.seed = cell.seed + 7;
      rc.train.seed = cell.seed;
      rc.scorer.pattern_id = cell.pattern_id;
      if (cell.k > 0) rc.kshot_k = cell.k;
      MlmBackend model = backbone;
      PipelineResult res = run_pipeline(model, rc, pool, dev, test, cell.toggles);
      CellResult r;
      r.f1 = res.test_report.f1;
      for (const auto& e : res.record.evals) r.learning_curve.emplace_back(e.step, e.f1);
      return r;
    };
    cells = run_ablation(plan, runner);
  }

  std::cout << cells_to_table(cells);
  write_json_file(out / "ablation.json", cells_to_json(cells));
  std::cout << "[ablate] wrote " << (out / "ablation.json").string() << '\n';
  for (const auto& c : cells)
    if (c.failed) {
      std::cout << "[ablate] cell '" << c.setting << "' seed " << c.seed
                << " failed: " << c.error << '\n';
      return 1;
    }
  return 0;
}

// --- pretrain-backbone ---

struct PretrainOpts {
  CommonOpts common;
  std::string text;
  std::string out_dir;
  bool synthetic = false;
  int synthetic_sentences = 12000;
  std::uint64_t synthetic_seed = 7;
  std::vector<std::string> types;
  PretrainConfig pc = smoke::pretrain_config();
};

int cmd_pretrain_backbone(const PretrainOpts& o) {
  if (o.text.empty() == !o.synthetic)
    throw ConfigError("pass exactly one of --text or --synthetic");
  std::string out_dir = o.out_dir;
  if (out_dir.empty()) {
    const std::string cache = cache_dir_env();
    if (cache.empty())
      throw ConfigError("pass --out or set ENTNER_CACHE_DIR for the default location");
    out_dir = (fs::path(cache) / "backbone").string();
  }

  RunConfig cfg;
  MlmConfig mc = smoke::backbone_config();
  if (!o.common.config.empty()) {
    cfg = load_cfg(o.common);
    mc = cfg.model;
  }

  std::vector<std::vector<std::string>> text =
      o.synthetic ? synth::make_pretrain_text(o.synthetic_sentences, o.synthetic_seed)
                  : read_text_lines(o.text);
  std::vector<std::string> types = o.types.empty() ? synth::type_inventory() : o.types;
  Vocab vocab = Vocab::build(text, prompt_vocab_extras(cfg.scorer, types));

  std::cout << "[pretrain-backbone] " << text.size() << " sentences, vocab " << vocab.size()
            << ", " << o.pc.steps << " steps\n";
  MlmBackend model(vocab, mc);
  double loss = pretrain_mlm(model, text, o.pc, [](int step, double l) {
    if (step % 1000 == 0) std::cout << "  step " << step << "  loss " << l << '\n';
  });
  model.save(out_dir);
  std::cout << "[pretrain-backbone] final loss " << loss << ", saved to " << out_dir << '\n';
  return 0;
}

// --- make-synthetic ---

struct SynthOpts {
  std::string out_dir;
  int train_n = 200, dev_n = 60, test_n = 60;
  std::uint64_t train_seed = 1, dev_seed = 2, test_seed = 3;
  int pretrain_n = 12000;
  std::uint64_t pretrain_seed = 7;
};

int cmd_make_synthetic(const SynthOpts& o) {
  fs::path out(o.out_dir);
  fs::create_directories(out);
  write_conll((out / "train.conll").string(), synth::make_corpus(o.train_n, o.train_seed));
  write_conll((out / "dev.conll").string(), synth::make_corpus(o.dev_n, o.dev_seed));
  write_conll((out / "test.conll").string(), synth::make_corpus(o.test_n, o.test_seed));
  write_text_lines(out / "pretrain.txt", synth::make_pretrain_text(o.pretrain_n, o.pretrain_seed));

  RunConfig cfg = smoke::run_config(42);
  cfg.train_path = (out / "train.conll").string();
  cfg.dev_path = (out / "dev.conll").string();
  cfg.test_path = (out / "test.conll").string();
  cfg.backbone_dir = (out / "backbone").string();
  cfg.output_dir = (out / "run").string();
  cfg.model = smoke::backbone_config();
  write_json_file(out / "config.json", json(cfg));

  std::cout << "[make-synthetic] wrote train/dev/test conll, pretrain.txt and config.json under "
            << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot named entity tagging via prompt-based entailment scoring"};
  app.require_subcommand(1);
  int rc = 0;

  PrepareOpts prepare;
  auto* sc_prepare = app.add_subcommand(
      "prepare", "load splits, apply K-shot sampling, write summary and sampled files");
  add_common(sc_prepare, prepare.common);
  sc_prepare->callback([&] { rc = cmd_prepare(prepare); });

  BuildOpts build;
  auto* sc_build =
      app.add_subcommand("build-instances", "render entailment instances to instances.jsonl");
  add_common(sc_build, build.common);
  sc_build->callback([&] { rc = cmd_build_instances(build); });

  TrainOpts train;
  auto* sc_train = app.add_subcommand("train", "fine-tune on entailment instances");
  add_common(sc_train, train.common);
  sc_train->add_flag("--dry-run", train.dry_run, "validate config and counts, do not train");
  sc_train->add_flag("--force", train.force, "overwrite an existing run manifest");
  sc_train->add_flag("--resume", train.resume, "continue from the run's last checkpoint");
  sc_train->callback([&] { rc = cmd_train(train); });

  PredictOpts predict;
  auto* sc_predict = app.add_subcommand("predict", "tag sentences with a trained checkpoint");
  add_common(sc_predict, predict.common);
  sc_predict->add_option("--input", predict.input, "conll file (default: test path)");
  sc_predict->add_option("--checkpoint", predict.checkpoint,
                         "model directory (default: <output_dir>/checkpoint)");
  sc_predict->add_option("--transitions", predict.transitions,
                         "transition table (default: <output_dir>/transitions.json)");
  sc_predict->add_option("--out", predict.out_name, "output file name inside the run directory");
  sc_predict->add_option("--tau", predict.tau, "transition weight (default: from run.json)");
  sc_predict->add_flag("--raw", predict.raw,
                       "input is plain text, one space-tokenized sentence per line");
  sc_predict->callback([&] { rc = cmd_predict(predict); });

  EvalOpts eval;
  auto* sc_eval = app.add_subcommand("eval", "score a predictions file against gold");
  add_common(sc_eval, eval.common);
  sc_eval->add_option("--gold", eval.gold, "gold conll file (default: test path)");
  sc_eval->add_option("--pred", eval.pred,
                      "predictions file (default: <output_dir>/predictions.conll)");
  sc_eval->add_flag("--json", eval.as_json, "print the report as json");
  sc_eval->callback([&] { rc = cmd_eval(eval); });

  SweepOpts sweep;
  auto* sc_sweep = app.add_subcommand("sweep-tau", "grid-search tau on the dev split");
  add_common(sc_sweep, sweep.common);
  sc_sweep->add_option("--checkpoint", sweep.checkpoint,
                       "model directory (default: <output_dir>/checkpoint)");
  sc_sweep->add_option("--transitions", sweep.transitions,
                       "transition table (default: <output_dir>/transitions.json)");
  sc_sweep->callback([&] { rc = cmd_sweep_tau(sweep); });

  AblateOpts ablate;
  auto* sc_ablate = app.add_subcommand("ablate", "run an ablation plan and tabulate test F1");
  add_common(sc_ablate, ablate.common, false);
  sc_ablate->add_flag("--smoke", ablate.smoke,
                      "use the built-in synthetic corpus and pinned small backbone");
  sc_ablate->add_option("--out", ablate.out_dir, "output directory for ablation.json");
  sc_ablate->add_option("--setting", ablate.settings,
                        "setting name: full, drop_null_negatives, drop_fp_negatives, "
                        "drop_nonent_negatives, disable_label_conditioning, soft_mode, "
                        "discrete_mode; join toggles with '+'");
  sc_ablate->add_option("--pattern", ablate.patterns, "pattern ids to cross (1..4)");
  sc_ablate->add_option("--k", ablate.ks, "K values to cross");
  sc_ablate->add_option("--seed", ablate.seeds, "seeds to cross");
  sc_ablate->callback([&] { rc = cmd_ablate(ablate); });

  PretrainOpts pretrain;
  auto* sc_pretrain =
      app.add_subcommand("pretrain-backbone", "masked-token pretraining for a fresh backbone");
  add_common(sc_pretrain, pretrain.common, false);
  sc_pretrain->add_option("--text", pretrain.text,
                          "pretraining text, one space-tokenized sentence per line");
  sc_pretrain->add_flag("--synthetic", pretrain.synthetic, "use generated synthetic sentences");
  sc_pretrain->add_option("--synthetic-sentences", pretrain.synthetic_sentences,
                          "sentence count for --synthetic");
  sc_pretrain->add_option("--synthetic-seed", pretrain.synthetic_seed, "seed for --synthetic");
  sc_pretrain->add_option("--types", pretrain.types,
                          "entity types whose prompt words join the vocabulary");
  sc_pretrain->add_option("--out", pretrain.out_dir,
                          "checkpoint directory (default: $ENTNER_CACHE_DIR/backbone)");
  sc_pretrain->add_option("--steps", pretrain.pc.steps, "optimizer steps");
  sc_pretrain->add_option("--batch", pretrain.pc.batch, "sentences per step");
  sc_pretrain->add_option("--lr", pretrain.pc.lr, "peak learning rate");
  sc_pretrain->add_option("--mask-rate", pretrain.pc.mask_rate, "token masking rate");
  sc_pretrain->add_option("--seed", pretrain.pc.seed, "rng seed");
  sc_pretrain->callback([&] { rc = cmd_pretrain_backbone(pretrain); });

  SynthOpts synth_opts;
  auto* sc_synth =
      app.add_subcommand("make-synthetic", "write a synthetic corpus, pretraining text and config");
  sc_synth->add_option("--out", synth_opts.out_dir, "output directory")->required();
  sc_synth->add_option("--train-sentences", synth_opts.train_n, "training pool size");
  sc_synth->add_option("--dev-sentences", synth_opts.dev_n, "dev split size");
  sc_synth->add_option("--test-sentences", synth_opts.test_n, "test split size");
  sc_synth->add_option("--pretrain-sentences", synth_opts.pretrain_n, "pretraining text size");
  sc_synth->callback([&] { rc = cmd_make_synthetic(synth_opts); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const SamplingError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return rc;
}
