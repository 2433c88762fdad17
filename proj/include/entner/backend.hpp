// Word-level masked-LM backbone: a small pre-LN transformer encoder with
// tied input/output embeddings, plus the vocabulary and a directory
// checkpoint format (config.json + weights.bin, raw doubles).
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "entner/common.hpp"
#include "entner/nn.hpp"
#include "entner/prompting.hpp"

namespace entner {

struct Vocab {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> ids;
  int pad_id = 0, unk_id = 1, mask_id = -1, sep_id = -1;

  int add(const std::string& tok) {
    auto it = ids.find(tok);
    if (it != ids.end()) return it->second;
    if (tok.rfind(kSoftPrefix, 0) == 0)
      throw ConfigError("vocabulary token collides with soft slot namespace: " + tok);
    int id = static_cast<int>(tokens.size());
    tokens.push_back(tok);
    ids.emplace(tok, id);
    return id;
  }

  int id(const std::string& tok) const {
    auto it = ids.find(tok);
    return it == ids.end() ? unk_id : it->second;
  }

  bool contains(const std::string& tok) const { return ids.count(tok) > 0; }
  int size() const { return static_cast<int>(tokens.size()); }

  std::vector<int> encode(const std::vector<std::string>& toks) const {
    std::vector<int> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id(t));
    return out;
  }

  // Specials first, then corpus tokens by descending frequency (ties by
  // first appearance), then any extra tokens (template words, verbalizers).
  static Vocab build(const std::vector<std::vector<std::string>>& corpus,
                     const std::vector<std::string>& extra) {
    Vocab v;
    v.pad_id = v.add("[PAD]");
    v.unk_id = v.add("[UNK]");
    v.mask_id = v.add(kMaskToken);
    v.sep_id = v.add(kSepToken);
    for (const char* t : {"?", ".", ",", kOpenQuote, kCloseQuote}) v.add(t);
    std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> freq;  // count, first idx
    std::size_t ord = 0;
    for (const auto& sent : corpus)
      for (const auto& tok : sent) freq.try_emplace(tok, 0, ord++).first->second.first++;
    std::vector<const std::pair<const std::string, std::pair<std::size_t, std::size_t>>*> order;
    order.reserve(freq.size());
    for (const auto& kv : freq) order.push_back(&kv);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) {
      if (a->second.first != b->second.first) return a->second.first > b->second.first;
      return a->second.second < b->second.second;
    });
    for (auto* kv : order) v.add(kv->first);
    for (const auto& t : extra) v.add(t);
    return v;
  }
};

struct MlmConfig {
  int hidden = 64;
  int layers = 2;
  int heads = 4;
  int ffn = 128;
  int max_seq = 256;
  double dropout = 0.1;
  std::uint64_t seed = 7;
};

inline void to_json(nlohmann::json& j, const MlmConfig& c) {
  j = {{"hidden", c.hidden}, {"layers", c.layers},   {"heads", c.heads}, {"ffn", c.ffn},
       {"max_seq", c.max_seq}, {"dropout", c.dropout}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, MlmConfig& c) {
  j.at("hidden").get_to(c.hidden);
  j.at("layers").get_to(c.layers);
  j.at("heads").get_to(c.heads);
  j.at("ffn").get_to(c.ffn);
  j.at("max_seq").get_to(c.max_seq);
  j.at("dropout").get_to(c.dropout);
  j.at("seed").get_to(c.seed);
}

// Positions paired with the extra-table row they read from, for inputs
// that mix vocabulary tokens with learnable soft-prompt slots.
struct SoftBinding {
  std::string family;           // key into extras(), e.g. "soft:typed:person"
  std::vector<int> positions;   // input positions occupied by slots
  std::vector<int> rows;        // slot index per position
};

class MlmBackend {
 public:
  MlmBackend() = default;

  MlmBackend(Vocab vocab, MlmConfig cfg) : vocab_(std::move(vocab)), cfg_(cfg) {
    if (cfg_.hidden % cfg_.heads != 0) throw ConfigError("hidden size not divisible by heads");
    std::mt19937_64 rng(cfg_.seed);
    auto mk = [&](const std::string& name, int r, int c, bool zero = false) {
      core_.emplace_back(name, r, c);
      if (!zero) nn::normal_init(core_.back(), 0.02, rng);
      return static_cast<int>(core_.size() - 1);
    };
    core_.reserve(5 + static_cast<std::size_t>(cfg_.layers) * 16);
    mk("tok_emb", vocab_.size(), cfg_.hidden);
    mk("pos_emb", cfg_.max_seq, cfg_.hidden);
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      int g1 = mk(p + "ln1_g", 1, cfg_.hidden, true);
      core_[g1].value.setOnes();
      mk(p + "ln1_b", 1, cfg_.hidden, true);
      mk(p + "wq", cfg_.hidden, cfg_.hidden);
      mk(p + "bq", 1, cfg_.hidden, true);
      mk(p + "wk", cfg_.hidden, cfg_.hidden);
      mk(p + "bk", 1, cfg_.hidden, true);
      mk(p + "wv", cfg_.hidden, cfg_.hidden);
      mk(p + "bv", 1, cfg_.hidden, true);
      mk(p + "wo", cfg_.hidden, cfg_.hidden);
      mk(p + "bo", 1, cfg_.hidden, true);
      int g2 = mk(p + "ln2_g", 1, cfg_.hidden, true);
      core_[g2].value.setOnes();
      mk(p + "ln2_b", 1, cfg_.hidden, true);
      mk(p + "w1", cfg_.hidden, cfg_.ffn);
      mk(p + "b1", 1, cfg_.ffn, true);
      mk(p + "w2", cfg_.ffn, cfg_.hidden);
      mk(p + "b2", 1, cfg_.hidden, true);
    }
    int gf = mk("lnf_g", 1, cfg_.hidden, true);
    core_[gf].value.setOnes();
    mk("lnf_b", 1, cfg_.hidden, true);
    mk("out_bias", 1, vocab_.size(), true);
    index_core();
  }

  const Vocab& vocab() const { return vocab_; }
  const MlmConfig& config() const { return cfg_; }

  // Train-time override; checkpoints persist whatever is current.
  void set_dropout(double d) {
    if (d < 0.0 || d >= 1.0) throw ConfigError("dropout must lie in [0,1)");
    cfg_.dropout = d;
  }

  nn::Parameter& core(const std::string& name) {
    auto it = core_index_.find(name);
    if (it == core_index_.end()) throw ConfigError("unknown backbone parameter: " + name);
    return core_[it->second];
  }

  // Named auxiliary tables (soft prompt slots, tag head). Created on first
  // use; persisted alongside the backbone.
  nn::Parameter& extra(const std::string& name, int rows, int cols) {
    auto it = extras_.find(name);
    if (it != extras_.end()) {
      if (it->second.value.rows() != rows || it->second.value.cols() != cols)
        throw ConfigError("shape mismatch for auxiliary parameter: " + name);
      return it->second;
    }
    auto [pos, ok] = extras_.emplace(name, nn::Parameter(name, rows, cols));
    return pos->second;
  }

  bool has_extra(const std::string& name) const { return extras_.count(name) > 0; }

  std::vector<nn::Parameter*> parameters(bool include_extras = true) {
    std::vector<nn::Parameter*> out;
    for (auto& p : core_) out.push_back(&p);
    if (include_extras)
      for (auto& [k, p] : extras_) out.push_back(&p);
    return out;
  }

  std::vector<nn::Parameter*> extra_parameters(const std::string& prefix) {
    std::vector<nn::Parameter*> out;
    for (auto& [k, p] : extras_)
      if (k.rfind(prefix, 0) == 0) out.push_back(&p);
    return out;
  }

  // Hidden states (L x H) after the final layer norm.
  nn::Node* encode(nn::Graph& g, const std::vector<int>& ids, const SoftBinding* soft = nullptr,
                   bool train = false, std::mt19937_64* rng = nullptr) {
    const int L = static_cast<int>(ids.size());
    if (L == 0) throw std::invalid_argument("empty input to backbone");
    if (L > cfg_.max_seq) throw ConfigError("input length exceeds max sequence length");
    const double drop = train ? cfg_.dropout : 0.0;
    if (drop > 0.0 && rng == nullptr) throw std::invalid_argument("training forward needs an rng");

    std::vector<int> mixed = ids;
    nn::Parameter* soft_table = nullptr;
    if (soft && !soft->positions.empty()) {
      auto it = extras_.find(soft->family);
      if (it == extras_.end()) throw ConfigError("uninitialized soft slot table: " + soft->family);
      soft_table = &it->second;
      for (std::size_t i = 0; i < soft->positions.size(); ++i)
        mixed[soft->positions[i]] = ~soft->rows[i];
    }

    nn::Node* x = g.embed(core("tok_emb"), mixed, soft_table);
    std::vector<int> pos(L);
    for (int i = 0; i < L; ++i) pos[i] = i;
    x = g.add(x, g.embed(core("pos_emb"), pos));
    if (drop > 0.0) x = g.dropout(x, drop, *rng);

    const int dh = cfg_.hidden / cfg_.heads;
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      nn::Node* h = g.layer_norm(x, g.param(core(p + "ln1_g")), g.param(core(p + "ln1_b")));
      nn::Node* q = g.add_rowvec(g.matmul(h, g.param(core(p + "wq"))), g.param(core(p + "bq")));
      nn::Node* k = g.add_rowvec(g.matmul(h, g.param(core(p + "wk"))), g.param(core(p + "bk")));
      nn::Node* v = g.add_rowvec(g.matmul(h, g.param(core(p + "wv"))), g.param(core(p + "bv")));
      std::vector<nn::Node*> ctx;
      for (int hd = 0; hd < cfg_.heads; ++hd) {
        nn::Node* qh = g.slice_cols(q, hd * dh, dh);
        nn::Node* kh = g.slice_cols(k, hd * dh, dh);
        nn::Node* vh = g.slice_cols(v, hd * dh, dh);
        nn::Node* att = g.softmax_rows(g.scale(g.matmul_nt(qh, kh), 1.0 / std::sqrt(dh)));
        if (drop > 0.0) att = g.dropout(att, drop, *rng);
        ctx.push_back(g.matmul(att, vh));
      }
      nn::Node* merged = cfg_.heads == 1 ? ctx[0] : g.concat_cols(ctx);
      nn::Node* att_out =
          g.add_rowvec(g.matmul(merged, g.param(core(p + "wo"))), g.param(core(p + "bo")));
      if (drop > 0.0) att_out = g.dropout(att_out, drop, *rng);
      x = g.add(x, att_out);

      nn::Node* h2 = g.layer_norm(x, g.param(core(p + "ln2_g")), g.param(core(p + "ln2_b")));
      nn::Node* ff = g.add_rowvec(g.matmul(h2, g.param(core(p + "w1"))), g.param(core(p + "b1")));
      ff = g.gelu(ff);
      ff = g.add_rowvec(g.matmul(ff, g.param(core(p + "w2"))), g.param(core(p + "b2")));
      if (drop > 0.0) ff = g.dropout(ff, drop, *rng);
      x = g.add(x, ff);
    }
    return g.layer_norm(x, g.param(core("lnf_g")), g.param(core("lnf_b")));
  }

  // Per-position vocabulary logits (L x V); output weights tied to the
  // input embedding table.
  nn::Node* logits(nn::Graph& g, const std::vector<int>& ids, const SoftBinding* soft = nullptr,
                   bool train = false, std::mt19937_64* rng = nullptr) {
    nn::Node* h = encode(g, ids, soft, train, rng);
    return g.add_rowvec(g.matmul_nt(h, g.param(core("tok_emb"))), g.param(core("out_bias")));
  }

  Eigen::RowVectorXd mask_logits(const std::vector<int>& ids, int mask_pos,
                                 const SoftBinding* soft = nullptr) {
    nn::Graph g(false);
    nn::Node* z = logits(g, ids, soft, false, nullptr);
    return z->value.row(mask_pos);
  }

  void save(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json j;
    j["model"] = cfg_;
    j["vocab"] = vocab_.tokens;
    nlohmann::json ex = nlohmann::json::object();
    for (const auto& [k, p] : extras_) ex[k] = {p.value.rows(), p.value.cols()};
    j["extras"] = ex;
    std::ofstream cf(fs::path(dir) / "config.json");
    cf << j.dump(2) << '\n';
    if (!cf) throw ParseError("cannot write checkpoint config in " + dir);

    std::ofstream wf(fs::path(dir) / "weights.bin", std::ios::binary);
    auto dump = [&wf](const nn::Parameter& p) {
      std::uint32_t nlen = static_cast<std::uint32_t>(p.name.size());
      std::uint64_t r = p.value.rows(), c = p.value.cols();
      wf.write(reinterpret_cast<const char*>(&nlen), sizeof nlen);
      wf.write(p.name.data(), nlen);
      wf.write(reinterpret_cast<const char*>(&r), sizeof r);
      wf.write(reinterpret_cast<const char*>(&c), sizeof c);
      wf.write(reinterpret_cast<const char*>(p.value.data()),
               static_cast<std::streamsize>(sizeof(double) * p.value.size()));
    };
    for (const auto& p : core_) dump(p);
    for (const auto& [k, p] : extras_) dump(p);
    if (!wf) throw ParseError("cannot write checkpoint weights in " + dir);
  }

  static MlmBackend load(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream cf(fs::path(dir) / "config.json");
    if (!cf) throw ParseError("missing checkpoint config in " + dir);
    nlohmann::json j;
    try {
      cf >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("corrupt checkpoint config in " + dir + ": " + e.what());
    }
    Vocab v;
    for (const auto& t : j.at("vocab")) {
      v.tokens.push_back(t.get<std::string>());
      v.ids.emplace(v.tokens.back(), static_cast<int>(v.tokens.size() - 1));
    }
    v.pad_id = v.id("[PAD]");
    v.unk_id = v.id("[UNK]");
    v.mask_id = v.id(kMaskToken);
    v.sep_id = v.id(kSepToken);
    MlmBackend m(std::move(v), j.at("model").get<MlmConfig>());
    for (auto it = j.at("extras").begin(); it != j.at("extras").end(); ++it)
      m.extra(it.key(), it.value()[0].get<int>(), it.value()[1].get<int>());

    std::ifstream wf(fs::path(dir) / "weights.bin", std::ios::binary);
    if (!wf) throw ParseError("missing checkpoint weights in " + dir);
    std::size_t loaded = 0;
    while (true) {
      std::uint32_t nlen = 0;
      wf.read(reinterpret_cast<char*>(&nlen), sizeof nlen);
      if (wf.eof()) break;
      std::string name(nlen, '\0');
      std::uint64_t r = 0, c = 0;
      wf.read(name.data(), nlen);
      wf.read(reinterpret_cast<char*>(&r), sizeof r);
      wf.read(reinterpret_cast<char*>(&c), sizeof c);
      nn::Parameter* p = nullptr;
      if (m.core_index_.count(name)) {
        p = &m.core(name);
      } else if (m.extras_.count(name)) {
        p = &m.extras_.at(name);
      } else {
        throw ParseError("checkpoint weight not declared in config: " + name);
      }
      if (static_cast<std::uint64_t>(p->value.rows()) != r ||
          static_cast<std::uint64_t>(p->value.cols()) != c)
        throw ParseError("checkpoint shape mismatch for " + name);
      wf.read(reinterpret_cast<char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(double) * p->value.size()));
      if (!wf) throw ParseError("truncated checkpoint weights in " + dir);
      ++loaded;
    }
    if (loaded != m.core_.size() + m.extras_.size())
      throw ParseError("checkpoint weight count mismatch in " + dir);
    return m;
  }

 private:
  void index_core() {
    core_index_.clear();
    for (std::size_t i = 0; i < core_.size(); ++i) core_index_[core_[i].name] = i;
  }

  Vocab vocab_;
  MlmConfig cfg_;
  std::vector<nn::Parameter> core_;
  std::unordered_map<std::string, std::size_t> core_index_;
  std::map<std::string, nn::Parameter> extras_;
};

// Masked-token pretraining over plain sentences. Each step samples
// `batch` sentences, masks ~mask_rate of the positions (at least one),
// and minimizes recovery cross-entropy.
struct PretrainConfig {
  int steps = 2000;
  int batch = 8;
  double lr = 3e-4;
  double weight_decay = 0.01;
  double warmup_ratio = 0.06;
  double mask_rate = 0.15;
  std::uint64_t seed = 11;
};

inline double pretrain_mlm(MlmBackend& model, const std::vector<std::vector<std::string>>& text,
                           const PretrainConfig& cfg,
                           const std::function<void(int, double)>& progress = nullptr) {
  if (text.empty()) throw ConfigError("no pretraining text");
  std::mt19937_64 rng(cfg.seed);
  nn::AdamW opt(cfg.weight_decay);
  auto params = model.parameters(false);
  std::uniform_int_distribution<std::size_t> pick(0, text.size() - 1);
  double last_loss = 0.0;
  for (int step = 1; step <= cfg.steps; ++step) {
    opt.zero_grad(params);
    double batch_loss = 0.0;
    int used = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& sent = text[pick(rng)];
      if (sent.empty()) continue;
      std::vector<int> ids = model.vocab().encode(sent);
      if (static_cast<int>(ids.size()) > model.config().max_seq)
        ids.resize(model.config().max_seq);
      int n_mask = std::max<int>(1, static_cast<int>(cfg.mask_rate * ids.size()));
      std::vector<int> positions(ids.size());
      std::iota(positions.begin(), positions.end(), 0);
      std::shuffle(positions.begin(), positions.end(), rng);
      positions.resize(n_mask);
      std::vector<int> targets;
      std::vector<int> input = ids;
      for (int p : positions) {
        targets.push_back(ids[p]);
        input[p] = model.vocab().mask_id;
      }
      nn::Graph g(true);
      nn::Node* z = model.logits(g, input, nullptr, true, &rng);
      nn::Node* loss = g.rows_cross_entropy(z, positions, targets);
      nn::Node* scaled = g.scale(loss, 1.0 / cfg.batch);
      g.backward(scaled);
      batch_loss += loss->value(0, 0) / cfg.batch;
      ++used;
    }
    if (used == 0) continue;
    if (!std::isfinite(batch_loss))
      throw std::runtime_error("non-finite pretraining loss at step " + std::to_string(step));
    opt.step(params, nn::scheduled_lr(step, cfg.steps, cfg.warmup_ratio, cfg.lr));
    last_loss = batch_loss;
    if (progress && step % 200 == 0) progress(step, batch_loss);
  }
  return last_loss;
}

}  // namespace entner
