// Sequence decoding: per-word entailment scores become an emission matrix
// (one column per entity type plus NULL), transitions are counted on the
// training set with add-one smoothing, and a tau-weighted Viterbi produces
// the tag sequence. Span mode skips Viterbi and greedily accepts
// non-overlapping spans.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "entner/common.hpp"
#include "entner/corpus.hpp"
#include "entner/evaluation.hpp"
#include "entner/scoring.hpp"

namespace entner {

// How the NULL column is filled: the null template's own entail score, or
// one minus the best typed score.
enum class NullEmissionMode { null_template, one_minus_max };

struct EmissionMatrix {
  Eigen::MatrixXd scores;          // L x (T+1); last column is NULL
  std::vector<std::string> types;  // column order for the T typed columns

  Eigen::Index null_col() const { return static_cast<Eigen::Index>(types.size()); }
};

struct TransitionModel {
  Eigen::MatrixXd trans;  // (T+1) x (T+1), row-stochastic
  Eigen::VectorXd start;  // (T+1)
  std::vector<std::string> types;
};

inline std::vector<double> tau_grid(double start = 0.0, double end = 1.0, double step = 0.05) {
  std::vector<double> grid;
  const int n = static_cast<int>(std::round((end - start) / step));
  for (int i = 0; i <= n; ++i) grid.push_back(std::min(start + i * step, end));
  return grid;
}

struct DecodeConfig {
  double tau = 0.0;
  std::vector<double> grid = tau_grid();
  NullEmissionMode null_mode = NullEmissionMode::null_template;

  void validate() const {
    if (tau < 0.0 || tau > 1.0) throw ConfigError("tau must lie in [0,1]");
    for (double g : grid)
      if (g < 0.0 || g > 1.0) throw ConfigError("tau grid value out of [0,1]");
  }
};

// Word-mode emissions: 2L scorer calls per type column would be wasted, so
// each word asks T typed hypotheses plus the null hypothesis once; rows are
// then normalized into distributions.
inline EmissionMatrix build_emissions(const std::vector<std::string>& tokens,
                                      EntailmentScorer& scorer,
                                      const std::vector<std::string>& types,
                                      NullEmissionMode null_mode = NullEmissionMode::null_template) {
  if (types.empty()) throw ConfigError("emission matrix needs at least one entity type");
  EmissionMatrix em;
  em.types = types;
  const Eigen::Index L = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index T = static_cast<Eigen::Index>(types.size());
  em.scores.resize(L, T + 1);
  for (Eigen::Index i = 0; i < L; ++i) {
    const std::size_t w = static_cast<std::size_t>(i);
    try {
      for (Eigen::Index t = 0; t < T; ++t)
        em.scores(i, t) = scorer.entail_probability(tokens, w, w + 1, types[t]);
      em.scores(i, T) = null_mode == NullEmissionMode::null_template
                            ? scorer.entail_probability(tokens, w, w + 1, "")
                            : 1.0 - em.scores.row(i).head(T).maxCoeff();
    } catch (const std::exception& e) {
      throw std::runtime_error("scorer failed at word " + std::to_string(w) + " ('" + tokens[w] +
                               "'): " + e.what());
    }
    em.scores(i, T) = std::clamp(em.scores(i, T), 0.0, 1.0);
    double sum = em.scores.row(i).sum();
    if (sum <= 0.0) {
      em.scores.row(i).setConstant(1.0 / static_cast<double>(T + 1));
    } else {
      em.scores.row(i) /= sum;
    }
  }
  return em;
}

// Word-level label per token: its entity type, or NULL for O. Counts are
// add-one smoothed so every transition stays strictly positive.
inline TransitionModel estimate_transitions(const std::vector<TaggedSentence>& train,
                                            const std::vector<std::string>& types) {
  if (train.empty()) throw std::invalid_argument("transition estimation needs sentences");
  TransitionModel tm;
  tm.types = types;
  const Eigen::Index T = static_cast<Eigen::Index>(types.size());
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(T + 1, T + 1);
  Eigen::VectorXd starts = Eigen::VectorXd::Zero(T + 1);
  auto label_of = [&](const std::string& tag) -> Eigen::Index {
    const std::string t = tag_type(tag);
    if (t.empty()) return T;
    auto it = std::find(types.begin(), types.end(), t);
    if (it == types.end()) return T;  // unlisted types decode as NULL
    return static_cast<Eigen::Index>(it - types.begin());
  };
  std::size_t n_sentences = 0;
  for (const auto& s : train) {
    if (s.tokens.empty()) continue;
    ++n_sentences;
    Eigen::Index prev = label_of(s.tags[0]);
    starts(prev) += 1.0;
    for (std::size_t i = 1; i < s.tags.size(); ++i) {
      Eigen::Index cur = label_of(s.tags[i]);
      counts(prev, cur) += 1.0;
      prev = cur;
    }
  }
  tm.trans.resize(T + 1, T + 1);
  for (Eigen::Index a = 0; a <= T; ++a) {
    const double denom = counts.row(a).sum() + static_cast<double>(T + 1);
    for (Eigen::Index b = 0; b <= T; ++b) tm.trans(a, b) = (counts(a, b) + 1.0) / denom;
  }
  tm.start = (starts.array() + 1.0) / (static_cast<double>(n_sentences) + (T + 1));
  return tm;
}

// Maximizes sum_i [ log em(i, y_i) + tau * log trans(y_{i-1}, y_i) ], with
// the start vector standing in for the transition at i=0. Ties break
// toward the lowest label index.
inline std::vector<int> viterbi(const EmissionMatrix& em, const TransitionModel& tm,
                                const DecodeConfig& cfg) {
  cfg.validate();
  if (em.types != tm.types) throw std::invalid_argument("emission and transition types disagree");
  const Eigen::Index L = em.scores.rows();
  const Eigen::Index S = em.scores.cols();
  if (L == 0) return {};
  if (tm.trans.rows() != S || tm.trans.cols() != S || tm.start.size() != S)
    throw std::invalid_argument("transition shape does not match emissions");

  auto log_floor = [](double v) { return std::log(std::max(v, 1e-12)); };
  Eigen::MatrixXd score(L, S);
  Eigen::MatrixXi back(L, S);
  for (Eigen::Index y = 0; y < S; ++y)
    score(0, y) = log_floor(em.scores(0, y)) + cfg.tau * log_floor(tm.start(y));
  for (Eigen::Index i = 1; i < L; ++i) {
    for (Eigen::Index y = 0; y < S; ++y) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      for (Eigen::Index p = 0; p < S; ++p) {
        const double v = score(i - 1, p) + cfg.tau * log_floor(tm.trans(p, y));
        if (v > best) {
          best = v;
          arg = static_cast<int>(p);
        }
      }
      score(i, y) = best + log_floor(em.scores(i, y));
      back(i, y) = arg;
    }
  }
  std::vector<int> path(static_cast<std::size_t>(L));
  Eigen::Index tail = 0;
  for (Eigen::Index y = 1; y < S; ++y)
    if (score(L - 1, y) > score(L - 1, tail)) tail = y;
  path.back() = static_cast<int>(tail);
  for (Eigen::Index i = L - 1; i > 0; --i) {
    tail = back(i, tail);
    path[static_cast<std::size_t>(i - 1)] = static_cast<int>(tail);
  }
  return path;
}

// Maximal runs of the same non-NULL label become mentions (IO readout).
inline std::vector<EntityMention> labels_to_mentions(const std::vector<int>& labels,
                                                     const std::vector<std::string>& types,
                                                     const std::vector<std::string>& tokens) {
  if (labels.size() != tokens.size())
    throw std::invalid_argument("label and token counts differ");
  const int null_label = static_cast<int>(types.size());
  std::vector<EntityMention> out;
  std::size_t i = 0;
  while (i < labels.size()) {
    if (labels[i] == null_label) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    EntityMention m;
    m.start = i;
    m.end = j;
    m.type = types[static_cast<std::size_t>(labels[i])];
    std::vector<std::string> span(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                  tokens.begin() + static_cast<std::ptrdiff_t>(j));
    m.surface = join(span, " ");
    out.push_back(std::move(m));
    i = j;
  }
  return out;
}

inline std::vector<std::string> labels_to_tags(const std::vector<int>& labels,
                                               const std::vector<std::string>& types) {
  const int null_label = static_cast<int>(types.size());
  std::vector<std::string> tags(labels.size(), "O");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == null_label) continue;
    const bool continues = i > 0 && labels[i - 1] == labels[i];
    tags[i] = (continues ? "I-" : "B-") + types[static_cast<std::size_t>(labels[i])];
  }
  return tags;
}

using EmissionFn = std::function<EmissionMatrix(const TaggedSentence&)>;

struct TauSelection {
  double tau = 0.0;
  EvalReport report;  // dev report at the selected tau
  std::vector<std::pair<double, double>> sweep;
};

// Grid search for tau on labeled dev sentences; emissions are built once
// per sentence and reused across grid points. Ties go to the smaller tau.
inline TauSelection sweep_tau(const std::vector<TaggedSentence>& dev, const EmissionFn& em_fn,
                              const TransitionModel& tm, const std::vector<double>& grid) {
  if (dev.empty()) throw std::invalid_argument("tau selection needs dev sentences");
  if (grid.empty()) throw ConfigError("tau grid is empty");
  std::vector<EmissionMatrix> ems;
  std::vector<std::vector<EntityMention>> gold;
  ems.reserve(dev.size());
  for (const auto& s : dev) {
    ems.push_back(em_fn(s));
    gold.push_back(extract_mentions(s));
  }
  TauSelection sel;
  sel.tau = grid.front();
  double best_f1 = -1.0;
  for (double tau : grid) {
    DecodeConfig cfg;
    cfg.tau = tau;
    std::vector<std::vector<EntityMention>> pred;
    pred.reserve(dev.size());
    for (std::size_t i = 0; i < dev.size(); ++i) {
      std::vector<int> labels = viterbi(ems[i], tm, cfg);
      pred.push_back(labels_to_mentions(labels, ems[i].types, dev[i].tokens));
    }
    const EvalReport rep = score_predictions(gold, pred);
    sel.sweep.emplace_back(tau, rep.f1);
    if (rep.f1 > best_f1) {
      best_f1 = rep.f1;
      sel.tau = tau;
      sel.report = rep;
    }
  }
  return sel;
}

inline double select_tau(const std::vector<TaggedSentence>& dev, const EmissionFn& em_fn,
                         const TransitionModel& tm, const std::vector<double>& grid,
                         std::vector<std::pair<double, double>>* sweep = nullptr) {
  TauSelection sel = sweep_tau(dev, em_fn, tm, grid);
  if (sweep) *sweep = std::move(sel.sweep);
  return sel.tau;
}

// Span-mode inference: score every span up to max_span_length for every
// type, then greedily accept non-overlapping spans with entail probability
// above the threshold, best first.
inline std::vector<EntityMention> decode_spans(const std::vector<std::string>& tokens,
                                               EntailmentScorer& scorer,
                                               const std::vector<std::string>& types,
                                               std::size_t max_span_length = 8,
                                               double threshold = 0.5) {
  struct Scored {
    EntityMention m;
    double score;
  };
  std::vector<Scored> candidates;
  for (std::size_t start = 0; start < tokens.size(); ++start) {
    const std::size_t max_end = std::min(tokens.size(), start + max_span_length);
    for (std::size_t end = start + 1; end <= max_end; ++end) {
      double best = -1.0;
      std::string best_type;
      for (const auto& t : types) {
        const double q = scorer.entail_probability(tokens, start, end, t);
        if (q > best) {
          best = q;
          best_type = t;
        }
      }
      if (best > threshold) {
        std::vector<std::string> span(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(end));
        candidates.push_back({{start, end, best_type, join(span, " ")}, best});
      }
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Scored& a, const Scored& b) { return a.score > b.score; });
  std::vector<bool> taken(tokens.size(), false);
  std::vector<EntityMention> out;
  for (const auto& c : candidates) {
    bool overlap = false;
    for (std::size_t i = c.m.start; i < c.m.end; ++i) overlap |= taken[i];
    if (overlap) continue;
    for (std::size_t i = c.m.start; i < c.m.end; ++i) taken[i] = true;
    out.push_back(c.m);
  }
  std::sort(out.begin(), out.end(),
            [](const EntityMention& a, const EntityMention& b) { return a.start < b.start; });
  return out;
}

}  // namespace entner
