// Minimal reverse-mode autodiff over Eigen double matrices, plus the
// optimizer and learning-rate schedule used for fine-tuning. The graph is
// a per-forward tape; parameters are long-lived leaves whose gradients
// accumulate across micro-batches until the optimizer steps.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "entner/common.hpp"

namespace entner::nn {

using Matrix = Eigen::MatrixXd;
using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

inline void normal_init(Parameter& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index j = 0; j < p.value.cols(); ++j)
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = dist(rng);
}

struct Node {
  Matrix value;
  Matrix grad;
  bool needs_grad = false;
  std::function<void()> backward;  // accumulates this->grad into inputs
};

// One forward tape. Construct with grad disabled for pure inference; the
// backward sweep runs the recorded closures in reverse creation order.
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_(grad_enabled) {}

  bool grad_enabled() const { return grad_; }

  Node* constant(Matrix m) {
    Node* n = alloc();
    n->value = std::move(m);
    return n;
  }

  Node* param(Parameter& p) {
    Node* n = alloc();
    n->value = p.value;
    if (grad_) {
      n->needs_grad = true;
      n->grad = Matrix::Zero(p.value.rows(), p.value.cols());
      Parameter* pp = &p;
      n->backward = [n, pp] { pp->grad += n->grad; };
    }
    return n;
  }

  // Row gather from an embedding table; ids < 0 select rows from `alt`
  // using ~id (used for learnable soft-prompt slots).
  Node* embed(Parameter& table, const std::vector<int>& ids, Parameter* alt = nullptr) {
    Node* n = alloc();
    n->value.resize(static_cast<Eigen::Index>(ids.size()), table.value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      n->value.row(static_cast<Eigen::Index>(i)) =
          ids[i] >= 0 ? table.value.row(ids[i]) : alt->value.row(~ids[i]);
    }
    if (grad_) {
      n->needs_grad = true;
      n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
      Parameter* tp = &table;
      n->backward = [n, tp, alt, ids] {
        for (std::size_t i = 0; i < ids.size(); ++i) {
          Eigen::Index r = static_cast<Eigen::Index>(i);
          if (ids[i] >= 0) {
            tp->grad.row(ids[i]) += n->grad.row(r);
          } else {
            alt->grad.row(~ids[i]) += n->grad.row(r);
          }
        }
      };
    }
    return n;
  }

  Node* add(Node* a, Node* b) {
    return binary(
        a, b, a->value + b->value, [](Node* n, Node* x, Node*) { x->grad += n->grad; },
        [](Node* n, Node*, Node* y) { y->grad += n->grad; });
  }

  // a + row vector broadcast over rows (bias add).
  Node* add_rowvec(Node* a, Node* r) {
    Matrix v = a->value;
    v.rowwise() += r->value.row(0);
    return binary(
        a, r, std::move(v),
        [](Node* n, Node* x, Node*) { x->grad += n->grad; },
        [](Node* n, Node*, Node* y) { y->grad.row(0) += n->grad.colwise().sum(); });
  }

  Node* matmul(Node* a, Node* b) {
    return binary(
        a, b, a->value * b->value,
        [](Node* n, Node* x, Node* y) { x->grad += n->grad * y->value.transpose(); },
        [](Node* n, Node* x, Node* y) { y->grad += x->value.transpose() * n->grad; });
  }

  // a * b^T; avoids materializing transposed weights.
  Node* matmul_nt(Node* a, Node* b) {
    return binary(
        a, b, a->value * b->value.transpose(),
        [](Node* n, Node* x, Node* y) { x->grad += n->grad * y->value; },
        [](Node* n, Node* x, Node* y) { y->grad += n->grad.transpose() * x->value; });
  }

  Node* scale(Node* a, double c) {
    return unary(a, a->value * c, [c](Node* n, Node* x) { x->grad += c * n->grad; });
  }

  Node* gelu(Node* a) {
    Matrix v = a->value.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x / M_SQRT2)); });
    return unary(a, std::move(v), [](Node* n, Node* x) {
      x->grad.array() += n->grad.array() * x->value.array().unaryExpr([](double z) {
        const double cdf = 0.5 * (1.0 + std::erf(z / M_SQRT2));
        const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
        return cdf + z * pdf;
      });
    });
  }

  Node* softmax_rows(Node* a) {
    Matrix v = a->value;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      RowArray row = v.row(i).array();
      row -= row.maxCoeff();
      row = row.exp();
      v.row(i) = row / row.sum();
    }
    return unary(a, std::move(v), [](Node* n, Node* x) {
      for (Eigen::Index i = 0; i < n->value.rows(); ++i) {
        const auto s = n->value.row(i).array();
        const auto g = n->grad.row(i).array();
        const double dot = (g * s).sum();
        x->grad.row(i).array() += s * (g - dot);
      }
    });
  }

  // Per-row layer norm with learnable gain/bias (1 x C each).
  Node* layer_norm(Node* a, Node* gain, Node* bias, double eps = 1e-5) {
    const Eigen::Index C = a->value.cols();
    Matrix xhat(a->value.rows(), C);
    Eigen::VectorXd inv_sigma(a->value.rows());
    for (Eigen::Index i = 0; i < a->value.rows(); ++i) {
      const double mu = a->value.row(i).mean();
      const double var = (a->value.row(i).array() - mu).square().mean();
      inv_sigma(i) = 1.0 / std::sqrt(var + eps);
      xhat.row(i) = (a->value.row(i).array() - mu) * inv_sigma(i);
    }
    Node* n = alloc();
    n->value = (xhat.array().rowwise() * gain->value.row(0).array()).rowwise() +
               bias->value.row(0).array();
    if (grad_ && (a->needs_grad || gain->needs_grad || bias->needs_grad)) {
      n->needs_grad = true;
      n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
      auto xh = std::make_shared<Matrix>(std::move(xhat));
      auto is = std::make_shared<Eigen::VectorXd>(std::move(inv_sigma));
      n->backward = [n, a, gain, bias, xh, is] {
        for (Eigen::Index i = 0; i < n->grad.rows(); ++i) {
          const RowArray g = n->grad.row(i).array();
          const RowArray x_hat = xh->row(i).array();
          const RowArray dxhat = g * gain->value.row(0).array();
          const double m1 = dxhat.mean();
          const double m2 = (dxhat * x_hat).mean();
          if (a->needs_grad) a->grad.row(i).array() += (*is)(i) * (dxhat - m1 - x_hat * m2);
          if (gain->needs_grad) gain->grad.row(0).array() += g * x_hat;
          if (bias->needs_grad) bias->grad.row(0).array() += g;
        }
      };
    }
    return n;
  }

  Node* dropout(Node* a, double rate, std::mt19937_64& rng) {
    if (rate <= 0.0) return a;
    std::bernoulli_distribution keep(1.0 - rate);
    Matrix mask(a->value.rows(), a->value.cols());
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      for (Eigen::Index i = 0; i < mask.rows(); ++i)
        mask(i, j) = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
    auto mk = std::make_shared<Matrix>(std::move(mask));
    return unary(a, a->value.cwiseProduct(*mk),
                 [mk](Node* n, Node* x) { x->grad += n->grad.cwiseProduct(*mk); });
  }

  Node* slice_cols(Node* a, Eigen::Index start, Eigen::Index count) {
    return unary(a, a->value.middleCols(start, count), [start, count](Node* n, Node* x) {
      x->grad.middleCols(start, count) += n->grad;
    });
  }

  Node* concat_cols(const std::vector<Node*>& parts) {
    Eigen::Index cols = 0;
    for (Node* p : parts) cols += p->value.cols();
    Node* n = alloc();
    n->value.resize(parts[0]->value.rows(), cols);
    Eigen::Index at = 0;
    for (Node* p : parts) {
      n->value.middleCols(at, p->value.cols()) = p->value;
      at += p->value.cols();
    }
    if (grad_) {
      bool any = false;
      for (Node* p : parts) any |= p->needs_grad;
      if (any) {
        n->needs_grad = true;
        n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
        auto ps = parts;
        n->backward = [n, ps] {
          Eigen::Index at = 0;
          for (Node* p : ps) {
            if (p->needs_grad) p->grad += n->grad.middleCols(at, p->value.cols());
            at += p->value.cols();
          }
        };
      }
    }
    return n;
  }

  Node* add_scalar_nodes(const std::vector<Node*>& terms) {
    Node* acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return acc;
  }

  // Mean cross-entropy of `targets` at the given rows of a logits matrix.
  // Used for masked-token recovery and for token-level tag classification.
  Node* rows_cross_entropy(Node* logits, const std::vector<int>& rows,
                           const std::vector<int>& targets, bool mean = true) {
    const double denom = mean ? static_cast<double>(rows.size()) : 1.0;
    double total = 0.0;
    Matrix probs(static_cast<Eigen::Index>(rows.size()), logits->value.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      RowArray row = logits->value.row(rows[k]).array();
      row -= row.maxCoeff();
      RowArray e = row.exp();
      const double z = e.sum();
      probs.row(static_cast<Eigen::Index>(k)) = e / z;
      total += -(row(targets[k]) - std::log(z));
    }
    Node* n = alloc();
    n->value = Matrix::Constant(1, 1, total / denom);
    if (grad_ && logits->needs_grad) {
      n->needs_grad = true;
      n->grad = Matrix::Zero(1, 1);
      auto pr = std::make_shared<Matrix>(std::move(probs));
      n->backward = [n, logits, pr, rows, targets, denom] {
        const double g = n->grad(0, 0) / denom;
        for (std::size_t k = 0; k < rows.size(); ++k) {
          logits->grad.row(rows[k]) += g * pr->row(static_cast<Eigen::Index>(k));
          logits->grad(rows[k], targets[k]) -= g;
        }
      };
    }
    return n;
  }

  // PET loss: softmax restricted to the two verbalizer logits, then
  // cross-entropy against the gold one.
  Node* pair_cross_entropy(Node* logits, int row, int gold_id, int other_id) {
    const double zg = logits->value(row, gold_id);
    const double zo = logits->value(row, other_id);
    const double m = std::max(zg, zo);
    const double eg = std::exp(zg - m), eo = std::exp(zo - m);
    const double qg = eg / (eg + eo);
    Node* n = alloc();
    n->value = Matrix::Constant(1, 1, -std::log(qg));
    if (grad_ && logits->needs_grad) {
      n->needs_grad = true;
      n->grad = Matrix::Zero(1, 1);
      n->backward = [n, logits, row, gold_id, other_id, qg] {
        const double g = n->grad(0, 0);
        logits->grad(row, gold_id) += g * (qg - 1.0);
        logits->grad(row, other_id) += g * (1.0 - qg);
      };
    }
    return n;
  }

  // Decoupled label loss: with p = full-vocabulary softmax at `row`,
  // returns -log p(gold) - log(1 - p(other)).
  Node* decoupled_pair_loss(Node* logits, int row, int gold_id, int other_id) {
    RowArray z = logits->value.row(row).array();
    z -= z.maxCoeff();
    RowArray e = z.exp();
    RowArray p = e / e.sum();
    const double pg = std::max(p(gold_id), 1e-300);
    const double pn = std::min(p(other_id), 1.0 - 1e-12);
    Node* n = alloc();
    n->value = Matrix::Constant(1, 1, -std::log(pg) - std::log(1.0 - pn));
    if (grad_ && logits->needs_grad) {
      n->needs_grad = true;
      n->grad = Matrix::Zero(1, 1);
      auto ps = std::make_shared<RowArray>(std::move(p));
      n->backward = [n, logits, row, gold_id, other_id, ps, pn] {
        const double g = n->grad(0, 0);
        const double r = pn / (1.0 - pn);
        // d/dz_j [-log p_g] = p_j - 1{j=g};  d/dz_j [-log(1-p_n)] = r (1{j=n} - p_j)
        logits->grad.row(row).array() += g * ((*ps) * (1.0 - r));
        logits->grad(row, gold_id) -= g;
        logits->grad(row, other_id) += g * r;
      };
    }
    return n;
  }

  void backward(Node* root) {
    if (!grad_) throw std::logic_error("backward on a no-grad graph");
    if (root->value.size() != 1) throw std::logic_error("backward root must be scalar");
    root->grad(0, 0) = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node* n = it->get();
      if (n->needs_grad && n->backward) n->backward();
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  Node* alloc() {
    nodes_.push_back(std::make_unique<Node>());
    return nodes_.back().get();
  }

  Node* unary(Node* a, Matrix value, std::function<void(Node*, Node*)> back) {
    Node* n = alloc();
    n->value = std::move(value);
    if (grad_ && a->needs_grad && back) {
      n->needs_grad = true;
      n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
      n->backward = [n, a, back] { back(n, a); };
    }
    return n;
  }

  Node* binary(Node* a, Node* b, Matrix value, std::function<void(Node*, Node*, Node*)> back_a,
               std::function<void(Node*, Node*, Node*)> back_b) {
    Node* n = alloc();
    n->value = std::move(value);
    if (grad_ && (a->needs_grad || b->needs_grad)) {
      n->needs_grad = true;
      n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
      n->backward = [n, a, b, back_a, back_b] {
        if (a->needs_grad) back_a(n, a, b);
        if (b->needs_grad) back_b(n, a, b);
      };
    }
    return n;
  }

  bool grad_;
  std::vector<std::unique_ptr<Node>> nodes_;
};

// Decoupled weight decay Adam. Weight decay is applied directly to the
// parameter, not through the moment estimates.
class AdamW {
 public:
  explicit AdamW(double weight_decay = 0.01, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8)
      : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Parameter*>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (Parameter* p : params) {
      State& s = states_[p];
      if (s.m.size() == 0) {
        s.m = Matrix::Zero(p->value.rows(), p->value.cols());
        s.v = Matrix::Zero(p->value.rows(), p->value.cols());
      }
      s.m = beta1_ * s.m + (1.0 - beta1_) * p->grad;
      s.v = beta2_ * s.v + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
      const Matrix mhat = s.m / bc1;
      const Matrix vhat = s.v / bc2;
      p->value -=
          lr * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix() + lr * weight_decay_ * p->value;
    }
  }

  void zero_grad(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->zero_grad();
  }

  int steps_taken() const { return t_; }

 private:
  struct State {
    Matrix m, v;
  };
  double weight_decay_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::unordered_map<Parameter*, State> states_;
};

// Linear warmup to the peak rate, then linear decay to zero at max_steps.
// The peak is reached exactly at ceil(warmup_ratio * max_steps).
inline double scheduled_lr(int step, int max_steps, double warmup_ratio, double peak) {
  const int warmup = static_cast<int>(std::ceil(warmup_ratio * max_steps));
  if (warmup > 0 && step <= warmup) return peak * static_cast<double>(step) / warmup;
  if (step >= max_steps) return 0.0;
  return peak * static_cast<double>(max_steps - step) / (max_steps - warmup);
}

}  // namespace entner::nn
