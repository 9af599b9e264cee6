#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation applied to Vars created from it. Calling
// backward() on a 1x1 Var walks the tape in reverse and accumulates
// gradients; parameter leaves push their gradient into an external sink.
// Tapes built with record=false only evaluate values.

#include <Eigen/Core>

#include <cstddef>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "ctxattn/textcore.hpp"

namespace ctxattn::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  /// Leaf referencing external storage; `value` must outlive the tape. When
  /// `grad_sink` is non-null the leaf's gradient is added into it.
  Var parameter(const Matrix& value, Matrix* grad_sink);

  /// Records a node. `backward` receives the node's accumulated gradient and
  /// must push contributions to inputs via accumulate().
  Var push(Matrix value, std::span<const Var> inputs, Backward backward);
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  const Matrix& value(const Var& v) const;
  bool needs_grad(const Var& v) const { return nodes_[static_cast<std::size_t>(v.id())].needs_grad; }

  /// Adds `g` to v's gradient (no-op for constants).
  void accumulate(const Var& v, const Matrix& g);
  template <class Fn>
  void accumulate_with(const Var& v, Fn&& fn) {
    auto& n = nodes_[static_cast<std::size_t>(v.id())];
    if (!n.needs_grad) return;
    Matrix& g = grad_slot(n);
    fn(g);
  }

  /// Seeds d(out)/d(out) = seed and propagates to every leaf.
  void backward(const Var& out, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    Matrix* sink = nullptr;
    Backward backward;
    bool needs_grad = false;
  };

  Matrix& grad_slot(Node& n);

  bool record_;
  std::deque<Node> nodes_;  // deque keeps node references stable
};

// ---------------------------------------------------------------- operations

Var matmul(const Var& a, const Var& b);     // a · b
Var matmul_bt(const Var& a, const Var& b);  // a · bᵀ
Var add(const Var& a, const Var& b);
Var add_row(const Var& x, const Var& row);  // broadcast 1×n row over x
Var add_constant(const Var& x, const Matrix& c);
Var scale(const Var& x, double s);
Var relu(const Var& x);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
/// Row softmax; with causal=true entries (i, j > i) are exactly zero.
Var softmax_rows(const Var& x, bool causal);
Var log_softmax_rows(const Var& x);
Var gather_rows(const Var& table, std::span<const TokenId> ids);
Var slice_cols(const Var& x, Index start, Index count);
Var concat_cols(const std::vector<Var>& parts);
/// Inverted dropout; identity when p == 0.
Var dropout(const Var& x, double p, std::mt19937_64& rng);
Var sum_scalars(const std::vector<Var>& scalars);
/// Mean of row `row` of several equally shaped matrices, returned as
/// a 1×len row holding the first `len` columns.
Var mean_row_prefix(const std::vector<Var>& mats, Index row, Index len);

/// Label-smoothed negative log-likelihood, averaged over positions
/// [begin, end). Target distribution (1-s)·onehot + s/V.
double smoothed_nll_value(const Matrix& log_probs, std::span<const TokenId> gold, std::size_t begin,
                          std::size_t end, double smoothing);
Var smoothed_nll(const Var& log_probs, std::span<const TokenId> gold, std::size_t begin,
                 std::size_t end, double smoothing);

/// Σ t·ln(t/p) over a 1×L row `p`; terms with t == 0 contribute 0.
double kl_value(std::span<const double> target, std::span<const double> p);
Var kl_divergence(std::span<const double> target, const Var& row);

}  // namespace ctxattn::ad
