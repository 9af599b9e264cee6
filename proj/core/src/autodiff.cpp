#include "ctxattn/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace ctxattn::ad {

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, nullptr, {}, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(const Matrix& value, Matrix* grad_sink) {
  Node n;
  n.ref = &value;
  n.sink = grad_sink;
  n.needs_grad = record_ && grad_sink != nullptr;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::push(Matrix value, std::span<const Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const auto& v : inputs) n.needs_grad = n.needs_grad || needs_grad(v);
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Matrix& Tape::value(const Var& v) const {
  const auto& n = nodes_[static_cast<std::size_t>(v.id())];
  return n.ref ? *n.ref : n.value;
}

Matrix& Tape::grad_slot(Node& n) {
  if (n.grad.size() == 0) {
    const Matrix& v = n.ref ? *n.ref : n.value;
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  auto& n = nodes_[static_cast<std::size_t>(v.id())];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& out, double seed) {
  if (!record_) throw std::logic_error("backward() on a non-recording tape");
  const Matrix& v = value(out);
  if (v.rows() != 1 || v.cols() != 1) throw std::logic_error("backward() needs a scalar output");
  if (!std::isfinite(v(0, 0))) throw std::runtime_error("non-finite loss");
  auto& root = nodes_[static_cast<std::size_t>(out.id())];
  if (!root.needs_grad) return;
  grad_slot(root)(0, 0) += seed;
  for (int i = out.id(); i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.sink) *n.sink += n.grad;
    n.grad = Matrix();
  }
}

// ---------------------------------------------------------------- operations

namespace {

void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::logic_error("vars from different tapes");
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate_with(a, [&](Matrix& ga) { ga.noalias() += g * b.value().transpose(); });
    if (t.needs_grad(b)) t.accumulate_with(b, [&](Matrix& gb) { gb.noalias() += a.value().transpose() * g; });
  });
}

Var matmul_bt(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  Matrix out = a.value() * b.value().transpose();
  return t.push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate_with(a, [&](Matrix& ga) { ga.noalias() += g * b.value(); });
    if (t.needs_grad(b)) t.accumulate_with(b, [&](Matrix& gb) { gb.noalias() += g.transpose() * a.value(); });
  });
}

Var add(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Matrix out = a.value() + b.value();
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var add_row(const Var& x, const Var& row) {
  check_same_tape(x, row);
  Matrix out = x.value();
  out.rowwise() += row.value().row(0);
  return x.tape()->push(std::move(out), {x, row}, [x, row](Tape& t, const Matrix& g) {
    t.accumulate(x, g);
    t.accumulate_with(row, [&](Matrix& gr) { gr.row(0) += g.colwise().sum(); });
  });
}

Var add_constant(const Var& x, const Matrix& c) {
  Matrix out = x.value() + c;
  return x.tape()->push(std::move(out), {x}, [x](Tape& t, const Matrix& g) { t.accumulate(x, g); });
}

Var scale(const Var& x, double s) {
  Matrix out = x.value() * s;
  return x.tape()->push(std::move(out), {x}, [x, s](Tape& t, const Matrix& g) {
    t.accumulate_with(x, [&](Matrix& gx) { gx += g * s; });
  });
}

Var relu(const Var& x) {
  Matrix out = x.value().cwiseMax(0.0);
  return x.tape()->push(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    t.accumulate_with(x, [&](Matrix& gx) {
      gx.array() += (x.value().array() > 0.0).select(g.array(), 0.0);
    });
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), xv.cols());
  Eigen::VectorXd inv_sigma(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_sigma(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_sigma(r);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return x.tape()->push(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Tape& t, const Matrix& g) {
        t.accumulate_with(gain, [&](Matrix& gg) { gg.row(0) += (g.array() * xhat.array()).colwise().sum().matrix(); });
        t.accumulate_with(bias, [&](Matrix& gb) { gb.row(0) += g.colwise().sum(); });
        t.accumulate_with(x, [&](Matrix& gx) {
          const auto gain_row = gain.value().row(0).array();
          for (Index r = 0; r < g.rows(); ++r) {
            const Eigen::ArrayXd dxhat = (g.row(r).array() * gain_row).transpose();
            const Eigen::ArrayXd xh = xhat.row(r).array().transpose();
            const double mean_d = dxhat.mean();
            const double mean_dx = (dxhat * xh).mean();
            gx.row(r).array() += (inv_sigma(r) * (dxhat - mean_d - xh * mean_dx)).transpose();
          }
        });
      });
}

Var softmax_rows(const Var& x, bool causal) {
  const Matrix& xv = x.value();
  Matrix out = Matrix::Zero(xv.rows(), xv.cols());
  for (Index r = 0; r < xv.rows(); ++r) {
    const Index len = causal ? std::min<Index>(r + 1, xv.cols()) : xv.cols();
    const auto row = xv.row(r).head(len);
    const double mx = row.maxCoeff();
    auto e = (row.array() - mx).exp();
    out.row(r).head(len) = e / e.sum();
  }
  Matrix y = x.tape()->recording() ? out : Matrix();
  return x.tape()->push(std::move(out), {x}, [x, y = std::move(y)](Tape& t, const Matrix& g) {
    t.accumulate_with(x, [&](Matrix& gx) {
      const Eigen::VectorXd dot = (g.array() * y.array()).rowwise().sum();
      gx.array() += y.array() * (g.array().colwise() - dot.array());
    });
  });
}

Var log_softmax_rows(const Var& x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mx = xv.row(r).maxCoeff();
    const double lse = mx + std::log((xv.row(r).array() - mx).exp().sum());
    out.row(r) = xv.row(r).array() - lse;
  }
  Matrix y = x.tape()->recording() ? out : Matrix();
  return x.tape()->push(std::move(out), {x}, [x, y = std::move(y)](Tape& t, const Matrix& g) {
    t.accumulate_with(x, [&](Matrix& gx) {
      const Eigen::VectorXd gsum = g.rowwise().sum();
      gx.array() += g.array() - y.array().exp().colwise() * gsum.array();
    });
  });
}

Var gather_rows(const Var& table, std::span<const TokenId> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) throw std::out_of_range("token id outside embedding table");
    out.row(static_cast<Index>(i)) = tv.row(ids[i]);
  }
  std::vector<TokenId> idx(ids.begin(), ids.end());
  return table.tape()->push(std::move(out), {table}, [table, idx = std::move(idx)](Tape& t, const Matrix& g) {
    t.accumulate_with(table, [&](Matrix& gt) {
      for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Index>(i));
    });
  });
}

Var slice_cols(const Var& x, Index start, Index count) {
  Matrix out = x.value().middleCols(start, count);
  return x.tape()->push(std::move(out), {x}, [x, start, count](Tape& t, const Matrix& g) {
    t.accumulate_with(x, [&](Matrix& gx) { gx.middleCols(start, count) += g; });
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::logic_error("concat_cols of nothing");
  Index total = 0;
  for (const auto& p : parts) total += p.cols();
  Matrix out(parts.front().rows(), total);
  Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  std::vector<Var> copy = parts;
  return parts.front().tape()->push(std::move(out), parts, [copy](Tape& t, const Matrix& g) {
    Index o = 0;
    for (const auto& p : copy) {
      t.accumulate_with(p, [&](Matrix& gp) { gp += g.middleCols(o, p.cols()); });
      o += p.cols();
    }
  });
}

Var dropout(const Var& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  const Matrix& xv = x.value();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix mask(xv.rows(), xv.cols());
  const double keep = 1.0 / (1.0 - p);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = u(rng) < p ? 0.0 : keep;
  Matrix out = xv.cwiseProduct(mask);
  return x.tape()->push(std::move(out), {x}, [x, mask = std::move(mask)](Tape& t, const Matrix& g) {
    t.accumulate_with(x, [&](Matrix& gx) { gx += g.cwiseProduct(mask); });
  });
}

Var sum_scalars(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw std::logic_error("sum_scalars of nothing");
  Var acc = scalars.front();
  for (std::size_t i = 1; i < scalars.size(); ++i) acc = add(acc, scalars[i]);
  return acc;
}

Var mean_row_prefix(const std::vector<Var>& mats, Index row, Index len) {
  if (mats.empty()) throw std::logic_error("mean_row_prefix of nothing");
  const double w = 1.0 / static_cast<double>(mats.size());
  Matrix out = Matrix::Zero(1, len);
  for (const auto& m : mats) out.row(0) += w * m.value().row(row).head(len);
  std::vector<Var> copy = mats;
  return mats.front().tape()->push(std::move(out), mats, [copy, row, len, w](Tape& t, const Matrix& g) {
    for (const auto& m : copy)
      t.accumulate_with(m, [&](Matrix& gm) { gm.row(row).head(len) += w * g.row(0); });
  });
}

double smoothed_nll_value(const Matrix& log_probs, std::span<const TokenId> gold, std::size_t begin,
                          std::size_t end, double smoothing) {
  if (end > gold.size() || end > static_cast<std::size_t>(log_probs.rows()) || begin > end)
    throw std::out_of_range("loss span outside target");
  const double V = static_cast<double>(log_probs.cols());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = begin; t < end; ++t) {
    if (gold[t] == kPad) continue;
    const auto r = static_cast<Index>(t);
    double loss = -(1.0 - smoothing) * log_probs(r, gold[t]);
    if (smoothing > 0.0) loss -= smoothing / V * log_probs.row(r).sum();
    total += loss;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("empty span");
  return total / static_cast<double>(count);
}

Var smoothed_nll(const Var& log_probs, std::span<const TokenId> gold, std::size_t begin, std::size_t end,
                 double smoothing) {
  Matrix out(1, 1);
  out(0, 0) = smoothed_nll_value(log_probs.value(), gold, begin, end, smoothing);
  std::vector<TokenId> g(gold.begin(), gold.end());
  return log_probs.tape()->push(
      std::move(out), {log_probs}, [log_probs, g = std::move(g), begin, end, smoothing](Tape& t, const Matrix& up) {
        std::size_t count = 0;
        for (std::size_t i = begin; i < end; ++i) count += g[i] != kPad;
        const double s = up(0, 0) / static_cast<double>(count);
        t.accumulate_with(log_probs, [&](Matrix& gl) {
          const double uniform = smoothing / static_cast<double>(gl.cols());
          for (std::size_t i = begin; i < end; ++i) {
            if (g[i] == kPad) continue;
            const auto r = static_cast<Index>(i);
            if (smoothing > 0.0) gl.row(r).array() -= s * uniform;
            gl(r, g[i]) -= s * (1.0 - smoothing);
          }
        });
      });
}

double kl_value(std::span<const double> target, std::span<const double> p) {
  if (target.size() != p.size()) throw std::invalid_argument("length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 0.0) continue;
    kl += target[i] * (std::log(target[i]) - std::log(p[i]));
  }
  return kl;
}

Var kl_divergence(std::span<const double> target, const Var& row) {
  const Matrix& pv = row.value();
  if (pv.rows() != 1 || static_cast<std::size_t>(pv.cols()) != target.size())
    throw std::invalid_argument("length mismatch");
  Matrix out(1, 1);
  out(0, 0) = kl_value(target, std::span<const double>(pv.data(), static_cast<std::size_t>(pv.cols())));
  std::vector<double> tgt(target.begin(), target.end());
  return row.tape()->push(std::move(out), {row}, [row, tgt = std::move(tgt)](Tape& t, const Matrix& up) {
    t.accumulate_with(row, [&](Matrix& gr) {
      const Matrix& p = row.value();
      for (std::size_t i = 0; i < tgt.size(); ++i) {
        if (tgt[i] == 0.0) continue;
        gr(0, static_cast<Index>(i)) -= up(0, 0) * tgt[i] / p(0, static_cast<Index>(i));
      }
    });
  });
}

}  // namespace ctxattn::ad
