#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "ctxattn/autodiff.hpp"

using namespace ctxattn;
using namespace ctxattn::ad;

namespace {

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Reduces any output to a scalar through a few fixed random bilinear forms.
Var project(Tape& t, const Var& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Var> terms;
  for (int k = 0; k < 3; ++k) {
    auto u = t.constant(random_matrix(1, out.rows(), rng));
    auto v = t.constant(random_matrix(out.cols(), 1, rng));
    terms.push_back(matmul(matmul(u, out), v));
  }
  return sum_scalars(terms);
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Central differences against the tape gradient for every input entry.
double max_rel_error(std::vector<Matrix> inputs, const Builder& build, double h = 1e-6) {
  auto eval = [&](bool record, std::vector<Matrix>* grads) {
    Tape t(record);
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i)
      vars.push_back(t.parameter(inputs[i], grads ? &(*grads)[i] : nullptr));
    auto y = project(t, build(t, vars), 99);
    if (grads) t.backward(y);
    return y.scalar();
  };
  std::vector<Matrix> grads;
  for (const auto& m : inputs) grads.push_back(Matrix::Zero(m.rows(), m.cols()));
  eval(true, &grads);

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Index k = 0; k < inputs[i].size(); ++k) {
      const double keep = inputs[i].data()[k];
      inputs[i].data()[k] = keep + h;
      const double up = eval(false, nullptr);
      inputs[i].data()[k] = keep - h;
      const double down = eval(false, nullptr);
      inputs[i].data()[k] = keep;
      const double fd = (up - down) / (2 * h);
      const double an = grads[i].data()[k];
      worst = std::max(worst, std::abs(fd - an) / std::max(1e-8, std::abs(fd) + std::abs(an)));
    }
  }
  return worst;
}

}  // namespace

class OpGradient : public ::testing::Test {
 protected:
  std::mt19937_64 rng{12345};
};

TEST_F(OpGradient, Matmul) {
  EXPECT_LT(max_rel_error({random_matrix(3, 4, rng), random_matrix(4, 2, rng)},
                          [](Tape&, const auto& v) { return matmul(v[0], v[1]); }),
            1e-6);
  EXPECT_LT(max_rel_error({random_matrix(3, 4, rng), random_matrix(5, 4, rng)},
                          [](Tape&, const auto& v) { return matmul_bt(v[0], v[1]); }),
            1e-6);
}

TEST_F(OpGradient, AddAndBroadcast) {
  EXPECT_LT(max_rel_error({random_matrix(3, 4, rng), random_matrix(3, 4, rng)},
                          [](Tape&, const auto& v) { return add(v[0], v[1]); }),
            1e-6);
  EXPECT_LT(max_rel_error({random_matrix(3, 4, rng), random_matrix(1, 4, rng)},
                          [](Tape&, const auto& v) { return add_row(v[0], v[1]); }),
            1e-6);
  Matrix c = random_matrix(2, 2, rng);
  EXPECT_LT(max_rel_error({random_matrix(2, 2, rng)},
                          [&](Tape&, const auto& v) { return scale(add_constant(v[0], c), -2.5); }),
            1e-6);
}

TEST_F(OpGradient, ReluAwayFromKink) {
  Matrix x = random_matrix(3, 5, rng);
  for (Index i = 0; i < x.size(); ++i)
    if (std::abs(x.data()[i]) < 0.05) x.data()[i] = 0.3;
  EXPECT_LT(max_rel_error({x}, [](Tape&, const auto& v) { return relu(v[0]); }), 1e-6);
}

TEST_F(OpGradient, LayerNorm) {
  EXPECT_LT(max_rel_error({random_matrix(3, 6, rng), random_matrix(1, 6, rng), random_matrix(1, 6, rng)},
                          [](Tape&, const auto& v) { return layer_norm(v[0], v[1], v[2]); }),
            1e-5);
}

TEST_F(OpGradient, Softmaxes) {
  EXPECT_LT(max_rel_error({random_matrix(4, 4, rng, -2, 2)},
                          [](Tape&, const auto& v) { return softmax_rows(v[0], false); }),
            1e-6);
  EXPECT_LT(max_rel_error({random_matrix(4, 4, rng, -2, 2)},
                          [](Tape&, const auto& v) { return softmax_rows(v[0], true); }),
            1e-6);
  EXPECT_LT(max_rel_error({random_matrix(3, 7, rng, -2, 2)},
                          [](Tape&, const auto& v) { return log_softmax_rows(v[0]); }),
            1e-6);
}

TEST_F(OpGradient, GatherSliceConcat) {
  const std::vector<TokenId> ids = {2, 0, 2, 1};
  EXPECT_LT(max_rel_error({random_matrix(3, 4, rng)},
                          [&](Tape&, const auto& v) { return gather_rows(v[0], ids); }),
            1e-6);
  EXPECT_LT(max_rel_error({random_matrix(3, 6, rng), random_matrix(3, 2, rng)},
                          [](Tape&, const auto& v) { return concat_cols({slice_cols(v[0], 1, 3), v[1], v[0]}); }),
            1e-6);
}

TEST_F(OpGradient, DropoutWithFixedMask) {
  EXPECT_LT(max_rel_error({random_matrix(4, 5, rng)},
                          [](Tape&, const auto& v) {
                            std::mt19937_64 r(7);
                            return dropout(v[0], 0.3, r);
                          }),
            1e-6);
}

TEST_F(OpGradient, MeanRowPrefix) {
  EXPECT_LT(max_rel_error({random_matrix(4, 5, rng), random_matrix(4, 5, rng)},
                          [](Tape&, const auto& v) { return mean_row_prefix({v[0], v[1]}, 2, 3); }),
            1e-6);
}

TEST_F(OpGradient, LossesThroughSoftmax) {
  const std::vector<TokenId> gold = {1, 3, 0};
  EXPECT_LT(max_rel_error({random_matrix(3, 5, rng, -2, 2)},
                          [&](Tape&, const auto& v) { return smoothed_nll(log_softmax_rows(v[0]), gold, 0, 3, 0.1); }),
            1e-6);
  const std::vector<double> target = {0.1, 0.6, 0.0, 0.3};
  EXPECT_LT(max_rel_error({random_matrix(1, 4, rng, -2, 2)},
                          [&](Tape&, const auto& v) { return kl_divergence(target, softmax_rows(v[0], false)); }),
            1e-6);
}

TEST(AutodiffValues, UniformLogitsGiveLnV) {
  Tape t(false);
  auto lp = log_softmax_rows(t.constant(Matrix::Zero(2, 37)));
  const std::vector<TokenId> gold = {4, 11};
  EXPECT_NEAR(smoothed_nll(lp, gold, 0, 2, 0.0).scalar(), std::log(37.0), 1e-12);
  EXPECT_NEAR(smoothed_nll(lp, gold, 0, 2, 0.1).scalar(), 3.6109, 1e-4);
}

TEST(AutodiffValues, KlSpotValues) {
  const std::vector<double> t = {0.5, 0.5};
  const std::vector<double> p = {0.25, 0.75};
  const double oracle = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
  EXPECT_NEAR(kl_value(t, p), oracle, 1e-15);
  EXPECT_DOUBLE_EQ(kl_value(t, t), 0.0);
  const std::vector<double> zt = {0.0, 1.0};
  EXPECT_NEAR(kl_value(zt, p), std::log(1.0 / 0.75), 1e-15);
}

TEST(AutodiffValues, CausalSoftmaxZerosAboveDiagonal) {
  std::mt19937_64 rng(3);
  Tape t(false);
  auto s = softmax_rows(t.constant(random_matrix(5, 5, rng)), true).value();
  for (Index i = 0; i < 5; ++i) {
    EXPECT_NEAR(s.row(i).sum(), 1.0, 1e-12);
    for (Index j = i + 1; j < 5; ++j) EXPECT_EQ(s(i, j), 0.0);
  }
}

TEST(AutodiffTape, BackwardPreconditions) {
  Matrix w = Matrix::Ones(2, 2);
  Matrix g = Matrix::Zero(2, 2);
  Tape off(false);
  auto y0 = sum_scalars({matmul(off.parameter(w, &g), off.constant(Matrix::Ones(2, 1)))});
  (void)y0;
  Tape t;
  auto x = t.parameter(w, &g);
  EXPECT_THROW(t.backward(x), std::logic_error);
  Tape nan_tape;
  Matrix bad(1, 1);
  bad(0, 0) = std::nan("");
  Matrix gb = Matrix::Zero(1, 1);
  EXPECT_THROW(nan_tape.backward(scale(nan_tape.parameter(bad, &gb), 2.0)), std::runtime_error);
}

TEST(AutodiffTape, GradientsAccumulateIntoSink) {
  Matrix w(1, 1);
  w(0, 0) = 3.0;
  Matrix g = Matrix::Zero(1, 1);
  for (int rep = 0; rep < 2; ++rep) {
    Tape t;
    auto x = t.parameter(w, &g);
    t.backward(matmul(x, x));
  }
  EXPECT_DOUBLE_EQ(g(0, 0), 12.0);
}
