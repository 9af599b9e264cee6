#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "common/tiny_model.hpp"
#include "ctxattn/nnmodel.hpp"
#include "ctxattn/trainer.hpp"

using namespace ctxattn;
using ctxattn::testing::tiny_hyperparams;
using ctxattn::testing::tiny_sample;

namespace {

TokenSeq seq(std::vector<TokenId> ids) { return TokenSeq{std::move(ids), {0}}; }

TokenSeq random_seq(std::mt19937_64& rng, std::size_t len, std::size_t vocab) {
  std::uniform_int_distribution<TokenId> d(kNumReserved, static_cast<TokenId>(vocab - 1));
  TokenSeq s;
  s.boundaries = {0};
  for (std::size_t i = 0; i < len; ++i) s.ids.push_back(d(rng));
  return s;
}

// Independent restatement of the closed-form count.
std::size_t count_oracle(const Hyperparams& hp) {
  const std::size_t d = hp.d_model, f = hp.d_ff;
  const std::size_t attn = 4 * (d * d + d);
  const std::size_t ffn = (d * f + f) + (f * d + d);
  const std::size_t ln = 2 * d;
  return hp.src_vocab * d + hp.tgt_vocab * d + hp.n_enc * (2 * ln + attn + ffn) +
         hp.n_dec * (3 * ln + 2 * attn + ffn) + 2 * ln + (d * hp.tgt_vocab + hp.tgt_vocab);
}

double teacher_forced_score(const Transformer& m, const TokenSeq& src, const std::vector<TokenId>& toks,
                            bool finished) {
  const auto tr = m.forward(src, seq(toks));
  double s = 0.0;
  for (std::size_t t = 0; t < toks.size(); ++t) s += tr.log_probs(static_cast<ad::Index>(t), toks[t]);
  if (finished) s += tr.log_probs(static_cast<ad::Index>(toks.size()), kEos);
  return s;
}

}  // namespace

TEST(Transformer, ShapesRowsAndCausality) {
  auto hp = tiny_hyperparams();
  Transformer m(hp, 1);
  const auto tr = m.forward(seq({6, 7, 8, 9}), seq({10, 11}));
  ASSERT_EQ(tr.enc_self.size(), 2u);
  ASSERT_EQ(tr.dec_cross.size(), 2u);
  ASSERT_EQ(tr.dec_self.size(), 2u);
  EXPECT_EQ(tr.log_probs.rows(), 3);
  EXPECT_EQ(tr.log_probs.cols(), 37);
  EXPECT_EQ(tr.encoder_states.rows(), 4);
  EXPECT_EQ(tr.encoder_states.cols(), 16);
  for (std::size_t l = 0; l < 2; ++l) {
    ASSERT_EQ(tr.enc_self[l].size(), 2u);
    for (std::size_t h = 0; h < 2; ++h) {
      const auto& es = tr.enc_self[l][h];
      const auto& dc = tr.dec_cross[l][h];
      const auto& ds = tr.dec_self[l][h];
      EXPECT_EQ(es.rows(), 4);
      EXPECT_EQ(es.cols(), 4);
      EXPECT_EQ(dc.rows(), 3);
      EXPECT_EQ(dc.cols(), 4);
      EXPECT_EQ(ds.rows(), 3);
      EXPECT_EQ(ds.cols(), 3);
      for (const auto* a : {&es, &dc, &ds})
        for (ad::Index i = 0; i < a->rows(); ++i) EXPECT_NEAR(a->row(i).sum(), 1.0, 1e-12);
      for (ad::Index i = 0; i < 3; ++i)
        for (ad::Index j = i + 1; j < 3; ++j) EXPECT_EQ(ds(i, j), 0.0);
    }
  }
  for (ad::Index t = 0; t < 3; ++t) EXPECT_NEAR(tr.log_probs.row(t).array().exp().sum(), 1.0, 1e-12);
}

TEST(Transformer, ParameterCountClosedForm) {
  for (auto hp : {tiny_hyperparams(), Hyperparams{}, Hyperparams::transformer_base(1000, 1200)}) {
    if (hp.src_vocab == 0) hp.src_vocab = hp.tgt_vocab = 50;
    EXPECT_EQ(parameter_count(hp), count_oracle(hp));
  }
  for (auto hp : {tiny_hyperparams(), tiny_hyperparams(9)}) {
    Transformer m(hp, 3);
    EXPECT_EQ(m.parameters().scalar_count(), parameter_count(hp));
  }
}

TEST(Transformer, InitIsDeterministic) {
  Transformer a(tiny_hyperparams(), 5), b(tiny_hyperparams(), 5), c(tiny_hyperparams(), 6);
  EXPECT_TRUE(a.parameters() == b.parameters());
  EXPECT_FALSE(a.parameters() == c.parameters());
}

TEST(Transformer, RejectsOverlongAndBadHyperparams) {
  auto hp = tiny_hyperparams();
  hp.max_len = 4;
  Transformer m(hp, 1);
  EXPECT_THROW(m.forward(seq({6, 7, 8, 9, 10}), seq({6})), ModelError);
  EXPECT_THROW(m.forward(seq({6}), seq({6, 7, 8, 9})), ModelError);
  auto bad = tiny_hyperparams();
  bad.heads = 3;
  EXPECT_THROW(bad.validate(), ModelError);
}

TEST(Transformer, TrainModeNeedsRngWhenDropoutActive) {
  auto hp = tiny_hyperparams();
  hp.dropout = 0.2;
  Transformer m(hp, 1);
  EXPECT_THROW(m.forward(seq({6, 7}), seq({8}), Mode::Train), ModelError);
  std::mt19937_64 r1(4), r2(4);
  auto a = m.forward(seq({6, 7}), seq({8}), Mode::Train, &r1);
  auto b = m.forward(seq({6, 7}), seq({8}), Mode::Train, &r2);
  EXPECT_EQ(a.log_probs, b.log_probs);
}

TEST(Transformer, IncrementalMatchesTeacherForcing) {
  Transformer m(tiny_hyperparams(), 2);
  const auto src = seq({6, 7, 8});
  const std::vector<TokenId> tgt = {9, 10, 11};
  const auto tr = m.forward(src, seq(tgt));
  const auto memory = m.encode(src);
  EXPECT_LT((memory - tr.encoder_states).cwiseAbs().maxCoeff(), 1e-12);
  std::vector<TokenId> input{kBos};
  for (std::size_t t = 0; t <= tgt.size(); ++t) {
    const auto lp = m.next_log_probs(memory, input);
    EXPECT_LT((lp.row(0) - tr.log_probs.row(static_cast<ad::Index>(t))).cwiseAbs().maxCoeff(), 1e-10);
    if (t < tgt.size()) input.push_back(tgt[t]);
  }
}

TEST(Gradients, MatchFiniteDifferencesOnCombinedObjective) {
  auto hp = tiny_hyperparams();
  Transformer m(hp, 11);
  const auto s = tiny_sample();
  const auto targets = ctxattn::testing::all_type_targets(hp);
  auto objective = [&](ForwardGraph& g) {
    return ad::add(loss_mt(g, full_output_span(s.tgt), hp.label_smoothing),
                   ad::scale(attnreg_loss(g, s, targets), 10.0));
  };
  // Every 7th entry here; the acceptance suite covers every entry.
  const auto r = ctxattn::testing::finite_difference_check(m, s.src, s.tgt, objective, 1e-5, 7);
  EXPECT_LT(r.worst_relative, 1e-4) << r.worst_tensor;
  EXPECT_GT(r.entries, 500u);
}

TEST(Gradients, ZeroWeightAndLinearityInLambda) {
  auto hp = tiny_hyperparams();
  Transformer m(hp, 13);
  const auto s = tiny_sample();
  const auto targets = ctxattn::testing::all_type_targets(hp);
  const Span span = full_output_span(s.tgt);
  auto with = [&](double lambda) {
    return backward(m, s.src, s.tgt,
                    [&](ForwardGraph& g) {
                      return ad::add(loss_mt(g, span, hp.label_smoothing),
                                     ad::scale(attnreg_loss(g, s, targets), lambda));
                    },
                    Mode::Eval);
  };
  const auto mt = backward(m, s.src, s.tgt, [&](ForwardGraph& g) { return loss_mt(g, span, hp.label_smoothing); },
                           Mode::Eval);
  const auto reg = backward(m, s.src, s.tgt, [&](ForwardGraph& g) { return attnreg_loss(g, s, targets); },
                            Mode::Eval);
  const auto g0 = with(0.0);
  const auto g5 = with(5.0);
  for (std::size_t p = 0; p < mt.grads.size(); ++p) {
    EXPECT_LT((g0.grads.tensors[p] - mt.grads.tensors[p]).cwiseAbs().maxCoeff(), 1e-14);
    const ad::Matrix lin = mt.grads.tensors[p] + 5.0 * reg.grads.tensors[p];
    EXPECT_LT((g5.grads.tensors[p] - lin).cwiseAbs().maxCoeff(), 1e-10) << mt.grads.names[p];
  }
  // The embedding row of a token absent from both sequences gets nothing.
  const auto& emb = reg.grads.tensors[reg.grads.index("src_embed")];
  EXPECT_EQ(emb.row(30).cwiseAbs().maxCoeff(), 0.0);
}

TEST(LossMt, OneHotIsZeroAndSmoothingHandCase) {
  ForwardTrace tr;
  tr.log_probs = ad::Matrix::Constant(2, 8, -1e30);
  tr.log_probs(0, 6) = 0.0;
  tr.log_probs(1, kEos) = 0.0;
  const auto tgt = seq({6});
  EXPECT_DOUBLE_EQ(loss_mt(tr, tgt, full_output_span(tgt), 0.0), 0.0);

  ad::Matrix lp(1, 2);
  lp << std::log(0.75), std::log(0.25);
  const std::vector<TokenId> gold = {0};
  const double hand = -(0.95 * std::log(0.75) + 0.05 * std::log(0.25));
  EXPECT_NEAR(ad::smoothed_nll_value(lp, gold, 0, 1, 0.1), hand, 1e-15);
}

TEST(LossMt, SpansCoverTargetAndEos) {
  TokenSeq t{{6, 7, kBrk, 8, 9}, {0, 3}};
  EXPECT_EQ(full_output_span(t), (Span{0, 6}));
  EXPECT_EQ(current_output_span(t), (Span{3, 6}));
}

TEST(Decode, GreedyEqualsBeamOne) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Transformer m(tiny_hyperparams(12), seed);
    std::mt19937_64 rng(seed);
    const auto src = random_seq(rng, 4, 12);
    const auto a = decode(m, src, {1, 6});
    const auto b = decode(m, src, {1, 6});
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_EQ(a.score, b.score);
    EXPECT_NEAR(a.score, teacher_forced_score(m, src, a.tokens, a.finished), 1e-9);
  }
}

// Enumerates every output of at most max_len steps: finished sequences of
// up to max_len-1 words plus <eos>, and unfinished ones of max_len words.
TEST(Decode, BeamAgainstExhaustiveSearch) {
  const std::size_t vocab = kNumReserved + 4;  // 4 words + <eos> = 5 choices
  const std::size_t max_len = 4;
  std::size_t beam_not_worse = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto hp = tiny_hyperparams(vocab);
    Transformer m(hp, 100 + seed);
    std::mt19937_64 rng(seed);
    const auto src = random_seq(rng, 3, vocab);

    double best_finished = -INFINITY;
    std::vector<std::vector<TokenId>> frontier{{}};
    for (std::size_t len = 0; len <= max_len; ++len) {
      std::vector<std::vector<TokenId>> next;
      for (const auto& p : frontier) {
        if (len < max_len) best_finished = std::max(best_finished, teacher_forced_score(m, src, p, true));
        for (TokenId w = kNumReserved; w < static_cast<TokenId>(vocab); ++w) {
          auto q = p;
          q.push_back(w);
          next.push_back(std::move(q));
        }
      }
      if (len < max_len) frontier = std::move(next);
    }

    const auto greedy = decode(m, src, {1, max_len});
    const auto beam = decode(m, src, {4, max_len});
    for (const auto* h : {&greedy, &beam}) {
      EXPECT_NEAR(h->score, teacher_forced_score(m, src, h->tokens, h->finished), 1e-9);
      if (h->finished) EXPECT_LE(h->score, best_finished + 1e-9);
      EXPECT_LE(h->tokens.size() + (h->finished ? 1 : 0), max_len);
    }
    if (greedy.finished && beam.finished && beam.score >= greedy.score - 1e-12) ++beam_not_worse;
    if (!greedy.finished && beam.finished) ++beam_not_worse;
    if (!greedy.finished && !beam.finished && beam.score >= greedy.score - 1e-12) ++beam_not_worse;
  }
  EXPECT_EQ(beam_not_worse, 20u);
}

TEST(Decode, DeltaModelsReproduceTheirSequence) {
  auto hp = tiny_hyperparams(10);
  Transformer m(hp, 1);
  auto& p = m.parameters();
  const auto w = p.index("out.weight");
  const auto b = p.index("out.bias");
  p.tensors[w].setZero();
  p.tensors[b].setConstant(-1e4);
  p.tensors[b](0, kEos) = 0.0;
  auto h = decode(m, seq({6, 7}), {4, 8});
  EXPECT_TRUE(h.finished);
  EXPECT_TRUE(h.tokens.empty());
  EXPECT_NEAR(h.score, 0.0, 1e-12);

  p.tensors[b](0, kEos) = -1e4;
  p.tensors[b](0, 8) = 0.0;
  h = decode(m, seq({6, 7}), {2, 5});
  EXPECT_FALSE(h.finished);
  EXPECT_EQ(h.tokens, (std::vector<TokenId>(5, 8)));
  EXPECT_NEAR(h.score, 0.0, 1e-9);
}

TEST(Decode, ForcedPrefixIsNotReturned) {
  Transformer m(tiny_hyperparams(12), 4);
  const std::vector<TokenId> prefix = {7, kBrk};
  const auto h = decode(m, seq({6, 8}), {1, 3}, prefix);
  EXPECT_LE(h.tokens.size(), 3u);
  std::vector<TokenId> full = prefix;
  full.insert(full.end(), h.tokens.begin(), h.tokens.end());
  const auto tr = m.forward(seq({6, 8}), seq(full));
  double s = 0.0;
  for (std::size_t t = prefix.size(); t < full.size(); ++t) s += tr.log_probs(static_cast<ad::Index>(t), full[t]);
  if (h.finished) s += tr.log_probs(static_cast<ad::Index>(full.size()), kEos);
  EXPECT_NEAR(h.score, s, 1e-9);
}

TEST(Gradients, ZeroUpstreamWeightGivesZeroGradients) {
  auto hp = tiny_hyperparams();
  Transformer m(hp, 21);
  const auto s = tiny_sample();
  const auto r = backward(m, s.src, s.tgt,
                          [&](ForwardGraph& g) { return ad::scale(loss_mt(g, full_output_span(s.tgt), 0.1), 0.0); },
                          Mode::Eval);
  for (const auto& t : r.grads.tensors) EXPECT_EQ(t.cwiseAbs().maxCoeff(), 0.0);
}

TEST(LossMt, EmptySpanRejected) {
  Transformer m(tiny_hyperparams(), 1);
  const auto tr = m.forward(seq({6}), seq({7}));
  EXPECT_THROW(loss_mt(tr, seq({7}), Span{1, 1}, 0.1), std::exception);
  EXPECT_THROW(loss_mt(tr, seq({7}), Span{0, 5}, 0.1), std::exception);
}
