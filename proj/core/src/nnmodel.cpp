#include "ctxattn/nnmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace ctxattn {

using ad::Matrix;
using ad::Var;

// ---------------------------------------------------------------- Hyperparams

Hyperparams Hyperparams::transformer_base(std::size_t src_vocab, std::size_t tgt_vocab) {
  Hyperparams hp;
  hp.n_enc = hp.n_dec = 6;
  hp.heads = 8;
  hp.d_model = 512;
  hp.d_ff = 2048;
  hp.src_vocab = src_vocab;
  hp.tgt_vocab = tgt_vocab;
  return hp;
}

void Hyperparams::validate() const {
  if (n_enc < 1 || n_dec < 1) throw ModelError("layer counts must be >= 1");
  if (heads < 1 || d_model < 1 || d_ff < 1) throw ModelError("heads, d_model and d_ff must be >= 1");
  if (d_model % heads != 0) throw ModelError("d_model must be divisible by heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ModelError("dropout must lie in [0, 1)");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ModelError("label_smoothing must lie in [0, 1)");
  if (max_len < 1) throw ModelError("max_len must be >= 1");
  if (src_vocab <= static_cast<std::size_t>(kNumReserved) || tgt_vocab <= static_cast<std::size_t>(kNumReserved))
    throw ModelError("vocabulary sizes must exceed the reserved token count");
}

std::size_t parameter_count(const Hyperparams& hp) {
  const std::size_t d = hp.d_model;
  const std::size_t attn = 4 * d * d + 4 * d;
  const std::size_t ffn = 2 * d * hp.d_ff + hp.d_ff + d;
  const std::size_t norm = 2 * d;
  const std::size_t enc = 2 * norm + attn + ffn;
  const std::size_t dec = 3 * norm + 2 * attn + ffn;
  return (hp.src_vocab + hp.tgt_vocab) * d + hp.n_enc * enc + hp.n_dec * dec + 2 * norm +
         d * hp.tgt_vocab + hp.tgt_vocab;
}

// ---------------------------------------------------------------- Parameters

std::size_t Parameters::index(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ModelError("no parameter named '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

std::size_t Parameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

void Parameters::set_zero() {
  for (auto& t : tensors) t.setZero();
}

Parameters Parameters::zeros_like() const {
  Parameters p;
  p.names = names;
  for (const auto& t : tensors) p.tensors.push_back(Matrix::Zero(t.rows(), t.cols()));
  return p;
}

bool Parameters::operator==(const Parameters& other) const {
  if (names != other.names || tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& a = tensors[i];
    const auto& b = other.tensors[i];
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (!std::equal(a.data(), a.data() + a.size(), b.data())) return false;
  }
  return true;
}

// ---------------------------------------------------------------- traces

const AttentionStack& ForwardTrace::attention(AttentionType type) const {
  switch (type) {
    case AttentionType::EncSelf: return enc_self;
    case AttentionType::DecCross: return dec_cross;
    case AttentionType::DecSelf: return dec_self;
  }
  return enc_self;
}

const std::vector<std::vector<Var>>& ForwardGraph::attention(AttentionType type) const {
  switch (type) {
    case AttentionType::EncSelf: return enc_self;
    case AttentionType::DecCross: return dec_cross;
    case AttentionType::DecSelf: return dec_self;
  }
  return enc_self;
}

ForwardTrace ForwardGraph::trace() const {
  auto copy = [](const std::vector<std::vector<Var>>& vars) {
    AttentionStack out;
    for (const auto& layer : vars) {
      out.emplace_back();
      for (const auto& v : layer) out.back().push_back(v.value());
    }
    return out;
  };
  ForwardTrace t;
  t.enc_self = copy(enc_self);
  t.dec_cross = copy(dec_cross);
  t.dec_self = copy(dec_self);
  t.encoder_states = encoder_states.value();
  t.log_probs = log_probs.value();
  return t;
}

Span full_output_span(const TokenSeq& tgt) { return {0, tgt.size() + 1}; }

Span current_output_span(const TokenSeq& tgt) {
  const Span s = current_sentence_span(tgt);
  return {s.begin, tgt.size() + 1};
}

namespace {

std::vector<TokenId> gold_outputs(const TokenSeq& tgt) {
  std::vector<TokenId> gold = tgt.ids;
  gold.push_back(kEos);
  return gold;
}

}  // namespace

double loss_mt(const ForwardTrace& trace, const TokenSeq& tgt, Span span, double smoothing) {
  const auto gold = gold_outputs(tgt);
  return ad::smoothed_nll_value(trace.log_probs, gold, span.begin, span.end, smoothing);
}

Var loss_mt(ForwardGraph& graph, Span span, double smoothing) {
  return ad::smoothed_nll(graph.log_probs, graph.gold, span.begin, span.end, smoothing);
}

// ---------------------------------------------------------------- Transformer

struct Transformer::Context {
  ad::Tape& tape;
  Mode mode;
  std::mt19937_64* rng;
  Parameters* grads;
  const Parameters& params;
  std::vector<Var> vars;

  Var p(std::size_t i) {
    if (!vars[i].valid())
      vars[i] = tape.parameter(params.tensors[i], grads ? &grads->tensors[i] : nullptr);
    return vars[i];
  }
};

Transformer::Transformer(const Hyperparams& hp, std::uint64_t seed) : hp_(hp) {
  hp_.validate();
  make_layout();
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& t = params_.tensors[i];
    const auto& name = params_.names[i];
    const bool is_gain = name.ends_with(".gain");
    const bool is_bias = name.ends_with(".bias") || (t.rows() == 1 && !is_gain);
    if (is_gain) {
      t.setOnes();
    } else if (is_bias) {
      t.setZero();
    } else {
      const double limit = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (ad::Index k = 0; k < t.size(); ++k) t.data()[k] = u(rng);
    }
  }
}

Transformer::Transformer(const Hyperparams& hp, Parameters params) : hp_(hp) {
  hp_.validate();
  make_layout();
  if (params.names != params_.names) throw ModelError("parameter names do not match hyperparameters");
  Parameters expected = std::move(params_);
  params_ = std::move(params);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_.tensors[i].rows() != expected.tensors[i].rows() ||
        params_.tensors[i].cols() != expected.tensors[i].cols())
      throw ModelError("shape mismatch for parameter " + params_.names[i]);
  }
}

void Transformer::make_layout() {
  const auto d = static_cast<ad::Index>(hp_.d_model);
  const auto ff = static_cast<ad::Index>(hp_.d_ff);
  auto add = [&](const std::string& name, ad::Index rows, ad::Index cols) {
    params_.names.push_back(name);
    params_.tensors.push_back(Matrix::Zero(rows, cols));
    return params_.size() - 1;
  };
  auto add_norm = [&](const std::string& prefix) {
    return NormIdx{add(prefix + ".gain", 1, d), add(prefix + ".bias", 1, d)};
  };
  auto add_attn = [&](const std::string& prefix) {
    AttnIdx a{};
    a.wq = add(prefix + ".wq", d, d);
    a.bq = add(prefix + ".bq", 1, d);
    a.wk = add(prefix + ".wk", d, d);
    a.bk = add(prefix + ".bk", 1, d);
    a.wv = add(prefix + ".wv", d, d);
    a.bv = add(prefix + ".bv", 1, d);
    a.wo = add(prefix + ".wo", d, d);
    a.bo = add(prefix + ".bo", 1, d);
    return a;
  };
  auto add_ffn = [&](const std::string& prefix) {
    FfnIdx f{};
    f.w1 = add(prefix + ".w1", d, ff);
    f.b1 = add(prefix + ".b1", 1, ff);
    f.w2 = add(prefix + ".w2", ff, d);
    f.b2 = add(prefix + ".b2", 1, d);
    return f;
  };

  src_embed_ = add("src_embed", static_cast<ad::Index>(hp_.src_vocab), d);
  tgt_embed_ = add("tgt_embed", static_cast<ad::Index>(hp_.tgt_vocab), d);
  for (std::size_t l = 0; l < hp_.n_enc; ++l) {
    const auto pre = "enc." + std::to_string(l);
    EncLayer layer{};
    layer.ln1 = add_norm(pre + ".ln1");
    layer.self = add_attn(pre + ".self");
    layer.ln2 = add_norm(pre + ".ln2");
    layer.ffn = add_ffn(pre + ".ffn");
    enc_.push_back(layer);
  }
  enc_norm_ = add_norm("enc.norm");
  for (std::size_t l = 0; l < hp_.n_dec; ++l) {
    const auto pre = "dec." + std::to_string(l);
    DecLayer layer{};
    layer.ln1 = add_norm(pre + ".ln1");
    layer.self = add_attn(pre + ".self");
    layer.ln2 = add_norm(pre + ".ln2");
    layer.cross = add_attn(pre + ".cross");
    layer.ln3 = add_norm(pre + ".ln3");
    layer.ffn = add_ffn(pre + ".ffn");
    dec_.push_back(layer);
  }
  dec_norm_ = add_norm("dec.norm");
  out_w_ = add("out.weight", d, static_cast<ad::Index>(hp_.tgt_vocab));
  out_b_ = add("out.bias", 1, static_cast<ad::Index>(hp_.tgt_vocab));

  positions_.resize(static_cast<ad::Index>(hp_.max_len + 1), d);
  for (ad::Index pos = 0; pos < positions_.rows(); ++pos) {
    for (ad::Index i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      positions_(pos, i) = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < d) positions_(pos, i + 1) = std::cos(static_cast<double>(pos) * freq);
    }
  }
}

Var Transformer::embed(Context& c, std::size_t table, std::span<const TokenId> ids) const {
  Var e = ad::scale(ad::gather_rows(c.p(table), ids), std::sqrt(static_cast<double>(hp_.d_model)));
  e = ad::add_constant(e, positions_.topRows(static_cast<ad::Index>(ids.size())));
  if (c.mode == Mode::Train) e = ad::dropout(e, hp_.dropout, *c.rng);
  return e;
}

Var Transformer::norm(Context& c, const NormIdx& idx, const Var& x) const {
  return ad::layer_norm(x, c.p(idx.gain), c.p(idx.bias));
}

Var Transformer::attention(Context& c, const AttnIdx& idx, const Var& q_in, const Var& kv_in, bool causal,
                           std::vector<Var>* probs) const {
  const auto dk = static_cast<ad::Index>(hp_.d_model / hp_.heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Var q = ad::add_row(ad::matmul(q_in, c.p(idx.wq)), c.p(idx.bq));
  Var k = ad::add_row(ad::matmul(kv_in, c.p(idx.wk)), c.p(idx.bk));
  Var v = ad::add_row(ad::matmul(kv_in, c.p(idx.wv)), c.p(idx.bv));
  std::vector<Var> heads;
  for (std::size_t h = 0; h < hp_.heads; ++h) {
    const auto off = static_cast<ad::Index>(h) * dk;
    Var qh = ad::slice_cols(q, off, dk);
    Var kh = ad::slice_cols(k, off, dk);
    Var vh = ad::slice_cols(v, off, dk);
    Var p = ad::softmax_rows(ad::scale(ad::matmul_bt(qh, kh), scale), causal);
    if (probs) probs->push_back(p);
    if (c.mode == Mode::Train) p = ad::dropout(p, hp_.dropout, *c.rng);
    heads.push_back(ad::matmul(p, vh));
  }
  Var cat = heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
  return ad::add_row(ad::matmul(cat, c.p(idx.wo)), c.p(idx.bo));
}

Var Transformer::feed_forward(Context& c, const FfnIdx& idx, const Var& x) const {
  Var h = ad::relu(ad::add_row(ad::matmul(x, c.p(idx.w1)), c.p(idx.b1)));
  return ad::add_row(ad::matmul(h, c.p(idx.w2)), c.p(idx.b2));
}

Var Transformer::run_encoder(Context& c, std::span<const TokenId> src, ForwardGraph* g) const {
  auto residual = [&](const Var& x, const Var& branch) {
    return ad::add(x, c.mode == Mode::Train ? ad::dropout(branch, hp_.dropout, *c.rng) : branch);
  };
  Var x = embed(c, src_embed_, src);
  for (const auto& layer : enc_) {
    std::vector<Var> probs;
    Var h = norm(c, layer.ln1, x);
    x = residual(x, attention(c, layer.self, h, h, false, &probs));
    x = residual(x, feed_forward(c, layer.ffn, norm(c, layer.ln2, x)));
    if (g) g->enc_self.push_back(std::move(probs));
  }
  return norm(c, enc_norm_, x);
}

Var Transformer::run_decoder(Context& c, const Var& memory, std::span<const TokenId> input, ForwardGraph* g,
                             bool last_row_only) const {
  auto residual = [&](const Var& x, const Var& branch) {
    return ad::add(x, c.mode == Mode::Train ? ad::dropout(branch, hp_.dropout, *c.rng) : branch);
  };
  Var y = embed(c, tgt_embed_, input);
  for (const auto& layer : dec_) {
    std::vector<Var> self_probs, cross_probs;
    Var h = norm(c, layer.ln1, y);
    y = residual(y, attention(c, layer.self, h, h, true, g ? &self_probs : nullptr));
    y = residual(y, attention(c, layer.cross, norm(c, layer.ln2, y), memory, false, g ? &cross_probs : nullptr));
    y = residual(y, feed_forward(c, layer.ffn, norm(c, layer.ln3, y)));
    if (g) {
      g->dec_self.push_back(std::move(self_probs));
      g->dec_cross.push_back(std::move(cross_probs));
    }
  }
  y = norm(c, dec_norm_, y);
  if (last_row_only) y = c.tape.constant(y.value().bottomRows(1));
  Var logits = ad::add_row(ad::matmul(y, c.p(out_w_)), c.p(out_b_));
  return ad::log_softmax_rows(logits);
}

std::unique_ptr<ForwardGraph> Transformer::build(const TokenSeq& src, const TokenSeq& tgt, Mode mode,
                                                 std::mt19937_64* rng, Parameters* grads) const {
  if (src.empty()) throw ModelError("empty source sequence");
  if (src.size() > hp_.max_len || tgt.size() + 1 > hp_.max_len)
    throw ModelError("sequence longer than max_len " + std::to_string(hp_.max_len));
  if (mode == Mode::Train && hp_.dropout > 0.0 && rng == nullptr)
    throw ModelError("train mode with dropout needs an RNG");
  auto g = std::make_unique<ForwardGraph>(grads != nullptr);
  Context c{g->tape, mode, rng, grads, params_, std::vector<Var>(params_.size())};
  std::vector<TokenId> input{kBos};
  input.insert(input.end(), tgt.ids.begin(), tgt.ids.end());
  g->gold = gold_outputs(tgt);
  g->encoder_states = run_encoder(c, src.ids, g.get());
  g->log_probs = run_decoder(c, g->encoder_states, input, g.get(), false);
  return g;
}

ForwardTrace Transformer::forward(const TokenSeq& src, const TokenSeq& tgt, Mode mode,
                                  std::mt19937_64* rng) const {
  return build(src, tgt, mode, rng, nullptr)->trace();
}

Matrix Transformer::encode(const TokenSeq& src) const {
  if (src.empty()) throw ModelError("empty source sequence");
  if (src.size() > hp_.max_len) throw ModelError("sequence longer than max_len " + std::to_string(hp_.max_len));
  ad::Tape tape(false);
  Context c{tape, Mode::Eval, nullptr, nullptr, params_, std::vector<Var>(params_.size())};
  return run_encoder(c, src.ids, nullptr).value();
}

Matrix Transformer::next_log_probs(const Matrix& memory, std::span<const TokenId> decoder_input) const {
  if (decoder_input.size() > hp_.max_len) throw ModelError("decoder input longer than max_len");
  ad::Tape tape(false);
  Context c{tape, Mode::Eval, nullptr, nullptr, params_, std::vector<Var>(params_.size())};
  Var mem = tape.constant(memory);
  return run_decoder(c, mem, decoder_input, nullptr, true).value();
}

// ---------------------------------------------------------------- gradients

GradientResult backward(const Transformer& model, const TokenSeq& src, const TokenSeq& tgt,
                        const std::function<Var(ForwardGraph&)>& objective, Mode mode, std::mt19937_64* rng) {
  GradientResult r;
  r.grads = model.parameters().zeros_like();
  auto g = model.build(src, tgt, mode, rng, &r.grads);
  Var loss = objective(*g);
  r.loss = loss.scalar();
  if (!std::isfinite(r.loss)) throw ModelError("non-finite loss");
  g->tape.backward(loss);
  return r;
}

// ---------------------------------------------------------------- decoding

Hypothesis decode(const Transformer& model, const TokenSeq& src, const DecodeConfig& cfg,
                  std::span<const TokenId> forced_prefix) {
  if (cfg.beam < 1) throw ModelError("beam width must be >= 1");
  const Matrix memory = model.encode(src);
  std::vector<TokenId> base{kBos};
  base.insert(base.end(), forced_prefix.begin(), forced_prefix.end());

  struct Beam {
    std::vector<TokenId> tokens;
    double score;
  };
  std::vector<Beam> alive{{{}, 0.0}};
  std::vector<Hypothesis> finished;
  const std::size_t limit = std::min(cfg.max_len, model.hyperparams().max_len - base.size() + 1);

  for (std::size_t step = 0; step < limit && !alive.empty(); ++step) {
    // (score, beam index, token); sorted by score desc, then index, then token.
    std::vector<std::tuple<double, std::size_t, TokenId>> cand;
    for (std::size_t b = 0; b < alive.size(); ++b) {
      std::vector<TokenId> input = base;
      input.insert(input.end(), alive[b].tokens.begin(), alive[b].tokens.end());
      const Matrix lp = model.next_log_probs(memory, input);
      for (ad::Index v = 0; v < lp.cols(); ++v) {
        const auto tok = static_cast<TokenId>(v);
        if (generatable(tok)) cand.emplace_back(alive[b].score + lp(0, v), b, tok);
      }
    }
    const std::size_t keep = std::min(cfg.beam, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                      [](const auto& a, const auto& b) {
                        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
                        if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
                        return std::get<2>(a) < std::get<2>(b);
                      });
    std::vector<Beam> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& [score, b, tok] = cand[i];
      if (tok == kEos) {
        finished.push_back({alive[b].tokens, score, true});
      } else {
        Beam nb{alive[b].tokens, score};
        nb.tokens.push_back(tok);
        next.push_back(std::move(nb));
      }
    }
    alive = std::move(next);
    // Scores only decrease, so nothing alive can overtake the best finished one.
    if (!finished.empty()) {
      double best_finished = finished.front().score;
      for (const auto& h : finished) best_finished = std::max(best_finished, h.score);
      bool any_better = false;
      for (const auto& a : alive) any_better = any_better || a.score > best_finished;
      if (!any_better) alive.clear();
    }
  }
  std::vector<Hypothesis> pool = finished;
  for (auto& a : alive) pool.push_back({std::move(a.tokens), a.score, false});
  if (pool.empty()) return {};
  // Highest score over finished and length-capped hypotheses; a finished one
  // wins a tie, then the earliest.
  auto better = [](const Hypothesis& a, const Hypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.finished && !b.finished;
  };
  return *std::min_element(pool.begin(), pool.end(), [&](const auto& a, const auto& b) { return better(a, b); });
}

}  // namespace ctxattn
