#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxattn/autodiff.hpp"
#include "ctxattn/scat_io.hpp"
#include "ctxattn/textcore.hpp"

namespace ctxattn {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Hyperparams {
  std::size_t n_enc = 2;
  std::size_t n_dec = 2;
  std::size_t heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  std::size_t max_len = 256;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;

  /// N=6, h=8, d_model=512, d_ff=2048.
  static Hyperparams transformer_base(std::size_t src_vocab, std::size_t tgt_vocab);

  void validate() const;  // throws ModelError
  bool operator==(const Hyperparams&) const = default;
};

/// Closed form:
///   attn  = 4·d² + 4·d            (q, k, v, out projections with biases)
///   ffn   = 2·d·d_ff + d_ff + d
///   norm  = 2·d
///   enc   = 2·norm + attn + ffn
///   dec   = 3·norm + 2·attn + ffn
///   total = (V_src + V_tgt)·d + N_enc·enc + N_dec·dec + 2·norm + d·V_tgt + V_tgt
std::size_t parameter_count(const Hyperparams& hp);

struct Parameters {
  std::vector<std::string> names;
  std::vector<ad::Matrix> tensors;

  std::size_t size() const { return tensors.size(); }
  std::size_t index(const std::string& name) const;
  std::size_t scalar_count() const;
  void set_zero();
  Parameters zeros_like() const;
  bool operator==(const Parameters& other) const;
};

enum class Mode { Train, Eval };

using AttentionStack = std::vector<std::vector<ad::Matrix>>;  // [layer][head]

struct ForwardTrace {
  AttentionStack enc_self;   // S × S
  AttentionStack dec_cross;  // T × S
  AttentionStack dec_self;   // T × T
  ad::Matrix encoder_states;  // S × d_model
  ad::Matrix log_probs;       // T × V_tgt, row t scores output token t

  const AttentionStack& attention(AttentionType type) const;
};

/// Tape-backed forward pass. Decoder inputs are <bos> y_0 .. y_{n-1} and
/// gold outputs y_0 .. y_{n-1} <eos>, so T = |tgt| + 1.
struct ForwardGraph {
  ad::Tape tape;
  std::vector<std::vector<ad::Var>> enc_self, dec_cross, dec_self;
  ad::Var encoder_states;
  ad::Var log_probs;
  std::vector<TokenId> gold;

  explicit ForwardGraph(bool record) : tape(record) {}
  const std::vector<std::vector<ad::Var>>& attention(AttentionType type) const;
  ForwardTrace trace() const;
};

/// Output positions of the whole target including <eos>.
Span full_output_span(const TokenSeq& tgt);
/// Output positions of the current sentence of tgt plus the final <eos>.
Span current_output_span(const TokenSeq& tgt);

/// Mean label-smoothed NLL over `span`, skipping <pad> targets.
double loss_mt(const ForwardTrace& trace, const TokenSeq& tgt, Span span, double smoothing);
ad::Var loss_mt(ForwardGraph& graph, Span span, double smoothing);

/// Pre-norm encoder-decoder transformer with sinusoidal positions.
class Transformer {
 public:
  /// Scaled-uniform init ±sqrt(6 / (fan_in + fan_out)); zero biases, unit gains.
  Transformer(const Hyperparams& hp, std::uint64_t seed);
  Transformer(const Hyperparams& hp, Parameters params);

  const Hyperparams& hyperparams() const { return hp_; }
  const Parameters& parameters() const { return params_; }
  Parameters& parameters() { return params_; }

  /// Builds the full teacher-forced graph. Train mode needs `rng` when
  /// dropout > 0. Gradients flow into `grads` when it is non-null.
  std::unique_ptr<ForwardGraph> build(const TokenSeq& src, const TokenSeq& tgt, Mode mode,
                                      std::mt19937_64* rng, Parameters* grads) const;

  ForwardTrace forward(const TokenSeq& src, const TokenSeq& tgt, Mode mode = Mode::Eval,
                       std::mt19937_64* rng = nullptr) const;

  /// Encoder output for incremental decoding.
  ad::Matrix encode(const TokenSeq& src) const;
  /// Log-probabilities for the token following `decoder_input` (1 × V).
  ad::Matrix next_log_probs(const ad::Matrix& memory, std::span<const TokenId> decoder_input) const;

 private:
  struct AttnIdx {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct FfnIdx {
    std::size_t w1, b1, w2, b2;
  };
  struct NormIdx {
    std::size_t gain, bias;
  };
  struct EncLayer {
    NormIdx ln1;
    AttnIdx self;
    NormIdx ln2;
    FfnIdx ffn;
  };
  struct DecLayer {
    NormIdx ln1;
    AttnIdx self;
    NormIdx ln2;
    AttnIdx cross;
    NormIdx ln3;
    FfnIdx ffn;
  };
  struct Context;

  void make_layout();
  void check_shapes() const;
  ad::Var embed(Context& c, std::size_t table, std::span<const TokenId> ids) const;
  ad::Var attention(Context& c, const AttnIdx& idx, const ad::Var& q_in, const ad::Var& kv_in,
                    bool causal, std::vector<ad::Var>* probs) const;
  ad::Var feed_forward(Context& c, const FfnIdx& idx, const ad::Var& x) const;
  ad::Var norm(Context& c, const NormIdx& idx, const ad::Var& x) const;
  ad::Var run_encoder(Context& c, std::span<const TokenId> src, ForwardGraph* g) const;
  ad::Var run_decoder(Context& c, const ad::Var& memory, std::span<const TokenId> input,
                      ForwardGraph* g, bool last_row_only) const;

  Hyperparams hp_;
  Parameters params_;
  ad::Matrix positions_;
  std::size_t src_embed_ = 0, tgt_embed_ = 0, out_w_ = 0, out_b_ = 0;
  NormIdx enc_norm_{}, dec_norm_{};
  std::vector<EncLayer> enc_;
  std::vector<DecLayer> dec_;
};

struct GradientResult {
  double loss = 0.0;
  Parameters grads;
};

/// Reverse-mode gradient of `objective(graph)` w.r.t. every parameter.
GradientResult backward(const Transformer& model, const TokenSeq& src, const TokenSeq& tgt,
                        const std::function<ad::Var(ForwardGraph&)>& objective, Mode mode,
                        std::mt19937_64* rng = nullptr);

/// Tokens the decoder may emit: <eos> and every non-reserved id.
inline bool generatable(TokenId id) { return id == kEos || id >= kNumReserved; }

struct DecodeConfig {
  std::size_t beam = 1;
  std::size_t max_len = 64;  // generated tokens including <eos>
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // generated tokens, without prefix or <eos>
  double score = 0.0;           // sum of log-probabilities (including <eos> when finished)
  bool finished = false;
};

/// Greedy (beam == 1) or beam search after a forced target prefix.
Hypothesis decode(const Transformer& model, const TokenSeq& src, const DecodeConfig& cfg,
                  std::span<const TokenId> forced_prefix = {});

}  // namespace ctxattn
