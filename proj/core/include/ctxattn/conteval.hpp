#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxattn/nnmodel.hpp"
#include "ctxattn/scat_io.hpp"
#include "ctxattn/textcore.hpp"

namespace ctxattn {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ContrastivePair {
  std::string id;
  std::string phenomenon = "pronoun";
  TokenSeq src;
  TokenSeq correct;
  TokenSeq incorrect;
  std::size_t src_pron = 0;  // position in src
  std::size_t tgt_pron = 0;  // position in correct
  // Highlighted positions in src / correct. Target positions are limited to
  // context sentences: current-sentence target tokens are scored, not read.
  std::vector<std::size_t> support_src;
  std::vector<std::size_t> support_tgt;
  bool has_highlights = false;
};

ContrastivePair make_contrastive_pair(const ScatExample& ex, const ContextConfig& cfg, const Vocabulary& vocab);
std::vector<ContrastivePair> make_contrastive_pairs(std::span<const ScatExample> examples, const ContextConfig& cfg,
                                                    const Vocabulary& vocab);

enum class MaskKind { None, Supporting, Random, SourceContext, TargetContext, AllContext };

struct MaskSpec {
  MaskKind kind = MaskKind::None;
  double p = 0.1;           // Random only
  std::uint64_t seed = 0;   // Random only

  /// "none", "supporting", "random" / "random:<p>", "source-context",
  /// "target-context", "all-context".
  static MaskSpec parse(const std::string& s, std::uint64_t seed = 0);
  std::string label() const;
  void validate() const;  // throws EvalError
};

/// The six ablations of the masking table, in display order.
std::vector<MaskSpec> standard_masks(std::uint64_t seed, double random_p = 0.1);

struct MaskedPair {
  TokenSeq src;
  TokenSeq correct;
  TokenSeq incorrect;
};

/// Replaces selected tokens with <mask>; lengths and <brk> separators are
/// kept. Context kinds cover every token before the current sentence. The
/// random draw for a pair depends only on (seed, pair id).
MaskedPair apply_mask(const ContrastivePair& pair, const MaskSpec& spec);

/// Σ log p(y_t | ...) over output positions `span` (teacher forced). Output
/// position |tgt| is <eos>.
double score_candidate(const Transformer& model, const TokenSeq& src, const TokenSeq& tgt, Span span);
/// Default span: the current sentence of `tgt` plus <eos>.
double score_candidate(const Transformer& model, const TokenSeq& src, const TokenSeq& tgt);

struct PairOutcome {
  std::string id;
  double score_correct = 0.0;
  double score_incorrect = 0.0;
  bool correct = false;  // strictly higher score for the correct candidate
};

/// Ranking rule: the correct candidate must score strictly higher.
inline bool prefers_correct(double score_correct, double score_incorrect) {
  return score_correct > score_incorrect;
}

struct ContrastiveResult {
  double accuracy = 0.0;
  std::vector<PairOutcome> outcomes;
};

ContrastiveResult contrastive_accuracy(const Transformer& model, std::span<const ContrastivePair> pairs,
                                       const MaskSpec& mask);

struct MaskRow {
  MaskSpec mask;
  ContrastiveResult result;
};
/// CSV "mask,accuracy,correct,total".
std::string mask_table_csv(std::span<const MaskRow> rows);
std::string format_mask_table(std::span<const MaskRow> rows);

enum class ContextMode { Gold, NonGold };
std::string to_string(ContextMode m);
ContextMode parse_context_mode(const std::string& s);

/// Decodes the document sentence by sentence. Previous target sentences are
/// forced as a decoder prefix: references in gold mode, earlier hypotheses
/// otherwise. Returns the decoded current sentences.
std::vector<std::string> translate_document(const Transformer& model, const ParallelDocument& doc,
                                            const ContextConfig& cfg, ContextMode mode, const DecodeConfig& decode_cfg,
                                            const Vocabulary& vocab);

}  // namespace ctxattn
