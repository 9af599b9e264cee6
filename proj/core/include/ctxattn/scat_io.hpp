#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxattn/textcore.hpp"

namespace ctxattn {

class ScatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised whenever a human vector ends up with zero highlighted tokens.
class NoHighlightsError : public ScatError {
 public:
  NoHighlightsError() : ScatError("no highlighted tokens") {}
};

/// A highlighted word: sentence offset (0 = current, -1 = previous, ...) and
/// the token index within that sentence.
struct Highlight {
  int sentence = 0;
  std::size_t token = 0;

  auto operator<=>(const Highlight&) const = default;
};

enum class Side { Source, Target };

struct ScatExample {
  std::string id;
  std::vector<std::string> ctx_src;  // discourse order, back() is the previous sentence
  std::vector<std::string> ctx_tgt;
  std::string src;
  std::string tgt_correct;
  std::string tgt_incorrect;
  std::size_t pron_src_idx = 0;
  std::size_t pron_tgt_idx = 0;
  std::vector<Highlight> hl_src;
  std::vector<Highlight> hl_tgt;
  ContextConfig ctx_level;
  std::string confidence;

  const std::vector<Highlight>& highlights(Side side) const {
    return side == Side::Source ? hl_src : hl_tgt;
  }
};

/// Parses SCAT JSON-lines. Every line is validated; the first malformed line
/// raises ScatError naming the line number. With require_highlights=false the
/// hl_src/hl_tgt fields may be absent (contrastive test sets).
std::vector<ScatExample> parse_scat(std::istream& in, bool require_highlights = true);
std::vector<ScatExample> parse_scat(const std::filesystem::path& path,
                                    bool require_highlights = true);

/// Lenient variant: malformed lines are skipped and their errors collected.
struct ScatParseResult {
  std::vector<ScatExample> examples;
  std::vector<std::string> errors;
};
ScatParseResult parse_scat_lenient(std::istream& in, bool require_highlights = true);

std::string scat_to_json_line(const ScatExample& ex);
void write_scat(std::ostream& out, const std::vector<ScatExample>& examples);

/// Converts the public release's tagged text: one line per example on each
/// side, sentences separated by <brk> (current sentence last), the ambiguous
/// word wrapped in <p>...</p> and highlighted spans in <hon>...<hoff>. The
/// incorrect candidate swaps il/elle and ils/elles on the target pronoun.
/// Lines that cannot be converted are reported, not fatal.
struct ScatConversion {
  std::vector<ScatExample> examples;
  std::vector<std::string> errors;
};
ScatConversion convert_scat_release(std::istream& src_lines, std::istream& tgt_lines,
                                    const std::string& id_prefix = "scat");

using HumanAttentionVector = std::vector<double>;  // entries in {0, 1}

struct NormalizedHumanAttention {
  std::vector<double> probs;
  double epsilon = 0.0;
  std::size_t highlighted = 0;
};

/// Concatenated source (cfg.n) or target (cfg.m) sequence for the example.
/// The target side uses the correct candidate unless `incorrect` is set.
TokenSeq scat_sequence(const ScatExample& ex, Side side, const ContextConfig& cfg,
                       const Vocabulary& vocab, bool incorrect = false);

/// Binary vector over scat_sequence(ex, side, cfg). Highlights in context
/// sentences beyond the configured window are dropped; <brk> is always 0.
HumanAttentionVector human_vector(const ScatExample& ex, Side side, const ContextConfig& cfg,
                                  const Vocabulary& vocab);

/// Position of the ambiguous word inside scat_sequence(ex, side, cfg).
std::size_t pronoun_position(const ScatExample& ex, Side side, const ContextConfig& cfg);

inline constexpr double kDefaultEpsilon = 1e-6;

/// Highlighted entries share (1 - (L-k)·ε)/k, the rest get ε.
NormalizedHumanAttention normalize_human(const HumanAttentionVector& h,
                                         double epsilon = kDefaultEpsilon);

enum class AttentionType { EncSelf, DecCross, DecSelf };
inline constexpr AttentionType kAllAttentionTypes[] = {AttentionType::EncSelf,
                                                       AttentionType::DecCross,
                                                       AttentionType::DecSelf};
std::string to_string(AttentionType t);
AttentionType parse_attention_type(const std::string& s);

/// Maps the per-side vectors onto the key space of one attention row.
///
/// enc-self keys are source tokens; the query (source pronoun) is cleared so
/// self-focus is never rewarded. dec-cross keys are source tokens, unchanged.
/// dec-self keys are the decoder inputs <bos> y_0 .. y_{T-1}: the target
/// vector is shifted right by one and truncated to the causal prefix of the
/// query row (keys 0..query). Throws NoHighlightsError when nothing remains.
HumanAttentionVector project_to_keyspace(const HumanAttentionVector& src,
                                         const HumanAttentionVector& tgt, AttentionType type,
                                         std::size_t query);

struct HighlightHistogram {
  std::map<std::size_t, std::size_t> source;  // sentence distance -> count
  std::map<std::size_t, std::size_t> target;
};

HighlightHistogram highlight_distance_histogram(const std::vector<ScatExample>& examples);

}  // namespace ctxattn
