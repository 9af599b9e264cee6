#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxattn/nnmodel.hpp"
#include "ctxattn/scat_io.hpp"
#include "ctxattn/trainer.hpp"

namespace ctxattn {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- alignment

/// Σ human[i]·model[i].
double dot_alignment(std::span<const double> human, std::span<const double> model);
/// KL(human-norm ‖ model), natural log.
double kl_alignment(const NormalizedHumanAttention& human, std::span<const double> model);
/// 1-based rank of the first highlighted token when keys are sorted by
/// descending model attention, equal attention ordered by position.
std::size_t probes_needed(std::span<const double> human, std::span<const double> model);

enum class HeadMode { PerHead, Averaged };

inline constexpr std::size_t kAveragedHead = std::numeric_limits<std::size_t>::max();

struct AlignmentCell {
  AttentionType type = AttentionType::EncSelf;
  std::size_t layer = 0;               // 0-based, bottom first
  std::size_t head = 0;                // kAveragedHead in averaged mode
  double dot = 0.0;
  double kl = 0.0;
  double probes = 0.0;
};

struct AlignmentBaseline {
  double dot = 0.0;
  double kl = 0.0;
  double probes = 0.0;
  std::size_t count = 0;    // examples scored for this attention type
  std::size_t skipped = 0;  // examples with no usable highlights for this type
};

enum class AlignMetric { Dot, Kl, Probes };
std::string to_string(AlignMetric m);

struct AlignmentReport {
  std::vector<AlignmentCell> cells;
  std::array<AlignmentBaseline, 3> uniform{};  // indexed by AttentionType
  std::size_t examples = 0;
  HeadMode head_mode = HeadMode::PerHead;

  const AlignmentBaseline& baseline(AttentionType t) const { return uniform[static_cast<std::size_t>(t)]; }
  /// Best cell for one metric and type: highest dot, lowest KL, lowest probes.
  /// Ties go to the earliest cell. nullopt when the type has no cells.
  std::optional<std::size_t> argbest(AlignMetric metric, AttentionType type) const;
};

using AttentionOracle = std::function<ForwardTrace(const ScatSample&)>;

/// Scores every (type, layer, head) cell over `samples`. Examples whose
/// projected human vector is empty for a type are skipped for that type.
AlignmentReport sweep(const AttentionOracle& attend, std::span<const ScatSample> samples, HeadMode mode,
                      double epsilon = kDefaultEpsilon);
AlignmentReport sweep(const Transformer& model, std::span<const ScatSample> samples, HeadMode mode,
                      double epsilon = kDefaultEpsilon);

/// Columns: type,layer,head,dot,kl,probes (head "avg" when averaged, layers
/// 1-based), followed by "uniform" rows and count/skipped rows.
std::string alignment_csv(const AlignmentReport& r);
AlignmentReport parse_alignment_csv(std::istream& in);
std::string alignment_json(const AlignmentReport& r);
/// Table-style text grid, one block per metric.
std::string format_alignment_grid(const AlignmentReport& r);

// ---------------------------------------------------------------- translation quality

/// Corpus BLEU-4 with exponential smoothing on zero match counts, over the
/// textcore tokenizer. Range [0, 100].
double bleu(std::span<const std::string> hypotheses, std::span<const std::string> references);

struct NgramStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};
NgramStats ngram_stats(std::span<const std::string> hypotheses, std::span<const std::string> references);
double bleu_from_stats(const NgramStats& s);

inline const std::vector<std::string> kDefaultPronouns = {"il", "elle", "ils", "elles"};

struct WordFMeasure {
  double f_target = 0.0;
  double f_other = 0.0;
  std::size_t n_target = 0;  // examples averaged for f_target
  std::size_t n_other = 0;
};

/// Clipped bag-of-words F1 restricted to `target_words`, and over all other
/// non-reserved tokens. Examples where both sides hold none of the relevant
/// words are left out of that mean.
WordFMeasure word_fmeasure(std::span<const std::string> hypotheses, std::span<const std::string> references,
                           const std::vector<std::string>& target_words = kDefaultPronouns);

using CorpusMetric =
    std::function<double(std::span<const std::string> hyps, std::span<const std::string> refs)>;

struct BootstrapResult {
  double p_b_better = 0.0;  // (wins_B + ties/2) / resamples
  std::size_t wins_b = 0;
  std::size_t ties = 0;
  std::size_t resamples = 0;
  double score_a = 0.0;
  double score_b = 0.0;
};

/// Paired bootstrap over sentence indices; deterministic for a given seed.
BootstrapResult paired_bootstrap(const CorpusMetric& metric, std::span<const std::string> hyps_a,
                                 std::span<const std::string> hyps_b, std::span<const std::string> refs,
                                 std::size_t resamples, std::uint64_t seed);

}  // namespace ctxattn
