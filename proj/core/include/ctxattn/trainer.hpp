#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxattn/checkpoint.hpp"
#include "ctxattn/nnmodel.hpp"
#include "ctxattn/scat_io.hpp"
#include "ctxattn/textcore.hpp"

namespace ctxattn {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class HeadSelection { First, Average };

/// One attention row to regularize. `layer` is 0-based from the input side,
/// so layer 0 is the bottom and n-1 the top of its stack.
struct RegTarget {
  AttentionType type = AttentionType::DecCross;
  std::size_t layer = 0;
  HeadSelection heads = HeadSelection::First;

  bool operator==(const RegTarget&) const = default;
};

/// "<type>:<layer>[:first|avg]" where layer is "top", "bottom" or 1-based.
RegTarget parse_reg_target(const std::string& spec, const Hyperparams& hp);
std::string to_string(const RegTarget& t, const Hyperparams& hp);

enum class Regime { Baseline, AttnRegRand, AttnRegPre };
std::string to_string(Regime r);
Regime parse_regime(const std::string& s);

/// attnreg-rand: enc-self top, dec-cross top, dec-self bottom.
/// attnreg-pre: dec-self top. Baseline: none.
std::vector<RegTarget> default_targets(Regime regime, const Hyperparams& hp);

struct TrainConfig {
  double lambda = 10.0;
  double p_scat = 0.2;
  std::vector<RegTarget> targets;  // empty: regime defaults
  Regime regime = Regime::AttnRegRand;
  std::size_t batch_size = 16;
  std::size_t steps = 1000;
  std::size_t warmup = 4000;
  double lr_scale = 1.0;
  std::uint64_t seed = 1;
  ContextConfig context{5, 5};
  double epsilon = kDefaultEpsilon;

  /// Baseline forces lambda = 0 and p_scat = 0.
  TrainConfig resolved(const Hyperparams& hp) const;
  void validate(const Hyperparams& hp) const;  // throws TrainError naming the field
};

/// d_model^-0.5 · min(step^-0.5, step · warmup^-1.5); step >= 1.
double lr_at_step(std::size_t step, std::size_t d_model, std::size_t warmup);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.98;
inline constexpr double kAdamEpsilon = 1e-9;

AdamState make_adam_state(const Parameters& params);
/// Bias-corrected Adam. All gradients are checked before any parameter moves;
/// a non-finite entry raises TrainError naming the parameter.
void adam_step(Parameters& params, const Parameters& grads, AdamState& state, double lr,
               double beta1 = kAdamBeta1, double beta2 = kAdamBeta2, double eps = kAdamEpsilon);

/// A SCAT example turned into model inputs plus per-side human vectors.
struct ScatSample {
  std::string id;
  TokenSeq src;
  TokenSeq tgt;              // correct candidate
  std::size_t src_query = 0;  // source pronoun position
  std::size_t tgt_query = 0;  // decoder row predicting the target pronoun
  HumanAttentionVector human_src;
  HumanAttentionVector human_tgt;
};

ScatSample prepare_scat(const ScatExample& ex, const ContextConfig& cfg, const Vocabulary& vocab);

/// Query row and normalized human distribution for one target, or nullopt
/// when the projected human vector is empty.
struct RegRow {
  std::size_t query = 0;
  std::size_t length = 0;
  NormalizedHumanAttention human;
};
std::optional<RegRow> resolve_reg_row(const ScatSample& s, AttentionType type, double epsilon);

/// Σ_targets KL(α_human-norm ‖ α_model) / L over usable targets. Throws
/// ScatError("unusable SCAT example") when no target is usable.
double attnreg_loss(const ForwardTrace& trace, const ScatSample& s, std::span<const RegTarget> targets,
                    double epsilon = kDefaultEpsilon);
ad::Var attnreg_loss(ForwardGraph& graph, const ScatSample& s, std::span<const RegTarget> targets,
                     double epsilon = kDefaultEpsilon);

struct MtSample {
  TokenSeq src;
  TokenSeq tgt;
};

/// One sample per sentence of every document, with context per cfg.
std::vector<MtSample> build_mt_samples(const std::vector<ParallelDocument>& corpus, const ContextConfig& cfg,
                                       const Vocabulary& vocab);

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  bool scat_batch = false;
  double loss_mt = 0.0;
  double loss_reg = 0.0;  // mean attnreg_loss over the batch (0 on MT batches)
  double total = 0.0;
};
std::string to_json_line(const StepRecord& r);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepRecord> log;
  bool diverged = false;
  std::string error;
  std::size_t unusable_scat = 0;
};

/// Draws a SCAT batch with probability p_scat, else an MT batch. The batch
/// loss is mean(L_MT) on MT batches and mean(L_MT + λ·attnreg) on SCAT
/// batches. attnreg-pre requires `init`.
TrainResult train(const Hyperparams& hp, const std::optional<Checkpoint>& init, std::span<const MtSample> mt,
                  std::span<const ScatSample> scat, const TrainConfig& cfg,
                  const std::function<void(const StepRecord&)>& on_step = {});

}  // namespace ctxattn
