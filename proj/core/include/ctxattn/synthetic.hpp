#pragma once

#include <cstdint>
#include <vector>

#include "ctxattn/scat_io.hpp"
#include "ctxattn/textcore.hpp"

namespace ctxattn {

/// Seeded toy English→French language for pronoun disambiguation.
///
/// Documents are runs of episodes. An episode has 0..max_distractors noun
/// sentences, the antecedent noun sentence, distance-1 filler sentences and
/// a pronoun sentence "it is <adj> ." whose French subject (il/elle) follows
/// the gender of the most recent noun. Every pronoun sentence also becomes a
/// SCAT-style example with the antecedent noun highlighted on both sides.
struct SyntheticConfig {
  std::uint64_t seed = 7;
  std::size_t train_docs = 400;
  std::size_t episodes_per_doc = 2;
  std::size_t test_pairs = 500;
  std::size_t min_distance = 1;
  std::size_t max_distance = 5;
  std::size_t max_distractors = 2;
  ContextConfig context{5, 5};
};

struct SyntheticData {
  std::vector<ParallelDocument> train;
  std::vector<ScatExample> scat;  // rationales for the training pronoun sentences
  std::vector<ScatExample> test;  // held-out contrastive pairs with highlights
  Vocabulary vocab;
};

SyntheticData make_synthetic(const SyntheticConfig& cfg);

}  // namespace ctxattn
