#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ctxattn/scat_io.hpp"
#include "ctxattn/textcore.hpp"

namespace ctxattn {

class ForgeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Word alignment of one sentence pair: (source index, target index) links.
struct AlignmentRecord {
  std::size_t pair_id = 0;
  std::vector<std::pair<std::size_t, std::size_t>> links;
};

/// Pharaoh format: one line per sentence pair, "i-j" links separated by
/// spaces. Blank lines are pairs without links.
std::vector<AlignmentRecord> parse_alignments(std::istream& in);

struct AnnotatedToken {
  std::string surface;
  std::string lemma;
  std::string pos;
};

struct AnnotatedPair {
  std::vector<AnnotatedToken> src;
  std::vector<AnnotatedToken> tgt;
};

/// One line per sentence pair: source tokens, a TAB, target tokens; every
/// token is "surface|lemma|POS" (the POS may be omitted on the target side).
std::vector<AnnotatedPair> parse_annotations(std::istream& in);

/// Annotated pairs grouped into documents.
struct AnnotatedDocument {
  std::string id;
  std::vector<AnnotatedPair> pairs;
  std::vector<AlignmentRecord> alignments;
};

/// Splits the flat pair/alignment lists along the document sizes of `corpus`.
std::vector<AnnotatedDocument> attach_annotations(const std::vector<ParallelDocument>& corpus,
                                                  std::vector<AnnotatedPair> pairs,
                                                  std::vector<AlignmentRecord> alignments);

using SourceKey = std::pair<std::string, std::string>;  // (lemma, POS)

struct CountTable {
  std::map<SourceKey, std::map<std::string, std::size_t>> rows;

  void add(const SourceKey& key, const std::string& target_lemma, std::size_t n = 1);
  void merge(const CountTable& other);
  std::size_t marginal(const SourceKey& key) const;
  bool operator==(const CountTable&) const = default;
};

/// c(v_x, t_x, v_y) over every alignment link.
CountTable accumulate_counts(std::span<const AnnotatedPair> pairs, std::span<const AlignmentRecord> alignments);
CountTable accumulate_counts(std::span<const AnnotatedDocument> docs);

/// -Σ p ln p over the row's conditional distribution.
double entropy(const std::map<std::string, std::size_t>& row);

enum class GroupClass { Unclassified, Synonymous, NonSynonymous, Rejected };
std::string to_string(GroupClass c);
GroupClass parse_group_class(const std::string& s);

struct AmbiguousGroup {
  SourceKey source;
  std::vector<std::pair<std::string, std::size_t>> targets;  // count desc, then lemma
  double entropy = 0.0;
  GroupClass cls = GroupClass::Unclassified;

  bool operator==(const AmbiguousGroup&) const = default;
};

inline constexpr std::size_t kDefaultMinCount = 50;
inline constexpr double kDefaultEntropyThreshold = 0.3;

/// Targets under min_count are dropped; rows then need min_targets targets
/// and entropy >= z (computed on the full row). Sorted by entropy
/// descending, ties by source key.
std::vector<AmbiguousGroup> extract_groups(const CountTable& table, std::size_t min_count = kDefaultMinCount,
                                           std::size_t min_targets = 2, double z = kDefaultEntropyThreshold);

/// TSV "lemma<TAB>POS<TAB>class[<TAB>...]"; '#' starts a comment.
std::map<SourceKey, GroupClass> parse_review(std::istream& in);
/// Sets each group's class from the review; unlisted groups stay unclassified.
void apply_review(std::vector<AmbiguousGroup>& groups, const std::map<SourceKey, GroupClass>& review);
/// Candidate list in the review layout, class column "unclassified" unless set.
std::string groups_tsv(std::span<const AmbiguousGroup> groups);

struct ForgeResult {
  std::vector<ScatExample> examples;
  std::vector<std::string> warnings;
};

inline constexpr std::size_t kDefaultLexicalWindow = 5;

/// For every aligned occurrence of a classified group, emits one example per
/// alternative target lemma, swapping only that aligned target token for the
/// alternative's most frequent aligned surface form. Synonymous groups also
/// require the correct target lemma within the previous `window` target
/// sentences. Context holds up to `window` previous sentences.
ForgeResult make_contrastive(std::span<const AnnotatedDocument> docs, std::span<const AmbiguousGroup> groups,
                             std::size_t window = kDefaultLexicalWindow);

}  // namespace ctxattn
