#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "common/wsd_fixture.hpp"
#include "ctxattn/wsdforge.hpp"

using namespace ctxattn;
using namespace ctxattn::testing;

namespace {

std::vector<AnnotatedDocument> fixture_docs(const WsdFixture& f) {
  std::istringstream ann(f.annotations), ali(f.alignments);
  return attach_annotations(f.corpus, parse_annotations(ann), parse_alignments(ali));
}

AnnotatedPair nail_clou() {
  std::istringstream in("the|the|DET nail|nail|NOUN\tle|le clou|clou\n");
  return parse_annotations(in).front();
}

}  // namespace

TEST(Alignments, PharaohParsing) {
  std::istringstream in("0-0 1-2\n\n2-1\n");
  const auto a = parse_alignments(in);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[0].links, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 2}}));
  EXPECT_TRUE(a[1].links.empty());
  EXPECT_EQ(a[2].pair_id, 2u);
  std::istringstream bad("0-x\n");
  EXPECT_THROW(parse_alignments(bad), ForgeError);
}

TEST(Counts, SinglePairAndAdditivity) {
  const std::vector<AnnotatedPair> one = {nail_clou()};
  const std::vector<AlignmentRecord> links = {{0, {{1, 1}}}};
  const auto c = accumulate_counts(one, links);
  EXPECT_EQ(c.rows.at({"nail", "NOUN"}).at("clou"), 1u);
  const std::vector<AnnotatedPair> two = {nail_clou(), nail_clou()};
  const std::vector<AlignmentRecord> links2 = {{0, {{1, 1}}}, {1, {{1, 1}}}};
  const auto c2 = accumulate_counts(two, links2);
  EXPECT_EQ(c2.rows.at({"nail", "NOUN"}).at("clou"), 2u);
  auto merged = c;
  merged.merge(c);
  EXPECT_EQ(merged, c2);
  EXPECT_EQ(c2.marginal({"nail", "NOUN"}), 2u);
}

TEST(Counts, OutOfBoundsLinkRejected) {
  const std::vector<AnnotatedPair> one = {nail_clou()};
  const std::vector<AlignmentRecord> links = {{0, {{1, 5}}}};
  EXPECT_THROW(accumulate_counts(one, links), ForgeError);
  std::vector<ParallelDocument> corpus = {{"d", {{"the nail", "le clou"}}}};
  EXPECT_THROW(attach_annotations(corpus, {nail_clou()}, links), ForgeError);
  EXPECT_THROW(attach_annotations(corpus, {nail_clou(), nail_clou()}, links), ForgeError);
}

TEST(Counts, FixtureTableEqualsEnumeration) {
  const auto f = make_wsd_fixture();
  const auto table = accumulate_counts(fixture_docs(f));
  const auto oracle = oracle_counts(f);
  ASSERT_EQ(table.rows.size(), oracle.size());
  for (const auto& [key, row] : oracle) {
    EXPECT_EQ(table.rows.at(key), row);
    std::size_t sum = 0;
    for (const auto& [k, n] : row) sum += n;
    EXPECT_EQ(table.marginal(key), sum);
  }
  EXPECT_EQ(table.rows.at({"nail", "NOUN"}).at("clou"), 6u);
  EXPECT_EQ(table.rows.at({"spring", "NOUN"}).at("printemps"), 19u);
}

TEST(Entropy, SpotValues) {
  EXPECT_NEAR(entropy({{"clou", 60}, {"ongle", 60}}), std::log(2.0), 1e-12);
  EXPECT_NEAR(entropy({{"clou", 60}, {"ongle", 60}}), 0.6931, 1e-4);
  EXPECT_EQ(entropy({{"clou", 7}}), 0.0);
  EXPECT_NEAR(entropy({{"a", 95}, {"b", 5}}), 0.1985, 1e-4);
  EXPECT_THROW(entropy({}), ForgeError);
  EXPECT_THROW(entropy({{"a", 0}}), ForgeError);
}

TEST(Entropy, BoundedAndScaleInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> n(1, 50), sz(1, 8);
  for (int t = 0; t < 200; ++t) {
    std::map<std::string, std::size_t> row, scaled;
    const std::size_t k = sz(rng);
    for (std::size_t i = 0; i < k; ++i) {
      const auto c = n(rng);
      row["w" + std::to_string(i)] = c;
      scaled["w" + std::to_string(i)] = 7 * c;
    }
    const double h = entropy(row);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(k)) + 1e-12);
    EXPECT_NEAR(entropy(scaled), h, 1e-12);
  }
}

TEST(ExtractGroups, FilterRules) {
  CountTable t;
  t.add({"nail", "NOUN"}, "clou", 60);
  t.add({"nail", "NOUN"}, "ongle", 60);
  t.add({"spring", "NOUN"}, "printemps", 95);
  t.add({"spring", "NOUN"}, "ressort", 5);
  const auto g = extract_groups(t, 50, 2, 0.5);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].source, (SourceKey{"nail", "NOUN"}));
  EXPECT_NEAR(g[0].entropy, std::log(2.0), 1e-12);
  EXPECT_TRUE(extract_groups(CountTable{}, 50, 2, 0.3).empty());
  EXPECT_TRUE(extract_groups(t, 50, 2, 0.7).empty());
}

TEST(ExtractGroups, MonotoneInZ) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> n(1, 120);
  CountTable t;
  for (int w = 0; w < 40; ++w)
    for (int k = 0; k < 4; ++k) t.add({"w" + std::to_string(w), "NOUN"}, "t" + std::to_string(k), n(rng));
  std::size_t prev = SIZE_MAX;
  for (double z = 0.0; z <= 1.5; z += 0.05) {
    const auto g = extract_groups(t, 30, 2, z);
    EXPECT_LE(g.size(), prev);
    prev = g.size();
    for (std::size_t i = 1; i < g.size(); ++i) EXPECT_GE(g[i - 1].entropy, g[i].entropy);
  }
}

TEST(ExtractGroups, FixtureMatchesOracle) {
  const auto f = make_wsd_fixture();
  const auto groups = extract_groups(accumulate_counts(fixture_docs(f)), f.min_count, 2, f.z);
  const auto oracle = oracle_groups(oracle_counts(f), f.min_count, 2, f.z);
  ASSERT_EQ(groups.size(), oracle.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    EXPECT_EQ(groups[i].source, oracle[i].key);
    EXPECT_EQ(groups[i].targets, oracle[i].targets);
    EXPECT_DOUBLE_EQ(groups[i].entropy, oracle[i].entropy);
  }
  ASSERT_EQ(groups.size(), 2u);  // nail and heater; spring is skewed
}

TEST(Review, ParseApplyAndTsv) {
  std::istringstream in("# header\nnail\tNOUN\tnon-synonymous\nheater\tNOUN\tsynonymous\nbank\tNOUN\trejected\n");
  const auto r = parse_review(in);
  EXPECT_EQ(r.at({"nail", "NOUN"}), GroupClass::NonSynonymous);
  EXPECT_EQ(r.at({"bank", "NOUN"}), GroupClass::Rejected);
  std::vector<AmbiguousGroup> g(2);
  g[0].source = {"nail", "NOUN"};
  g[1].source = {"cold", "ADJ"};
  apply_review(g, r);
  EXPECT_EQ(g[0].cls, GroupClass::NonSynonymous);
  EXPECT_EQ(g[1].cls, GroupClass::Unclassified);
  EXPECT_NE(groups_tsv(g).find("cold\tADJ\tunclassified"), std::string::npos);
  std::istringstream bad("nail\tNOUN\tmaybe\n");
  EXPECT_THROW(parse_review(bad), ForgeError);
}

TEST(MakeContrastive, NailSwapsClouForOngle) {
  const auto f = make_wsd_fixture();
  const auto docs = fixture_docs(f);
  auto groups = extract_groups(accumulate_counts(docs), f.min_count, 2, f.z);
  std::istringstream rv(f.review);
  apply_review(groups, parse_review(rv));
  const auto r = make_contrastive(docs, groups, 5);
  const auto it = std::find_if(r.examples.begin(), r.examples.end(), [](const ScatExample& e) { return e.id == "d1:0:1-1:ongle"; });
  ASSERT_NE(it, r.examples.end());
  EXPECT_EQ(it->tgt_correct, "le clou cassa .");
  EXPECT_EQ(it->tgt_incorrect, "le ongle cassa .");
  EXPECT_EQ(it->pron_src_idx, 1u);
  EXPECT_EQ(it->pron_tgt_idx, 1u);
  EXPECT_EQ(it->confidence, "non-synonymous");
  // the plural "clous" is never the substitute: "clou" is the most frequent surface
  for (const auto& e : r.examples)
    if (e.id.ends_with(":clou")) EXPECT_NE(e.tgt_incorrect.find(" clou "), std::string::npos) << e.id;
}

TEST(MakeContrastive, SynonymousNeedsPriorOccurrence) {
  const auto f = make_wsd_fixture();
  const auto docs = fixture_docs(f);
  auto groups = extract_groups(accumulate_counts(docs), f.min_count, 2, f.z);
  std::istringstream rv(f.review);
  apply_review(groups, parse_review(rv));
  const auto r = make_contrastive(docs, groups, 5);
  // d1 sentence 2 is the first heater: no earlier chauffage, so nothing
  for (const auto& e : r.examples) EXPECT_FALSE(e.id.starts_with("d1:2:")) << e.id;
  // d1 sentence 5 repeats chauffage three sentences later: emitted
  EXPECT_TRUE(std::any_of(r.examples.begin(), r.examples.end(),
                          [](const ScatExample& e) { return e.id == "d1:5:1-1:radiateur"; }));
}

TEST(MakeContrastive, EqualsEnumerationOracle) {
  const auto f = make_wsd_fixture();
  const auto docs = fixture_docs(f);
  auto groups = extract_groups(accumulate_counts(docs), f.min_count, 2, f.z);
  std::istringstream rv(f.review);
  apply_review(groups, parse_review(rv));
  const auto r = make_contrastive(docs, groups, 5);
  std::set<OracleExample> got;
  for (const auto& e : r.examples) {
    EXPECT_EQ(e.ctx_src.size(), e.ctx_tgt.size());
    got.emplace(e.id, e.src, e.tgt_correct, e.tgt_incorrect, e.ctx_src.size());
  }
  EXPECT_EQ(got.size(), r.examples.size());
  const auto oracle = oracle_contrastive(f, oracle_groups(oracle_counts(f), f.min_count, 2, f.z),
                                         {{"nail", "non-synonymous"}, {"heater", "synonymous"}}, 5);
  EXPECT_EQ(got, oracle);
  EXPECT_GT(oracle.size(), 12u);
}

TEST(MakeContrastive, ExactlyOneTokenDiffers) {
  const auto f = make_wsd_fixture();
  const auto docs = fixture_docs(f);
  auto groups = extract_groups(accumulate_counts(docs), f.min_count, 2, f.z);
  std::istringstream rv(f.review);
  apply_review(groups, parse_review(rv));
  for (const auto& e : make_contrastive(docs, groups, 5).examples) {
    const auto a = tokenize(e.tgt_correct), b = tokenize(e.tgt_incorrect);
    ASSERT_EQ(a.size(), b.size());
    std::size_t diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
    EXPECT_EQ(diff, 1u);
    EXPECT_NE(a[e.pron_tgt_idx], b[e.pron_tgt_idx]);
  }
}

TEST(MakeContrastive, UnclassifiedGroupsSkippedWithWarning) {
  const auto f = make_wsd_fixture();
  const auto docs = fixture_docs(f);
  const auto groups = extract_groups(accumulate_counts(docs), f.min_count, 2, f.z);
  const auto r = make_contrastive(docs, groups, 5);
  EXPECT_TRUE(r.examples.empty());
  EXPECT_EQ(r.warnings.size(), groups.size());
}
