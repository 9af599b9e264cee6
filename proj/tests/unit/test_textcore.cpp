#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <sstream>

#include "ctxattn/textcore.hpp"

using namespace ctxattn;

namespace {

ParallelDocument doc_of(std::vector<std::pair<std::string, std::string>> pairs) {
  return ParallelDocument{"d", std::move(pairs)};
}

std::size_t count_brk(const TokenSeq& s) { return std::count(s.ids.begin(), s.ids.end(), kBrk); }

}  // namespace

TEST(Tokenize, SplitsPunctuationAndKeepsReservedTokens) {
  EXPECT_EQ(tokenize("oui, il est là."), (std::vector<std::string>{"oui", ",", "il", "est", "là", "."}));
  EXPECT_EQ(tokenize("a <brk> b"), (std::vector<std::string>{"a", "<brk>", "b"}));
  EXPECT_TRUE(tokenize("   ").empty());
  EXPECT_EQ(normalize("  a   b\tc "), "a b c");
}

TEST(Vocabulary, ReservedIdsAreFixed) {
  Vocabulary v;
  ASSERT_EQ(v.size(), 6u);
  EXPECT_EQ(v.id("<unk>"), 0);
  EXPECT_EQ(v.id("<pad>"), 1);
  EXPECT_EQ(v.id("<bos>"), 2);
  EXPECT_EQ(v.id("<eos>"), 3);
  EXPECT_EQ(v.id("<brk>"), 4);
  EXPECT_EQ(v.id("<mask>"), 5);
}

TEST(Vocabulary, MinFreqRule) {
  auto v = Vocabulary::build({doc_of({{"a a b", ""}})}, 2, 100);
  EXPECT_EQ(v.size(), 7u);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_FALSE(v.contains("b"));
}

TEST(Vocabulary, EmptyCorpusThrows) {
  try {
    Vocabulary::build({}, 1, 10);
    FAIL();
  } catch (const TextError& e) {
    EXPECT_STREQ(e.what(), "empty corpus");
  }
}

TEST(Vocabulary, CapKeepsMostFrequentWithLexicographicTies) {
  // counts: w0..w9 with w_i appearing (i % 4) + 1 times
  std::string src;
  std::map<std::string, int> counts;
  for (int i = 0; i < 10; ++i) {
    const std::string w = "w" + std::to_string(i);
    for (int k = 0; k <= i % 4; ++k) {
      src += w + " ";
      ++counts[w];
    }
  }
  auto v = Vocabulary::build({doc_of({{src, ""}})}, 1, 6 + 3);
  ASSERT_EQ(v.size(), 9u);

  std::vector<std::pair<std::string, int>> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  for (int i = 0; i < 3; ++i) EXPECT_EQ(v.token(6 + i), sorted[static_cast<std::size_t>(i)].first);
}

TEST(Vocabulary, DeterministicAndRoundTrip) {
  std::vector<ParallelDocument> corpus = {doc_of({{"oui il est", "yes he is"}, {"non", "no it is"}})};
  auto a = Vocabulary::build(corpus, 1, 100);
  auto b = Vocabulary::build(corpus, 1, 100);
  EXPECT_EQ(a, b);
  std::stringstream ss;
  a.save(ss);
  EXPECT_EQ(Vocabulary::load(ss), a);
}

TEST(Vocabulary, SaveLayoutLineIsIdMinusSix) {
  auto v = Vocabulary::from_tokens({"x", "y"});
  std::stringstream ss;
  v.save(ss);
  EXPECT_EQ(ss.str(), "x\ny\n");
  EXPECT_EQ(v.id("y"), 7);
}

TEST(EncodeDecode, RoundTripAndUnk) {
  auto v = Vocabulary::from_tokens({"oui", "il", "est"});
  auto seq = v.encode("oui il est");
  EXPECT_EQ(seq.ids, (std::vector<TokenId>{6, 7, 8}));
  EXPECT_EQ(v.decode(seq), "oui il est");
  EXPECT_EQ(v.decode(v.encode("oui elle est")), "oui <unk> est");
  EXPECT_TRUE(v.encode("").empty());
}

TEST(EncodeDecode, EncodeOfDecodeIsIdentityOnIds) {
  auto v = Vocabulary::from_tokens({"a", "b", "c"});
  TokenSeq s{{6, kBrk, 7, kMask, kUnk, 8, kEos}, {}};
  EXPECT_EQ(v.encode(v.decode(s)).ids, s.ids);
}

TEST(ConcatContext, PrependsWithBrk) {
  auto v = Vocabulary::from_tokens({"a", "b", "c", "d", "e", "f"});
  auto seq = concat_sentences({"a b", "c d"}, "e f", 2, v);
  EXPECT_EQ(v.decode(seq), "a b <brk> c d <brk> e f");
  EXPECT_EQ(seq.boundaries, (std::vector<std::size_t>{0, 3, 6}));
}

TEST(ConcatContext, DocumentStartAndTruncation) {
  auto doc = doc_of({{"s0", "t0"}, {"s1", "t1"}, {"s2", "t2"}, {"s3", "t3"}});
  auto v = Vocabulary::build({doc}, 1, 100);
  auto [src0, tgt0] = concat_context(doc, 0, {5, 5}, v);
  EXPECT_EQ(count_brk(src0), 0u);
  EXPECT_EQ(v.decode(tgt0), "t0");
  auto [src3, tgt3] = concat_context(doc, 3, {5, 1}, v);
  EXPECT_EQ(count_brk(src3), 3u);
  EXPECT_EQ(count_brk(tgt3), 1u);
  EXPECT_EQ(v.decode(tgt3), "t2 <brk> t3");
  EXPECT_THROW(concat_context(doc, 4, {1, 1}, v), TextError);
}

TEST(ConcatContext, BoundariesPartitionAtBrk) {
  auto doc = doc_of({{"a b c", "x"}, {"d", "y y"}, {"e f", "z"}, {"g h i j", "w"}});
  auto v = Vocabulary::build({doc}, 1, 100);
  for (std::size_t j = 0; j < doc.size(); ++j) {
    for (std::size_t n = 0; n <= 4; ++n) {
      auto [src, tgt] = concat_context(doc, j, {n, n}, v);
      ASSERT_EQ(count_brk(src), std::min(n, j));
      const auto& b = src.boundaries;
      ASSERT_FALSE(b.empty());
      EXPECT_EQ(b.front(), 0u);
      for (std::size_t k = 1; k < b.size(); ++k) {
        EXPECT_LT(b[k - 1], b[k]);
        EXPECT_EQ(src.ids[b[k] - 1], kBrk);
      }
    }
  }
}

TEST(CurrentSentenceSpan, AfterLastBrk) {
  TokenSeq a{{6, 7, kBrk, 8, 9}, {}};
  EXPECT_EQ(current_sentence_span(a), (Span{3, 5}));
  TokenSeq b{{6, 7}, {}};
  EXPECT_EQ(current_sentence_span(b), (Span{0, 2}));
  TokenSeq c{{6, kBrk, 7, kBrk, 8}, {}};
  EXPECT_EQ(current_sentence_span(c), (Span{4, 5}));
}

TEST(ContextLevel, ParseAndFormat) {
  auto c = parse_context_level("5+3");
  EXPECT_EQ(c.n, 5u);
  EXPECT_EQ(c.m, 3u);
  EXPECT_EQ(to_string(c), "5+3");
  EXPECT_THROW(parse_context_level("5"), TextError);
  EXPECT_THROW(parse_context_level("a+1"), TextError);
}

TEST(CorpusIO, RoundTrip) {
  std::vector<ParallelDocument> docs = {{"one", {{"a b", "x y"}, {"c", "z"}}}, {"two", {{"d", "w"}}}};
  std::stringstream ss;
  write_corpus(ss, docs);
  auto back = read_corpus(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].id, "one");
  EXPECT_EQ(back[0].pairs, docs[0].pairs);
  EXPECT_EQ(back[1].pairs, docs[1].pairs);
}

TEST(CorpusIO, LineBeforeHeaderRejected) {
  std::stringstream ss("a\tb\n");
  EXPECT_THROW(read_corpus(ss), TextError);
}
