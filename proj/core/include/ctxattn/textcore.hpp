#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ctxattn {

using TokenId = std::int32_t;

// Reserved ids are fixed; every vocabulary starts with them in this order.
inline constexpr TokenId kUnk = 0;
inline constexpr TokenId kPad = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kBrk = 4;
inline constexpr TokenId kMask = 5;
inline constexpr TokenId kNumReserved = 6;

inline constexpr std::string_view kReservedTokens[kNumReserved] = {
    "<unk>", "<pad>", "<bos>", "<eos>", "<brk>", "<mask>"};

inline bool is_reserved(TokenId id) { return id >= 0 && id < kNumReserved; }

class TextError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Splits on whitespace, then separates ASCII punctuation into single-char
/// tokens. Reserved token strings ("<brk>" etc.) survive as one token.
std::vector<std::string> tokenize(std::string_view text);

/// Whitespace-normalized form: tokens joined by one space.
std::string normalize(std::string_view text);

struct ParallelDocument {
  std::string id;
  std::vector<std::pair<std::string, std::string>> pairs;  // (source, target)

  std::size_t size() const { return pairs.size(); }
};

struct TokenSeq {
  std::vector<TokenId> ids;
  // Index of the first token of each constituent sentence. Empty when the
  // sequence was not assembled from sentences.
  std::vector<std::size_t> boundaries;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  bool operator==(const TokenSeq&) const = default;
};

struct ContextConfig {
  std::size_t n = 0;  // previous source sentences
  std::size_t m = 0;  // previous target sentences

  bool operator==(const ContextConfig&) const = default;
};

/// Parses "n+m".
ContextConfig parse_context_level(std::string_view level);
std::string to_string(const ContextConfig& cfg);

class Vocabulary {
 public:
  Vocabulary();  // reserved tokens only

  /// Most frequent surface tokens with count >= min_freq, capped so that
  /// size() <= max_size. Ties broken lexicographically.
  static Vocabulary build(const std::vector<ParallelDocument>& corpus,
                          std::size_t min_freq, std::size_t max_size);
  static Vocabulary from_tokens(const std::vector<std::string>& non_reserved);

  std::size_t size() const { return id_to_token_.size(); }
  TokenId id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  TokenSeq encode(std::string_view text) const;
  std::string decode(const TokenSeq& seq) const;
  std::string decode(const std::vector<TokenId>& ids) const;

  /// One non-reserved token per line; line k holds id k + 6.
  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(std::istream& in);
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  void add(std::string token);

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

/// Joins up to `k` trailing sentences of `context` with `current`, separated
/// by <brk>. Boundary offsets mark the first token of each sentence.
TokenSeq concat_sentences(const std::vector<std::string>& context, std::string_view current,
                          std::size_t k, const Vocabulary& vocab);

/// Source/target sequences for sentence j of doc with cfg.n / cfg.m previous
/// sentences prepended.
std::pair<TokenSeq, TokenSeq> concat_context(const ParallelDocument& doc, std::size_t j,
                                             const ContextConfig& cfg, const Vocabulary& vocab);

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive

  std::size_t size() const { return end - begin; }
  bool operator==(const Span&) const = default;
};

/// Tokens after the last <brk> (the whole sequence when there is none).
Span current_sentence_span(const TokenSeq& seq);

// Corpus file: "### doc <id>" header, then "source\ttarget" lines.
std::vector<ParallelDocument> read_corpus(std::istream& in);
std::vector<ParallelDocument> read_corpus(const std::filesystem::path& path);
void write_corpus(std::ostream& out, const std::vector<ParallelDocument>& corpus);

}  // namespace ctxattn
