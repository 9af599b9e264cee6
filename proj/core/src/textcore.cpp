#include "ctxattn/textcore.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace ctxattn {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && ((u >= 0x21 && u <= 0x2f) || (u >= 0x3a && u <= 0x40) ||
                      (u >= 0x5b && u <= 0x60) || (u >= 0x7b && u <= 0x7e));
}

bool is_reserved_string(std::string_view s) {
  return std::find(std::begin(kReservedTokens), std::end(kReservedTokens), s) !=
         std::end(kReservedTokens);
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j == i) break;
    std::string_view chunk = text.substr(i, j - i);
    i = j;
    if (is_reserved_string(chunk)) {
      out.emplace_back(chunk);
      continue;
    }
    std::string word;
    for (char c : chunk) {
      if (is_punct(c)) {
        if (!word.empty()) out.push_back(std::move(word));
        word.clear();
        out.emplace_back(1, c);
      } else {
        word.push_back(c);
      }
    }
    if (!word.empty()) out.push_back(std::move(word));
  }
  return out;
}

std::string normalize(std::string_view text) {
  std::string out;
  for (const auto& tok : tokenize(text)) {
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

ContextConfig parse_context_level(std::string_view level) {
  const auto plus = level.find('+');
  if (plus == std::string_view::npos) throw TextError("bad context level '" + std::string(level) + "'");
  ContextConfig cfg;
  auto parse = [&](std::string_view part, std::size_t& dst) {
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), dst);
    if (ec != std::errc() || ptr != part.data() + part.size() || part.empty())
      throw TextError("bad context level '" + std::string(level) + "'");
  };
  parse(level.substr(0, plus), cfg.n);
  parse(level.substr(plus + 1), cfg.m);
  return cfg;
}

std::string to_string(const ContextConfig& cfg) {
  return std::to_string(cfg.n) + "+" + std::to_string(cfg.m);
}

// ---------------------------------------------------------------- Vocabulary

Vocabulary::Vocabulary() {
  for (auto tok : kReservedTokens) add(std::string(tok));
}

void Vocabulary::add(std::string token) {
  if (token.empty()) throw TextError("empty token in vocabulary");
  const auto id = static_cast<TokenId>(id_to_token_.size());
  auto [it, inserted] = token_to_id_.emplace(token, id);
  if (!inserted) throw TextError("duplicate vocabulary token '" + token + "'");
  id_to_token_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(const std::vector<ParallelDocument>& corpus, std::size_t min_freq,
                             std::size_t max_size) {
  if (corpus.empty()) throw TextError("empty corpus");
  if (min_freq < 1) throw TextError("min_freq must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : corpus) {
    for (const auto& [src, tgt] : doc.pairs) {
      for (auto& t : tokenize(src)) ++counts[std::move(t)];
      for (auto& t : tokenize(tgt)) ++counts[std::move(t)];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, c] : counts) {
    if (c >= min_freq && !is_reserved_string(tok)) ranked.emplace_back(tok, c);
  }
  // counts is ordered, so stable_sort on frequency keeps lexicographic ties.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  const std::size_t room = max_size > kNumReserved ? max_size - kNumReserved : 0;
  for (std::size_t i = 0; i < ranked.size() && i < room; ++i) v.add(ranked[i].first);
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& non_reserved) {
  Vocabulary v;
  for (const auto& t : non_reserved) {
    if (is_reserved_string(t)) throw TextError("reserved token '" + t + "' listed as regular entry");
    v.add(t);
  }
  return v;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw TextError("token id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

TokenSeq Vocabulary::encode(std::string_view text) const {
  TokenSeq seq;
  for (const auto& t : tokenize(text)) seq.ids.push_back(id(t));
  if (!seq.ids.empty()) seq.boundaries.push_back(0);
  return seq;
}

std::string Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

std::string Vocabulary::decode(const TokenSeq& seq) const { return decode(seq.ids); }

void Vocabulary::save(std::ostream& out) const {
  for (std::size_t i = kNumReserved; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\n';
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw TextError("cannot write vocabulary " + path.string());
  save(out);
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::vector<std::string> toks;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    toks.push_back(line);
  }
  return from_tokens(toks);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TextError("cannot read vocabulary " + path.string());
  return load(in);
}

// ------------------------------------------------------------ context assembly

TokenSeq concat_sentences(const std::vector<std::string>& context, std::string_view current,
                          std::size_t k, const Vocabulary& vocab) {
  const std::size_t used = std::min(k, context.size());
  TokenSeq seq;
  auto append = [&](std::string_view sentence) {
    seq.boundaries.push_back(seq.ids.size());
    for (const auto& t : tokenize(sentence)) seq.ids.push_back(vocab.id(t));
  };
  for (std::size_t i = context.size() - used; i < context.size(); ++i) {
    append(context[i]);
    seq.ids.push_back(kBrk);
  }
  append(current);
  return seq;
}

std::pair<TokenSeq, TokenSeq> concat_context(const ParallelDocument& doc, std::size_t j,
                                             const ContextConfig& cfg, const Vocabulary& vocab) {
  if (j >= doc.size())
    throw TextError("sentence index " + std::to_string(j) + " out of range for document '" +
                    doc.id + "' of length " + std::to_string(doc.size()));
  std::vector<std::string> src_ctx, tgt_ctx;
  for (std::size_t i = 0; i < j; ++i) {
    src_ctx.push_back(doc.pairs[i].first);
    tgt_ctx.push_back(doc.pairs[i].second);
  }
  return {concat_sentences(src_ctx, doc.pairs[j].first, cfg.n, vocab),
          concat_sentences(tgt_ctx, doc.pairs[j].second, cfg.m, vocab)};
}

Span current_sentence_span(const TokenSeq& seq) {
  if (!seq.boundaries.empty()) return {seq.boundaries.back(), seq.ids.size()};
  std::size_t begin = 0;
  for (std::size_t i = 0; i < seq.ids.size(); ++i)
    if (seq.ids[i] == kBrk) begin = i + 1;
  return {begin, seq.ids.size()};
}

// ----------------------------------------------------------------- corpus I/O

std::vector<ParallelDocument> read_corpus(std::istream& in) {
  std::vector<ParallelDocument> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("### doc", 0) == 0) {
      docs.push_back({trim(std::string_view(line).substr(7)), {}});
      continue;
    }
    if (trim(line).empty()) continue;
    if (docs.empty()) throw TextError("corpus line " + std::to_string(lineno) + " precedes any '### doc' header");
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw TextError("corpus line " + std::to_string(lineno) + " has no tab separator");
    docs.back().pairs.emplace_back(trim(std::string_view(line).substr(0, tab)),
                                   trim(std::string_view(line).substr(tab + 1)));
  }
  return docs;
}

std::vector<ParallelDocument> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TextError("cannot read corpus " + path.string());
  return read_corpus(in);
}

void write_corpus(std::ostream& out, const std::vector<ParallelDocument>& corpus) {
  for (const auto& doc : corpus) {
    out << "### doc " << doc.id << '\n';
    for (const auto& [s, t] : doc.pairs) out << s << '\t' << t << '\n';
  }
}

}  // namespace ctxattn
