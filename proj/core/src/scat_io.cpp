#include "ctxattn/scat_io.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace ctxattn {

namespace {

using nlohmann::json;

const json& field(const json& obj, const char* name, std::size_t lineno) {
  auto it = obj.find(name);
  if (it == obj.end())
    throw ScatError("missing field " + std::string(name) + " at line " + std::to_string(lineno));
  return *it;
}

std::string string_field(const json& obj, const char* name, std::size_t lineno) {
  const auto& v = field(obj, name, lineno);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ScatError("field " + std::string(name) + " must be a string at line " + std::to_string(lineno));
}

std::vector<std::string> string_list(const json& obj, const char* name, std::size_t lineno) {
  const auto& v = field(obj, name, lineno);
  if (!v.is_array())
    throw ScatError("field " + std::string(name) + " must be a list at line " + std::to_string(lineno));
  std::vector<std::string> out;
  for (const auto& s : v) {
    if (!s.is_string())
      throw ScatError("field " + std::string(name) + " must hold strings at line " + std::to_string(lineno));
    out.push_back(s.get<std::string>());
  }
  return out;
}

std::size_t index_field(const json& obj, const char* name, std::size_t lineno) {
  const auto& v = field(obj, name, lineno);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ScatError("field " + std::string(name) + " must be a non-negative integer at line " +
                    std::to_string(lineno));
  return v.get<std::size_t>();
}

std::vector<Highlight> highlight_list(const json& obj, const char* name, std::size_t lineno) {
  const auto& v = field(obj, name, lineno);
  if (!v.is_array())
    throw ScatError("field " + std::string(name) + " must be a list at line " + std::to_string(lineno));
  std::vector<Highlight> out;
  for (const auto& h : v) {
    if (!h.is_array() || h.size() != 2 || !h[0].is_number_integer() || !h[1].is_number_integer() ||
        h[1].get<long long>() < 0)
      throw ScatError("field " + std::string(name) + " entries must be [sentence_offset, token] at line " +
                      std::to_string(lineno));
    out.push_back({h[0].get<int>(), h[1].get<std::size_t>()});
  }
  return out;
}

void validate_highlights(const std::vector<Highlight>& hls, const std::vector<std::string>& ctx,
                         const std::string& current, const char* name, std::size_t lineno) {
  for (const auto& h : hls) {
    const auto where = std::string(name) + " at line " + std::to_string(lineno);
    if (h.sentence > 0 || static_cast<std::size_t>(-h.sentence) > ctx.size())
      throw ScatError("highlight sentence offset " + std::to_string(h.sentence) + " out of range in " + where);
    const std::string& sentence =
        h.sentence == 0 ? current : ctx[ctx.size() - static_cast<std::size_t>(-h.sentence)];
    const auto len = tokenize(sentence).size();
    if (h.token >= len)
      throw ScatError("highlight token index " + std::to_string(h.token) + " out of range (sentence has " +
                      std::to_string(len) + " tokens) in " + where);
  }
}

ScatExample parse_line(const std::string& line, std::size_t lineno, bool require_highlights) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ScatError("malformed JSON at line " + std::to_string(lineno) + ": " + e.what());
  }
  if (!obj.is_object()) throw ScatError("expected a JSON object at line " + std::to_string(lineno));

  ScatExample ex;
  ex.id = string_field(obj, "id", lineno);
  ex.ctx_src = string_list(obj, "ctx_src", lineno);
  ex.ctx_tgt = string_list(obj, "ctx_tgt", lineno);
  ex.src = string_field(obj, "src", lineno);
  ex.tgt_correct = string_field(obj, "tgt_correct", lineno);
  ex.tgt_incorrect = string_field(obj, "tgt_incorrect", lineno);
  ex.pron_src_idx = index_field(obj, "pron_src_idx", lineno);
  ex.pron_tgt_idx = index_field(obj, "pron_tgt_idx", lineno);
  if (require_highlights || obj.contains("hl_src")) ex.hl_src = highlight_list(obj, "hl_src", lineno);
  if (require_highlights || obj.contains("hl_tgt")) ex.hl_tgt = highlight_list(obj, "hl_tgt", lineno);
  try {
    ex.ctx_level = parse_context_level(string_field(obj, "ctx_level", lineno));
  } catch (const TextError& e) {
    throw ScatError(std::string(e.what()) + " at line " + std::to_string(lineno));
  }
  ex.confidence = string_field(obj, "confidence", lineno);

  const auto where = " at line " + std::to_string(lineno);
  if (ex.ctx_level.n > ex.ctx_src.size() || ex.ctx_level.m > ex.ctx_tgt.size())
    throw ScatError("ctx_level " + to_string(ex.ctx_level) + " exceeds provided context" + where);
  if (normalize(ex.tgt_correct) == normalize(ex.tgt_incorrect))
    throw ScatError("tgt_correct equals tgt_incorrect" + where);
  if (ex.pron_src_idx >= tokenize(ex.src).size())
    throw ScatError("pron_src_idx out of range" + where);
  if (ex.pron_tgt_idx >= tokenize(ex.tgt_correct).size() ||
      ex.pron_tgt_idx >= tokenize(ex.tgt_incorrect).size())
    throw ScatError("pron_tgt_idx out of range" + where);
  validate_highlights(ex.hl_src, ex.ctx_src, ex.src, "hl_src", lineno);
  validate_highlights(ex.hl_tgt, ex.ctx_tgt, ex.tgt_correct, "hl_tgt", lineno);
  return ex;
}

template <class OnExample, class OnError>
void scan_lines(std::istream& in, bool require_highlights, OnExample on_example, OnError on_error) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      on_example(parse_line(line, lineno, require_highlights));
    } catch (const ScatError& e) {
      on_error(e);
    }
  }
}

}  // namespace

std::vector<ScatExample> parse_scat(std::istream& in, bool require_highlights) {
  std::vector<ScatExample> out;
  scan_lines(in, require_highlights, [&](ScatExample ex) { out.push_back(std::move(ex)); },
             [](const ScatError& e) { throw e; });
  return out;
}

std::vector<ScatExample> parse_scat(const std::filesystem::path& path, bool require_highlights) {
  std::ifstream in(path);
  if (!in) throw ScatError("cannot read " + path.string());
  return parse_scat(in, require_highlights);
}

ScatParseResult parse_scat_lenient(std::istream& in, bool require_highlights) {
  ScatParseResult r;
  scan_lines(in, require_highlights, [&](ScatExample ex) { r.examples.push_back(std::move(ex)); },
             [&](const ScatError& e) { r.errors.emplace_back(e.what()); });
  return r;
}

std::string scat_to_json_line(const ScatExample& ex) {
  auto hl = [](const std::vector<Highlight>& hs) {
    json arr = json::array();
    for (const auto& h : hs) arr.push_back({h.sentence, h.token});
    return arr;
  };
  json obj = {{"id", ex.id},
              {"ctx_src", ex.ctx_src},
              {"ctx_tgt", ex.ctx_tgt},
              {"src", ex.src},
              {"tgt_correct", ex.tgt_correct},
              {"tgt_incorrect", ex.tgt_incorrect},
              {"pron_src_idx", ex.pron_src_idx},
              {"pron_tgt_idx", ex.pron_tgt_idx},
              {"hl_src", hl(ex.hl_src)},
              {"hl_tgt", hl(ex.hl_tgt)},
              {"ctx_level", to_string(ex.ctx_level)},
              {"confidence", ex.confidence}};
  return obj.dump();
}

void write_scat(std::ostream& out, const std::vector<ScatExample>& examples) {
  for (const auto& ex : examples) out << scat_to_json_line(ex) << '\n';
}

// ------------------------------------------------------------ human vectors

namespace {

std::size_t window(const ScatExample& ex, Side side, const ContextConfig& cfg) {
  const auto& ctx = side == Side::Source ? ex.ctx_src : ex.ctx_tgt;
  return std::min(side == Side::Source ? cfg.n : cfg.m, ctx.size());
}

// First-token offset of each sentence in the concatenation, oldest first.
std::vector<std::size_t> sentence_starts(const ScatExample& ex, Side side, const ContextConfig& cfg) {
  const auto& ctx = side == Side::Source ? ex.ctx_src : ex.ctx_tgt;
  const std::size_t used = window(ex, side, cfg);
  std::vector<std::size_t> starts;
  std::size_t pos = 0;
  for (std::size_t i = ctx.size() - used; i < ctx.size(); ++i) {
    starts.push_back(pos);
    pos += tokenize(ctx[i]).size() + 1;  // + <brk>
  }
  starts.push_back(pos);
  return starts;
}

}  // namespace

TokenSeq scat_sequence(const ScatExample& ex, Side side, const ContextConfig& cfg,
                       const Vocabulary& vocab, bool incorrect) {
  if (side == Side::Source) return concat_sentences(ex.ctx_src, ex.src, cfg.n, vocab);
  return concat_sentences(ex.ctx_tgt, incorrect ? ex.tgt_incorrect : ex.tgt_correct, cfg.m, vocab);
}

HumanAttentionVector human_vector(const ScatExample& ex, Side side, const ContextConfig& cfg,
                                  const Vocabulary& vocab) {
  const auto seq = scat_sequence(ex, side, cfg, vocab);
  if (seq.empty()) throw ScatError("empty " + std::string(side == Side::Source ? "source" : "target") +
                                   " sequence for example " + ex.id);
  const auto starts = sentence_starts(ex, side, cfg);
  const std::size_t used = starts.size() - 1;
  HumanAttentionVector h(seq.size(), 0.0);
  for (const auto& hl : ex.highlights(side)) {
    const auto back = static_cast<std::size_t>(-hl.sentence);
    if (back > used) continue;  // outside the configured window
    const std::size_t pos = starts[used - back] + hl.token;
    if (pos >= h.size() || seq.ids[pos] == kBrk)
      throw ScatError("highlight maps outside its sentence in example " + ex.id);
    h[pos] = 1.0;
  }
  return h;
}

std::size_t pronoun_position(const ScatExample& ex, Side side, const ContextConfig& cfg) {
  const auto starts = sentence_starts(ex, side, cfg);
  return starts.back() + (side == Side::Source ? ex.pron_src_idx : ex.pron_tgt_idx);
}

NormalizedHumanAttention normalize_human(const HumanAttentionVector& h, double epsilon) {
  const std::size_t L = h.size();
  std::size_t k = 0;
  for (double x : h) {
    if (x != 0.0 && x != 1.0) throw ScatError("human attention entries must be 0 or 1");
    if (x == 1.0) ++k;
  }
  if (k == 0) throw NoHighlightsError();
  if (epsilon < 0.0 || epsilon * static_cast<double>(L - k) >= 1.0)
    throw ScatError("epsilon too large for sequence length " + std::to_string(L));
  const double high = (1.0 - static_cast<double>(L - k) * epsilon) / static_cast<double>(k);
  NormalizedHumanAttention out{std::vector<double>(L), epsilon, k};
  for (std::size_t i = 0; i < L; ++i) out.probs[i] = h[i] == 1.0 ? high : epsilon;
  return out;
}

std::string to_string(AttentionType t) {
  switch (t) {
    case AttentionType::EncSelf: return "enc-self";
    case AttentionType::DecCross: return "dec-cross";
    case AttentionType::DecSelf: return "dec-self";
  }
  return "?";
}

AttentionType parse_attention_type(const std::string& s) {
  if (s == "enc-self") return AttentionType::EncSelf;
  if (s == "dec-cross") return AttentionType::DecCross;
  if (s == "dec-self") return AttentionType::DecSelf;
  throw ScatError("unknown attention type '" + s + "'");
}

HumanAttentionVector project_to_keyspace(const HumanAttentionVector& src,
                                         const HumanAttentionVector& tgt, AttentionType type,
                                         std::size_t query) {
  HumanAttentionVector out;
  switch (type) {
    case AttentionType::EncSelf:
      out = src;
      if (query < out.size()) out[query] = 0.0;
      break;
    case AttentionType::DecCross:
      out = src;
      break;
    case AttentionType::DecSelf: {
      const std::size_t keys = std::min(query + 1, tgt.size() + 1);
      out.assign(keys, 0.0);
      for (std::size_t key = 1; key < keys; ++key) out[key] = tgt[key - 1];
      break;
    }
  }
  bool any = false;
  for (double x : out) any = any || x != 0.0;
  if (!any) throw NoHighlightsError();
  return out;
}

HighlightHistogram highlight_distance_histogram(const std::vector<ScatExample>& examples) {
  HighlightHistogram hist;
  for (const auto& ex : examples) {
    for (const auto& h : ex.hl_src) ++hist.source[static_cast<std::size_t>(-h.sentence)];
    for (const auto& h : ex.hl_tgt) ++hist.target[static_cast<std::size_t>(-h.sentence)];
  }
  return hist;
}

// ------------------------------------------------------------ release format

namespace {

struct TaggedSentence {
  std::vector<std::string> tokens;
  std::vector<std::size_t> highlighted;
  std::optional<std::size_t> pronoun;
};

std::vector<TaggedSentence> parse_tagged(const std::string& line) {
  std::string spaced;
  for (std::size_t i = 0; i < line.size();) {
    bool hit = false;
    for (const char* tag : {"<hon>", "<hoff>", "<p>", "</p>", "<brk>"}) {
      const std::size_t n = std::char_traits<char>::length(tag);
      if (line.compare(i, n, tag) == 0) {
        spaced += ' ';
        spaced += tag;
        spaced += ' ';
        i += n;
        hit = true;
        break;
      }
    }
    if (!hit) spaced += line[i++];
  }
  std::vector<TaggedSentence> out(1);
  bool in_hl = false, in_p = false;
  std::istringstream words(spaced);
  for (std::string w; words >> w;) {
    if (w == "<brk>") {
      out.emplace_back();
    } else if (w == "<hon>") {
      in_hl = true;
    } else if (w == "<hoff>") {
      in_hl = false;
    } else if (w == "<p>") {
      in_p = true;
    } else if (w == "</p>") {
      in_p = false;
    } else {
      auto& s = out.back();
      for (auto& t : tokenize(w)) {
        if (in_hl) s.highlighted.push_back(s.tokens.size());
        if (in_p && !s.pronoun) s.pronoun = s.tokens.size();
        s.tokens.push_back(std::move(t));
      }
    }
  }
  return out;
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (const auto& t : toks) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::optional<std::string> swap_pronoun(const std::string& w) {
  static const std::map<std::string, std::string> swaps = {
      {"il", "elle"}, {"elle", "il"}, {"ils", "elles"}, {"elles", "ils"},
      {"Il", "Elle"}, {"Elle", "Il"}, {"Ils", "Elles"}, {"Elles", "Ils"}};
  auto it = swaps.find(w);
  if (it == swaps.end()) return std::nullopt;
  return it->second;
}

void fill_side(const std::vector<TaggedSentence>& sents, std::vector<std::string>& ctx, std::string& current,
               std::vector<Highlight>& hls) {
  const std::size_t last = sents.size() - 1;
  for (std::size_t i = 0; i < sents.size(); ++i) {
    for (std::size_t t : sents[i].highlighted)
      hls.push_back({-static_cast<int>(last - i), t});
    if (i < last) {
      ctx.push_back(join_tokens(sents[i].tokens));
    } else {
      current = join_tokens(sents[i].tokens);
    }
  }
}

}  // namespace

ScatConversion convert_scat_release(std::istream& src_lines, std::istream& tgt_lines, const std::string& id_prefix) {
  ScatConversion out;
  std::string sline, tline;
  std::size_t lineno = 0;
  while (true) {
    const bool has_s = static_cast<bool>(std::getline(src_lines, sline));
    const bool has_t = static_cast<bool>(std::getline(tgt_lines, tline));
    if (!has_s && !has_t) break;
    ++lineno;
    const auto where = " at line " + std::to_string(lineno);
    if (has_s != has_t) {
      out.errors.push_back("source and target files differ in length" + where);
      break;
    }
    const auto src = parse_tagged(sline);
    const auto tgt = parse_tagged(tline);
    if (!src.back().pronoun || !tgt.back().pronoun) {
      out.errors.push_back("no <p> marker in the current sentence" + where);
      continue;
    }
    ScatExample ex;
    ex.id = id_prefix + "-" + std::to_string(lineno);
    fill_side(src, ex.ctx_src, ex.src, ex.hl_src);
    fill_side(tgt, ex.ctx_tgt, ex.tgt_correct, ex.hl_tgt);
    ex.pron_src_idx = *src.back().pronoun;
    ex.pron_tgt_idx = *tgt.back().pronoun;
    auto tokens = tgt.back().tokens;
    const auto swapped = swap_pronoun(tokens[ex.pron_tgt_idx]);
    if (!swapped) {
      out.errors.push_back("target pronoun '" + tokens[ex.pron_tgt_idx] + "' has no contrastive form" + where);
      continue;
    }
    tokens[ex.pron_tgt_idx] = *swapped;
    ex.tgt_incorrect = join_tokens(tokens);
    ex.ctx_level = {ex.ctx_src.size(), ex.ctx_tgt.size()};
    ex.confidence = "unknown";
    out.examples.push_back(std::move(ex));
  }
  return out;
}

}  // namespace ctxattn
