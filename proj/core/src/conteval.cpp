#include "ctxattn/conteval.hpp"

#include <cstdio>
#include <random>
#include <sstream>

#include "ctxattn/checkpoint.hpp"

namespace ctxattn {

namespace {

std::size_t context_end(const TokenSeq& seq) { return current_sentence_span(seq).begin; }

void mask_context(TokenSeq& seq) {
  const std::size_t end = context_end(seq);
  for (std::size_t i = 0; i < end; ++i)
    if (seq.ids[i] != kBrk) seq.ids[i] = kMask;
}

}  // namespace

ContrastivePair make_contrastive_pair(const ScatExample& ex, const ContextConfig& cfg, const Vocabulary& vocab) {
  ContrastivePair p;
  p.id = ex.id;
  p.src = scat_sequence(ex, Side::Source, cfg, vocab);
  p.correct = scat_sequence(ex, Side::Target, cfg, vocab);
  p.incorrect = scat_sequence(ex, Side::Target, cfg, vocab, true);
  if (p.correct == p.incorrect) throw EvalError("example " + ex.id + ": candidates are identical after tokenization");
  p.src_pron = pronoun_position(ex, Side::Source, cfg);
  p.tgt_pron = pronoun_position(ex, Side::Target, cfg);
  p.has_highlights = !ex.hl_src.empty() || !ex.hl_tgt.empty();
  if (p.has_highlights) {
    const auto hs = human_vector(ex, Side::Source, cfg, vocab);
    for (std::size_t i = 0; i < hs.size(); ++i)
      if (hs[i] > 0.0 && i != p.src_pron) p.support_src.push_back(i);
    const auto ht = human_vector(ex, Side::Target, cfg, vocab);
    const std::size_t end = context_end(p.correct);
    for (std::size_t i = 0; i < end; ++i)
      if (ht[i] > 0.0) p.support_tgt.push_back(i);
  }
  return p;
}

std::vector<ContrastivePair> make_contrastive_pairs(std::span<const ScatExample> examples, const ContextConfig& cfg,
                                                    const Vocabulary& vocab) {
  std::vector<ContrastivePair> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(make_contrastive_pair(ex, cfg, vocab));
  return out;
}

// ---------------------------------------------------------------- masks

MaskSpec MaskSpec::parse(const std::string& s, std::uint64_t seed) {
  MaskSpec m;
  m.seed = seed;
  if (s == "none") {
    m.kind = MaskKind::None;
  } else if (s == "supporting") {
    m.kind = MaskKind::Supporting;
  } else if (s == "source-context") {
    m.kind = MaskKind::SourceContext;
  } else if (s == "target-context") {
    m.kind = MaskKind::TargetContext;
  } else if (s == "all-context") {
    m.kind = MaskKind::AllContext;
  } else if (s == "random" || s.rfind("random:", 0) == 0) {
    m.kind = MaskKind::Random;
    if (s.size() > 6) {
      try {
        std::size_t used = 0;
        m.p = std::stod(s.substr(7), &used);
        if (used != s.size() - 7) throw std::invalid_argument(s);
      } catch (const std::logic_error&) {
        throw EvalError("bad mask probability in '" + s + "'");
      }
    }
  } else {
    throw EvalError("unknown mask kind '" + s + "'");
  }
  m.validate();
  return m;
}

std::string MaskSpec::label() const {
  switch (kind) {
    case MaskKind::None: return "none";
    case MaskKind::Supporting: return "supporting";
    case MaskKind::Random: {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "random:%g", p);
      return buf;
    }
    case MaskKind::SourceContext: return "source-context";
    case MaskKind::TargetContext: return "target-context";
    case MaskKind::AllContext: return "all-context";
  }
  return "?";
}

void MaskSpec::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) throw EvalError("mask probability must lie in [0, 1]");
}

std::vector<MaskSpec> standard_masks(std::uint64_t seed, double random_p) {
  return {{MaskKind::None, random_p, seed},          {MaskKind::Supporting, random_p, seed},
          {MaskKind::Random, random_p, seed},        {MaskKind::SourceContext, random_p, seed},
          {MaskKind::TargetContext, random_p, seed}, {MaskKind::AllContext, random_p, seed}};
}

MaskedPair apply_mask(const ContrastivePair& pair, const MaskSpec& spec) {
  spec.validate();
  MaskedPair out{pair.src, pair.correct, pair.incorrect};
  switch (spec.kind) {
    case MaskKind::None: break;
    case MaskKind::Supporting:
      if (!pair.has_highlights) throw EvalError("supporting mask needs highlights (example " + pair.id + ")");
      for (std::size_t i : pair.support_src) out.src.ids.at(i) = kMask;
      for (std::size_t i : pair.support_tgt) {
        out.correct.ids.at(i) = kMask;
        out.incorrect.ids.at(i) = kMask;
      }
      break;
    case MaskKind::Random: {
      std::mt19937_64 rng(fnv1a(pair.id, fnv1a(std::to_string(spec.seed))));
      std::bernoulli_distribution coin(spec.p);
      const std::size_t src_end = context_end(out.src);
      for (std::size_t i = 0; i < src_end; ++i)
        if (out.src.ids[i] != kBrk && coin(rng)) out.src.ids[i] = kMask;
      const std::size_t tgt_end = context_end(out.correct);
      for (std::size_t i = 0; i < tgt_end; ++i) {
        if (out.correct.ids[i] != kBrk && coin(rng)) {
          out.correct.ids[i] = kMask;
          out.incorrect.ids[i] = kMask;
        }
      }
      break;
    }
    case MaskKind::SourceContext: mask_context(out.src); break;
    case MaskKind::TargetContext:
      mask_context(out.correct);
      mask_context(out.incorrect);
      break;
    case MaskKind::AllContext:
      mask_context(out.src);
      mask_context(out.correct);
      mask_context(out.incorrect);
      break;
  }
  return out;
}

// ---------------------------------------------------------------- scoring

double score_candidate(const Transformer& model, const TokenSeq& src, const TokenSeq& tgt, Span span) {
  if (span.end > tgt.size() + 1 || span.begin > span.end) throw EvalError("score span out of range");
  const auto trace = model.forward(src, tgt, Mode::Eval);
  double s = 0.0;
  for (std::size_t t = span.begin; t < span.end; ++t) {
    const TokenId gold = t < tgt.size() ? tgt.ids[t] : kEos;
    s += trace.log_probs(static_cast<ad::Index>(t), gold);
  }
  return s;
}

double score_candidate(const Transformer& model, const TokenSeq& src, const TokenSeq& tgt) {
  return score_candidate(model, src, tgt, current_output_span(tgt));
}

ContrastiveResult contrastive_accuracy(const Transformer& model, std::span<const ContrastivePair> pairs,
                                       const MaskSpec& mask) {
  if (pairs.empty()) throw EvalError("no contrastive pairs");
  ContrastiveResult r;
  std::size_t hits = 0;
  for (const auto& p : pairs) {
    const auto m = apply_mask(p, mask);
    PairOutcome o;
    o.id = p.id;
    o.score_correct = score_candidate(model, m.src, m.correct);
    o.score_incorrect = score_candidate(model, m.src, m.incorrect);
    o.correct = prefers_correct(o.score_correct, o.score_incorrect);
    hits += o.correct;
    r.outcomes.push_back(std::move(o));
  }
  r.accuracy = static_cast<double>(hits) / static_cast<double>(pairs.size());
  return r;
}

std::string mask_table_csv(std::span<const MaskRow> rows) {
  std::ostringstream out;
  out << "mask,accuracy,correct,total\n";
  for (const auto& row : rows) {
    std::size_t hits = 0;
    for (const auto& o : row.result.outcomes) hits += o.correct;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", row.result.accuracy);
    out << row.mask.label() << ',' << buf << ',' << hits << ',' << row.result.outcomes.size() << '\n';
  }
  return out.str();
}

std::string format_mask_table(std::span<const MaskRow> rows) {
  std::ostringstream out;
  double lowest = 2.0;
  for (const auto& row : rows) lowest = std::min(lowest, row.result.accuracy);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%-16s %9s\n", "mask", "accuracy");
  out << buf;
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%-16s %8.1f%s\n", row.mask.label().c_str(), 100.0 * row.result.accuracy,
                  row.result.accuracy == lowest ? " <- lowest" : "");
    out << buf;
  }
  return out.str();
}

// ---------------------------------------------------------------- decoding

std::string to_string(ContextMode m) { return m == ContextMode::Gold ? "gold" : "non-gold"; }

ContextMode parse_context_mode(const std::string& s) {
  if (s == "gold") return ContextMode::Gold;
  if (s == "non-gold" || s == "nongold") return ContextMode::NonGold;
  throw EvalError("unknown context mode '" + s + "'");
}

std::vector<std::string> translate_document(const Transformer& model, const ParallelDocument& doc,
                                            const ContextConfig& cfg, ContextMode mode, const DecodeConfig& decode_cfg,
                                            const Vocabulary& vocab) {
  if (doc.pairs.empty()) throw EvalError("document '" + doc.id + "' is empty");
  std::vector<std::string> hyps;
  std::vector<std::string> src_history;
  for (std::size_t j = 0; j < doc.size(); ++j) {
    const TokenSeq src = concat_sentences(src_history, doc.pairs[j].first, cfg.n, vocab);
    std::vector<TokenId> prefix;
    const std::size_t used = std::min(cfg.m, j);
    for (std::size_t i = j - used; i < j; ++i) {
      const std::string& ctx = mode == ContextMode::Gold ? doc.pairs[i].second : hyps[i];
      for (const auto& t : tokenize(ctx)) prefix.push_back(vocab.id(t));
      prefix.push_back(kBrk);
    }
    const auto h = decode(model, src, decode_cfg, prefix);
    hyps.push_back(vocab.decode(h.tokens));
    src_history.push_back(doc.pairs[j].first);
  }
  return hyps;
}

}  // namespace ctxattn
