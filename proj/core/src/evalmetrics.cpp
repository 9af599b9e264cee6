#include "ctxattn/evalmetrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace ctxattn {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b)
    throw MetricError("length mismatch: human " + std::to_string(a) + " vs model " + std::to_string(b));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw MetricError("bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw MetricError("bad number '" + s + "'");
  }
}

std::size_t parse_size(const std::string& s) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw MetricError("bad integer '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string head_label(std::size_t head) { return head == kAveragedHead ? "avg" : std::to_string(head); }

}  // namespace

// ---------------------------------------------------------------- alignment

double dot_alignment(std::span<const double> human, std::span<const double> model) {
  check_lengths(human.size(), model.size());
  double s = 0.0;
  for (std::size_t i = 0; i < human.size(); ++i) s += human[i] * model[i];
  return s;
}

double kl_alignment(const NormalizedHumanAttention& human, std::span<const double> model) {
  check_lengths(human.probs.size(), model.size());
  return ad::kl_value(human.probs, model);
}

std::size_t probes_needed(std::span<const double> human, std::span<const double> model) {
  check_lengths(human.size(), model.size());
  std::vector<std::size_t> order(model.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return model[a] > model[b]; });
  for (std::size_t r = 0; r < order.size(); ++r)
    if (human[order[r]] > 0.0) return r + 1;
  throw NoHighlightsError();
}

std::string to_string(AlignMetric m) {
  switch (m) {
    case AlignMetric::Dot: return "dot";
    case AlignMetric::Kl: return "kl";
    case AlignMetric::Probes: return "probes";
  }
  return "?";
}

std::optional<std::size_t> AlignmentReport::argbest(AlignMetric metric, AttentionType type) const {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    if (c.type != type) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = cells[*best];
    const bool better = metric == AlignMetric::Dot  ? c.dot > b.dot
                        : metric == AlignMetric::Kl ? c.kl < b.kl
                                                    : c.probes < b.probes;
    if (better) best = i;
  }
  return best;
}

AlignmentReport sweep(const AttentionOracle& attend, std::span<const ScatSample> samples, HeadMode mode,
                      double epsilon) {
  AlignmentReport report;
  report.head_mode = mode;
  report.examples = samples.size();
  // cell index -> sums; cells are created lazily from the first trace seen
  std::vector<AlignmentCell> sums;
  auto cell_base = [&](AttentionType t) {
    std::size_t i = 0;
    while (i < sums.size() && sums[i].type != t) ++i;
    return i;
  };

  for (const auto& s : samples) {
    const ForwardTrace trace = attend(s);
    if (sums.empty()) {
      for (AttentionType t : kAllAttentionTypes) {
        const auto& stack = trace.attention(t);
        for (std::size_t l = 0; l < stack.size(); ++l) {
          if (mode == HeadMode::Averaged) {
            sums.push_back({t, l, kAveragedHead, 0, 0, 0});
          } else {
            for (std::size_t h = 0; h < stack[l].size(); ++h) sums.push_back({t, l, h, 0, 0, 0});
          }
        }
      }
    }
    for (AttentionType t : kAllAttentionTypes) {
      auto& base = report.uniform[static_cast<std::size_t>(t)];
      const std::size_t query = t == AttentionType::EncSelf ? s.src_query : s.tgt_query;
      HumanAttentionVector human;
      try {
        human = project_to_keyspace(s.human_src, s.human_tgt, t, query);
      } catch (const NoHighlightsError&) {
        ++base.skipped;
        continue;
      }
      const auto hn = normalize_human(human, epsilon);
      const std::size_t len = human.size();
      ++base.count;
      const std::vector<double> uniform(len, 1.0 / static_cast<double>(len));
      base.dot += dot_alignment(human, uniform);
      base.kl += kl_alignment(hn, uniform);
      base.probes += static_cast<double>(probes_needed(human, uniform));

      const auto& stack = trace.attention(t);
      std::size_t ci = cell_base(t);
      std::vector<double> row(len);
      for (std::size_t l = 0; l < stack.size(); ++l) {
        const auto& heads = stack[l];
        auto score = [&](AlignmentCell& cell) {
          cell.dot += dot_alignment(human, row);
          cell.kl += kl_alignment(hn, row);
          cell.probes += static_cast<double>(probes_needed(human, row));
        };
        auto fetch = [&](const ad::Matrix& m, double w, bool reset) {
          if (static_cast<std::size_t>(m.rows()) <= query || static_cast<std::size_t>(m.cols()) < len)
            throw MetricError("attention matrix too small for " + to_string(t) + " row");
          for (std::size_t k = 0; k < len; ++k) {
            const double v = w * m(static_cast<ad::Index>(query), static_cast<ad::Index>(k));
            row[k] = reset ? v : row[k] + v;
          }
        };
        if (mode == HeadMode::Averaged) {
          for (std::size_t h = 0; h < heads.size(); ++h) fetch(heads[h], 1.0 / static_cast<double>(heads.size()), h == 0);
          score(sums.at(ci++));
        } else {
          for (std::size_t h = 0; h < heads.size(); ++h) {
            fetch(heads[h], 1.0, true);
            score(sums.at(ci++));
          }
        }
      }
    }
  }

  for (auto& cell : sums) {
    const auto n = static_cast<double>(report.uniform[static_cast<std::size_t>(cell.type)].count);
    if (n > 0) {
      cell.dot /= n;
      cell.kl /= n;
      cell.probes /= n;
    }
  }
  for (auto& b : report.uniform) {
    if (b.count == 0) continue;
    const auto n = static_cast<double>(b.count);
    b.dot /= n;
    b.kl /= n;
    b.probes /= n;
  }
  report.cells = std::move(sums);
  return report;
}

AlignmentReport sweep(const Transformer& model, std::span<const ScatSample> samples, HeadMode mode,
                      double epsilon) {
  return sweep([&](const ScatSample& s) { return model.forward(s.src, s.tgt, Mode::Eval); }, samples, mode,
               epsilon);
}

std::string alignment_csv(const AlignmentReport& r) {
  std::ostringstream out;
  out << "# examples=" << r.examples << " head_mode=" << (r.head_mode == HeadMode::Averaged ? "avg" : "per-head")
      << "\n";
  out << "type,layer,head,dot,kl,probes,count,skipped\n";
  for (const auto& c : r.cells)
    out << to_string(c.type) << ',' << c.layer + 1 << ',' << head_label(c.head) << ',' << fmt(c.dot) << ','
        << fmt(c.kl) << ',' << fmt(c.probes) << ",,\n";
  for (AttentionType t : kAllAttentionTypes) {
    const auto& b = r.baseline(t);
    out << to_string(t) << ",uniform,," << fmt(b.dot) << ',' << fmt(b.kl) << ',' << fmt(b.probes) << ','
        << b.count << ',' << b.skipped << '\n';
  }
  return out.str();
}

AlignmentReport parse_alignment_csv(std::istream& in) {
  AlignmentReport r;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      std::istringstream meta(line.substr(2));
      for (std::string kv; meta >> kv;) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const auto key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "examples") r.examples = parse_size(val);
        if (key == "head_mode") r.head_mode = val == "avg" ? HeadMode::Averaged : HeadMode::PerHead;
      }
      continue;
    }
    if (!header) {
      if (line != "type,layer,head,dot,kl,probes,count,skipped") throw MetricError("unexpected CSV header");
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 8) throw MetricError("bad CSV row '" + line + "'");
    AttentionType t;
    try {
      t = parse_attention_type(f[0]);
    } catch (const ScatError& e) {
      throw MetricError(e.what());
    }
    if (f[1] == "uniform") {
      auto& b = r.uniform[static_cast<std::size_t>(t)];
      b.dot = parse_double(f[3]);
      b.kl = parse_double(f[4]);
      b.probes = parse_double(f[5]);
      b.count = parse_size(f[6]);
      b.skipped = parse_size(f[7]);
    } else {
      AlignmentCell c;
      c.type = t;
      c.layer = parse_size(f[1]) - 1;
      c.head = f[2] == "avg" ? kAveragedHead : parse_size(f[2]);
      c.dot = parse_double(f[3]);
      c.kl = parse_double(f[4]);
      c.probes = parse_double(f[5]);
      r.cells.push_back(c);
    }
  }
  if (!header) throw MetricError("missing CSV header");
  return r;
}

std::string alignment_json(const AlignmentReport& r) {
  using nlohmann::json;
  json cells = json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"type", to_string(c.type)},
                     {"layer", c.layer + 1},
                     {"head", head_label(c.head)},
                     {"dot", c.dot},
                     {"kl", c.kl},
                     {"probes", c.probes}});
  json uniform = json::object();
  json best = json::object();
  for (AttentionType t : kAllAttentionTypes) {
    const auto& b = r.baseline(t);
    uniform[to_string(t)] = {{"dot", b.dot}, {"kl", b.kl}, {"probes", b.probes}, {"count", b.count},
                             {"skipped", b.skipped}};
    json per = json::object();
    for (AlignMetric m : {AlignMetric::Dot, AlignMetric::Kl, AlignMetric::Probes}) {
      if (auto i = r.argbest(m, t)) {
        const auto& c = r.cells[*i];
        per[to_string(m)] = {{"layer", c.layer + 1}, {"head", head_label(c.head)}};
      }
    }
    best[to_string(t)] = per;
  }
  json j = {{"examples", r.examples},
            {"head_mode", r.head_mode == HeadMode::Averaged ? "avg" : "per-head"},
            {"cells", cells},
            {"uniform", uniform},
            {"best", best}};
  return j.dump(2);
}

std::string format_alignment_grid(const AlignmentReport& r) {
  std::ostringstream out;
  char buf[64];
  for (AlignMetric m : {AlignMetric::Dot, AlignMetric::Kl, AlignMetric::Probes}) {
    out << "== " << to_string(m) << (m == AlignMetric::Dot ? " (higher is better)" : " (lower is better)")
        << "\n";
    for (AttentionType t : kAllAttentionTypes) {
      const auto& b = r.baseline(t);
      const auto best = r.argbest(m, t);
      out << to_string(t) << "  (n=" << b.count << ", skipped=" << b.skipped << ")\n";
      std::size_t current_layer = kAveragedHead;
      for (std::size_t i = 0; i < r.cells.size(); ++i) {
        const auto& c = r.cells[i];
        if (c.type != t) continue;
        if (c.layer != current_layer) {
          if (current_layer != kAveragedHead) out << "\n";
          out << "  L" << c.layer + 1 << ":";
          current_layer = c.layer;
        }
        const double v = m == AlignMetric::Dot ? c.dot : m == AlignMetric::Kl ? c.kl : c.probes;
        std::snprintf(buf, sizeof(buf), " %8.3f%s", v, best && *best == i ? "*" : " ");
        out << buf;
      }
      if (current_layer != kAveragedHead) out << "\n";
      const double u = m == AlignMetric::Dot ? b.dot : m == AlignMetric::Kl ? b.kl : b.probes;
      std::snprintf(buf, sizeof(buf), "  uniform: %.3f\n", u);
      out << buf;
    }
  }
  return out.str();
}

// ---------------------------------------------------------------- BLEU

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& toks, std::size_t n) {
  NgramCounts c;
  if (toks.size() < n) return c;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++c[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                 toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return c;
}

}  // namespace

NgramStats ngram_stats(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  if (references.empty()) throw MetricError("empty reference set");
  if (hypotheses.size() != references.size())
    throw MetricError("hypothesis/reference count mismatch: " + std::to_string(hypotheses.size()) + " vs " +
                      std::to_string(references.size()));
  NgramStats s;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto h = tokenize(hypotheses[i]);
    const auto r = tokenize(references[i]);
    s.hyp_len += h.size();
    s.ref_len += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hc = count_ngrams(h, n);
      const auto rc = count_ngrams(r, n);
      for (const auto& [g, c] : hc) {
        s.totals[n - 1] += c;
        auto it = rc.find(g);
        if (it != rc.end()) s.matches[n - 1] += std::min(c, it->second);
      }
    }
  }
  return s;
}

double bleu_from_stats(const NgramStats& s) {
  if (s.hyp_len == 0) return 0.0;
  double smooth = 1.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (s.totals[n] == 0) return 0.0;
    double p;
    if (s.matches[n] == 0) {
      smooth *= 2.0;
      p = 1.0 / (smooth * static_cast<double>(s.totals[n]));
    } else {
      p = static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]);
    }
    log_sum += std::log(p);
  }
  const double bp = s.hyp_len < s.ref_len
                        ? std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len))
                        : 1.0;
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

double bleu(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  return bleu_from_stats(ngram_stats(hypotheses, references));
}

// ---------------------------------------------------------------- word f-measure

WordFMeasure word_fmeasure(std::span<const std::string> hypotheses, std::span<const std::string> references,
                           const std::vector<std::string>& target_words) {
  if (hypotheses.empty()) throw MetricError("empty input");
  if (hypotheses.size() != references.size()) throw MetricError("hypothesis/reference count mismatch");
  const std::unordered_set<std::string> targets(target_words.begin(), target_words.end());
  std::unordered_set<std::string> reserved;
  for (auto r : kReservedTokens) reserved.emplace(r);

  WordFMeasure out;
  double sum_t = 0.0, sum_o = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    std::unordered_map<std::string, std::size_t> ht, rt, ho, ro;
    std::size_t nht = 0, nrt = 0, nho = 0, nro = 0;
    for (const auto& w : tokenize(hypotheses[i])) {
      if (reserved.count(w)) continue;
      if (targets.count(w)) {
        ++ht[w];
        ++nht;
      } else {
        ++ho[w];
        ++nho;
      }
    }
    for (const auto& w : tokenize(references[i])) {
      if (reserved.count(w)) continue;
      if (targets.count(w)) {
        ++rt[w];
        ++nrt;
      } else {
        ++ro[w];
        ++nro;
      }
    }
    auto f1 = [](const auto& h, const auto& r, std::size_t nh, std::size_t nr) {
      std::size_t match = 0;
      for (const auto& [w, c] : h) {
        auto it = r.find(w);
        if (it != r.end()) match += std::min(c, it->second);
      }
      if (match == 0) return 0.0;
      const double p = static_cast<double>(match) / static_cast<double>(nh);
      const double rc = static_cast<double>(match) / static_cast<double>(nr);
      return 2.0 * p * rc / (p + rc);
    };
    if (nht + nrt > 0) {
      sum_t += f1(ht, rt, nht, nrt);
      ++out.n_target;
    }
    if (nho + nro > 0) {
      sum_o += f1(ho, ro, nho, nro);
      ++out.n_other;
    }
  }
  out.f_target = out.n_target ? sum_t / static_cast<double>(out.n_target) : 0.0;
  out.f_other = out.n_other ? sum_o / static_cast<double>(out.n_other) : 0.0;
  return out;
}

// ---------------------------------------------------------------- bootstrap

BootstrapResult paired_bootstrap(const CorpusMetric& metric, std::span<const std::string> hyps_a,
                                 std::span<const std::string> hyps_b, std::span<const std::string> refs,
                                 std::size_t resamples, std::uint64_t seed) {
  if (hyps_a.size() != refs.size() || hyps_b.size() != refs.size())
    throw MetricError("mismatched lengths: A " + std::to_string(hyps_a.size()) + ", B " +
                      std::to_string(hyps_b.size()) + ", refs " + std::to_string(refs.size()));
  if (refs.empty()) throw MetricError("empty reference set");
  if (resamples < 100) throw MetricError("resamples must be >= 100");

  BootstrapResult out;
  out.resamples = resamples;
  out.score_a = metric(hyps_a, refs);
  out.score_b = metric(hyps_b, refs);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, refs.size() - 1);
  std::vector<std::string> sa(refs.size()), sb(refs.size()), sr(refs.size());
  for (std::size_t r = 0; r < resamples; ++r) {
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const std::size_t k = pick(rng);
      sa[i] = hyps_a[k];
      sb[i] = hyps_b[k];
      sr[i] = refs[k];
    }
    const double a = metric(sa, sr);
    const double b = metric(sb, sr);
    if (b > a) {
      ++out.wins_b;
    } else if (b == a) {
      ++out.ties;
    }
  }
  out.p_b_better = (static_cast<double>(out.wins_b) + 0.5 * static_cast<double>(out.ties)) /
                   static_cast<double>(resamples);
  return out;
}

}  // namespace ctxattn
