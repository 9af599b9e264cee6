#include "ctxattn/wsdforge.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <set>
#include <sstream>

namespace ctxattn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

std::size_t parse_index(std::string_view s, std::size_t lineno) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ForgeError("bad alignment index '" + std::string(s) + "' at line " + std::to_string(lineno));
  return v;
}

AnnotatedToken parse_token(const std::string& t, bool need_pos, std::size_t lineno) {
  const auto a = t.find('|');
  if (a == std::string::npos || a == 0)
    throw ForgeError("missing annotation for token '" + t + "' at line " + std::to_string(lineno));
  const auto b = t.find('|', a + 1);
  AnnotatedToken tok;
  tok.surface = t.substr(0, a);
  if (b == std::string::npos) {
    if (need_pos) throw ForgeError("missing POS for token '" + t + "' at line " + std::to_string(lineno));
    tok.lemma = t.substr(a + 1);
  } else {
    tok.lemma = t.substr(a + 1, b - a - 1);
    tok.pos = t.substr(b + 1);
  }
  if (tok.lemma.empty() || (need_pos && tok.pos.empty()))
    throw ForgeError("missing annotation for token '" + t + "' at line " + std::to_string(lineno));
  return tok;
}

std::string join_surfaces(const std::vector<AnnotatedToken>& toks) {
  std::string out;
  for (const auto& t : toks) {
    if (!out.empty()) out += ' ';
    out += t.surface;
  }
  return out;
}

// Index of token k once the joined sentence is re-tokenized.
std::size_t retokenized_index(const std::vector<AnnotatedToken>& toks, std::size_t k) {
  std::vector<AnnotatedToken> prefix(toks.begin(), toks.begin() + static_cast<std::ptrdiff_t>(k));
  return tokenize(join_surfaces(prefix)).size();
}

void check_links(const AnnotatedPair& pair, const AlignmentRecord& rec) {
  for (const auto& [i, j] : rec.links) {
    if (i >= pair.src.size() || j >= pair.tgt.size())
      throw ForgeError("alignment " + std::to_string(i) + "-" + std::to_string(j) + " out of bounds for pair " +
                       std::to_string(rec.pair_id) + " (" + std::to_string(pair.src.size()) + " source, " +
                       std::to_string(pair.tgt.size()) + " target tokens)");
  }
}

}  // namespace

std::vector<AlignmentRecord> parse_alignments(std::istream& in) {
  std::vector<AlignmentRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    AlignmentRecord rec;
    rec.pair_id = lineno++;
    for (const auto& item : split_ws(line)) {
      const auto dash = item.find('-');
      if (dash == std::string::npos)
        throw ForgeError("bad alignment link '" + item + "' at line " + std::to_string(lineno));
      const std::string_view sv(item);
      rec.links.emplace_back(parse_index(sv.substr(0, dash), lineno), parse_index(sv.substr(dash + 1), lineno));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<AnnotatedPair> parse_annotations(std::istream& in) {
  std::vector<AnnotatedPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ForgeError("annotation line " + std::to_string(lineno) + " lacks a TAB");
    AnnotatedPair p;
    for (const auto& t : split_ws(line.substr(0, tab))) p.src.push_back(parse_token(t, true, lineno));
    for (const auto& t : split_ws(line.substr(tab + 1))) p.tgt.push_back(parse_token(t, false, lineno));
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<AnnotatedDocument> attach_annotations(const std::vector<ParallelDocument>& corpus,
                                                  std::vector<AnnotatedPair> pairs,
                                                  std::vector<AlignmentRecord> alignments) {
  std::size_t total = 0;
  for (const auto& d : corpus) total += d.size();
  if (pairs.size() != total)
    throw ForgeError("annotation file has " + std::to_string(pairs.size()) + " lines, corpus has " +
                     std::to_string(total) + " sentence pairs");
  if (alignments.size() != total)
    throw ForgeError("alignment file has " + std::to_string(alignments.size()) + " lines, corpus has " +
                     std::to_string(total) + " sentence pairs");
  std::vector<AnnotatedDocument> docs;
  std::size_t k = 0;
  for (const auto& d : corpus) {
    AnnotatedDocument doc;
    doc.id = d.id;
    for (std::size_t j = 0; j < d.size(); ++j, ++k) {
      check_links(pairs[k], alignments[k]);
      doc.pairs.push_back(std::move(pairs[k]));
      doc.alignments.push_back(std::move(alignments[k]));
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

// ---------------------------------------------------------------- counts

void CountTable::add(const SourceKey& key, const std::string& target_lemma, std::size_t n) {
  rows[key][target_lemma] += n;
}

void CountTable::merge(const CountTable& other) {
  for (const auto& [key, row] : other.rows)
    for (const auto& [t, c] : row) add(key, t, c);
}

std::size_t CountTable::marginal(const SourceKey& key) const {
  auto it = rows.find(key);
  if (it == rows.end()) return 0;
  std::size_t s = 0;
  for (const auto& [t, c] : it->second) s += c;
  return s;
}

CountTable accumulate_counts(std::span<const AnnotatedPair> pairs, std::span<const AlignmentRecord> alignments) {
  if (pairs.size() != alignments.size())
    throw ForgeError("annotation and alignment counts differ: " + std::to_string(pairs.size()) + " vs " +
                     std::to_string(alignments.size()));
  CountTable table;
  for (std::size_t m = 0; m < pairs.size(); ++m) {
    check_links(pairs[m], alignments[m]);
    for (const auto& [i, j] : alignments[m].links) {
      const auto& s = pairs[m].src[i];
      table.add({s.lemma, s.pos}, pairs[m].tgt[j].lemma);
    }
  }
  return table;
}

CountTable accumulate_counts(std::span<const AnnotatedDocument> docs) {
  CountTable table;
  for (const auto& d : docs) table.merge(accumulate_counts(d.pairs, d.alignments));
  return table;
}

double entropy(const std::map<std::string, std::size_t>& row) {
  std::size_t total = 0;
  for (const auto& [t, c] : row) total += c;
  if (total == 0) throw ForgeError("entropy of a row with zero marginal");
  double h = 0.0;
  for (const auto& [t, c] : row) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h;
}

std::string to_string(GroupClass c) {
  switch (c) {
    case GroupClass::Unclassified: return "unclassified";
    case GroupClass::Synonymous: return "synonymous";
    case GroupClass::NonSynonymous: return "non-synonymous";
    case GroupClass::Rejected: return "rejected";
  }
  return "?";
}

GroupClass parse_group_class(const std::string& s) {
  if (s == "unclassified") return GroupClass::Unclassified;
  if (s == "synonymous") return GroupClass::Synonymous;
  if (s == "non-synonymous") return GroupClass::NonSynonymous;
  if (s == "rejected" || s == "reject") return GroupClass::Rejected;
  throw ForgeError("unknown group class '" + s + "'");
}

std::vector<AmbiguousGroup> extract_groups(const CountTable& table, std::size_t min_count, std::size_t min_targets,
                                           double z) {
  std::vector<AmbiguousGroup> out;
  for (const auto& [key, row] : table.rows) {
    if (table.marginal(key) == 0) continue;
    AmbiguousGroup g;
    g.source = key;
    for (const auto& [t, c] : row)
      if (c >= min_count) g.targets.emplace_back(t, c);
    if (g.targets.size() < min_targets) continue;
    g.entropy = entropy(row);
    if (g.entropy < z) continue;
    std::stable_sort(g.targets.begin(), g.targets.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    out.push_back(std::move(g));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const AmbiguousGroup& a, const AmbiguousGroup& b) { return a.entropy > b.entropy; });
  return out;
}

std::map<SourceKey, GroupClass> parse_review(std::istream& in) {
  std::map<SourceKey, GroupClass> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(t);
    for (std::string c; std::getline(ss, c, '\t');) cols.push_back(trim(c));
    if (cols.size() < 3) throw ForgeError("review line " + std::to_string(lineno) + " needs lemma, POS and class");
    try {
      out[{cols[0], cols[1]}] = parse_group_class(cols[2]);
    } catch (const ForgeError& e) {
      throw ForgeError(std::string(e.what()) + " at review line " + std::to_string(lineno));
    }
  }
  return out;
}

void apply_review(std::vector<AmbiguousGroup>& groups, const std::map<SourceKey, GroupClass>& review) {
  for (auto& g : groups) {
    auto it = review.find(g.source);
    g.cls = it == review.end() ? GroupClass::Unclassified : it->second;
  }
}

std::string groups_tsv(std::span<const AmbiguousGroup> groups) {
  std::ostringstream out;
  out << "# lemma\tPOS\tclass\tentropy\ttargets\n";
  for (const auto& g : groups) {
    out << g.source.first << '\t' << g.source.second << '\t' << to_string(g.cls) << '\t' << g.entropy << '\t';
    for (std::size_t i = 0; i < g.targets.size(); ++i)
      out << (i ? "," : "") << g.targets[i].first << ':' << g.targets[i].second;
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------- emission

ForgeResult make_contrastive(std::span<const AnnotatedDocument> docs, std::span<const AmbiguousGroup> groups,
                             std::size_t window) {
  ForgeResult result;
  std::map<SourceKey, const AmbiguousGroup*> active;
  for (const auto& g : groups) {
    if (g.cls == GroupClass::Unclassified) {
      result.warnings.push_back("skipping unclassified group " + g.source.first + "/" + g.source.second);
      continue;
    }
    if (g.cls == GroupClass::Rejected) continue;
    active[g.source] = &g;
  }
  if (active.empty()) return result;

  // (group, target lemma) -> surface -> count, over aligned occurrences
  std::map<std::pair<SourceKey, std::string>, std::map<std::string, std::size_t>> surfaces;
  for (const auto& d : docs) {
    for (std::size_t m = 0; m < d.pairs.size(); ++m) {
      for (const auto& [i, j] : d.alignments[m].links) {
        const auto& s = d.pairs[m].src.at(i);
        const SourceKey key{s.lemma, s.pos};
        if (!active.count(key)) continue;
        const auto& t = d.pairs[m].tgt.at(j);
        ++surfaces[{key, t.lemma}][t.surface];
      }
    }
  }
  auto best_surface = [&](const SourceKey& key, const std::string& lemma) -> std::string {
    auto it = surfaces.find({key, lemma});
    if (it == surfaces.end()) return lemma;
    const std::string* best = nullptr;
    std::size_t n = 0;
    for (const auto& [surf, c] : it->second)
      if (c > n) {
        best = &surf;
        n = c;
      }
    return *best;
  };

  for (const auto& d : docs) {
    for (std::size_t m = 0; m < d.pairs.size(); ++m) {
      const auto& pair = d.pairs[m];
      const std::set<std::pair<std::size_t, std::size_t>> links(d.alignments[m].links.begin(),
                                                                 d.alignments[m].links.end());
      for (const auto& [i, j] : links) {
        const auto& s = pair.src.at(i);
        auto git = active.find({s.lemma, s.pos});
        if (git == active.end()) continue;
        const AmbiguousGroup& g = *git->second;
        const auto& correct_lemma = pair.tgt.at(j).lemma;
        const bool member = std::any_of(g.targets.begin(), g.targets.end(),
                                        [&](const auto& t) { return t.first == correct_lemma; });
        if (!member) continue;

        const std::size_t first = m >= window ? m - window : 0;
        if (g.cls == GroupClass::Synonymous) {
          bool seen = false;
          for (std::size_t q = first; q < m && !seen; ++q)
            for (const auto& t : d.pairs[q].tgt)
              if (t.lemma == correct_lemma) seen = true;
          if (!seen) continue;
        }

        ScatExample base;
        for (std::size_t q = first; q < m; ++q) {
          base.ctx_src.push_back(join_surfaces(d.pairs[q].src));
          base.ctx_tgt.push_back(join_surfaces(d.pairs[q].tgt));
        }
        base.src = join_surfaces(pair.src);
        base.tgt_correct = join_surfaces(pair.tgt);
        base.pron_src_idx = retokenized_index(pair.src, i);
        base.pron_tgt_idx = retokenized_index(pair.tgt, j);
        base.ctx_level = {base.ctx_src.size(), base.ctx_tgt.size()};
        base.confidence = to_string(g.cls);

        for (const auto& [alt, count] : g.targets) {
          if (alt == correct_lemma) continue;
          auto swapped = pair.tgt;
          swapped[j].surface = best_surface(g.source, alt);
          ScatExample ex = base;
          ex.tgt_incorrect = join_surfaces(swapped);
          ex.id = d.id + ":" + std::to_string(m) + ":" + std::to_string(i) + "-" + std::to_string(j) + ":" + alt;
          if (normalize(ex.tgt_incorrect) == normalize(ex.tgt_correct)) {
            result.warnings.push_back("example " + ex.id + ": substitute has the same surface form, skipped");
            continue;
          }
          result.examples.push_back(std::move(ex));
        }
      }
    }
  }
  return result;
}

}  // namespace ctxattn
