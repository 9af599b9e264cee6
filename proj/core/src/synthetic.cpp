#include "ctxattn/synthetic.hpp"

#include <algorithm>
#include <random>
#include <string>

namespace ctxattn {

namespace {

struct Noun {
  const char* en;
  const char* fr;
  bool feminine;
};

constexpr Noun kNouns[] = {
    {"book", "livre", false},    {"car", "voiture", true},       {"house", "maison", true},
    {"tree", "arbre", false},    {"chair", "chaise", true},      {"dog", "chien", false},
    {"apple", "pomme", true},    {"knife", "couteau", false},    {"door", "porte", true},
    {"boat", "bateau", false},   {"city", "ville", true},        {"garden", "jardin", false},
    {"window", "fenetre", true}, {"hat", "chapeau", false},      {"key", "cle", true},
    {"bed", "lit", false},       {"bottle", "bouteille", true},  {"phone", "telephone", false},
    {"box", "boite", true},      {"ball", "ballon", false},
};

constexpr const char* kSubjects[][2] = {
    {"i see", "je vois"}, {"you buy", "tu achetes"}, {"we like", "nous aimons"}, {"you clean", "vous nettoyez"}};

constexpr const char* kFillers[][2] = {
    {"we walk slowly .", "nous marchons lentement ."}, {"you sing well .", "tu chantes bien ."},
    {"i am tired .", "je suis fatigue ."},             {"we eat now .", "nous mangeons maintenant ."},
    {"you run fast .", "tu cours vite ."},             {"i sleep early .", "je dors tot ."},
    {"we read a lot .", "nous lisons beaucoup ."},     {"you work hard .", "vous travaillez dur ."},
};

constexpr const char* kVerbs[][2] = {{"is", "est"}, {"was", "etait"}, {"looks", "semble"}};

constexpr const char* kAdjectives[][2] = {
    {"red", "rouge"},     {"yellow", "jaune"}, {"fast", "rapide"}, {"useful", "utile"},
    {"calm", "calme"},    {"wide", "large"},   {"clean", "propre"}, {"easy", "facile"},
    {"strange", "etrange"}, {"fragile", "fragile"},
};

constexpr std::size_t kNounToken = 3;  // "<subj> <verb> the <noun> ."

template <class T, std::size_t N>
const T& pick(const T (&arr)[N], std::mt19937_64& rng) {
  return arr[std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)];
}

struct Sentence {
  std::string src, tgt;
};

Sentence noun_sentence(const Noun& n, std::mt19937_64& rng) {
  const auto& s = pick(kSubjects, rng);
  return {std::string(s[0]) + " the " + n.en + " .",
          std::string(s[1]) + (n.feminine ? " la " : " le ") + n.fr + " ."};
}

Sentence filler(std::mt19937_64& rng) {
  const auto& f = pick(kFillers, rng);
  return {f[0], f[1]};
}

struct PronounSite {
  std::size_t index = 0;       // sentence index in the document
  std::size_t antecedent = 0;  // sentence index of the antecedent
  bool feminine = false;
  std::string tgt_incorrect;
};

// Appends one episode to `doc` and returns its pronoun site.
PronounSite episode(ParallelDocument& doc, const SyntheticConfig& cfg, std::mt19937_64& rng) {
  const auto n_distract = std::uniform_int_distribution<std::size_t>(0, cfg.max_distractors)(rng);
  const auto distance = std::uniform_int_distribution<std::size_t>(cfg.min_distance, cfg.max_distance)(rng);
  const Noun& antecedent = pick(kNouns, rng);

  for (std::size_t i = 0; i < n_distract; ++i) {
    const Noun* d = &pick(kNouns, rng);
    while (d == &antecedent) d = &pick(kNouns, rng);
    auto s = noun_sentence(*d, rng);
    doc.pairs.emplace_back(s.src, s.tgt);
  }
  PronounSite site;
  site.antecedent = doc.size();
  site.feminine = antecedent.feminine;
  auto a = noun_sentence(antecedent, rng);
  doc.pairs.emplace_back(a.src, a.tgt);
  for (std::size_t i = 1; i < distance; ++i) {
    auto f = filler(rng);
    doc.pairs.emplace_back(f.src, f.tgt);
  }
  const auto& verb = pick(kVerbs, rng);
  const auto& adj = pick(kAdjectives, rng);
  const std::string rest = std::string(" ") + verb[1] + " " + adj[1] + " .";
  site.index = doc.size();
  site.tgt_incorrect = (antecedent.feminine ? "il" : "elle") + rest;
  doc.pairs.emplace_back(std::string("it ") + verb[0] + " " + adj[0] + " .",
                         (antecedent.feminine ? "elle" : "il") + rest);
  return site;
}

ScatExample to_example(const ParallelDocument& doc, const PronounSite& site, const ContextConfig& cfg,
                       const std::string& id) {
  ScatExample ex;
  ex.id = id;
  const std::size_t keep = std::max(cfg.n, cfg.m);
  const std::size_t first = site.index >= keep ? site.index - keep : 0;
  for (std::size_t i = first; i < site.index; ++i) {
    ex.ctx_src.push_back(doc.pairs[i].first);
    ex.ctx_tgt.push_back(doc.pairs[i].second);
  }
  ex.src = doc.pairs[site.index].first;
  ex.tgt_correct = doc.pairs[site.index].second;
  ex.tgt_incorrect = site.tgt_incorrect;
  ex.pron_src_idx = 0;
  ex.pron_tgt_idx = 0;
  const int back = -static_cast<int>(site.index - site.antecedent);
  ex.hl_src = {{back, kNounToken}};
  ex.hl_tgt = {{back, kNounToken}};
  ex.ctx_level = {std::min(cfg.n, ex.ctx_src.size()), std::min(cfg.m, ex.ctx_tgt.size())};
  ex.confidence = "synthetic";
  return ex;
}

void lead_in(ParallelDocument& doc, std::mt19937_64& rng) {
  const auto n = std::uniform_int_distribution<std::size_t>(0, 3)(rng);
  for (std::size_t i = 0; i < n; ++i) {
    auto f = filler(rng);
    doc.pairs.emplace_back(f.src, f.tgt);
  }
}

}  // namespace

SyntheticData make_synthetic(const SyntheticConfig& cfg) {
  if (cfg.min_distance < 1 || cfg.max_distance < cfg.min_distance)
    throw TextError("synthetic distances must satisfy 1 <= min <= max");
  SyntheticData data;
  std::mt19937_64 train_rng(cfg.seed);
  for (std::size_t d = 0; d < cfg.train_docs; ++d) {
    ParallelDocument doc;
    doc.id = "train-" + std::to_string(d);
    lead_in(doc, train_rng);
    std::vector<PronounSite> sites;
    for (std::size_t e = 0; e < cfg.episodes_per_doc; ++e) sites.push_back(episode(doc, cfg, train_rng));
    for (std::size_t e = 0; e < sites.size(); ++e)
      data.scat.push_back(to_example(doc, sites[e], cfg.context, doc.id + "-" + std::to_string(e)));
    data.train.push_back(std::move(doc));
  }

  std::mt19937_64 test_rng(cfg.seed ^ 0x5deece66dULL);
  std::vector<ParallelDocument> test_docs;
  for (std::size_t t = 0; t < cfg.test_pairs; ++t) {
    ParallelDocument doc;
    doc.id = "test-" + std::to_string(t);
    lead_in(doc, test_rng);
    const auto site = episode(doc, cfg, test_rng);
    data.test.push_back(to_example(doc, site, cfg.context, doc.id));
    test_docs.push_back(std::move(doc));
  }

  std::vector<ParallelDocument> all = data.train;
  all.insert(all.end(), test_docs.begin(), test_docs.end());
  for (const auto& ex : data.test) all.push_back({ex.id + "-alt", {{ex.src, ex.tgt_incorrect}}});
  data.vocab = Vocabulary::build(all, 1, 100000);
  return data;
}

}  // namespace ctxattn
