#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "commands.hpp"
#include "ctxattn/checkpoint.hpp"
#include "ctxattn/synthetic.hpp"
#include "ctxattn/wsdforge.hpp"

namespace ctxattn::cli {

namespace {

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return in;
}

std::string scat_text(const std::vector<ScatExample>& examples) {
  std::ostringstream out;
  write_scat(out, examples);
  return out.str();
}

}  // namespace

// ---------------------------------------------------------------- forge-wsd

void add_forge_wsd(CLI::App& app, const Globals& g, std::vector<Command>& out) {
  struct Opts {
    std::string corpus, alignments, annotations, review, out, groups;
    std::size_t min_count = kDefaultMinCount, min_targets = 2, window = kDefaultLexicalWindow;
    double z = kDefaultEntropyThreshold;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("forge-wsd", "Build a contrastive word-sense test set from an aligned corpus");
  sub->add_option("--corpus", o->corpus, "Corpus giving document boundaries");
  sub->add_option("--alignments", o->alignments, "Pharaoh alignments, one line per sentence pair");
  sub->add_option("--annotations", o->annotations, "surface|lemma|POS tokens, source<TAB>target per line");
  sub->add_option("--review", o->review, "Reviewed groups (lemma<TAB>POS<TAB>class); without it only candidates");
  sub->add_option("--out", o->out, "Contrastive JSON-lines output (default: <report-dir>/wsd_contrastive.jsonl)");
  sub->add_option("--groups", o->groups, "Candidate groups TSV (default: <report-dir>/wsd_groups.tsv)");
  sub->add_option("--min-count", o->min_count)->capture_default_str();
  sub->add_option("--min-targets", o->min_targets)->capture_default_str();
  sub->add_option("--z", o->z, "Entropy threshold")->capture_default_str();
  sub->add_option("--window", o->window, "Lexical-consistency window in sentences")->capture_default_str();

  Command cmd;
  cmd.sub = sub;
  cmd.validate = [o] {
    require_file(o->corpus, "--corpus");
    require_file(o->alignments, "--alignments");
    require_file(o->annotations, "--annotations");
    if (!o->review.empty()) require_file(o->review, "--review");
    if (o->min_targets < 2) throw ValidationError("--min-targets must be >= 2");
    if (!(o->z >= 0.0)) throw ValidationError("--z must be >= 0");
  };
  cmd.run = [o, sub, &g] {
    const auto dir = report_dir(g);
    const auto out_path = o->out.empty() ? dir / "wsd_contrastive.jsonl" : std::filesystem::path(o->out);
    const auto groups_path = o->groups.empty() ? dir / "wsd_groups.tsv" : std::filesystem::path(o->groups);
    auto report = report_header(*sub, g);
    std::vector<std::string> warnings;

    auto ain = open_in(o->alignments);
    auto alignments = parse_alignments(ain);
    std::vector<AmbiguousGroup> groups;
    ForgeResult forged;
    if (alignments.empty()) {
      warnings.push_back("alignment file is empty; nothing to forge");
    } else {
      const auto corpus = read_corpus(std::filesystem::path(o->corpus));
      auto nin = open_in(o->annotations);
      auto docs = attach_annotations(corpus, parse_annotations(nin), std::move(alignments));
      groups = extract_groups(accumulate_counts(docs), o->min_count, o->min_targets, o->z);
      if (o->review.empty()) {
        warnings.push_back("no review file; emitting candidate groups only");
      } else {
        auto rin = open_in(o->review);
        apply_review(groups, parse_review(rin));
        forged = make_contrastive(docs, groups, o->window);
      }
    }
    warnings.insert(warnings.end(), forged.warnings.begin(), forged.warnings.end());
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';

    write_report(groups_path, groups_tsv(groups));
    write_report(out_path, scat_text(forged.examples));
    report["groups"] = groups.size();
    report["examples"] = forged.examples.size();
    report["warnings"] = warnings;
    report["min_count"] = o->min_count;
    report["z"] = o->z;
    report["window"] = o->window;
    write_json(dir / "forge_wsd.json", report);
    std::cout << groups.size() << " groups, " << forged.examples.size() << " contrastive examples\n";
  };
  out.push_back(std::move(cmd));
}

// ---------------------------------------------------------------- scat-stats

void add_scat_stats(CLI::App& app, const Globals& g, std::vector<Command>& out) {
  auto path = std::make_shared<std::string>();
  auto* sub = app.add_subcommand("scat-stats", "Counts per context level and highlight-distance histograms");
  sub->add_option("--scat", *path, "SCAT JSON-lines");

  Command cmd;
  cmd.sub = sub;
  cmd.validate = [path] { require_file(*path, "--scat"); };
  cmd.run = [path, sub, &g] {
    auto in = open_in(*path);
    const auto parsed = parse_scat_lenient(in);
    std::map<std::string, std::size_t> levels;
    for (const auto& ex : parsed.examples) ++levels[to_string(ex.ctx_level)];
    const auto hist = highlight_distance_histogram(parsed.examples);
    auto to_json = [](const std::map<std::size_t, std::size_t>& m) {
      nlohmann::json j = nlohmann::json::object();
      for (const auto& [d, c] : m) j[std::to_string(d)] = c;
      return j;
    };
    auto j = report_header(*sub, g);
    j["examples"] = parsed.examples.size();
    j["malformed"] = parsed.errors.size();
    j["errors"] = parsed.errors;
    j["context_levels"] = levels;
    j["highlight_distance"] = {{"source", to_json(hist.source)}, {"target", to_json(hist.target)}};
    write_json(report_dir(g) / "scat_stats.json", j);

    std::cout << "examples " << parsed.examples.size() << " (malformed " << parsed.errors.size() << ")\n";
    std::cout << "context level counts:\n";
    for (const auto& [lvl, c] : levels) std::cout << "  " << lvl << "  " << c << '\n';
    for (const auto& [name, m] : {std::pair{"source", &hist.source}, std::pair{"target", &hist.target}}) {
      std::cout << name << " highlights by sentence distance:\n";
      for (const auto& [d, c] : *m) std::cout << "  " << d << "  " << c << '\n';
    }
  };
  out.push_back(std::move(cmd));
}

// ---------------------------------------------------------------- convert-scat

void add_convert_scat(CLI::App& app, const Globals& g, std::vector<Command>& out) {
  struct Opts {
    std::string src, tgt, out, prefix = "scat";
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("convert-scat", "Convert the tagged SCAT release text to JSON-lines");
  sub->add_option("--src", o->src, "English side: <brk>-separated sentences, <p>..</p> and <hon>..<hoff> tags");
  sub->add_option("--tgt", o->tgt, "French side, same layout");
  sub->add_option("--out", o->out, "Output JSON-lines");
  sub->add_option("--id-prefix", o->prefix)->capture_default_str();

  Command cmd;
  cmd.sub = sub;
  cmd.validate = [o] {
    require_file(o->src, "--src");
    require_file(o->tgt, "--tgt");
    if (o->out.empty()) throw ValidationError("--out is required");
  };
  cmd.run = [o, sub, &g] {
    auto s = open_in(o->src);
    auto t = open_in(o->tgt);
    const auto conv = convert_scat_release(s, t, o->prefix);
    for (const auto& e : conv.errors) std::cerr << "warning: " << e << '\n';
    atomic_write(o->out, scat_text(conv.examples));
    auto j = report_header(*sub, g);
    j["converted"] = conv.examples.size();
    j["skipped"] = conv.errors.size();
    write_json(report_dir(g) / "convert_scat.json", j);
    std::cout << conv.examples.size() << " converted, " << conv.errors.size() << " skipped\n";
  };
  out.push_back(std::move(cmd));
}

// ---------------------------------------------------------------- synth

void add_synth(CLI::App& app, const Globals& g, std::vector<Command>& out) {
  struct Opts {
    std::string dir;
    SyntheticConfig cfg;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("synth", "Write the synthetic pronoun task (corpus, SCAT, test pairs, vocab)");
  sub->add_option("--out-dir", o->dir, "Output directory");
  sub->add_option("--train-docs", o->cfg.train_docs)->capture_default_str();
  sub->add_option("--episodes", o->cfg.episodes_per_doc, "Pronoun episodes per document")->capture_default_str();
  sub->add_option("--test-pairs", o->cfg.test_pairs)->capture_default_str();
  sub->add_option("--max-distance", o->cfg.max_distance)->capture_default_str();

  Command cmd;
  cmd.sub = sub;
  cmd.validate = [o] {
    if (o->dir.empty()) throw ValidationError("--out-dir is required");
    if (o->cfg.max_distance < 1) throw ValidationError("--max-distance must be >= 1");
  };
  cmd.run = [o, &g] {
    o->cfg.seed = g.seed;
    const auto data = make_synthetic(o->cfg);
    const std::filesystem::path dir(o->dir);
    std::ostringstream corpus, vocab;
    write_corpus(corpus, data.train);
    data.vocab.save(vocab);
    atomic_write(dir / "train.txt", corpus.str());
    atomic_write(dir / "scat.jsonl", scat_text(data.scat));
    atomic_write(dir / "test.jsonl", scat_text(data.test));
    atomic_write(dir / "vocab.txt", vocab.str());
    std::cout << data.train.size() << " documents, " << data.scat.size() << " SCAT examples, " << data.test.size()
              << " test pairs, vocabulary " << data.vocab.size() << '\n';
  };
  out.push_back(std::move(cmd));
}

}  // namespace ctxattn::cli
