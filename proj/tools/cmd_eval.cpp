#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "commands.hpp"
#include "ctxattn/checkpoint.hpp"
#include "ctxattn/conteval.hpp"
#include "ctxattn/evalmetrics.hpp"

namespace ctxattn::cli {

namespace {

struct Loaded {
  Checkpoint ckpt;
  Vocabulary vocab;
  ContextConfig context;
};

struct ModelOpts {
  std::string checkpoint, vocab, context;

  void add(CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "Model checkpoint");
    sub->add_option("--vocab", vocab, "Vocabulary file when the checkpoint carries none");
    sub->add_option("--context", context, "Context level n+m (default: the checkpoint's)");
  }

  void validate() const {
    require_file(checkpoint, "--checkpoint");
    if (!vocab.empty()) require_file(vocab, "--vocab");
    if (!context.empty()) {
      try {
        parse_context_level(context);
      } catch (const std::exception& e) {
        throw ValidationError(std::string("--context: ") + e.what());
      }
    }
  }

  Loaded load() const {
    Loaded l;
    l.ckpt = load_checkpoint(checkpoint);
    if (!vocab.empty()) {
      l.vocab = Vocabulary::load(std::filesystem::path(vocab));
    } else if (!l.ckpt.vocab.empty()) {
      l.vocab = Vocabulary::from_tokens(l.ckpt.vocab);
    } else {
      throw ValidationError("checkpoint has no vocabulary; pass --vocab");
    }
    if (l.vocab.size() != l.ckpt.hyperparams.tgt_vocab)
      throw ModelError("vocabulary size " + std::to_string(l.vocab.size()) + " does not match the model's " +
                       std::to_string(l.ckpt.hyperparams.tgt_vocab));
    l.context = !context.empty() ? parse_context_level(context) : l.ckpt.context.value_or(ContextConfig{5, 5});
    return l;
  }
};

template <class T>
std::vector<T> take(std::vector<T> v, std::size_t limit) {
  if (limit > 0 && v.size() > limit) v.resize(limit);
  return v;
}

}  // namespace

// ---------------------------------------------------------------- align-audit

void add_align_audit(CLI::App& app, const Globals& g, std::vector<Command>& out) {
  struct Opts {
    ModelOpts model;
    std::string scat, head_mode = "per-head";
    double epsilon = kDefaultEpsilon;
    std::size_t limit = 0;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("align-audit", "Alignment of every attention layer/head with SCAT rationales");
  o->model.add(sub);
  sub->add_option("--scat", o->scat, "SCAT JSON-lines with highlights");
  sub->add_option("--head-mode", o->head_mode, "per-head | avg")->capture_default_str();
  sub->add_option("--epsilon", o->epsilon)->capture_default_str();
  sub->add_option("--limit", o->limit, "Use only the first N examples (0 = all)")->capture_default_str();

  Command cmd;
  cmd.sub = sub;
  cmd.validate = [o] {
    o->model.validate();
    require_file(o->scat, "--scat");
    if (o->head_mode != "per-head" && o->head_mode != "avg")
      throw ValidationError("--head-mode must be per-head or avg");
  };
  cmd.run = [o, sub, &g] {
    const auto l = o->model.load();
    const auto model = l.ckpt.model();
    std::vector<ScatSample> samples;
    std::size_t dropped = 0;
    for (const auto& ex : take(parse_scat(std::filesystem::path(o->scat)), o->limit)) {
      try {
        samples.push_back(prepare_scat(ex, l.context, l.vocab));
      } catch (const ScatError&) {
        ++dropped;
      }
    }
    if (samples.empty()) throw EvalError("no usable SCAT examples");
    const auto mode = o->head_mode == "avg" ? HeadMode::Averaged : HeadMode::PerHead;
    const auto rep = sweep(model, samples, mode, o->epsilon);
    const auto dir = report_dir(g);
    write_report(dir / "align_audit.csv", alignment_csv(rep));
    auto j = report_header(*sub, g);
    j["alignment"] = nlohmann::json::parse(alignment_json(rep));
    j["dropped"] = dropped;
    write_json(dir / "align_audit.json", j);
    std::cout << format_alignment_grid(rep);
  };
  out.push_back(std::move(cmd));
}

// ---------------------------------------------------------------- contrastive

void add_contrastive(CLI::App& app, const Globals& g, std::vector<Command>& out) {
  struct Opts {
    ModelOpts model;
    std::string set;
    std::vector<std::string> masks;
    double random_p = 0.1;
    std::size_t limit = 0;
    std::vector<MaskSpec> specs;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("contrastive", "Contrastive accuracy under the masking ablations");
  o->model.add(sub);
  sub->add_option("--set", o->set, "Contrastive set (SCAT JSON-lines; highlights needed for supporting masks)");
  sub->add_option("--mask", o->masks,
                  "none | supporting | random[:p] | source-context | target-context | all-context (repeatable; "
                  "default: all six)");
  sub->add_option("--random-p", o->random_p, "p for the default random mask")->capture_default_str();
  sub->add_option("--limit", o->limit, "Use only the first N pairs (0 = all)")->capture_default_str();

  Command cmd;
  cmd.sub = sub;
  cmd.validate = [o, &g] {
    o->model.validate();
    require_file(o->set, "--set");
    o->specs.clear();
    try {
      if (o->masks.empty()) {
        o->specs = standard_masks(g.seed, o->random_p);
        for (const auto& s : o->specs) s.validate();
      } else {
        for (const auto& m : o->masks) o->specs.push_back(MaskSpec::parse(m, g.seed));
      }
    } catch (const EvalError& e) {
      throw ValidationError(std::string("--mask: ") + e.what());
    }
  };
  cmd.run = [o, sub, &g] {
    const auto l = o->model.load();
    const auto model = l.ckpt.model();
    const auto examples = take(parse_scat(std::filesystem::path(o->set), false), o->limit);
    const auto pairs = make_contrastive_pairs(examples, l.context, l.vocab);
    std::vector<MaskRow> rows;
    for (const auto& spec : o->specs) rows.push_back({spec, contrastive_accuracy(model, pairs, spec)});

    const auto dir = report_dir(g);
    write_report(dir / "contrastive.csv", mask_table_csv(rows));
    auto j = report_header(*sub, g);
    j["pairs"] = pairs.size();
    nlohmann::json results = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json outcomes = nlohmann::json::array();
      for (const auto& oc : r.result.outcomes)
        outcomes.push_back({{"id", oc.id},
                            {"score_correct", oc.score_correct},
                            {"score_incorrect", oc.score_incorrect},
                            {"correct", oc.correct}});
      results.push_back({{"mask", r.mask.label()}, {"accuracy", r.result.accuracy}, {"outcomes", outcomes}});
    }
    j["results"] = results;
    write_json(dir / "contrastive.json", j);
    std::cout << format_mask_table(rows);
  };
  out.push_back(std::move(cmd));
}

// ---------------------------------------------------------------- translate

void add_translate(CLI::App& app, const Globals& g, std::vector<Command>& out) {
  struct Opts {
    ModelOpts model;
    std::string corpus, mode = "gold", hyps;
    DecodeConfig decode;
    std::vector<std::string> target_words = kDefaultPronouns;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("translate", "Decode documents with gold or non-gold target context");
  o->model.add(sub);
  sub->add_option("--corpus", o->corpus, "Documents to translate; targets serve as references");
  sub->add_option("--mode", o->mode, "gold | non-gold")->capture_default_str();
  sub->add_option("--beam", o->decode.beam)->capture_default_str();
  sub->add_option("--max-len", o->decode.max_len, "Generated tokens per sentence")->capture_default_str();
  sub->add_option("--hyps", o->hyps, "Hypothesis output (default: <report-dir>/hypotheses.tsv)");
  sub->add_option("--target-words", o->target_words, "Words scored by f_target")->capture_default_str();

  Command cmd;
  cmd.sub = sub;
  cmd.validate = [o] {
    o->model.validate();
    require_file(o->corpus, "--corpus");
    try {
      parse_context_mode(o->mode);
    } catch (const EvalError& e) {
      throw ValidationError(std::string("--mode: ") + e.what());
    }
    if (o->decode.beam < 1) throw ValidationError("--beam must be >= 1");
    if (o->decode.max_len < 1) throw ValidationError("--max-len must be >= 1");
  };
  cmd.run = [o, sub, &g] {
    const auto l = o->model.load();
    const auto model = l.ckpt.model();
    const auto mode = parse_context_mode(o->mode);
    const auto corpus = read_corpus(std::filesystem::path(o->corpus));
    std::vector<std::string> hyps, refs;
    std::ostringstream tsv;
    for (const auto& doc : corpus) {
      if (doc.pairs.empty()) continue;
      const auto out_doc = translate_document(model, doc, l.context, mode, o->decode, l.vocab);
      for (std::size_t j = 0; j < out_doc.size(); ++j) {
        hyps.push_back(out_doc[j]);
        refs.push_back(normalize(doc.pairs[j].second));
        tsv << doc.id << '\t' << j << '\t' << out_doc[j] << '\n';
      }
    }
    if (refs.empty()) throw EvalError("corpus has no sentences");
    const auto dir = report_dir(g);
    write_report(o->hyps.empty() ? dir / "hypotheses.tsv" : std::filesystem::path(o->hyps), tsv.str());
    const double b = bleu(hyps, refs);
    const auto f = word_fmeasure(hyps, refs, o->target_words);
    auto j = report_header(*sub, g);
    j["mode"] = to_string(mode);
    j["context"] = to_string(l.context);
    j["beam"] = o->decode.beam;
    j["sentences"] = hyps.size();
    j["bleu"] = b;
    j["f_target"] = f.f_target;
    j["f_other"] = f.f_other;
    j["n_target"] = f.n_target;
    j["n_other"] = f.n_other;
    write_json(dir / "translate.json", j);
    std::printf("mode %s  BLEU %.2f  f_target %.4f  f_other %.4f  (%zu sentences)\n", to_string(mode).c_str(), b,
                f.f_target, f.f_other, hyps.size());
  };
  out.push_back(std::move(cmd));
}

}  // namespace ctxattn::cli
