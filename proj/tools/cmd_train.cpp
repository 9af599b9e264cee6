#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "commands.hpp"
#include "ctxattn/checkpoint.hpp"
#include "ctxattn/trainer.hpp"

namespace ctxattn::cli {

namespace {

struct TrainOpts {
  std::string corpus, scat, vocab, out, init, log;
  std::string regime = "attnreg-rand";
  std::string context = "5+5";
  std::vector<std::string> targets;
  TrainConfig tc;
  Hyperparams hp;
  std::size_t layers = 2;
  std::size_t min_freq = 1;
  std::size_t max_vocab = 32000;
  bool quiet = false;
};

std::vector<std::string> non_reserved(const Vocabulary& v) {
  return {v.tokens().begin() + kNumReserved, v.tokens().end()};
}

}  // namespace

void add_train(CLI::App& app, const Globals& g, std::vector<Command>& out) {
  auto o = std::make_shared<TrainOpts>();
  auto* sub = app.add_subcommand("train", "Train a context-aware model (baseline, attnreg-rand, attnreg-pre)");
  sub->add_option("--corpus", o->corpus, "Training corpus (### doc headers, source<TAB>target lines)");
  sub->add_option("--scat", o->scat, "SCAT JSON-lines with highlights (required unless baseline)");
  sub->add_option("--vocab", o->vocab, "Vocabulary file; built from the corpus when absent");
  sub->add_option("--out", o->out, "Output checkpoint path");
  sub->add_option("--init", o->init, "Pretrained checkpoint (required for attnreg-pre)");
  sub->add_option("--log", o->log, "Per-step JSON-lines log (default: <report-dir>/train_log.jsonl)");
  sub->add_option("--regime", o->regime, "baseline | attnreg-rand | attnreg-pre")->capture_default_str();
  sub->add_option("--lambda", o->tc.lambda, "Regularization weight")->capture_default_str();
  sub->add_option("--p-scat", o->tc.p_scat, "Probability of drawing a SCAT batch")->capture_default_str();
  sub->add_option("--target", o->targets, "Regularized row, e.g. dec-cross:top[:first|avg] (repeatable)");
  sub->add_option("--steps", o->tc.steps, "Optimizer steps")->capture_default_str();
  sub->add_option("--batch-size", o->tc.batch_size, "Examples per step")->capture_default_str();
  sub->add_option("--warmup", o->tc.warmup, "Warmup steps of the inverse-sqrt schedule")->capture_default_str();
  sub->add_option("--lr-scale", o->tc.lr_scale, "Multiplier on the schedule")->capture_default_str();
  sub->add_option("--epsilon", o->tc.epsilon, "Smoothing of the human distribution")->capture_default_str();
  sub->add_option("--context", o->context, "Context level n+m")->capture_default_str();
  sub->add_option("--layers", o->layers, "Encoder and decoder layers")->capture_default_str();
  sub->add_option("--heads", o->hp.heads)->capture_default_str();
  sub->add_option("--d-model", o->hp.d_model)->capture_default_str();
  sub->add_option("--d-ff", o->hp.d_ff)->capture_default_str();
  sub->add_option("--dropout", o->hp.dropout)->capture_default_str();
  sub->add_option("--label-smoothing", o->hp.label_smoothing)->capture_default_str();
  sub->add_option("--max-len", o->hp.max_len, "Longest sequence the model accepts")->capture_default_str();
  sub->add_option("--min-freq", o->min_freq, "Vocabulary minimum count")->capture_default_str();
  sub->add_option("--max-vocab", o->max_vocab, "Vocabulary size cap, reserved tokens included")->capture_default_str();
  sub->add_flag("--quiet", o->quiet, "No progress output");

  Command cmd;
  cmd.sub = sub;
  cmd.validate = [o, &g] {
    require_file(o->corpus, "--corpus");
    if (o->out.empty()) throw ValidationError("--out is required");
    try {
      o->tc.regime = parse_regime(o->regime);
    } catch (const TrainError& e) {
      throw ValidationError(std::string("--regime: ") + e.what());
    }
    if (o->tc.regime != Regime::Baseline) require_file(o->scat, "--scat");
    if (o->tc.regime == Regime::AttnRegPre && o->init.empty())
      throw ValidationError("--init: attnreg-pre requires a pretrained checkpoint");
    if (!o->init.empty()) require_file(o->init, "--init");
    if (!o->vocab.empty()) require_file(o->vocab, "--vocab");
    try {
      o->tc.context = parse_context_level(o->context);
    } catch (const std::exception& e) {
      throw ValidationError(std::string("--context: ") + e.what());
    }
    o->hp.n_enc = o->hp.n_dec = o->layers;
    Hyperparams probe = o->hp;
    probe.src_vocab = probe.tgt_vocab = kNumReserved + 1;
    try {
      probe.validate();
    } catch (const std::exception& e) {
      throw ValidationError(e.what());
    }
    o->tc.targets.clear();
    for (const auto& t : o->targets) {
      try {
        o->tc.targets.push_back(parse_reg_target(t, probe));
      } catch (const std::exception& e) {
        throw ValidationError(std::string("--target: ") + e.what());
      }
    }
    o->tc.seed = g.seed;
    try {
      o->tc.resolved(probe).validate(probe);
    } catch (const std::exception& e) {
      throw ValidationError(e.what());
    }
  };

  cmd.run = [o, sub, &g] {
    const auto dir = report_dir(g);
    const auto corpus = read_corpus(std::filesystem::path(o->corpus));

    std::optional<Checkpoint> init;
    if (!o->init.empty()) init = load_checkpoint(o->init);

    Vocabulary vocab;
    if (init && !init->vocab.empty()) {
      vocab = Vocabulary::from_tokens(init->vocab);
    } else if (!o->vocab.empty()) {
      vocab = Vocabulary::load(std::filesystem::path(o->vocab));
    } else {
      vocab = Vocabulary::build(corpus, o->min_freq, o->max_vocab);
    }

    Hyperparams hp = o->hp;
    hp.src_vocab = hp.tgt_vocab = vocab.size();
    if (init) hp = init->hyperparams;
    hp.validate();
    o->tc.targets.clear();
    for (const auto& t : o->targets) o->tc.targets.push_back(parse_reg_target(t, hp));

    const auto mt = build_mt_samples(corpus, o->tc.context, vocab);
    std::vector<ScatSample> scat;
    std::size_t scat_dropped = 0;
    if (!o->scat.empty() && o->tc.regime != Regime::Baseline) {
      for (const auto& ex : parse_scat(std::filesystem::path(o->scat))) {
        try {
          scat.push_back(prepare_scat(ex, o->tc.context, vocab));
        } catch (const ScatError& e) {
          ++scat_dropped;
          std::cerr << "warning: " << e.what() << '\n';
        }
      }
    }

    std::ostringstream log;
    auto on_step = [&](const StepRecord& r) {
      log << to_json_line(r) << '\n';
      if (!o->quiet && (r.step % 50 == 0 || r.step == 1))
        std::cerr << "step " << r.step << " loss_mt " << r.loss_mt << " loss_reg " << r.loss_reg << '\n';
    };
    const TrainConfig effective = o->tc.resolved(hp);
    TrainResult result = train(hp, init, mt, scat, effective, on_step);
    result.checkpoint.vocab = non_reserved(vocab);
    result.checkpoint.context = o->tc.context;

    const std::string bytes = serialize_checkpoint(result.checkpoint);
    atomic_write(o->out, bytes);
    write_report(o->log.empty() ? dir / "train_log.jsonl" : std::filesystem::path(o->log), log.str());

    auto report = report_header(*sub, g);
    nlohmann::json targets = nlohmann::json::array();
    for (const auto& t : effective.targets) targets.push_back(to_string(t, hp));
    report["regime"] = to_string(effective.regime);
    report["lambda"] = effective.lambda;
    report["p_scat"] = effective.p_scat;
    report["targets"] = targets;
    report["context"] = to_string(effective.context);
    report["steps_completed"] = result.log.size();
    report["steps_requested"] = effective.steps;
    report["mt_samples"] = mt.size();
    report["scat_samples"] = scat.size();
    report["scat_dropped"] = scat_dropped;
    report["unusable_scat"] = result.unusable_scat;
    report["vocab_size"] = vocab.size();
    report["parameters"] = parameter_count(hp);
    report["final_loss_mt"] = result.log.empty() ? 0.0 : result.log.back().loss_mt;
    report["diverged"] = result.diverged;
    report["checkpoint"] = o->out;
    report["checkpoint_hash"] = hex64(fnv1a(bytes));
    write_json(dir / "train_report.json", report);
    std::cout << report.dump(2) << '\n';
    if (result.diverged) throw TrainError(result.error + " (last good parameters saved)");
  };
  out.push_back(std::move(cmd));
}

}  // namespace ctxattn::cli
