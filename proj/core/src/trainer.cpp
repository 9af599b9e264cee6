#include "ctxattn/trainer.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

namespace ctxattn {

// ---------------------------------------------------------------- config

RegTarget parse_reg_target(const std::string& spec, const Hyperparams& hp) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.size() < 2 || parts.size() > 3) throw TrainError("bad regularization target '" + spec + "'");
  RegTarget t;
  try {
    t.type = parse_attention_type(parts[0]);
  } catch (const ScatError& e) {
    throw TrainError(e.what());
  }
  const std::size_t layers = t.type == AttentionType::EncSelf ? hp.n_enc : hp.n_dec;
  if (parts[1] == "top") {
    t.layer = layers - 1;
  } else if (parts[1] == "bottom") {
    t.layer = 0;
  } else {
    std::size_t idx = 0;
    try {
      idx = std::stoul(parts[1]);
    } catch (const std::exception&) {
      throw TrainError("bad layer '" + parts[1] + "' in regularization target '" + spec + "'");
    }
    if (idx < 1 || idx > layers) throw TrainError("layer out of range in regularization target '" + spec + "'");
    t.layer = idx - 1;
  }
  if (parts.size() == 3) {
    if (parts[2] == "first") {
      t.heads = HeadSelection::First;
    } else if (parts[2] == "avg" || parts[2] == "average") {
      t.heads = HeadSelection::Average;
    } else {
      throw TrainError("bad head selection '" + parts[2] + "'");
    }
  }
  return t;
}

std::string to_string(const RegTarget& t, const Hyperparams&) {
  return to_string(t.type) + ":" + std::to_string(t.layer + 1) + ":" +
         (t.heads == HeadSelection::First ? "first" : "avg");
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::Baseline: return "baseline";
    case Regime::AttnRegRand: return "attnreg-rand";
    case Regime::AttnRegPre: return "attnreg-pre";
  }
  return "?";
}

Regime parse_regime(const std::string& s) {
  if (s == "baseline") return Regime::Baseline;
  if (s == "attnreg-rand") return Regime::AttnRegRand;
  if (s == "attnreg-pre") return Regime::AttnRegPre;
  throw TrainError("unknown regime '" + s + "'");
}

std::vector<RegTarget> default_targets(Regime regime, const Hyperparams& hp) {
  switch (regime) {
    case Regime::Baseline: return {};
    case Regime::AttnRegRand:
      return {{AttentionType::EncSelf, hp.n_enc - 1, HeadSelection::First},
              {AttentionType::DecCross, hp.n_dec - 1, HeadSelection::First},
              {AttentionType::DecSelf, 0, HeadSelection::First}};
    case Regime::AttnRegPre: return {{AttentionType::DecSelf, hp.n_dec - 1, HeadSelection::First}};
  }
  return {};
}

TrainConfig TrainConfig::resolved(const Hyperparams& hp) const {
  TrainConfig c = *this;
  if (c.regime == Regime::Baseline) {
    c.lambda = 0.0;
    c.p_scat = 0.0;
    c.targets.clear();
  } else if (c.targets.empty()) {
    c.targets = default_targets(c.regime, hp);
  }
  return c;
}

void TrainConfig::validate(const Hyperparams& hp) const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw TrainError("lambda must be >= 0");
  if (!(p_scat >= 0.0 && p_scat <= 1.0)) throw TrainError("p_scat must lie in [0, 1]");
  if (batch_size < 1) throw TrainError("batch_size must be >= 1");
  if (warmup < 1) throw TrainError("warmup must be >= 1");
  if (!(lr_scale > 0.0)) throw TrainError("lr_scale must be > 0");
  if (!(epsilon >= 0.0 && epsilon < 1e-2)) throw TrainError("epsilon must lie in [0, 0.01)");
  for (const auto& t : targets) {
    const std::size_t layers = t.type == AttentionType::EncSelf ? hp.n_enc : hp.n_dec;
    if (t.layer >= layers) throw TrainError("targets: layer out of range for " + to_string(t.type));
  }
}

// ---------------------------------------------------------------- optimizer

double lr_at_step(std::size_t step, std::size_t d_model, std::size_t warmup) {
  if (step == 0) throw TrainError("learning rate undefined at step 0");
  if (d_model == 0 || warmup == 0) throw TrainError("d_model and warmup must be positive");
  const double s = static_cast<double>(step);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(static_cast<double>(warmup), -1.5));
}

AdamState make_adam_state(const Parameters& params) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(Parameters& params, const Parameters& grads, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw TrainError("optimizer shapes do not match parameters");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& g = grads.tensors[i];
    if (g.rows() != params.tensors[i].rows() || g.cols() != params.tensors[i].cols())
      throw TrainError("gradient shape mismatch for " + params.names[i]);
    if (!g.allFinite()) throw TrainError("non-finite gradient in " + params.names[i]);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m.tensors[i];
    auto& v = state.v.tensors[i];
    const auto& g = grads.tensors[i];
    m = beta1 * m + (1.0 - beta1) * g;
    v.array() = beta2 * v.array() + (1.0 - beta2) * g.array().square();
    params.tensors[i].array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------- regularizer

ScatSample prepare_scat(const ScatExample& ex, const ContextConfig& cfg, const Vocabulary& vocab) {
  ScatSample s;
  s.id = ex.id;
  s.src = scat_sequence(ex, Side::Source, cfg, vocab);
  s.tgt = scat_sequence(ex, Side::Target, cfg, vocab);
  s.src_query = pronoun_position(ex, Side::Source, cfg);
  s.tgt_query = pronoun_position(ex, Side::Target, cfg);
  s.human_src = human_vector(ex, Side::Source, cfg, vocab);
  s.human_tgt = human_vector(ex, Side::Target, cfg, vocab);
  return s;
}

std::optional<RegRow> resolve_reg_row(const ScatSample& s, AttentionType type, double epsilon) {
  const std::size_t query = type == AttentionType::EncSelf ? s.src_query : s.tgt_query;
  try {
    auto projected = project_to_keyspace(s.human_src, s.human_tgt, type, query);
    RegRow row;
    row.query = query;
    row.length = projected.size();
    row.human = normalize_human(projected, epsilon);
    return row;
  } catch (const NoHighlightsError&) {
    return std::nullopt;
  }
}

double attnreg_loss(const ForwardTrace& trace, const ScatSample& s, std::span<const RegTarget> targets,
                    double epsilon) {
  double total = 0.0;
  bool usable = false;
  for (const auto& t : targets) {
    const auto row = resolve_reg_row(s, t.type, epsilon);
    if (!row) continue;
    usable = true;
    const auto& layer = trace.attention(t.type).at(t.layer);
    const std::size_t used = t.heads == HeadSelection::First ? 1 : layer.size();
    std::vector<double> model_row(row->length, 0.0);
    for (std::size_t h = 0; h < used; ++h)
      for (std::size_t k = 0; k < row->length; ++k)
        model_row[k] += layer[h](static_cast<ad::Index>(row->query), static_cast<ad::Index>(k)) /
                        static_cast<double>(used);
    total += ad::kl_value(row->human.probs, model_row) / static_cast<double>(row->length);
  }
  if (!usable) throw ScatError("unusable SCAT example");
  return total;
}

ad::Var attnreg_loss(ForwardGraph& graph, const ScatSample& s, std::span<const RegTarget> targets,
                     double epsilon) {
  std::vector<ad::Var> terms;
  for (const auto& t : targets) {
    const auto row = resolve_reg_row(s, t.type, epsilon);
    if (!row) continue;
    const auto& layer = graph.attention(t.type).at(t.layer);
    std::vector<ad::Var> heads = t.heads == HeadSelection::First ? std::vector<ad::Var>{layer.front()} : layer;
    ad::Var model_row = ad::mean_row_prefix(heads, static_cast<ad::Index>(row->query),
                                            static_cast<ad::Index>(row->length));
    terms.push_back(ad::scale(ad::kl_divergence(row->human.probs, model_row), 1.0 / static_cast<double>(row->length)));
  }
  if (terms.empty()) throw ScatError("unusable SCAT example");
  return ad::sum_scalars(terms);
}

// ---------------------------------------------------------------- training

std::vector<MtSample> build_mt_samples(const std::vector<ParallelDocument>& corpus, const ContextConfig& cfg,
                                       const Vocabulary& vocab) {
  std::vector<MtSample> out;
  for (const auto& doc : corpus) {
    for (std::size_t j = 0; j < doc.size(); ++j) {
      auto [src, tgt] = concat_context(doc, j, cfg, vocab);
      if (src.empty()) continue;
      out.push_back({std::move(src), std::move(tgt)});
    }
  }
  return out;
}

std::string to_json_line(const StepRecord& r) {
  nlohmann::json j = {{"step", r.step},
                      {"lr", r.lr},
                      {"batch", r.scat_batch ? "scat" : "mt"},
                      {"loss_mt", r.loss_mt},
                      {"loss_reg", r.loss_reg},
                      {"total", r.total}};
  return j.dump();
}

TrainResult train(const Hyperparams& hp, const std::optional<Checkpoint>& init, std::span<const MtSample> mt,
                  std::span<const ScatSample> scat, const TrainConfig& config,
                  const std::function<void(const StepRecord&)>& on_step) {
  const TrainConfig cfg = config.resolved(hp);
  cfg.validate(hp);
  if (cfg.regime == Regime::AttnRegPre && !init) throw TrainError("attnreg-pre requires a pretrained checkpoint");
  if (mt.empty()) throw TrainError("empty MT dataset");
  if (cfg.p_scat > 0.0 && scat.empty()) throw TrainError("empty SCAT dataset with p_scat > 0");

  Transformer model = init ? init->model() : Transformer(hp, cfg.seed);
  if (init && !(init->hyperparams == hp)) throw TrainError("checkpoint hyperparameters differ from the config");
  AdamState adam = make_adam_state(model.parameters());
  std::mt19937_64 data_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  TrainResult result;
  Parameters grads = model.parameters().zeros_like();
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);

  auto finish = [&](const Transformer& m) {
    result.checkpoint = Checkpoint::capture(m, cfg.seed);
    result.checkpoint.optimizer = adam;
    std::ostringstream rs;
    rs << data_rng;
    result.checkpoint.rng_state = rs.str();
    result.checkpoint.context = cfg.context;
  };

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const bool scat_batch = coin(data_rng) < cfg.p_scat;
    grads.set_zero();
    StepRecord rec;
    rec.step = step;
    rec.scat_batch = scat_batch;
    bool bad = false;
    for (std::size_t b = 0; b < cfg.batch_size && !bad; ++b) {
      const auto& pool_size = scat_batch ? scat.size() : mt.size();
      std::uniform_int_distribution<std::size_t> pick(0, pool_size - 1);
      const std::size_t idx = pick(data_rng);
      const TokenSeq& src = scat_batch ? scat[idx].src : mt[idx].src;
      const TokenSeq& tgt = scat_batch ? scat[idx].tgt : mt[idx].tgt;
      auto g = model.build(src, tgt, Mode::Train, &dropout_rng, &grads);
      ad::Var loss = loss_mt(*g, full_output_span(tgt), hp.label_smoothing);
      const double mt_value = loss.scalar();
      double reg_value = 0.0;
      if (scat_batch && !cfg.targets.empty()) {
        try {
          ad::Var reg = attnreg_loss(*g, scat[idx], cfg.targets, cfg.epsilon);
          reg_value = reg.scalar();
          if (cfg.lambda > 0.0) loss = ad::add(loss, ad::scale(reg, cfg.lambda));
        } catch (const ScatError&) {
          ++result.unusable_scat;
        }
      }
      rec.loss_mt += mt_value * inv_batch;
      rec.loss_reg += reg_value * inv_batch;
      if (!std::isfinite(loss.scalar())) {
        bad = true;
        break;
      }
      g->tape.backward(loss, inv_batch);
    }
    rec.total = rec.loss_mt + cfg.lambda * rec.loss_reg;
    rec.lr = cfg.lr_scale * lr_at_step(step, hp.d_model, cfg.warmup);
    if (bad || !std::isfinite(rec.total)) {
      result.diverged = true;
      result.error = "non-finite loss at step " + std::to_string(step);
      break;
    }
    try {
      adam_step(model.parameters(), grads, adam, rec.lr);
    } catch (const TrainError& e) {
      result.diverged = true;
      result.error = std::string(e.what()) + " at step " + std::to_string(step);
      break;
    }
    result.log.push_back(rec);
    if (on_step) on_step(rec);
  }
  finish(model);
  return result;
}

}  // namespace ctxattn
