#include "rglm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>

#include "rglm/error.hpp"
#include "rglm/ops.hpp"
#include "rglm/optim.hpp"

namespace rglm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::map<std::string, std::vector<double>> snapshot(const std::vector<Parameter>& ps) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& p : ps) {
    const auto v = p.tensor.values();
    out[p.name].assign(v.begin(), v.end());
  }
  return out;
}

void restore(const std::vector<Parameter>& ps,
             const std::map<std::string, std::vector<double>>& snap) {
  for (const auto& p : ps) {
    auto it = snap.find(p.name);
    if (it == snap.end()) {
      throw ParseError("checkpoint lacks parameter " + p.name);
    }
    Tensor t = p.tensor;
    auto dst = t.mutable_values();
    if (dst.size() != it->second.size()) {
      throw ParseError("checkpoint parameter " + p.name + " has the wrong size");
    }
    std::copy(it->second.begin(), it->second.end(), dst.begin());
  }
}

std::optional<std::size_t> parse_answer(const Vocabulary& vocab, Task task, std::size_t token) {
  const std::string& w = vocab.word(token);
  if (task == Task::LinkPrediction) {
    if (w == "yes") return 1;
    if (w == "no") return 0;
    return std::nullopt;
  }
  const auto& names = vocab.class_names();
  auto it = std::find(names.begin(), names.end(), w);
  if (it == names.end()) {
    return std::nullopt;
  }
  return static_cast<std::size_t>(it - names.begin());
}

}  // namespace

void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> records) {
  out << kMetricsHeader << '\n';
  const auto old = out.precision(12);
  for (const auto& r : records) {
    out << r.epoch << ',' << r.step << ',' << r.loss_text << ',' << r.loss_graph << ','
        << r.loss_total << ',' << r.bound_report << ',' << r.val_acc << ',' << r.val_f1 << ','
        << r.wall_time_s << '\n';
  }
  out.precision(old);
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records) {
  std::ofstream f(path);
  if (!f) {
    throw ConfigError("cannot write " + path.string());
  }
  write_metrics_csv(f, records);
}

double accuracy(std::span<const std::size_t> truth,
                std::span<const std::optional<std::size_t>> predicted) {
  if (truth.size() != predicted.size()) {
    throw DimensionError("accuracy: truth and predictions differ in length");
  }
  if (truth.empty()) {
    throw UsageError("accuracy: empty split");
  }
  std::size_t ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ok += predicted[i] && *predicted[i] == truth[i];
  }
  return static_cast<double>(ok) / static_cast<double>(truth.size());
}

double macro_f1(std::span<const std::size_t> truth,
                std::span<const std::optional<std::size_t>> predicted) {
  if (truth.size() != predicted.size()) {
    throw DimensionError("macro_f1: truth and predictions differ in length");
  }
  if (truth.empty()) {
    throw UsageError("macro_f1: empty split");
  }
  std::set<std::size_t> classes(truth.begin(), truth.end());
  for (const auto& p : predicted) {
    if (p) classes.insert(*p);
  }
  double total = 0.0;
  for (std::size_t c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool pc = predicted[i] && *predicted[i] == c;
      if (pc && truth[i] == c) ++tp;
      else if (pc) ++fp;
      else if (truth[i] == c) ++fn;
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    total += denom > 0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
  }
  return total / static_cast<double>(classes.size());
}

EvalResult evaluate(const LmModel& model, const Vocabulary& vocab, const InstructionSet& set) {
  if (set.examples.empty()) {
    throw UsageError("evaluate: empty " + to_string(set.split) + " split");
  }
  EvalResult r;
  for (const auto& ex : set.examples) {
    const auto out = greedy_decode(model, ex.seq, ex.ins.prompt, ex.ins.label.size());
    std::optional<std::size_t> pred;
    // Multi-token labels must match exactly.
    if (out == ex.ins.label) {
      pred = ex.answer;
    } else if (out.size() == 1) {
      pred = parse_answer(vocab, set.task, out[0]);
    }
    r.truth.push_back(ex.answer);
    r.predicted.push_back(pred);
  }
  r.accuracy = accuracy(r.truth, r.predicted);
  r.macro_f1 = macro_f1(r.truth, r.predicted);
  return r;
}

LmModel make_model(const TrainConfig& cfg, std::size_t vocab_size, std::size_t d_z, Rng& rng) {
  LmConfig lm = cfg.lm;
  lm.vocab_size = vocab_size;
  lm.d_z = d_z;
  return LmModel(lm, rng);
}

ReconHeads make_heads(const TrainConfig& cfg, std::size_t d_z, std::size_t d_e, Rng& rng) {
  ReconHeads heads;
  const std::size_t d = cfg.lm.d_model;
  switch (cfg.variant) {
    case Variant::Vanilla:
      break;
    case Variant::Decoder:
      heads.decoder = DecoderHead::create(d, d_z, cfg.head_hidden, cfg.head_proj,
                                          cfg.effective_lambda_f(), cfg.effective_lambda_s(), rng);
      break;
    case Variant::Similarizer:
      heads.similarizer = SimilarizerHead::create(d, d_e, cfg.head_hidden, cfg.lambda_l, rng);
      heads.similarizer->whole_matrix = cfg.sim_whole_matrix;
      break;
    case Variant::Denoiser: {
      DenoiserHead::Config dc;
      dc.d_model = d;
      dc.d_e = d_e;
      dc.d_hidden = cfg.denoiser_hidden;
      dc.n_blocks = cfg.denoiser_blocks;
      dc.n_heads = cfg.denoiser_heads;
      heads.denoiser.emplace(dc, NoiseSchedule::linear(cfg.diffusion_steps), cfg.lambda_l, rng);
      break;
    }
  }
  return heads;
}

InstructionSet prepare_split(const TrainConfig& cfg, const Tag& tag, const Vocabulary& vocab,
                             Split split, const GnnEncoder* encoder) {
  // Each split gets its own stream so adding examples to one leaves the
  // others unchanged.
  const std::uint64_t seed = cfg.seed * 7919 + static_cast<std::uint64_t>(split) + 1;
  InstructionSet set = build_instructions(tag, cfg.task, split, cfg.ndt, vocab, seed);
  if (cfg.latent_variant()) {
    if (cfg.no_pregnn) {
      attach_raw_latents(set);
    } else {
      if (!encoder) {
        throw ConfigError(to_string(cfg.variant) + " needs a pre-trained encoder");
      }
      attach_latents(set, *encoder);
    }
  }
  return set;
}

Trained train(const TrainConfig& cfg, const Tag& tag, const GnnEncoder* encoder,
              const EpochHook& hook) {
  cfg.validate();
  if (cfg.latent_variant() && !cfg.no_pregnn && !encoder) {
    throw ConfigError(to_string(cfg.variant) + " needs a pre-trained encoder");
  }
  if (encoder && cfg.latent_variant() && !cfg.no_pregnn && encoder->config().d_z != tag.meta.d_z) {
    throw ConfigError("encoder feature width differs from the dataset's");
  }
  const auto t0 = Clock::now();
  reset_tensor_peak_bytes();

  Trained out;
  out.cfg = cfg;
  out.vocab = std::make_shared<Vocabulary>(class_names_of(tag));
  const InstructionSet train_set = prepare_split(cfg, tag, *out.vocab, Split::Train, encoder);
  const InstructionSet val_set = prepare_split(cfg, tag, *out.vocab, Split::Val, encoder);
  if (train_set.examples.empty()) {
    throw ConfigError("no training examples");
  }

  Rng root(cfg.seed);
  Rng init_rng = root.split();
  Rng order_rng = root.split();
  Rng loss_rng = root.split();

  const std::size_t d_z = tag.meta.d_z;
  std::size_t d_e = d_z;
  if (cfg.latent_variant() && !cfg.no_pregnn) {
    d_e = encoder->config().d_e;
  }
  out.model = std::make_unique<LmModel>(make_model(cfg, out.vocab->size(), d_z, init_rng));
  out.heads = make_heads(cfg, d_z, d_e, init_rng);
  LmModel& model = *out.model;

  std::vector<Parameter> trainable = model.trainable_params();
  const auto head_params = out.heads.params();
  trainable.insert(trainable.end(), head_params.begin(), head_params.end());
  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.weight_decay = cfg.weight_decay;
  Adam opt(trainable, ac);

  std::vector<std::size_t> order;
  for (std::size_t r = 0; r < cfg.replicate; ++r) {
    for (std::size_t i = 0; i < train_set.examples.size(); ++i) {
      order.push_back(i);
    }
  }
  const std::size_t per_epoch = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = std::max<std::size_t>(1, per_epoch * cfg.epochs);

  auto all_params = model.params().params();
  all_params.insert(all_params.end(), head_params.begin(), head_params.end());
  auto best = snapshot(all_params);
  if (hook) {
    hook(0, model, out.heads);
  }

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    MetricsRecord rec;
    rec.epoch = epoch;
    double n_seen = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(end - b);
      model.params().zero_grad();
      opt.zero_grad();
      for (std::size_t k = b; k < end; ++k) {
        const Example& ex = train_set.examples[order[k]];
        const ForwardResult fr = model.forward(ex.seq, ex.ins.text_tokens());
        const Tensor lt = text_loss(fr.logits, ex.ins, fr.n_prefix);
        GraphLoss gl;
        gl.total = Tensor::scalar(0.0);
        if (cfg.variant != Variant::Vanilla) {
          gl = graph_loss(cfg.variant, out.heads, aggregate_h(fr.s_graph, ex.seq), ex.targets,
                          loss_rng);
        }
        Tensor total;
        try {
          total = combined_loss(lt, gl.total);
        } catch (const NumericError& e) {
          throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step) + ", example " +
                             std::to_string(ex.id));
        }
        scale(total, inv).backward();
        rec.loss_text += lt.item();
        rec.loss_graph += gl.total.item();
        rec.feat += gl.feat;
        rec.topo += gl.topo;
        rec.sim += gl.sim;
        rec.diff += gl.diff;
        n_seen += 1.0;
      }
      opt.step(lr_multiplier(step, total_steps, cfg.warmup_frac, cfg.cosine));
      ++step;
    }
    rec.step = step;
    for (double* v : {&rec.loss_text, &rec.loss_graph, &rec.feat, &rec.topo, &rec.sim, &rec.diff}) {
      *v /= n_seen;
    }
    rec.loss_total = rec.loss_text + rec.loss_graph;
    BoundInputs bi;
    bi.feat = rec.feat;
    bi.topo = rec.topo;
    bi.sim = rec.sim;
    bi.diff = rec.diff;
    bi.lambda_f = cfg.effective_lambda_f();
    bi.lambda_s = cfg.effective_lambda_s();
    bi.lambda_l = cfg.lambda_l;
    rec.bound_report = report_lower_bound(cfg.variant, bi).value;
    if (!val_set.examples.empty()) {
      const EvalResult ev = evaluate(model, *out.vocab, val_set);
      rec.val_acc = ev.accuracy;
      rec.val_f1 = ev.macro_f1;
    }
    if (rec.val_acc > out.best_val_acc) {
      out.best_val_acc = rec.val_acc;
      out.best_epoch = epoch;
      best = snapshot(all_params);
    }
    rec.wall_time_s = seconds_since(t0);
    rec.peak_bytes = tensor_peak_bytes();
    out.metrics.push_back(rec);
    if (hook) {
      hook(epoch + 1, model, out.heads);
    }
  }
  restore(all_params, best);
  out.seconds = seconds_since(t0);
  return out;
}

Trained train(const TrainConfig& cfg) {
  if (cfg.dataset.empty()) {
    throw ConfigError("dataset path not set");
  }
  const Tag tag = load_tag(cfg.dataset);
  std::optional<GnnEncoder> enc;
  if (cfg.latent_variant() && !cfg.no_pregnn) {
    if (cfg.pregnn.empty()) {
      throw ConfigError(to_string(cfg.variant) + " needs pregnn=<encoder checkpoint>");
    }
    enc.emplace(load_encoder(cfg.pregnn));
  }
  return train(cfg, tag, enc ? &*enc : nullptr);
}

void save_checkpoint(const Trained& t, const std::filesystem::path& path) {
  nlohmann::json heads = nlohmann::json::object();
  for (const auto& p : t.heads.params()) {
    const auto v = p.tensor.values();
    heads[p.name] = {{"shape", {p.tensor.rows(), p.tensor.cols()}},
                     {"values", std::vector<double>(v.begin(), v.end())}};
  }
  nlohmann::json j{{"config", t.cfg.to_map()},
                   {"lm", t.model->config().to_json()},
                   {"class_names", t.vocab->class_names()},
                   {"params", t.model->params().to_json()},
                   {"heads", heads},
                   {"best_epoch", t.best_epoch},
                   {"best_val_acc", t.best_val_acc}};
  if (t.heads.denoiser) {
    j["latent_width"] = t.heads.denoiser->config().d_e;
  } else if (t.heads.similarizer) {
    j["latent_width"] = t.heads.similarizer->proj.w2.cols();
  }
  std::ofstream f(path);
  if (!f) {
    throw ConfigError("cannot write " + path.string());
  }
  f << j.dump() << '\n';
}

Trained load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) {
    throw ConfigError("cannot read checkpoint " + path.string());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  Trained t;
  try {
    t.cfg = TrainConfig::from_map(j.at("config").get<ConfigMap>());
    t.vocab = std::make_shared<Vocabulary>(j.at("class_names").get<std::vector<std::string>>());
    const LmConfig lm = LmConfig::from_json(j.at("lm"));
    Rng rng(0);
    t.model = std::make_unique<LmModel>(lm, rng);
    t.model->params().load_json(j.at("params"));
    const std::size_t d_e = j.value("latent_width", lm.d_z);
    t.heads = make_heads(t.cfg, lm.d_z, d_e, rng);
    std::map<std::string, std::vector<double>> snap;
    for (const auto& [name, rec] : j.at("heads").items()) {
      snap[name] = rec.at("values").get<std::vector<double>>();
    }
    restore(t.heads.params(), snap);
    t.best_epoch = j.value("best_epoch", std::size_t{0});
    t.best_val_acc = j.value("best_val_acc", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return t;
}

nlohmann::json run_summary(const Trained& t, const EvalResult* test) {
  nlohmann::json j{{"config", t.cfg.to_map()},
                   {"best_epoch", t.best_epoch},
                   {"best_val_acc", t.best_val_acc},
                   {"seconds", t.seconds},
                   {"epochs", t.metrics.size()}};
  if (!t.metrics.empty()) {
    const auto& last = t.metrics.back();
    j["final"] = {{"loss_text", last.loss_text},
                  {"loss_graph", last.loss_graph},
                  {"loss_total", last.loss_total},
                  {"bound_report", last.bound_report},
                  {"bound_constants", "C=0, kappa=1 (relative tracking only)"},
                  {"peak_tensor_bytes", last.peak_bytes}};
  }
  if (test) {
    j["test"] = {{"accuracy", test->accuracy}, {"macro_f1", test->macro_f1}};
  }
  return j;
}

}  // namespace rglm
