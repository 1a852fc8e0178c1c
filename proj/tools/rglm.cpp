// Command-line front end: data generation, pretraining, training, evaluation
// and the experiment suites.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rglm/checks.hpp"
#include "rglm/config.hpp"
#include "rglm/error.hpp"
#include "rglm/experiments.hpp"
#include "rglm/gnn.hpp"
#include "rglm/tag.hpp"
#include "rglm/trainer.hpp"

namespace fs = std::filesystem;
using namespace rglm;

namespace {

constexpr int kOk = 0;
constexpr int kConfigFailure = 2;
constexpr int kNumericFailure = 3;
constexpr int kCheckFailure = 4;

struct Invocation {
  std::string config_path;
  ConfigMap map;
};

ConfigMap gather(const Invocation& inv, const std::vector<std::string>& extras) {
  ConfigMap map;
  if (!inv.config_path.empty()) {
    map = load_config_file(inv.config_path);
  }
  const auto rest = apply_overrides(map, extras);
  if (!rest.empty()) {
    throw ConfigError("unexpected argument \"" + rest.front() + "\" (use --key=value)");
  }
  return map;
}

std::string require(ConfigMap& m, const std::string& key) {
  auto v = take(m, key);
  if (!v || v->empty()) {
    throw ConfigError("missing required key " + key);
  }
  return *v;
}

std::string value_or(ConfigMap& m, const std::string& key, const std::string& def) {
  auto v = take(m, key);
  return v ? *v : def;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (double d : parse_double_list("seeds", s)) {
    if (d < 0 || d != std::floor(d)) {
      throw ConfigError("seeds must be nonnegative integers");
    }
    out.push_back(static_cast<std::uint64_t>(d));
  }
  return out;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) {
    fs::create_directories(p.parent_path());
  }
  std::ofstream f(p);
  if (!f) {
    throw ConfigError("cannot write " + p.string());
  }
  return f;
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Split parse_split(const std::string& s) {
  try {
    return split_from_string(s);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

std::optional<GnnEncoder> maybe_encoder(const TrainConfig& cfg) {
  if (cfg.latent_variant() && !cfg.no_pregnn) {
    if (cfg.pregnn.empty()) {
      throw ConfigError(to_string(cfg.variant) + " needs pregnn=<encoder checkpoint>");
    }
    return load_encoder(cfg.pregnn);
  }
  return std::nullopt;
}

int cmd_gen_data(ConfigMap m) {
  SyntheticSpec spec;
  const std::string out = require(m, "out");
  if (auto v = take(m, "nodes")) spec.nodes = parse_size("nodes", *v);
  if (auto v = take(m, "classes")) spec.classes = parse_size("classes", *v);
  if (auto v = take(m, "d_z")) spec.d_z = parse_size("d_z", *v);
  if (auto v = take(m, "intra_p")) spec.intra_p = parse_double("intra_p", *v);
  if (auto v = take(m, "inter_p")) spec.inter_p = parse_double("inter_p", *v);
  if (auto v = take(m, "feature_noise")) spec.feature_noise = parse_double("feature_noise", *v);
  if (auto v = take(m, "seed")) spec.seed = parse_size("seed", *v);
  if (auto v = take(m, "train_frac")) spec.train_frac = parse_double("train_frac", *v);
  if (auto v = take(m, "val_frac")) spec.val_frac = parse_double("val_frac", *v);
  if (auto v = take(m, "name")) spec.name = *v;
  if (auto v = take(m, "class_names")) spec.class_names = split_words(*v);
  if (!m.empty()) {
    throw ConfigError("gen-data: unknown key " + m.begin()->first);
  }
  Tag tag;
  try {
    tag = generate_synthetic_tag(spec);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  save_tag(tag, out);
  std::cout << nlohmann::json{{"out", out},
                              {"nodes", tag.node_count},
                              {"edges", tag.edges.size()},
                              {"classes", tag.meta.num_classes}}
                   .dump()
            << '\n';
  return kOk;
}

int cmd_pretrain(ConfigMap m) {
  const Tag tag = load_tag(require(m, "dataset"));
  const std::string out = require(m, "out");
  GnnConfig gc;
  gc.d_z = tag.meta.d_z;
  gc.num_classes = tag.meta.num_classes;
  PretrainConfig pc;
  if (auto v = take(m, "d_e")) gc.d_e = parse_size("d_e", *v);
  if (auto v = take(m, "n_layers")) gc.n_layers = parse_size("n_layers", *v);
  if (auto v = take(m, "d_label")) gc.d_label = parse_size("d_label", *v);
  if (auto v = take(m, "pe_k")) gc.pe_k = parse_size("pe_k", *v);
  if (auto v = take(m, "rw_steps")) gc.rw_steps = parse_size("rw_steps", *v);
  if (auto v = take(m, "pair_bias")) gc.pair_bias = parse_bool("pair_bias", *v);
  if (auto v = take(m, "mask_ratio")) pc.mask_ratio = parse_double("mask_ratio", *v);
  if (auto v = take(m, "epochs")) pc.epochs = parse_size("epochs", *v);
  if (auto v = take(m, "lr")) pc.lr = parse_double("lr", *v);
  if (auto v = take(m, "warmup")) pc.warmup_frac = parse_double("warmup", *v);
  if (auto v = take(m, "seed")) pc.seed = parse_size("seed", *v);
  if (!m.empty()) {
    throw ConfigError("pretrain-gnn: unknown key " + m.begin()->first);
  }
  PretrainReport rep;
  const GnnEncoder enc = pretrain(tag, gc, pc, &rep);
  save_encoder(enc, out);
  std::cout << nlohmann::json{{"out", out},
                              {"train_accuracy", rep.train_accuracy},
                              {"final_loss", rep.loss.empty() ? 0.0 : rep.loss.back()}}
                   .dump()
            << '\n';
  return kOk;
}

int cmd_train(ConfigMap m) {
  const fs::path out_dir = value_or(m, "out_dir", "run");
  const TrainConfig cfg = TrainConfig::from_map(m);
  if (cfg.dataset.empty()) {
    throw ConfigError("train: dataset not set");
  }
  const Tag tag = load_tag(cfg.dataset);
  const auto enc = maybe_encoder(cfg);
  const Trained t = train(cfg, tag, enc ? &*enc : nullptr);
  fs::create_directories(out_dir);
  write_metrics_csv(out_dir / "metrics.csv", t.metrics);
  save_checkpoint(t, out_dir / "checkpoint.json");
  TrainConfig eval_cfg = cfg;
  eval_cfg.no_pregnn = true;
  const InstructionSet test = prepare_split(eval_cfg, tag, *t.vocab, Split::Test, nullptr);
  const EvalResult ev = evaluate(*t.model, *t.vocab, test);
  const auto summary = run_summary(t, &ev);
  open_out(out_dir / "summary.json") << summary.dump(2) << '\n';
  std::cout << summary.dump() << '\n';
  return kOk;
}

int cmd_eval(ConfigMap m) {
  const Trained t = load_checkpoint(require(m, "checkpoint"));
  TrainConfig cfg = t.cfg;
  const std::string dataset = value_or(m, "dataset", cfg.dataset);
  const Split split = parse_split(value_or(m, "split", "test"));
  if (!m.empty()) {
    throw ConfigError("eval: unknown key " + m.begin()->first);
  }
  const Tag tag = load_tag(dataset);
  cfg.no_pregnn = true;
  const InstructionSet set = prepare_split(cfg, tag, *t.vocab, split, nullptr);
  const EvalResult ev = evaluate(*t.model, *t.vocab, set);
  std::cout << nlohmann::json{{"split", to_string(split)},
                              {"examples", set.examples.size()},
                              {"accuracy", ev.accuracy},
                              {"macro_f1", ev.macro_f1}}
                   .dump()
            << '\n';
  return kOk;
}

int cmd_ablate(ConfigMap m) {
  const std::string out = value_or(m, "out", "ablation");
  const auto seeds = parse_seeds(value_or(m, "seeds", "0,1,2,3,4"));
  const TrainConfig cfg = TrainConfig::from_map(m);
  const Tag tag = load_tag(cfg.dataset);
  const auto enc = maybe_encoder(cfg);
  const auto rows = ablate(cfg, tag, enc ? &*enc : nullptr, seeds);
  auto runs = open_out(out + "_runs.csv");
  write_runs_csv(runs, rows);
  auto sum = open_out(out + "_summary.csv");
  const auto summary = summarize(rows);
  write_summary_csv(sum, summary);
  write_summary_csv(std::cout, summary);
  return kOk;
}

int cmd_sweep(ConfigMap m) {
  const std::string out = value_or(m, "out", "sweep.csv");
  const auto seeds = parse_seeds(value_or(m, "seeds", "0,1,2"));
  SweepGrid grid = SweepGrid::defaults();
  if (auto v = take(m, "grid_lambda_f")) grid.lambda_f = parse_double_list("grid_lambda_f", *v);
  if (auto v = take(m, "grid_lambda_s")) grid.lambda_s = parse_double_list("grid_lambda_s", *v);
  if (auto v = take(m, "grid_lambda_l")) grid.lambda_l = parse_double_list("grid_lambda_l", *v);
  const TrainConfig cfg = TrainConfig::from_map(m);
  const Tag tag = load_tag(cfg.dataset);
  const auto enc = maybe_encoder(cfg);
  const auto rows = sweep(cfg, grid, tag, enc ? &*enc : nullptr, seeds);
  auto f = open_out(out);
  write_runs_csv(f, rows);
  std::cout << nlohmann::json{{"out", out}, {"rows", rows.size()}}.dump() << '\n';
  return kOk;
}

int cmd_mi_verify(ConfigMap m) {
  const std::size_t instances = parse_size("instances", value_or(m, "instances", "1000"));
  const std::uint64_t seed = parse_size("seed", value_or(m, "seed", "0"));
  const std::string kind = value_or(m, "kind", "all");
  const auto out = take(m, "out");
  if (!m.empty()) {
    throw ConfigError("mi-verify: unknown key " + m.begin()->first);
  }
  std::vector<MiSuiteReport> reports;
  if (kind == "all" || kind == "decomposition") {
    reports.push_back(decomposition_suite(instances, seed));
  }
  if (kind == "all" || kind == "upper") {
    reports.push_back(upper_bound_suite(instances, seed + 1));
  }
  if (kind == "all" || kind == "dpi") {
    reports.push_back(dpi_suite(instances, seed + 2));
  }
  if (reports.empty()) {
    throw ConfigError("mi-verify: kind must be all, decomposition, upper or dpi");
  }
  nlohmann::json j;
  j["instances"] = 0;
  j["max_residual"] = 0.0;
  j["min_slack"] = nullptr;
  j["failures"] = nlohmann::json::array();
  j["suites"] = nlohmann::json::array();
  bool ok = true;
  for (const auto& r : reports) {
    j["instances"] = j["instances"].get<std::size_t>() + r.instances;
    j["max_residual"] = std::max(j["max_residual"].get<double>(), r.max_residual);
    if (r.kind != "decomposition") {
      j["min_slack"] = j["min_slack"].is_null()
                           ? r.min_slack
                           : std::min(j["min_slack"].get<double>(), r.min_slack);
    }
    for (const auto& f : r.failures) {
      j["failures"].push_back(r.kind + ": " + f);
    }
    j["suites"].push_back(r.to_json());
    ok = ok && r.ok();
  }
  if (out) {
    open_out(*out) << j.dump(2) << '\n';
  }
  std::cout << j.dump(2) << '\n';
  return ok ? kOk : kCheckFailure;
}

int cmd_grad_check(ConfigMap m) {
  const std::size_t d_model = parse_size("d_model", value_or(m, "d_model", "16"));
  const std::uint64_t seed = parse_size("seed", value_or(m, "seed", "0"));
  const double tol = parse_double("tol", value_or(m, "tol", "1e-4"));
  const auto losses = split_words(value_or(m, "losses", ""));
  if (!m.empty()) {
    throw ConfigError("grad-check: unknown key " + m.begin()->first);
  }
  const auto entries = grad_suite(d_model, seed, losses);
  nlohmann::json j = nlohmann::json::array();
  bool ok = true;
  for (const auto& e : entries) {
    const bool pass = e.max_rel_error <= tol;
    ok = ok && pass;
    j.push_back({{"loss", e.loss},
                 {"max_rel_error", e.max_rel_error},
                 {"worst_param", e.worst_param},
                 {"scalars", e.scalars},
                 {"pass", pass}});
  }
  std::cout << j.dump(2) << '\n';
  return ok ? kOk : kCheckFailure;
}

int cmd_attention(ConfigMap m) {
  const Trained a = load_checkpoint(require(m, "checkpoint_a"));
  const Trained b = load_checkpoint(require(m, "checkpoint_b"));
  const std::string dataset = value_or(m, "dataset", a.cfg.dataset);
  const Split split = parse_split(value_or(m, "split", "test"));
  const std::string out = value_or(m, "out", "attention.csv");
  if (!m.empty()) {
    throw ConfigError("attention-report: unknown key " + m.begin()->first);
  }
  const Tag tag = load_tag(dataset);
  TrainConfig cfg = a.cfg;
  cfg.no_pregnn = true;
  const InstructionSet set = prepare_split(cfg, tag, *a.vocab, split, nullptr);
  const AttentionReport rep = attention_report(*a.model, *b.model, set);
  auto f = open_out(out);
  write_attention_csv(f, rep);
  std::cout << nlohmann::json{{"out", out},
                              {"examples", rep.rows.size()},
                              {"a_mean_mass", rep.a_mean},
                              {"b_mean_mass", rep.b_mean}}
                   .dump()
            << '\n';
  return kOk;
}

int cmd_timing(ConfigMap m) {
  const auto variants = split_words(value_or(m, "variants", "vanilla,decoder,similarizer,denoiser"));
  const std::size_t repeats = parse_size("repeats", value_or(m, "repeats", "3"));
  const std::string out = value_or(m, "out", "timing.csv");
  const TrainConfig base = TrainConfig::from_map(m);
  const Tag tag = load_tag(base.dataset);
  std::vector<std::pair<std::string, TrainConfig>> cfgs;
  bool need_encoder = false;
  for (const auto& v : variants) {
    TrainConfig c = base;
    c.variant = variant_from_string(v);
    need_encoder = need_encoder || (c.latent_variant() && !c.no_pregnn);
    cfgs.emplace_back(v, c);
  }
  std::optional<GnnEncoder> enc;
  if (need_encoder) {
    if (base.pregnn.empty()) {
      throw ConfigError("timing-report: latent variants need pregnn=<encoder checkpoint>");
    }
    enc.emplace(load_encoder(base.pregnn));
  }
  const auto rows = timing_report(cfgs, tag, enc ? &*enc : nullptr, repeats);
  auto f = open_out(out);
  write_timing_csv(f, rows);
  write_timing_csv(std::cout, rows);
  return kOk;
}

int cmd_cross_eval(ConfigMap m) {
  const Trained t = load_checkpoint(require(m, "checkpoint"));
  const Tag target = load_tag(require(m, "target"));
  if (!m.empty()) {
    throw ConfigError("cross-eval: unknown key " + m.begin()->first);
  }
  const EvalResult ev = cross_dataset_eval(t, target);
  std::cout << nlohmann::json{{"target", target.meta.name},
                              {"accuracy", ev.accuracy},
                              {"macro_f1", ev.macro_f1}}
                   .dump()
            << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reconstructive graph instruction tuning at desk scale"};
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    int (*run)(ConfigMap);
  };
  const Command commands[] = {
      {"gen-data", "generate a synthetic block-model graph", cmd_gen_data},
      {"pretrain-gnn", "pre-train the latent-target graph encoder", cmd_pretrain},
      {"train", "train one model and write metrics, checkpoint and summary", cmd_train},
      {"eval", "evaluate a checkpoint on a split", cmd_eval},
      {"ablate", "run the ablation matrix over seeds", cmd_ablate},
      {"sweep", "sweep reconstruction loss weights", cmd_sweep},
      {"mi-verify", "check the exact information identities", cmd_mi_verify},
      {"grad-check", "finite-difference check of every loss", cmd_grad_check},
      {"attention-report", "compare last-token attention on graph tokens", cmd_attention},
      {"timing-report", "seconds per epoch and peak tensor memory per variant", cmd_timing},
      {"cross-eval", "evaluate a checkpoint on another graph", cmd_cross_eval},
  };

  Invocation inv;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->allow_extras();
    sub->add_option("config", inv.config_path, "key=value config file");
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigFailure;
  }

  try {
    for (const auto& [sub, cmd] : subs) {
      if (sub->parsed()) {
        return cmd->run(gather(inv, sub->remaining()));
      }
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
