#include "rglm/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <ostream>

#include "rglm/error.hpp"
#include "rglm/ops.hpp"

namespace rglm {

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) {
    return {0.0, 0.0};
  }
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  s = v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
  return {m, s};
}

}  // namespace

RunResult run_once(const std::string& setting, const TrainConfig& cfg, const Tag& tag,
                   const GnnEncoder* encoder) {
  RunResult r;
  r.setting = setting;
  r.cfg = cfg;
  const Trained t = train(cfg, tag, encoder);
  TrainConfig eval_cfg = cfg;
  eval_cfg.no_pregnn = true;  // evaluation reads no latents
  const InstructionSet test = prepare_split(eval_cfg, tag, *t.vocab, Split::Test, nullptr);
  r.test = evaluate(*t.model, *t.vocab, test);
  r.seconds = t.seconds;
  return r;
}

std::vector<RunResult> ablate(const TrainConfig& base, const Tag& tag, const GnnEncoder* encoder,
                              std::span<const std::uint64_t> seeds) {
  std::vector<std::pair<std::string, TrainConfig>> settings;
  TrainConfig vanilla = base;
  vanilla.variant = Variant::Vanilla;
  vanilla.no_feat = vanilla.no_topo = vanilla.no_pregnn = false;
  settings.emplace_back("vanilla", vanilla);
  if (base.variant != Variant::Vanilla) {
    TrainConfig full = base;
    full.no_feat = full.no_topo = full.no_pregnn = false;
    settings.emplace_back("full", full);
    if (base.variant == Variant::Decoder) {
      TrainConfig nf = full;
      nf.no_feat = true;
      settings.emplace_back("no_feat", nf);
      TrainConfig nt = full;
      nt.no_topo = true;
      settings.emplace_back("no_topo", nt);
    } else {
      TrainConfig np = full;
      np.no_pregnn = true;
      settings.emplace_back("no_pregnn", np);
    }
  }
  std::vector<RunResult> rows;
  for (const auto& [name, cfg] : settings) {
    for (std::uint64_t seed : seeds) {
      TrainConfig c = cfg;
      c.seed = seed;
      rows.push_back(run_once(name, c, tag, encoder));
    }
  }
  return rows;
}

SweepGrid SweepGrid::defaults() {
  SweepGrid g;
  g.lambda_f = {0.1, 0.2, 0.4, 0.6, 0.8, 1.0};
  g.lambda_s = {1, 2, 4, 6, 8, 10};
  for (int i = 1; i <= 10; ++i) {
    g.lambda_l.push_back(0.2 * i);
  }
  return g;
}

std::vector<RunResult> sweep(const TrainConfig& base, const SweepGrid& grid, const Tag& tag,
                             const GnnEncoder* encoder, std::span<const std::uint64_t> seeds) {
  std::vector<TrainConfig> points;
  if (base.variant == Variant::Decoder) {
    if (grid.lambda_f.empty() || grid.lambda_s.empty()) {
      throw ConfigError("sweep: decoder grid needs lambda_f and lambda_s values");
    }
    for (double f : grid.lambda_f) {
      for (double s : grid.lambda_s) {
        TrainConfig c = base;
        c.lambda_f = f;
        c.lambda_s = s;
        points.push_back(c);
      }
    }
  } else if (base.latent_variant()) {
    if (grid.lambda_l.empty()) {
      throw ConfigError("sweep: latent grid needs lambda_l values");
    }
    for (double l : grid.lambda_l) {
      TrainConfig c = base;
      c.lambda_l = l;
      points.push_back(c);
    }
  } else {
    throw ConfigError("sweep: vanilla has no loss weights to sweep");
  }
  if (seeds.empty()) {
    throw ConfigError("sweep: no seeds");
  }
  std::vector<RunResult> rows;
  for (const auto& p : points) {
    for (std::uint64_t seed : seeds) {
      TrainConfig c = p;
      c.seed = seed;
      rows.push_back(run_once("sweep", c, tag, encoder));
    }
  }
  return rows;
}

void write_runs_csv(std::ostream& out, std::span<const RunResult> rows) {
  out << kRunsHeader << '\n';
  const auto old = out.precision(12);
  for (const auto& r : rows) {
    const auto& c = r.cfg;
    out << r.setting << ',' << to_string(c.variant) << ',' << c.seed << ','
        << c.effective_lambda_f() << ',' << c.effective_lambda_s() << ',' << c.lambda_l << ','
        << c.no_feat << ',' << c.no_topo << ',' << c.no_pregnn << ',' << r.test.accuracy << ','
        << r.test.macro_f1 << ',' << r.seconds << '\n';
  }
  out.precision(old);
}

std::vector<SettingSummary> summarize(std::span<const RunResult> rows) {
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>>
      groups;
  for (const auto& r : rows) {
    const auto key = std::make_pair(to_string(r.cfg.variant), r.setting);
    if (!groups.contains(key)) {
      keys.push_back(key);
    }
    groups[key].first.push_back(r.test.accuracy);
    groups[key].second.push_back(r.test.macro_f1);
  }
  std::vector<SettingSummary> out;
  for (const auto& key : keys) {
    const auto& [acc, f1] = groups[key];
    SettingSummary s;
    s.variant = key.first;
    s.setting = key.second;
    s.runs = acc.size();
    std::tie(s.acc_mean, s.acc_std) = mean_std(acc);
    std::tie(s.f1_mean, s.f1_std) = mean_std(f1);
    out.push_back(s);
  }
  return out;
}

void write_summary_csv(std::ostream& out, std::span<const SettingSummary> rows) {
  out << "variant,setting,runs,acc_mean,acc_std,f1_mean,f1_std\n";
  const auto old = out.precision(6);
  for (const auto& s : rows) {
    out << s.variant << ',' << s.setting << ',' << s.runs << ',' << s.acc_mean << ','
        << s.acc_std << ',' << s.f1_mean << ',' << s.f1_std << '\n';
  }
  out.precision(old);
}

AttentionReport attention_report(const LmModel& a, const LmModel& b, const InstructionSet& set) {
  AttentionReport rep;
  for (const auto& ex : set.examples) {
    const AttentionProbe pa = attention_probe(a, ex.seq, ex.ins.prompt);
    const AttentionProbe pb = attention_probe(b, ex.seq, ex.ins.prompt);
    AttentionRow r;
    r.example_id = ex.id;
    r.a_mass = pa.graph_mass;
    r.b_mass = pb.graph_mass;
    r.a_log = std::log(std::max(pa.graph_mass, 1e-300));
    r.b_log = std::log(std::max(pb.graph_mass, 1e-300));
    rep.a_mean += r.a_mass;
    rep.b_mean += r.b_mass;
    rep.rows.push_back(r);
  }
  if (!rep.rows.empty()) {
    rep.a_mean /= static_cast<double>(rep.rows.size());
    rep.b_mean /= static_cast<double>(rep.rows.size());
  }
  return rep;
}

void write_attention_csv(std::ostream& out, const AttentionReport& r) {
  out << "example_id,a_mass,a_log_mass,b_mass,b_log_mass\n";
  const auto old = out.precision(12);
  for (const auto& row : r.rows) {
    out << row.example_id << ',' << row.a_mass << ',' << row.a_log << ',' << row.b_mass << ','
        << row.b_log << '\n';
  }
  out.precision(old);
}

EvalResult cross_dataset_eval(const Trained& trained, const Tag& target,
                              const GnnEncoder* encoder) {
  for (const auto& name : class_names_of(target)) {
    if (!trained.vocab->contains(name)) {
      throw ConfigError("cross-eval: class \"" + name +
                        "\" of the target graph is not in the model's vocabulary");
    }
  }
  if (target.meta.d_z != trained.model->config().d_z) {
    throw ConfigError("cross-eval: target feature width differs from the model's");
  }
  // Target labels are re-expressed through the source vocabulary.
  const auto& src_names = trained.vocab->class_names();
  const auto tgt_names = class_names_of(target);
  Tag remapped = target;
  remapped.meta.class_names = src_names;
  remapped.meta.num_classes = src_names.size();
  for (auto& l : remapped.labels) {
    if (l) {
      const auto it = std::find(src_names.begin(), src_names.end(), tgt_names[*l]);
      l = static_cast<std::size_t>(it - src_names.begin());
    }
  }
  TrainConfig cfg = trained.cfg;
  cfg.no_pregnn = true;  // latents are not needed for evaluation
  const InstructionSet test = prepare_split(cfg, remapped, *trained.vocab, Split::Test, encoder);
  return evaluate(*trained.model, *trained.vocab, test);
}

std::vector<TimingRow> timing_report(std::span<const std::pair<std::string, TrainConfig>> cfgs,
                                     const Tag& tag, const GnnEncoder* encoder,
                                     std::size_t repeats) {
  if (repeats == 0) {
    throw ConfigError("timing-report: repeats must be positive");
  }
  std::vector<TimingRow> out;
  for (const auto& [name, cfg] : cfgs) {
    if (cfg.epochs == 0) {
      throw ConfigError("timing-report: " + name + " has zero epochs");
    }
    TimingRow row;
    row.name = name;
    row.repeats = repeats;
    std::vector<double> per_epoch;
    for (std::size_t r = 0; r < repeats; ++r) {
      // Time only the epochs, not dataset and target preparation.
      double last = 0.0;
      std::vector<double> epoch_times;
      const Trained t = train(cfg, tag, encoder);
      for (const auto& m : t.metrics) {
        epoch_times.push_back(m.wall_time_s - last);
        last = m.wall_time_s;
        row.peak_bytes = std::max(row.peak_bytes, m.peak_bytes);
      }
      // The first epoch also absorbs set-up; use the rest when available.
      double s = 0.0;
      const std::size_t from = epoch_times.size() > 1 ? 1 : 0;
      for (std::size_t i = from; i < epoch_times.size(); ++i) s += epoch_times[i];
      per_epoch.push_back(s / static_cast<double>(epoch_times.size() - from));
    }
    std::tie(row.sec_per_epoch_mean, row.sec_per_epoch_std) = mean_std(per_epoch);
    out.push_back(row);
  }
  return out;
}

void write_timing_csv(std::ostream& out, std::span<const TimingRow> rows) {
  out << "name,repeats,sec_per_epoch_mean,sec_per_epoch_std,peak_tensor_bytes\n";
  const auto old = out.precision(6);
  for (const auto& r : rows) {
    out << r.name << ',' << r.repeats << ',' << r.sec_per_epoch_mean << ','
        << r.sec_per_epoch_std << ',' << r.peak_bytes << '\n';
  }
  out.precision(old);
}

HSamples collect_h_samples(const LmModel& model, const InstructionSet& set, HTarget target) {
  NoGradGuard ng;
  HSamples s;
  s.d_h = model.config().d_model;
  for (const auto& ex : set.examples) {
    if (target == HTarget::Latents && !ex.targets.latent) {
      throw UsageError("collect_h_samples: example " + std::to_string(ex.id) + " has no latents");
    }
    const ForwardResult fr = model.forward(ex.seq, ex.ins.prompt);
    const Tensor h = aggregate_h(fr.s_graph, ex.seq);
    const Tensor& z = target == HTarget::Latents ? *ex.targets.latent : ex.targets.features;
    s.d_z = z.cols();
    s.z.insert(s.z.end(), z.values().begin(), z.values().end());
    s.h.insert(s.h.end(), h.values().begin(), h.values().end());
  }
  return s;
}

}  // namespace rglm
