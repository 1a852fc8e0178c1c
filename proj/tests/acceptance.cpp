// End-to-end acceptance run: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rglm/checks.hpp"
#include "rglm/experiments.hpp"
#include "rglm/info.hpp"
#include "rglm/ndt.hpp"
#include "rglm/recon.hpp"
#include "rglm/rng.hpp"
#include "rglm/tag.hpp"
#include "rglm/trainer.hpp"

using namespace rglm;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  failures += !pass;
  std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail
            << std::endl;
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// ---- 1..3: information identities

void mi_suites() {
  const auto dec = decomposition_suite(1000, 101);
  report(1, "decomposition identity", dec.ok() && dec.instances == 1000 && dec.seconds < 10.0,
         std::to_string(dec.instances) + " joints, max residual " + sci(dec.max_residual) + ", " +
             fmt(dec.seconds, 2) + " s");

  const auto ub = upper_bound_suite(200, 102);
  report(2, "upper bound", ub.ok() && ub.instances >= 201 && ub.seconds < 10.0,
         std::to_string(ub.instances) + " joints incl. tight case, min slack " +
             sci(ub.min_slack) + ", " + fmt(ub.seconds, 2) + " s");

  const auto dpi = dpi_suite(200, 103);
  report(3, "data processing", dpi.ok() && dpi.instances == 200 && dpi.seconds < 5.0,
         std::to_string(dpi.instances) + " chains, min slack " + sci(dpi.min_slack) + ", " +
             fmt(dpi.seconds, 2) + " s");
}

// ---- 4: gradients

void gradients() {
  const auto t0 = Clock::now();
  const auto rows = grad_suite(16, 104);
  const double secs = since(t0);
  bool ok = secs < 60.0;
  std::set<std::string> seen;
  std::string detail;
  for (const auto& r : rows) {
    ok = ok && r.max_rel_error <= 1e-4;
    seen.insert(r.loss);
    detail += r.loss + "=" + sci(r.max_rel_error) + " ";
  }
  for (const char* l : {"text", "feat", "topo", "sim", "diff", "pretrain"}) {
    if (!seen.contains(l)) {
      ok = false;
      detail += std::string("missing ") + l + " ";
    }
  }
  report(4, "gradient check at d_model=16", ok, detail + fmt(secs, 1) + " s");
}

// ---- 5: serializer

std::size_t expected_length(const NdtConfig& c) {
  std::size_t total = 1, level = 1;
  for (std::size_t b : c.branch) {
    level *= b;
    total += level;
  }
  return total;
}

// Empty when the sequence is consistent with its subgraph.
std::string sequence_problem(const GraphTokenSequence& seq, const Subgraph& sub,
                             const NdtConfig& c) {
  if (seq.length() != expected_length(c)) return "length";
  if (!seq.is_node(0) || seq.slots[0].node != sub.center[0]) return "root";
  std::set<std::size_t> covered;
  for (const auto& [v, idx] : seq.gamma) {
    if (idx.empty() || !std::is_sorted(idx.begin(), idx.end())) return "gamma order";
    for (std::size_t i : idx) {
      if (i >= seq.length() || !seq.is_node(i) || seq.slots[i].node != v) return "gamma member";
      if (!covered.insert(i).second) return "gamma overlap";
    }
  }
  std::size_t node_slots = 0;
  for (std::size_t i = 0; i < seq.length(); ++i) node_slots += seq.is_node(i);
  if (covered.size() != node_slots) return "gamma cover";

  std::set<Edge> edges;
  for (auto [a, b] : sub.edges) {
    const auto u = sub.node_ids[a], v = sub.node_ids[b];
    edges.insert({std::min(u, v), std::max(u, v)});
  }
  for (std::size_t i = 0; i < seq.length(); ++i) {
    const Slot& s = seq.slots[i];
    if (s.kind != SlotKind::Node) {
      for (double x : seq.feature(i)) {
        if (x != 0.0) return "pad feature";
      }
      continue;
    }
    const auto local = sub.local_of(s.node);
    if (!local || sub.hop_of[*local] > s.level) return "hop";
    const auto want = sub.feature(*local);
    if (!std::equal(want.begin(), want.end(), seq.feature(i).begin())) return "feature";
    if (s.level == 0) continue;
    if (!s.parent || *s.parent >= i) return "parent";
    const Slot& p = seq.slots[*s.parent];
    if (p.kind != SlotKind::Node || p.level + 1 != s.level) return "parent level";
    if (!edges.contains({std::min(p.node, s.node), std::max(p.node, s.node)})) return "edge";
  }
  return {};
}

void serializer() {
  const auto t0 = Clock::now();
  Rng pick(105);
  std::string problem;
  int cases = 0;
  for (; cases < 500 && problem.empty(); ++cases) {
    SyntheticSpec s;
    s.nodes = 8 + pick.uniform_int(30);
    s.classes = 2;
    s.d_z = 3;
    s.intra_p = 0.1 + 0.5 * pick.uniform();
    s.inter_p = s.intra_p * pick.uniform() * 0.5;
    s.seed = pick.next_u64();
    const Tag t = generate_synthetic_tag(s);
    NdtConfig c;
    c.hops = 1 + pick.uniform_int(3);
    c.branch.clear();
    for (std::size_t i = 0; i < c.hops; ++i) c.branch.push_back(1 + pick.uniform_int(4));
    c.order = pick.uniform() < 0.5 ? NeighborOrder::SortedById : NeighborOrder::SeededShuffle;
    Rng r0(0);
    const Subgraph sub = sample_subgraph(t, pick.uniform_int(t.node_count), c.hops, r0);
    const std::uint64_t seed = pick.next_u64();
    Rng a(seed), b(seed);
    const auto seq = serialize(build_tree(sub, c, a));
    problem = sequence_problem(seq, sub, c);
    if (problem.empty() && !(serialize(build_tree(sub, c, b)) == seq)) problem = "determinism";
    if (!problem.empty()) problem = "case " + std::to_string(cases) + ": " + problem;
  }

  // h = 2, b = (10, 10)
  if (problem.empty()) {
    SyntheticSpec s;
    s.seed = 7;
    s.intra_p = 0.3;
    const Tag t = generate_synthetic_tag(s);
    NdtConfig c;
    Rng r0(0), rng(4);
    const Subgraph sub = sample_subgraph(t, 5, 2, r0);
    const auto seq = serialize(build_tree(sub, c, rng));
    if (c.sequence_length() != 111 || seq.length() != 111) problem = "111-slot template";
    else if (auto p = sequence_problem(seq, sub, c); !p.empty()) problem = "111-slot: " + p;
  }

  // Triangle A-B-C rooted at A with b = (2, 2).
  if (problem.empty()) {
    Tag t;
    t.node_count = 3;
    t.edges = {{0, 1}, {0, 2}, {1, 2}};
    t.meta = {2, 2, "toy", {}};
    for (std::size_t v = 0; v < 3; ++v) {
      t.features.push_back(static_cast<double>(v) + 1.0);
      t.features.push_back(-static_cast<double>(v));
      t.labels.push_back(0);
      t.splits.push_back(Split::Train);
    }
    NdtConfig c;
    c.hops = 2;
    c.branch = {2, 2};
    Rng r0(0), rng(0);
    const auto seq = serialize(build_tree(sample_subgraph(t, 0, 2, r0), c, rng));
    const bool trace = seq.dump() == "0 0 0\n1 1 1\n1 2 2\n2 3 0\n2 4 2\n2 5 0\n2 6 1\n" &&
                       seq.gamma.at(0) == std::vector<std::size_t>{0, 3, 5} &&
                       seq.gamma.at(1) == std::vector<std::size_t>{1, 6} &&
                       seq.gamma.at(2) == std::vector<std::size_t>{2, 4};
    if (!trace) problem = "triangle trace";
  }
  const double secs = since(t0);
  report(5, "serializer properties", problem.empty() && secs < 10.0,
         (problem.empty() ? std::to_string(cases) + " random cases, 111-slot and triangle ok"
                          : problem) +
             ", " + fmt(secs, 2) + " s");
}

// ---- 6: diffusion calibration

void diffusion() {
  const auto t0 = Clock::now();
  std::string detail;
  bool ok = true;

  const auto sched = NoiseSchedule::linear(100);
  for (std::size_t t = 1; t <= sched.steps; ++t) ok = ok && sched.alpha_bar[t] < sched.alpha_bar[t - 1];
  detail += ok ? "alpha_bar decreasing; " : "alpha_bar not decreasing; ";

  DenoiserHead::Config c;
  c.d_model = 8;
  c.d_e = 4;
  c.d_hidden = 8;
  Rng rng(106);
  DenoiserHead head(c, sched, 1.0, rng);
  head.zero_output();
  auto rand_t = [&](std::size_t r, std::size_t k) {
    std::vector<double> v(r * k);
    for (double& x : v) x = rng.normal();
    return Tensor::from(r, k, std::move(v));
  };
  const Tensor e = rand_t(3, 4), h = rand_t(3, 8);
  {
    NoGradGuard ng;
    double total = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) total += diff_loss(head, e, h, rng).item();
    const double m = total / n;
    ok = ok && std::abs(m - 1.0) <= 0.05;
    detail += "zero-denoiser loss " + fmt(m) + "; ";
  }

  const Tensor e1 = Tensor::from(1, 2, {1.5, -0.5});
  const int n = 100000;
  for (std::size_t t : {1, 40, 100}) {
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const Tensor eps = Tensor::from(1, 2, {rng.normal(), rng.normal()});
      const Tensor et = forward_noise(e1, t, eps, sched);
      for (std::size_t k = 0; k < 2; ++k) {
        const double r = et.at(0, k) - std::sqrt(sched.alpha_bar[t]) * e1.at(0, k);
        sum += r;
        sq += r * r;
      }
    }
    const double cnt = 2.0 * n, m = sum / cnt, var = sq / cnt - m * m;
    const double want = 1.0 - sched.alpha_bar[t];
    const double se = want * std::sqrt(2.0 / cnt);
    const double z = (var - want) / se;
    ok = ok && std::abs(z) <= 3.0;
    detail += "t=" + std::to_string(t) + " var z=" + fmt(z, 2) + "; ";
  }
  const double secs = since(t0);
  report(6, "diffusion calibration", ok && secs < 10.0, detail + fmt(secs, 2) + " s");
}

// ---- 7..11: synthetic benchmark

constexpr std::uint64_t kSeeds[] = {0, 1, 2, 3, 4};

struct Bench {
  Tag tag;
  GnnEncoder encoder;
  TrainConfig base;
};

Bench make_bench() {
  SyntheticSpec s;
  s.nodes = 300;
  s.classes = 4;
  s.train_frac = 0.3;
  s.val_frac = 0.2;
  Tag tag = generate_synthetic_tag(s);

  GnnConfig gc;
  gc.d_z = tag.meta.d_z;
  gc.num_classes = tag.meta.num_classes;
  GnnEncoder enc = pretrain(tag, gc, PretrainConfig{});

  const ConfigMap m{{"dataset", "synthetic"}, {"d_model", "32"}, {"n_layers", "2"},
                    {"n_heads", "2"},         {"branch", "3,3"}, {"epochs", "10"},
                    {"lr", "2e-3"},           {"pregnn", "in-memory"}};
  return {std::move(tag), std::move(enc), TrainConfig::from_map(m)};
}

std::vector<double> accs(const std::vector<RunResult>& rows, const std::string& setting) {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.setting == setting) out.push_back(r.test.accuracy);
  }
  return out;
}

double secs_of(const std::vector<RunResult>& rows, const std::string& setting) {
  double s = 0.0;
  for (const auto& r : rows) {
    if (r.setting == setting) s += r.seconds;
  }
  return s;
}

void benchmark() {
  const auto t0 = Clock::now();
  const Bench b = make_bench();
  const double setup = since(t0);
  std::cout << "benchmark: " << b.tag.node_count << " nodes, " << b.tag.meta.num_classes
            << " classes, encoder pretrained in " << fmt(setup, 1) << " s" << std::endl;

  const Variant variants[] = {Variant::Decoder, Variant::Similarizer, Variant::Denoiser};
  std::map<Variant, std::vector<RunResult>> abl;
  for (Variant v : variants) {
    TrainConfig cfg = b.base;
    cfg.variant = v;
    abl[v] = ablate(cfg, b.tag, &b.encoder, kSeeds);
  }

  // 7: each variant against the text-only baseline
  {
    const auto& dec = abl[Variant::Decoder];
    const double base = mean(accs(dec, "vanilla"));
    double secs = setup + secs_of(dec, "vanilla");
    bool each = true, one = false;
    std::string detail = "vanilla " + fmt(base);
    for (Variant v : variants) {
      const double m = mean(accs(abl[v], "full"));
      secs += secs_of(abl[v], "full");
      each = each && m >= base;
      one = one || m >= base + 0.01;
      detail += ", " + to_string(v) + " " + fmt(m);
    }
    report(7, "variants vs text-only baseline", each && one && secs < 900.0,
           detail + " (5 seeds), " + fmt(secs, 0) + " s");
  }

  // 9: ablations, reported after 8
  bool abl_ok = false;
  std::string abl_detail;
  {
    std::cout << "ablation table (mean test accuracy over 5 seeds):\n"
              << "  variant      setting    acc_mean acc_std\n";
    std::vector<SettingSummary> all;
    for (Variant v : variants) {
      for (const auto& s : summarize(abl[v])) {
        if (s.setting == "vanilla" && v != Variant::Decoder) continue;
        char line[128];
        std::snprintf(line, sizeof line, "  %-12s %-10s %.4f   %.4f\n", s.variant.c_str(),
                      s.setting.c_str(), s.acc_mean, s.acc_std);
        std::cout << line;
      }
    }
    const auto& dec = abl[Variant::Decoder];
    const double full = mean(accs(dec, "full"));
    const double nf = mean(accs(dec, "no_feat")), nt = mean(accs(dec, "no_topo"));
    bool ok = full >= nf && full >= nt;
    std::string detail = "decoder full " + fmt(full) + " vs no_feat " + fmt(nf) + ", no_topo " +
                         fmt(nt);
    for (Variant v : {Variant::Similarizer, Variant::Denoiser}) {
      const double f = mean(accs(abl[v], "full")), np = mean(accs(abl[v], "no_pregnn"));
      ok = ok && np <= f;
      detail += "; " + to_string(v) + " full " + fmt(f) + " vs no_pregnn " + fmt(np);
    }
    abl_ok = ok;
    abl_detail = detail;
  }

  // Best variant by seed-mean accuracy, for the attention comparison.
  Variant best = Variant::Decoder;
  double best_acc = -1.0;
  for (Variant v : variants) {
    const double m = mean(accs(abl[v], "full"));
    if (m > best_acc) {
      best_acc = m;
      best = v;
    }
  }

  // 8 and 10 share per-seed training runs with init snapshots.
  std::vector<double> att_van, att_best;
  std::map<Variant, std::vector<double>> mi_init, mi_final;
  double att_secs = 0.0;
  const Vocabulary vocab(class_names_of(b.tag));
  for (std::uint64_t seed : kSeeds) {
    std::map<Variant, Trained> runs;
    for (Variant v : {Variant::Vanilla, Variant::Decoder, Variant::Similarizer, Variant::Denoiser}) {
      TrainConfig cfg = b.base;
      cfg.variant = v;
      cfg.seed = seed;
      const InstructionSet test = prepare_split(cfg, b.tag, vocab, Split::Test, &b.encoder);
      const EpochHook hook = [&](std::size_t epoch, const LmModel& m, const ReconHeads&) {
        if (v == Variant::Vanilla) return;
        // Each variant against its own reconstruction target.
        const HSamples s = collect_h_samples(
            m, test, v == Variant::Decoder ? HTarget::Features : HTarget::Latents);
        const double mi = binned_mi_estimate(s.z, s.d_z, s.h, s.d_h, 8);
        if (epoch == 0) mi_init[v].push_back(mi);
        if (epoch == cfg.epochs) mi_final[v].push_back(mi);
      };
      runs.emplace(v, train(cfg, b.tag, &b.encoder, hook));
    }
    const auto ta = Clock::now();
    TrainConfig vcfg = b.base;
    vcfg.seed = seed;
    const InstructionSet test = prepare_split(vcfg, b.tag, vocab, Split::Test, nullptr);
    const auto rep = attention_report(*runs.at(Variant::Vanilla).model, *runs.at(best).model, test);
    att_secs += since(ta);
    att_van.push_back(rep.a_mean);
    att_best.push_back(rep.b_mean);
  }
  {
    const double v = mean(att_van), r = mean(att_best);
    report(8, "attention on graph tokens", r > v && att_secs < 120.0,
           to_string(best) + " " + fmt(r) + " vs vanilla " + fmt(v) + " (5 seeds), " +
               fmt(att_secs, 1) + " s");
  }
  report(9, "ablation ordering", abl_ok, abl_detail);

  // 10: bound algebra and MI growth
  {
    bool mono = true;
    Rng rng(110);
    for (int i = 0; i < 1000; ++i) {
      BoundInputs in;
      in.entropy_estimate = 5.0 * rng.uniform();
      in.feat = rng.uniform();
      in.topo = rng.uniform();
      in.sim = rng.uniform();
      in.diff = rng.uniform();
      in.lambda_f = 0.05 + rng.uniform();
      in.lambda_s = 0.5 + 10.0 * rng.uniform();
      in.lambda_l = 0.1 + 2.0 * rng.uniform();
      for (Variant v : {Variant::Decoder, Variant::Similarizer, Variant::Denoiser}) {
        const double base = report_lower_bound(v, in).value;
        for (double BoundInputs::*field :
             {&BoundInputs::feat, &BoundInputs::topo, &BoundInputs::sim, &BoundInputs::diff}) {
          BoundInputs more = in;
          more.*field += 0.1 + rng.uniform();
          mono = mono && report_lower_bound(v, more).value <= base;
        }
      }
    }
    bool grew = true;
    std::string detail = mono ? "bounds nonincreasing in their losses" : "bound increases with loss";
    for (Variant v : variants) {
      const double a = mean(mi_init[v]), z = mean(mi_final[v]);
      grew = grew && mi_final[v].size() == std::size(kSeeds) && z > a;
      detail += "; " + to_string(v) + " MI(target;H) " + fmt(a) + " -> " + fmt(z);
    }
    report(10, "bound monotonicity and MI growth", mono && grew, detail);
  }

  // 11: overhead
  {
    std::vector<std::pair<std::string, TrainConfig>> cfgs;
    for (Variant v : {Variant::Vanilla, Variant::Decoder, Variant::Similarizer, Variant::Denoiser}) {
      TrainConfig cfg = b.base;
      cfg.variant = v;
      cfg.epochs = 3;
      cfgs.emplace_back(to_string(v), cfg);
    }
    const auto rows = timing_report(cfgs, b.tag, &b.encoder, 2);
    std::ostringstream table;
    write_timing_csv(table, rows);
    std::cout << table.str();
    const double van = rows.front().sec_per_epoch_mean;
    bool ok = van > 0.0;
    std::string detail;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double ratio = rows[i].sec_per_epoch_mean / van;
      ok = ok && ratio > 1.0 && ratio <= 2.0;
      detail += (i > 1 ? ", " : "") + rows[i].name + " x" + fmt(ratio, 2);
    }
    report(11, "reconstruction overhead", ok, detail + " of vanilla per epoch");
  }
}

}  // namespace

int main() {
  mi_suites();
  gradients();
  serializer();
  diffusion();
  benchmark();
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
