#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "rglm/config.hpp"
#include "rglm/error.hpp"
#include "rglm/experiments.hpp"
#include "rglm/gnn.hpp"
#include "rglm/instructions.hpp"
#include "rglm/tag.hpp"
#include "rglm/trainer.hpp"

using namespace rglm;

namespace {

Tag toy_tag() {
  Tag t;
  t.node_count = 4;
  t.edges = {{0, 1}, {1, 2}, {2, 3}};
  t.meta = {3, 2, "toy", {"red", "blue"}};
  for (std::size_t v = 0; v < 4; ++v) {
    for (std::size_t k = 0; k < 3; ++k) t.features.push_back(0.1 * static_cast<double>(v + k));
    t.labels.push_back(v < 2 ? 0 : 1);
    t.splits.push_back(Split::Train);
  }
  return t;
}

Tag small_sbm(std::uint64_t seed, std::size_t nodes = 24) {
  SyntheticSpec s;
  s.nodes = nodes;
  s.classes = 2;
  s.d_z = 4;
  s.intra_p = 0.4;
  s.inter_p = 0.05;
  s.feature_noise = 0.5;
  s.seed = seed;
  return generate_synthetic_tag(s);
}

TrainConfig tiny_cfg() {
  TrainConfig c;
  c.epochs = 2;
  c.replicate = 1;
  c.batch_size = 4;
  c.lr = 2e-3;
  c.ndt.hops = 1;
  c.ndt.branch = {3};
  c.lm.d_model = 8;
  c.lm.n_layers = 1;
  c.lm.n_heads = 2;
  c.lm.max_len = 32;
  c.head_hidden = 8;
  c.head_proj = 4;
  c.diffusion_steps = 10;
  c.denoiser_hidden = 8;
  return c;
}

NdtConfig ndt1() {
  NdtConfig n;
  n.hops = 1;
  n.branch = {2};
  return n;
}

std::string metrics_text(const Trained& t) {
  std::ostringstream out;
  write_metrics_csv(out, t.metrics);
  return out.str();
}

}  // namespace

TEST_CASE("config text, overrides and round trip") {
  ConfigMap m = parse_config_text("# comment\nvariant = decoder\n\nlambda_f=0.6 # trailing\nepochs=3\n");
  CHECK(m.at("variant") == "decoder");
  CHECK(m.at("lambda_f") == "0.6");
  const std::vector<std::string> args{"--epochs=5", "train", "--lambda_s=4"};
  const auto rest = apply_overrides(m, args);
  CHECK(rest == std::vector<std::string>{"train"});
  CHECK(m.at("epochs") == "5");
  const TrainConfig c = TrainConfig::from_map(m);
  CHECK(c.variant == Variant::Decoder);
  CHECK(c.lambda_f == 0.6);
  CHECK(c.lambda_s == 4.0);
  CHECK(c.epochs == 5);
  const TrainConfig back = TrainConfig::from_map(c.to_map());
  CHECK(back.to_map() == c.to_map());

  CHECK_THROWS_AS(parse_config_text("novalue\n"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_map({{"bogus", "1"}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_map({{"epochs", "many"}}), ConfigError);
}

TEST_CASE("latent variants need an encoder unless raw targets are requested") {
  TrainConfig c = tiny_cfg();
  c.variant = Variant::Similarizer;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.no_pregnn = true;
  CHECK_NOTHROW(c.validate());
  c.no_pregnn = false;
  c.pregnn = "enc.json";
  CHECK_NOTHROW(c.validate());
  c = tiny_cfg();
  c.lambda_f = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("node instructions on a four-node graph") {
  const Tag t = toy_tag();
  const Vocabulary vocab(class_names_of(t));
  const auto set = build_instructions(t, Task::NodeClassification, Split::Train, ndt1(), vocab, 1);
  REQUIRE(set.examples.size() == 4);
  CHECK(set.num_answers == 2);
  for (const auto& e : set.examples) {
    CHECK(e.ins.label.size() == 1);
    CHECK(e.ins.prompt == vocab.encode(kNodePrompt));
    CHECK(vocab.word(e.ins.label[0]) == t.meta.class_names[*t.labels[e.centers[0]]]);
    CHECK(e.answer == *t.labels[e.centers[0]]);
    CHECK(e.targets.features.rows() == e.seq.nodes().size());
    CHECK(e.ins.supervised_positions(e.seq.length()).size() == e.ins.label.size());
  }
  CHECK(vocab.decode(vocab.encode("which class")) == "which class");
  CHECK_THROWS(vocab.id("purple"));

  Tag bad = t;
  bad.labels[2] = 7;
  CHECK_THROWS(build_instructions(bad, Task::NodeClassification, Split::Train, ndt1(), vocab, 1));
}

TEST_CASE("link instructions are balanced and seeded") {
  const Tag t = small_sbm(3, 40);
  const Vocabulary vocab(class_names_of(t));
  const auto a = build_instructions(t, Task::LinkPrediction, Split::Train, ndt1(), vocab, 5);
  const auto b = build_instructions(t, Task::LinkPrediction, Split::Train, ndt1(), vocab, 5);
  std::size_t yes = 0;
  const std::set<Edge> edges(t.edges.begin(), t.edges.end());
  for (const auto& e : a.examples) {
    REQUIRE(e.centers.size() == 2);
    const Edge pair{std::min(e.centers[0], e.centers[1]), std::max(e.centers[0], e.centers[1])};
    CHECK(edges.contains(pair) == (e.answer == 1));
    CHECK(e.ins.prompt == vocab.encode(kLinkPrompt));
    CHECK(vocab.word(e.ins.label[0]) == (e.answer ? "yes" : "no"));
    yes += e.answer;
  }
  CHECK(!a.examples.empty());
  CHECK(2 * yes == a.examples.size());
  REQUIRE(a.examples.size() == b.examples.size());
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    CHECK(a.examples[i].centers == b.examples[i].centers);
    CHECK(a.examples[i].seq == b.examples[i].seq);
  }
}

TEST_CASE("macro F1 fixtures") {
  using P = std::optional<std::size_t>;
  const std::vector<std::size_t> truth{0, 0, 1, 1};
  const std::vector<P> constant{0, 0, 0, 0};
  CHECK(accuracy(truth, constant) == 0.5);
  CHECK(macro_f1(truth, constant) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const std::vector<P> perfect{0, 0, 1, 1};
  CHECK(accuracy(truth, perfect) == 1.0);
  CHECK(macro_f1(truth, perfect) == 1.0);

  // Six examples, three classes, one unparseable answer.
  const std::vector<std::size_t> t6{0, 0, 1, 1, 2, 2};
  const std::vector<P> p6{0, 1, 1, 1, std::nullopt, 0};
  // class 0: tp 1, fp 1, fn 1 -> 1/2; class 1: tp 2, fp 1, fn 0 -> 4/5;
  // class 2: tp 0, fp 0, fn 2 -> 0.
  CHECK(macro_f1(t6, p6) == doctest::Approx((0.5 + 0.8 + 0.0) / 3.0).epsilon(1e-12));
  CHECK(accuracy(t6, p6) == doctest::Approx(0.5));
}

TEST_CASE("vanilla training records no graph loss and is deterministic") {
  const Tag t = small_sbm(4);
  const Trained a = train(tiny_cfg(), t, nullptr);
  const Trained b = train(tiny_cfg(), t, nullptr);
  REQUIRE(a.metrics.size() == 2);
  for (const auto& r : a.metrics) {
    CHECK(r.loss_graph == 0.0);
    CHECK(r.loss_total == r.loss_text + r.loss_graph);
    CHECK(r.val_acc >= 0.0);
    CHECK(r.val_acc <= 1.0);
  }
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].loss_text == b.metrics[i].loss_text);
    CHECK(a.metrics[i].val_acc == b.metrics[i].val_acc);
  }
  const std::string text = metrics_text(a);
  CHECK(text.rfind(kMetricsHeader, 0) == 0);
}

TEST_CASE("decoder training lowers the feature loss") {
  SyntheticSpec s;
  s.nodes = 24;
  s.classes = 2;
  s.d_z = 4;
  s.intra_p = 1.0;
  s.inter_p = 0.0;
  s.feature_noise = 0.0;
  const Tag t = generate_synthetic_tag(s);
  TrainConfig c = tiny_cfg();
  c.variant = Variant::Decoder;
  c.epochs = 4;
  c.lr = 5e-3;
  const Trained r = train(c, t, nullptr);
  REQUIRE(r.metrics.size() == 4);
  CHECK(r.metrics.back().feat < r.metrics.front().feat);
  for (const auto& m : r.metrics) {
    CHECK(std::abs(m.loss_total - (m.loss_text + m.loss_graph)) <= 1e-12);
    CHECK(m.loss_graph > 0.0);
  }
}

TEST_CASE("latent variants train with raw or pre-trained targets") {
  const Tag t = small_sbm(5);
  GnnConfig gc;
  gc.d_z = 4;
  gc.num_classes = 2;
  gc.d_e = 6;
  gc.pe_k = 2;
  gc.rw_steps = 2;
  PretrainConfig pc;
  pc.epochs = 3;
  const GnnEncoder enc = pretrain(t, gc, pc);
  for (Variant v : {Variant::Similarizer, Variant::Denoiser}) {
    TrainConfig c = tiny_cfg();
    c.variant = v;
    c.epochs = 1;
    c.pregnn = "in-memory";
    const Trained r = train(c, t, &enc);
    CHECK(r.metrics.front().loss_graph > 0.0);
    CHECK_THROWS_AS(train(c, t, nullptr), ConfigError);
    c.no_pregnn = true;
    CHECK_NOTHROW(train(c, t, nullptr));
  }
}

TEST_CASE("checkpoint round trip reproduces evaluation") {
  const Tag t = small_sbm(6);
  const Trained a = train(tiny_cfg(), t, nullptr);
  const auto path = std::filesystem::temp_directory_path() / "rglm_harness_ckpt.json";
  save_checkpoint(a, path);
  const Trained b = load_checkpoint(path);
  const auto test = prepare_split(a.cfg, t, *a.vocab, Split::Test, nullptr);
  const EvalResult ea = evaluate(*a.model, *a.vocab, test);
  const EvalResult eb = evaluate(*b.model, *b.vocab, test);
  CHECK(ea.accuracy == eb.accuracy);
  CHECK(ea.predicted == eb.predicted);
  std::filesystem::remove(path);
  InstructionSet empty;
  CHECK_THROWS_AS(evaluate(*a.model, *a.vocab, empty), UsageError);
}

TEST_CASE("ablation rows and consistency") {
  const Tag t = small_sbm(7);
  TrainConfig c = tiny_cfg();
  c.variant = Variant::Decoder;
  c.epochs = 1;
  const std::vector<std::uint64_t> seeds{1, 2};
  const auto rows = ablate(c, t, nullptr, seeds);
  REQUIRE(rows.size() == 8);
  std::ostringstream csv;
  write_runs_csv(csv, rows);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == kRunsHeader);
  std::size_t no_feat_rows = 0;
  while (std::getline(lines, line)) {
    if (line.rfind("no_feat,", 0) == 0) {
      ++no_feat_rows;
      CHECK(line.find(",decoder,") != std::string::npos);
      // lambda_f is the fourth column.
      std::istringstream cells(line);
      std::string cell;
      for (int i = 0; i < 4; ++i) std::getline(cells, cell, ',');
      CHECK(cell == "0");
    }
  }
  CHECK(no_feat_rows == 2);

  TrainConfig v = c;
  v.variant = Variant::Vanilla;
  v.seed = 2;
  const RunResult direct = run_once("vanilla", v, t, nullptr);
  CHECK(rows[1].setting == "vanilla");
  CHECK(rows[1].test.accuracy == direct.test.accuracy);
  CHECK(rows[1].test.predicted == direct.test.predicted);
  TrainConfig nt = c;
  nt.no_topo = true;
  nt.seed = 1;
  CHECK(run_once("no_topo", nt, t, nullptr).test.predicted == rows[6].test.predicted);

  const auto sum = summarize(rows);
  REQUIRE(sum.size() == 4);
  CHECK(sum[0].runs == 2);
}

TEST_CASE("sweep covers the grid") {
  const Tag t = small_sbm(8, 12);
  TrainConfig c = tiny_cfg();
  c.variant = Variant::Decoder;
  c.epochs = 1;
  c.lm.d_model = 4;
  c.lm.n_heads = 1;
  const SweepGrid grid = SweepGrid::defaults();
  CHECK(grid.lambda_f.size() == 6);
  CHECK(grid.lambda_s.size() == 6);
  CHECK(grid.lambda_l.size() == 10);
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto rows = sweep(c, grid, t, nullptr, seeds);
  CHECK(rows.size() == 108);
  std::set<std::pair<double, double>> points;
  for (const auto& r : rows) points.insert({r.cfg.lambda_f, r.cfg.lambda_s});
  CHECK(points.size() == 36);

  // The default grid point reproduces a single run.
  for (const auto& r : rows) {
    if (r.cfg.lambda_f == 0.4 && r.cfg.lambda_s == 2.0 && r.cfg.seed == 2) {
      TrainConfig one = c;
      one.seed = 2;
      one.lambda_f = 0.4;
      one.lambda_s = 2.0;
      CHECK(run_once("sweep", one, t, nullptr).test.predicted == r.test.predicted);
    }
  }
}

TEST_CASE("attention report of identical checkpoints") {
  const Tag t = small_sbm(9);
  const Trained a = train(tiny_cfg(), t, nullptr);
  const auto test = prepare_split(a.cfg, t, *a.vocab, Split::Test, nullptr);
  const auto rep = attention_report(*a.model, *a.model, test);
  REQUIRE(rep.rows.size() == test.examples.size());
  for (const auto& r : rep.rows) {
    CHECK(r.a_mass == r.b_mass);
    CHECK(r.a_log == r.b_log);
    CHECK(r.a_mass >= 0.0);
    CHECK(r.a_mass <= 1.0);
  }
  CHECK(rep.a_mean == rep.b_mean);
  std::ostringstream out;
  write_attention_csv(out, rep);
  std::string header;
  std::getline(std::istringstream(out.str()) >> std::ws, header);
  CHECK(std::count(header.begin(), header.end(), ',') == 4);
}

TEST_CASE("cross-dataset evaluation") {
  const Tag t = small_sbm(10);
  const Trained a = train(tiny_cfg(), t, nullptr);
  const auto test = prepare_split(a.cfg, t, *a.vocab, Split::Test, nullptr);
  const EvalResult same = cross_dataset_eval(a, t);
  CHECK(same.accuracy == evaluate(*a.model, *a.vocab, test).accuracy);
  CHECK(same.accuracy >= 0.0);
  CHECK(same.macro_f1 <= 1.0);

  Tag other = small_sbm(11);
  other.meta.class_names = {"cat", "dog"};
  CHECK_THROWS_AS(cross_dataset_eval(a, other), ConfigError);
}

TEST_CASE("timing report") {
  const Tag t = small_sbm(12);
  TrainConfig v = tiny_cfg();
  v.epochs = 1;
  TrainConfig d = v;
  d.variant = Variant::Decoder;
  const std::vector<std::pair<std::string, TrainConfig>> cfgs{{"vanilla", v}, {"decoder", d}};
  const auto rows = timing_report(cfgs, t, nullptr, 2);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.repeats == 2);
    CHECK(r.sec_per_epoch_mean > 0.0);
    CHECK(r.sec_per_epoch_std >= 0.0);
    CHECK(r.peak_bytes > 0);
  }
  std::ostringstream out;
  write_timing_csv(out, rows);
  const std::string text = out.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("h samples pair features with aggregated states") {
  const Tag t = small_sbm(13);
  const Trained a = train(tiny_cfg(), t, nullptr);
  const auto test = prepare_split(a.cfg, t, *a.vocab, Split::Test, nullptr);
  const HSamples s = collect_h_samples(*a.model, test);
  CHECK(s.d_z == 4);
  CHECK(s.d_h == 8);
  CHECK(s.z.size() / s.d_z == s.h.size() / s.d_h);
  CHECK(!s.z.empty());
  CHECK_THROWS_AS(collect_h_samples(*a.model, test, HTarget::Latents), UsageError);

  TrainConfig raw = a.cfg;
  raw.variant = Variant::Similarizer;
  raw.no_pregnn = true;
  const auto with_latents = prepare_split(raw, t, *a.vocab, Split::Test, nullptr);
  const HSamples l = collect_h_samples(*a.model, with_latents, HTarget::Latents);
  CHECK(l.z == s.z);  // raw latents are the features themselves
  CHECK(l.h == s.h);
}
