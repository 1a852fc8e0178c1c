#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "rglm/error.hpp"
#include "rglm/gnn.hpp"
#include "rglm/ops.hpp"
#include "rglm/rng.hpp"
#include "rglm/tag.hpp"

using namespace rglm;

namespace {

GnnConfig small_cfg(std::size_t d_z, std::size_t classes) {
  GnnConfig c;
  c.d_z = d_z;
  c.num_classes = classes;
  c.d_e = 8;
  c.n_layers = 3;
  c.d_label = 4;
  c.pe_k = 2;
  c.rw_steps = 3;
  return c;
}

double accuracy_on(const GnnEncoder& enc, const Tag& tag, Split split) {
  NoGradGuard ng;
  const GnnGraph g = make_gnn_graph(tag.node_count, tag.edges, tag.features, enc.config());
  std::vector<std::optional<std::size_t>> hidden(tag.node_count);
  const Tensor logits = enc.classify(enc.forward(g, hidden).mu);
  const auto nodes = tag.nodes_in(split);
  std::size_t correct = 0;
  for (std::size_t v : nodes) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      if (logits.at(v, c) > logits.at(v, best)) best = c;
    }
    correct += best == *tag.labels[v];
  }
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

}  // namespace

TEST_CASE("path laplacian spectrum") {
  const std::vector<Edge> path{{0, 1}, {1, 2}};
  const LapPe pe = lap_pe(3, path, 2);
  REQUIRE(pe.k == 2);
  CHECK(pe.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(pe.eigenvalues[1] == doctest::Approx(3.0).epsilon(1e-10));
  // Unit columns, orthogonal, first significant entry positive.
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t b = 0; b < 2; ++b) {
      double dot = 0.0;
      for (std::size_t v = 0; v < 3; ++v) dot += pe.vectors[v * 2 + a] * pe.vectors[v * 2 + b];
      CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) <= 1e-8);
    }
    for (std::size_t v = 0; v < 3; ++v) {
      const double x = pe.vectors[v * 2 + a];
      if (std::abs(x) > 1e-12) {
        CHECK(x > 0.0);
        break;
      }
    }
  }
  // Eigenvector check: L v = lambda v.
  const double lap[9] = {1, -1, 0, -1, 2, -1, 0, -1, 1};
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < 3; ++i) {
      double lv = 0.0;
      for (std::size_t j = 0; j < 3; ++j) lv += lap[i * 3 + j] * pe.vectors[j * 2 + c];
      CHECK(std::abs(lv - pe.eigenvalues[c] * pe.vectors[i * 2 + c]) <= 1e-8);
    }
  }
  CHECK_THROWS_AS(lap_pe(3, path, 3), ParameterError);
}

TEST_CASE("complete graph spectrum and disconnected graphs") {
  const std::vector<Edge> k3{{0, 1}, {0, 2}, {1, 2}};
  const LapPe pe = lap_pe(3, k3, 2);
  CHECK(pe.eigenvalues[0] == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(pe.eigenvalues[1] == doctest::Approx(3.0).epsilon(1e-10));
  // Two disjoint edges: eigenvalues {0, 0, 2, 2}; the zeros are skipped.
  const std::vector<Edge> two{{0, 1}, {2, 3}};
  const LapPe d = lap_pe(4, two, 2);
  CHECK(d.eigenvalues[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(d.eigenvalues[1] == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("random-walk return probabilities") {
  const std::vector<Edge> tri{{0, 1}, {0, 2}, {1, 2}};
  const auto r = rwse(3, tri, 3);
  for (std::size_t v = 0; v < 3; ++v) {
    CHECK(r[v * 3 + 0] == 0.0);
    CHECK(r[v * 3 + 1] == doctest::Approx(0.5));
    CHECK(r[v * 3 + 2] == doctest::Approx(0.25));
  }
  const std::vector<Edge> pair{{0, 1}};
  const auto p = rwse(2, pair, 2);
  CHECK(p[1] == doctest::Approx(1.0));
  CHECK(p[3] == doctest::Approx(1.0));
  const auto iso = rwse(3, pair, 2);
  CHECK(iso[4] == 0.0);
  CHECK(iso[5] == 0.0);

  SyntheticSpec s;
  s.seed = 4;
  const Tag t = generate_synthetic_tag(s);
  for (double x : rwse(t, 6)) {
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
  }
}

TEST_CASE("kl and masked label loss") {
  CHECK(kl_standard_normal(Tensor::zeros(3, 4), Tensor::zeros(3, 4)).item() == 0.0);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Tensor mu = Tensor::from(2, 2, {rng.normal(), rng.normal(), rng.normal(), rng.normal()});
    const Tensor lv = Tensor::from(2, 2, {rng.normal(), rng.normal(), rng.normal(), rng.normal()});
    CHECK(kl_standard_normal(mu, lv).item() > 0.0);
  }
  const std::vector<std::size_t> rows{0, 2}, labels{1, 3};
  CHECK(masked_label_loss(Tensor::zeros(3, 5), rows, labels).item() ==
        doctest::Approx(std::log(5.0)));
}

TEST_CASE("masking is seeded and sized") {
  std::vector<std::size_t> train(37);
  std::iota(train.begin(), train.end(), 100);
  Rng a(5), b(5), c(6);
  const auto m = choose_masked(train, 0.8, a);
  CHECK(m.size() == 30);
  CHECK(std::is_sorted(m.begin(), m.end()));
  CHECK(std::adjacent_find(m.begin(), m.end()) == m.end());
  for (std::size_t v : m) CHECK(std::binary_search(train.begin(), train.end(), v));
  CHECK(choose_masked(train, 0.8, b) == m);
  CHECK(choose_masked(train, 0.8, c) != m);
  CHECK(choose_masked(train, 1.0, a).size() == 37);
}

TEST_CASE("pretrain loss gradient on a ten-node graph") {
  SyntheticSpec s;
  s.nodes = 10;
  s.classes = 2;
  s.d_z = 3;
  s.intra_p = 0.6;
  s.inter_p = 0.2;
  s.seed = 2;
  const Tag t = generate_synthetic_tag(s);
  for (bool pair_bias : {false, true}) {
    GnnConfig c = small_cfg(3, 2);
    c.pair_bias = pair_bias;
    Rng rng(3);
    const GnnEncoder enc(c, rng);
    const GnnGraph g = make_gnn_graph(t.node_count, t.edges, t.features, c);
    std::vector<std::optional<std::size_t>> labels(10);
    for (std::size_t v = 0; v < 10; v += 2) labels[v] = t.labels[v];
    const std::vector<std::size_t> masked{0, 4, 8};
    std::vector<double> eps(10 * c.d_e);
    for (double& e : eps) e = rng.normal();
    const Tensor noise = Tensor::from(10, c.d_e, eps);
    auto f = [&] { return pretrain_loss(enc, g, labels, masked, noise).total; };
    CHECK(grad_check(f, enc.params().params()).max_rel_error <= 1e-4);
  }
}

TEST_CASE("degenerate block model is learned perfectly") {
  SyntheticSpec s;
  s.nodes = 40;
  s.classes = 2;
  s.d_z = 4;
  s.intra_p = 1.0;
  s.inter_p = 0.0;
  s.feature_noise = 0.0;
  s.seed = 1;
  const Tag t = generate_synthetic_tag(s);
  PretrainConfig pc;
  pc.epochs = 60;
  pc.seed = 2;
  PretrainReport rep;
  const GnnEncoder enc = pretrain(t, small_cfg(4, 2), pc, &rep);
  CHECK(enc.frozen());
  CHECK(rep.loss.size() == 60);
  CHECK(rep.train_accuracy == 1.0);
}

TEST_CASE("pure-noise features give chance accuracy") {
  SyntheticSpec s;
  s.nodes = 600;
  s.classes = 4;
  s.d_z = 8;
  s.intra_p = 0.02;
  s.inter_p = 0.0199;
  s.feature_noise = 50.0;  // prototypes have unit scale
  s.train_frac = 0.5;
  s.val_frac = 0.1;
  s.seed = 3;
  const Tag t = generate_synthetic_tag(s);
  PretrainConfig pc;
  pc.epochs = 40;
  const GnnEncoder enc = pretrain(t, small_cfg(8, 4), pc);
  const double acc = accuracy_on(enc, t, Split::Test);
  CHECK(std::abs(acc - 0.25) <= 0.1);
}

TEST_CASE("pretrain configuration errors") {
  SyntheticSpec s;
  s.nodes = 20;
  s.classes = 2;
  s.d_z = 4;
  Tag t = generate_synthetic_tag(s);
  PretrainConfig pc;
  pc.epochs = 1;
  CHECK_THROWS_AS(pretrain(t, small_cfg(5, 2), pc), ConfigError);
  pc.mask_ratio = 0.0;
  CHECK_THROWS_AS(pretrain(t, small_cfg(4, 2), pc), ConfigError);
  pc.mask_ratio = 0.8;
  for (auto& l : t.labels) l.reset();
  CHECK_THROWS_AS(pretrain(t, small_cfg(4, 2), pc), ConfigError);
}

TEST_CASE("targets are deterministic, sized and permutation equivariant") {
  SyntheticSpec s;
  s.nodes = 60;
  s.classes = 3;
  s.d_z = 4;
  s.intra_p = 0.2;
  s.inter_p = 0.02;
  s.seed = 8;
  const Tag t = generate_synthetic_tag(s);
  PretrainConfig pc;
  pc.epochs = 5;
  const GnnConfig gc = small_cfg(4, 3);
  const GnnEncoder enc = pretrain(t, gc, pc);

  Rng pick(4);
  std::size_t tested = 0;
  for (std::size_t center = 0; center < t.node_count && tested < 5; ++center) {
    Rng r0(0);
    const Subgraph sub = sample_subgraph(t, center, 2, r0);
    if (sub.size() < 5) continue;
    // Equivariance is only defined when the positional eigenspaces are simple.
    const LapPe lp = lap_pe(sub.size(), sub.edges, std::min(gc.pe_k + 1, sub.size() - 1));
    bool simple = lp.eigenvalues.size() == gc.pe_k + 1;
    for (std::size_t i = 1; i < lp.eigenvalues.size(); ++i) {
      simple = simple && lp.eigenvalues[i] - lp.eigenvalues[i - 1] > 1e-6;
    }
    if (!simple) continue;
    ++tested;

    const Tensor e = encode_targets(enc, sub);
    CHECK(e.rows() == sub.size());
    CHECK(e.cols() == gc.d_e);
    const Tensor again = encode_targets(enc, sub);
    CHECK(std::equal(e.values().begin(), e.values().end(), again.values().begin()));

    // new local i holds old local perm[i]
    std::vector<std::size_t> perm(sub.size()), inv(sub.size());
    std::iota(perm.begin(), perm.end(), 0);
    pick.shuffle(perm);
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    Subgraph p = sub;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      p.node_ids[i] = sub.node_ids[perm[i]];
      p.hop_of[i] = sub.hop_of[perm[i]];
      for (std::size_t k = 0; k < sub.d_z; ++k) p.features[i * sub.d_z + k] = sub.feature(perm[i])[k];
    }
    p.edges.clear();
    for (auto [a, b] : sub.edges) p.edges.emplace_back(std::min(inv[a], inv[b]), std::max(inv[a], inv[b]));
    std::sort(p.edges.begin(), p.edges.end());
    const Tensor ep = encode_targets(enc, p);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      for (std::size_t c = 0; c < gc.d_e; ++c) CHECK(std::abs(ep.at(i, c) - e.at(perm[i], c)) <= 1e-8);
    }
  }
  CHECK(tested >= 3);

  Rng rng(1);
  GnnEncoder loose(gc, rng);
  Rng r0(0);
  const Subgraph sub = sample_subgraph(t, 0, 1, r0);
  CHECK_THROWS_AS(encode_targets(loose, sub), UsageError);
  Subgraph wide = sub;
  wide.d_z = 2;
  CHECK_THROWS_AS(encode_targets(enc, wide), DimensionError);
}

TEST_CASE("encoder save and load") {
  SyntheticSpec s;
  s.nodes = 30;
  s.classes = 2;
  s.d_z = 4;
  const Tag t = generate_synthetic_tag(s);
  PretrainConfig pc;
  pc.epochs = 3;
  const GnnEncoder enc = pretrain(t, small_cfg(4, 2), pc);
  const auto path = std::filesystem::temp_directory_path() / "rglm_gnn_test.json";
  save_encoder(enc, path);
  const GnnEncoder back = load_encoder(path);
  CHECK(back.frozen());
  CHECK(back.config().to_json() == enc.config().to_json());
  Rng r0(0);
  const Subgraph sub = sample_subgraph(t, 3, 2, r0);
  const Tensor a = encode_targets(enc, sub), b = encode_targets(back, sub);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  std::filesystem::remove(path);
}

TEST_CASE("config validation") {
  GnnConfig c = small_cfg(4, 2);
  c.n_layers = 0;
  CHECK_THROWS(c.validate());
  c = small_cfg(4, 2);
  CHECK(GnnConfig::from_json(c.to_json()).to_json() == c.to_json());
  c.pair_bias = true;
  std::vector<double> f(250 * 4, 0.0);
  CHECK_THROWS_AS(make_gnn_graph(250, {}, f, c), ConfigError);
}
