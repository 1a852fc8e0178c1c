#include <doctest.h>

#include <cmath>
#include <set>

#include "rglm/checks.hpp"
#include "rglm/error.hpp"
#include "rglm/ops.hpp"
#include "rglm/recon.hpp"
#include "rglm/rng.hpp"

using namespace rglm;

namespace {

Tensor rand_t(std::size_t r, std::size_t c, Rng& rng, bool grad = false) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.normal();
  return Tensor::from(r, c, std::move(v), grad);
}

void fill(Tensor t, double v) {
  for (double& x : t.mutable_values()) x = v;
}

}  // namespace

TEST_CASE("feat loss examples") {
  Rng rng(1);
  DecoderHead d = DecoderHead::create(4, 2, 8, 3, 0.4, 2.0, rng);
  fill(d.feature.w2, 0.0);
  const Tensor h = rand_t(1, 4, rng);
  CHECK(feat_loss(h, Tensor::from(1, 2, {3, 4}), d).item() == 25.0);

  // d_f returns the bias row for every node, so a matching target gives 0.
  Tensor b2 = d.feature.b2;
  b2.mutable_values()[0] = 0.25;
  b2.mutable_values()[1] = -2.0;
  CHECK(feat_loss(rand_t(3, 4, rng), Tensor::from(3, 2, {0.25, -2, 0.25, -2, 0.25, -2}), d)
            .item() == 0.0);

  CHECK_THROWS(feat_loss(rand_t(3, 4, rng), Tensor::zeros(2, 2), d));
}

TEST_CASE("feat loss matches a loop re-summation") {
  Rng rng(2);
  const DecoderHead d = DecoderHead::create(6, 3, 5, 3, 1.0, 1.0, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor h = rand_t(5, 6, rng);
    const Tensor z = rand_t(5, 3, rng);
    const Tensor out = d.feature(h);
    double want = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t k = 0; k < 3; ++k) want += std::pow(out.at(i, k) - z.at(i, k), 2);
    }
    CHECK(std::abs(feat_loss(h, z, d).item() - want / 5.0) <= 1e-12);
  }
}

TEST_CASE("negative sampling") {
  Rng rng(3);
  const std::vector<Edge> k4{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
  const auto none = sample_negative_edges(4, k4, 2, rng);
  CHECK(none.pairs.empty());
  CHECK(none.truncated);

  const std::vector<Edge> path{{0, 1}, {1, 2}, {2, 3}};
  const std::set<Edge> present(path.begin(), path.end());
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = sample_negative_edges(4, path, 2, rng);
    CHECK_FALSE(s.truncated);
    REQUIRE(s.pairs.size() == 2);
    CHECK(s.pairs[0] != s.pairs[1]);
    for (auto [i, j] : s.pairs) {
      CHECK(i < j);
      CHECK_FALSE(present.contains({i, j}));
    }
  }
  const auto all = sample_negative_edges(4, path, 5, rng);
  CHECK(all.truncated);
  CHECK(all.pairs.size() == 3);

  Rng a(9), b(9);
  CHECK(sample_negative_edges(10, path, 6, a).pairs == sample_negative_edges(10, path, 6, b).pairs);
}

TEST_CASE("topo loss at zero logits and in the limit") {
  Rng rng(4);
  DecoderHead d = DecoderHead::create(4, 2, 8, 3, 0.4, 2.0, rng);
  const Tensor h = rand_t(4, 4, rng);
  const std::vector<Edge> pos{{0, 1}, {2, 3}}, neg{{0, 2}};
  {
    DecoderHead z = d;
    z.structure_w = Tensor::zeros(4, 3);
    CHECK(topo_loss(h, pos, neg, z).item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  }
  // Rows 0,1 and 2,3 share directions; 0 and 2 are opposed, so scaling W
  // pushes positive logits up and the negative one down.
  const Tensor hh = Tensor::from(4, 4, {1, 0, 0, 0, 1, 0, 0, 0, -1, 0, 0, 0, -1, 0, 0, 0});
  DecoderHead big = d;
  big.structure_w = Tensor::from(4, 1, {200, 0, 0, 0});
  const std::vector<Edge> pos2{{0, 1}, {2, 3}}, neg2{{0, 2}};
  CHECK(topo_loss(hh, pos2, neg2, big).item() < 1e-12);
  CHECK_THROWS_AS(topo_loss(h, {}, neg, d), UsageError);
  CHECK_THROWS_AS(topo_loss(h, pos, {}, d), UsageError);
}

TEST_CASE("decoder losses match finite differences") {
  Rng rng(5);
  const DecoderHead d = DecoderHead::create(5, 3, 6, 4, 1.0, 1.0, rng);
  const Tensor h = rand_t(4, 5, rng, true);
  const Tensor z = rand_t(4, 3, rng);
  const std::vector<Edge> pos{{0, 1}, {1, 2}}, neg{{0, 3}, {2, 3}};
  auto ps = d.params.params();
  ps.push_back({"h", h});
  CHECK(grad_check([&] { return topo_loss(h, pos, neg, d); }, ps).max_rel_error <= 1e-4);
  CHECK(grad_check([&] { return feat_loss(h, z, d); }, ps).max_rel_error <= 1e-4);
}

TEST_CASE("cosine loss examples") {
  const Tensor a = Tensor::from(2, 2, {1, 0, 0, 2});
  CHECK(cosine_loss(a, a).item() == doctest::Approx(0.0));
  CHECK(cosine_loss(a, scale(a, 3.0)).item() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_loss(a, scale(a, -1.0)).item() == doctest::Approx(2.0));
  CHECK(cosine_loss(a, Tensor::from(2, 2, {0, 1, 3, 0})).item() == doctest::Approx(1.0));
  CHECK(cosine_loss(a, Tensor::from(2, 2, {2, 0, 1, 0})).item() == doctest::Approx(0.5));
  try {
    cosine_loss(a, Tensor::from(2, 2, {1, 0, 0, 0}));
    FAIL("no error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
  // Whole-matrix variant: one cosine of the flattened matrices.
  const Tensor b = Tensor::from(2, 2, {1, 0, 0, -2});
  CHECK(cosine_loss(a, b, true).item() == doctest::Approx(1.0 + 3.0 / 5.0));
}

TEST_CASE("sim loss stays in [0, 2]") {
  Rng rng(6);
  const SimilarizerHead s = SimilarizerHead::create(6, 4, 8, 1.0, rng);
  for (int trial = 0; trial < 100; ++trial) {
    const double l = sim_loss(rand_t(5, 6, rng), rand_t(5, 4, rng), s).item();
    CHECK(l >= 0.0);
    CHECK(l <= 2.0);
  }
}

TEST_CASE("noise schedule") {
  const auto s = NoiseSchedule::linear(100);
  CHECK(s.steps == 100);
  CHECK(s.alpha_bar[0] == 1.0);
  double prod = 1.0;
  for (std::size_t t = 1; t <= 100; ++t) {
    prod *= 1.0 - s.beta[t];
    CHECK(s.alpha_bar[t] == prod);
    CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    if (t > 1) CHECK(s.sigma2[t] > 0.0);  // posterior variance vanishes at t = 1
  }
  CHECK(s.beta[1] == doctest::Approx(1e-4));
  CHECK(s.beta[100] == doctest::Approx(0.02));
  CHECK_THROWS_AS(NoiseSchedule::from_betas({}), ParameterError);
  CHECK_THROWS_AS(NoiseSchedule::from_betas({0.1, 1.0}), ParameterError);
  const auto back = NoiseSchedule::from_json(s.to_json());
  CHECK(back.alpha_bar == s.alpha_bar);
}

TEST_CASE("forward noise arithmetic") {
  const auto s = NoiseSchedule::from_betas({0.5});
  const Tensor e1 = forward_noise(Tensor::from(1, 2, {1, 0}), 1, Tensor::from(1, 2, {1, 1}), s);
  CHECK(e1.at(0, 0) == doctest::Approx(1.41421356237).epsilon(1e-10));
  CHECK(e1.at(0, 1) == doctest::Approx(0.70710678118).epsilon(1e-10));
  CHECK_THROWS_AS(forward_noise(Tensor::zeros(1, 2), 0, Tensor::zeros(1, 2), s), ParameterError);
  CHECK_THROWS_AS(forward_noise(Tensor::zeros(1, 2), 2, Tensor::zeros(1, 2), s), ParameterError);

  const auto flat = NoiseSchedule::from_betas({0.0, 0.0, 0.0});
  const Tensor e = Tensor::from(1, 3, {0.5, -1, 2});
  for (std::size_t t = 1; t <= 3; ++t) {
    const Tensor et = forward_noise(e, t, Tensor::from(1, 3, {9, 9, 9}), flat);
    CHECK(std::vector<double>(et.values().begin(), et.values().end()) ==
          std::vector<double>(e.values().begin(), e.values().end()));
  }
}

TEST_CASE("forward noise variance matches the schedule") {
  const auto s = NoiseSchedule::linear(100);
  const std::size_t t = 40;
  const Tensor e = Tensor::from(1, 2, {1.5, -0.5});
  Rng rng(7);
  const int n = 100000;
  double sum[2] = {0, 0}, sq[2] = {0, 0};
  for (int i = 0; i < n; ++i) {
    const Tensor eps = Tensor::from(1, 2, {rng.normal(), rng.normal()});
    const Tensor et = forward_noise(e, t, eps, s);
    for (std::size_t k = 0; k < 2; ++k) {
      const double r = et.at(0, k) - std::sqrt(s.alpha_bar[t]) * e.at(0, k);
      sum[k] += r;
      sq[k] += r * r;
    }
  }
  const double want = 1.0 - s.alpha_bar[t];
  const double se = want * std::sqrt(2.0 / n);
  for (std::size_t k = 0; k < 2; ++k) {
    const double m = sum[k] / n;
    const double var = sq[k] / n - m * m;
    CHECK(std::abs(var - want) <= 3.0 * se);
  }
}

TEST_CASE("zero denoiser has unit expected loss") {
  DenoiserHead::Config c;
  c.d_model = 8;
  c.d_e = 4;
  c.d_hidden = 8;
  Rng rng(8);
  DenoiserHead head(c, NoiseSchedule::linear(100), 1.0, rng);
  head.zero_output();
  const Tensor e = rand_t(3, 4, rng);
  const Tensor h = rand_t(3, 8, rng);
  NoGradGuard ng;
  double total = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) total += diff_loss(head, e, h, rng).item();
  CHECK(std::abs(total / n - 1.0) <= 0.05);

  // Teacher-forced oracle that returns the true noise.
  const auto sample = draw_diffusion_sample(head.schedule(), e, rng);
  CHECK(noise_mse(sample.eps, sample.eps).item() == 0.0);
}

TEST_CASE("denoiser loss matches finite differences through f, t-projection and H") {
  DenoiserHead::Config c;
  c.d_model = 6;
  c.d_e = 4;
  c.d_hidden = 8;
  c.n_heads = 2;
  Rng rng(9);
  DenoiserHead head(c, NoiseSchedule::linear(50), 1.0, rng);
  const Tensor e = rand_t(3, 4, rng);
  const Tensor h = rand_t(3, 6, rng, true);
  const auto sample = draw_diffusion_sample(head.schedule(), e, rng);
  auto ps = head.params().params();
  ps.push_back({"h", h});
  CHECK(grad_check([&] { return diff_loss_at(head, e, h, sample); }, ps).max_rel_error <= 1e-4);
}

TEST_CASE("timestep embedding is defined and distinct over all steps") {
  std::set<std::vector<double>> seen;
  for (std::size_t t = 1; t <= 100; ++t) {
    const Tensor emb = timestep_embedding(t, 8);
    CHECK(emb.cols() == 8);
    for (double x : emb.values()) CHECK(std::isfinite(x));
    seen.insert({emb.values().begin(), emb.values().end()});
  }
  CHECK(seen.size() == 100);
}

TEST_CASE("graph loss weighting") {
  Rng rng(10);
  ReconHeads heads;
  heads.decoder = DecoderHead::create(4, 2, 8, 3, 0.4, 2.0, rng);
  fill(heads.decoder->feature.w2, 0.0);
  heads.decoder->structure_w = Tensor::zeros(4, 3);
  // Three-node path: one absent pair, squared feature norms averaging 25.
  GraphTargets tg{Tensor::from(3, 2, {3, 4, 0, 5, 5, 0}), {{0, 1}, {1, 2}}, std::nullopt};
  const Tensor h = rand_t(3, 4, rng);
  const GraphLoss gl = graph_loss(Variant::Decoder, heads, h, tg, rng);
  CHECK(gl.feat == 25.0);
  CHECK(gl.topo == doctest::Approx(1.3862943611));
  CHECK(gl.total.item() == doctest::Approx(12.7726).epsilon(1e-5));

  heads.decoder->lambda_f = 0.0;
  heads.decoder->lambda_s = 0.0;
  CHECK(graph_loss(Variant::Decoder, heads, h, tg, rng).total.item() == 0.0);
  CHECK(graph_loss(Variant::Vanilla, heads, h, tg, rng).total.item() == 0.0);

  // Latent variants scale linearly in lambda_l.
  heads.similarizer = SimilarizerHead::create(4, 3, 8, 1.0, rng);
  tg.latent = rand_t(3, 3, rng);
  const double s1 = graph_loss(Variant::Similarizer, heads, h, tg, rng).total.item();
  heads.similarizer->lambda_l = 2.0;
  CHECK(graph_loss(Variant::Similarizer, heads, h, tg, rng).total.item() == 2.0 * s1);

  DenoiserHead::Config dc;
  dc.d_model = 4;
  dc.d_e = 3;
  dc.d_hidden = 8;
  heads.denoiser = DenoiserHead(dc, NoiseSchedule::linear(20), 1.0, rng);
  Rng a(3), b(3);
  const double d1 = graph_loss(Variant::Denoiser, heads, h, tg, a).total.item();
  heads.denoiser->lambda_l = 2.0;
  CHECK(graph_loss(Variant::Denoiser, heads, h, tg, b).total.item() == 2.0 * d1);

  tg.latent.reset();
  CHECK_THROWS_AS(graph_loss(Variant::Similarizer, heads, h, tg, rng), ConfigError);
  CHECK_THROWS_AS(graph_loss(Variant::Denoiser, heads, h, tg, rng), ConfigError);
  ReconHeads empty;
  CHECK_THROWS_AS(graph_loss(Variant::Decoder, empty, h, tg, rng), ConfigError);
}

TEST_CASE("combined loss is an exact sum") {
  CHECK(combined_loss(Tensor::scalar(2.0794), Tensor::scalar(0.0)).item() == 2.0794);
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.normal(), b = rng.normal();
    CHECK(combined_loss(Tensor::scalar(a), Tensor::scalar(b)).item() == a + b);
  }
  CHECK_THROWS_AS(combined_loss(Tensor::scalar(NAN), Tensor::scalar(0.0)), NumericError);
  CHECK_THROWS_AS(combined_loss(Tensor::scalar(1.0), Tensor::scalar(INFINITY)), NumericError);

  // The gradient of the sum is the sum of the gradients.
  Tensor w = rand_t(3, 2, rng, true);
  const Tensor x = rand_t(4, 3, rng);
  auto text = [&] { return mean(square(matmul(x, w))); };
  auto graph = [&] { return sum(tanh(matmul(x, w))); };
  text().backward();
  const auto g1 = w.grad();
  w.zero_grad();
  graph().backward();
  const auto g2 = w.grad();
  w.zero_grad();
  combined_loss(text(), graph()).backward();
  const auto g = w.grad();
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(g1[i] + g2[i]));
  CHECK(grad_check([&] { return combined_loss(text(), graph()); }, {{"w", w}}).max_rel_error <=
        1e-6);
}

TEST_CASE("lower bound reports") {
  BoundInputs in;
  in.feat = 1.0;
  in.topo = 1.0;
  in.lambda_f = 1.0;
  in.lambda_s = 1.0;
  const auto r = report_lower_bound(Variant::Decoder, in);
  CHECK(r.value == -2.0);
  CHECK(r.constants_placeholder);

  BoundInputs d;
  d.lambda_l = 0.8;
  d.diff = 1.0;
  const double before = report_lower_bound(Variant::Denoiser, d).value;
  d.diff = 0.5;
  CHECK(report_lower_bound(Variant::Denoiser, d).value - before == doctest::Approx(0.8 * 0.5));

  BoundInputs s;
  s.lambda_l = 1.2;
  double prev = -1e300;
  for (double l = 2.0; l >= 0.0; l -= 0.1) {
    s.sim = l;
    const double v = report_lower_bound(Variant::Similarizer, s).value;
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("latent and decoder losses pass grad_check through the full stack") {
  for (const auto& e : grad_suite(16, 3, {"feat", "topo", "sim", "diff"})) {
    CAPTURE(e.loss);
    CAPTURE(e.worst_param);
    CHECK(e.max_rel_error <= 1e-4);
  }
}
