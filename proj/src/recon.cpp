#include "rglm/recon.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "rglm/error.hpp"
#include "rglm/ops.hpp"

namespace rglm {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Vanilla:
      return "vanilla";
    case Variant::Decoder:
      return "decoder";
    case Variant::Similarizer:
      return "similarizer";
    case Variant::Denoiser:
      return "denoiser";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "vanilla") return Variant::Vanilla;
  if (s == "decoder") return Variant::Decoder;
  if (s == "similarizer") return Variant::Similarizer;
  if (s == "denoiser") return Variant::Denoiser;
  throw ConfigError("unknown variant \"" + s + "\"");
}

Mlp Mlp::create(ParameterStore& store, const std::string& name, std::size_t in,
                std::size_t hidden, std::size_t out, Rng& rng) {
  Mlp m;
  m.w1 = store.add_glorot(name + ".w1", in, hidden, rng);
  m.b1 = store.add_zeros(name + ".b1", 1, hidden);
  m.w2 = store.add_glorot(name + ".w2", hidden, out, rng);
  m.b2 = store.add_zeros(name + ".b2", 1, out);
  return m;
}

Tensor Mlp::operator()(const Tensor& x) const {
  return add(matmul(gelu(add(matmul(x, w1), b1)), w2), b2);
}

DecoderHead DecoderHead::create(std::size_t d_model, std::size_t d_z, std::size_t hidden,
                                std::size_t d_proj, double lambda_f, double lambda_s, Rng& rng) {
  if (lambda_f < 0.0 || lambda_s < 0.0) {
    throw ParameterError("decoder head: loss weights must be nonnegative");
  }
  DecoderHead head;
  head.feature = Mlp::create(head.params, "feat", d_model, hidden, d_z, rng);
  head.structure_w = head.params.add_glorot("struct.w", d_model, d_proj, rng);
  head.lambda_f = lambda_f;
  head.lambda_s = lambda_s;
  return head;
}

Tensor DecoderHead::score_pairs(const Tensor& h, std::span<const Edge> pairs) const {
  std::vector<std::size_t> left, right;
  for (const auto& [i, j] : pairs) {
    left.push_back(i);
    right.push_back(j);
  }
  Tensor p = matmul(h, structure_w);
  return sum(mul(gather_rows(p, left), gather_rows(p, right)), 1);
}

Tensor feat_loss(const Tensor& h, const Tensor& z, const DecoderHead& head) {
  if (h.rows() != z.rows()) {
    throw UsageError("feat_loss: " + std::to_string(h.rows()) + " H rows vs " +
                     std::to_string(z.rows()) + " feature rows");
  }
  Tensor diff = sub(head.feature(h), z);
  return scale(sum(square(diff)), 1.0 / static_cast<double>(h.rows()));
}

NegativeSample sample_negative_edges(std::size_t node_count, std::span<const Edge> edges,
                                     std::size_t count, Rng& rng) {
  std::set<Edge> present;
  for (const auto& [u, v] : edges) {
    present.insert({std::min(u, v), std::max(u, v)});
  }
  const std::size_t total_pairs = node_count * (node_count - (node_count > 0 ? 1 : 0)) / 2;
  const std::size_t absent = total_pairs - present.size();
  NegativeSample out;
  if (absent <= count) {
    for (std::size_t i = 0; i < node_count; ++i) {
      for (std::size_t j = i + 1; j < node_count; ++j) {
        if (!present.contains({i, j})) {
          out.pairs.emplace_back(i, j);
        }
      }
    }
    rng.shuffle(out.pairs);
    out.truncated = absent < count;
    return out;
  }
  std::set<Edge> chosen;
  while (out.pairs.size() < count) {
    std::size_t i = rng.uniform_int(node_count);
    std::size_t j = rng.uniform_int(node_count);
    if (i == j) {
      continue;
    }
    Edge e{std::min(i, j), std::max(i, j)};
    if (present.contains(e) || !chosen.insert(e).second) {
      continue;
    }
    out.pairs.push_back(e);
  }
  return out;
}

Tensor topo_loss(const Tensor& h, std::span<const Edge> positives, std::span<const Edge> negatives,
                 const DecoderHead& head) {
  if (positives.empty() || negatives.empty()) {
    throw UsageError("topo_loss: empty edge set");
  }
  Tensor pos = mean(log_sigmoid(head.score_pairs(h, positives)));
  Tensor negs = mean(log_sigmoid(neg(head.score_pairs(h, negatives))));
  return neg(add(pos, negs));
}

SimilarizerHead SimilarizerHead::create(std::size_t d_model, std::size_t d_e,
                                        std::size_t hidden, double lambda_l, Rng& rng) {
  if (lambda_l < 0.0) {
    throw ParameterError("similarizer head: lambda_l must be nonnegative");
  }
  SimilarizerHead head;
  head.proj = Mlp::create(head.params, "sim", d_model, hidden, d_e, rng);
  head.lambda_l = lambda_l;
  return head;
}

Tensor cosine_loss(const Tensor& pred, const Tensor& target, bool whole_matrix) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("cosine_loss: shapes " + pred.shape().str() + " and " +
                         target.shape().str() + " differ");
  }
  if (whole_matrix) {
    Tensor dot = sum(mul(pred, target));
    Tensor pn = sqrt(sum(square(pred)));
    Tensor tn = sqrt(sum(square(target)));
    if (pn.item() == 0.0 || tn.item() == 0.0) {
      throw NumericError("cosine_loss: zero-norm matrix");
    }
    return add_scalar(neg(div(dot, mul(pn, tn))), 1.0);
  }
  Tensor pn = l2_norm(pred);
  Tensor tn = l2_norm(target);
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    if (pn.at(r, 0) == 0.0) {
      throw NumericError("cosine_loss: prediction row " + std::to_string(r) + " has zero norm");
    }
    if (tn.at(r, 0) == 0.0) {
      throw NumericError("cosine_loss: target row " + std::to_string(r) + " has zero norm");
    }
  }
  Tensor cos = sum(mul(div(pred, pn), div(target, tn)), 1);
  return add_scalar(neg(mean(cos)), 1.0);
}

Tensor sim_loss(const Tensor& h, const Tensor& target, const SimilarizerHead& head) {
  return cosine_loss(head.proj(h), target, head.whole_matrix);
}

NoiseSchedule NoiseSchedule::from_betas(const std::vector<double>& betas) {
  if (betas.empty()) {
    throw ParameterError("noise schedule: no steps");
  }
  NoiseSchedule s;
  s.steps = betas.size();
  s.beta.assign(1, 0.0);
  s.alpha_bar.assign(1, 1.0);
  s.sigma2.assign(1, 0.0);
  for (double b : betas) {
    if (!(b >= 0.0 && b < 1.0)) {
      throw ParameterError("noise schedule: beta must lie in [0, 1)");
    }
    s.beta.push_back(b);
    s.alpha_bar.push_back(s.alpha_bar.back() * (1.0 - b));
  }
  for (std::size_t t = 1; t <= s.steps; ++t) {
    const double denom = 1.0 - s.alpha_bar[t];
    s.sigma2.push_back(denom > 0.0 ? (1.0 - s.alpha_bar[t - 1]) / denom * s.beta[t] : 0.0);
  }
  return s;
}

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double f = steps > 1 ? static_cast<double>(i) / static_cast<double>(steps - 1) : 0.0;
    betas[i] = beta_start + f * (beta_end - beta_start);
  }
  return from_betas(betas);
}

nlohmann::json NoiseSchedule::to_json() const {
  return {{"T", steps}, {"beta", std::vector<double>(beta.begin() + 1, beta.end())}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  const auto betas = j.at("beta").get<std::vector<double>>();
  if (betas.size() != j.at("T").get<std::size_t>()) {
    throw ParseError("noise schedule: T differs from beta count");
  }
  return from_betas(betas);
}

Tensor forward_noise(const Tensor& e, std::size_t t, const Tensor& eps,
                     const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps) {
    throw ParameterError("forward_noise: timestep " + std::to_string(t) + " outside [1, " +
                         std::to_string(schedule.steps) + "]");
  }
  if (e.shape() != eps.shape()) {
    throw DimensionError("forward_noise: shapes " + e.shape().str() + " and " +
                         eps.shape().str() + " differ");
  }
  const double ab = schedule.alpha_bar[t];
  return add(scale(e, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

DiffusionSample draw_diffusion_sample(const NoiseSchedule& schedule, const Tensor& e, Rng& rng) {
  DiffusionSample s;
  s.t = 1 + rng.uniform_int(schedule.steps);
  std::vector<double> eps(e.size());
  for (double& x : eps) {
    x = rng.normal();
  }
  s.eps = Tensor::from(e.rows(), e.cols(), std::move(eps));
  s.noisy = forward_noise(e, s.t, s.eps, schedule);
  return s;
}

Tensor noise_mse(const Tensor& predicted, const Tensor& eps) {
  if (predicted.shape() != eps.shape()) {
    throw DimensionError("noise_mse: shapes " + predicted.shape().str() + " and " +
                         eps.shape().str() + " differ");
  }
  return mean(square(sub(predicted, eps)));
}

Tensor timestep_embedding(std::size_t t, std::size_t dim) {
  std::vector<double> v(dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    v[i] = std::sin(static_cast<double>(t) * freq);
    v[half + i] = std::cos(static_cast<double>(t) * freq);
  }
  return Tensor::from(1, dim, std::move(v));
}

DenoiserHead::DenoiserHead(const Config& cfg, NoiseSchedule schedule, double lambda,
                           Rng& rng)
    : lambda_l(lambda), cfg_(cfg), schedule_(std::move(schedule)) {
  if (lambda_l < 0.0) {
    throw ParameterError("denoiser head: lambda_l must be nonnegative");
  }
  if (cfg_.n_heads == 0 || cfg_.d_hidden % cfg_.n_heads != 0) {
    throw ParameterError("denoiser head: d_hidden must be divisible by n_heads");
  }
  const std::size_t d = cfg_.d_hidden;
  for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
    const std::string p = "block" + std::to_string(i);
    Block b;
    b.noisy_w = params_.add_glorot(p + ".noisy.w", cfg_.d_e, d, rng);
    b.noisy_b = params_.add_zeros(p + ".noisy.b", 1, d);
    b.cond_w = params_.add_glorot(p + ".cond.w", cfg_.d_model, d, rng);
    b.cond_b = params_.add_zeros(p + ".cond.b", 1, d);
    b.time_w = params_.add_glorot(p + ".time.w", d, d, rng);
    b.time_b = params_.add_zeros(p + ".time.b", 1, d);
    b.ln1_g = params_.add_const(p + ".ln1.g", 1, d, 1.0);
    b.ln1_b = params_.add_zeros(p + ".ln1.b", 1, d);
    b.wq = params_.add_glorot(p + ".wq", d, d, rng);
    b.wk = params_.add_glorot(p + ".wk", d, d, rng);
    b.wv = params_.add_glorot(p + ".wv", d, d, rng);
    b.wo = params_.add_glorot(p + ".wo", d, d, rng);
    b.ln2_g = params_.add_const(p + ".ln2.g", 1, d, 1.0);
    b.ln2_b = params_.add_zeros(p + ".ln2.b", 1, d);
    b.fc1_w = params_.add_glorot(p + ".fc1.w", d, 2 * d, rng);
    b.fc1_b = params_.add_zeros(p + ".fc1.b", 1, 2 * d);
    b.fc2_w = params_.add_glorot(p + ".fc2.w", 2 * d, d, rng);
    b.fc2_b = params_.add_zeros(p + ".fc2.b", 1, d);
    blocks_.push_back(std::move(b));
  }
  lnf_g_ = params_.add_const("ln_f.g", 1, d, 1.0);
  lnf_b_ = params_.add_zeros("ln_f.b", 1, d);
  out_w_ = params_.add_glorot("out.w", d, cfg_.d_e, rng);
  out_b_ = params_.add_zeros("out.b", 1, cfg_.d_e);
}

Tensor DenoiserHead::predict(const Tensor& e_t, const Tensor& h, std::size_t t) const {
  if (e_t.cols() != cfg_.d_e || h.cols() != cfg_.d_model || e_t.rows() != h.rows()) {
    throw DimensionError("denoiser: noisy input " + e_t.shape().str() + " / condition " +
                         h.shape().str() + " do not match the head");
  }
  const std::size_t d = cfg_.d_hidden;
  const std::size_t dh = d / cfg_.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor temb = timestep_embedding(t, d);
  Tensor x = Tensor::zeros(e_t.rows(), d);
  for (const Block& b : blocks_) {
    x = add(x, add(matmul(e_t, b.noisy_w), b.noisy_b));
    x = add(x, add(matmul(h, b.cond_w), b.cond_b));
    x = add(x, add(matmul(temb, b.time_w), b.time_b));
    Tensor hn = add(mul(layer_norm(x), b.ln1_g), b.ln1_b);
    Tensor q = matmul(hn, b.wq);
    Tensor k = matmul(hn, b.wk);
    Tensor v = matmul(hn, b.wv);
    std::vector<Tensor> heads;
    for (std::size_t i = 0; i < cfg_.n_heads; ++i) {
      Tensor qh = slice_cols(q, i * dh, (i + 1) * dh);
      Tensor kh = slice_cols(k, i * dh, (i + 1) * dh);
      Tensor vh = slice_cols(v, i * dh, (i + 1) * dh);
      heads.push_back(matmul(softmax(scale(matmul(qh, transpose(kh)), inv_sqrt)), vh));
    }
    x = add(x, matmul(concat_cols(heads), b.wo));
    Tensor h2 = add(mul(layer_norm(x), b.ln2_g), b.ln2_b);
    x = add(x, add(matmul(gelu(add(matmul(h2, b.fc1_w), b.fc1_b)), b.fc2_w), b.fc2_b));
  }
  Tensor xf = add(mul(layer_norm(x), lnf_g_), lnf_b_);
  return add(matmul(xf, out_w_), out_b_);
}

void DenoiserHead::zero_output() {
  for (Tensor* t : {&out_w_, &out_b_}) {
    auto v = t->mutable_values();
    std::fill(v.begin(), v.end(), 0.0);
  }
}

Tensor diff_loss(const DenoiserHead& head, const Tensor& e, const Tensor& h, Rng& rng) {
  return diff_loss_at(head, e, h, draw_diffusion_sample(head.schedule(), e, rng));
}

Tensor diff_loss_at(const DenoiserHead& head, const Tensor& e, const Tensor& h,
                    const DiffusionSample& sample) {
  if (e.rows() != h.rows()) {
    throw UsageError("diff_loss: " + std::to_string(e.rows()) + " latent rows vs " +
                     std::to_string(h.rows()) + " H rows");
  }
  return noise_mse(head.predict(sample.noisy, h, sample.t), sample.eps);
}

std::vector<Parameter> ReconHeads::params() const {
  std::vector<Parameter> out;
  auto append = [&](const std::string& prefix, const ParameterStore& s) {
    for (const auto& p : s.params()) {
      out.push_back({prefix + p.name, p.tensor});
    }
  };
  if (decoder) append("decoder.", decoder->params);
  if (similarizer) append("similarizer.", similarizer->params);
  if (denoiser) append("denoiser.", denoiser->params());
  return out;
}

GraphLoss graph_loss(Variant variant, const ReconHeads& heads, const Tensor& h,
                     const GraphTargets& targets, Rng& rng) {
  GraphLoss out;
  out.total = Tensor::scalar(0.0);
  switch (variant) {
    case Variant::Vanilla:
      return out;
    case Variant::Decoder: {
      if (!heads.decoder) {
        throw ConfigError("graph_loss: decoder head missing");
      }
      const DecoderHead& d = *heads.decoder;
      std::vector<Tensor> terms;
      if (d.lambda_f > 0.0) {
        Tensor f = feat_loss(h, targets.features, d);
        out.feat = f.item();
        terms.push_back(scale(f, d.lambda_f));
      }
      const auto negatives =
          d.lambda_s > 0.0 && !targets.positives.empty()
              ? sample_negative_edges(h.rows(), targets.positives, targets.positives.size(), rng)
                    .pairs
              : std::vector<Edge>{};
      // A complete subgraph has no absent pair to contrast against.
      if (!negatives.empty()) {
        Tensor t = topo_loss(h, targets.positives, negatives, d);
        out.topo = t.item();
        terms.push_back(scale(t, d.lambda_s));
      }
      for (const Tensor& t : terms) {
        out.total = add(out.total, t);
      }
      return out;
    }
    case Variant::Similarizer: {
      if (!heads.similarizer) {
        throw ConfigError("graph_loss: similarizer head missing");
      }
      if (!targets.latent) {
        throw ConfigError("graph_loss: similarizer needs pre-trained latent targets");
      }
      Tensor s = sim_loss(h, *targets.latent, *heads.similarizer);
      out.sim = s.item();
      out.total = scale(s, heads.similarizer->lambda_l);
      return out;
    }
    case Variant::Denoiser: {
      if (!heads.denoiser) {
        throw ConfigError("graph_loss: denoiser head missing");
      }
      if (!targets.latent) {
        throw ConfigError("graph_loss: denoiser needs pre-trained latent targets");
      }
      Tensor d = diff_loss(*heads.denoiser, *targets.latent, h, rng);
      out.diff = d.item();
      out.total = scale(d, heads.denoiser->lambda_l);
      return out;
    }
  }
  return out;
}

Tensor combined_loss(const Tensor& text, const Tensor& graph) {
  if (!std::isfinite(text.item()) || !std::isfinite(graph.item())) {
    throw NumericError("combined_loss: non-finite component (text " +
                       std::to_string(text.item()) + ", graph " +
                       std::to_string(graph.item()) + ")");
  }
  return add(text, graph);
}

BoundReport report_lower_bound(Variant variant, const BoundInputs& in) {
  BoundReport r;
  r.value = in.entropy_estimate;
  switch (variant) {
    case Variant::Vanilla:
      break;
    case Variant::Decoder:
      // A zero weight removes that reconstruction term from the bound.
      if (in.lambda_f > 0.0) {
        r.value -= in.feat / in.lambda_f;
      }
      if (in.lambda_s > 0.0) {
        r.value -= in.topo / in.lambda_s;
      }
      break;
    case Variant::Similarizer:
      r.value -= in.lambda_l * in.sim;
      break;
    case Variant::Denoiser:
      r.value -= in.lambda_l * in.diff;
      break;
  }
  return r;
}

}  // namespace rglm
