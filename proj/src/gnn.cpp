#include "rglm/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/Dense>

#include "rglm/error.hpp"
#include "rglm/ops.hpp"
#include "rglm/optim.hpp"

namespace rglm {

namespace {

constexpr double kZeroEigen = 1e-9;
constexpr std::size_t kPairBiasLimit = 200;

void check_edges(std::size_t n, std::span<const Edge> edges) {
  for (const auto& [u, v] : edges) {
    if (u >= n || v >= n || u == v) {
      throw ParameterError("edge (" + std::to_string(u) + ", " + std::to_string(v) +
                           ") invalid for " + std::to_string(n) + " nodes");
    }
  }
}

}  // namespace

LapPe lap_pe(std::size_t node_count, std::span<const Edge> edges, std::size_t k) {
  if (k >= node_count) {
    throw ParameterError("lap_pe: k = " + std::to_string(k) + " must be below node count " +
                         std::to_string(node_count));
  }
  check_edges(node_count, edges);
  const auto n = static_cast<Eigen::Index>(node_count);
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [u, v] : edges) {
    const auto a = static_cast<Eigen::Index>(u);
    const auto b = static_cast<Eigen::Index>(v);
    lap(a, b) -= 1.0;
    lap(b, a) -= 1.0;
    lap(a, a) += 1.0;
    lap(b, b) += 1.0;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  if (solver.info() != Eigen::Success) {
    throw NumericError("lap_pe: eigendecomposition failed");
  }
  const auto& vals = solver.eigenvalues();
  const auto& vecs = solver.eigenvectors();

  LapPe out;
  out.k = k;
  out.vectors.assign(node_count * k, 0.0);
  std::size_t col = 0;
  for (Eigen::Index i = 0; i < n && col < k; ++i) {
    if (vals(i) <= kZeroEigen) {
      continue;
    }
    out.eigenvalues.push_back(vals(i));
    double sign = 1.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      if (std::abs(vecs(r, i)) > 1e-12) {
        sign = vecs(r, i) > 0 ? 1.0 : -1.0;
        break;
      }
    }
    for (Eigen::Index r = 0; r < n; ++r) {
      out.vectors[static_cast<std::size_t>(r) * k + col] = sign * vecs(r, i);
    }
    ++col;
  }
  // A graph with many components can have fewer than k positive eigenvalues.
  out.k = col;
  if (col < k) {
    std::vector<double> trimmed(node_count * col);
    for (std::size_t r = 0; r < node_count; ++r) {
      for (std::size_t c = 0; c < col; ++c) {
        trimmed[r * col + c] = out.vectors[r * k + c];
      }
    }
    out.vectors = std::move(trimmed);
  }
  return out;
}

std::vector<double> rwse(std::size_t node_count, std::span<const Edge> edges, std::size_t steps) {
  if (steps == 0) {
    throw ParameterError("rwse: steps must be at least 1");
  }
  check_edges(node_count, edges);
  const auto n = static_cast<Eigen::Index>(node_count);
  Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [u, v] : edges) {
    adj(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) = 1.0;
    adj(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(u)) = 1.0;
  }
  Eigen::MatrixXd walk = adj;
  for (Eigen::Index r = 0; r < n; ++r) {
    const double deg = adj.row(r).sum();
    if (deg > 0) {
      walk.row(r) /= deg;
    }
  }
  std::vector<double> out(node_count * steps, 0.0);
  Eigen::MatrixXd power = walk;
  for (std::size_t s = 0; s < steps; ++s) {
    for (Eigen::Index v = 0; v < n; ++v) {
      out[static_cast<std::size_t>(v) * steps + s] = power(v, v);
    }
    if (s + 1 < steps) {
      power = power * walk;
    }
  }
  return out;
}

void GnnConfig::validate() const {
  if (d_z == 0 || num_classes == 0 || d_e == 0 || d_label == 0) {
    throw ConfigError("gnn: dimensions must be positive");
  }
  if (n_layers == 0) {
    throw ConfigError("gnn: n_layers must be at least 1");
  }
  if (rw_steps == 0) {
    throw ConfigError("gnn: rw_steps must be at least 1");
  }
}

nlohmann::json GnnConfig::to_json() const {
  return {{"d_z", d_z},         {"num_classes", num_classes}, {"d_e", d_e},
          {"n_layers", n_layers}, {"d_label", d_label},       {"pe_k", pe_k},
          {"rw_steps", rw_steps}, {"pair_bias", pair_bias}};
}

GnnConfig GnnConfig::from_json(const nlohmann::json& j) {
  GnnConfig c;
  c.d_z = j.at("d_z").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.d_e = j.at("d_e").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_label = j.at("d_label").get<std::size_t>();
  c.pe_k = j.at("pe_k").get<std::size_t>();
  c.rw_steps = j.at("rw_steps").get<std::size_t>();
  c.pair_bias = j.at("pair_bias").get<bool>();
  c.validate();
  return c;
}

GnnGraph make_gnn_graph(std::size_t n, std::span<const Edge> edges,
                        std::span<const double> features, const GnnConfig& cfg) {
  if (n == 0) {
    throw ParameterError("gnn: empty graph");
  }
  if (features.size() != n * cfg.d_z) {
    throw DimensionError("gnn: " + std::to_string(features.size()) + " feature values for " +
                         std::to_string(n) + " nodes of width " + std::to_string(cfg.d_z));
  }
  if (cfg.pair_bias && n >= kPairBiasLimit) {
    throw ConfigError("gnn: pair_bias needs fewer than " + std::to_string(kPairBiasLimit) +
                      " nodes, got " + std::to_string(n));
  }
  check_edges(n, edges);
  GnnGraph g;
  g.n = n;
  g.edges.assign(edges.begin(), edges.end());
  g.features = Tensor::from(n, cfg.d_z, {features.begin(), features.end()});

  // Absolute eigenvector entries: invariant to the sign ambiguity, so the
  // encoder output does not depend on the eigensolver's choice.
  const std::size_t width = cfg.pe_k + cfg.rw_steps;
  std::vector<double> pe(n * width, 0.0);
  if (cfg.pe_k > 0 && n > 1) {
    const LapPe lp = lap_pe(n, edges, std::min(cfg.pe_k, n - 1));
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t c = 0; c < lp.k; ++c) {
        pe[v * width + c] = std::abs(lp.vectors[v * lp.k + c]);
      }
    }
  }
  const auto rw = rwse(n, edges, cfg.rw_steps);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t s = 0; s < cfg.rw_steps; ++s) {
      pe[v * width + cfg.pe_k + s] = rw[v * cfg.rw_steps + s];
    }
  }
  g.pe = Tensor::from(n, width, std::move(pe));

  std::vector<double> deg(n, 1.0);
  std::vector<double> ind(n * n, 0.0);
  g.neighbor_mask.assign(n * n, 0);
  for (std::size_t v = 0; v < n; ++v) {
    g.neighbor_mask[v * n + v] = 1;
  }
  for (const auto& [u, v] : edges) {
    deg[u] += 1.0;
    deg[v] += 1.0;
    ind[u * n + v] = ind[v * n + u] = 1.0;
    g.neighbor_mask[u * n + v] = g.neighbor_mask[v * n + u] = 1;
  }
  std::vector<double> na(n * n, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    na[v * n + v] = 1.0 / deg[v];
  }
  for (const auto& [u, v] : edges) {
    const double w = 1.0 / std::sqrt(deg[u] * deg[v]);
    na[u * n + v] = na[v * n + u] = w;
  }
  g.norm_adj = Tensor::from(n, n, std::move(na));
  g.edge_indicator = Tensor::from(n, n, std::move(ind));
  return g;
}

GnnEncoder::GnnEncoder(const GnnConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_e;
  const std::size_t in = cfg_.d_z + cfg_.d_label + cfg_.pe_k + cfg_.rw_steps;
  // Row num_classes is the MASK embedding.
  label_emb_ = params_.add_normal("label_emb", cfg_.num_classes + 1, cfg_.d_label, 0.1, rng);
  in_w_ = params_.add_glorot("in.w", in, d, rng);
  in_b_ = params_.add_zeros("in.b", 1, d);
  for (std::size_t i = 0; i + 1 < cfg_.n_layers; ++i) {
    const std::string p = "conv" + std::to_string(i);
    conv_.emplace_back(params_.add_glorot(p + ".w", d, d, rng), params_.add_zeros(p + ".b", 1, d));
  }
  att_w_ = params_.add_glorot("att.w", d, d, rng);
  att_src_ = params_.add_glorot("att.src", d, 1, rng);
  att_dst_ = params_.add_glorot("att.dst", d, 1, rng);
  if (cfg_.pair_bias) {
    att_edge_ = params_.add_zeros("att.edge_bias", 1, 1);
    att_absent_ = params_.add_const("att.absent_bias", 1, 1, -2.0);
  }
  mu_w_ = params_.add_glorot("mu.w", d, d, rng);
  mu_b_ = params_.add_zeros("mu.b", 1, d);
  lv_w_ = params_.add_normal("logvar.w", d, d, 0.01, rng);
  lv_b_ = params_.add_zeros("logvar.b", 1, d);
  cls_w_ = params_.add_glorot("cls.w", d, cfg_.num_classes, rng);
  cls_b_ = params_.add_zeros("cls.b", 1, cfg_.num_classes);
}

GnnOutput GnnEncoder::forward(const GnnGraph& g,
                              std::span<const std::optional<std::size_t>> shown_labels) const {
  if (g.features.cols() != cfg_.d_z) {
    throw DimensionError("gnn: feature width " + std::to_string(g.features.cols()) +
                         " but encoder expects " + std::to_string(cfg_.d_z));
  }
  if (g.pe.cols() != cfg_.pe_k + cfg_.rw_steps) {
    throw DimensionError("gnn: positional encoding width mismatch");
  }
  if (shown_labels.size() != g.n) {
    throw DimensionError("gnn: " + std::to_string(shown_labels.size()) + " labels for " +
                         std::to_string(g.n) + " nodes");
  }
  std::vector<std::size_t> ids(g.n);
  for (std::size_t v = 0; v < g.n; ++v) {
    const auto& l = shown_labels[v];
    if (l && *l >= cfg_.num_classes) {
      throw ParameterError("gnn: label " + std::to_string(*l) + " out of range");
    }
    ids[v] = l ? *l : cfg_.num_classes;
  }
  const Tensor parts[] = {g.features, embedding(label_emb_, ids), g.pe};
  Tensor x = add(matmul(concat_cols(parts), in_w_), in_b_);
  for (const auto& [w, b] : conv_) {
    x = add(x, relu(add(matmul(matmul(g.norm_adj, x), w), b)));
  }
  Tensor wx = matmul(x, att_w_);
  Tensor scores = leaky_relu(add(matmul(wx, att_src_), transpose(matmul(wx, att_dst_))), 0.2);
  Tensor alpha;
  if (cfg_.pair_bias) {
    // Every pair attends; edges and non-edges get separate learned offsets.
    Tensor bias = add(mul(g.edge_indicator, att_edge_),
                      mul(add_scalar(neg(g.edge_indicator), 1.0), att_absent_));
    alpha = softmax(add(scores, bias));
  } else {
    alpha = softmax(scores, 1, g.neighbor_mask);
  }
  x = add(x, relu(matmul(alpha, wx)));
  return {add(matmul(x, mu_w_), mu_b_), add(matmul(x, lv_w_), lv_b_)};
}

Tensor GnnEncoder::classify(const Tensor& latent) const {
  return add(matmul(latent, cls_w_), cls_b_);
}

Tensor kl_standard_normal(const Tensor& mu, const Tensor& logvar) {
  Tensor t = sub(add(square(mu), exp(logvar)), add_scalar(logvar, 1.0));
  return scale(mean(t), 0.5);
}

Tensor masked_label_loss(const Tensor& logits, std::span<const std::size_t> rows,
                         std::span<const std::size_t> labels) {
  if (rows.size() != labels.size()) {
    throw DimensionError("masked_label_loss: rows and labels differ in length");
  }
  if (rows.empty()) {
    throw UsageError("masked_label_loss: no masked nodes");
  }
  Tensor lp = log_softmax(gather_rows(logits, rows));
  std::vector<std::size_t> r(rows.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    r[i] = i;
  }
  return neg(mean(pick(lp, r, labels)));
}

std::vector<std::size_t> choose_masked(std::span<const std::size_t> train_nodes, double ratio,
                                       Rng& rng) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw ConfigError("mask_ratio must lie in (0, 1]");
  }
  const auto k = static_cast<std::size_t>(
      std::ceil(ratio * static_cast<double>(train_nodes.size()) - 1e-12));
  std::vector<std::size_t> out;
  for (std::size_t i : rng.sample_without_replacement(train_nodes.size(), k)) {
    out.push_back(train_nodes[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

PretrainLoss pretrain_loss(const GnnEncoder& enc, const GnnGraph& g,
                           std::span<const std::optional<std::size_t>> labels,
                           std::span<const std::size_t> masked, const Tensor& eps) {
  std::vector<std::optional<std::size_t>> shown(labels.begin(), labels.end());
  std::vector<std::size_t> targets;
  for (std::size_t v : masked) {
    if (!labels[v]) {
      throw UsageError("pretrain_loss: masked node " + std::to_string(v) + " has no label");
    }
    targets.push_back(*labels[v]);
    shown[v].reset();
  }
  const GnnOutput out = enc.forward(g, shown);
  Tensor latent = add(out.mu, mul(exp(scale(out.logvar, 0.5)), eps));
  PretrainLoss l;
  l.mask = masked_label_loss(enc.classify(latent), masked, targets);
  l.reg = kl_standard_normal(out.mu, out.logvar);
  l.total = add(l.mask, l.reg);
  return l;
}

GnnEncoder pretrain(const Tag& tag, const GnnConfig& cfg, const PretrainConfig& pc,
                    PretrainReport* report) {
  if (cfg.d_z != tag.meta.d_z || cfg.num_classes != tag.meta.num_classes) {
    throw ConfigError("pretrain: encoder dimensions do not match the graph");
  }
  if (!(pc.mask_ratio > 0.0 && pc.mask_ratio <= 1.0)) {
    throw ConfigError("pretrain: mask_ratio must lie in (0, 1]");
  }
  std::vector<std::size_t> train;
  for (std::size_t v : tag.nodes_in(Split::Train)) {
    if (tag.labels[v]) {
      train.push_back(v);
    }
  }
  if (train.empty()) {
    throw ConfigError("pretrain: no labeled training nodes");
  }
  // Only training labels are ever shown to the encoder.
  std::vector<std::optional<std::size_t>> labels(tag.node_count);
  for (std::size_t v : train) {
    labels[v] = tag.labels[v];
  }

  Rng rng(pc.seed);
  Rng init_rng = rng.split();
  Rng mask_rng = rng.split();
  Rng noise_rng = rng.split();
  GnnEncoder enc(cfg, init_rng);
  const GnnGraph g = make_gnn_graph(tag.node_count, tag.edges, tag.features, cfg);

  AdamConfig ac;
  ac.lr = pc.lr;
  Adam opt(enc.params().params(), ac);
  for (std::size_t epoch = 0; epoch < pc.epochs; ++epoch) {
    const auto masked = choose_masked(train, pc.mask_ratio, mask_rng);
    std::vector<double> eps(g.n * cfg.d_e);
    for (double& e : eps) {
      e = noise_rng.normal();
    }
    opt.zero_grad();
    PretrainLoss l = pretrain_loss(enc, g, labels, masked,
                                   Tensor::from(g.n, cfg.d_e, std::move(eps)));
    if (!std::isfinite(l.total.item())) {
      throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch));
    }
    l.total.backward();
    opt.step(lr_multiplier(epoch, pc.epochs, pc.warmup_frac, true));
    if (report) {
      report->loss.push_back(l.total.item());
    }
  }
  enc.freeze();

  if (report) {
    NoGradGuard ng;
    std::vector<std::optional<std::size_t>> hidden(tag.node_count);
    const GnnOutput out = enc.forward(g, hidden);
    const Tensor logits = enc.classify(out.mu);
    std::size_t correct = 0;
    for (std::size_t v : train) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < cfg.num_classes; ++c) {
        if (logits.at(v, c) > logits.at(v, best)) {
          best = c;
        }
      }
      correct += best == *tag.labels[v];
    }
    report->train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
  }
  return enc;
}

Tensor encode_targets(const GnnEncoder& enc, const Subgraph& sub) {
  if (!enc.frozen()) {
    throw UsageError("encode_targets: encoder is not frozen");
  }
  if (sub.d_z != enc.config().d_z) {
    throw DimensionError("encode_targets: subgraph feature width " + std::to_string(sub.d_z) +
                         " but encoder expects " + std::to_string(enc.config().d_z));
  }
  NoGradGuard ng;
  const GnnGraph g = make_gnn_graph(sub.size(), sub.edges, sub.features, enc.config());
  std::vector<std::optional<std::size_t>> hidden(sub.size());
  return enc.forward(g, hidden).mu.detach();
}

void save_encoder(const GnnEncoder& enc, const std::filesystem::path& path) {
  nlohmann::json j{{"config", enc.config().to_json()}, {"params", enc.params().to_json()}};
  std::ofstream f(path);
  if (!f) {
    throw ParameterError("cannot write " + path.string());
  }
  f << j.dump() << '\n';
}

GnnEncoder load_encoder(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) {
    throw ParseError("cannot read " + path.string());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  Rng rng(0);
  GnnEncoder enc(GnnConfig::from_json(j.at("config")), rng);
  enc.params().load_json(j.at("params"));
  enc.freeze();
  return enc;
}

}  // namespace rglm
