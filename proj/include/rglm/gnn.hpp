#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "rglm/params.hpp"
#include "rglm/rng.hpp"
#include "rglm/tag.hpp"
#include "rglm/tensor.hpp"

// Small message-passing encoder pre-trained by masked label prediction with
// a Gaussian latent, then frozen to produce latent targets E.
namespace rglm {

struct LapPe {
  std::vector<double> eigenvalues;  // k smallest positive, ascending
  std::vector<double> vectors;      // n x k, row-major, unit columns
  std::size_t k = 0;
};

// Eigenvectors of L = D - A for the k smallest nonzero eigenvalues. Each
// column's first entry with magnitude above 1e-12 is made positive.
LapPe lap_pe(std::size_t node_count, std::span<const Edge> edges, std::size_t k);
inline LapPe lap_pe(const Tag& tag, std::size_t k) {
  return lap_pe(tag.node_count, tag.edges, k);
}

// n x K; entry (v, k-1) = probability that a k-step uniform walk from v ends
// at v. Isolated nodes get zeros.
std::vector<double> rwse(std::size_t node_count, std::span<const Edge> edges, std::size_t steps);
inline std::vector<double> rwse(const Tag& tag, std::size_t steps) {
  return rwse(tag.node_count, tag.edges, steps);
}

struct GnnConfig {
  std::size_t d_z = 8;
  std::size_t num_classes = 4;
  std::size_t d_e = 32;
  std::size_t n_layers = 3;  // last one is the attention layer
  std::size_t d_label = 8;
  std::size_t pe_k = 4;
  std::size_t rw_steps = 8;
  bool pair_bias = false;  // dense attention over all pairs, < 200 nodes only

  void validate() const;
  nlohmann::json to_json() const;
  static GnnConfig from_json(const nlohmann::json& j);
};

struct PretrainConfig {
  double mask_ratio = 0.8;
  std::size_t epochs = 100;
  double lr = 1e-2;
  double warmup_frac = 0.05;
  std::uint64_t seed = 0;
};

// Inputs of one graph: features, adjacency, positional encodings, and the
// label shown to the encoder for each node (nullopt = MASK).
struct GnnGraph {
  std::size_t n = 0;
  std::vector<Edge> edges;
  Tensor features;        // n x d_z
  Tensor pe;              // n x (pe_k + rw_steps), sign-invariant
  Tensor norm_adj;        // D^-1/2 (A + I) D^-1/2
  std::vector<std::uint8_t> neighbor_mask;  // n x n, 1 on edges and the diagonal
  Tensor edge_indicator;  // n x n, 1 on edges
};

GnnGraph make_gnn_graph(std::size_t n, std::span<const Edge> edges,
                        std::span<const double> features, const GnnConfig& cfg);

struct GnnOutput {
  Tensor mu;      // n x d_e
  Tensor logvar;  // n x d_e
};

class GnnEncoder {
 public:
  GnnEncoder(const GnnConfig& cfg, Rng& rng);

  const GnnConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  GnnOutput forward(const GnnGraph& g,
                    std::span<const std::optional<std::size_t>> shown_labels) const;
  // Class logits from latents.
  Tensor classify(const Tensor& latent) const;

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

 private:
  GnnConfig cfg_;
  ParameterStore params_;
  Tensor label_emb_, in_w_, in_b_;
  std::vector<std::pair<Tensor, Tensor>> conv_;
  Tensor att_w_, att_src_, att_dst_, att_edge_, att_absent_;
  Tensor mu_w_, mu_b_, lv_w_, lv_b_, cls_w_, cls_b_;
  bool frozen_ = false;
};

// 0.5 * mean(mu^2 + exp(logvar) - 1 - logvar) over nodes and dimensions.
Tensor kl_standard_normal(const Tensor& mu, const Tensor& logvar);

// Mean cross-entropy of logits rows against labels.
Tensor masked_label_loss(const Tensor& logits, std::span<const std::size_t> rows,
                         std::span<const std::size_t> labels);

// ceil(ratio * |train|) training nodes chosen uniformly, ascending.
std::vector<std::size_t> choose_masked(std::span<const std::size_t> train_nodes, double ratio,
                                       Rng& rng);

struct PretrainLoss {
  Tensor total, mask, reg;
};

// L_mask + L_reg for one masking; eps (n x d_e) is the reparameterization
// noise, so the loss is deterministic given it.
PretrainLoss pretrain_loss(const GnnEncoder& enc, const GnnGraph& g,
                           std::span<const std::optional<std::size_t>> labels,
                           std::span<const std::size_t> masked, const Tensor& eps);

struct PretrainReport {
  std::vector<double> loss;  // per epoch
  double train_accuracy = 0.0;
};

GnnEncoder pretrain(const Tag& tag, const GnnConfig& cfg, const PretrainConfig& pc,
                    PretrainReport* report = nullptr);

// Deterministic mu latents of the subgraph with every label hidden; row i
// belongs to sub.node_ids[i].
Tensor encode_targets(const GnnEncoder& enc, const Subgraph& sub);

void save_encoder(const GnnEncoder& enc, const std::filesystem::path& path);
GnnEncoder load_encoder(const std::filesystem::path& path);

}  // namespace rglm
