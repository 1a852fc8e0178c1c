#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rglm/params.hpp"
#include "rglm/rng.hpp"
#include "rglm/tag.hpp"
#include "rglm/tensor.hpp"

// Graph reconstruction objectives computed from the aggregated graph-token
// states H: raw feature/topology decoding, cosine regression onto
// pre-trained latents, and conditional noise prediction.
namespace rglm {

enum class Variant { Vanilla, Decoder, Similarizer, Denoiser };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

// Two-layer perceptron in -> hidden -> out with GELU.
struct Mlp {
  Tensor w1, b1, w2, b2;

  static Mlp create(ParameterStore& store, const std::string& name, std::size_t in,
                    std::size_t hidden, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

struct DecoderHead {
  ParameterStore params;
  Mlp feature;           // d_model -> d_z
  Tensor structure_w;    // d_model x d_proj; score(i, j) = (W h_i) . (W h_j)
  double lambda_f = 0.4;
  double lambda_s = 2.0;

  static DecoderHead create(std::size_t d_model, std::size_t d_z, std::size_t hidden,
                            std::size_t d_proj, double lambda_f, double lambda_s, Rng& rng);
  // Logit per pair, as a column vector.
  Tensor score_pairs(const Tensor& h, std::span<const Edge> pairs) const;
};

// (1/|V|) sum_i ||d_f(h_i) - z_i||^2
Tensor feat_loss(const Tensor& h, const Tensor& z, const DecoderHead& head);

struct NegativeSample {
  std::vector<Edge> pairs;  // (i, j) with i < j, absent from the graph
  bool truncated = false;   // fewer than requested were available
};

NegativeSample sample_negative_edges(std::size_t node_count, std::span<const Edge> edges,
                                     std::size_t count, Rng& rng);
inline NegativeSample sample_negative_edges(const Subgraph& sub, std::size_t count, Rng& rng) {
  return sample_negative_edges(sub.size(), sub.edges, count, rng);
}

// Binary cross-entropy over existing (positive) and absent (negative) pairs,
// each averaged over its own set.
Tensor topo_loss(const Tensor& h, std::span<const Edge> positives, std::span<const Edge> negatives,
                 const DecoderHead& head);

struct SimilarizerHead {
  ParameterStore params;
  Mlp proj;  // d_model -> d_e
  double lambda_l = 1.0;
  bool whole_matrix = false;  // one flattened cosine instead of the per-row mean

  static SimilarizerHead create(std::size_t d_model, std::size_t d_e, std::size_t hidden,
                                double lambda_l, Rng& rng);
};

// Mean over rows of 1 - cos(pred_v, target_v) (or 1 - cos of the flattened
// matrices when whole_matrix). Zero-norm rows raise NumericError.
Tensor cosine_loss(const Tensor& pred, const Tensor& target, bool whole_matrix = false);
Tensor sim_loss(const Tensor& h, const Tensor& target, const SimilarizerHead& head);

struct NoiseSchedule {
  std::size_t steps = 0;           // T
  std::vector<double> beta;        // index 1..T (beta[0] unused, 0)
  std::vector<double> alpha_bar;   // index 0..T, alpha_bar[0] = 1
  std::vector<double> sigma2;      // reverse-process variances, index 1..T

  static NoiseSchedule from_betas(const std::vector<double>& betas);
  static NoiseSchedule linear(std::size_t steps, double beta_start = 1e-4,
                              double beta_end = 0.02);
  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);
};

// sqrt(abar_t) E + sqrt(1 - abar_t) eps
Tensor forward_noise(const Tensor& e, std::size_t t, const Tensor& eps,
                     const NoiseSchedule& schedule);

struct DiffusionSample {
  std::size_t t = 1;
  Tensor eps;
  Tensor noisy;
};

DiffusionSample draw_diffusion_sample(const NoiseSchedule& schedule, const Tensor& e, Rng& rng);
// Mean squared element-wise error between predicted and true noise.
Tensor noise_mse(const Tensor& predicted, const Tensor& eps);

// Sinusoidal embedding of timestep t, 1 x dim.
Tensor timestep_embedding(std::size_t t, std::size_t dim);

class DenoiserHead {
 public:
  struct Config {
    std::size_t d_model = 64;  // width of H
    std::size_t d_e = 32;      // latent width
    std::size_t d_hidden = 32;
    std::size_t n_blocks = 1;
    std::size_t n_heads = 2;
  };

  DenoiserHead(const Config& cfg, NoiseSchedule schedule, double lambda_l, Rng& rng);

  const Config& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  double lambda_l = 1.0;

  // Predicted noise for noisy latents e_t conditioned on h at timestep t.
  Tensor predict(const Tensor& e_t, const Tensor& h, std::size_t t) const;
  // Sets the output layer to zero so predict() returns all zeros.
  void zero_output();

 private:
  struct Block {
    Tensor noisy_w, noisy_b, cond_w, cond_b, time_w, time_b;
    Tensor ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b;
    Tensor fc1_w, fc1_b, fc2_w, fc2_b;
  };

  Config cfg_;
  NoiseSchedule schedule_;
  ParameterStore params_;
  std::vector<Block> blocks_;
  Tensor lnf_g_, lnf_b_, out_w_, out_b_;
};

// Single Monte-Carlo draw of E_{t,eps} ||f(E_t, H, t) - eps||^2 (per element).
Tensor diff_loss(const DenoiserHead& head, const Tensor& e, const Tensor& h, Rng& rng);
Tensor diff_loss_at(const DenoiserHead& head, const Tensor& e, const Tensor& h,
                    const DiffusionSample& sample);

// Reconstruction targets for one example, row-aligned with H.
struct GraphTargets {
  Tensor features;               // decoder: raw Z
  std::vector<Edge> positives;   // decoder: existing pairs (row indices of H)
  std::optional<Tensor> latent;  // similarizer / denoiser: E
};

struct ReconHeads {
  std::optional<DecoderHead> decoder;
  std::optional<SimilarizerHead> similarizer;
  std::optional<DenoiserHead> denoiser;

  std::vector<Parameter> params() const;
};

struct GraphLoss {
  Tensor total;  // scalar L_graph
  double feat = 0.0, topo = 0.0, sim = 0.0, diff = 0.0;
};

// Vanilla -> 0; decoder -> lambda_f L_feat + lambda_s L_topo, with |positives|
// absent pairs drawn from rng on every call;
// similarizer -> lambda_l L_sim; denoiser -> lambda_l L_diff.
GraphLoss graph_loss(Variant variant, const ReconHeads& heads, const Tensor& h,
                     const GraphTargets& targets, Rng& rng);

// L_text + L_graph; non-finite inputs raise NumericError.
Tensor combined_loss(const Tensor& text, const Tensor& graph);

struct BoundReport {
  double value = 0.0;
  // Additive constants and the vMF concentration are set to C = 0 and
  // kappa = 1; only differences across checkpoints are meaningful.
  bool constants_placeholder = true;
};

struct BoundInputs {
  double entropy_estimate = 0.0;  // H(Z) + H(A) for the decoder, H(E) otherwise
  double feat = 0.0, topo = 0.0, sim = 0.0, diff = 0.0;
  double lambda_f = 0.0, lambda_s = 0.0, lambda_l = 0.0;
};

BoundReport report_lower_bound(Variant variant, const BoundInputs& in);

}  // namespace rglm
