#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rglm/ndt.hpp"
#include "rglm/params.hpp"
#include "rglm/rng.hpp"
#include "rglm/tensor.hpp"

namespace rglm {

struct LoraConfig {
  bool enabled = false;
  std::size_t rank = 8;
  double alpha = 32.0;
  bool target_mlp = false;  // attention projections are always targeted
};

struct LmConfig {
  std::size_t vocab_size = 32;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t max_len = 256;
  std::size_t d_z = 8;
  std::size_t projector_layers = 2;  // 1 = single affine map
  bool mask_placeholders = false;    // hide placeholder keys from attention
  LoraConfig lora;

  void validate() const;
  nlohmann::json to_json() const;
  static LmConfig from_json(const nlohmann::json& j);
};

// Prompt and label token ids of one example; the model input is
// [graph prefix (N)] + prompt + label.
struct Instruction {
  std::vector<std::size_t> prompt;
  std::vector<std::size_t> label;

  std::vector<std::size_t> text_tokens() const;
  // 0-based positions in the full input holding label tokens.
  std::vector<std::size_t> supervised_positions(std::size_t n_prefix) const;
};

struct ForwardResult {
  Tensor logits;   // T x vocab
  Tensor hidden;   // T x d_model, final layer
  Tensor s_graph;  // rows [0, N)
  Tensor s_text;   // rows [N, T)
  // attention[layer][head]: T x T row-stochastic matrix
  std::vector<std::vector<Tensor>> attention;
  std::size_t n_prefix = 0;
};

struct AttentionProbe {
  // Head-averaged final-layer attention of the last position onto each
  // graph slot; zero for placeholder and separator slots.
  std::vector<double> per_slot;
  std::vector<double> per_slot_log;  // natural log, node slots only (others 0)
  double graph_mass = 0.0;           // sum over node slots
  double row_total = 0.0;            // sum over all positions
};

// Decoder-only causal transformer with a graph projector and optional
// low-rank adapters. Pre-norm blocks, learned absolute positions.
class LmModel {
 public:
  LmModel(const LmConfig& cfg, Rng& rng);

  const LmConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  // Parameters updated during tuning: everything, or with adapters enabled
  // only the projector and adapter factors.
  std::vector<Parameter> trainable_params() const;

  Tensor encode_prefix(const GraphTokenSequence& seq) const;
  ForwardResult forward(const Tensor& prefix, std::span<const std::size_t> text_tokens,
                        std::span<const std::uint8_t> graph_attendable = {}) const;
  ForwardResult forward(const GraphTokenSequence& seq,
                        std::span<const std::size_t> text_tokens) const;

  // Folds (alpha / r) * A * B into each adapted weight and zeroes B.
  void merge_lora();

 private:
  struct Linear {
    Tensor w, b;
    Tensor lora_a, lora_b;  // defined only when adapted
  };
  struct Block {
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Linear wq, wk, wv, wo, fc1, fc2;
  };

  Linear make_linear(const std::string& name, std::size_t in, std::size_t out, bool adapt,
                     Rng& rng, bool bias = true);
  Tensor apply(const Linear& l, const Tensor& x) const;

  LmConfig cfg_;
  ParameterStore params_;
  Tensor tok_emb_, pos_emb_, sep_emb_;
  Linear proj1_, proj2_;
  std::vector<Block> blocks_;
  Tensor lnf_g_, lnf_b_, head_;
};

// Mean over i in S of -log p(x_i | prefix, x_<i).
Tensor text_loss(const Tensor& logits, const Instruction& ins, std::size_t n_prefix);

// Row v of H is the mean of s_graph rows at Gamma(v), nodes in ascending id.
Tensor aggregate_h(const Tensor& s_graph, const GraphTokenSequence& seq);

AttentionProbe attention_probe(const LmModel& model, const GraphTokenSequence& seq,
                               std::span<const std::size_t> text_tokens);

// Greedy (argmax) continuation of prompt by count tokens.
std::vector<std::size_t> greedy_decode(const LmModel& model, const GraphTokenSequence& seq,
                                       std::span<const std::size_t> prompt, std::size_t count);

}  // namespace rglm
