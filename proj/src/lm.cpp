#include "rglm/lm.hpp"

#include <algorithm>
#include <cmath>

#include "rglm/error.hpp"
#include "rglm/ops.hpp"

namespace rglm {

void LmConfig::validate() const {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ParameterError("lm: d_model " + std::to_string(d_model) +
                         " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (vocab_size == 0 || d_model == 0 || max_len == 0 || d_z == 0) {
    throw ParameterError("lm: sizes must be positive");
  }
  if (projector_layers != 1 && projector_layers != 2) {
    throw ParameterError("lm: projector_layers must be 1 or 2");
  }
  if (lora.enabled) {
    if (lora.rank < 1) {
      throw ParameterError("lm: adapter rank must be >= 1");
    }
    if (lora.rank > d_model) {
      throw ParameterError("lm: adapter rank " + std::to_string(lora.rank) +
                           " exceeds min weight dimension " + std::to_string(d_model));
    }
  }
}

nlohmann::json LmConfig::to_json() const {
  return {{"vocab_size", vocab_size},
          {"d_model", d_model},
          {"n_layers", n_layers},
          {"n_heads", n_heads},
          {"max_len", max_len},
          {"d_z", d_z},
          {"projector_layers", projector_layers},
          {"mask_placeholders", mask_placeholders},
          {"lora",
           {{"enabled", lora.enabled},
            {"rank", lora.rank},
            {"alpha", lora.alpha},
            {"target_mlp", lora.target_mlp}}}};
}

LmConfig LmConfig::from_json(const nlohmann::json& j) {
  LmConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.d_z = j.at("d_z").get<std::size_t>();
  c.projector_layers = j.value("projector_layers", std::size_t{2});
  c.mask_placeholders = j.value("mask_placeholders", false);
  if (j.contains("lora")) {
    const auto& l = j.at("lora");
    c.lora.enabled = l.at("enabled").get<bool>();
    c.lora.rank = l.at("rank").get<std::size_t>();
    c.lora.alpha = l.at("alpha").get<double>();
    c.lora.target_mlp = l.value("target_mlp", false);
  }
  return c;
}

std::vector<std::size_t> Instruction::text_tokens() const {
  std::vector<std::size_t> out = prompt;
  out.insert(out.end(), label.begin(), label.end());
  return out;
}

std::vector<std::size_t> Instruction::supervised_positions(std::size_t n_prefix) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < label.size(); ++k) {
    out.push_back(n_prefix + prompt.size() + k);
  }
  return out;
}

LmModel::Linear LmModel::make_linear(const std::string& name, std::size_t in, std::size_t out,
                                     bool adapt, Rng& rng, bool bias) {
  Linear l;
  l.w = params_.add_glorot(name + ".w", in, out, rng);
  if (bias) {
    l.b = params_.add_zeros(name + ".b", 1, out);
  }
  if (adapt && cfg_.lora.enabled) {
    if (cfg_.lora.rank > std::min(in, out)) {
      throw ParameterError("lm: adapter rank " + std::to_string(cfg_.lora.rank) +
                           " exceeds min weight dimension of " + name);
    }
    l.lora_a = params_.add_normal(name + ".lora_a", in, cfg_.lora.rank,
                                  1.0 / std::sqrt(static_cast<double>(in)), rng);
    l.lora_b = params_.add_zeros(name + ".lora_b", cfg_.lora.rank, out);
  }
  return l;
}

LmModel::LmModel(const LmConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model;
  tok_emb_ = params_.add_normal("tok_emb", cfg_.vocab_size, d, 0.02, rng);
  pos_emb_ = params_.add_normal("pos_emb", cfg_.max_len, d, 0.02, rng);
  sep_emb_ = params_.add_normal("proj.sep", 1, d, 0.02, rng);
  if (cfg_.projector_layers == 2) {
    proj1_ = make_linear("proj.l1", cfg_.d_z, d, false, rng);
    proj2_ = make_linear("proj.l2", d, d, false, rng);
  } else {
    proj1_ = make_linear("proj.l1", cfg_.d_z, d, false, rng);
  }
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i);
    Block b;
    b.ln1_g = params_.add_const(p + ".ln1.g", 1, d, 1.0);
    b.ln1_b = params_.add_zeros(p + ".ln1.b", 1, d);
    b.wq = make_linear(p + ".attn.wq", d, d, true, rng);
    // A key bias only shifts every score of a query equally; softmax drops it.
    b.wk = make_linear(p + ".attn.wk", d, d, true, rng, false);
    b.wv = make_linear(p + ".attn.wv", d, d, true, rng);
    b.wo = make_linear(p + ".attn.wo", d, d, true, rng);
    b.ln2_g = params_.add_const(p + ".ln2.g", 1, d, 1.0);
    b.ln2_b = params_.add_zeros(p + ".ln2.b", 1, d);
    b.fc1 = make_linear(p + ".mlp.fc1", d, 4 * d, cfg_.lora.target_mlp, rng);
    b.fc2 = make_linear(p + ".mlp.fc2", 4 * d, d, cfg_.lora.target_mlp, rng);
    blocks_.push_back(std::move(b));
  }
  lnf_g_ = params_.add_const("ln_f.g", 1, d, 1.0);
  lnf_b_ = params_.add_zeros("ln_f.b", 1, d);
  head_ = params_.add_normal("head.w", d, cfg_.vocab_size, 0.02, rng);
}

std::vector<Parameter> LmModel::trainable_params() const {
  std::vector<Parameter> out;
  for (const auto& p : params_.params()) {
    const bool adapter = p.name.find(".lora_") != std::string::npos;
    const bool projector = p.name.starts_with("proj.");
    if (!cfg_.lora.enabled || adapter || projector) {
      out.push_back(p);
    }
  }
  return out;
}

Tensor LmModel::apply(const Linear& l, const Tensor& x) const {
  Tensor y = matmul(x, l.w);
  if (l.b.defined()) {
    y = add(y, l.b);
  }
  if (l.lora_a.defined()) {
    const double s = cfg_.lora.alpha / static_cast<double>(cfg_.lora.rank);
    y = add(y, scale(matmul(matmul(x, l.lora_a), l.lora_b), s));
  }
  return y;
}

Tensor LmModel::encode_prefix(const GraphTokenSequence& seq) const {
  if (seq.d_z != cfg_.d_z) {
    throw DimensionError("encode_prefix: sequence d_z " + std::to_string(seq.d_z) +
                         " != model d_z " + std::to_string(cfg_.d_z));
  }
  const std::size_t n = seq.length();
  Tensor z = Tensor::from(n, seq.d_z, seq.features);
  Tensor p = apply(proj1_, z);
  if (cfg_.projector_layers == 2) {
    p = apply(proj2_, gelu(p));
  }
  bool has_sep = false;
  std::vector<double> keep(n, 1.0), sep(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (seq.slots[i].kind == SlotKind::Separator) {
      keep[i] = 0.0;
      sep[i] = 1.0;
      has_sep = true;
    }
  }
  if (has_sep) {
    p = add(mul(p, Tensor::from(n, 1, keep)), mul(Tensor::from(n, 1, sep), sep_emb_));
  }
  return p;
}

ForwardResult LmModel::forward(const Tensor& prefix, std::span<const std::size_t> text_tokens,
                               std::span<const std::uint8_t> graph_attendable) const {
  const std::size_t n = prefix.rows();
  const std::size_t t_len = n + text_tokens.size();
  if (prefix.cols() != cfg_.d_model) {
    throw DimensionError("forward: prefix width " + std::to_string(prefix.cols()) +
                         " != d_model " + std::to_string(cfg_.d_model));
  }
  if (t_len > cfg_.max_len) {
    throw LengthError("forward: input length " + std::to_string(t_len) + " exceeds max_len " +
                      std::to_string(cfg_.max_len));
  }
  if (t_len == 0) {
    throw LengthError("forward: empty input");
  }
  if (!graph_attendable.empty() && graph_attendable.size() != n) {
    throw DimensionError("forward: attendable mask length differs from prefix");
  }
  for (std::size_t tok : text_tokens) {
    if (tok >= cfg_.vocab_size) {
      throw ParameterError("forward: token id " + std::to_string(tok) + " outside vocabulary");
    }
  }

  std::vector<Tensor> parts;
  if (n > 0) {
    parts.push_back(prefix);
  }
  if (!text_tokens.empty()) {
    parts.push_back(embedding(tok_emb_, text_tokens));
  }
  std::vector<std::size_t> positions(t_len);
  for (std::size_t i = 0; i < t_len; ++i) {
    positions[i] = i;
  }
  Tensor x = add(concat_rows(parts), embedding(pos_emb_, positions));

  std::vector<std::uint8_t> mask(t_len * t_len, 0);
  for (std::size_t i = 0; i < t_len; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const bool hidden = j < n && !graph_attendable.empty() && !graph_attendable[j] && j != i;
      mask[i * t_len + j] = hidden ? 0 : 1;
    }
  }

  ForwardResult res;
  res.n_prefix = n;
  const std::size_t dh = cfg_.d_model / cfg_.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const Block& b : blocks_) {
    Tensor h = add(mul(layer_norm(x), b.ln1_g), b.ln1_b);
    Tensor q = apply(b.wq, h);
    Tensor k = apply(b.wk, h);
    Tensor v = apply(b.wv, h);
    std::vector<Tensor> heads;
    std::vector<Tensor> maps;
    for (std::size_t hd = 0; hd < cfg_.n_heads; ++hd) {
      Tensor qh = slice_cols(q, hd * dh, (hd + 1) * dh);
      Tensor kh = slice_cols(k, hd * dh, (hd + 1) * dh);
      Tensor vh = slice_cols(v, hd * dh, (hd + 1) * dh);
      Tensor att = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1, mask);
      heads.push_back(matmul(att, vh));
      maps.push_back(att);
    }
    res.attention.push_back(std::move(maps));
    x = add(x, apply(b.wo, concat_cols(heads)));
    Tensor h2 = add(mul(layer_norm(x), b.ln2_g), b.ln2_b);
    x = add(x, apply(b.fc2, gelu(apply(b.fc1, h2))));
  }
  res.hidden = add(mul(layer_norm(x), lnf_g_), lnf_b_);
  res.logits = matmul(res.hidden, head_);
  if (n > 0) {
    res.s_graph = slice_rows(res.hidden, 0, n);
  }
  if (t_len > n) {
    res.s_text = slice_rows(res.hidden, n, t_len);
  }
  return res;
}

ForwardResult LmModel::forward(const GraphTokenSequence& seq,
                               std::span<const std::size_t> text_tokens) const {
  std::vector<std::uint8_t> attendable;
  if (cfg_.mask_placeholders) {
    attendable.resize(seq.length());
    for (std::size_t i = 0; i < seq.length(); ++i) {
      attendable[i] = seq.slots[i].kind == SlotKind::Placeholder ? 0 : 1;
    }
  }
  return forward(encode_prefix(seq), text_tokens, attendable);
}

void LmModel::merge_lora() {
  if (!cfg_.lora.enabled) {
    throw UsageError("merge_lora: adapters are not enabled");
  }
  const double s = cfg_.lora.alpha / static_cast<double>(cfg_.lora.rank);
  auto fold = [s](Linear& l) {
    if (!l.lora_a.defined()) {
      return;
    }
    const std::size_t in = l.w.rows(), out = l.w.cols(), r = l.lora_a.cols();
    auto w = l.w.mutable_values();
    const auto a = l.lora_a.values();
    auto bv = l.lora_b.mutable_values();
    for (std::size_t i = 0; i < in; ++i) {
      for (std::size_t k = 0; k < r; ++k) {
        const double aik = s * a[i * r + k];
        for (std::size_t j = 0; j < out; ++j) {
          w[i * out + j] += aik * bv[k * out + j];
        }
      }
    }
    std::fill(bv.begin(), bv.end(), 0.0);
  };
  for (Block& b : blocks_) {
    for (Linear* l : {&b.wq, &b.wk, &b.wv, &b.wo, &b.fc1, &b.fc2}) {
      fold(*l);
    }
  }
}

Tensor text_loss(const Tensor& logits, const Instruction& ins, std::size_t n_prefix) {
  if (ins.label.empty()) {
    throw UsageError("text_loss: empty supervised set");
  }
  const auto positions = ins.supervised_positions(n_prefix);
  std::vector<std::size_t> rows;
  for (std::size_t pos : positions) {
    if (pos == 0 || pos >= logits.rows()) {
      throw UsageError("text_loss: supervised position " + std::to_string(pos) +
                       " outside (0, " + std::to_string(logits.rows()) + ")");
    }
    rows.push_back(pos - 1);
  }
  std::vector<std::size_t> idx(rows.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    idx[k] = k;
  }
  Tensor lp = log_softmax(gather_rows(logits, rows));
  return neg(mean(pick(lp, idx, ins.label)));
}

Tensor aggregate_h(const Tensor& s_graph, const GraphTokenSequence& seq) {
  for (const auto& [v, idx] : seq.gamma) {
    if (idx.empty()) {
      throw UsageError("aggregate_h: empty Gamma for node " + std::to_string(v));
    }
    for (std::size_t i : idx) {
      if (i >= s_graph.rows()) {
        throw UsageError("aggregate_h: index " + std::to_string(i) + " outside [0, " +
                         std::to_string(s_graph.rows()) + ")");
      }
    }
  }
  return index_mean_pool(s_graph, seq.gamma_groups());
}

AttentionProbe attention_probe(const LmModel& model, const GraphTokenSequence& seq,
                               std::span<const std::size_t> text_tokens) {
  NoGradGuard no_grad;
  const ForwardResult fr = model.forward(seq, text_tokens);
  const auto& last = fr.attention.back();
  const std::size_t t_len = fr.logits.rows();
  const std::size_t n = fr.n_prefix;
  AttentionProbe probe;
  probe.per_slot.assign(n, 0.0);
  probe.per_slot_log.assign(n, 0.0);
  std::vector<double> row(t_len, 0.0);
  for (const Tensor& head : last) {
    for (std::size_t j = 0; j < t_len; ++j) {
      row[j] += head.at(t_len - 1, j) / static_cast<double>(last.size());
    }
  }
  for (std::size_t j = 0; j < t_len; ++j) {
    probe.row_total += row[j];
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (seq.slots[j].kind == SlotKind::Node) {
      probe.per_slot[j] = row[j];
      probe.per_slot_log[j] = std::log(std::max(row[j], 1e-300));
      probe.graph_mass += row[j];
    }
  }
  return probe;
}

std::vector<std::size_t> greedy_decode(const LmModel& model, const GraphTokenSequence& seq,
                                       std::span<const std::size_t> prompt, std::size_t count) {
  NoGradGuard no_grad;
  std::vector<std::size_t> tokens(prompt.begin(), prompt.end());
  std::vector<std::size_t> out;
  const Tensor prefix = model.encode_prefix(seq);
  std::vector<std::uint8_t> attendable;
  if (model.config().mask_placeholders) {
    for (const Slot& s : seq.slots) {
      attendable.push_back(s.kind == SlotKind::Placeholder ? 0 : 1);
    }
  }
  for (std::size_t step = 0; step < count; ++step) {
    const ForwardResult fr = model.forward(prefix, tokens, attendable);
    const std::size_t last = fr.logits.rows() - 1;
    const std::size_t v = fr.logits.cols();
    std::size_t best = 0;
    for (std::size_t j = 1; j < v; ++j) {
      if (fr.logits.at(last, j) > fr.logits.at(last, best)) {
        best = j;
      }
    }
    out.push_back(best);
    tokens.push_back(best);
  }
  return out;
}

}  // namespace rglm
