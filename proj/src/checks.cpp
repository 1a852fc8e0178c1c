#include "rglm/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "rglm/error.hpp"
#include "rglm/gnn.hpp"
#include "rglm/info.hpp"
#include "rglm/instructions.hpp"
#include "rglm/lm.hpp"
#include "rglm/ops.hpp"
#include "rglm/params.hpp"
#include "rglm/recon.hpp"

namespace rglm {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  std::vector<double> v(r * c);
  for (double& x : v) {
    x = rng.normal();
  }
  return Tensor::from(r, c, std::move(v));
}

}  // namespace

nlohmann::json MiSuiteReport::to_json() const {
  return {{"kind", kind},
          {"instances", instances},
          {"max_residual", max_residual},
          {"min_slack", min_slack},
          {"failures", failures},
          {"seconds", seconds}};
}

MiSuiteReport decomposition_suite(std::size_t instances, std::uint64_t seed, double tol) {
  const auto t0 = Clock::now();
  MiSuiteReport r;
  r.kind = "decomposition";
  Rng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    std::vector<std::size_t> sizes{2 + rng.uniform_int(3), 2 + rng.uniform_int(3),
                                   2 + rng.uniform_int(3)};
    const auto j = random_joint({"x", "s_G", "s_T"}, sizes, rng);
    const double res = verify_decomposition(j);
    r.max_residual = std::max(r.max_residual, res);
    if (!(res < tol)) {
      r.failures.push_back("instance " + std::to_string(i) + ": residual " + fmt(res));
    }
    ++r.instances;
  }
  r.seconds = since(t0);
  return r;
}

MiSuiteReport upper_bound_suite(std::size_t instances, std::uint64_t seed, double tol) {
  const auto t0 = Clock::now();
  MiSuiteReport r;
  r.kind = "upper_bound";
  r.min_slack = std::numeric_limits<double>::infinity();
  Rng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const PipelineJoint p = random_pipeline_joint(8, rng);
    const double slack = verify_upper_bound(p);
    r.min_slack = std::min(r.min_slack, slack);
    if (!(slack >= -tol)) {
      r.failures.push_back("instance " + std::to_string(i) + ": slack " + fmt(slack));
    }
    ++r.instances;
  }
  // Tight case: s_G = G, x = s_G, s_T independent of G.
  const std::size_t ng = 4;
  const auto pg = random_simplex(ng, rng);
  const auto pt = random_simplex(3, rng);
  std::vector<std::size_t> f(ng);
  std::vector<std::vector<double>> p_t(ng, pt);
  std::vector<std::vector<std::vector<double>>> p_x(ng, std::vector<std::vector<double>>(3));
  for (std::size_t g = 0; g < ng; ++g) {
    f[g] = g;
    for (auto& row : p_x[g]) {
      row.assign(ng, 0.0);
      row[g] = 1.0;
    }
  }
  const double tight = verify_upper_bound(make_pipeline_joint(pg, f, ng, p_t, p_x));
  r.min_slack = std::min(r.min_slack, tight);
  if (!(std::abs(tight) < tol)) {
    r.failures.push_back("tight case: slack " + fmt(tight));
  }
  ++r.instances;
  r.seconds = since(t0);
  return r;
}

MiSuiteReport dpi_suite(std::size_t instances, std::uint64_t seed, double tol) {
  const auto t0 = Clock::now();
  MiSuiteReport r;
  r.kind = "dpi";
  r.min_slack = std::numeric_limits<double>::infinity();
  Rng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const double slack = verify_dpi(random_markov_chain(6, rng));
    r.min_slack = std::min(r.min_slack, slack);
    if (!(slack >= -tol)) {
      r.failures.push_back("instance " + std::to_string(i) + ": slack " + fmt(slack));
    }
    ++r.instances;
  }
  r.seconds = since(t0);
  return r;
}

std::vector<GradSuiteEntry> grad_suite(std::size_t d_model, std::uint64_t seed,
                                       const std::vector<std::string>& which) {
  auto wanted = [&](const std::string& name) {
    return which.empty() || std::find(which.begin(), which.end(), name) != which.end();
  };
  Rng rng(seed);
  std::vector<GradSuiteEntry> out;
  auto record = [&](const std::string& name, const std::function<Tensor()>& fn,
                    const std::vector<Parameter>& params) {
    const GradCheckResult g = grad_check(fn, params);
    GradSuiteEntry e;
    e.loss = name;
    e.max_rel_error = g.max_rel_error;
    for (const auto& [pname, err] : g.per_param) {
      if (err == g.max_rel_error) {
        e.worst_param = pname;
      }
    }
    for (const auto& p : params) {
      e.scalars += p.tensor.size();
    }
    out.push_back(e);
  };

  const bool any_lm = wanted("text") || wanted("feat") || wanted("topo") || wanted("sim") ||
                      wanted("diff");
  if (any_lm) {
    SyntheticSpec spec;
    spec.nodes = 12;
    spec.classes = 2;
    spec.d_z = 4;
    spec.intra_p = 0.6;
    spec.inter_p = 0.1;
    spec.seed = seed;
    const Tag tag = generate_synthetic_tag(spec);
    const Vocabulary vocab(class_names_of(tag));
    NdtConfig ndt;
    ndt.hops = 2;
    ndt.branch = {2, 2};
    const InstructionSet set =
        build_instructions(tag, Task::NodeClassification, Split::Train, ndt, vocab, seed);
    const Example* ex = nullptr;
    std::vector<Edge> negatives;
    for (const auto& e : set.examples) {
      if (!e.targets.positives.empty()) {
        negatives = sample_negative_edges(e.seq.nodes().size(), e.targets.positives,
                                          e.targets.positives.size(), rng)
                        .pairs;
        if (!negatives.empty()) {
          ex = &e;
          break;
        }
      }
    }
    if (!ex) {
      throw PreconditionError("grad suite: no training example with edges and non-edges");
    }
    LmConfig lm;
    lm.vocab_size = vocab.size();
    lm.d_model = d_model;
    lm.n_layers = 2;
    lm.n_heads = 2;
    lm.max_len = 32;
    lm.d_z = spec.d_z;
    LmModel model(lm, rng);
    const auto tokens = ex->ins.text_tokens();
    auto hidden = [&] {
      return aggregate_h(model.forward(ex->seq, tokens).s_graph, ex->seq);
    };
    auto with = [&](const ParameterStore& head) {
      auto ps = model.params().params();
      ps.insert(ps.end(), head.params().begin(), head.params().end());
      return ps;
    };
    const std::size_t d_e = 6;
    const Tensor latent = random_matrix(ex->seq.nodes().size(), d_e, rng);

    if (wanted("text")) {
      record("text",
             [&] {
               const ForwardResult fr = model.forward(ex->seq, tokens);
               return text_loss(fr.logits, ex->ins, fr.n_prefix);
             },
             model.params().params());
    }
    const DecoderHead dec = DecoderHead::create(d_model, spec.d_z, 8, 4, 1.0, 1.0, rng);
    if (wanted("feat")) {
      record("feat", [&] { return feat_loss(hidden(), ex->targets.features, dec); },
             with(dec.params));
    }
    if (wanted("topo")) {
      record("topo",
             [&] { return topo_loss(hidden(), ex->targets.positives, negatives, dec); },
             with(dec.params));
    }
    if (wanted("sim")) {
      const SimilarizerHead sim = SimilarizerHead::create(d_model, d_e, 8, 1.0, rng);
      record("sim", [&] { return sim_loss(hidden(), latent, sim); }, with(sim.params));
    }
    if (wanted("diff")) {
      DenoiserHead::Config dc;
      dc.d_model = d_model;
      dc.d_e = d_e;
      dc.d_hidden = 8;
      dc.n_blocks = 1;
      dc.n_heads = 2;
      const DenoiserHead den(dc, NoiseSchedule::linear(100), 1.0, rng);
      const DiffusionSample sample = draw_diffusion_sample(den.schedule(), latent, rng);
      record("diff", [&] { return diff_loss_at(den, latent, hidden(), sample); },
             with(den.params()));
    }
  }

  if (wanted("pretrain")) {
    SyntheticSpec spec;
    spec.nodes = 10;
    spec.classes = 2;
    spec.d_z = 4;
    spec.intra_p = 0.6;
    spec.inter_p = 0.1;
    spec.seed = seed + 1;
    spec.train_frac = 0.8;
    spec.val_frac = 0.1;
    const Tag tag = generate_synthetic_tag(spec);
    GnnConfig gc;
    gc.d_z = 4;
    gc.num_classes = 2;
    gc.d_e = 6;
    gc.n_layers = 3;
    gc.d_label = 3;
    gc.pe_k = 2;
    gc.rw_steps = 3;
    const GnnEncoder enc(gc, rng);
    const GnnGraph g = make_gnn_graph(tag.node_count, tag.edges, tag.features, gc);
    std::vector<std::optional<std::size_t>> labels(tag.node_count);
    const auto train_nodes = tag.nodes_in(Split::Train);
    for (std::size_t v : train_nodes) {
      labels[v] = tag.labels[v];
    }
    const auto masked = choose_masked(train_nodes, 0.8, rng);
    const Tensor eps = random_matrix(tag.node_count, gc.d_e, rng);
    record("pretrain", [&] { return pretrain_loss(enc, g, labels, masked, eps).total; },
           enc.params().params());
  }
  return out;
}

}  // namespace rglm
