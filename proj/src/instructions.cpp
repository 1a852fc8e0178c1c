#include "rglm/instructions.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "rglm/error.hpp"
#include "rglm/ops.hpp"

namespace rglm {

namespace {

const std::vector<std::string> kTemplateWords = {
    "which", "class", "is",    "this",   "node", "?",   "answer", ":",
    "are",   "these", "two",   "nodes",  "linked", "yes", "no"};

// Union of two neighbourhoods with every induced edge except exclude.
Subgraph merge_context(const Tag& tag, const Adjacency& adj, const Subgraph& a,
                       const Subgraph& b, std::optional<Edge> exclude) {
  Subgraph out;
  out.center = {a.center[0], b.center[0]};
  out.d_z = tag.meta.d_z;
  std::map<std::size_t, std::size_t> local;
  auto add = [&](const Subgraph& s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::size_t v = s.node_ids[i];
      auto it = local.find(v);
      if (it == local.end()) {
        local[v] = out.node_ids.size();
        out.node_ids.push_back(v);
        out.hop_of.push_back(s.hop_of[i]);
      } else {
        out.hop_of[it->second] = std::min(out.hop_of[it->second], s.hop_of[i]);
      }
    }
  };
  add(a);
  add(b);
  for (std::size_t i = 0; i < out.node_ids.size(); ++i) {
    const std::size_t u = out.node_ids[i];
    for (std::size_t v : adj[u]) {
      auto it = local.find(v);
      if (it == local.end() || it->second <= i) {
        continue;
      }
      if (exclude && std::minmax(u, v) == std::minmax(exclude->first, exclude->second)) {
        continue;
      }
      out.edges.emplace_back(i, it->second);
    }
    const auto f = tag.feature(u);
    out.features.insert(out.features.end(), f.begin(), f.end());
  }
  std::sort(out.edges.begin(), out.edges.end());
  return out;
}

// Decoder targets: raw features and existing pairs among
// the sequence nodes.
GraphTargets make_targets(const Tag& tag, const GraphTokenSequence& seq, const Subgraph& context) {
  const auto nodes = seq.nodes();
  GraphTargets t;
  std::vector<double> z;
  std::map<std::size_t, std::size_t> row;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    row[nodes[i]] = i;
    const auto f = tag.feature(nodes[i]);
    z.insert(z.end(), f.begin(), f.end());
  }
  t.features = Tensor::from(nodes.size(), tag.meta.d_z, std::move(z));
  for (const auto& [a, b] : context.edges) {
    auto ia = row.find(context.node_ids[a]);
    auto ib = row.find(context.node_ids[b]);
    if (ia != row.end() && ib != row.end()) {
      t.positives.emplace_back(std::min(ia->second, ib->second),
                               std::max(ia->second, ib->second));
    }
  }
  std::sort(t.positives.begin(), t.positives.end());
  return t;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> class_names)
    : class_names_(std::move(class_names)) {
  words_ = kTemplateWords;
  for (const auto& c : class_names_) {
    if (c.empty() || c.find(' ') != std::string::npos) {
      throw ConfigError("class name \"" + c + "\" must be a single nonempty word");
    }
    if (std::find(words_.begin(), words_.end(), c) != words_.end()) {
      throw ConfigError("class name \"" + c + "\" collides with a vocabulary word");
    }
    words_.push_back(c);
  }
  for (std::size_t i = 0; i < words_.size(); ++i) {
    ids_[words_[i]] = i;
  }
}

std::size_t Vocabulary::id(const std::string& w) const {
  auto it = ids_.find(w);
  if (it == ids_.end()) {
    throw UsageError("word \"" + w + "\" is not in the vocabulary");
  }
  return it->second;
}

const std::string& Vocabulary::word(std::size_t id) const {
  if (id >= words_.size()) {
    throw UsageError("token id " + std::to_string(id) + " outside the vocabulary");
  }
  return words_[id];
}

std::vector<std::size_t> Vocabulary::encode(const std::string& text) const {
  std::istringstream in(text);
  std::vector<std::size_t> out;
  std::string w;
  while (in >> w) {
    out.push_back(id(w));
  }
  return out;
}

std::string Vocabulary::decode(const std::vector<std::size_t>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out += (i ? " " : "") + word(ids[i]);
  }
  return out;
}

std::vector<std::string> class_names_of(const Tag& tag) {
  if (!tag.meta.class_names.empty()) {
    return tag.meta.class_names;
  }
  std::vector<std::string> out;
  for (std::size_t c = 0; c < tag.meta.num_classes; ++c) {
    out.push_back("class_" + std::to_string(c));
  }
  return out;
}

InstructionSet build_instructions(const Tag& tag, Task task, Split split, const NdtConfig& ndt,
                                  const Vocabulary& vocab, std::uint64_t seed) {
  ndt.validate();
  const Adjacency adj = build_adjacency(tag);
  const auto names = class_names_of(tag);
  Rng rng(seed);
  Rng pair_rng = rng.split();
  InstructionSet set;
  set.task = task;
  set.split = split;

  if (task == Task::NodeClassification) {
    set.num_answers = tag.meta.num_classes;
    const auto prompt = vocab.encode(kNodePrompt);
    for (std::size_t v : tag.nodes_in(split)) {
      if (!tag.labels[v]) {
        continue;
      }
      const std::size_t c = *tag.labels[v];
      if (c >= names.size()) {
        throw ConfigError("node " + std::to_string(v) + ": unknown class id " + std::to_string(c));
      }
      if (!vocab.contains(names[c])) {
        throw ConfigError("class name \"" + names[c] + "\" missing from the vocabulary");
      }
      Example ex;
      ex.id = v;
      ex.centers = {v};
      ex.context = sample_subgraph(tag, adj, v, ndt.hops, rng);
      ex.seq = serialize(build_tree(ex.context, ndt, rng));
      ex.ins.prompt = prompt;
      ex.ins.label = {vocab.id(names[c])};
      ex.answer = c;
      ex.targets = make_targets(tag, ex.seq, ex.context);
      set.examples.push_back(std::move(ex));
    }
    return set;
  }

  set.num_answers = 2;
  const auto prompt = vocab.encode(kLinkPrompt);
  const std::size_t yes = vocab.id("yes");
  const std::size_t no = vocab.id("no");
  std::vector<Edge> pos;
  for (const auto& e : tag.edges) {
    if (tag.splits[e.first] == split) {
      pos.push_back(e);
    }
  }
  const std::set<Edge> present(tag.edges.begin(), tag.edges.end());
  std::vector<std::size_t> in_split = tag.nodes_in(split);
  std::set<Edge> neg;
  const std::size_t max_tries = 1000 * (pos.size() + 1);
  for (std::size_t tries = 0; neg.size() < pos.size() && tries < max_tries; ++tries) {
    const std::size_t u = in_split[pair_rng.uniform_int(in_split.size())];
    const std::size_t v = pair_rng.uniform_int(tag.node_count);
    if (u == v) {
      continue;
    }
    const Edge e{std::min(u, v), std::max(u, v)};
    if (tag.splits[e.first] != split || present.contains(e)) {
      continue;
    }
    neg.insert(e);
  }
  std::vector<std::pair<Edge, bool>> pairs;
  for (const auto& e : pos) pairs.emplace_back(e, true);
  for (const auto& e : neg) pairs.emplace_back(e, false);
  pair_rng.shuffle(pairs);
  std::size_t id = 0;
  for (const auto& [e, linked] : pairs) {
    Example ex;
    ex.id = id++;
    ex.centers = {e.first, e.second};
    // The queried link is hidden from both neighbourhoods.
    const std::optional<Edge> hide = linked ? std::optional<Edge>(e) : std::nullopt;
    Subgraph a = sample_subgraph(tag, adj, e.first, ndt.hops, rng, hide);
    Subgraph b = sample_subgraph(tag, adj, e.second, ndt.hops, rng, hide);
    ex.seq = serialize_pair(a, b, ndt, rng);
    ex.context = merge_context(tag, adj, a, b, hide);
    ex.ins.prompt = prompt;
    ex.ins.label = {linked ? yes : no};
    ex.answer = linked ? 1 : 0;
    ex.targets = make_targets(tag, ex.seq, ex.context);
    set.examples.push_back(std::move(ex));
  }
  return set;
}

void attach_latents(InstructionSet& set, const GnnEncoder& encoder) {
  for (auto& ex : set.examples) {
    const Tensor e = encode_targets(encoder, ex.context);
    std::vector<std::size_t> rows;
    for (std::size_t v : ex.seq.nodes()) {
      rows.push_back(*ex.context.local_of(v));
    }
    ex.targets.latent = gather_rows(e, rows).detach();
  }
}

void attach_raw_latents(InstructionSet& set) {
  for (auto& ex : set.examples) {
    ex.targets.latent = ex.targets.features;
  }
}

}  // namespace rglm
