#include "rglm/ndt.hpp"

#include <algorithm>
#include <sstream>

#include "rglm/error.hpp"

namespace rglm {

void NdtConfig::validate() const {
  if (hops < 1) {
    throw ParameterError("ndt: hops must be >= 1");
  }
  if (branch.size() != hops) {
    throw ParameterError("ndt: " + std::to_string(branch.size()) + " branch sizes for " +
                         std::to_string(hops) + " hops");
  }
  for (std::size_t b : branch) {
    if (b < 1) {
      throw ParameterError("ndt: branch sizes must be positive");
    }
  }
}

std::size_t NdtConfig::sequence_length() const {
  std::size_t total = 1;
  std::size_t level = 1;
  for (std::size_t b : branch) {
    level *= b;
    total += level;
  }
  return total;
}

std::vector<std::size_t> GraphTokenSequence::nodes() const {
  std::vector<std::size_t> out;
  out.reserve(gamma.size());
  for (const auto& [v, idx] : gamma) {
    out.push_back(v);
  }
  return out;
}

std::vector<std::vector<std::size_t>> GraphTokenSequence::gamma_groups() const {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(gamma.size());
  for (const auto& [v, idx] : gamma) {
    out.push_back(idx);
  }
  return out;
}

std::string GraphTokenSequence::dump() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Slot& s = slots[i];
    os << s.level << ' ' << i << ' ';
    switch (s.kind) {
      case SlotKind::Node:
        os << s.node;
        break;
      case SlotKind::Placeholder:
        os << "PAD";
        break;
      case SlotKind::Separator:
        os << "SEP";
        break;
    }
    os << '\n';
  }
  return os.str();
}

ComputationTree build_tree(const Subgraph& sub, const NdtConfig& cfg, Rng& rng) {
  cfg.validate();
  if (sub.center.empty() || !sub.local_of(sub.center[0])) {
    throw ParameterError("build_tree: subgraph center missing from its node set");
  }
  const Adjacency adj = sub.adjacency();
  ComputationTree tree;
  tree.d_z = sub.d_z;
  for (std::size_t i = 0; i < sub.size(); ++i) {
    const auto f = sub.feature(i);
    tree.features[sub.node_ids[i]].assign(f.begin(), f.end());
  }

  const std::size_t root_local = *sub.local_of(sub.center[0]);
  tree.levels.push_back({Slot{SlotKind::Node, sub.center[0], 0, std::nullopt}});
  std::vector<std::size_t> frontier_local{root_local};

  for (std::size_t level = 1; level <= cfg.hops; ++level) {
    const std::size_t b = cfg.branch[level - 1];
    const auto& parents = tree.levels.back();
    std::vector<Slot> next;
    std::vector<std::size_t> next_local;
    next.reserve(parents.size() * b);
    for (std::size_t p = 0; p < parents.size(); ++p) {
      std::vector<std::size_t> chosen;  // local ids
      if (parents[p].kind == SlotKind::Node) {
        std::vector<std::size_t> nbrs = adj[frontier_local[p]];
        // Ascending global id.
        std::sort(nbrs.begin(), nbrs.end(), [&](std::size_t x, std::size_t y) {
          return sub.node_ids[x] < sub.node_ids[y];
        });
        if (cfg.order == NeighborOrder::SeededShuffle) {
          rng.shuffle(nbrs);
        }
        if (nbrs.size() > b) {
          auto pick = rng.sample_without_replacement(nbrs.size(), b);
          if (cfg.order == NeighborOrder::SortedById) {
            std::sort(pick.begin(), pick.end());
          }
          for (std::size_t k : pick) {
            chosen.push_back(nbrs[k]);
          }
        } else {
          chosen = nbrs;
        }
      }
      for (std::size_t k = 0; k < b; ++k) {
        if (k < chosen.size()) {
          next.push_back(Slot{SlotKind::Node, sub.node_ids[chosen[k]], level, p});
          next_local.push_back(chosen[k]);
        } else {
          next.push_back(Slot{SlotKind::Placeholder, 0, level, p});
          next_local.push_back(SIZE_MAX);
        }
      }
    }
    tree.levels.push_back(std::move(next));
    frontier_local = std::move(next_local);
  }
  return tree;
}

GraphTokenSequence serialize(const ComputationTree& tree) {
  GraphTokenSequence seq;
  seq.d_z = tree.d_z;
  std::size_t level_offset = 0;
  std::size_t prev_offset = 0;
  for (const auto& level : tree.levels) {
    for (const Slot& s : level) {
      Slot out = s;
      if (s.parent) {
        out.parent = prev_offset + *s.parent;
      }
      const std::size_t idx = seq.slots.size();
      seq.slots.push_back(out);
      if (s.kind == SlotKind::Node) {
        const auto& f = tree.features.at(s.node);
        seq.features.insert(seq.features.end(), f.begin(), f.end());
        seq.gamma[s.node].push_back(idx);
      } else {
        seq.features.insert(seq.features.end(), tree.d_z, 0.0);
      }
    }
    prev_offset = level_offset;
    level_offset += level.size();
  }
  return seq;
}

GraphTokenSequence serialize_pair(const Subgraph& sub_a, const Subgraph& sub_b,
                                  const NdtConfig& cfg, Rng& rng) {
  if (sub_a.d_z != sub_b.d_z) {
    throw DimensionError("serialize_pair: feature dims differ");
  }
  GraphTokenSequence seq = serialize(build_tree(sub_a, cfg, rng));
  const GraphTokenSequence b = serialize(build_tree(sub_b, cfg, rng));
  seq.slots.push_back(Slot{SlotKind::Separator, 0, 0, std::nullopt});
  seq.features.insert(seq.features.end(), seq.d_z, 0.0);
  const std::size_t offset = seq.slots.size();
  for (Slot s : b.slots) {
    if (s.parent) {
      *s.parent += offset;
    }
    seq.slots.push_back(s);
  }
  seq.features.insert(seq.features.end(), b.features.begin(), b.features.end());
  for (const auto& [v, idx] : b.gamma) {
    auto& dst = seq.gamma[v];
    for (std::size_t i : idx) {
      dst.push_back(i + offset);
    }
  }
  return seq;
}

}  // namespace rglm
