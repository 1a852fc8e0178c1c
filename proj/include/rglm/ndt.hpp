#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rglm/rng.hpp"
#include "rglm/tag.hpp"

// Neighbor Detail Template: fixed-size computational tree around a center
// node, padded with placeholders and flattened in level order.
namespace rglm {

enum class NeighborOrder { SortedById, SeededShuffle };

struct NdtConfig {
  std::size_t hops = 2;
  std::vector<std::size_t> branch{10, 10};  // per-level sample sizes b_1..b_h
  NeighborOrder order = NeighborOrder::SortedById;

  void validate() const;
  // sum_{i=0..h} prod_{j<=i} b_j
  std::size_t sequence_length() const;
};

enum class SlotKind : std::uint8_t { Node, Placeholder, Separator };

struct Slot {
  SlotKind kind = SlotKind::Placeholder;
  std::size_t node = 0;  // global node id, meaningful for SlotKind::Node
  std::size_t level = 0;
  std::optional<std::size_t> parent;  // index into the same level-order list

  bool operator==(const Slot&) const = default;
};

// Level-order tree; levels[i] holds prod_{j<=i} b_j slots and parent indices
// point into levels[i-1].
struct ComputationTree {
  std::vector<std::vector<Slot>> levels;
  std::size_t d_z = 0;
  std::map<std::size_t, std::vector<double>> features;  // node id -> z
};

struct GraphTokenSequence {
  std::vector<Slot> slots;
  std::vector<double> features;  // length x d_z; zero rows for non-node slots
  std::size_t d_z = 0;
  // Gamma(v): slot indices holding node v, ascending.
  std::map<std::size_t, std::vector<std::size_t>> gamma;

  std::size_t length() const { return slots.size(); }
  bool is_node(std::size_t i) const { return slots[i].kind == SlotKind::Node; }
  std::span<const double> feature(std::size_t i) const {
    return {features.data() + i * d_z, d_z};
  }
  // Distinct node ids in ascending order (row order of H).
  std::vector<std::size_t> nodes() const;
  // Gamma sets in nodes() order.
  std::vector<std::vector<std::size_t>> gamma_groups() const;
  // One line per slot: "level slot_index node_id|PAD|SEP".
  std::string dump() const;

  bool operator==(const GraphTokenSequence&) const = default;
};

ComputationTree build_tree(const Subgraph& sub, const NdtConfig& cfg, Rng& rng);
GraphTokenSequence serialize(const ComputationTree& tree);
// Two per-node sequences joined by one separator slot.
GraphTokenSequence serialize_pair(const Subgraph& sub_a, const Subgraph& sub_b,
                                  const NdtConfig& cfg, Rng& rng);

}  // namespace rglm
