#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rglm/rng.hpp"

namespace rglm {

enum class Split { Train, Val, Test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

using Edge = std::pair<std::size_t, std::size_t>;
using Adjacency = std::vector<std::vector<std::size_t>>;

struct TagMeta {
  std::size_t d_z = 0;
  std::size_t num_classes = 0;
  std::string name;
  // Label vocabulary; defaults to "class_<i>".
  std::vector<std::string> class_names;

  bool operator==(const TagMeta&) const = default;
};

// Text-attributed graph with node text replaced by feature vectors.
// Undirected, simple; edges stored as sorted (u < v) pairs.
struct Tag {
  std::size_t node_count = 0;
  std::vector<Edge> edges;
  std::vector<double> features;  // node_count x d_z, row-major
  std::vector<std::optional<std::size_t>> labels;
  std::vector<Split> splits;
  TagMeta meta;

  std::span<const double> feature(std::size_t v) const {
    return {features.data() + v * meta.d_z, meta.d_z};
  }
  std::vector<std::size_t> nodes_in(Split s) const;

  // Throws ParameterError on any broken invariant.
  void validate() const;

  bool operator==(const Tag&) const = default;
};

Adjacency build_adjacency(std::size_t node_count, std::span<const Edge> edges);
inline Adjacency build_adjacency(const Tag& tag) {
  return build_adjacency(tag.node_count, tag.edges);
}

struct SyntheticSpec {
  std::size_t nodes = 300;
  std::size_t classes = 4;
  std::size_t d_z = 8;
  double intra_p = 0.1;
  double inter_p = 0.01;
  // Standard deviation of the Gaussian noise added to class prototypes;
  // infinity means pure-noise features (prototypes dropped).
  double feature_noise = 1.0;
  std::uint64_t seed = 0;
  double train_frac = 0.6;
  double val_frac = 0.2;
  std::string name = "sbm";
  std::vector<std::string> class_names;  // empty -> defaults
};

// Stochastic block model with contiguous equal-size blocks; features are
// one-hot class prototypes plus isotropic Gaussian noise.
Tag generate_synthetic_tag(const SyntheticSpec& spec);

struct Subgraph {
  std::vector<std::size_t> center;    // one node, or two for pair tasks
  std::vector<std::size_t> node_ids;  // local -> global, in BFS order
  std::vector<Edge> edges;            // local ids, induced, sorted
  std::vector<double> features;       // |nodes| x d_z
  std::size_t d_z = 0;
  std::vector<std::size_t> hop_of;

  std::size_t size() const { return node_ids.size(); }
  std::span<const double> feature(std::size_t local) const {
    return {features.data() + local * d_z, d_z};
  }
  std::optional<std::size_t> local_of(std::size_t global) const;
  Adjacency adjacency() const { return build_adjacency(size(), edges); }

  bool operator==(const Subgraph&) const = default;
};

// Breadth-first closure up to h hops around center, with every induced edge.
// exclude, when given, is treated as absent (held-out target links).
Subgraph sample_subgraph(const Tag& tag, const Adjacency& adj, std::size_t center,
                         std::size_t h, Rng& rng,
                         std::optional<Edge> exclude = std::nullopt);
Subgraph sample_subgraph(const Tag& tag, std::size_t center, std::size_t h, Rng& rng);

nlohmann::json tag_to_json(const Tag& tag);
Tag tag_from_json(const nlohmann::json& j);
void save_tag(const Tag& tag, const std::filesystem::path& path);
Tag load_tag(const std::filesystem::path& path);

}  // namespace rglm
