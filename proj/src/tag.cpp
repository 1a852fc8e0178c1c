#include "rglm/tag.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <set>

#include "rglm/error.hpp"

namespace rglm {

std::string to_string(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ParseError("unknown split \"" + s + "\"");
}

std::vector<std::size_t> Tag::nodes_in(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t v = 0; v < node_count; ++v) {
    if (splits[v] == s) {
      out.push_back(v);
    }
  }
  return out;
}

void Tag::validate() const {
  if (features.size() != node_count * meta.d_z) {
    throw ParameterError("tag: features hold " + std::to_string(features.size()) +
                         " values, expected " + std::to_string(node_count) + " x " +
                         std::to_string(meta.d_z));
  }
  if (labels.size() != node_count || splits.size() != node_count) {
    throw ParameterError("tag: labels/splits length differs from node_count");
  }
  if (meta.class_names.size() != meta.num_classes) {
    throw ParameterError("tag: class_names has " + std::to_string(meta.class_names.size()) +
                         " entries for " + std::to_string(meta.num_classes) + " classes");
  }
  std::set<Edge> seen;
  for (const auto& [u, v] : edges) {
    if (u >= node_count || v >= node_count) {
      throw ParameterError("tag: edge (" + std::to_string(u) + ", " + std::to_string(v) +
                           ") has invalid endpoint");
    }
    if (u == v) {
      throw ParameterError("tag: self-loop at node " + std::to_string(u));
    }
    if (!seen.insert({std::min(u, v), std::max(u, v)}).second) {
      throw ParameterError("tag: duplicate edge (" + std::to_string(u) + ", " +
                           std::to_string(v) + ")");
    }
  }
  for (std::size_t v = 0; v < node_count; ++v) {
    if (labels[v] && *labels[v] >= meta.num_classes) {
      throw ParameterError("tag: node " + std::to_string(v) + " label " +
                           std::to_string(*labels[v]) + " outside [0, " +
                           std::to_string(meta.num_classes) + ")");
    }
  }
}

Adjacency build_adjacency(std::size_t node_count, std::span<const Edge> edges) {
  Adjacency adj(node_count);
  for (const auto& [u, v] : edges) {
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  for (auto& row : adj) {
    std::sort(row.begin(), row.end());
  }
  return adj;
}

namespace {

std::vector<std::string> default_class_names(std::size_t classes) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes; ++c) {
    names.push_back("class_" + std::to_string(c));
  }
  return names;
}

}  // namespace

Tag generate_synthetic_tag(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.nodes < spec.classes) {
    throw ParameterError("generate_synthetic_tag: need nodes >= classes >= 2");
  }
  if (!(spec.inter_p >= 0.0 && spec.inter_p < spec.intra_p && spec.intra_p <= 1.0)) {
    throw ParameterError("generate_synthetic_tag: need 0 <= inter_p < intra_p <= 1");
  }
  if (spec.d_z < spec.classes) {
    throw ParameterError("generate_synthetic_tag: d_z must be >= classes");
  }
  if (!(spec.feature_noise >= 0.0)) {
    throw ParameterError("generate_synthetic_tag: feature_noise must be nonnegative");
  }
  if (spec.train_frac < 0.0 || spec.val_frac < 0.0 || spec.train_frac + spec.val_frac > 1.0) {
    throw ParameterError("generate_synthetic_tag: invalid split fractions");
  }
  if (!spec.class_names.empty() && spec.class_names.size() != spec.classes) {
    throw ParameterError("generate_synthetic_tag: class_names size differs from classes");
  }

  Rng rng(spec.seed);
  Rng edge_rng = rng.split();
  Rng feat_rng = rng.split();
  Rng split_rng = rng.split();

  Tag tag;
  tag.node_count = spec.nodes;
  tag.meta = {spec.d_z, spec.classes, spec.name,
              spec.class_names.empty() ? default_class_names(spec.classes) : spec.class_names};
  tag.labels.resize(spec.nodes);
  for (std::size_t v = 0; v < spec.nodes; ++v) {
    tag.labels[v] = v * spec.classes / spec.nodes;
  }

  for (std::size_t u = 0; u < spec.nodes; ++u) {
    for (std::size_t v = u + 1; v < spec.nodes; ++v) {
      const double p = tag.labels[u] == tag.labels[v] ? spec.intra_p : spec.inter_p;
      if (edge_rng.uniform() < p) {
        tag.edges.emplace_back(u, v);
      }
    }
  }

  const bool pure_noise = std::isinf(spec.feature_noise);
  tag.features.resize(spec.nodes * spec.d_z);
  for (std::size_t v = 0; v < spec.nodes; ++v) {
    for (std::size_t k = 0; k < spec.d_z; ++k) {
      const double eps = feat_rng.normal();
      double x;
      if (pure_noise) {
        x = eps;
      } else {
        x = (k == *tag.labels[v] ? 1.0 : 0.0) + spec.feature_noise * eps;
      }
      tag.features[v * spec.d_z + k] = x;
    }
  }

  std::vector<std::size_t> order(spec.nodes);
  std::iota(order.begin(), order.end(), 0);
  split_rng.shuffle(order);
  const auto n_train =
      static_cast<std::size_t>(std::llround(spec.train_frac * static_cast<double>(spec.nodes)));
  const auto n_val =
      static_cast<std::size_t>(std::llround(spec.val_frac * static_cast<double>(spec.nodes)));
  tag.splits.assign(spec.nodes, Split::Test);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_train) {
      tag.splits[order[i]] = Split::Train;
    } else if (i < n_train + n_val) {
      tag.splits[order[i]] = Split::Val;
    }
  }
  tag.validate();
  return tag;
}

std::optional<std::size_t> Subgraph::local_of(std::size_t global) const {
  for (std::size_t i = 0; i < node_ids.size(); ++i) {
    if (node_ids[i] == global) {
      return i;
    }
  }
  return std::nullopt;
}

Subgraph sample_subgraph(const Tag& tag, const Adjacency& adj, std::size_t center,
                         std::size_t h, Rng& /*rng*/, std::optional<Edge> exclude) {
  if (center >= tag.node_count) {
    throw ParameterError("sample_subgraph: invalid center " + std::to_string(center));
  }
  if (h < 1) {
    throw ParameterError("sample_subgraph: h must be >= 1");
  }
  auto excluded = [&](std::size_t u, std::size_t v) {
    return exclude && ((exclude->first == u && exclude->second == v) ||
                       (exclude->first == v && exclude->second == u));
  };

  Subgraph sub;
  sub.center = {center};
  sub.d_z = tag.meta.d_z;
  std::vector<std::size_t> local(tag.node_count, SIZE_MAX);
  std::deque<std::size_t> queue{center};
  local[center] = 0;
  sub.node_ids.push_back(center);
  sub.hop_of.push_back(0);
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    const std::size_t hu = sub.hop_of[local[u]];
    if (hu == h) {
      continue;
    }
    for (std::size_t v : adj[u]) {
      if (local[v] == SIZE_MAX && !excluded(u, v)) {
        local[v] = sub.node_ids.size();
        sub.node_ids.push_back(v);
        sub.hop_of.push_back(hu + 1);
        queue.push_back(v);
      }
    }
  }
  for (std::size_t i = 0; i < sub.node_ids.size(); ++i) {
    const std::size_t u = sub.node_ids[i];
    for (std::size_t v : adj[u]) {
      if (local[v] != SIZE_MAX && i < local[v] && !excluded(u, v)) {
        sub.edges.emplace_back(i, local[v]);
      }
    }
    const auto f = tag.feature(u);
    sub.features.insert(sub.features.end(), f.begin(), f.end());
  }
  std::sort(sub.edges.begin(), sub.edges.end());
  return sub;
}

Subgraph sample_subgraph(const Tag& tag, std::size_t center, std::size_t h, Rng& rng) {
  return sample_subgraph(tag, build_adjacency(tag), center, h, rng);
}

nlohmann::json tag_to_json(const Tag& tag) {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t v = 0; v < tag.node_count; ++v) {
    const auto f = tag.feature(v);
    nlohmann::json label = nullptr;
    if (tag.labels[v]) {
      label = *tag.labels[v];
    }
    nodes.push_back({{"id", v},
                     {"feat", std::vector<double>(f.begin(), f.end())},
                     {"label", label},
                     {"split", to_string(tag.splits[v])}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [u, v] : tag.edges) {
    edges.push_back({u, v});
  }
  return {{"meta",
           {{"d_z", tag.meta.d_z},
            {"num_classes", tag.meta.num_classes},
            {"name", tag.meta.name},
            {"class_names", tag.meta.class_names}}},
          {"nodes", nodes},
          {"edges", edges}};
}

namespace {

Tag parse_tag(const nlohmann::json& j) {
  Tag tag;
  try {
    const auto& meta = j.at("meta");
    tag.meta.d_z = meta.at("d_z").get<std::size_t>();
    tag.meta.num_classes = meta.at("num_classes").get<std::size_t>();
    tag.meta.name = meta.at("name").get<std::string>();
    if (meta.contains("class_names")) {
      tag.meta.class_names = meta.at("class_names").get<std::vector<std::string>>();
    } else {
      tag.meta.class_names = default_class_names(tag.meta.num_classes);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("meta: ") + e.what());
  }

  const auto& nodes = j.at("nodes");
  tag.node_count = nodes.size();
  tag.features.assign(tag.node_count * tag.meta.d_z, 0.0);
  tag.labels.assign(tag.node_count, std::nullopt);
  tag.splits.assign(tag.node_count, Split::Train);
  std::vector<bool> seen(tag.node_count, false);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    const std::string where = "node record " + std::to_string(i);
    try {
      const auto id = n.at("id").get<std::size_t>();
      if (id >= tag.node_count || seen[id]) {
        throw ParseError(where + ": invalid or repeated id " + std::to_string(id));
      }
      seen[id] = true;
      const auto feat = n.at("feat").get<std::vector<double>>();
      if (feat.size() != tag.meta.d_z) {
        throw ParseError(where + ": feature length " + std::to_string(feat.size()) +
                         " != d_z " + std::to_string(tag.meta.d_z));
      }
      std::copy(feat.begin(), feat.end(), tag.features.begin() + id * tag.meta.d_z);
      if (!n.at("label").is_null()) {
        const auto label = n.at("label").get<std::size_t>();
        if (label >= tag.meta.num_classes) {
          throw ParseError(where + ": label " + std::to_string(label) + " out of range");
        }
        tag.labels[id] = label;
      }
      tag.splits[id] = split_from_string(n.at("split").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    } catch (const ParseError& e) {
      if (std::string(e.what()).starts_with("node record")) {
        throw;
      }
      throw ParseError(where + ": " + e.what());
    }
  }

  std::set<Edge> edge_set;
  const auto& edges = j.at("edges");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::string where = "edge record " + std::to_string(i);
    std::size_t u, v;
    try {
      u = edges[i].at(0).get<std::size_t>();
      v = edges[i].at(1).get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (u >= tag.node_count || v >= tag.node_count) {
      throw ParseError(where + " [" + std::to_string(u) + ", " + std::to_string(v) +
                       "]: invalid endpoint");
    }
    if (u == v) {
      throw ParseError(where + " [" + std::to_string(u) + ", " + std::to_string(v) +
                       "]: self-loop");
    }
    if (!edge_set.insert({std::min(u, v), std::max(u, v)}).second) {
      throw ParseError(where + " [" + std::to_string(u) + ", " + std::to_string(v) +
                       "]: duplicate edge");
    }
  }
  tag.edges.assign(edge_set.begin(), edge_set.end());
  try {
    tag.validate();
  } catch (const ParameterError& e) {
    throw ParseError(e.what());
  }
  return tag;
}

}  // namespace

Tag tag_from_json(const nlohmann::json& j) {
  try {
    return parse_tag(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("tag document: ") + e.what());
  }
}

void save_tag(const Tag& tag, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw ParameterError("save_tag: cannot write " + path.string());
  }
  out << tag_to_json(tag).dump() << '\n';
}

Tag load_tag(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ParseError("load_tag: cannot read " + path.string());
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("load_tag: " + path.string() + ": " + e.what());
  }
  return tag_from_json(j);
}

}  // namespace rglm
