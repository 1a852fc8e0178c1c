#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rglm/lm.hpp"
#include "rglm/ndt.hpp"
#include "rglm/recon.hpp"

namespace rglm {

// Flat key=value configuration. '#' starts a comment; blank lines ignored.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(const std::string& text, const std::string& origin = "<config>");
ConfigMap load_config_file(const std::filesystem::path& path);
// Applies every "--key=value" argument to map; other arguments are returned.
std::vector<std::string> apply_overrides(ConfigMap& map, std::span<const std::string> args);
std::string format_config(const ConfigMap& map);

// Removes key from map and returns its value, if present.
std::optional<std::string> take(ConfigMap& map, const std::string& key);

double parse_double(const std::string& key, const std::string& value);
std::size_t parse_size(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
std::vector<double> parse_double_list(const std::string& key, const std::string& value);

enum class Task { NodeClassification, LinkPrediction };

std::string to_string(Task t);
Task task_from_string(const std::string& s);

struct TrainConfig {
  Variant variant = Variant::Vanilla;
  double lambda_f = 0.4;
  double lambda_s = 2.0;
  double lambda_l = 1.0;
  double lr = 5e-4;
  double warmup_frac = 0.03;
  bool cosine = true;
  double weight_decay = 0.0;
  std::size_t batch_size = 4;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  std::size_t replicate = 3;
  Task task = Task::NodeClassification;
  std::string dataset;
  std::string pregnn;  // encoder checkpoint for latent variants
  bool no_feat = false;
  bool no_topo = false;
  bool no_pregnn = false;  // latent targets become the raw features
  NdtConfig ndt;
  LmConfig lm;
  std::size_t head_hidden = 64;
  std::size_t head_proj = 16;
  bool sim_whole_matrix = false;
  std::size_t diffusion_steps = 100;
  std::size_t denoiser_hidden = 32;
  std::size_t denoiser_blocks = 1;
  std::size_t denoiser_heads = 2;

  // lambda_f / lambda_s after the w/o L_feat and w/o L_topo switches.
  double effective_lambda_f() const { return no_feat ? 0.0 : lambda_f; }
  double effective_lambda_s() const { return no_topo ? 0.0 : lambda_s; }
  bool latent_variant() const {
    return variant == Variant::Similarizer || variant == Variant::Denoiser;
  }

  // Throws ConfigError on inconsistent settings.
  void validate() const;
  // Unknown keys raise ConfigError.
  static TrainConfig from_map(const ConfigMap& map);
  ConfigMap to_map() const;
};

}  // namespace rglm
