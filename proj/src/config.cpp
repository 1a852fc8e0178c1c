#include "rglm/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rglm/error.hpp"

namespace rglm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return "";
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out += (i ? "," : "") + std::to_string(v[i]);
  }
  return out;
}

}  // namespace

ConfigMap parse_config_text(const std::string& text, const std::string& origin) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line.erase(hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    map[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return map;
}

ConfigMap load_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) {
    throw ConfigError("cannot read config " + path.string());
  }
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::vector<std::string> apply_overrides(ConfigMap& map, std::span<const std::string> args) {
  std::vector<std::string> rest;
  for (const auto& a : args) {
    const auto eq = a.find('=');
    if (a.rfind("--", 0) == 0 && eq != std::string::npos && eq > 2) {
      map[a.substr(2, eq - 2)] = a.substr(eq + 1);
    } else {
      rest.push_back(a);
    }
  }
  return rest;
}

std::string format_config(const ConfigMap& map) {
  std::string out;
  for (const auto& [k, v] : map) {
    out += k + "=" + v + "\n";
  }
  return out;
}

std::optional<std::string> take(ConfigMap& map, const std::string& key) {
  auto it = map.find(key);
  if (it == map.end()) {
    return std::nullopt;
  }
  std::string v = it->second;
  map.erase(it);
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(value, &pos);
    if (pos != value.size()) {
      throw std::invalid_argument(value);
    }
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": \"" + value + "\" is not a number");
  }
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto* end = value.data() + value.size();
  const auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end || value.empty()) {
    throw ConfigError(key + ": \"" + value + "\" is not a nonnegative integer");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError(key + ": \"" + value + "\" is not a boolean");
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::istringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    out.push_back(parse_double(key, trim(item)));
  }
  if (out.empty()) {
    throw ConfigError(key + ": empty list");
  }
  return out;
}

std::string to_string(Task t) {
  return t == Task::NodeClassification ? "node" : "link";
}

Task task_from_string(const std::string& s) {
  if (s == "node" || s == "node_classification") return Task::NodeClassification;
  if (s == "link" || s == "link_prediction") return Task::LinkPrediction;
  throw ConfigError("unknown task \"" + s + "\"");
}

void TrainConfig::validate() const {
  auto nonneg = [](const char* name, double v) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string(name) + " must be a finite nonnegative number");
    }
  };
  nonneg("lambda_f", lambda_f);
  nonneg("lambda_s", lambda_s);
  nonneg("lambda_l", lambda_l);
  nonneg("weight_decay", weight_decay);
  if (!(lr > 0.0)) {
    throw ConfigError("lr must be positive");
  }
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) {
    throw ConfigError("warmup must lie in [0, 1)");
  }
  if (batch_size == 0 || replicate == 0) {
    throw ConfigError("batch_size and replicate must be positive");
  }
  if (latent_variant() && pregnn.empty() && !no_pregnn) {
    throw ConfigError(to_string(variant) +
                      " needs a pre-trained encoder (pregnn=...) unless no_pregnn is set");
  }
  if (diffusion_steps == 0) {
    throw ConfigError("diffusion_steps must be positive");
  }
  try {
    ndt.validate();
    lm.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  if (ndt.sequence_length() * (task == Task::LinkPrediction ? 2 : 1) + 16 > lm.max_len) {
    throw ConfigError("max_len " + std::to_string(lm.max_len) +
                      " too short for graph sequences of length " +
                      std::to_string(ndt.sequence_length()));
  }
}

TrainConfig TrainConfig::from_map(const ConfigMap& map) {
  TrainConfig c;
  for (const auto& [k, v] : map) {
    if (k == "variant") c.variant = variant_from_string(v);
    else if (k == "lambda_f") c.lambda_f = parse_double(k, v);
    else if (k == "lambda_s") c.lambda_s = parse_double(k, v);
    else if (k == "lambda_l") c.lambda_l = parse_double(k, v);
    else if (k == "lr") c.lr = parse_double(k, v);
    else if (k == "warmup") c.warmup_frac = parse_double(k, v);
    else if (k == "cosine") c.cosine = parse_bool(k, v);
    else if (k == "weight_decay") c.weight_decay = parse_double(k, v);
    else if (k == "batch_size") c.batch_size = parse_size(k, v);
    else if (k == "epochs") c.epochs = parse_size(k, v);
    else if (k == "seed") c.seed = parse_size(k, v);
    else if (k == "replicate") c.replicate = parse_size(k, v);
    else if (k == "task") c.task = task_from_string(v);
    else if (k == "dataset") c.dataset = v;
    else if (k == "pregnn") c.pregnn = v;
    else if (k == "no_feat") c.no_feat = parse_bool(k, v);
    else if (k == "no_topo") c.no_topo = parse_bool(k, v);
    else if (k == "no_pregnn") c.no_pregnn = parse_bool(k, v);
    else if (k == "hops") c.ndt.hops = parse_size(k, v);
    else if (k == "branch") {
      c.ndt.branch.clear();
      for (double b : parse_double_list(k, v)) {
        if (b < 0 || b != std::floor(b)) {
          throw ConfigError("branch: sizes must be nonnegative integers");
        }
        c.ndt.branch.push_back(static_cast<std::size_t>(b));
      }
    } else if (k == "neighbor_order") {
      if (v == "sorted") c.ndt.order = NeighborOrder::SortedById;
      else if (v == "shuffle") c.ndt.order = NeighborOrder::SeededShuffle;
      else throw ConfigError("neighbor_order must be sorted or shuffle");
    }
    else if (k == "d_model") c.lm.d_model = parse_size(k, v);
    else if (k == "n_layers") c.lm.n_layers = parse_size(k, v);
    else if (k == "n_heads") c.lm.n_heads = parse_size(k, v);
    else if (k == "max_len") c.lm.max_len = parse_size(k, v);
    else if (k == "projector_layers") c.lm.projector_layers = parse_size(k, v);
    else if (k == "mask_placeholders") c.lm.mask_placeholders = parse_bool(k, v);
    else if (k == "lora") c.lm.lora.enabled = parse_bool(k, v);
    else if (k == "lora_rank") c.lm.lora.rank = parse_size(k, v);
    else if (k == "lora_alpha") c.lm.lora.alpha = parse_double(k, v);
    else if (k == "lora_mlp") c.lm.lora.target_mlp = parse_bool(k, v);
    else if (k == "head_hidden") c.head_hidden = parse_size(k, v);
    else if (k == "head_proj") c.head_proj = parse_size(k, v);
    else if (k == "sim_whole_matrix") c.sim_whole_matrix = parse_bool(k, v);
    else if (k == "diffusion_steps") c.diffusion_steps = parse_size(k, v);
    else if (k == "denoiser_hidden") c.denoiser_hidden = parse_size(k, v);
    else if (k == "denoiser_blocks") c.denoiser_blocks = parse_size(k, v);
    else if (k == "denoiser_heads") c.denoiser_heads = parse_size(k, v);
    else throw ConfigError("unknown config key \"" + k + "\"");
  }
  return c;
}

ConfigMap TrainConfig::to_map() const {
  ConfigMap m;
  m["variant"] = to_string(variant);
  m["lambda_f"] = fmt(lambda_f);
  m["lambda_s"] = fmt(lambda_s);
  m["lambda_l"] = fmt(lambda_l);
  m["lr"] = fmt(lr);
  m["warmup"] = fmt(warmup_frac);
  m["cosine"] = cosine ? "true" : "false";
  m["weight_decay"] = fmt(weight_decay);
  m["batch_size"] = std::to_string(batch_size);
  m["epochs"] = std::to_string(epochs);
  m["seed"] = std::to_string(seed);
  m["replicate"] = std::to_string(replicate);
  m["task"] = to_string(task);
  m["dataset"] = dataset;
  m["pregnn"] = pregnn;
  m["no_feat"] = no_feat ? "true" : "false";
  m["no_topo"] = no_topo ? "true" : "false";
  m["no_pregnn"] = no_pregnn ? "true" : "false";
  m["hops"] = std::to_string(ndt.hops);
  m["branch"] = join_sizes(ndt.branch);
  m["neighbor_order"] = ndt.order == NeighborOrder::SortedById ? "sorted" : "shuffle";
  m["d_model"] = std::to_string(lm.d_model);
  m["n_layers"] = std::to_string(lm.n_layers);
  m["n_heads"] = std::to_string(lm.n_heads);
  m["max_len"] = std::to_string(lm.max_len);
  m["projector_layers"] = std::to_string(lm.projector_layers);
  m["mask_placeholders"] = lm.mask_placeholders ? "true" : "false";
  m["lora"] = lm.lora.enabled ? "true" : "false";
  m["lora_rank"] = std::to_string(lm.lora.rank);
  m["lora_alpha"] = fmt(lm.lora.alpha);
  m["lora_mlp"] = lm.lora.target_mlp ? "true" : "false";
  m["head_hidden"] = std::to_string(head_hidden);
  m["head_proj"] = std::to_string(head_proj);
  m["sim_whole_matrix"] = sim_whole_matrix ? "true" : "false";
  m["diffusion_steps"] = std::to_string(diffusion_steps);
  m["denoiser_hidden"] = std::to_string(denoiser_hidden);
  m["denoiser_blocks"] = std::to_string(denoiser_blocks);
  m["denoiser_heads"] = std::to_string(denoiser_heads);
  return m;
}

}  // namespace rglm
