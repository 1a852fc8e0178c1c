#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rglm/config.hpp"
#include "rglm/gnn.hpp"
#include "rglm/instructions.hpp"
#include "rglm/lm.hpp"
#include "rglm/recon.hpp"
#include "rglm/tag.hpp"

namespace rglm {

struct MetricsRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss_text = 0.0;   // epoch means
  double loss_graph = 0.0;
  double loss_total = 0.0;  // loss_text + loss_graph
  double bound_report = 0.0;
  double val_acc = 0.0;
  double val_f1 = 0.0;
  double wall_time_s = 0.0;
  std::size_t peak_bytes = 0;  // tensor storage high-water mark
  // Epoch means of the individual reconstruction terms.
  double feat = 0.0, topo = 0.0, sim = 0.0, diff = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,step,loss_text,loss_graph,loss_total,bound_report,val_acc,val_f1,wall_time_s";

void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> records);
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records);

struct EvalResult {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::size_t> truth;
  std::vector<std::optional<std::size_t>> predicted;  // nullopt = unparseable
};

// Unweighted mean of per-class F1 over the classes occurring in truth or
// predictions. Unparseable predictions count as misses.
double macro_f1(std::span<const std::size_t> truth,
                std::span<const std::optional<std::size_t>> predicted);
double accuracy(std::span<const std::size_t> truth,
                std::span<const std::optional<std::size_t>> predicted);

EvalResult evaluate(const LmModel& model, const Vocabulary& vocab, const InstructionSet& set);

struct Trained {
  TrainConfig cfg;
  std::unique_ptr<LmModel> model;  // restored to the best validation epoch
  ReconHeads heads;
  std::shared_ptr<const Vocabulary> vocab;
  std::vector<MetricsRecord> metrics;
  std::size_t best_epoch = 0;
  double best_val_acc = -1.0;
  double seconds = 0.0;
};

// Builds the LM and the head configured by cfg with the given width.
LmModel make_model(const TrainConfig& cfg, std::size_t vocab_size, std::size_t d_z, Rng& rng);
ReconHeads make_heads(const TrainConfig& cfg, std::size_t d_z, std::size_t d_e, Rng& rng);

// Called with 0 after initialization and with e + 1 after epoch e.
using EpochHook = std::function<void(std::size_t epoch, const LmModel&, const ReconHeads&)>;

// Trains on the train split with per-epoch validation. encoder is required
// for latent variants unless cfg.no_pregnn.
Trained train(const TrainConfig& cfg, const Tag& tag, const GnnEncoder* encoder,
              const EpochHook& hook = {});
// Loads cfg.dataset and cfg.pregnn from disk.
Trained train(const TrainConfig& cfg);

// Instruction set for a split with latents attached as cfg requires.
InstructionSet prepare_split(const TrainConfig& cfg, const Tag& tag, const Vocabulary& vocab,
                             Split split, const GnnEncoder* encoder);

void save_checkpoint(const Trained& t, const std::filesystem::path& path);
Trained load_checkpoint(const std::filesystem::path& path);

nlohmann::json run_summary(const Trained& t, const EvalResult* test);

}  // namespace rglm
