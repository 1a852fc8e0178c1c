#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rglm/config.hpp"
#include "rglm/gnn.hpp"
#include "rglm/instructions.hpp"
#include "rglm/tag.hpp"
#include "rglm/trainer.hpp"

namespace rglm {

struct RunResult {
  std::string setting;  // vanilla, full, no_feat, no_topo, no_pregnn, sweep
  TrainConfig cfg;
  EvalResult test;
  double seconds = 0.0;
};

// Trains cfg and evaluates the best-validation model on the test split.
RunResult run_once(const std::string& setting, const TrainConfig& cfg, const Tag& tag,
                   const GnnEncoder* encoder);

// Settings for cfg.variant: decoder -> vanilla, full, no_feat, no_topo;
// similarizer / denoiser -> vanilla, full, no_pregnn; one row per seed each.
std::vector<RunResult> ablate(const TrainConfig& base, const Tag& tag, const GnnEncoder* encoder,
                              std::span<const std::uint64_t> seeds);

struct SweepGrid {
  std::vector<double> lambda_f;  // decoder
  std::vector<double> lambda_s;  // decoder
  std::vector<double> lambda_l;  // similarizer / denoiser

  static SweepGrid defaults();
};

// One run per grid point per seed.
std::vector<RunResult> sweep(const TrainConfig& base, const SweepGrid& grid, const Tag& tag,
                             const GnnEncoder* encoder, std::span<const std::uint64_t> seeds);

inline constexpr const char* kRunsHeader =
    "setting,variant,seed,lambda_f,lambda_s,lambda_l,no_feat,no_topo,no_pregnn,test_acc,test_f1,"
    "seconds";
void write_runs_csv(std::ostream& out, std::span<const RunResult> rows);

struct SettingSummary {
  std::string setting;
  std::string variant;
  std::size_t runs = 0;
  double acc_mean = 0.0, acc_std = 0.0, f1_mean = 0.0, f1_std = 0.0;
};

// Mean and sample standard deviation per (variant, setting), in first-seen
// order.
std::vector<SettingSummary> summarize(std::span<const RunResult> rows);
void write_summary_csv(std::ostream& out, std::span<const SettingSummary> rows);

struct AttentionRow {
  std::size_t example_id = 0;
  double a_mass = 0.0, a_log = 0.0, b_mass = 0.0, b_log = 0.0;
};

struct AttentionReport {
  std::vector<AttentionRow> rows;
  double a_mean = 0.0, b_mean = 0.0;
};

// Last-position attention mass on node slots for two models on every example.
AttentionReport attention_report(const LmModel& a, const LmModel& b, const InstructionSet& set);
void write_attention_csv(std::ostream& out, const AttentionReport& r);

// Evaluates a trained model on the test split of another graph sharing its
// class vocabulary.
EvalResult cross_dataset_eval(const Trained& trained, const Tag& target,
                              const GnnEncoder* encoder = nullptr);

struct TimingRow {
  std::string name;
  std::size_t repeats = 0;
  double sec_per_epoch_mean = 0.0;
  double sec_per_epoch_std = 0.0;
  std::size_t peak_bytes = 0;
};

// Trains each cfg `repeats` times and reports seconds per epoch.
std::vector<TimingRow> timing_report(std::span<const std::pair<std::string, TrainConfig>> cfgs,
                                     const Tag& tag, const GnnEncoder* encoder,
                                     std::size_t repeats);
void write_timing_csv(std::ostream& out, std::span<const TimingRow> rows);

// Pairs (target_v, H_v) over every sequence node of every example, for binned
// mutual-information tracking. Row-major. The target is the raw feature z_v or
// the attached latent e_v.
struct HSamples {
  std::vector<double> z, h;
  std::size_t d_z = 0, d_h = 0;
};
enum class HTarget { Features, Latents };
HSamples collect_h_samples(const LmModel& model, const InstructionSet& set,
                           HTarget target = HTarget::Features);

}  // namespace rglm
