#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sparsegroup/accounting.hpp"
#include "sparsegroup/checkpoint.hpp"
#include "sparsegroup/compressor.hpp"
#include "sparsegroup/micronet.hpp"

namespace sparsegroup {

/// Full configuration of a train/compress/finetune run.
struct RunConfig {
  std::uint64_t seed = 0;
  int epochs = 60;            // sparsification stage
  int finetune_epochs = 60;
  double lr = 0.05;           // fixed during sparsification
  double finetune_lr = 0.05;  // step decay x0.1 at 50% and 75%
  double momentum = 0.9;
  double weight_decay = 1e-4;  // finetune only; 0 during sparsification
  double target_rate = 0.5;    // target sparsity r
  double p_train = 0.9;        // group-level threshold during training
  double delta_lambda = 2e-6;
  double power = 0.5;
  Norm norm = Norm::L1;
  int restarts = 5;       // initial permutation update
  int max_perm_iters = 50;
  int batch_size = 32;
  ShuffleMode shuffle_mode = ShuffleMode::Finetune;

  void validate() const;
};

RunConfig config_from_json_file(const std::string& path);
RunConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const RunConfig& config);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> levels;
  double lambda = 0.0;    // active during the epoch
  double sparsity = 0.0;  // measured after the epoch
};

/// The run's plan file: the grouping plan plus the records the pipeline
/// accumulates (config echo, per-epoch stats, ordered event log).
struct RunPlan {
  std::string stage = "train";  // "train" | "compressed" | "finetuned"
  RunConfig config;
  GroupingPlan grouping;
  std::vector<EpochRecord> epochs;
  std::vector<std::string> events;
  double pre_compression_accuracy = -1.0;
  double post_compression_accuracy = -1.0;
  double finetune_accuracy = -1.0;
  std::string shuffle_mode = "finetune";
};

void save_plan(const RunPlan& plan, const std::string& path);
RunPlan load_plan(const std::string& path);
std::string plan_to_json_text(const RunPlan& plan);
RunPlan plan_from_json_text(const std::string& text);

struct TrainOutput {
  MicroNet net;
  RunPlan plan;
};

/// The training loop: an initial permutation update, then per epoch
/// train -> update permutations -> update levels -> update reg matrices ->
/// adjust lambda, in that order. Deterministic given the config.
TrainOutput run_train(const RunConfig& config);

struct CompressOutput {
  CompressedNet net;
  RunPlan plan;
};

/// Threshold search + per-layer grouping; logs pre/post-compression
/// accuracy into the plan.
CompressOutput run_compress(const MicroNet& net, const RunPlan& train_plan,
                            double target_rate);

struct FinetuneOutput {
  CompressedNet net;
  RunPlan plan;
  double final_accuracy = 0.0;
};

/// Applies the configured shuffle ablation mode (reinitializing weights for
/// every mode except Finetune), then trains the surviving grouped
/// parameters plus the classifier under the step-decay schedule.
FinetuneOutput run_finetune(const CompressedNet& net, const RunPlan& plan,
                            const RunConfig& config);

enum class ReportFormat { Json, Csv };

/// Emits the per-layer cardinality table, confusion matrices of adjacent
/// grouped pairs, the params/FLOPs ledger and the lambda/sparsity
/// trajectories into out_dir.
void write_reports(const RunPlan& plan, const ArchSpec* arch,
                   ReportFormat format, const std::string& out_dir);

/// Equivalence + invariant suite over a (checkpoint, plan) pair; prints one
/// line per check to log and returns overall success.
bool verify_artifacts(const std::string& ckpt_path,
                      const std::string& plan_path, std::ostream& log);

}  // namespace sparsegroup
