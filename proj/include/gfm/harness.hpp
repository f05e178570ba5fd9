#pragma once

#include "gfm/grounder.hpp"
#include "gfm/taskgen.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gfm {

inline constexpr const char* kRevision = "gfm-0.1.0";

struct ExperimentConfig {
  FusionVariant variant;
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 1e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double grad_clip_norm = 1.0;
  double data_fraction = 1.0;
  int hidden = 32;
  int num_layers = 2;
  int concat_max_len = 30;  // instruction cap for the concat-all variant
  std::uint64_t seed = 1;
  std::string train_path;
  std::string eval_path;
  std::string out_dir;

  void validate() const;
  std::string hash() const;  // canonical FNV-1a over the settings
};

ExperimentConfig load_experiment_config(const std::string& path);

/// Grounder plus (optional) fusion-baseline weights for one variant.
struct Model {
  FusionVariant variant;
  GrounderParams grounder;
  BaselineParams baseline;

  std::vector<std::pair<std::string, TensorPtr>> named_tensors() const;
  long parameter_count() const;
  long fusion_parameter_count() const;
};

Model init_model(const ExperimentConfig& config, const GenSpec& data_spec);

/// Mean cross-entropy over all steps (one logit row per step).
TensorPtr grounding_loss(const std::vector<TensorPtr>& step_logits,
                         const std::vector<int>& targets);

struct TrainResult {
  Model model;
  std::vector<double> loss_curve;  // per-epoch mean step loss
  double wall_clock_seconds = 0;
};

TrainResult train(const ExperimentConfig& config, const Dataset& train_set);

struct MetricsReport {
  double s_acc = 0;
  double t_acc = 0;
  // Keyed "2".."7", "8+" (house convention) and "7+" merge for comparability.
  std::map<std::string, double> subset_t_acc;
  std::map<std::string, int> subset_task_counts;
  std::map<std::string, double> subset_s_acc;
  std::map<std::string, int> subset_step_counts;
  std::map<std::string, double> subset_t_acc_7plus;
  std::vector<double> loss_curve;
  long parameter_count = 0;
  long fusion_parameters = 0;
  double wall_clock_seconds = 0;  // reported out of band, not in canonical files
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string variant;
};

MetricsReport evaluate(const Model& model, const Dataset& eval_set);

// Checkpoint file: versioned JSON blob of named arrays with shape headers.
void save_checkpoint(const std::string& path, const Model& model,
                     const ExperimentConfig& config);
Model load_checkpoint(const std::string& path);

struct AblationRow {
  std::string label;
  std::uint64_t seed = 0;
  MetricsReport report;
};

struct AblationSummary {
  std::string label;
  double mean_s_acc = 0, mean_t_acc = 0;
  std::optional<double> spread_s_acc, spread_t_acc;  // absent for 1 seed
  double delta_s_acc = 0, delta_t_acc = 0;  // vs the declared baseline
  std::map<std::string, double> mean_subset_t_acc;
  std::map<std::string, double> delta_subset_t_acc;
};

struct AblationTable {
  std::string baseline_label;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;       // variant x seed, config order
  std::vector<AblationSummary> summary;  // config order
};

/// Trains and evaluates every variant for every seed on the shared split;
/// the first label is the baseline the delta columns refer to.
AblationTable run_ablation_grid(const ExperimentConfig& base,
                                const std::vector<std::string>& variant_labels,
                                const std::vector<std::uint64_t>& seeds,
                                const Dataset& train_set,
                                const Dataset& eval_set);

/// Writes <stem>.json and <stem>.csv; timing goes to <stem>.timing.txt so
/// the canonical outputs stay byte-identical across reruns.
void report_emit(const MetricsReport& report, const std::string& stem);
void report_emit(const AblationTable& table, const std::string& stem);

}  // namespace gfm
