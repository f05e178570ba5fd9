#pragma once

#include "gfm/grounder.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gfm {

/// Direct steps name their target by attributes + position token.
/// BackRef(k) steps name only the shared surface attributes plus a
/// same-as-k-steps-ago token, so history is required to disambiguate.
struct StepRef {
  int back_ref_depth = 0;  // 0 = direct
  bool is_back_ref() const { return back_ref_depth > 0; }

  bool operator==(const StepRef&) const = default;
};

struct TaskSample {
  std::vector<int> obj_color;  // per object
  std::vector<int> obj_shape;
  std::vector<InstructionEncoding> steps;
  std::vector<int> targets;
  std::vector<StepRef> step_refs;
  std::uint64_t task_id = 0;
  std::uint64_t seed = 0;

  int object_count() const { return static_cast<int>(obj_color.size()); }
  int step_count() const { return static_cast<int>(steps.size()); }

  bool operator==(const TaskSample&) const = default;
};

struct GenSpec {
  int n_tasks = 100;
  int groups_min = 2;           // scene = groups of attribute-identical objects
  int groups_max = 2;
  int distractors = 3;          // group size = distractors + 1
  int color_vocab = 4;
  int shape_vocab = 4;
  // Weight for step counts 2..10; mean defaults near 5 steps per task.
  std::vector<double> step_count_weights =
      {0.14, 0.16, 0.16, 0.15, 0.12, 0.10, 0.07, 0.05, 0.05};
  double back_ref_rate = 0.5;
  int back_ref_min_depth = 1;   // 2 selects the long-range regime
  double back_ref_depth_p = 0.5;  // geometric tail beyond the minimum depth
  std::uint64_t seed = 0;

  int max_objects() const { return groups_max * (distractors + 1); }
  int vocab_size() const { return color_vocab + shape_vocab + max_objects() + 9; }
  int feature_dim() const { return color_vocab + shape_vocab + max_objects(); }

  void validate() const;
};

// Token id layout within the closed vocabulary.
int color_token(const GenSpec& spec, int color);
int shape_token(const GenSpec& spec, int shape);
int position_token(const GenSpec& spec, int pos);
int same_token(const GenSpec& spec, int depth);  // depth in [1, 9]

/// One-hot concatenation of (color, shape, position) per object.
SceneEncoding scene_features(const GenSpec& spec, const TaskSample& task);

/// Deterministic in the spec (seed included); throws on unsatisfiable specs.
std::vector<TaskSample> generate(const GenSpec& spec);

struct AuditIssue {
  std::uint64_t task_id;
  int step;
  std::string reason;
};

struct AuditReport {
  int n_tasks = 0;
  int n_steps = 0;
  int n_direct = 0;
  int n_back_ref = 0;
  std::vector<AuditIssue> issues;
  bool clean() const { return issues.empty(); }
};

/// Re-checks the unique-resolution invariants on generated (or loaded) data.
AuditReport solvability_audit(const GenSpec& spec,
                              const std::vector<TaskSample>& tasks);

/// Reads a generator spec from a JSON document; absent fields keep defaults.
GenSpec load_gen_spec(const std::string& path);

void save_dataset(const std::string& path, const GenSpec& spec,
                  const std::vector<TaskSample>& tasks);

struct Dataset {
  GenSpec spec;  // generation spec recorded in the header
  std::vector<TaskSample> tasks;
};

Dataset load_dataset(const std::string& path);

}  // namespace gfm
