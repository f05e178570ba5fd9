#include "gfm/taskgen.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

namespace gfm {

using nlohmann::json;

void GenSpec::validate() const {
  if (n_tasks <= 0) throw std::invalid_argument("GenSpec: n_tasks must be positive");
  if (groups_min < 1 || groups_max < groups_min)
    throw std::invalid_argument("GenSpec: invalid group count range");
  if (distractors < 2)
    throw std::invalid_argument(
        "GenSpec: need at least 2 distractors per attribute group");
  if (color_vocab < 1 || shape_vocab < 1)
    throw std::invalid_argument("GenSpec: empty attribute vocabulary");
  if (color_vocab * shape_vocab < groups_max)
    throw std::invalid_argument(
        "GenSpec: attribute vocabulary too small to give every group a "
        "distinct (color, shape) pair");
  if (step_count_weights.size() != 9)
    throw std::invalid_argument("GenSpec: step_count_weights must cover 2..10");
  double sum = 0;
  for (double w : step_count_weights) {
    if (w < 0) throw std::invalid_argument("GenSpec: negative step weight");
    sum += w;
  }
  if (sum <= 0) throw std::invalid_argument("GenSpec: step weights sum to zero");
  if (back_ref_rate < 0 || back_ref_rate > 1)
    throw std::invalid_argument("GenSpec: back_ref_rate outside [0, 1]");
  if (back_ref_min_depth < 1 || back_ref_min_depth > 9)
    throw std::invalid_argument("GenSpec: back_ref_min_depth outside [1, 9]");
  if (back_ref_depth_p < 0 || back_ref_depth_p >= 1)
    throw std::invalid_argument("GenSpec: back_ref_depth_p outside [0, 1)");
}

int color_token(const GenSpec& spec, int color) { return color; }
int shape_token(const GenSpec& spec, int shape) {
  return spec.color_vocab + shape;
}
int position_token(const GenSpec& spec, int pos) {
  return spec.color_vocab + spec.shape_vocab + pos;
}
int same_token(const GenSpec& spec, int depth) {
  if (depth < 1 || depth > 9)
    throw std::invalid_argument("same_token: depth outside [1, 9]");
  return spec.color_vocab + spec.shape_vocab + spec.max_objects() + depth - 1;
}

SceneEncoding scene_features(const GenSpec& spec, const TaskSample& task) {
  const int n = task.object_count();
  Matrix f = Matrix::Zero(n, spec.feature_dim());
  for (int i = 0; i < n; ++i) {
    f(i, task.obj_color[i]) = 1.0;
    f(i, spec.color_vocab + task.obj_shape[i]) = 1.0;
    f(i, spec.color_vocab + spec.shape_vocab + i) = 1.0;
  }
  return SceneEncoding{std::move(f)};
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 1));
}

double unit(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

int pick_step_count(const GenSpec& spec, std::mt19937_64& rng) {
  double sum = 0;
  for (double w : spec.step_count_weights) sum += w;
  double u = unit(rng) * sum;
  for (std::size_t i = 0; i < spec.step_count_weights.size(); ++i) {
    u -= spec.step_count_weights[i];
    if (u <= 0) return static_cast<int>(i) + 2;
  }
  return 10;
}

TaskSample generate_task(const GenSpec& spec, std::uint64_t index) {
  TaskSample task;
  task.task_id = index;
  task.seed = child_seed(spec.seed, index);
  std::mt19937_64 rng(task.seed);

  const int n_groups =
      spec.groups_min +
      static_cast<int>(rng() % static_cast<std::uint64_t>(
                                   spec.groups_max - spec.groups_min + 1));

  // Distinct (color, shape) per group; every object belongs to a group of
  // distractors + 1 attribute-identical objects.
  std::vector<std::pair<int, int>> pairs;
  for (int c = 0; c < spec.color_vocab; ++c)
    for (int s = 0; s < spec.shape_vocab; ++s) pairs.emplace_back(c, s);
  std::shuffle(pairs.begin(), pairs.end(), rng);

  for (int g = 0; g < n_groups; ++g)
    for (int m = 0; m < spec.distractors + 1; ++m) {
      task.obj_color.push_back(pairs[g].first);
      task.obj_shape.push_back(pairs[g].second);
    }
  // Shuffle object order so group membership is not positional.
  std::vector<int> perm(task.obj_color.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> colors(perm.size()), shapes(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    colors[i] = task.obj_color[perm[i]];
    shapes[i] = task.obj_shape[perm[i]];
  }
  task.obj_color = std::move(colors);
  task.obj_shape = std::move(shapes);

  const int n_obj = task.object_count();
  const int n_steps = pick_step_count(spec, rng);

  for (int t = 1; t <= n_steps; ++t) {
    const bool can_back_ref = t - 1 >= spec.back_ref_min_depth;
    const bool back_ref = can_back_ref && unit(rng) < spec.back_ref_rate;
    if (back_ref) {
      int extra = 0;
      while (unit(rng) < spec.back_ref_depth_p) ++extra;
      const int depth = std::min(spec.back_ref_min_depth + extra, t - 1);
      const int target = task.targets[t - 1 - depth];
      task.targets.push_back(target);
      task.step_refs.push_back(StepRef{depth});
      task.steps.push_back(InstructionEncoding{
          {color_token(spec, task.obj_color[target]),
           shape_token(spec, task.obj_shape[target]), same_token(spec, depth)}});
    } else {
      const int target = static_cast<int>(rng() % static_cast<std::uint64_t>(n_obj));
      task.targets.push_back(target);
      task.step_refs.push_back(StepRef{0});
      task.steps.push_back(InstructionEncoding{
          {color_token(spec, task.obj_color[target]),
           shape_token(spec, task.obj_shape[target]),
           position_token(spec, target)}});
    }
  }
  return task;
}

}  // namespace

std::vector<TaskSample> generate(const GenSpec& spec) {
  spec.validate();
  std::vector<TaskSample> tasks;
  tasks.reserve(static_cast<std::size_t>(spec.n_tasks));
  for (int i = 0; i < spec.n_tasks; ++i)
    tasks.push_back(generate_task(spec, static_cast<std::uint64_t>(i)));
  return tasks;
}

AuditReport solvability_audit(const GenSpec& spec,
                              const std::vector<TaskSample>& tasks) {
  AuditReport report;
  report.n_tasks = static_cast<int>(tasks.size());
  for (const auto& task : tasks) {
    const int n_obj = task.object_count();
    const int n = task.step_count();
    if (n != static_cast<int>(task.targets.size()) ||
        n != static_cast<int>(task.step_refs.size())) {
      report.issues.push_back({task.task_id, -1, "inconsistent step arrays"});
      continue;
    }
    for (int t = 1; t <= n; ++t) {
      ++report.n_steps;
      const int target = task.targets[t - 1];
      const auto& ref = task.step_refs[t - 1];
      if (target < 0 || target >= n_obj) {
        report.issues.push_back({task.task_id, t, "target out of range"});
        continue;
      }
      // Count objects that are attribute-identical to the target.
      int twins = 0;
      for (int i = 0; i < n_obj; ++i)
        if (task.obj_color[i] == task.obj_color[target] &&
            task.obj_shape[i] == task.obj_shape[target])
          ++twins;
      if (ref.is_back_ref()) {
        ++report.n_back_ref;
        const int k = ref.back_ref_depth;
        if (k < 1 || k > t - 1) {
          report.issues.push_back({task.task_id, t, "back-ref depth out of range"});
          continue;
        }
        if (task.targets[t - 1 - k] != target)
          report.issues.push_back(
              {task.task_id, t, "back-ref does not resolve via referenced step"});
        if (twins < spec.distractors + 1)
          report.issues.push_back(
              {task.task_id, t,
               "back-ref target lacks attribute-identical distractors"});
      } else {
        ++report.n_direct;
        // Direct: (color, shape, position) must pick out exactly one object.
        const auto& ids = task.steps[t - 1].token_ids;
        if (ids.size() != 3 ||
            ids[0] != color_token(spec, task.obj_color[target]) ||
            ids[1] != shape_token(spec, task.obj_shape[target]) ||
            ids[2] != position_token(spec, target))
          report.issues.push_back(
              {task.task_id, t, "direct instruction does not match target"});
      }
    }
  }
  return report;
}

namespace {

json spec_to_json(const GenSpec& s) {
  return json{{"n_tasks", s.n_tasks},
              {"groups_min", s.groups_min},
              {"groups_max", s.groups_max},
              {"distractors", s.distractors},
              {"color_vocab", s.color_vocab},
              {"shape_vocab", s.shape_vocab},
              {"step_count_weights", s.step_count_weights},
              {"back_ref_rate", s.back_ref_rate},
              {"back_ref_min_depth", s.back_ref_min_depth},
              {"back_ref_depth_p", s.back_ref_depth_p},
              {"seed", s.seed}};
}

GenSpec spec_from_json(const json& j) {
  GenSpec s;
  s.n_tasks = j.value("n_tasks", s.n_tasks);
  s.groups_min = j.value("groups_min", s.groups_min);
  s.groups_max = j.value("groups_max", s.groups_max);
  s.distractors = j.value("distractors", s.distractors);
  s.color_vocab = j.value("color_vocab", s.color_vocab);
  s.shape_vocab = j.value("shape_vocab", s.shape_vocab);
  if (j.contains("step_count_weights"))
    s.step_count_weights = j.at("step_count_weights").get<std::vector<double>>();
  s.back_ref_rate = j.value("back_ref_rate", s.back_ref_rate);
  s.back_ref_min_depth = j.value("back_ref_min_depth", s.back_ref_min_depth);
  s.back_ref_depth_p = j.value("back_ref_depth_p", s.back_ref_depth_p);
  s.seed = j.value("seed", s.seed);
  return s;
}

}  // namespace

GenSpec load_gen_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_gen_spec: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("load_gen_spec: malformed spec file: " +
                             std::string(e.what()));
  }
  GenSpec spec = spec_from_json(j);
  spec.validate();
  return spec;
}

void save_dataset(const std::string& path, const GenSpec& spec,
                  const std::vector<TaskSample>& tasks) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  json header = spec_to_json(spec);
  header["format"] = "gfm-dataset";
  header["version"] = 1;
  header["count"] = tasks.size();
  out << header.dump() << "\n";
  for (const auto& t : tasks) {
    json steps = json::array();
    for (const auto& s : t.steps) steps.push_back(s.token_ids);
    json refs = json::array();
    for (const auto& r : t.step_refs) refs.push_back(r.back_ref_depth);
    json rec{{"id", t.task_id},       {"seed", t.seed},
             {"colors", t.obj_color}, {"shapes", t.obj_shape},
             {"steps", steps},        {"targets", t.targets},
             {"refs", refs}};
    out << rec.dump() << "\n";
  }
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw std::runtime_error("load_dataset: missing header in " + path);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error&) {
    throw std::runtime_error("load_dataset: malformed header in " + path);
  }
  if (header.value("format", "") != "gfm-dataset")
    throw std::runtime_error("load_dataset: missing header in " + path);
  if (header.value("version", 0) != 1)
    throw std::runtime_error("load_dataset: unsupported schema version " +
                             std::to_string(header.value("version", 0)));
  Dataset ds;
  ds.spec = spec_from_json(header);

  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
      TaskSample t;
      t.task_id = rec.at("id").get<std::uint64_t>();
      t.seed = rec.at("seed").get<std::uint64_t>();
      t.obj_color = rec.at("colors").get<std::vector<int>>();
      t.obj_shape = rec.at("shapes").get<std::vector<int>>();
      for (const auto& s : rec.at("steps"))
        t.steps.push_back(InstructionEncoding{s.get<std::vector<int>>()});
      t.targets = rec.at("targets").get<std::vector<int>>();
      for (const auto& r : rec.at("refs"))
        t.step_refs.push_back(StepRef{r.get<int>()});
      if (t.steps.size() != t.targets.size() ||
          t.steps.size() != t.step_refs.size())
        throw std::runtime_error("inconsistent arrays");
      ds.tasks.push_back(std::move(t));
    } catch (const std::exception& e) {
      throw std::runtime_error("load_dataset: malformed record " +
                               std::to_string(index) + ": " + e.what());
    }
    ++index;
  }
  return ds;
}

}  // namespace gfm
