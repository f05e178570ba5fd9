#include "gfm/taskgen.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>

using namespace gfm;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/gfm_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

/// A solver with no access to step order: it sees only the current
/// instruction tokens and the scene.
int history_blind_guess(const GenSpec& spec, const TaskSample& task, int t) {
  const auto& ids = task.steps[t].token_ids;
  const int color = ids[0];
  const int shape = ids[1] - spec.color_vocab;
  const int pos_base = spec.color_vocab + spec.shape_vocab;
  int position = -1;
  for (std::size_t k = 2; k < ids.size(); ++k)
    if (ids[k] >= pos_base && ids[k] < pos_base + spec.max_objects())
      position = ids[k] - pos_base;
  if (position >= 0) return position;
  for (int i = 0; i < task.object_count(); ++i)
    if (task.obj_color[i] == color && task.obj_shape[i] == shape) return i;
  return 0;
}

}  // namespace

TEST_CASE("generation is deterministic in the spec") {
  GenSpec spec;
  spec.n_tasks = 100;
  spec.seed = 42;
  auto a = generate(spec);
  auto b = generate(spec);
  REQUIRE(a.size() == 100);
  CHECK(a == b);

  GenSpec other = spec;
  other.seed = 43;
  CHECK(generate(other) != a);
}

TEST_CASE("scenes are made of attribute-identical groups") {
  GenSpec spec;
  spec.n_tasks = 50;
  spec.groups_min = 2;
  spec.groups_max = 3;
  spec.distractors = 3;
  spec.seed = 7;
  for (const auto& task : generate(spec)) {
    const int n = task.object_count();
    CHECK(n >= 2 * 4);
    CHECK(n <= 3 * 4);
    std::map<std::pair<int, int>, int> group_sizes;
    for (int i = 0; i < n; ++i)
      ++group_sizes[{task.obj_color[i], task.obj_shape[i]}];
    CHECK(static_cast<int>(group_sizes.size()) * 4 == n);
    for (const auto& [attrs, size] : group_sizes) CHECK(size == 4);
  }
}

TEST_CASE("step counts follow the weight support") {
  GenSpec spec;
  spec.n_tasks = 200;
  spec.seed = 5;
  for (const auto& task : generate(spec)) {
    CHECK(task.step_count() >= 2);
    CHECK(task.step_count() <= 10);
  }

  spec.step_count_weights = {0, 0, 1, 0, 0, 0, 0, 0, 0};  // always 4 steps
  for (const auto& task : generate(spec)) CHECK(task.step_count() == 4);
}

TEST_CASE("direct-only tasks are fully solvable without history") {
  GenSpec spec;
  spec.n_tasks = 100;
  spec.back_ref_rate = 0.0;
  spec.seed = 11;
  int correct = 0, total = 0;
  for (const auto& task : generate(spec)) {
    for (int t = 0; t < task.step_count(); ++t) {
      CHECK(!task.step_refs[t].is_back_ref());
      correct += history_blind_guess(spec, task, t) == task.targets[t];
      ++total;
    }
  }
  CHECK(correct == total);
}

TEST_CASE("back-references defeat a history-blind solver") {
  GenSpec spec;
  spec.n_tasks = 400;
  spec.back_ref_rate = 1.0;
  spec.distractors = 3;
  spec.seed = 13;
  int correct = 0, total = 0;
  for (const auto& task : generate(spec)) {
    for (int t = 0; t < task.step_count(); ++t) {
      if (!task.step_refs[t].is_back_ref()) continue;
      correct += history_blind_guess(spec, task, t) == task.targets[t];
      ++total;
    }
  }
  REQUIRE(total > 500);
  // The target is uniform over the 4 attribute twins, so any fixed guess
  // lands with probability 1/4; allow 4 sigma of binomial slack.
  const double p = static_cast<double>(correct) / total;
  const double bound = 0.25 + 4.0 * std::sqrt(0.25 * 0.75 / total);
  CHECK(p < bound);
  CHECK(p > 0.25 - 4.0 * std::sqrt(0.25 * 0.75 / total));
}

TEST_CASE("back-reference depths respect the configured minimum") {
  GenSpec spec;
  spec.n_tasks = 200;
  spec.back_ref_rate = 1.0;
  spec.back_ref_min_depth = 2;
  spec.seed = 17;
  int n_refs = 0;
  for (const auto& task : generate(spec)) {
    for (int t = 0; t < task.step_count(); ++t) {
      const auto& ref = task.step_refs[t];
      if (!ref.is_back_ref()) {
        CHECK(t < 2);  // too early for a depth-2 reference
        continue;
      }
      ++n_refs;
      CHECK(ref.back_ref_depth >= 2);
      CHECK(ref.back_ref_depth <= t);
      CHECK(task.targets[t] == task.targets[t - ref.back_ref_depth]);
    }
  }
  CHECK(n_refs > 0);
}

TEST_CASE("scene features are exact one-hot rows") {
  GenSpec spec;
  spec.n_tasks = 1;
  spec.seed = 3;
  auto task = generate(spec)[0];
  auto scene = scene_features(spec, task);
  CHECK(scene.object_features.rows() == task.object_count());
  CHECK(scene.object_features.cols() == spec.feature_dim());
  for (int i = 0; i < task.object_count(); ++i) {
    CHECK(scene.object_features.row(i).sum() == 3.0);
    CHECK(scene.object_features(i, task.obj_color[i]) == 1.0);
    CHECK(scene.object_features(i, spec.color_vocab + task.obj_shape[i]) == 1.0);
    CHECK(scene.object_features(i, spec.color_vocab + spec.shape_vocab + i) ==
          1.0);
  }
}

TEST_CASE("the audit passes generated data and flags corruption") {
  GenSpec spec;
  spec.n_tasks = 60;
  spec.seed = 23;
  auto tasks = generate(spec);
  auto report = solvability_audit(spec, tasks);
  CHECK(report.clean());
  CHECK(report.n_tasks == 60);
  CHECK(report.n_steps == report.n_direct + report.n_back_ref);
  CHECK(report.n_back_ref > 0);

  auto broken = tasks;
  broken[0].targets[0] = broken[0].object_count() + 5;
  CHECK(!solvability_audit(spec, broken).clean());

  broken = tasks;
  for (auto& task : broken) {
    for (int t = 0; t < task.step_count(); ++t)
      if (!task.step_refs[t].is_back_ref()) {
        task.steps[t].token_ids[2] = position_token(
            spec, (task.targets[t] + 1) % task.object_count());
        auto r = solvability_audit(spec, {task});
        CHECK(!r.clean());
        CHECK(r.issues[0].reason == "direct instruction does not match target");
        return;
      }
  }
  FAIL("no direct step found to corrupt");
}

TEST_CASE("the audit notices a back-ref target without distractor twins") {
  GenSpec spec;
  spec.n_tasks = 80;
  spec.back_ref_rate = 1.0;
  spec.seed = 29;
  auto tasks = generate(spec);
  for (auto& task : tasks) {
    for (int t = 0; t < task.step_count(); ++t) {
      if (!task.step_refs[t].is_back_ref()) continue;
      // Give the target a unique color: its group is no longer ambiguous,
      // so the back-reference stops being a history test.
      auto corrupted = task;
      const int target = task.targets[t];
      for (int i = 0; i < task.object_count(); ++i)
        if (i != target && task.obj_color[i] == task.obj_color[target] &&
            task.obj_shape[i] == task.obj_shape[target])
          corrupted.obj_color[i] = (task.obj_color[i] + 1) % spec.color_vocab;
      CHECK(!solvability_audit(spec, {corrupted}).clean());
      return;
    }
  }
  FAIL("no back-ref step found");
}

TEST_CASE("dataset round-trips through JSONL byte-exactly") {
  GenSpec spec;
  spec.n_tasks = 40;
  spec.seed = 31;
  auto tasks = generate(spec);

  TempFile f("roundtrip.jsonl");
  save_dataset(f.path, spec, tasks);
  auto ds = load_dataset(f.path);
  CHECK(ds.tasks == tasks);
  CHECK(ds.spec.seed == spec.seed);
  CHECK(ds.spec.n_tasks == spec.n_tasks);
  CHECK(ds.spec.step_count_weights == spec.step_count_weights);

  TempFile g("rewrite.jsonl");
  save_dataset(g.path, ds.spec, ds.tasks);
  std::ifstream a(f.path), b(g.path);
  std::string sa((std::istreambuf_iterator<char>(a)),
                 std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)),
                 std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("dataset loading rejects malformed files") {
  TempFile empty("empty.jsonl");
  std::ofstream(empty.path).close();
  CHECK_THROWS_WITH_AS(load_dataset(empty.path),
                       doctest::Contains("missing header"),
                       std::runtime_error);

  TempFile garbage("garbage.jsonl");
  std::ofstream(garbage.path) << "not json\n";
  CHECK_THROWS_WITH_AS(load_dataset(garbage.path),
                       doctest::Contains("malformed header"),
                       std::runtime_error);

  TempFile wrong("wrongformat.jsonl");
  std::ofstream(wrong.path) << "{\"format\":\"other\"}\n";
  CHECK_THROWS_AS(load_dataset(wrong.path), std::runtime_error);

  TempFile version("version.jsonl");
  std::ofstream(version.path) << "{\"format\":\"gfm-dataset\",\"version\":9}\n";
  CHECK_THROWS_WITH_AS(load_dataset(version.path),
                       doctest::Contains("unsupported schema version"),
                       std::runtime_error);

  GenSpec spec;
  spec.n_tasks = 3;
  spec.seed = 1;
  auto tasks = generate(spec);
  TempFile trunc("truncated.jsonl");
  save_dataset(trunc.path, spec, tasks);
  {
    std::ifstream in(trunc.path);
    std::string all((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(trunc.path);
    out << all.substr(0, all.size() - 20) << "\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(trunc.path),
                       doctest::Contains("malformed record"),
                       std::runtime_error);
}

TEST_CASE("invalid generator specs are rejected with diagnostics") {
  GenSpec spec;
  spec.distractors = 1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

  spec = GenSpec{};
  spec.step_count_weights = {1.0};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

  spec = GenSpec{};
  spec.color_vocab = 1;
  spec.shape_vocab = 1;
  spec.groups_max = 2;
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("vocabulary"),
                       std::invalid_argument);

  spec = GenSpec{};
  spec.back_ref_rate = 1.5;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

  spec = GenSpec{};
  spec.n_tasks = 0;
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
}
