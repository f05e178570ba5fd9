#include "gfm/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int cmd_gen(const std::string& spec_path, const std::string& out_path) {
  gfm::GenSpec spec = gfm::load_gen_spec(spec_path);
  auto tasks = gfm::generate(spec);
  auto audit = gfm::solvability_audit(spec, tasks);
  if (!audit.clean()) {
    std::cerr << "{\"error\":\"generator produced " << audit.issues.size()
              << " ambiguous steps\"}\n";
    return 1;
  }
  gfm::save_dataset(out_path, spec, tasks);
  std::cout << "wrote " << tasks.size() << " tasks (" << audit.n_steps
            << " steps, " << audit.n_back_ref << " back-references) to "
            << out_path << "\n";
  return 0;
}

int cmd_audit(const std::string& data_path, const std::string& out_path) {
  auto ds = gfm::load_dataset(data_path);
  auto report = gfm::solvability_audit(ds.spec, ds.tasks);
  json j{{"format", "gfm-audit"},
         {"version", 1},
         {"n_tasks", report.n_tasks},
         {"n_steps", report.n_steps},
         {"n_direct", report.n_direct},
         {"n_back_ref", report.n_back_ref},
         {"ambiguous", report.issues.size()}};
  json issues = json::array();
  for (const auto& issue : report.issues)
    issues.push_back({{"task", issue.task_id},
                      {"step", issue.step},
                      {"reason", issue.reason}});
  j["issues"] = std::move(issues);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << j.dump(2) << "\n";
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_train(const std::string& config_path) {
  auto cfg = gfm::load_experiment_config(config_path);
  if (cfg.train_path.empty() || cfg.out_dir.empty())
    throw std::runtime_error("train config needs train_path and out_dir");
  auto train_set = gfm::load_dataset(cfg.train_path);
  fs::create_directories(cfg.out_dir);
  auto result = gfm::train(cfg, train_set);
  const std::string ck = cfg.out_dir + "/checkpoint.json";
  gfm::save_checkpoint(ck, result.model, cfg);

  json curve{{"format", "gfm-loss-curve"},
             {"version", 1},
             {"variant", gfm::variant_label(cfg.variant)},
             {"seed", cfg.seed},
             {"config_hash", cfg.hash()},
             {"loss_curve", result.loss_curve}};
  std::ofstream out(cfg.out_dir + "/loss_curve.json");
  out << curve.dump(2) << "\n";
  std::ofstream timing(cfg.out_dir + "/train.timing.txt");
  timing << "wall_clock_seconds " << result.wall_clock_seconds << "\n";
  std::cout << "checkpoint written to " << ck << " (final loss "
            << (result.loss_curve.empty() ? 0.0 : result.loss_curve.back())
            << ")\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& out_stem) {
  auto model = gfm::load_checkpoint(checkpoint_path);
  auto eval_set = gfm::load_dataset(data_path);
  auto report = gfm::evaluate(model, eval_set);
  gfm::report_emit(report, out_stem);
  std::cout << "s_acc " << report.s_acc << " t_acc " << report.t_acc
            << " -> " << out_stem << ".json\n";
  return 0;
}

int cmd_ablate(const std::string& grid_path, const std::string& out_dir) {
  std::ifstream in(grid_path);
  if (!in) throw std::runtime_error("cannot open grid file " + grid_path);
  json j;
  in >> j;

  gfm::ExperimentConfig base;
  if (j.contains("config")) {
    // Reuse the config loader by round-tripping through a temp document.
    const std::string tmp = out_dir + "/.grid_config.json";
    fs::create_directories(out_dir);
    std::ofstream t(tmp);
    t << j.at("config").dump();
    t.close();
    base = gfm::load_experiment_config(tmp);
    fs::remove(tmp);
  }
  auto variants = j.at("variants").get<std::vector<std::string>>();
  auto seeds = j.value("seeds", std::vector<std::uint64_t>{1, 2, 3});
  auto train_set = gfm::load_dataset(j.at("train_path").get<std::string>());
  auto eval_set = gfm::load_dataset(j.at("eval_path").get<std::string>());

  fs::create_directories(out_dir);
  auto table = gfm::run_ablation_grid(base, variants, seeds, train_set,
                                      eval_set);
  gfm::report_emit(table, out_dir + "/ablation");
  for (const auto& s : table.summary)
    std::cout << s.label << ": s_acc " << s.mean_s_acc << " t_acc "
              << s.mean_t_acc << " (dt " << s.delta_t_acc << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential grounding benchmark: data generation, training, "
               "evaluation and fusion ablations"};
  app.require_subcommand(1);

  std::string spec_path, out_path, data_path, config_path, checkpoint_path,
      out_stem, grid_path, out_dir;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "Generator spec (JSON)")->required();
  gen->add_option("--out", out_path, "Output dataset path")->required();

  auto* audit = app.add_subcommand("audit", "Check dataset solvability");
  audit->add_option("--data", data_path, "Dataset path")->required();
  audit->add_option("--out", out_path, "Optional report path");

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "Experiment config (JSON)")
      ->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint path")
      ->required();
  eval->add_option("--data", data_path, "Evaluation dataset")->required();
  eval->add_option("--out", out_stem, "Output stem (writes .json/.csv)")
      ->required();

  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid");
  ablate->add_option("--grid", grid_path, "Grid file (JSON)")->required();
  ablate->add_option("--out-dir", out_dir, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(spec_path, out_path);
    if (audit->parsed()) return cmd_audit(data_path, out_path);
    if (train->parsed()) return cmd_train(config_path);
    if (eval->parsed()) return cmd_eval(checkpoint_path, data_path, out_stem);
    if (ablate->parsed()) return cmd_ablate(grid_path, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "{\"error\":\"" << e.what() << "\"}\n";
    return 1;
  }
  return 0;
}
