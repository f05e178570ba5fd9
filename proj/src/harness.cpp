#include "gfm/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

namespace gfm {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream ss;
  ss << std::hex << h;
  return ss.str();
}

int env_threads() {
  if (const char* v = std::getenv("GFM_THREADS")) {
    const int n = std::atoi(v);
    if (n > 0) return n;
  }
  return 1;
}

std::string subset_key(int steps) {
  return steps >= 8 ? std::string("8+") : std::to_string(steps);
}

std::string subset_key_7plus(int steps) {
  return steps >= 7 ? std::string("7+") : std::to_string(steps);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("config: negative epochs");
  if (batch_size <= 0) throw std::invalid_argument("config: batch_size must be positive");
  if (learning_rate < 0 || learning_rate >= 1)
    throw std::invalid_argument("config: learning_rate outside [0, 1)");
  if (weight_decay < 0) throw std::invalid_argument("config: negative weight_decay");
  if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
    throw std::invalid_argument("config: betas outside (0, 1)");
  if (data_fraction <= 0 || data_fraction > 1)
    throw std::invalid_argument("config: data_fraction outside (0, 1]");
  if (hidden <= 0 || num_layers <= 0)
    throw std::invalid_argument("config: invalid model size");
}

std::string ExperimentConfig::hash() const {
  std::ostringstream ss;
  ss << variant_label(variant) << "|" << epochs << "|" << batch_size << "|"
     << learning_rate << "|" << weight_decay << "|" << beta1 << "|" << beta2
     << "|" << grad_clip_norm << "|" << data_fraction << "|" << hidden << "|"
     << num_layers << "|" << concat_max_len << "|" << seed;
  return fnv1a_hex(ss.str());
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed config file " + path + ": " + e.what());
  }
  ExperimentConfig c;
  if (j.contains("variant"))
    c.variant = variant_from_label(j.at("variant").get<std::string>());
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
  c.data_fraction = j.value("data_fraction", c.data_fraction);
  c.hidden = j.value("hidden", c.hidden);
  c.num_layers = j.value("num_layers", c.num_layers);
  c.concat_max_len = j.value("concat_max_len", c.concat_max_len);
  c.seed = j.value("seed", c.seed);
  c.train_path = j.value("train_path", c.train_path);
  c.eval_path = j.value("eval_path", c.eval_path);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.validate();
  return c;
}

std::vector<std::pair<std::string, TensorPtr>> Model::named_tensors() const {
  auto out = grounder.named_tensors();
  for (const auto& [name, t] : baseline.weights)
    out.emplace_back("fusion." + name, t);
  return out;
}

long Model::parameter_count() const {
  long n = 0;
  for (const auto& [name, t] : named_tensors()) n += t->value.size();
  return n;
}

long Model::fusion_parameter_count() const {
  return gfm::fusion_parameter_count(variant.kind, grounder.config.hidden);
}

Model init_model(const ExperimentConfig& config, const GenSpec& data_spec) {
  GrounderConfig gc;
  gc.vocab_size = data_spec.vocab_size();
  gc.feature_dim = data_spec.feature_dim();
  gc.hidden = config.hidden;
  gc.num_layers = config.num_layers;
  gc.max_instruction_len =
      config.variant.kind == FusionKind::ConcatAll ? config.concat_max_len : 3;

  Model m;
  m.variant = config.variant;
  m.grounder = init_grounder(gc, splitmix64(config.seed));
  m.baseline = init_baseline(config.variant.kind, config.hidden,
                             splitmix64(config.seed ^ 0x6261736511ULL));
  return m;
}

TensorPtr grounding_loss(const std::vector<TensorPtr>& step_logits,
                         const std::vector<int>& targets) {
  if (step_logits.empty() || step_logits.size() != targets.size())
    throw std::invalid_argument("grounding_loss: logits/target count mismatch");
  TensorPtr total;
  for (std::size_t i = 0; i < step_logits.size(); ++i) {
    auto ce = cross_entropy_row(step_logits[i], targets[i]);
    total = total ? add(total, ce) : ce;
  }
  return scale(total, 1.0 / static_cast<double>(step_logits.size()));
}

namespace {

struct AdamWSlot {
  Matrix m, v;
};

/// Decoupled weight decay update with bias correction; clips the global
/// gradient norm first.
class AdamW {
 public:
  AdamW(const ExperimentConfig& cfg,
        std::vector<std::pair<std::string, TensorPtr>> params)
      : cfg_(cfg), params_(std::move(params)) {
    for (auto& [name, t] : params_) {
      t->ensure_grad();
      slots_.push_back({Matrix::Zero(t->rows(), t->cols()),
                        Matrix::Zero(t->rows(), t->cols())});
    }
  }

  void step() {
    double sq = 0;
    for (auto& [name, t] : params_) sq += t->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    const double clip = cfg_.grad_clip_norm > 0 && norm > cfg_.grad_clip_norm
                            ? cfg_.grad_clip_norm / norm
                            : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& t = params_[i].second;
      auto& s = slots_[i];
      const Matrix g = t->grad * clip;
      s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * g;
      s.v = cfg_.beta2 * s.v.array().matrix() +
            (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      const Matrix m_hat = s.m / bc1;
      const Matrix v_hat = s.v / bc2;
      t->value.array() -=
          cfg_.learning_rate *
          (m_hat.array() / (v_hat.array().sqrt() + 1e-8) +
           cfg_.weight_decay * t->value.array());
    }
  }

 private:
  ExperimentConfig cfg_;
  std::vector<std::pair<std::string, TensorPtr>> params_;
  std::vector<AdamWSlot> slots_;
  long t_ = 0;
};

std::vector<std::size_t> subsample_indices(std::size_t n, double fraction,
                                           std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (fraction >= 1.0) return idx;
  std::mt19937_64 rng(splitmix64(seed ^ 0xda7af7acULL));
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

TrainResult train(const ExperimentConfig& config, const Dataset& train_set) {
  config.validate();
  if (train_set.tasks.empty())
    throw std::invalid_argument("train: empty training set");
  const auto start = std::chrono::steady_clock::now();

  TrainResult result;
  result.model = init_model(config, train_set.spec);
  auto params = result.model.named_tensors();
  AdamW opt(config, params);

  const auto indices = subsample_indices(train_set.tasks.size(),
                                         config.data_fraction, config.seed);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = indices;
    std::mt19937_64 rng(splitmix64(config.seed ^ (0x5955AAULL + epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0;
    long epoch_steps = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t end =
          std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
      Tape tape;
      TensorPtr total;
      long n_steps = 0;
      {
        TapeScope scope(tape);
        for (std::size_t k = b; k < end; ++k) {
          const auto& task = train_set.tasks[order[k]];
          auto scene = scene_features(train_set.spec, task);
          auto logits = forward_task(result.model.grounder,
                                     &result.model.baseline,
                                     result.model.variant, scene, task.steps);
          for (std::size_t s = 0; s < logits.size(); ++s) {
            auto ce = cross_entropy_row(logits[s], task.targets[s]);
            total = total ? add(total, ce) : ce;
            ++n_steps;
          }
        }
        total = scale(total, 1.0 / static_cast<double>(n_steps));
      }
      const double loss_value = total->value(0, 0);
      if (!std::isfinite(loss_value)) {
        std::ostringstream ss;
        ss << "train: non-finite loss at epoch " << epoch << ", batch "
           << (b / config.batch_size) << " (first task id "
           << train_set.tasks[order[b]].task_id << ")";
        throw std::runtime_error(ss.str());
      }
      tape.backward(total);
      opt.step();
      for (auto& [name, t] : params) t->zero_grad();
      tape.clear();

      epoch_loss += loss_value * static_cast<double>(n_steps);
      epoch_steps += n_steps;
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(epoch_steps));
  }

  result.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return result;
}

MetricsReport evaluate(const Model& model, const Dataset& eval_set) {
  if (eval_set.tasks.empty())
    throw std::invalid_argument("evaluate: empty evaluation set");
  const auto start = std::chrono::steady_clock::now();

  const std::size_t n = eval_set.tasks.size();
  std::vector<int> correct_steps(n, 0);
  std::vector<int> total_steps(n, 0);
  std::vector<char> task_correct(n, 0);

  const int n_threads = std::min<int>(env_threads(), static_cast<int>(n));
  auto worker = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& task = eval_set.tasks[i];
      auto scene = scene_features(eval_set.spec, task);
      auto logits = forward_task(model.grounder, &model.baseline, model.variant,
                                 scene, task.steps);
      int ok = 0;
      for (std::size_t s = 0; s < logits.size(); ++s)
        if (argmax_logits(logits[s]) == task.targets[s]) ++ok;
      correct_steps[i] = ok;
      total_steps[i] = static_cast<int>(logits.size());
      task_correct[i] = ok == static_cast<int>(logits.size()) ? 1 : 0;
    }
  };
  if (n_threads <= 1) {
    worker(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const std::size_t lo = t * chunk;
      const std::size_t hi = std::min(n, lo + chunk);
      if (lo < hi) pool.emplace_back(worker, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  MetricsReport r;
  r.variant = variant_label(model.variant);
  r.parameter_count = model.parameter_count();
  r.fusion_parameters = model.fusion_parameter_count();

  long steps_ok = 0, steps_all = 0, tasks_ok = 0;
  std::map<std::string, std::pair<long, long>> sub_t;      // ok, total tasks
  std::map<std::string, std::pair<long, long>> sub_s;      // ok, total steps
  std::map<std::string, std::pair<long, long>> sub_t_7p;
  for (std::size_t i = 0; i < n; ++i) {
    steps_ok += correct_steps[i];
    steps_all += total_steps[i];
    tasks_ok += task_correct[i];
    const auto key = subset_key(total_steps[i]);
    sub_t[key].first += task_correct[i];
    sub_t[key].second += 1;
    sub_s[key].first += correct_steps[i];
    sub_s[key].second += total_steps[i];
    const auto key7 = subset_key_7plus(total_steps[i]);
    sub_t_7p[key7].first += task_correct[i];
    sub_t_7p[key7].second += 1;
  }
  r.s_acc = static_cast<double>(steps_ok) / static_cast<double>(steps_all);
  r.t_acc = static_cast<double>(tasks_ok) / static_cast<double>(n);
  for (const auto& [k, v] : sub_t) {
    r.subset_t_acc[k] = static_cast<double>(v.first) / v.second;
    r.subset_task_counts[k] = static_cast<int>(v.second);
  }
  for (const auto& [k, v] : sub_s) {
    r.subset_s_acc[k] = static_cast<double>(v.first) / v.second;
    r.subset_step_counts[k] = static_cast<int>(v.second);
  }
  for (const auto& [k, v] : sub_t_7p)
    r.subset_t_acc_7plus[k] = static_cast<double>(v.first) / v.second;

  r.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return r;
}

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

Matrix matrix_from_json(const json& j) {
  const Eigen::Index r = j.at("rows").get<Eigen::Index>();
  const Eigen::Index c = j.at("cols").get<Eigen::Index>();
  Matrix m(r, c);
  const auto& data = j.at("data");
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = data[i][k].get<double>();
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const ExperimentConfig& config) {
  json j;
  j["format"] = "gfm-checkpoint";
  j["version"] = 1;
  j["revision"] = kRevision;
  j["variant"] = variant_label(model.variant);
  j["config_hash"] = config.hash();
  j["seed"] = config.seed;
  j["grounder"] = {{"vocab_size", model.grounder.config.vocab_size},
                   {"feature_dim", model.grounder.config.feature_dim},
                   {"hidden", model.grounder.config.hidden},
                   {"num_layers", model.grounder.config.num_layers},
                   {"max_instruction_len",
                    model.grounder.config.max_instruction_len}};
  json params;
  for (const auto& [name, t] : model.named_tensors())
    params[name] = matrix_to_json(t->value);
  j["params"] = std::move(params);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump() << "\n";
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("load_checkpoint: malformed file: " +
                             std::string(e.what()));
  }
  if (j.value("format", "") != "gfm-checkpoint" || j.value("version", 0) != 1)
    throw std::runtime_error("load_checkpoint: not a v1 gfm checkpoint");

  Model m;
  m.variant = variant_from_label(j.at("variant").get<std::string>());
  GrounderConfig gc;
  const auto& g = j.at("grounder");
  gc.vocab_size = g.at("vocab_size").get<int>();
  gc.feature_dim = g.at("feature_dim").get<int>();
  gc.hidden = g.at("hidden").get<int>();
  gc.num_layers = g.at("num_layers").get<int>();
  gc.max_instruction_len = g.at("max_instruction_len").get<int>();
  m.grounder = init_grounder(gc, 0);
  m.baseline = init_baseline(m.variant.kind, gc.hidden, 0);

  const auto& params = j.at("params");
  for (auto& [name, t] : m.named_tensors()) {
    if (!params.contains(name))
      throw std::runtime_error("load_checkpoint: missing tensor " + name);
    Matrix v = matrix_from_json(params.at(name));
    if (v.rows() != t->rows() || v.cols() != t->cols())
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    t->value = std::move(v);
  }
  return m;
}

AblationTable run_ablation_grid(const ExperimentConfig& base,
                                const std::vector<std::string>& variant_labels,
                                const std::vector<std::uint64_t>& seeds,
                                const Dataset& train_set,
                                const Dataset& eval_set) {
  if (variant_labels.size() < 2)
    throw std::invalid_argument("run_ablation_grid: need at least 2 variants");
  if (seeds.empty())
    throw std::invalid_argument("run_ablation_grid: need at least 1 seed");

  AblationTable table;
  table.baseline_label = variant_labels.front();
  table.seeds = seeds;

  for (const auto& label : variant_labels) {
    for (const auto seed : seeds) {
      ExperimentConfig cfg = base;
      cfg.variant = variant_from_label(label);
      cfg.seed = seed;
      auto trained = train(cfg, train_set);
      auto report = evaluate(trained.model, eval_set);
      report.loss_curve = trained.loss_curve;
      report.config_hash = cfg.hash();
      report.seed = seed;
      report.wall_clock_seconds = trained.wall_clock_seconds;
      table.rows.push_back({label, seed, std::move(report)});
    }
  }

  auto rows_for = [&](const std::string& label) {
    std::vector<const MetricsReport*> out;
    for (const auto& row : table.rows)
      if (row.label == label) out.push_back(&row.report);
    return out;
  };

  auto summarize = [&](const std::string& label) {
    AblationSummary s;
    s.label = label;
    const auto rows = rows_for(label);
    const double n = static_cast<double>(rows.size());
    for (const auto* r : rows) {
      s.mean_s_acc += r->s_acc / n;
      s.mean_t_acc += r->t_acc / n;
      for (const auto& [k, v] : r->subset_t_acc)
        s.mean_subset_t_acc[k] += v / n;
    }
    if (rows.size() >= 2) {
      double vs = 0, vt = 0;
      for (const auto* r : rows) {
        vs += (r->s_acc - s.mean_s_acc) * (r->s_acc - s.mean_s_acc);
        vt += (r->t_acc - s.mean_t_acc) * (r->t_acc - s.mean_t_acc);
      }
      s.spread_s_acc = std::sqrt(vs / (n - 1));
      s.spread_t_acc = std::sqrt(vt / (n - 1));
    }
    return s;
  };

  AblationSummary baseline = summarize(table.baseline_label);
  for (const auto& label : variant_labels) {
    AblationSummary s = summarize(label);
    s.delta_s_acc = s.mean_s_acc - baseline.mean_s_acc;
    s.delta_t_acc = s.mean_t_acc - baseline.mean_t_acc;
    for (const auto& [k, v] : s.mean_subset_t_acc) {
      const auto it = baseline.mean_subset_t_acc.find(k);
      s.delta_subset_t_acc[k] =
          v - (it == baseline.mean_subset_t_acc.end() ? 0.0 : it->second);
    }
    table.summary.push_back(std::move(s));
  }
  return table;
}

namespace {

json report_to_json(const MetricsReport& r) {
  json j;
  j["revision"] = kRevision;
  j["variant"] = r.variant;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["s_acc"] = r.s_acc;
  j["t_acc"] = r.t_acc;
  j["subset_t_acc"] = r.subset_t_acc;
  j["subset_task_counts"] = r.subset_task_counts;
  j["subset_s_acc"] = r.subset_s_acc;
  j["subset_step_counts"] = r.subset_step_counts;
  j["subset_t_acc_7plus"] = r.subset_t_acc_7plus;
  j["loss_curve"] = r.loss_curve;
  j["parameter_count"] = r.parameter_count;
  j["fusion_parameters"] = r.fusion_parameters;
  return j;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("report_emit: cannot open " + path);
  out << content;
}

}  // namespace

void report_emit(const MetricsReport& report, const std::string& stem) {
  json j = report_to_json(report);
  j["format"] = "gfm-report";
  j["version"] = 1;
  write_file(stem + ".json", j.dump(2) + "\n");

  std::ostringstream csv;
  csv << "variant,seed,s_acc,t_acc,parameter_count,fusion_parameters,config_hash\n";
  csv << report.variant << "," << report.seed << "," << report.s_acc << ","
      << report.t_acc << "," << report.parameter_count << ","
      << report.fusion_parameters << "," << report.config_hash << "\n";
  write_file(stem + ".csv", csv.str());

  std::ostringstream timing;
  timing << "wall_clock_seconds " << report.wall_clock_seconds << "\n";
  write_file(stem + ".timing.txt", timing.str());
}

void report_emit(const AblationTable& table, const std::string& stem) {
  json j;
  j["format"] = "gfm-ablation";
  j["version"] = 1;
  j["revision"] = kRevision;
  j["baseline"] = table.baseline_label;
  j["seeds"] = table.seeds;
  json rows = json::array();
  for (const auto& row : table.rows) {
    json r = report_to_json(row.report);
    r["label"] = row.label;
    rows.push_back(std::move(r));
  }
  j["rows"] = std::move(rows);
  json summary = json::array();
  for (const auto& s : table.summary) {
    json e{{"label", s.label},
           {"mean_s_acc", s.mean_s_acc},
           {"mean_t_acc", s.mean_t_acc},
           {"delta_s_acc", s.delta_s_acc},
           {"delta_t_acc", s.delta_t_acc},
           {"mean_subset_t_acc", s.mean_subset_t_acc},
           {"delta_subset_t_acc", s.delta_subset_t_acc}};
    if (s.spread_s_acc) e["spread_s_acc"] = *s.spread_s_acc;
    if (s.spread_t_acc) e["spread_t_acc"] = *s.spread_t_acc;
    summary.push_back(std::move(e));
  }
  j["summary"] = std::move(summary);
  write_file(stem + ".json", j.dump(2) + "\n");

  std::ostringstream csv;
  csv << "label,seed,s_acc,t_acc,parameter_count,fusion_parameters\n";
  for (const auto& row : table.rows)
    csv << row.label << "," << row.seed << "," << row.report.s_acc << ","
        << row.report.t_acc << "," << row.report.parameter_count << ","
        << row.report.fusion_parameters << "\n";
  write_file(stem + ".csv", csv.str());

  std::ostringstream timing;
  for (const auto& row : table.rows)
    timing << row.label << " seed " << row.seed << " wall_clock_seconds "
           << row.report.wall_clock_seconds << "\n";
  write_file(stem + ".timing.txt", timing.str());
}

}  // namespace gfm
