// dav: one binary for the whole workbench — synthetic dataset generation,
// model training, per-image attacks, universal perturbations and report
// rendering. Every command takes --config <json> whose keys mirror the long
// flag names; explicit flags win over config values. The effective
// configuration is echoed next to each output artifact so a run can be
// reconstructed from its files alone.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dav/attacks.hpp"
#include "dav/checkpoint.hpp"
#include "dav/dataset.hpp"
#include "dav/error.hpp"
#include "dav/metrics.hpp"
#include "dav/models.hpp"
#include "dav/rng.hpp"
#include "dav/scene.hpp"
#include "dav/universal.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace dav;

namespace {

// ---------------------------------------------------------------- config --

nlohmann::json load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("config file " + path + " is not readable");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw UsageError("config file " + path + ": " + std::string(e.what()));
  }
  if (!j.is_object()) throw UsageError("config file " + path + " must hold one JSON object");
  return j;
}

void reject_unknown_keys(const nlohmann::json& cfg, const std::vector<std::string>& allowed,
                         const std::string& cmd) {
  for (const auto& item : cfg.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw UsageError("config key '" + item.key() + "' is not an option of " + cmd);
    }
  }
}

// Flag beats config file beats built-in default (already in `parsed`).
template <class T>
T pick(const CLI::Option* opt, const nlohmann::json& cfg, const char* key, const T& parsed) {
  if (opt != nullptr && opt->count() > 0) return parsed;
  if (cfg.contains(key)) {
    try {
      return cfg.at(key).get<T>();
    } catch (const std::exception&) {
      throw UsageError(std::string("config key '") + key + "' has the wrong type");
    }
  }
  return parsed;
}

void write_echo(const fs::path& path, const ordered_json& echo) {
  write_binary_file(path, echo.dump(2) + "\n");
}

// ---------------------------------------------------------------- parsing --

double parse_real(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError(what + ": '" + s + "' is not a number");
  }
}

std::vector<double> parse_real_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::size_t begin = 0;
  while (begin <= s.size()) {
    const std::size_t comma = s.find(',', begin);
    const std::size_t end = comma == std::string::npos ? s.size() : comma;
    out.push_back(parse_real(s.substr(begin, end - begin), what));
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  if (out.empty()) throw UsageError(what + ": empty list");
  return out;
}

MultiTaskWeights parse_weights(const std::string& s) {
  const std::vector<double> v = parse_real_list(s, "--weights");
  if (v.size() != 2) throw UsageError("--weights wants 'w_depth,w_semantic', got '" + s + "'");
  return MultiTaskWeights{v[0], v[1]};
}

// Flag values reuse the data-layer parsers, but a bad flag is a usage error
// rather than bad data.
template <class F>
auto as_usage(F&& f) {
  try {
    return f();
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

// ------------------------------------------------------------------- gen --

struct GenCmd {
  CLI::App* app = nullptr;
  std::string out;
  std::string config;
  std::size_t count = 100;
  std::size_t size = 64;
  double sparsity = 0.3;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  CLI::Option *o_count = nullptr, *o_size = nullptr, *o_sparsity = nullptr, *o_val = nullptr,
              *o_seed = nullptr;
};

void add_gen(CLI::App& app, GenCmd& c) {
  c.app = app.add_subcommand("gen", "generate a synthetic scene dataset");
  c.app->add_option("--out", c.out, "dataset directory")->required();
  c.app->add_option("--config", c.config, "JSON config file");
  c.o_count = c.app->add_option("--count", c.count, "number of scenes (default 100)");
  c.o_size = c.app->add_option("--size", c.size, "square image side (default 64)");
  c.o_sparsity = c.app->add_option("--sparsity", c.sparsity, "annotated pixel fraction");
  c.o_val = c.app->add_option("--val-fraction", c.val_fraction, "validation share");
  c.o_seed = c.app->add_option("--seed", c.seed, "root seed");
}

int run_gen(const GenCmd& c) {
  const nlohmann::json cfg = c.config.empty() ? nlohmann::json::object()
                                              : load_config_file(c.config);
  reject_unknown_keys(cfg, {"count", "size", "sparsity", "val-fraction", "seed"}, "gen");

  GenConfig gc;
  gc.count = pick(c.o_count, cfg, "count", c.count);
  gc.height = gc.width = pick(c.o_size, cfg, "size", c.size);
  gc.sparsity = pick(c.o_sparsity, cfg, "sparsity", c.sparsity);
  gc.val_fraction = pick(c.o_val, cfg, "val-fraction", c.val_fraction);
  gc.seed = pick(c.o_seed, cfg, "seed", c.seed);

  const std::vector<IndexEntry> entries = generate_dataset(c.out, gc);

  ordered_json echo;
  echo["command"] = "gen";
  echo["count"] = gc.count;
  echo["size"] = gc.height;
  echo["sparsity"] = gc.sparsity;
  echo["val-fraction"] = gc.val_fraction;
  echo["seed"] = gc.seed;
  write_echo(fs::path(c.out) / "run-config.json", echo);

  std::cout << "wrote " << entries.size() << " samples to " << c.out << "\n";
  return 0;
}

// ----------------------------------------------------------------- train --

struct TrainCmd {
  CLI::App* app = nullptr;
  std::string arch = "arch-A";
  std::string task = "depth";
  std::size_t epochs = 20;
  double lr = 0.0;  // 0 = per-task default
  std::uint64_t seed = 0;
  std::string data;
  std::string out;
  std::string config;
  CLI::Option *o_arch = nullptr, *o_task = nullptr, *o_epochs = nullptr, *o_lr = nullptr,
              *o_seed = nullptr;
};

void add_train(CLI::App& app, TrainCmd& c) {
  c.app = app.add_subcommand("train", "train a depth or segmentation net");
  c.o_arch = c.app->add_option("--arch", c.arch, "arch-A or arch-B");
  c.o_task = c.app->add_option("--task", c.task, "depth or seg");
  c.o_epochs = c.app->add_option("--epochs", c.epochs, "training epochs (default 20)");
  c.o_lr = c.app->add_option("--lr", c.lr, "learning rate; 0 picks the task default");
  c.o_seed = c.app->add_option("--seed", c.seed, "root seed (model init + shuffling)");
  c.app->add_option("--data", c.data, "dataset directory")->required();
  c.app->add_option("--out", c.out, "checkpoint path")->required();
  c.app->add_option("--config", c.config, "JSON config file");
}

int run_train(const TrainCmd& c) {
  const nlohmann::json cfg = c.config.empty() ? nlohmann::json::object()
                                              : load_config_file(c.config);
  reject_unknown_keys(cfg, {"arch", "task", "epochs", "lr", "seed"}, "train");

  const std::string arch_str = pick(c.o_arch, cfg, "arch", c.arch);
  const std::string task = pick(c.o_task, cfg, "task", c.task);
  const std::size_t epochs = pick(c.o_epochs, cfg, "epochs", c.epochs);
  double lr = pick(c.o_lr, cfg, "lr", c.lr);
  const std::uint64_t seed = pick(c.o_seed, cfg, "seed", c.seed);

  const Arch arch = as_usage([&] { return parse_arch(arch_str); });
  if (task != "depth" && task != "seg") {
    throw UsageError("--task must be depth or seg, got '" + task + "'");
  }
  if (lr == 0.0) lr = task == "depth" ? 3e-3 : 5e-2;
  if (!std::isfinite(lr) || lr <= 0.0) throw UsageError("--lr must be positive");

  const std::vector<Sample> train_set = load_split(c.data, "train");
  const std::vector<Sample> holdout = load_split(c.data, "val");

  // one root seed, split by purpose
  const std::uint64_t model_seed = seed_stream(seed, "model");
  const std::uint64_t sgd_seed = seed_stream(seed, "train");

  TrainReport report;
  if (task == "depth") {
    DepthNet net(arch, model_seed);
    report = train_depth(net, train_set, holdout, epochs, lr, sgd_seed);
    save_depth(c.out, net);
  } else {
    SegNet net(arch, model_seed);
    report = train_seg(net, train_set, holdout, epochs, lr, sgd_seed);
    save_seg(c.out, net);
  }

  ordered_json echo;
  echo["command"] = "train";
  echo["arch"] = arch_id(arch);
  echo["task"] = task;
  echo["epochs"] = epochs;
  echo["lr"] = lr;
  echo["seed"] = seed;
  echo["data"] = c.data;
  write_echo(c.out + ".run.json", echo);

  ordered_json rep;
  rep["epochs"] = report.epochs;
  rep["final-loss"] = report.final_loss;
  rep["holdout-metric"] = report.holdout_metric;
  write_echo(c.out + ".report.json", rep);

  std::cout << "trained " << task << " " << arch_id(arch) << ": final loss "
            << format_double(report.final_loss) << ", holdout "
            << format_double(report.holdout_metric) << "\n";
  return 0;
}

// ---------------------------------------------------------------- attack --

struct AttackCmd {
  CLI::App* app = nullptr;
  std::string method = "mifgsm";
  std::string mode = "non-targeted";
  double epsilon = 16.0;
  double alpha = 1.0;
  int iterations = 0;
  double mu = 1.0;
  std::string target_depth = "100";
  int instance = -1;  // -1 = first instance under --target-below
  double target_below = 50.0;
  std::string model;
  std::string eval_model;
  std::string data;
  std::string split = "val";
  std::string out;
  std::string config;
  CLI::Option *o_method = nullptr, *o_mode = nullptr, *o_epsilon = nullptr, *o_alpha = nullptr,
              *o_iterations = nullptr, *o_mu = nullptr, *o_target = nullptr,
              *o_instance = nullptr, *o_below = nullptr, *o_eval = nullptr, *o_split = nullptr;
};

void add_attack(CLI::App& app, AttackCmd& c) {
  c.app = app.add_subcommand("attack", "attack depth estimates image by image");
  c.o_method = c.app->add_option("--method", c.method, "fgsm, ifgsm or mifgsm");
  c.o_mode = c.app->add_option("--mode", c.mode, "non-targeted or targeted");
  c.o_epsilon = c.app->add_option("--epsilon", c.epsilon, "L-inf budget (default 16)");
  c.o_alpha = c.app->add_option("--alpha", c.alpha, "step size (default 1)");
  c.o_iterations = c.app->add_option("--iterations", c.iterations,
                                     "iteration count; 0 derives it from epsilon");
  c.o_mu = c.app->add_option("--mu", c.mu, "momentum decay (default 1)");
  c.o_target = c.app->add_option("--target-depth", c.target_depth,
                                 "targeted mode: depth in meters, comma list sweeps");
  c.o_instance = c.app->add_option("--instance", c.instance,
                                   "targeted mode: instance index; -1 picks the first "
                                   "instance shallower than --target-below");
  c.o_below = c.app->add_option("--target-below", c.target_below,
                                "eligibility bound for auto-picked instances");
  c.app->add_option("--model", c.model, "crafting checkpoint")->required();
  c.o_eval = c.app->add_option("--eval-model", c.eval_model,
                               "evaluation checkpoint (defaults to --model)");
  c.app->add_option("--data", c.data, "dataset directory")->required();
  c.o_split = c.app->add_option("--split", c.split, "train or val (default val)");
  c.app->add_option("--out", c.out, "report CSV path")->required();
  c.app->add_option("--config", c.config, "JSON config file");
}

int run_attack(const AttackCmd& c) {
  const nlohmann::json cfg = c.config.empty() ? nlohmann::json::object()
                                              : load_config_file(c.config);
  reject_unknown_keys(cfg,
                      {"method", "mode", "epsilon", "alpha", "iterations", "mu", "target-depth",
                       "instance", "target-below", "eval-model", "split"},
                      "attack");

  const std::string method_str = pick(c.o_method, cfg, "method", c.method);
  const std::string mode_str = pick(c.o_mode, cfg, "mode", c.mode);
  const Method method = as_usage([&] { return parse_method(method_str); });

  AttackConfig acfg;
  acfg.mode = as_usage([&] { return parse_mode(mode_str); });
  acfg.epsilon = pick(c.o_epsilon, cfg, "epsilon", c.epsilon);
  acfg.alpha = pick(c.o_alpha, cfg, "alpha", c.alpha);
  acfg.iterations = pick(c.o_iterations, cfg, "iterations", c.iterations);
  acfg.mu = pick(c.o_mu, cfg, "mu", c.mu);
  acfg.validate();

  const bool target_given = c.o_target->count() > 0 || cfg.contains("target-depth");
  const bool instance_given = c.o_instance->count() > 0 || cfg.contains("instance");
  const std::string target_str = pick(c.o_target, cfg, "target-depth", c.target_depth);
  const int instance = pick(c.o_instance, cfg, "instance", c.instance);
  const double target_below = pick(c.o_below, cfg, "target-below", c.target_below);
  const std::string eval_path = pick(c.o_eval, cfg, "eval-model", c.eval_model);
  const std::string split = pick(c.o_split, cfg, "split", c.split);
  if (split != "train" && split != "val") {
    throw UsageError("--split must be train or val, got '" + split + "'");
  }

  const bool targeted = acfg.mode == AttackMode::kTargeted;
  if (!targeted && (target_given || instance_given)) {
    throw UsageError("--target-depth and --instance only apply to targeted mode");
  }
  const std::vector<double> targets = parse_real_list(target_str, "--target-depth");

  const DepthNet craft = load_depth(c.model);
  const DepthNet eval_net = eval_path.empty() ? load_depth(c.model) : load_depth(eval_path);

  std::vector<std::string> ids;
  const std::vector<Sample> samples = load_split(c.data, split, &ids);

  std::vector<ReportRow> rows;
  std::string sweep = "image-id,instance,requested-depth,clean-mmd,achieved-mmd\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (!targeted) {
      const AttackResult r = attack_depth(method, craft, eval_net, s, acfg);
      rows.push_back(ReportRow{ids[i], method_id(method), mode_id(acfg.mode), r.metrics});
      continue;
    }

    int inst = instance;
    if (inst < 0) {
      std::vector<Tensor> masks;
      for (const Instance& obj : s.instances) masks.push_back(obj.mask);
      const SparseDepth gt{s.depth, s.valid};
      const std::vector<std::size_t> eligible =
          select_target_indices(masks, gt, target_below);
      if (eligible.empty()) {
        std::cerr << "skip " << ids[i] << ": no instance shallower than "
                  << format_double(target_below) << "\n";
        continue;
      }
      inst = static_cast<int>(eligible.front());
    } else if (static_cast<std::size_t>(inst) >= s.instances.size()) {
      std::cerr << "skip " << ids[i] << ": no instance " << inst << "\n";
      continue;
    }

    for (const double want : targets) {
      TargetSpec spec{s.instances[static_cast<std::size_t>(inst)].mask, want};
      acfg.target_depth = want;
      const AttackResult r = attack_depth(method, craft, eval_net, s, acfg, &spec);
      rows.push_back(ReportRow{ids[i], method_id(method), mode_id(acfg.mode), r.metrics});
      sweep += ids[i] + "," + std::to_string(inst) + "," + format_double(want) + "," +
               format_double(*r.metrics.clean_mmd) + "," + format_double(*r.metrics.adv_mmd) +
               "\n";
    }
  }

  write_report_csv(c.out, rows);
  if (targeted) write_binary_file(c.out + ".sweep.csv", sweep);

  ordered_json echo;
  echo["command"] = "attack";
  echo["method"] = method_id(method);
  echo["mode"] = mode_id(acfg.mode);
  echo["epsilon"] = acfg.epsilon;
  echo["alpha"] = acfg.alpha;
  echo["iterations"] = acfg.iterations;
  echo["mu"] = acfg.mu;
  if (targeted) {
    echo["target-depth"] = target_str;
    echo["instance"] = instance;
    echo["target-below"] = target_below;
  }
  echo["model"] = c.model;
  echo["eval-model"] = eval_path.empty() ? c.model : eval_path;
  echo["data"] = c.data;
  echo["split"] = split;
  write_echo(c.out + ".run.json", echo);

  std::cout << "wrote " << rows.size() << " rows to " << c.out << "\n";
  return 0;
}

// ------------------------------------------------------------- universal --

struct UniversalCmd {
  CLI::App* app = nullptr;
  std::vector<std::string> weights;
  double gamma = 1.0;
  double alpha = 1.0;
  double mu = 1.0;
  std::size_t epochs = 2;
  int inner = 10;
  std::size_t batch = 10;
  double epsilon = 16.0;
  std::uint64_t seed = 0;
  std::string init = "random";
  std::string batch_init = "delta";
  std::string depth_model;
  std::string seg_model;
  std::string data;
  std::string split = "val";
  std::string out;
  std::string report;
  std::string config;
  CLI::Option *o_weights = nullptr, *o_gamma = nullptr, *o_alpha = nullptr, *o_mu = nullptr,
              *o_epochs = nullptr, *o_inner = nullptr, *o_batch = nullptr, *o_epsilon = nullptr,
              *o_seed = nullptr, *o_init = nullptr, *o_batch_init = nullptr, *o_seg = nullptr,
              *o_split = nullptr, *o_report = nullptr;
};

void add_universal(CLI::App& app, UniversalCmd& c) {
  c.app = app.add_subcommand("universal", "train universal perturbations");
  c.o_weights = c.app->add_option("--weights", c.weights,
                                  "w_depth,w_semantic; repeat to compare settings");
  c.o_gamma = c.app->add_option("--gamma", c.gamma, "delta learning rate (default 1)");
  c.o_alpha = c.app->add_option("--alpha", c.alpha, "inner step size (default 1)");
  c.o_mu = c.app->add_option("--mu", c.mu, "momentum decay (default 1)");
  c.o_epochs = c.app->add_option("--epochs", c.epochs, "training epochs (default 2)");
  c.o_inner = c.app->add_option("--inner-iterations", c.inner, "inner steps per batch");
  c.o_batch = c.app->add_option("--batch", c.batch, "minibatch size (default 10)");
  c.o_epsilon = c.app->add_option("--epsilon", c.epsilon, "L-inf budget (default 16)");
  c.o_seed = c.app->add_option("--seed", c.seed, "root seed");
  c.o_init = c.app->add_option("--init", c.init, "delta init: random or zero");
  c.o_batch_init = c.app->add_option("--batch-init", c.batch_init,
                                     "inner start: delta (apply current) or plain");
  c.app->add_option("--depth-model", c.depth_model, "depth checkpoint")->required();
  c.o_seg = c.app->add_option("--seg-model", c.seg_model,
                              "segmentation checkpoint (multi-task only)");
  c.app->add_option("--data", c.data, "dataset directory")->required();
  c.o_split = c.app->add_option("--split", c.split, "evaluation split (default val)");
  c.app->add_option("--out", c.out, "delta checkpoint path")->required();
  c.o_report = c.app->add_option("--report", c.report,
                                 "comparison CSV (default <out>.compare.csv)");
  c.app->add_option("--config", c.config, "JSON config file");
}

fs::path delta_path(const fs::path& out, const MultiTaskWeights& w, bool lone) {
  if (lone) return out;
  fs::path p = out;
  const std::string ext = p.extension().string();
  p.replace_extension();
  return p.string() + "-wd" + format_double(w.depth) + "-ws" + format_double(w.semantic) + ext;
}

int run_universal(const UniversalCmd& c) {
  const nlohmann::json cfg = c.config.empty() ? nlohmann::json::object()
                                              : load_config_file(c.config);
  reject_unknown_keys(cfg,
                      {"weights", "gamma", "alpha", "mu", "epochs", "inner-iterations", "batch",
                       "epsilon", "seed", "init", "batch-init", "seg-model", "split"},
                      "universal");

  std::vector<std::string> weight_strs = c.weights;
  if (c.o_weights->count() == 0 && cfg.contains("weights")) {
    const nlohmann::json& jw = cfg.at("weights");
    weight_strs.clear();
    if (jw.is_string()) {
      weight_strs.push_back(jw.get<std::string>());
    } else if (jw.is_array()) {
      for (const auto& v : jw) weight_strs.push_back(v.get<std::string>());
    } else {
      throw UsageError("config key 'weights' must be a string or array of strings");
    }
  }
  if (weight_strs.empty()) weight_strs.push_back("1,0");

  std::vector<MultiTaskWeights> pairs;
  for (const std::string& s : weight_strs) {
    pairs.push_back(parse_weights(s));
    as_usage([&] { pairs.back().validate(); return 0; });
  }

  UniversalTrainConfig ucfg;
  ucfg.epsilon = pick(c.o_epsilon, cfg, "epsilon", c.epsilon);
  ucfg.gamma = pick(c.o_gamma, cfg, "gamma", c.gamma);
  ucfg.alpha = pick(c.o_alpha, cfg, "alpha", c.alpha);
  ucfg.mu = pick(c.o_mu, cfg, "mu", c.mu);
  ucfg.epochs = pick(c.o_epochs, cfg, "epochs", c.epochs);
  ucfg.inner_iterations = pick(c.o_inner, cfg, "inner-iterations", c.inner);
  ucfg.batch_size = pick(c.o_batch, cfg, "batch", c.batch);
  ucfg.seed = pick(c.o_seed, cfg, "seed", c.seed);
  const std::string init = pick(c.o_init, cfg, "init", c.init);
  const std::string batch_init = pick(c.o_batch_init, cfg, "batch-init", c.batch_init);
  if (init == "random") {
    ucfg.init = DeltaInit::kRandom;
  } else if (init == "zero") {
    ucfg.init = DeltaInit::kZero;
  } else {
    throw UsageError("--init must be random or zero, got '" + init + "'");
  }
  if (batch_init == "delta") {
    ucfg.batch_init = BatchInit::kApplyDelta;
  } else if (batch_init == "plain") {
    ucfg.batch_init = BatchInit::kPlain;
  } else {
    throw UsageError("--batch-init must be delta or plain, got '" + batch_init + "'");
  }
  ucfg.validate();

  const std::string seg_path = pick(c.o_seg, cfg, "seg-model", c.seg_model);
  const std::string split = pick(c.o_split, cfg, "split", c.split);
  if (split != "train" && split != "val") {
    throw UsageError("--split must be train or val, got '" + split + "'");
  }
  std::string report_path = pick(c.o_report, cfg, "report", c.report);
  if (report_path.empty()) report_path = c.out + ".compare.csv";

  const bool need_seg =
      std::any_of(pairs.begin(), pairs.end(), [](const MultiTaskWeights& w) {
        return w.semantic > 0.0;
      });
  if (need_seg && seg_path.empty()) {
    throw UsageError("a positive semantic weight needs --seg-model");
  }

  const DepthNet depth = load_depth(c.depth_model);
  std::optional<SegNet> seg;
  if (need_seg) {
    seg.emplace(load_seg(seg_path));
    std::cout << "seg model: " << seg_path << "\n";
  } else {
    std::cout << "seg model: not loaded\n";
  }

  const std::vector<Sample> train_set = load_split(c.data, "train");
  const std::vector<Sample> eval_set = load_split(c.data, split);

  std::string compare = "w-depth,w-semantic,images,clean-rmse,adv-rmse,rmse-ratio\n";
  for (const MultiTaskWeights& w : pairs) {
    const SegNet* seg_ptr = w.semantic > 0.0 ? &*seg : nullptr;
    const UniversalPerturbation up = train_universal(depth, seg_ptr, train_set, ucfg, w);
    const fs::path path = delta_path(c.out, w, pairs.size() == 1);
    save_universal(path, up);

    double clean_sum = 0.0;
    double adv_sum = 0.0;
    double ratio_sum = 0.0;
    std::size_t ratio_n = 0;
    for (const Sample& s : eval_set) {
      const SparseDepth gt{s.depth, s.valid};
      const double clean = rmse(depth.predict(s.rgb), gt);
      const double adv = rmse(depth.predict(apply_universal(s.rgb, up)), gt);
      clean_sum += clean;
      adv_sum += adv;
      if (clean > 0.0) {
        ratio_sum += adv / clean;
        ++ratio_n;
      }
    }
    const double n = static_cast<double>(eval_set.size());
    compare += format_double(w.depth) + "," + format_double(w.semantic) + "," +
               std::to_string(eval_set.size()) + "," +
               (eval_set.empty() ? "" : format_double(clean_sum / n)) + "," +
               (eval_set.empty() ? "" : format_double(adv_sum / n)) + "," +
               (ratio_n == 0 ? "" : format_double(ratio_sum / static_cast<double>(ratio_n))) +
               "\n";
    std::cout << "delta wd=" << format_double(w.depth) << " ws=" << format_double(w.semantic)
              << " -> " << path.string() << "\n";
  }

  write_binary_file(report_path, compare);

  ordered_json echo;
  echo["command"] = "universal";
  echo["weights"] = weight_strs;
  echo["gamma"] = ucfg.gamma;
  echo["alpha"] = ucfg.alpha;
  echo["mu"] = ucfg.mu;
  echo["epochs"] = ucfg.epochs;
  echo["inner-iterations"] = ucfg.inner_iterations;
  echo["batch"] = ucfg.batch_size;
  echo["epsilon"] = ucfg.epsilon;
  echo["seed"] = ucfg.seed;
  echo["init"] = init;
  echo["batch-init"] = batch_init;
  echo["depth-model"] = c.depth_model;
  echo["seg-model"] = need_seg ? seg_path : "";
  echo["data"] = c.data;
  echo["split"] = split;
  write_echo(c.out + ".run.json", echo);

  std::cout << "compare -> " << report_path << "\n";
  return 0;
}

// ---------------------------------------------------------------- report --

struct ReportCmd {
  CLI::App* app = nullptr;
  std::vector<std::string> inputs;
  std::string out;
  std::string config;
  CLI::Option* o_in = nullptr;
};

void add_report(CLI::App& app, ReportCmd& c) {
  c.app = app.add_subcommand("report", "aggregate attack CSVs into markdown");
  c.o_in = c.app->add_option("--in", c.inputs, "report CSV files");
  c.app->add_option("--out", c.out, "markdown path")->required();
  c.app->add_option("--config", c.config, "JSON config file");
}

int run_report(const ReportCmd& c) {
  const nlohmann::json cfg = c.config.empty() ? nlohmann::json::object()
                                              : load_config_file(c.config);
  reject_unknown_keys(cfg, {"in"}, "report");

  std::vector<std::string> inputs = c.inputs;
  if (c.o_in->count() == 0 && cfg.contains("in")) {
    inputs = cfg.at("in").get<std::vector<std::string>>();
  }

  struct Agg {
    std::size_t n = 0;
    double clean_rmse = 0.0, adv_rmse = 0.0;
    double ratio = 0.0;
    std::size_t ratio_n = 0;
    double clean_mmd = 0.0, adv_mmd = 0.0;
    std::size_t mmd_n = 0;
    double mmd_ratio = 0.0;
    std::size_t mmd_ratio_n = 0;
  };
  std::map<std::pair<std::string, std::string>, Agg> groups;
  for (const std::string& path : inputs) {
    for (const ReportRow& row : read_report_csv(path)) {
      Agg& a = groups[{row.method, row.mode}];
      ++a.n;
      a.clean_rmse += row.metrics.clean_rmse;
      a.adv_rmse += row.metrics.adv_rmse;
      if (row.metrics.rmse_ratio) {
        a.ratio += *row.metrics.rmse_ratio;
        ++a.ratio_n;
      }
      if (row.metrics.clean_mmd && row.metrics.adv_mmd) {
        a.clean_mmd += *row.metrics.clean_mmd;
        a.adv_mmd += *row.metrics.adv_mmd;
        ++a.mmd_n;
      }
      if (row.metrics.mmd_ratio) {
        a.mmd_ratio += *row.metrics.mmd_ratio;
        ++a.mmd_ratio_n;
      }
    }
  }

  // column means; ratios displayed at one decimal like the ratio format
  std::string md = "# Attack report\n\n";
  md += "| method | mode | images | clean RMSE | adv RMSE | RMSE ratio |"
        " clean MMD | adv MMD | MMD ratio |\n";
  md += "| --- | --- | --- | --- | --- | --- | --- | --- | --- |\n";
  for (const auto& [key, a] : groups) {
    const double n = static_cast<double>(a.n);
    md += "| " + key.first + " | " + key.second + " | " + std::to_string(a.n) + " | " +
          format_double(a.clean_rmse / n) + " | " + format_double(a.adv_rmse / n) + " | " +
          (a.ratio_n ? format_ratio(a.ratio / static_cast<double>(a.ratio_n)) : "-") + " | " +
          (a.mmd_n ? format_double(a.clean_mmd / static_cast<double>(a.mmd_n)) : "-") + " | " +
          (a.mmd_n ? format_double(a.adv_mmd / static_cast<double>(a.mmd_n)) : "-") + " | " +
          (a.mmd_ratio_n ? format_ratio(a.mmd_ratio / static_cast<double>(a.mmd_ratio_n))
                         : "-") +
          " |\n";
  }
  write_binary_file(c.out, md);

  ordered_json echo;
  echo["command"] = "report";
  echo["in"] = inputs;
  write_echo(c.out + ".run.json", echo);

  std::cout << "wrote " << c.out << "\n";
  return 0;
}

// ---------------------------------------------------------------- verify --

struct VerifyCmd {
  CLI::App* app = nullptr;
  std::string data;
};

void add_verify(CLI::App& app, VerifyCmd& c) {
  c.app = app.add_subcommand("verify", "scan a dataset for invariant violations");
  c.app->add_option("--data", c.data, "dataset directory")->required();
}

bool is_integer_in(const Tensor& t, double lo, double hi) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (t[i] < lo || t[i] > hi || t[i] != std::floor(t[i])) return false;
  }
  return true;
}

void verify_sample(const std::string& id, const Sample& s) {
  const auto fail = [&](const std::string& what) {
    throw DataError("sample " + id + ": " + what);
  };
  if (s.rgb.rank() != 3 || s.rgb.dim(0) != 3) fail("rgb must be {3,h,w}");
  if (!is_integer_in(s.rgb, 0.0, 255.0)) fail("rgb must hold integers in [0,255]");
  const std::size_t h = s.rgb.dim(1);
  const std::size_t w = s.rgb.dim(2);
  if (s.depth.shape() != Shape{h, w}) fail("depth shape mismatch");
  if (!s.depth.all_finite() || min_value(s.depth) < 1.0 || max_value(s.depth) > 100.0) {
    fail("depth must stay within [1,100] meters");
  }
  if (s.valid.shape() != Shape{h, w} || !is_integer_in(s.valid, 0.0, 1.0)) {
    fail("valid mask must be 0/1");
  }
  if (s.seg.shape() != Shape{h, w} ||
      !is_integer_in(s.seg, 0.0, static_cast<double>(kNumClasses - 1))) {
    fail("seg labels out of range");
  }
  Tensor owned({h, w});
  for (std::size_t k = 0; k < s.instances.size(); ++k) {
    const Instance& obj = s.instances[k];
    if (obj.mask.shape() != Shape{h, w} || !is_integer_in(obj.mask, 0.0, 1.0)) {
      fail("instance " + std::to_string(k) + " mask must be 0/1");
    }
    if (obj.cls != kClassCar && obj.cls != kClassPerson) {
      fail("instance " + std::to_string(k) + " has a non-object class");
    }
    bool any = false;
    for (std::size_t i = 0; i < obj.mask.numel(); ++i) {
      if (obj.mask[i] == 0.0) continue;
      any = true;
      if (owned[i] != 0.0) fail("instance masks overlap");
      owned[i] = 1.0;
      if (s.seg[i] != static_cast<double>(obj.cls)) {
        fail("instance " + std::to_string(k) + " disagrees with seg labels");
      }
    }
    if (!any) fail("instance " + std::to_string(k) + " is empty");
  }
}

int run_verify(const VerifyCmd& c) {
  std::size_t total = 0;
  for (const std::string split : {"train", "val"}) {
    std::vector<std::string> ids;
    const std::vector<Sample> samples = load_split(c.data, split, &ids);
    for (std::size_t i = 0; i < samples.size(); ++i) verify_sample(ids[i], samples[i]);
    total += samples.size();
  }
  std::cout << "ok: " << total << " samples\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic depth attack workbench"};
  app.require_subcommand(1);

  GenCmd gen_cmd;
  TrainCmd train_cmd;
  AttackCmd attack_cmd;
  UniversalCmd universal_cmd;
  ReportCmd report_cmd;
  VerifyCmd verify_cmd;
  add_gen(app, gen_cmd);
  add_train(app, train_cmd);
  add_attack(app, attack_cmd);
  add_universal(app, universal_cmd);
  add_report(app, report_cmd);
  add_verify(app, verify_cmd);

  try {
    app.parse(argc, argv);
    if (gen_cmd.app->parsed()) return run_gen(gen_cmd);
    if (train_cmd.app->parsed()) return run_train(train_cmd);
    if (attack_cmd.app->parsed()) return run_attack(attack_cmd);
    if (universal_cmd.app->parsed()) return run_universal(universal_cmd);
    if (report_cmd.app->parsed()) return run_report(report_cmd);
    if (verify_cmd.app->parsed()) return run_verify(verify_cmd);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
