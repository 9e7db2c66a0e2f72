#include "pfbr/cli.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

pfbr::io::RunConfig load_config(const std::string& path) {
  return path.empty() ? pfbr::io::RunConfig::defaults() : pfbr::io::RunConfig::from_file(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle-flow Bayes operator: task generation, meta-training, sequential "
               "inference, evaluation and classical baselines"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("-c,--config", config_path, "JSON run configuration")->capture_default_str();

  auto* dump = app.add_subcommand("config", "configuration utilities");
  bool dump_defaults = false;
  dump->add_flag("--dump-defaults", dump_defaults, "print the full default configuration");

  std::string out_path, tasks_path, ckpt_path, history_path, ensembles_path, reference_path,
      algo = "smc";
  int task_index = 0;

  auto* gen = app.add_subcommand("generate-tasks", "sample a training/evaluation task file");
  gen->add_option("-o,--out", out_path, "output task JSON")->required();

  auto* tr = app.add_subcommand("train", "meta-train the flow operator over a task file");
  tr->add_option("--tasks", tasks_path, "task JSON file")->required();
  tr->add_option("--ckpt", ckpt_path, "output checkpoint")->required();
  tr->add_option("--history", history_path, "output history CSV")->required();

  auto* inf = app.add_subcommand("infer", "run sequential inference with a trained operator");
  inf->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  inf->add_option("--tasks", tasks_path, "task JSON file")->required();
  inf->add_option("--task-index", task_index, "which task to run")->capture_default_str();
  inf->add_option("-o,--out", out_path, "output ensembles JSON")->required();

  auto* ev = app.add_subcommand("eval", "score per-stage ensembles against the exact posterior");
  ev->add_option("--ensembles", ensembles_path, "ensembles JSON")->required();
  ev->add_option("--tasks", tasks_path, "task JSON file")->required();
  ev->add_option("--task-index", task_index, "which task the ensembles belong to")
      ->capture_default_str();
  ev->add_option("--reference", reference_path, "reference ensembles standing in for the truth");
  ev->add_option("-o,--out", out_path, "output metrics CSV")->required();

  auto* base = app.add_subcommand("baselines", "run a classical baseline and score it");
  base->add_option("--tasks", tasks_path, "task JSON file")->required();
  base->add_option("--task-index", task_index, "which task to run")->capture_default_str();
  base->add_option("--algo", algo, "smc | sgld")->capture_default_str();
  base->add_option("-o,--out", out_path, "output metrics CSV")->required();
  base->add_option("--ensembles-out", ensembles_path, "also write per-stage ensembles JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (dump->parsed()) {
      if (dump_defaults) {
        pfbr::cli::cmd_dump_defaults(std::cout);
      } else {
        auto cfg = load_config(config_path);
        std::cout << cfg.to_json().dump(1) << "\n";
      }
      return 0;
    }
    auto cfg = load_config(config_path);
    if (gen->parsed()) {
      pfbr::cli::cmd_generate_tasks(cfg, out_path);
    } else if (tr->parsed()) {
      pfbr::cli::cmd_train(cfg, tasks_path, ckpt_path, history_path);
    } else if (inf->parsed()) {
      pfbr::cli::cmd_infer(cfg, ckpt_path, tasks_path, task_index, out_path);
    } else if (ev->parsed()) {
      pfbr::cli::cmd_eval(cfg, ensembles_path, tasks_path, task_index, reference_path, out_path);
    } else if (base->parsed()) {
      pfbr::cli::cmd_baselines(cfg, tasks_path, task_index, algo, out_path, ensembles_path);
    }
    return 0;
  } catch (const pfbr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
