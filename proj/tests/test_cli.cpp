#include "pfbr/cli.hpp"

#include "pfbr/train.hpp"

#include "doctest.h"

#include <cstdio>
#include <sstream>

using namespace pfbr;
using namespace pfbr::cli;
using io::RunConfig;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

RunConfig small_gaussian_config() {
  RunConfig cfg;
  cfg.seed = 31;
  cfg.task_gen.count = 5;
  cfg.task_gen.stages = 10;
  cfg.task_gen.batch = 1;
  cfg.task_gen.kde_prior_fraction = 0.0;
  cfg.flow.e_x = 3;
  cfg.flow.e_o = 3;
  cfg.flow.phi_hidden = 4;
  cfg.flow.g_hidden = 4;
  cfg.flow.gated_hidden = 4;
  cfg.flow.k = 2;
  cfg.integrator.steps = 6;
  cfg.train.iterations = 3;
  cfg.train.validation_interval = 1;
  cfg.train.particles = 8;
  cfg.eval.truth_samples = 200;
  return cfg;
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("config: defaults dump parses back and unknown keys are rejected") {
  std::ostringstream ss;
  cmd_dump_defaults(ss);
  auto j = nlohmann::json::parse(ss.str());
  RunConfig cfg = RunConfig::from_json(j);
  CHECK(cfg.fingerprint() == RunConfig::defaults().fingerprint());

  j["mystery_knob"] = 3;
  try {
    RunConfig::from_json(j);
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigError);
    CHECK(std::string(e.what()).find("mystery_knob") != std::string::npos);
  }
}

TEST_CASE("generate-tasks: counts, determinism, bad family") {
  RunConfig cfg = small_gaussian_config();
  TempFile f1("cli_tasks_a.json"), f2("cli_tasks_b.json");
  cmd_generate_tasks(cfg, f1.path);
  cmd_generate_tasks(cfg, f2.path);
  CHECK(io::read_file(f1.path) == io::read_file(f2.path));

  auto set = io::load_tasks(f1.path);
  REQUIRE(set.size() == 5);
  for (const auto& t : set) {
    CHECK(t.stages() == 10);
    for (const auto& b : t.observations) CHECK(b.size() == 1);
  }

  RunConfig bad = cfg;
  bad.task_gen.family = "unknown";
  try {
    cmd_generate_tasks(bad, f1.path);
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigError);
    CHECK(std::string(e.what()).find("unknown") != std::string::npos);
  }
}

TEST_CASE("train: history rows, byte-identical rerun, missing inputs") {
  RunConfig cfg = small_gaussian_config();
  TempFile tasks("cli_train_tasks.json"), ckpt("cli_train.ckpt"), hist("cli_train_hist.csv");
  TempFile ckpt2("cli_train2.ckpt"), hist2("cli_train_hist2.csv");
  cmd_generate_tasks(cfg, tasks.path);

  cmd_train(cfg, tasks.path, ckpt.path, hist.path);
  std::string h1 = io::read_file(hist.path);
  CHECK(count_lines(h1) == 2 + 3);  // header comment + column row + 3 iterations
  // k = 1: every row carries a validation entry
  std::istringstream hs(h1);
  std::string line;
  std::getline(hs, line);
  std::getline(hs, line);
  int vali_entries = 0;
  while (std::getline(hs, line))
    if (!line.empty() && line.back() != ',') ++vali_entries;
  CHECK(vali_entries == 3);

  cmd_train(cfg, tasks.path, ckpt2.path, hist2.path);
  CHECK(io::read_file(hist.path) == io::read_file(hist2.path));
  CHECK(io::read_file(ckpt.path) == io::read_file(ckpt2.path));

  try {
    cmd_train(cfg, "no_such_file.json", ckpt.path, hist.path);
    FAIL("expected IoError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::IoError);
  }
}

TEST_CASE("infer: zero-weight checkpoint reproduces the prior at every stage") {
  RunConfig cfg = small_gaussian_config();
  TempFile tasks("cli_infer_tasks.json"), ckpt("cli_infer.ckpt"), out("cli_infer_out.json");
  cmd_generate_tasks(cfg, tasks.path);
  auto set = io::load_tasks(tasks.path);

  train::Checkpoint zero;
  zero.dims = cfg.resolved_flow_dims();
  zero.params = ParamVector(flownet::FlowNet::make_layout(zero.dims));
  train::save_checkpoint(zero, ckpt.path);
  const std::string ckpt_before = io::read_file(ckpt.path);

  cmd_infer(cfg, ckpt.path, tasks.path, 0, out.path);
  auto stages = io::load_ensembles(out.path);
  REQUIRE(stages.size() == 10);

  op::PfbrOperator oper(zero.dims, cfg.integrator);
  Rng rng(cfg.seed);
  ParticleEnsemble prior = oper.draw_prior(set[0], cfg.train.particles, rng);
  for (const auto& s : stages) {
    CHECK(s.count() == cfg.train.particles);
    CHECK((s.positions - prior.positions).lpNorm<Eigen::Infinity>() == 0.0);
  }
  CHECK(io::read_file(ckpt.path) == ckpt_before);

  // deterministic rerun
  TempFile out2("cli_infer_out2.json");
  cmd_infer(cfg, ckpt.path, tasks.path, 0, out2.path);
  CHECK(io::read_file(out.path) == io::read_file(out2.path));
}

TEST_CASE("eval: self-reference yields zero mmd2; gmm without reference has no oracle") {
  RunConfig cfg = small_gaussian_config();
  cfg.eval.metrics = {"mmd2"};
  TempFile tasks("cli_eval_tasks.json"), ckpt("cli_eval.ckpt"), ens("cli_eval_ens.json"),
      out("cli_eval_metrics.csv");
  cmd_generate_tasks(cfg, tasks.path);
  train::Checkpoint zero;
  zero.dims = cfg.resolved_flow_dims();
  zero.params = ParamVector(flownet::FlowNet::make_layout(zero.dims));
  train::save_checkpoint(zero, ckpt.path);
  cmd_infer(cfg, ckpt.path, tasks.path, 0, ens.path);

  cmd_eval(cfg, ens.path, tasks.path, 0, ens.path, out.path);
  std::istringstream s(io::read_file(out.path));
  std::string line;
  std::getline(s, line);
  std::getline(s, line);
  int rows = 0;
  while (std::getline(s, line)) {
    ++rows;
    CHECK(line.substr(line.rfind(',') + 1) == "0");
  }
  CHECK(rows == 10);

  // oracle-backed run writes stage x metric rows
  RunConfig full = small_gaussian_config();
  TempFile out2("cli_eval_metrics2.csv");
  cmd_eval(full, ens.path, tasks.path, 0, "", out2.path);
  CHECK(count_lines(io::read_file(out2.path)) == 2 + 10 * 6);

  // gmm tasks have no closed-form posterior
  RunConfig gmm_cfg = small_gaussian_config();
  gmm_cfg.task_gen.family = "gmm";
  gmm_cfg.task_gen.count = 1;
  TempFile gtasks("cli_eval_gmm.json");
  cmd_generate_tasks(gmm_cfg, gtasks.path);
  try {
    cmd_eval(gmm_cfg, ens.path, gtasks.path, 0, "", out.path);
    FAIL("expected NoOracle");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NoOracle);
  }
}

TEST_CASE("baselines: smc metrics land under the MC bound; sgld eps guard") {
  RunConfig cfg = small_gaussian_config();
  cfg.eval.metrics = {"mean_error"};
  cfg.baselines.particles = 4000;
  TempFile tasks("cli_base_tasks.json"), out("cli_base_metrics.csv"), ens("cli_base_ens.json");
  cmd_generate_tasks(cfg, tasks.path);
  cmd_baselines(cfg, tasks.path, 0, "smc", out.path, ens.path);

  auto set = io::load_tasks(tasks.path);
  std::istringstream s(io::read_file(out.path));
  std::string line;
  std::getline(s, line);
  std::getline(s, line);
  int rows = 0;
  while (std::getline(s, line)) {
    ++rows;
    const double v = std::stod(line.substr(line.rfind(',') + 1));
    CHECK(v < 0.4);  // loose stagewise mean-error sanity bound at N = 4000
  }
  CHECK(rows == set[0].stages());

  RunConfig bad = cfg;
  bad.baselines.sgld_eps = 0.0;
  try {
    cmd_baselines(bad, tasks.path, 0, "sgld", out.path, "");
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigError);
  }
}

TEST_CASE("csv datasets: toy rows, label mapping, ragged line") {
  TempFile csv("cli_dataset.csv");
  io::write_file(csv.path, "f1,f2,label\n0.5,1.0,1\n-0.25,2.0,0\n1.5,-1.0,1\n");
  auto data = io::load_csv_dataset(csv.path, -1);
  CHECK(data.size() == 3);
  CHECK(data.dim() == 2);
  CHECK(data.labels[1] == -1.0);
  bool mapped_warning = false;
  for (const auto& w : data.warnings) mapped_warning = mapped_warning || w.find("mapped") != std::string::npos;
  CHECK(mapped_warning);

  io::write_file(csv.path, "0.5,1.0,1\n-0.25,2.0\n");
  try {
    io::load_csv_dataset(csv.path, -1);
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ParseError);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  io::write_file(csv.path, "0.5,1.0,0.7\n");
  CHECK_THROWS_AS(io::load_csv_dataset(csv.path, -1), Error);
}
