#include "pfbr/io.hpp"

#include <array>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pfbr::io {

using nlohmann::json;

std::uint32_t crc32(const void* data, std::size_t len) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xEDB88320u & (~(c & 1u) + 1u));
      t[i] = c;
    }
    return t;
  }();
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::IoError, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::IoError, "cannot write '" + path + "'");
  out << content;
  out.flush();
  require(out.good(), ErrorKind::IoError, "write failed for '" + path + "'");
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  require(j.is_object(), ErrorKind::ConfigError, where + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        ok = true;
        break;
      }
    require(ok, ErrorKind::ConfigError, "unknown key '" + item.key() + "' in " + where);
  }
}

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec vec_from_json(const json& j, const std::string& where) {
  require(j.is_array(), ErrorKind::ParseError, where + " must be an array");
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_number(), ErrorKind::ParseError, where + " must be numeric");
    v[static_cast<int>(i)] = j[i].get<double>();
  }
  return v;
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) rows.push_back(vec_to_json(m.row(i).transpose()));
  return rows;
}

Mat mat_from_json(const json& j, const std::string& where) {
  require(j.is_array() && !j.empty(), ErrorKind::ParseError, where + " must be a non-empty array");
  Vec first = vec_from_json(j[0], where);
  Mat m(j.size(), first.size());
  m.row(0) = first.transpose();
  for (std::size_t i = 1; i < j.size(); ++i) {
    Vec row = vec_from_json(j[i], where);
    require(row.size() == first.size(), ErrorKind::ParseError, where + " rows are ragged");
    m.row(static_cast<int>(i)) = row.transpose();
  }
  return m;
}

json model_to_json(const models::ModelSpec& m) {
  json j;
  j["family"] = m.name;
  if (m.name == "gaussian") {
    j["d"] = m.d;
    // recover the scale from the likelihood at a unit displacement
    Vec zero = Vec::Zero(m.d), one = Vec::Zero(m.d);
    one[0] = 1.0;
    const double scale = -0.5 / (m.log_lik(one, zero) - m.log_lik(zero, zero));
    j["obs_scale"] = scale;
  } else if (m.name == "lds") {
    j["a"] = mat_to_json(m.transition->a);
    j["b"] = mat_to_json(m.transition->b);
    j["sigma1"] = mat_to_json(m.transition->sigma1);
    j["sigma2"] = mat_to_json(m.transition->sigma2);
  } else if (m.name == "blr") {
    fail(ErrorKind::ConfigError, "blr tasks serialize their dataset via the task writer");
  }
  return j;
}

models::ModelSpec model_from_json(const json& j) {
  require(j.contains("family"), ErrorKind::ParseError, "model needs a family");
  const std::string family = j.at("family").get<std::string>();
  if (family == "gaussian") {
    check_keys(j, {"family", "d", "obs_scale"}, "model");
    return models::mvn_model(j.at("d").get<int>(), j.at("obs_scale").get<double>());
  }
  if (family == "gmm") {
    check_keys(j, {"family"}, "model");
    return models::gmm_model();
  }
  if (family == "lds") {
    check_keys(j, {"family", "a", "b", "sigma1", "sigma2"}, "model");
    return models::lds_model(mat_from_json(j.at("a"), "model.a"),
                             mat_from_json(j.at("b"), "model.b"),
                             mat_from_json(j.at("sigma1"), "model.sigma1"),
                             mat_from_json(j.at("sigma2"), "model.sigma2"));
  }
  if (family == "blr") {
    check_keys(j, {"family", "features", "labels"}, "model");
    models::Dataset data;
    data.features = mat_from_json(j.at("features"), "model.features");
    data.labels = vec_from_json(j.at("labels"), "model.labels");
    require(data.labels.size() == data.features.rows(), ErrorKind::ParseError,
            "labels/features length mismatch");
    return models::blr_model(data);
  }
  fail(ErrorKind::ConfigError, "unknown model family '" + family + "'");
}

json blr_model_to_json(const std::vector<std::vector<Vec>>& obs) {
  // A BLR task's dataset rows are exactly its observations; store those.
  json j;
  j["family"] = "blr";
  std::vector<Vec> flat;
  for (const auto& batch : obs) flat.insert(flat.end(), batch.begin(), batch.end());
  Mat features(flat.size(), flat.front().size() - 1);
  Vec labels(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    features.row(static_cast<int>(i)) = flat[i].head(flat[i].size() - 1).transpose();
    labels[static_cast<int>(i)] = flat[i][flat[i].size() - 1];
  }
  j["features"] = mat_to_json(features);
  j["labels"] = vec_to_json(labels);
  return j;
}

json meta_json(std::uint64_t fingerprint, std::uint64_t seed) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, fingerprint);
  json m;
  m["config_fingerprint"] = buf;
  m["seed"] = seed;
  return m;
}

std::string csv_header(std::uint64_t fingerprint, std::uint64_t seed) {
  char buf[80];
  std::snprintf(buf, sizeof(buf), "# fingerprint=%016" PRIx64 " seed=%" PRIu64 "\n", fingerprint,
                seed);
  return buf;
}

}  // namespace

json task_to_json(const tasks::InferenceTask& task) {
  json j;
  j["model"] = task.model.name == "blr" ? blr_model_to_json(task.observations)
                                        : model_to_json(task.model);
  json prior;
  if (task.prior.kind == tasks::PriorSpec::Kind::Gaussian) {
    prior["kind"] = "gaussian";
    prior["mean"] = vec_to_json(task.prior.gaussian.mean);
    prior["cov"] = mat_to_json(task.prior.gaussian.cov);
  } else {
    prior["kind"] = "kde";
    prior["particles"] = mat_to_json(task.prior.kde.particles());
    prior["bandwidth"] = task.prior.kde.bandwidth();
  }
  j["prior"] = prior;
  json batches = json::array();
  for (const auto& batch : task.observations) {
    json b = json::array();
    for (const Vec& o : batch) b.push_back(vec_to_json(o));
    batches.push_back(b);
  }
  j["observations"] = batches;
  j["seed"] = task.seed;
  return j;
}

tasks::InferenceTask task_from_json(const json& j) {
  check_keys(j, {"model", "prior", "observations", "seed"}, "task");
  tasks::InferenceTask task;
  task.model = model_from_json(j.at("model"));
  const json& prior = j.at("prior");
  const std::string kind = prior.at("kind").get<std::string>();
  if (kind == "gaussian") {
    check_keys(prior, {"kind", "mean", "cov"}, "task.prior");
    models::GaussianPosterior g{vec_from_json(prior.at("mean"), "prior.mean"),
                                mat_from_json(prior.at("cov"), "prior.cov")};
    g.validate();
    task.prior = tasks::PriorSpec::from_gaussian(std::move(g));
  } else if (kind == "kde") {
    check_keys(prior, {"kind", "particles", "bandwidth"}, "task.prior");
    task.prior = tasks::PriorSpec::from_kde(
        tasks::Kde(mat_from_json(prior.at("particles"), "prior.particles"),
                   prior.at("bandwidth").get<double>()));
  } else {
    fail(ErrorKind::ParseError, "unknown prior kind '" + kind + "'");
  }
  for (const json& b : j.at("observations")) {
    std::vector<Vec> batch;
    for (const json& o : b) batch.push_back(vec_from_json(o, "observation"));
    task.observations.push_back(std::move(batch));
  }
  task.seed = j.at("seed").get<std::uint64_t>();
  task.validate();
  return task;
}

void save_tasks(const std::vector<tasks::InferenceTask>& set, const std::string& path,
                std::uint64_t fingerprint, std::uint64_t seed) {
  json j;
  j["_meta"] = meta_json(fingerprint, seed);
  json arr = json::array();
  for (const auto& t : set) arr.push_back(task_to_json(t));
  j["tasks"] = arr;
  write_file(path, j.dump(1) + "\n");
}

std::vector<tasks::InferenceTask> load_tasks(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, "bad task file '" + path + "': " + e.what());
  }
  require(j.contains("tasks") && j.at("tasks").is_array(), ErrorKind::ParseError,
          "task file needs a 'tasks' array");
  std::vector<tasks::InferenceTask> out;
  for (const json& t : j.at("tasks")) out.push_back(task_from_json(t));
  return out;
}

void save_ensembles(const std::vector<ParticleEnsemble>& stages, const std::string& path,
                    std::uint64_t fingerprint, std::uint64_t seed) {
  json j;
  j["_meta"] = meta_json(fingerprint, seed);
  json arr = json::array();
  for (const auto& e : stages) {
    json s;
    s["stage"] = e.stage;
    s["positions"] = mat_to_json(e.positions);
    s["logdens"] = vec_to_json(e.logdens);
    arr.push_back(s);
  }
  j["stages"] = arr;
  write_file(path, j.dump(1) + "\n");
}

std::vector<ParticleEnsemble> load_ensembles(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, "bad ensemble file '" + path + "': " + e.what());
  }
  require(j.contains("stages"), ErrorKind::ParseError, "ensemble file needs a 'stages' array");
  std::vector<ParticleEnsemble> out;
  for (const json& s : j.at("stages")) {
    check_keys(s, {"stage", "positions", "logdens"}, "ensemble stage");
    ParticleEnsemble e;
    e.stage = s.at("stage").get<int>();
    e.positions = mat_from_json(s.at("positions"), "positions");
    e.logdens = vec_from_json(s.at("logdens"), "logdens");
    e.validate();
    out.push_back(std::move(e));
  }
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows,
                       std::uint64_t fingerprint, std::uint64_t seed) {
  std::string out = csv_header(fingerprint, seed) + "stage,metric,kernel,value\n";
  for (const auto& r : rows)
    out += std::to_string(r.stage) + "," + r.metric + "," + r.kernel + "," +
           format_double(r.value) + "\n";
  write_file(path, out);
}

void write_history_csv(const std::string& path, const std::vector<train::HistoryRow>& rows,
                       std::uint64_t fingerprint, std::uint64_t seed) {
  std::string out = csv_header(fingerprint, seed) + "iteration,train_loss,vali_loss\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iteration) + "," + format_double(r.train_loss) + ",";
    if (r.has_vali) out += format_double(r.vali_loss);
    out += "\n";
  }
  write_file(path, out);
}

models::Dataset load_csv_dataset(const std::string& path, int label_column) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<std::vector<double>> rows;
  int line_no = 0;
  models::Dataset data;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
        if (used != cell.size()) {
          numeric = false;
          break;
        }
        row.push_back(v);
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      // a single leading non-numeric line is a header
      require(rows.empty() && data.warnings.empty(), ErrorKind::ParseError,
              "non-numeric cell at line " + std::to_string(line_no));
      data.warnings.push_back("skipped header at line " + std::to_string(line_no));
      continue;
    }
    if (!rows.empty())
      require(row.size() == rows.front().size(), ErrorKind::ParseError,
              "ragged row at line " + std::to_string(line_no));
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), ErrorKind::ParseError, "no data rows in '" + path + "'");
  const int cols = static_cast<int>(rows.front().size());
  require(cols >= 2, ErrorKind::ParseError, "need at least one feature and a label column");
  const int label = label_column < 0 ? cols - 1 : label_column;
  require(label >= 0 && label < cols, ErrorKind::ConfigError, "label column out of range");

  const int n = static_cast<int>(rows.size());
  data.features.resize(n, cols - 1);
  data.labels.resize(n);
  bool zero_one = false;
  for (int i = 0; i < n; ++i) {
    int fj = 0;
    for (int j = 0; j < cols; ++j) {
      if (j == label) continue;
      data.features(i, fj++) = rows[i][static_cast<std::size_t>(j)];
    }
    double y = rows[i][static_cast<std::size_t>(label)];
    if (y == 0.0) {
      y = -1.0;
      zero_one = true;
    } else {
      require(y == 1.0 || y == -1.0, ErrorKind::BadLabel,
              "label " + format_double(y) + " at data row " + std::to_string(i + 1) +
                  " is not in {-1,0,+1}");
    }
    data.labels[i] = y;
  }
  if (zero_one) data.warnings.push_back("labels {0,1} mapped to {-1,+1}");
  return data;
}

// ---- run configuration ----

RunConfig RunConfig::from_file(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::ConfigError, "bad config file '" + path + "': " + e.what());
  }
  return from_json(j);
}

RunConfig RunConfig::from_json(const json& j) {
  check_keys(j, {"seed", "tasks", "dataset", "flow", "integrator", "train", "eval", "baselines"},
             "config");
  RunConfig cfg;
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();

  if (j.contains("tasks")) {
    const json& t = j.at("tasks");
    check_keys(t,
               {"family", "count", "stages", "batch", "d", "obs_scale", "kde_prior_fraction",
                "prior_progress_max", "progress_truth_std", "truth_from_prior_fraction", "prior_mean_jitter",
                "kde_prior_particles", "lds_noise", "rotation_range_deg", "blr_synth_count"},
               "tasks");
    auto& g = cfg.task_gen;
    if (t.contains("family")) g.family = t.at("family").get<std::string>();
    if (t.contains("count")) g.count = t.at("count").get<int>();
    if (t.contains("stages")) g.stages = t.at("stages").get<int>();
    if (t.contains("batch")) g.batch = t.at("batch").get<int>();
    if (t.contains("d")) g.d = t.at("d").get<int>();
    if (t.contains("obs_scale")) g.obs_scale = t.at("obs_scale").get<double>();
    if (t.contains("kde_prior_fraction"))
      g.kde_prior_fraction = t.at("kde_prior_fraction").get<double>();
    if (t.contains("prior_progress_max"))
      g.prior_progress_max = t.at("prior_progress_max").get<int>();
    if (t.contains("progress_truth_std"))
      g.progress_truth_std = t.at("progress_truth_std").get<double>();
    if (t.contains("truth_from_prior_fraction"))
      g.truth_from_prior_fraction = t.at("truth_from_prior_fraction").get<double>();
    if (t.contains("prior_mean_jitter")) g.prior_mean_jitter = t.at("prior_mean_jitter").get<double>();
    if (t.contains("kde_prior_particles"))
      g.kde_prior_particles = t.at("kde_prior_particles").get<int>();
    if (t.contains("lds_noise")) g.lds_noise = t.at("lds_noise").get<double>();
    if (t.contains("rotation_range_deg"))
      g.rotation_range = t.at("rotation_range_deg").get<double>() * M_PI / 180.0;
    if (t.contains("blr_synth_count")) g.blr_synth_count = t.at("blr_synth_count").get<int>();
  }

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, {"csv", "label_column", "pca_k"}, "dataset");
    if (d.contains("csv")) cfg.dataset_csv = d.at("csv").get<std::string>();
    if (d.contains("label_column")) cfg.dataset_label_column = d.at("label_column").get<int>();
    if (d.contains("pca_k")) cfg.pca_k = d.at("pca_k").get<int>();
  }

  if (j.contains("flow")) {
    const json& f = j.at("flow");
    check_keys(f, {"e_x", "e_o", "phi_hidden", "g_hidden", "gated_hidden", "k", "obs_input"},
               "flow");
    auto& fl = cfg.flow;
    if (f.contains("e_x")) fl.e_x = f.at("e_x").get<int>();
    if (f.contains("e_o")) fl.e_o = f.at("e_o").get<int>();
    if (f.contains("phi_hidden")) fl.phi_hidden = f.at("phi_hidden").get<int>();
    if (f.contains("g_hidden")) fl.g_hidden = f.at("g_hidden").get<int>();
    if (f.contains("gated_hidden")) fl.gated_hidden = f.at("gated_hidden").get<int>();
    if (f.contains("k")) fl.k = f.at("k").get<int>();
    if (f.contains("obs_input")) {
      const std::string v = f.at("obs_input").get<std::string>();
      if (v == "raw") fl.obs_input = flownet::ObsInput::Raw;
      else if (v == "grad_loglik") fl.obs_input = flownet::ObsInput::GradLogLik;
      else fail(ErrorKind::ConfigError, "unknown obs_input '" + v + "'");
    }
  }

  if (j.contains("integrator")) {
    const json& i = j.at("integrator");
    check_keys(i, {"method", "steps", "t0", "t1"}, "integrator");
    if (i.contains("method"))
      cfg.integrator.method = ode::method_from_string(i.at("method").get<std::string>());
    if (i.contains("steps")) cfg.integrator.steps = i.at("steps").get<int>();
    if (i.contains("t0")) cfg.integrator.t0 = i.at("t0").get<double>();
    if (i.contains("t1")) cfg.integrator.t1 = i.at("t1").get<double>();
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t,
               {"iterations", "learning_rate", "optimizer", "beta1", "beta2", "adam_eps",
                "validation_interval", "gradient_method", "particles", "clip_norm"},
               "train");
    auto& tr = cfg.train;
    if (t.contains("iterations")) tr.iterations = t.at("iterations").get<int>();
    if (t.contains("learning_rate")) tr.learning_rate = t.at("learning_rate").get<double>();
    if (t.contains("optimizer")) tr.optimizer = t.at("optimizer").get<std::string>();
    if (t.contains("beta1")) tr.beta1 = t.at("beta1").get<double>();
    if (t.contains("beta2")) tr.beta2 = t.at("beta2").get<double>();
    if (t.contains("adam_eps")) tr.adam_eps = t.at("adam_eps").get<double>();
    if (t.contains("validation_interval"))
      tr.validation_interval = t.at("validation_interval").get<int>();
    if (t.contains("gradient_method"))
      tr.gradient_method = t.at("gradient_method").get<std::string>();
    if (t.contains("particles")) tr.particles = t.at("particles").get<int>();
    if (t.contains("clip_norm")) tr.clip_norm = t.at("clip_norm").get<double>();
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"metrics", "kernels", "truth_samples", "rbf_lengthscale", "eval_seed"}, "eval");
    if (e.contains("metrics")) cfg.eval.metrics = e.at("metrics").get<std::vector<std::string>>();
    if (e.contains("kernels")) cfg.eval.kernels = e.at("kernels").get<std::vector<std::string>>();
    if (e.contains("truth_samples")) cfg.eval.truth_samples = e.at("truth_samples").get<int>();
    if (e.contains("rbf_lengthscale"))
      cfg.eval.rbf_lengthscale = e.at("rbf_lengthscale").get<double>();
    if (e.contains("eval_seed")) cfg.eval.eval_seed = e.at("eval_seed").get<std::uint64_t>();
  }

  if (j.contains("baselines")) {
    const json& b = j.at("baselines");
    check_keys(
        b, {"algo", "particles", "ess_threshold", "sgld_eps", "sgld_steps", "sgld_burnin_fraction"},
        "baselines");
    if (b.contains("algo")) cfg.baselines.algo = b.at("algo").get<std::string>();
    if (b.contains("particles")) cfg.baselines.particles = b.at("particles").get<int>();
    if (b.contains("ess_threshold"))
      cfg.baselines.ess_threshold = b.at("ess_threshold").get<double>();
    if (b.contains("sgld_eps")) cfg.baselines.sgld_eps = b.at("sgld_eps").get<double>();
    if (b.contains("sgld_steps")) cfg.baselines.sgld_steps = b.at("sgld_steps").get<int>();
    if (b.contains("sgld_burnin_fraction"))
      cfg.baselines.sgld_burnin_fraction = b.at("sgld_burnin_fraction").get<double>();
  }

  cfg.task_gen.validate();
  cfg.train.validate();
  cfg.integrator.validate();
  return cfg;
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  json t;
  t["family"] = task_gen.family;
  t["count"] = task_gen.count;
  t["stages"] = task_gen.stages;
  t["batch"] = task_gen.batch;
  t["d"] = task_gen.d;
  t["obs_scale"] = task_gen.obs_scale;
  t["kde_prior_fraction"] = task_gen.kde_prior_fraction;
  t["prior_progress_max"] = task_gen.prior_progress_max;
  t["progress_truth_std"] = task_gen.progress_truth_std;
  t["truth_from_prior_fraction"] = task_gen.truth_from_prior_fraction;
  t["prior_mean_jitter"] = task_gen.prior_mean_jitter;
  t["kde_prior_particles"] = task_gen.kde_prior_particles;
  t["lds_noise"] = task_gen.lds_noise;
  t["rotation_range_deg"] = task_gen.rotation_range * 180.0 / M_PI;
  t["blr_synth_count"] = task_gen.blr_synth_count;
  j["tasks"] = t;
  json d;
  d["csv"] = dataset_csv;
  d["label_column"] = dataset_label_column;
  d["pca_k"] = pca_k;
  j["dataset"] = d;
  json f;
  f["e_x"] = flow.e_x;
  f["e_o"] = flow.e_o;
  f["phi_hidden"] = flow.phi_hidden;
  f["g_hidden"] = flow.g_hidden;
  f["gated_hidden"] = flow.gated_hidden;
  f["k"] = flow.k;
  f["obs_input"] = flow.obs_input == flownet::ObsInput::Raw ? "raw" : "grad_loglik";
  j["flow"] = f;
  json i;
  i["method"] = ode::to_string(integrator.method);
  i["steps"] = integrator.steps;
  i["t0"] = integrator.t0;
  i["t1"] = integrator.t1;
  j["integrator"] = i;
  json tr;
  tr["iterations"] = train.iterations;
  tr["learning_rate"] = train.learning_rate;
  tr["optimizer"] = train.optimizer;
  tr["beta1"] = train.beta1;
  tr["beta2"] = train.beta2;
  tr["adam_eps"] = train.adam_eps;
  tr["validation_interval"] = train.validation_interval;
  tr["gradient_method"] = train.gradient_method;
  tr["particles"] = train.particles;
  tr["clip_norm"] = train.clip_norm;
  j["train"] = tr;
  json e;
  e["metrics"] = eval.metrics;
  e["kernels"] = eval.kernels;
  e["truth_samples"] = eval.truth_samples;
  e["rbf_lengthscale"] = eval.rbf_lengthscale;
  e["eval_seed"] = eval.eval_seed;
  j["eval"] = e;
  json b;
  b["algo"] = baselines.algo;
  b["particles"] = baselines.particles;
  b["ess_threshold"] = baselines.ess_threshold;
  b["sgld_eps"] = baselines.sgld_eps;
  b["sgld_steps"] = baselines.sgld_steps;
  b["sgld_burnin_fraction"] = baselines.sgld_burnin_fraction;
  j["baselines"] = b;
  return j;
}

std::uint64_t RunConfig::fingerprint() const { return fnv1a64(to_json().dump()); }

flownet::FlowDims RunConfig::resolved_flow_dims() const {
  flownet::FlowDims dims = flow;
  if (task_gen.family == "gaussian") {
    dims.d = task_gen.d;
    dims.obs_dim = task_gen.d;
  } else if (task_gen.family == "gmm") {
    dims.d = 2;
    dims.obs_dim = 1;
  } else if (task_gen.family == "lds") {
    dims.d = task_gen.d;
    dims.obs_dim = task_gen.d;
  } else {  // blr observations are [feature..., label]
    dims.d = pca_k > 0 ? pca_k : task_gen.d;
    dims.obs_dim = dims.d + 1;
  }
  return dims;
}

}  // namespace pfbr::io
