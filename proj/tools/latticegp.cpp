// latticegp: train/predict/eval/gen front end for the lattice GP library.
//
// Exit codes: 0 success, 2 file/io failure, 3 configuration or usage error,
// 4 model format version mismatch, 1 numeric failure. Failures print one
// machine-readable line to stderr: "error: category=<cat>: <message>".

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lgp/model_io.hpp"

namespace {

using namespace lgp;

void emit_error(const char* category, const std::string& message) {
  std::cerr << "error: category=" << category << ": " << message << "\n";
}

// ---------------------------------------------------------------------------
// Config file

// Rejects unknown keys so typos fail loudly instead of silently using
// defaults; the error names the offending key.
void check_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                const std::string& scope) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const auto& k : known) ok = ok || k == key;
    if (!ok)
      throw ContractError("config: unknown key \"" +
                          (scope.empty() ? key : scope + "." + key) + "\"");
  }
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ContractError("config: " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ContractError("config: top level must be an object");

  TrainConfig cfg;
  try {
    check_keys(j, {"base_kernel", "q", "grid_nodes", "grid_padding", "standardize",
                   "arch", "pretrain", "joint"},
               "");
    if (j.contains("base_kernel")) cfg.base_kernel = j["base_kernel"].get<std::string>();
    if (j.contains("q")) cfg.q = j["q"].get<Index>();
    if (j.contains("grid_nodes")) cfg.grid_nodes = j["grid_nodes"].get<std::vector<Index>>();
    if (j.contains("grid_padding")) cfg.grid_padding = j["grid_padding"].get<double>();
    if (j.contains("standardize")) cfg.standardize = j["standardize"].get<bool>();
    if (j.contains("arch")) cfg.arch = j["arch"].get<std::vector<Index>>();
    if (j.contains("pretrain")) {
      const auto& p = j["pretrain"];
      check_keys(p, {"epochs", "batch_size", "learning_rate", "seed"}, "pretrain");
      if (p.contains("epochs")) cfg.pretrain.epochs = p["epochs"].get<Index>();
      if (p.contains("batch_size")) cfg.pretrain.batch_size = p["batch_size"].get<Index>();
      if (p.contains("learning_rate"))
        cfg.pretrain.learning_rate = p["learning_rate"].get<double>();
      if (p.contains("seed")) cfg.pretrain.seed = p["seed"].get<std::uint64_t>();
    }
    if (j.contains("joint")) {
      const auto& p = j["joint"];
      check_keys(p,
                 {"iterations", "learning_rate", "probe_count", "seed",
                  "theta_warmup", "rebuild_threshold", "freeze_interp"},
                 "joint");
      if (p.contains("iterations")) cfg.joint.iterations = p["iterations"].get<Index>();
      if (p.contains("learning_rate"))
        cfg.joint.learning_rate = p["learning_rate"].get<double>();
      if (p.contains("probe_count")) cfg.joint.probe_count = p["probe_count"].get<Index>();
      if (p.contains("seed")) cfg.joint.seed = p["seed"].get<std::uint64_t>();
      if (p.contains("theta_warmup")) cfg.joint.theta_warmup = p["theta_warmup"].get<Index>();
      if (p.contains("rebuild_threshold"))
        cfg.joint.rebuild_threshold = p["rebuild_threshold"].get<double>();
      if (p.contains("freeze_interp")) cfg.joint.freeze_interp = p["freeze_interp"].get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("config: " + path + ": " + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Feature-only CSV (prediction inputs need no target column)

struct FeatureTable {
  Mat x;
  std::vector<std::string> names;
};

FeatureTable load_feature_csv(const std::string& path, const std::string& target_column) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw IoError(path + " is empty");
  const auto cols = lgp::detail::split_line(header, ',');

  Index target = -1;
  for (std::size_t c = 0; c < cols.size(); ++c)
    if (lgp::detail::trim(cols[c]) == target_column) target = static_cast<Index>(c);

  FeatureTable t;
  for (std::size_t c = 0; c < cols.size(); ++c)
    if (static_cast<Index>(c) != target) t.names.push_back(lgp::detail::trim(cols[c]));

  std::vector<double> flat;
  Index rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (lgp::detail::trim(line).empty()) continue;
    const auto cells = lgp::detail::split_line(line, ',');
    if (cells.size() != cols.size()) continue;
    std::vector<double> vals;
    bool ok = true;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (static_cast<Index>(c) == target) continue;
      double v;
      ok = ok && lgp::detail::parse_cell(cells[c], v);
      vals.push_back(v);
    }
    if (!ok) continue;
    flat.insert(flat.end(), vals.begin(), vals.end());
    ++rows;
  }
  if (rows == 0) throw IoError(path + " holds no usable rows");
  const Index d = static_cast<Index>(t.names.size());
  t.x.resize(rows, d);
  for (Index i = 0; i < rows; ++i)
    for (Index c = 0; c < d; ++c)
      t.x(i, c) = flat[static_cast<std::size_t>(i * d + c)];
  return t;
}

void check_width(const TrainedModel& tm, Index got) {
  if (got != tm.stats.x_mean.size())
    throw ContractError("data width " + std::to_string(got) +
                        " does not match the model's feature count " +
                        std::to_string(tm.stats.x_mean.size()));
}

// ---------------------------------------------------------------------------
// Commands

struct CommonFlags {
  std::string config_path, data_path, model_path, out_path;
  std::string target_column = "y";
  std::optional<std::uint64_t> seed;
  std::string base_kernel;
  Index q = 0;
  std::vector<Index> grid_nodes;
  bool no_joint = false;
  bool freeze_interp = false;
  // gen
  Index n = 1000;
  double noise_sd = 0.05;
};

int cmd_gen(const CommonFlags& f) {
  const Dataset d = gen_step(f.n, f.noise_sd, f.seed.value_or(0));
  save_csv(f.out_path, d);
  std::cout << "rows: " << d.n() << "\nfile: " << f.out_path << "\n";
  return 0;
}

int cmd_train(const CommonFlags& f) {
  TrainConfig cfg;
  if (!f.config_path.empty()) cfg = parse_config_file(f.config_path);
  if (!f.base_kernel.empty()) cfg.base_kernel = f.base_kernel;
  if (f.q > 0) cfg.q = f.q;
  if (!f.grid_nodes.empty()) cfg.grid_nodes = f.grid_nodes;
  if (f.seed) {
    cfg.pretrain.seed = *f.seed;
    cfg.joint.seed = *f.seed;
  }
  if (f.no_joint) cfg.joint.iterations = 0;
  if (f.freeze_interp) cfg.joint.freeze_interp = true;

  const auto [data, skipped] = load_csv(f.data_path, f.target_column);
  if (skipped > 0)
    std::cerr << "warning: skipped " << skipped << " malformed rows\n";

  const TrainedModel tm = train_pipeline(data, cfg);
  save_model(f.out_path, tm);

  const auto& r = tm.report;
  std::cout << "rows: " << data.n() << "\n";
  if (!r.pretrain_loss.empty()) {
    std::cout << "pretrain_epochs: " << r.pretrain_loss.size() << "\n"
              << "pretrain_final_loss: " << r.pretrain_loss.back() << "\n";
  }
  std::cout << "initial_joint_mll: " << r.initial_joint_mll << "\n"
            << "final_mll: " << r.final_mll << "\n"
            << "pretrain_seconds: " << r.pretrain_seconds << "\n"
            << "joint_seconds: " << r.joint_seconds << "\n"
            << "grid_rebuilds: " << r.grid_rebuilds << "\n"
            << "grid_extensions: " << r.grid_extensions << "\n"
            << "cg_iterations: " << r.cg_iterations << "\n"
            << "model_file: " << f.out_path << "\n";
  return 0;
}

int cmd_predict(const CommonFlags& f) {
  const TrainedModel tm = load_model(f.model_path);
  const FeatureTable t = load_feature_csv(f.data_path, f.target_column);
  check_width(tm, t.x.cols());

  const Prediction p = predict_raw(tm, t.x, true);
  const double noise_raw = tm.stats.y_std * tm.stats.y_std * tm.gp.noise_var();

  const Index n = t.x.rows(), d = t.x.cols();
  Mat out(n, d + 4);
  out.leftCols(d) = t.x;
  out.col(d) = p.mean;
  out.col(d + 1) = p.variance;
  const Vec half = (1.96 * (p.variance.array() + noise_raw).sqrt()).matrix();
  out.col(d + 2) = p.mean - half;
  out.col(d + 3) = p.mean + half;

  std::vector<std::string> columns = t.names;
  columns.insert(columns.end(), {"mean", "variance", "lower95", "upper95"});
  save_csv(f.out_path, columns, out);
  std::cout << "rows: " << n << "\nfile: " << f.out_path << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& f) {
  const TrainedModel tm = load_model(f.model_path);
  const auto [data, skipped] = load_csv(f.data_path, f.target_column);
  if (skipped > 0)
    std::cerr << "warning: skipped " << skipped << " malformed rows\n";
  check_width(tm, data.dim());

  const auto t0 = std::chrono::steady_clock::now();
  const Prediction p = predict_raw(tm, data.x, true);
  const double noise_raw = tm.stats.y_std * tm.stats.y_std * tm.gp.noise_var();
  const Vec obs_var = (p.variance.array() + noise_raw).matrix();
  const EvalReport r = evaluate_predictions(p.mean, obs_var, data.y);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::cout << "n: " << r.n << "\n"
            << "rmse: " << r.rmse << "\n"
            << "nlpd: " << r.nlpd << "\n"
            << "coverage95: " << r.coverage95 << "\n"
            << "seconds: " << seconds << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lattice-interpolated deep kernel GP regression"};
  app.require_subcommand(1);
  CommonFlags f;

  auto* gen = app.add_subcommand("gen", "Write a synthetic step-function CSV");
  gen->add_option("--out", f.out_path, "Output CSV path")->required();
  gen->add_option("--n", f.n, "Number of rows");
  gen->add_option("--noise-sd", f.noise_sd, "Observation noise level");

  auto* train = app.add_subcommand("train", "Fit a model to a CSV");
  train->add_option("--config", f.config_path, "JSON training config");
  train->add_option("--data", f.data_path, "Training CSV")->required();
  train->add_option("--out", f.out_path, "Model file to write")->required();
  train->add_option("--base-kernel", f.base_kernel, "Base kernel")
      ->check(CLI::IsMember({"rbf", "sm"}));
  train->add_option("--q", f.q, "Spectral mixture components");
  train->add_option("--grid-nodes", f.grid_nodes, "Nodes per lattice axis")
      ->delimiter(',');
  train->add_flag("--no-joint", f.no_joint,
                  "Skip the joint phase (kernel warmup only)");
  train->add_flag("--freeze-interp", f.freeze_interp,
                  "Hold interpolation weights fixed during the joint phase");

  auto* predict = app.add_subcommand("predict", "Predict onto a CSV of inputs");
  predict->add_option("--model", f.model_path, "Model file")->required();
  predict->add_option("--data", f.data_path, "Input CSV")->required();
  predict->add_option("--out", f.out_path, "Prediction CSV to write")->required();

  auto* eval = app.add_subcommand("eval", "Score a model on labeled data");
  eval->add_option("--model", f.model_path, "Model file")->required();
  eval->add_option("--data", f.data_path, "Labeled CSV")->required();

  for (auto* cmd : {gen, train, predict, eval}) {
    cmd->add_option("--seed", f.seed, "Random seed");
    cmd->add_option("--target-column", f.target_column, "Target column name");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("config", e.what());
    return 3;
  }

  try {
    if (gen->parsed()) return cmd_gen(f);
    if (train->parsed()) return cmd_train(f);
    if (predict->parsed()) return cmd_predict(f);
    return cmd_eval(f);
  } catch (const lgp::VersionError& e) {
    emit_error("version", e.what());
    return 4;
  } catch (const lgp::IoError& e) {
    emit_error("io", e.what());
    return 2;
  } catch (const lgp::ContractError& e) {
    emit_error("config", e.what());
    return 3;
  } catch (const std::exception& e) {
    emit_error("numeric", e.what());
    return 1;
  }
}
