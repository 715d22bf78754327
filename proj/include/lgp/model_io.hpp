#pragma once

// Model file (de)serialization: a single JSON document holding the network,
// kernel and noise parameters, the lattice spec, solver options, the
// standardization stats, and the standardized training set. Loading rebuilds
// the interpolation caches and the prediction state, so a loaded model
// predicts identically to the one that was saved.
//
// Requires the vendored nlohmann/json single header on the include path.

#include <json.hpp>

#include <cctype>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lgp/train.hpp"

namespace lgp {

// The file refuses to load under a reader with a different major version.
struct VersionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kModelFormatVersion = "1.0";

namespace detail {

using nlohmann::json;

inline json to_json(const Vec& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json to_json(const Mat& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(to_json(Vec(m.row(i))));
  return rows;
}

inline Vec vec_from_json(const json& a, const char* what) {
  if (!a.is_array()) throw IoError(std::string("model file: ") + what + " must be an array");
  Vec v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw IoError(std::string("model file: ") + what + " holds a non-number");
    v(static_cast<Index>(i)) = a[i].get<double>();
  }
  return v;
}

inline Mat mat_from_json(const json& a, const char* what) {
  if (!a.is_array()) throw IoError(std::string("model file: ") + what + " must be an array of rows");
  const Index r = static_cast<Index>(a.size());
  if (r == 0) return Mat(0, 0);
  const Vec first = vec_from_json(a[0], what);
  Mat m(r, first.size());
  m.row(0) = first;
  for (Index i = 1; i < r; ++i) {
    const Vec row = vec_from_json(a[static_cast<std::size_t>(i)], what);
    if (row.size() != m.cols())
      throw IoError(std::string("model file: ") + what + " rows have unequal lengths");
    m.row(i) = row;
  }
  return m;
}

// json::at with errors rephrased as loader errors naming the field.
inline const json& field(const json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end())
    throw IoError(std::string("model file: missing field \"") + name + "\"");
  return *it;
}

inline int parse_major(const std::string& version) {
  std::size_t dot = version.find('.');
  const std::string head = dot == std::string::npos ? version : version.substr(0, dot);
  if (head.empty()) throw VersionError("model file: malformed format_version \"" + version + "\"");
  for (char c : head)
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw VersionError("model file: malformed format_version \"" + version + "\"");
  return std::stoi(head);
}

}  // namespace detail

inline nlohmann::json model_to_json(const TrainedModel& tm) {
  using detail::to_json;
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;

  const KissGpModel& gp = tm.gp;
  j["strategy"] = gp.strategy == KuuStrategy::kron ? "kron" : "bttb";
  j["log_noise"] = gp.log_noise;

  if (std::holds_alternative<RbfParams>(gp.base)) {
    const auto& p = std::get<RbfParams>(gp.base);
    j["kernel"] = {{"type", "rbf"},
                   {"log_lengthscale", p.log_lengthscale},
                   {"log_outputscale", p.log_outputscale}};
  } else {
    const auto& p = std::get<SmParams>(gp.base);
    j["kernel"] = {{"type", "sm"},
                   {"log_weights", to_json(p.log_weights)},
                   {"log_bandwidths", to_json(p.log_bandwidths)},
                   {"frequencies", to_json(p.frequencies)}};
  }

  if (gp.arch) {
    nlohmann::json net;
    net["layer_sizes"] = gp.arch->layer_sizes;
    net["weights"] = nlohmann::json::array();
    net["biases"] = nlohmann::json::array();
    for (std::size_t l = 0; l < gp.net->weights.size(); ++l) {
      net["weights"].push_back(to_json(gp.net->weights[l]));
      net["biases"].push_back(to_json(gp.net->biases[l]));
    }
    j["network"] = std::move(net);
  } else {
    j["network"] = nullptr;
  }

  j["grid"] = nlohmann::json::array();
  for (const auto& ax : gp.grid.axes)
    j["grid"].push_back({{"count", ax.count}, {"lo", ax.lo}, {"hi", ax.hi}});

  j["options"] = {
      {"cg_tolerance", gp.opts.cg.tol},
      {"cg_max_iters", gp.opts.cg.max_iters},
      {"probe_count", gp.opts.probe_count},
      {"probe_seed", gp.opts.probe_seed},
      {"trace", gp.opts.trace == TraceMode::hutchinson ? "hutchinson" : "exact_basis"},
      {"logdet", gp.opts.logdet == LogDetMode::scaled_eig ? "scaled_eig" : "exact_dense"},
      {"eig_cap", gp.opts.eig_cap},
      {"dense_cap", gp.opts.dense_cap},
      {"freeze_interp", gp.opts.freeze_interp},
  };

  j["standardization"] = {{"x_mean", to_json(tm.stats.x_mean)},
                          {"x_std", to_json(tm.stats.x_std)},
                          {"y_mean", tm.stats.y_mean},
                          {"y_std", tm.stats.y_std}};

  // Standardized training set; prediction state is rebuilt from it on load.
  j["train_x"] = to_json(gp.x);
  j["train_y"] = to_json(tm.y);

  j["report"] = {{"final_mll", tm.report.final_mll},
                 {"initial_joint_mll", tm.report.initial_joint_mll},
                 {"pretrain_seconds", tm.report.pretrain_seconds},
                 {"joint_seconds", tm.report.joint_seconds},
                 {"grid_rebuilds", tm.report.grid_rebuilds},
                 {"grid_extensions", tm.report.grid_extensions},
                 {"cg_iterations", tm.report.cg_iterations},
                 {"pretrain_loss", tm.report.pretrain_loss},
                 {"warmup_mll", tm.report.warmup_mll},
                 {"joint_mll", tm.report.joint_mll}};
  return j;
}

inline TrainedModel model_from_json(const nlohmann::json& j) {
  using detail::field;
  using detail::mat_from_json;
  using detail::vec_from_json;

  if (!j.is_object()) throw IoError("model file: top level must be an object");
  const auto& ver = field(j, "format_version");
  if (!ver.is_string()) throw VersionError("model file: format_version must be a string");
  const std::string version = ver.get<std::string>();
  const int major = detail::parse_major(version);
  const int ours = detail::parse_major(kModelFormatVersion);
  if (major != ours)
    throw VersionError("model file: format version " + version +
                       " is not readable by this build (supports " +
                       std::to_string(ours) + ".x)");

  TrainedModel tm;
  KissGpModel& gp = tm.gp;

  const std::string strategy = field(j, "strategy").get<std::string>();
  if (strategy == "kron")
    gp.strategy = KuuStrategy::kron;
  else if (strategy == "bttb")
    gp.strategy = KuuStrategy::bttb;
  else
    throw IoError("model file: unknown strategy \"" + strategy + "\"");
  gp.log_noise = field(j, "log_noise").get<double>();

  const auto& kj = field(j, "kernel");
  const std::string ktype = field(kj, "type").get<std::string>();
  if (ktype == "rbf") {
    gp.base = RbfParams{field(kj, "log_lengthscale").get<double>(),
                        field(kj, "log_outputscale").get<double>()};
  } else if (ktype == "sm") {
    SmParams p;
    p.log_weights = vec_from_json(field(kj, "log_weights"), "kernel.log_weights");
    p.log_bandwidths = mat_from_json(field(kj, "log_bandwidths"), "kernel.log_bandwidths");
    p.frequencies = mat_from_json(field(kj, "frequencies"), "kernel.frequencies");
    p.validate();
    gp.base = std::move(p);
  } else {
    throw IoError("model file: unknown kernel type \"" + ktype + "\"");
  }

  const auto& nj = field(j, "network");
  if (!nj.is_null()) {
    MlpArch arch{field(nj, "layer_sizes").get<std::vector<Index>>()};
    arch.validate();
    MlpParams params;
    const auto& ws = field(nj, "weights");
    const auto& bs = field(nj, "biases");
    if (!ws.is_array() || !bs.is_array() || ws.size() != bs.size())
      throw IoError("model file: network weights/biases layer counts disagree");
    for (std::size_t l = 0; l < ws.size(); ++l) {
      params.weights.push_back(mat_from_json(ws[l], "network.weights"));
      params.biases.push_back(vec_from_json(bs[l], "network.biases"));
    }
    params.validate_shapes(arch);
    gp.arch = std::move(arch);
    gp.net = std::move(params);
  }

  const auto& gj = field(j, "grid");
  if (!gj.is_array() || gj.empty()) throw IoError("model file: grid must be a non-empty array");
  for (const auto& aj : gj)
    gp.grid.axes.push_back(GridAxis{field(aj, "count").get<Index>(),
                                    field(aj, "lo").get<double>(),
                                    field(aj, "hi").get<double>()});
  gp.grid.validate();

  const auto& oj = field(j, "options");
  gp.opts.cg.tol = field(oj, "cg_tolerance").get<double>();
  gp.opts.cg.max_iters = field(oj, "cg_max_iters").get<Index>();
  gp.opts.probe_count = field(oj, "probe_count").get<Index>();
  gp.opts.probe_seed = field(oj, "probe_seed").get<std::uint64_t>();
  const std::string trace = field(oj, "trace").get<std::string>();
  if (trace == "hutchinson")
    gp.opts.trace = TraceMode::hutchinson;
  else if (trace == "exact_basis")
    gp.opts.trace = TraceMode::exact_basis;
  else
    throw IoError("model file: unknown trace mode \"" + trace + "\"");
  const std::string logdet = field(oj, "logdet").get<std::string>();
  if (logdet == "scaled_eig")
    gp.opts.logdet = LogDetMode::scaled_eig;
  else if (logdet == "exact_dense")
    gp.opts.logdet = LogDetMode::exact_dense;
  else
    throw IoError("model file: unknown logdet mode \"" + logdet + "\"");
  gp.opts.eig_cap = field(oj, "eig_cap").get<Index>();
  gp.opts.dense_cap = field(oj, "dense_cap").get<Index>();
  gp.opts.freeze_interp = field(oj, "freeze_interp").get<bool>();

  const auto& sj = field(j, "standardization");
  tm.stats.x_mean = vec_from_json(field(sj, "x_mean"), "standardization.x_mean");
  tm.stats.x_std = vec_from_json(field(sj, "x_std"), "standardization.x_std");
  tm.stats.y_mean = field(sj, "y_mean").get<double>();
  tm.stats.y_std = field(sj, "y_std").get<double>();

  gp.x = mat_from_json(field(j, "train_x"), "train_x");
  tm.y = vec_from_json(field(j, "train_y"), "train_y");
  if (tm.y.size() != gp.x.rows())
    throw IoError("model file: train_x and train_y row counts disagree");

  if (j.contains("report") && j["report"].is_object()) {
    const auto& rj = j["report"];
    tm.report.final_mll = field(rj, "final_mll").get<double>();
    tm.report.initial_joint_mll = field(rj, "initial_joint_mll").get<double>();
    tm.report.pretrain_seconds = field(rj, "pretrain_seconds").get<double>();
    tm.report.joint_seconds = field(rj, "joint_seconds").get<double>();
    tm.report.grid_rebuilds = field(rj, "grid_rebuilds").get<Index>();
    tm.report.grid_extensions = field(rj, "grid_extensions").get<Index>();
    tm.report.cg_iterations = field(rj, "cg_iterations").get<Index>();
    tm.report.pretrain_loss = field(rj, "pretrain_loss").get<std::vector<double>>();
    tm.report.warmup_mll = field(rj, "warmup_mll").get<std::vector<double>>();
    tm.report.joint_mll = field(rj, "joint_mll").get<std::vector<double>>();
  }

  kiss_refresh(gp);
  precompute_predictor(gp, tm.y);
  return tm;
}

inline void save_model(const std::string& path, const TrainedModel& tm) {
  std::ofstream out(path);
  if (!out) throw IoError("save_model: cannot open " + path + " for writing");
  out << model_to_json(tm).dump() << '\n';
  if (!out) throw IoError("save_model: write to " + path + " failed");
}

inline TrainedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_model: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("load_model: " + path + " is not valid JSON: " + e.what());
  }
  try {
    return model_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_model: " + path + " is malformed: " + e.what());
  }
}

}  // namespace lgp
