#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <random>
#include <string>

#include "lgp/model_io.hpp"

using namespace lgp;
using Catch::Matchers::ContainsSubstring;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

Dataset wave_data(Index n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-2.0, 2.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  Dataset d;
  d.x = Mat(n, 1);
  d.y = Vec(n);
  for (Index i = 0; i < n; ++i) {
    d.x(i, 0) = ux(rng);
    d.y(i) = std::sin(2.0 * d.x(i, 0)) + noise(rng);
  }
  d.feature_names = {"x0"};
  d.target_name = "y";
  return d;
}

TrainConfig small_config(bool with_net) {
  TrainConfig cfg;
  cfg.base_kernel = with_net ? "sm" : "rbf";
  cfg.q = 2;
  cfg.grid_nodes = {24};
  cfg.arch = with_net ? std::vector<Index>{1, 8, 1} : std::vector<Index>{};
  cfg.pretrain.epochs = 10;
  cfg.pretrain.seed = 5;
  cfg.joint.iterations = 5;
  cfg.joint.theta_warmup = 3;
  cfg.joint.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("saved model reloads to identical predictions") {
  const Dataset d = wave_data(40, 11);
  const bool with_net = GENERATE(false, true);
  const TrainedModel tm = train_pipeline(d, small_config(with_net));

  TempFile f("lgp_model_roundtrip.json");
  save_model(f.path, tm);
  const TrainedModel back = load_model(f.path);

  REQUIRE(back.gp.log_noise == tm.gp.log_noise);
  REQUIRE(back.gp.strategy == tm.gp.strategy);
  REQUIRE(back.stats.y_mean == tm.stats.y_mean);
  REQUIRE(back.stats.y_std == tm.stats.y_std);
  REQUIRE(back.y.size() == tm.y.size());
  REQUIRE(kernel_pack(back.gp.base) == kernel_pack(tm.gp.base));
  if (with_net) {
    REQUIRE(back.gp.arch.has_value());
    REQUIRE(back.gp.arch->layer_sizes == tm.gp.arch->layer_sizes);
    REQUIRE(mlp_pack(*back.gp.net) == mlp_pack(*tm.gp.net));
  } else {
    REQUIRE_FALSE(back.gp.arch.has_value());
  }
  REQUIRE(back.report.final_mll == tm.report.final_mll);
  REQUIRE(back.report.joint_mll == tm.report.joint_mll);

  Mat xstar(7, 1);
  for (Index i = 0; i < 7; ++i) xstar(i, 0) = -1.8 + 0.55 * static_cast<double>(i);
  const Prediction a = predict_raw(tm, xstar, true);
  const Prediction b = predict_raw(back, xstar, true);
  for (Index i = 0; i < 7; ++i) {
    REQUIRE_THAT(b.mean(i), Catch::Matchers::WithinAbs(a.mean(i), 1e-12));
    REQUIRE_THAT(b.variance(i), Catch::Matchers::WithinAbs(a.variance(i), 1e-12));
  }
}

TEST_CASE("second round trip is textually stable") {
  const Dataset d = wave_data(30, 3);
  const TrainedModel tm = train_pipeline(d, small_config(false));
  const auto j1 = model_to_json(tm);
  const TrainedModel back = model_from_json(j1);
  const auto j2 = model_to_json(back);
  REQUIRE(j1.dump() == j2.dump());
}

TEST_CASE("major version mismatch is refused") {
  const Dataset d = wave_data(30, 4);
  const TrainedModel tm = train_pipeline(d, small_config(false));
  auto j = model_to_json(tm);

  SECTION("newer major") {
    j["format_version"] = "2.0";
    REQUIRE_THROWS_AS(model_from_json(j), VersionError);
    REQUIRE_THROWS_WITH(model_from_json(j), ContainsSubstring("2.0"));
  }
  SECTION("same major, newer minor loads") {
    j["format_version"] = "1.9";
    REQUIRE_NOTHROW(model_from_json(j));
  }
  SECTION("garbage version string") {
    j["format_version"] = "banana";
    REQUIRE_THROWS_AS(model_from_json(j), VersionError);
  }
}

TEST_CASE("malformed model files produce loader errors") {
  SECTION("not JSON at all") {
    TempFile f("lgp_model_bad.json");
    std::ofstream(f.path) << "this is not json {";
    REQUIRE_THROWS_AS(load_model(f.path), IoError);
  }
  SECTION("missing file") {
    REQUIRE_THROWS_AS(load_model("/tmp/lgp_no_such_model.json"), IoError);
  }
  SECTION("missing field is named") {
    const Dataset d = wave_data(30, 6);
    const TrainedModel tm = train_pipeline(d, small_config(false));
    auto j = model_to_json(tm);
    j.erase("kernel");
    REQUIRE_THROWS_WITH(model_from_json(j), ContainsSubstring("kernel"));
  }
  SECTION("mismatched training arrays") {
    const Dataset d = wave_data(30, 7);
    const TrainedModel tm = train_pipeline(d, small_config(false));
    auto j = model_to_json(tm);
    j["train_y"].erase(0);
    REQUIRE_THROWS_AS(model_from_json(j), IoError);
  }
}
