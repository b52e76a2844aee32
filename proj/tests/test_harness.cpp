#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "topobda/cli.hpp"
#include "topobda/fit.hpp"
#include "topobda/io.hpp"
#include "topobda/scene.hpp"

using namespace topobda;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("topobda_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "topobda_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Scene, EmptyScene) {
  const Scene s = generate_scene(1, 0, 3);
  EXPECT_EQ(s.gt.size(), 0u);
  EXPECT_EQ(s.features.height(), 32u);
  EXPECT_NO_THROW(s.gt.validate());
}

TEST(Scene, Deterministic) {
  const Scene a = generate_scene(7, 5, 3), b = generate_scene(7, 5, 3);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.gt.adjacency, b.gt.adjacency);
  for (std::size_t i = 0; i < a.gt.size(); ++i) {
    EXPECT_EQ(a.gt.instances[i].ctrl.points(), b.gt.instances[i].ctrl.points());
    EXPECT_EQ(a.gt.instances[i].mask, b.gt.instances[i].mask);
  }
}

TEST(Scene, MasksAndEndpointsSelfCheck) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scene s = generate_scene(seed, 4, 3);
    for (std::size_t i = 0; i < s.gt.size(); ++i) {
      const GtInstance& g = s.gt.instances[i];
      EXPECT_GT(std::count(g.mask.begin(), g.mask.end(), 1), 0);
      const Polyline p = sample_curve(g.ctrl, kRasterSamples);
      EXPECT_EQ(p.front(), g.ctrl[0]);
      EXPECT_EQ(p.back(), g.ctrl[g.ctrl.size() - 1]);
      for (std::size_t j = 0; j < s.gt.size(); ++j)
        if (s.gt.edge(i, j)) EXPECT_EQ(g.ctrl[g.ctrl.size() - 1], s.gt.instances[j].ctrl[0]);
    }
  }
}

TEST(Rasterize, HorizontalBand) {
  const GridSpec spec{32, 32, 0.5};
  const std::size_t r = 15;
  const double y = (static_cast<double>(r) + 0.25) / 32.0;
  const auto mask = rasterize_centerline(Polyline({{0.0, y, 0.5}, {1.0, y, 0.5}}), spec, 4.0);
  for (std::size_t c = 4; c < 28; ++c)
    for (std::size_t row = 0; row < 32; ++row)
      EXPECT_EQ(mask[row * 32 + c], (row + 2 >= r && row <= r + 1) ? 1 : 0) << row << "," << c;
}

TEST(Rasterize, UnitWidthTrace) {
  const GridSpec spec{16, 16, 0.5};
  const Polyline line({{0.1, 0.1, 0.5}, {0.8, 0.6, 0.5}});
  const auto mask = rasterize_centerline(line, spec, 1.0);
  for (std::size_t row = 0; row < 16; ++row)
    for (std::size_t c = 0; c < 16; ++c) {
      const double px = c + 0.5, py = row + 0.5;
      const double ax = 1.6, ay = 1.6, bx = 12.8, by = 9.6;
      const double t = std::clamp(((px - ax) * (bx - ax) + (py - ay) * (by - ay)) /
                                      ((bx - ax) * (bx - ax) + (by - ay) * (by - ay)),
                                  0.0, 1.0);
      const double d = std::hypot(ax + t * (bx - ax) - px, ay + t * (by - ay) - py);
      EXPECT_EQ(mask[row * 16 + c], d <= 0.5 ? 1 : 0);
    }
}

TEST(Rasterize, OutsideGridAndErrors) {
  const GridSpec spec{16, 16, 0.5};
  const auto mask = rasterize_centerline(Polyline({{2.0, 2.0, 0.5}, {3.0, 2.5, 0.5}}), spec);
  EXPECT_EQ(std::count(mask.begin(), mask.end(), 1), 0);
  EXPECT_THROW(rasterize_centerline(std::span<const Point3>{}, spec), DomainError);
  EXPECT_THROW(rasterize_centerline(Polyline({{0, 0, 0}, {1, 1, 0}}), spec, 0.5), DomainError);
}

TEST(Rle, RoundTrip) {
  const std::vector<std::uint8_t> m = {1, 1, 0, 0, 0, 1, 0, 1, 1};
  const auto runs = rle_encode(m);
  EXPECT_EQ(runs, (std::vector<std::size_t>{0, 2, 3, 1, 1, 2}));
  EXPECT_EQ(rle_decode(runs, m.size()), m);
  EXPECT_THROW(rle_decode(runs, 5), ValidationError);
  EXPECT_THROW(rle_decode(runs, 20), ValidationError);
}

TEST(Io, SceneRoundTripIsLossless) {
  const Scene s = generate_scene(21, 5, 3);
  const Scene r = scene_from_json(parse_json(scene_to_json(s).dump(), "mem"));
  EXPECT_EQ(r.grid, s.grid);
  EXPECT_EQ(r.seed, s.seed);
  EXPECT_EQ(r.features, s.features);
  EXPECT_EQ(r.gt.adjacency, s.gt.adjacency);
  ASSERT_EQ(r.gt.size(), s.gt.size());
  for (std::size_t i = 0; i < s.gt.size(); ++i) {
    EXPECT_EQ(r.gt.instances[i].ctrl.points(), s.gt.instances[i].ctrl.points());
    EXPECT_EQ(r.gt.instances[i].mask, s.gt.instances[i].mask);
    EXPECT_EQ(r.gt.instances[i].label, s.gt.instances[i].label);
  }
}

TEST(Io, PredictionRoundTripAndValidation) {
  const Scene s = generate_scene(22, 3, 3);
  const PredictionSet p = predictions_from_scene(s);
  const Json j = prediction_to_json(p);
  EXPECT_EQ(j["schema_version"], kSchemaVersion);
  const PredictionSet r = prediction_from_json(parse_json(j.dump(), "mem"));
  ASSERT_EQ(r.instances.size(), p.instances.size());
  EXPECT_EQ(r.adjacency_matrix(), p.adjacency_matrix());

  Json bad = j;
  bad["instances"][0]["confidence"] = 1.5;
  EXPECT_THROW(prediction_from_json(bad), ValidationError);
  EXPECT_THROW(scene_from_json(j), ValidationError);
  EXPECT_THROW(parse_json("{not json", "mem"), ValidationError);
  EXPECT_THROW(read_file("/nonexistent/topobda/file.json"), IoError);
}

TEST(Fit, StartingAtGroundTruthStaysPut) {
  const Scene s = generate_scene(30, 3, 3);
  const FitResult r = fit_demo(s.gt, perturbed_init(s.gt, 0.0), FitOptions{20, 0.01, 3.0});
  EXPECT_EQ(r.loss_trace.front(), 0.0);
  for (std::size_t i = 0; i < s.gt.size(); ++i) EXPECT_EQ(r.ctrl[i].points(), s.gt.instances[i].ctrl.points());
}

TEST(Fit, PerturbedInitConverges) {
  const Scene s = generate_scene(31, 4, 3);
  const FitResult r = fit_demo(s.gt, perturbed_init(s.gt, 0.05));
  std::vector<ControlPointSet> target;
  for (const GtInstance& g : s.gt.instances) target.push_back(g.ctrl);
  EXPECT_EQ(r.loss_trace.size(), 501u);
  EXPECT_LT(mean_coordinate_error(r.ctrl, target, r.final_assignment), 1e-3);
  EXPECT_LE(r.loss_trace.back(), r.loss_trace.front());
}

TEST(Fit, SwappedInitializationIsRepaired) {
  GroundTruth gt;
  gt.height = gt.width = 8;
  const ControlPointSet a(std::vector<Point3>{{0.1, 0.1, 0.5}, {0.3, 0.2, 0.5}, {0.5, 0.2, 0.5}, {0.7, 0.3, 0.5}});
  const ControlPointSet b(std::vector<Point3>{{0.2, 0.8, 0.5}, {0.4, 0.7, 0.5}, {0.6, 0.7, 0.5}, {0.8, 0.6, 0.5}});
  gt.instances = {{a, std::vector<std::uint8_t>(64, 0), 0}, {b, std::vector<std::uint8_t>(64, 0), 0}};
  gt.adjacency.assign(4, 0);
  std::vector<ControlPointSet> init = perturbed_init(gt, 0.03);
  std::swap(init[0], init[1]);
  const FitResult r = fit_demo(gt, init, FitOptions{200, 0.01, 3.0});
  EXPECT_EQ(r.final_assignment.pairs[0].second, 1u);
  EXPECT_EQ(r.final_assignment.pairs[1].second, 0u);
  EXPECT_LT(r.final_assignment.total_cost, r.initial_assignment.total_cost);
  EXPECT_THROW(fit_demo(GroundTruth{}, init), DomainError);
}

TEST(Cli, GenIsByteDeterministic) {
  const fs::path d = temp_dir("gen");
  ASSERT_EQ(run({"gen", "--seed", "7", "--out", (d / "a.json").string()}), 0);
  ASSERT_EQ(run({"gen", "--seed", "7", "--out", (d / "b.json").string()}), 0);
  EXPECT_EQ(slurp(d / "a.json"), slurp(d / "b.json"));
  EXPECT_FALSE(slurp(d / "a.json").empty());
}

TEST(Cli, SelfEvaluationScoresFull) {
  const fs::path d = temp_dir("eval");
  const std::string scene = (d / "scene.json").string(), metrics = (d / "metrics.json").string();
  ASSERT_EQ(run({"gen", "--seed", "3", "--instances", "5", "--out", scene}), 0);
  ASSERT_EQ(run({"eval", "--pred", scene, "--gt", scene, "--out", metrics}), 0);
  const Json m = read_json_file(metrics);
  EXPECT_EQ(m["det_l"].get<double>(), 100.0);
  EXPECT_EQ(m["det_l_ch"].get<double>(), 100.0);
  EXPECT_EQ(m["top_ll"].get<double>(), 100.0);
  EXPECT_EQ(m["ols_l"].get<double>(), 100.0);
}

TEST(Cli, ForwardMatchAndFit) {
  const fs::path d = temp_dir("pipeline");
  const std::string scene = (d / "scene.json").string(), pred = (d / "pred.json").string();
  ASSERT_EQ(run({"gen", "--seed", "4", "--out", scene}), 0);
  ASSERT_EQ(run({"forward", "--scene", scene, "--one-to-many", "2", "--with-loss", "--with-masks", "--out", pred}), 0);
  const Json p = read_json_file(pred);
  EXPECT_EQ(p["kind"], "prediction");
  EXPECT_EQ(p["layers"].size(), 4u);
  EXPECT_TRUE(p.contains("loss"));
  ASSERT_EQ(run({"match", "--pred", pred, "--gt", scene, "--out", (d / "assign.json").string()}), 0);
  EXPECT_EQ(read_json_file(d / "assign.json")["pairs"].size(), 4u);
  ASSERT_EQ(run({"fit", "--scene", scene, "--out", (d / "fit.json").string()}), 0);
  const Json f = read_json_file(d / "fit.json");
  EXPECT_LT(f["mean_coordinate_error"].get<double>(), 1e-3);
}

TEST(Cli, GradcheckPasses) {
  const fs::path d = temp_dir("gradcheck");
  EXPECT_EQ(run({"gradcheck", "--seed", "3", "--out", (d / "g.json").string()}), 0);
  EXPECT_LT(read_json_file(d / "g.json")["max_rel_error"].get<double>(), 1e-5);
}

TEST(Cli, ErrorExitCodes) {
  EXPECT_EQ(run({"bogus"}), 1);
  EXPECT_EQ(run({"eval", "--pred", "/nonexistent/p.json", "--gt", "/nonexistent/g.json"}), 2);
  const fs::path d = temp_dir("badjson");
  {
    std::ofstream f(d / "bad.json");
    f << "{\"schema_version\": 1, \"kind\": \"scene\"}";
  }
  EXPECT_EQ(run({"fit", "--scene", (d / "bad.json").string(), "--out", (d / "o.json").string()}), 1);
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  const fs::path d = temp_dir("env");
  setenv(kOutDirEnv, d.string().c_str(), 1);
  EXPECT_EQ(output_path("", "scene.json"), d / "scene.json");
  EXPECT_EQ(output_path("x.json", "scene.json"), fs::path("x.json"));
  unsetenv(kOutDirEnv);
}
