#pragma once

// Command-line harness: gen | forward | match | eval | gradcheck | bench | fit.
// Exit codes: 0 success, 1 usage or validation error, 2 I/O error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "topobda/attention.hpp"
#include "topobda/decoder.hpp"
#include "topobda/error.hpp"
#include "topobda/fit.hpp"
#include "topobda/gradcheck.hpp"
#include "topobda/io.hpp"
#include "topobda/losses.hpp"
#include "topobda/matching.hpp"
#include "topobda/metrics.hpp"
#include "topobda/scene.hpp"

namespace topobda {

inline constexpr const char* kOutDirEnv = "TOPOBDA_OUT_DIR";
inline constexpr double kGradcheckTolerance = 1e-5;

/// --out if given, else $TOPOBDA_OUT_DIR/<fallback>, else ./<fallback>.
inline std::filesystem::path output_path(const std::string& out, const std::string& fallback) {
  if (!out.empty()) return out;
  if (const char* dir = std::getenv(kOutDirEnv); dir && *dir) return std::filesystem::path(dir) / fallback;
  return fallback;
}

namespace cli {

inline std::vector<Polyline> metric_polylines(const PredictionSet& p) {
  std::vector<Polyline> out;
  for (const PredictedInstance& i : p.instances) out.push_back(to_metric(i.polyline, p.grid));
  return out;
}

inline std::vector<Polyline> metric_polylines(const Scene& s) {
  std::vector<Polyline> out;
  for (const GtInstance& g : s.gt.instances) out.push_back(to_metric(sample_curve(g.ctrl, kPredictionPolylineSamples), s.grid));
  return out;
}

inline MetricReport evaluate_predictions(const PredictionSet& pred, const Scene& gt, const EvalOptions& opts) {
  if (!(pred.grid == gt.grid)) throw ValidationError("eval: prediction grid differs from GT grid");
  std::vector<double> scores;
  for (const PredictedInstance& i : pred.instances) scores.push_back(i.confidence);
  return evaluate(metric_polylines(pred), scores, pred.adjacency_matrix(), metric_polylines(gt), gt.gt.adjacency, opts);
}

inline std::string metrics_table(const MetricReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(12) << "metric" << std::right << std::setw(10) << "value" << "\n";
  os << std::left << std::setw(12) << "DET_l" << std::right << std::setw(10) << r.det_l << "\n";
  os << std::left << std::setw(12) << "DET_l_ch" << std::right << std::setw(10) << r.det_l_ch << "\n";
  os << std::left << std::setw(12) << "TOP_ll" << std::right << std::setw(10) << r.top_ll << "\n";
  os << std::left << std::setw(12) << "OLS_l" << std::right << std::setw(10) << r.ols_l << "\n";
  for (const ThresholdAp& t : r.per_threshold_ap) {
    std::ostringstream name;
    name << t.criterion << "@" << std::setprecision(1) << std::fixed << t.threshold;
    os << std::left << std::setw(12) << name.str() << std::right << std::setw(10) << t.ap << "\n";
  }
  return os.str();
}

/// Rebuilds a decoder-like state from a prediction file so the matcher can score it.
/// Without stored mask logits the mask terms are unavailable and must be weighted 0.
inline QueryState state_from_predictions(const PredictionSet& p, const Json& doc, bool& has_masks) {
  QueryState s;
  const std::size_t n = p.instances.size();
  s.n_queries = n;
  s.n_ctrl = n ? p.instances[0].ctrl.size() : 0;
  s.height = p.grid.height;
  s.width = p.grid.width;
  s.n_classes = 2;
  const std::size_t cells = s.height * s.width;
  has_masks = n > 0;
  for (std::size_t q = 0; q < n; ++q) {
    const PredictedInstance& inst = p.instances[q];
    if (inst.ctrl.size() != s.n_ctrl) throw ValidationError("match: predictions disagree on control point count");
    for (const Point3& c : inst.ctrl.points()) s.ctrl_norm.insert(s.ctrl_norm.end(), {c.x, c.y, c.z});
    const double conf = std::clamp(inst.confidence, 1e-12, 1.0 - 1e-12);
    s.class_logits.push_back(std::log(conf));
    s.class_logits.push_back(std::log(1.0 - conf));
    const Json& ji = doc.at("instances").at(q);
    if (ji.contains("mask_logits")) {
      auto m = ji.at("mask_logits").get<std::vector<double>>();
      if (m.size() != cells) throw ValidationError("match: mask_logits size != grid size");
      s.pre_mask.insert(s.pre_mask.end(), m.begin(), m.end());
    } else {
      has_masks = false;
      s.pre_mask.insert(s.pre_mask.end(), cells, 0.0);
    }
  }
  return s;
}

inline DecoderConfig decoder_config(bool paper_scale, std::uint64_t seed, std::size_t layers, std::size_t R) {
  DecoderConfig c = paper_scale ? DecoderConfig::paper_scale() : DecoderConfig::desk();
  c.seed = seed;
  if (layers > 0) c.n_layers = layers;
  c.one_to_many_R = R;
  return c;
}

struct BenchRow {
  std::string name;
  OpCounter ops;
  double micros_per_query = 0.0;
};

inline std::vector<BenchRow> run_bench(const AttentionConfig& cfg, std::uint64_t seed, std::size_t repeats) {
  Rng rng = make_rng(seed, 0x62656e);
  const FeatureGrid grid(cfg.height, cfg.width, cfg.value_channels, [&] {
    std::vector<double> v(cfg.height * cfg.width * cfg.value_channels);
    for (double& x : v) x = normal(rng, 0.0, 1.0);
    return v;
  }());
  std::vector<double> q(cfg.d_model);
  for (double& x : q) x = normal(rng, 0.0, 1.0);
  std::vector<Point3> pts(cfg.order + 1);
  for (Point3& c : pts) c = {uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), 0.5};
  const ControlPointSet ctrl(pts);

  std::vector<BenchRow> rows;
  auto timed = [&](const std::string& name, const OpCounter& ops, auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    double sink = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) sink += fn()[0];
    const auto t1 = std::chrono::steady_clock::now();
    if (!std::isfinite(sink)) throw NumericError("bench: non-finite output", 0);
    rows.push_back({name, ops, std::chrono::duration<double, std::micro>(t1 - t0).count() / double(repeats)});
  };

  const std::size_t heads = cfg.order + 1;
  const DeformAttnParams pb = DeformAttnParams::random(cfg.d_model, heads, cfg.n_samples, cfg.value_channels, rng);
  const ValueField vb = project_values(grid, pb);
  AttentionConfig c_bda = cfg;
  timed("BDA", count_ops(AttentionVariant::bda, c_bda), [&] { return bda(q, vb, ctrl, pb); });

  AttentionConfig c_spda = cfg;
  c_spda.n_heads = heads;
  timed("SPDA", count_ops(AttentionVariant::spda, c_spda), [&] { return spda_learned_reference(q, vb, pb); });

  for (std::size_t points : {heads, std::size_t{16}}) {
    AttentionConfig c = cfg;
    c.n_heads = points;
    if (cfg.d_model % points != 0) continue;
    const DeformAttnParams pm = DeformAttnParams::random(cfg.d_model, points, cfg.n_samples, cfg.value_channels, rng);
    const ValueField vm = project_values(grid, pm);
    const BernsteinMatrix basis = bernstein_matrix(cfg.order, points - 1);
    timed("MPDA" + std::to_string(points), count_ops(AttentionVariant::mpda, c),
          [&] { return mpda_from_control_points(q, vm, ctrl, basis, pm); });
  }

  const CrossAttnParams ps = CrossAttnParams::random(cfg.d_model, cfg.value_channels, rng);
  const KeyValueField kv = project_keys_values(grid, ps);
  timed("SA", count_ops(AttentionVariant::standard, cfg), [&] { return standard_cross_attention(q, kv, ps); });
  return rows;
}

}  // namespace cli

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Bezier deformable attention laboratory"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::uint64_t seed = 0;
  std::string out;
  bool paper_scale = false;

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic scene");
  std::size_t n_instances = 4, order = 3, channels = 32;
  gen->add_option("--seed", seed, "Random seed");
  gen->add_option("--instances", n_instances, "Number of centerlines");
  gen->add_option("--order", order, "Bezier order N");
  gen->add_option("--channels", channels, "Feature channels");
  gen->add_flag("--paper-scale", paper_scale, "200 x 104 grid");
  gen->add_option("--out", out, "Output path (default scene.json)");

  // forward
  auto* fwd = app.add_subcommand("forward", "Run the decoder on a scene");
  std::string scene_path;
  std::size_t layers = 0, repetitions = 0, mask_samples = 100;
  bool with_loss = false, with_masks = false, dense_mask_cost = false;
  fwd->add_option("--scene", scene_path, "Scene JSON")->required();
  fwd->add_option("--seed", seed, "Parameter seed");
  fwd->add_option("--layers", layers, "Decoder layers (default per scale)");
  fwd->add_option("--one-to-many", repetitions, "One-to-many repetition R");
  fwd->add_option("--mask-samples", mask_samples, "Mask points K");
  fwd->add_flag("--paper-scale", paper_scale, "Paper-scale decoder");
  fwd->add_flag("--with-loss", with_loss, "Attach the loss breakdown");
  fwd->add_flag("--with-masks", with_masks, "Attach per-instance mask logits");
  fwd->add_flag("--dense-mask-cost", dense_mask_cost, "Dense mask cost in the matcher");
  fwd->add_option("--out", out, "Output path (default prediction.json)");

  // match
  auto* mat = app.add_subcommand("match", "Hungarian assignment of predictions to GT");
  std::string pred_path, gt_path;
  mat->add_option("--pred", pred_path, "Prediction JSON")->required();
  mat->add_option("--gt", gt_path, "Scene JSON")->required();
  mat->add_option("--seed", seed, "Mask sampling seed");
  mat->add_option("--mask-samples", mask_samples, "Mask points K");
  mat->add_option("--one-to-many", repetitions, "Repeat GT R times");
  mat->add_flag("--dense-mask-cost", dense_mask_cost, "Evaluate mask cost at every cell");
  mat->add_option("--out", out, "Output path (default assignment.json)");

  // eval
  auto* ev = app.add_subcommand("eval", "Detection and topology metrics");
  std::size_t resample = kDefaultResample;
  bool v11m = false;
  ev->add_option("--pred", pred_path, "Prediction or scene JSON")->required();
  ev->add_option("--gt", gt_path, "Scene JSON")->required();
  ev->add_option("--resample", resample, "Points per polyline")->check(CLI::Range(2, 100000));
  ev->add_flag("--v11m", v11m, "Apply the V1.1m score remap");
  ev->add_option("--out", out, "Output path (default metrics.json)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::size_t n_seeds = 1;
  gc->add_option("--seed", seed, "First seed");
  gc->add_option("--seeds", n_seeds, "Number of consecutive seeds")->check(CLI::Range(1, 1000));
  gc->add_option("--out", out, "Output path (default gradcheck.json)");

  // bench
  auto* bn = app.add_subcommand("bench", "Operation counts and timings per attention variant");
  std::size_t repeats = 200;
  bn->add_option("--seed", seed, "Random seed");
  bn->add_option("--repeats", repeats, "Timed calls per variant")->check(CLI::Range(1, 1000000));
  bn->add_flag("--paper-scale", paper_scale, "d_model 256, K 32, 200 x 104 grid");
  bn->add_option("--out", out, "Output path (default bench.json)");

  // fit
  auto* ft = app.add_subcommand("fit", "Fit free control points to a scene's GT");
  std::size_t iterations = 500;
  double step = 0.01, offset = 0.05;
  ft->add_option("--scene", scene_path, "Scene JSON")->required();
  ft->add_option("--iterations", iterations, "Steps");
  ft->add_option("--step", step, "Step size");
  ft->add_option("--offset", offset, "Initial offset from GT");
  ft->add_option("--out", out, "Output path (default fit.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) {
      SceneOptions opts;
      opts.grid = paper_scale ? GridSpec::paper_scale() : GridSpec::desk();
      opts.channels = channels;
      const Scene s = generate_scene(seed, n_instances, order, opts);
      const auto path = output_path(out, "scene.json");
      write_json_file(path, scene_to_json(s));
      std::cout << "wrote " << path.string() << " (" << s.gt.size() << " instances)\n";
    } else if (fwd->parsed()) {
      const Scene s = scene_from_json(read_json_file(scene_path));
      DecoderConfig cfg = cli::decoder_config(paper_scale, seed, layers, repetitions);
      if (s.gt.size() > 0) cfg.order = s.gt.instances[0].ctrl.order();
      const DecoderParams params = DecoderParams::random(cfg, s.features.channels());
      const std::vector<QueryState> states = run_decoder(params, s.features);
      const PredictionSet final_pred = predictions_from_state(states.back(), cfg.n_queries, s.grid);
      Json doc = prediction_to_json(final_pred);
      if (with_masks)
        for (std::size_t q = 0; q < cfg.n_queries; ++q) {
          const auto m = states.back().mask_logits(q);
          doc["instances"][q]["mask_logits"] = std::vector<double>(m.begin(), m.end());
        }
      Json per_layer = Json::array();
      for (std::size_t l = 0; l < states.size(); ++l)
        per_layer.push_back(
            {{"layer", l}, {"instances", instances_to_json(predictions_from_state(states[l], cfg.n_queries, s.grid).instances)}});
      doc["layers"] = per_layer;
      if (with_loss) {
        LossOptions lo;
        lo.sample_count = mask_samples;
        lo.seed = seed;
        lo.dense_mask_cost = dense_mask_cost;
        doc["loss"] = total_loss_to_json(total_loss(states, cfg.n_queries, cfg.one_to_many_R, s.gt, LossWeights{}, lo));
      }
      const auto path = output_path(out, "prediction.json");
      write_json_file(path, doc);
      std::cout << "wrote " << path.string() << " (" << states.size() << " states, " << cfg.n_queries
                << " queries)\n";
    } else if (mat->parsed()) {
      const Json pdoc = read_json_file(pred_path);
      const PredictionSet pred = prediction_from_json(pdoc);
      const Scene s = scene_from_json(read_json_file(gt_path));
      if (!(pred.grid == s.grid)) throw ValidationError("match: prediction grid differs from GT grid");
      bool has_masks = false;
      const QueryState state = cli::state_from_predictions(pred, pdoc, has_masks);
      MatchCost weights;
      if (!has_masks) weights.lambda_mask_bce = weights.lambda_mask_dice = 0.0;
      const MaskCostOptions mopts{mask_samples, seed, dense_mask_cost};
      const GroundTruth gt = repetitions > 0 ? repeat_ground_truth(s.gt, repetitions) : s.gt;
      if (gt.size() > 0 && state.n_queries > 0 && gt.instances[0].ctrl.size() != state.n_ctrl)
        throw ValidationError("match: control point count differs between prediction and GT");
      const Matrix cost = pairwise_cost(state, 0, state.n_queries, gt, weights, mopts);
      const Assignment a = hungarian(cost);
      Json doc = document("assignment");
      doc.update(assignment_to_json(a));
      doc["cost"] = matrix_to_json(cost);
      doc["mask_terms_used"] = has_masks;
      const auto path = output_path(out, "assignment.json");
      write_json_file(path, doc);
      std::cout << "matched " << a.pairs.size() << " pairs, total cost " << a.total_cost << "\n";
    } else if (ev->parsed()) {
      const PredictionSet pred = prediction_or_scene_from_json(read_json_file(pred_path));
      const Scene s = scene_from_json(read_json_file(gt_path));
      const MetricReport r = cli::evaluate_predictions(pred, s, EvalOptions{resample, v11m});
      const auto path = output_path(out, "metrics.json");
      write_json_file(path, metrics_to_json(r));
      std::cout << cli::metrics_table(r);
    } else if (gc->parsed()) {
      std::vector<GradCheckReport> reports;
      for (std::size_t k = 0; k < n_seeds; ++k) reports.push_back(run_gradcheck(seed + k));
      const Json doc = gradcheck_to_json(reports);
      const auto path = output_path(out, "gradcheck.json");
      write_json_file(path, doc);
      for (const GradCheckReport& r : reports)
        for (const GradCheckEntry& e : r.entries)
          std::cout << "seed " << r.seed << "  " << std::left << std::setw(20) << e.name << std::right
                    << " checked " << std::setw(5) << e.checked << "  max rel " << std::scientific
                    << std::setprecision(2) << e.max_rel_error << std::defaultfloat << "\n";
      const double worst = doc["max_rel_error"].get<double>();
      std::cout << "max relative error " << worst << (worst < kGradcheckTolerance ? "  PASS" : "  FAIL") << "\n";
      return worst < kGradcheckTolerance ? 0 : 1;
    } else if (bn->parsed()) {
      AttentionConfig cfg;
      if (paper_scale) {
        cfg.d_model = 256;
        cfg.n_samples = 32;
        cfg.height = 200;
        cfg.width = 104;
        cfg.value_channels = 256;
      }
      const auto rows = cli::run_bench(cfg, seed, repeats);
      Json doc = document("bench");
      Json jr = Json::array();
      std::cout << std::left << std::setw(10) << "variant" << std::right << std::setw(14) << "MACs" << std::setw(10)
                << "matmuls" << std::setw(10) << "samples" << std::setw(14) << "us/query" << "\n";
      for (const auto& r : rows) {
        jr.push_back({{"variant", r.name},
                      {"macs", r.ops.multiply_accumulates},
                      {"matmuls", r.ops.matmul_calls},
                      {"sample_calls", r.ops.sample_calls},
                      {"micros_per_query", r.micros_per_query}});
        std::cout << std::left << std::setw(10) << r.name << std::right << std::setw(14) << r.ops.multiply_accumulates
                  << std::setw(10) << r.ops.matmul_calls << std::setw(10) << r.ops.sample_calls << std::setw(14)
                  << std::fixed << std::setprecision(2) << r.micros_per_query << std::defaultfloat << "\n";
      }
      doc["rows"] = jr;
      doc["grid_projection_macs"] = grid_projection_ops(AttentionVariant::bda, cfg).multiply_accumulates;
      const auto path = output_path(out, "bench.json");
      write_json_file(path, doc);
    } else if (ft->parsed()) {
      const Scene s = scene_from_json(read_json_file(scene_path));
      const FitResult r = fit_demo(s.gt, perturbed_init(s.gt, offset), FitOptions{iterations, step});
      std::vector<ControlPointSet> target;
      for (const GtInstance& g : s.gt.instances) target.push_back(g.ctrl);
      PredictionSet pred;
      pred.grid = s.grid;
      for (const ControlPointSet& c : r.ctrl) pred.instances.push_back(make_prediction(c, 1.0));
      pred.edges = endpoint_edges(pred.instances, s.grid);
      const MetricReport m = cli::evaluate_predictions(pred, s, EvalOptions{});
      Json doc = document("fit");
      doc["prediction"] = prediction_to_json(pred);
      doc["loss_trace"] = r.loss_trace;
      doc["initial_assignment"] = assignment_to_json(r.initial_assignment);
      doc["final_assignment"] = assignment_to_json(r.final_assignment);
      doc["mean_coordinate_error"] = mean_coordinate_error(r.ctrl, target, r.final_assignment);
      doc["metrics"] = metrics_to_json(m);
      const auto path = output_path(out, "fit.json");
      write_json_file(path, doc);
      std::cout << "initial loss " << r.loss_trace.front() << ", final loss " << r.loss_trace.back()
                << ", mean coordinate error " << doc["mean_coordinate_error"].get<double>() << ", DET_l "
                << m.det_l << "\n";
    }
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace topobda
