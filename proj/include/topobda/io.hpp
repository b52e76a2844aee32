#pragma once

// JSON documents exchanged by the command-line harness. Every document carries
// "schema_version" and "kind"; coordinates of control points and polylines are normalized
// to the grid extent ([0, 1] in x, y, z). Doubles are written in shortest round-trip form.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "topobda/bezier.hpp"
#include "topobda/decoder.hpp"
#include "topobda/error.hpp"
#include "topobda/gradcheck.hpp"
#include "topobda/grid.hpp"
#include "topobda/ground_truth.hpp"
#include "topobda/losses.hpp"
#include "topobda/matching.hpp"
#include "topobda/metrics.hpp"
#include "topobda/scene.hpp"

#if defined(_WIN32)
#include <process.h>
#define TOPOBDA_GETPID _getpid
#else
#include <unistd.h>
#define TOPOBDA_GETPID getpid
#endif

namespace topobda {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr std::size_t kPredictionPolylineSamples = 20;

// ---------------------------------------------------------------------------------------
// Files

/// Writes to a temporary sibling, then renames over the destination.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp." + std::to_string(TOPOBDA_GETPID());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << contents;
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename onto " + path.string());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Json parse_json(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ValidationError(origin + ": invalid JSON: " + e.what());
  }
}

inline Json read_json_file(const std::filesystem::path& path) { return parse_json(read_file(path), path.string()); }

inline void write_json_file(const std::filesystem::path& path, const Json& doc) {
  write_file_atomic(path, doc.dump(2) + "\n");
}

inline Json document(const std::string& kind) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = kind;
  return j;
}

/// Checks schema_version and kind, rethrowing structural errors as ValidationError.
inline void expect_kind(const Json& j, const std::string& kind) {
  if (!j.is_object()) throw ValidationError("expected a JSON object");
  if (!j.contains("schema_version") || j["schema_version"] != kSchemaVersion)
    throw ValidationError("unsupported or missing schema_version");
  if (!j.contains("kind") || j["kind"] != kind)
    throw ValidationError("expected kind '" + kind + "'");
}

// ---------------------------------------------------------------------------------------
// Building blocks

inline Json to_json(const Point3& p) { return Json::array({p.x, p.y, p.z}); }

inline Point3 point_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw ValidationError("point must be [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Json to_json(std::span<const Point3> pts) {
  Json a = Json::array();
  for (const Point3& p : pts) a.push_back(to_json(p));
  return a;
}

inline std::vector<Point3> points_from_json(const Json& j) {
  if (!j.is_array()) throw ValidationError("expected an array of points");
  std::vector<Point3> pts;
  for (const Json& p : j) pts.push_back(point_from_json(p));
  return pts;
}

inline Json to_json(const GridSpec& g) { return {{"h", g.height}, {"w", g.width}, {"cell_m", g.cell_m}}; }

inline GridSpec grid_spec_from_json(const Json& j) {
  GridSpec g{j.at("h").get<std::size_t>(), j.at("w").get<std::size_t>(), j.at("cell_m").get<double>()};
  if (g.height == 0 || g.width == 0 || !(g.cell_m > 0.0)) throw ValidationError("grid: h, w, cell_m must be positive");
  return g;
}

inline Json edges_to_json(std::span<const std::uint8_t> adjacency, std::size_t n) {
  Json a = Json::array();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (adjacency[i * n + j]) a.push_back({i, j});
  return a;
}

inline std::vector<std::uint8_t> edges_from_json(const Json& j, std::size_t n) {
  std::vector<std::uint8_t> adj(n * n, 0);
  for (const Json& e : j) {
    if (!e.is_array() || e.size() < 2) throw ValidationError("edge must be [i, j]");
    const auto a = e[0].get<std::size_t>(), b = e[1].get<std::size_t>();
    if (a >= n || b >= n || a == b) throw ValidationError("edge index out of range or self loop");
    adj[a * n + b] = 1;
  }
  return adj;
}

// ---------------------------------------------------------------------------------------
// Scene

inline Json scene_to_json(const Scene& s) {
  Json j = document("scene");
  j["grid"] = to_json(s.grid);
  j["channels"] = s.features.channels();
  j["features"] = s.features.data();
  Json inst = Json::array();
  for (const GtInstance& g : s.gt.instances)
    inst.push_back({{"ctrl", to_json(std::span<const Point3>(g.ctrl.points()))},
                    {"class", g.label},
                    {"mask_rle", rle_encode(g.mask)}});
  j["instances"] = inst;
  j["adjacency"] = edges_to_json(s.gt.adjacency, s.gt.size());
  j["seed"] = s.seed;
  return j;
}

inline Scene scene_from_json(const Json& j) {
  expect_kind(j, "scene");
  try {
    Scene s;
    s.grid = grid_spec_from_json(j.at("grid"));
    s.seed = j.at("seed").get<std::uint64_t>();
    const auto channels = j.at("channels").get<std::size_t>();
    s.features = FeatureGrid(s.grid.height, s.grid.width, channels, j.at("features").get<std::vector<double>>(),
                             s.grid.cell_m);
    s.gt.height = s.grid.height;
    s.gt.width = s.grid.width;
    for (const Json& inst : j.at("instances")) {
      GtInstance g{ControlPointSet(points_from_json(inst.at("ctrl"))),
                   rle_decode(inst.at("mask_rle").get<std::vector<std::size_t>>(), s.grid.height * s.grid.width),
                   inst.at("class").get<int>()};
      s.gt.instances.push_back(std::move(g));
    }
    s.gt.adjacency = edges_from_json(j.at("adjacency"), s.gt.size());
    s.gt.validate();
    return s;
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("scene: ") + e.what());
  } catch (const ShapeError& e) {
    throw ValidationError(std::string("scene: ") + e.what());
  } catch (const DomainError& e) {
    throw ValidationError(std::string("scene: ") + e.what());
  }
}

// ---------------------------------------------------------------------------------------
// Predictions

struct PredictedInstance {
  ControlPointSet ctrl;
  Polyline polyline;  ///< sample_curve(ctrl, kPredictionPolylineSamples)
  double confidence = 0.0;
  int label = kCenterlineClass;
};

struct ScoredEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  double score = 0.0;
};

struct PredictionSet {
  GridSpec grid;
  std::vector<PredictedInstance> instances;
  std::vector<ScoredEdge> edges;

  Matrix adjacency_matrix() const {
    Matrix m(instances.size(), instances.size(), 0.0);
    for (const ScoredEdge& e : edges) m(e.from, e.to) = e.score;
    return m;
  }
};

inline PredictedInstance make_prediction(ControlPointSet ctrl, double confidence, int label = kCenterlineClass) {
  Polyline poly = sample_curve(ctrl, kPredictionPolylineSamples);
  return {std::move(ctrl), std::move(poly), confidence, label};
}

/// Edge confidence from endpoint proximity: c_i * c_j * exp(-d^2 / (2 * sigma^2)), d = |end_i - start_j|
/// in meters. Pairs with score below 1e-3 are dropped.
inline std::vector<ScoredEdge> endpoint_edges(std::span<const PredictedInstance> inst, const GridSpec& grid,
                                              double sigma_m = 1.0) {
  std::vector<ScoredEdge> edges;
  for (std::size_t i = 0; i < inst.size(); ++i)
    for (std::size_t j = 0; j < inst.size(); ++j) {
      if (i == j) continue;
      const double d = distance(to_metric(inst[i].polyline.back(), grid), to_metric(inst[j].polyline.front(), grid));
      const double s = inst[i].confidence * inst[j].confidence * std::exp(-d * d / (2.0 * sigma_m * sigma_m));
      if (s >= 1e-3) edges.push_back({i, j, s});
    }
  return edges;
}

/// One-to-one predictions of a decoder state; confidence is the centerline class probability.
inline PredictionSet predictions_from_state(const QueryState& state, std::size_t n_queries, const GridSpec& grid) {
  PredictionSet p;
  p.grid = grid;
  for (std::size_t q = 0; q < n_queries; ++q) {
    const auto probs = state.class_probabilities(q);
    p.instances.push_back(make_prediction(state.control_points(q), probs[kCenterlineClass]));
  }
  p.edges = endpoint_edges(p.instances, grid);
  return p;
}

/// Ground truth presented as predictions with confidence 1 and its exact adjacency.
inline PredictionSet predictions_from_scene(const Scene& s) {
  PredictionSet p;
  p.grid = s.grid;
  for (const GtInstance& g : s.gt.instances) p.instances.push_back(make_prediction(g.ctrl, 1.0, g.label));
  const std::size_t n = s.gt.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (s.gt.edge(i, j)) p.edges.push_back({i, j, 1.0});
  return p;
}

inline Json instances_to_json(std::span<const PredictedInstance> inst) {
  Json a = Json::array();
  for (const PredictedInstance& p : inst)
    a.push_back({{"ctrl", to_json(std::span<const Point3>(p.ctrl.points()))},
                 {"polyline", to_json(std::span<const Point3>(p.polyline.points()))},
                 {"confidence", p.confidence},
                 {"class", p.label}});
  return a;
}

inline Json prediction_to_json(const PredictionSet& p) {
  Json j = document("prediction");
  j["grid"] = to_json(p.grid);
  j["instances"] = instances_to_json(p.instances);
  Json edges = Json::array();
  for (const ScoredEdge& e : p.edges) edges.push_back({e.from, e.to, e.score});
  j["adjacency"] = edges;
  return j;
}

inline PredictionSet prediction_from_json(const Json& j) {
  expect_kind(j, "prediction");
  try {
    PredictionSet p;
    p.grid = grid_spec_from_json(j.at("grid"));
    for (const Json& inst : j.at("instances")) {
      ControlPointSet ctrl(points_from_json(inst.at("ctrl")));
      const double conf = inst.at("confidence").get<double>();
      if (!(conf >= 0.0 && conf <= 1.0)) throw ValidationError("prediction: confidence outside [0, 1]");
      PredictedInstance pi = make_prediction(ctrl, conf, inst.at("class").get<int>());
      if (inst.contains("polyline")) {
        const auto stored = points_from_json(inst.at("polyline"));
        if (stored.size() != pi.polyline.size()) throw ValidationError("prediction: polyline length mismatch");
        for (std::size_t k = 0; k < stored.size(); ++k)
          if (distance(stored[k], pi.polyline[k]) > 1e-9)
            throw ValidationError("prediction: polyline does not match its control points");
      }
      p.instances.push_back(std::move(pi));
    }
    for (const Json& e : j.at("adjacency")) {
      if (!e.is_array() || e.size() != 3) throw ValidationError("prediction edge must be [i, j, score]");
      ScoredEdge se{e[0].get<std::size_t>(), e[1].get<std::size_t>(), e[2].get<double>()};
      if (se.from >= p.instances.size() || se.to >= p.instances.size())
        throw ValidationError("prediction edge index out of range");
      p.edges.push_back(se);
    }
    return p;
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("prediction: ") + e.what());
  } catch (const ShapeError& e) {
    throw ValidationError(std::string("prediction: ") + e.what());
  }
}

/// Accepts either a prediction document or a scene (evaluated as perfect predictions).
inline PredictionSet prediction_or_scene_from_json(const Json& j) {
  if (j.is_object() && j.contains("kind") && j["kind"] == "scene") return predictions_from_scene(scene_from_json(j));
  return prediction_from_json(j);
}

// ---------------------------------------------------------------------------------------
// Reports

inline Json assignment_to_json(const Assignment& a) {
  Json pairs = Json::array();
  for (const auto& [i, k] : a.pairs) pairs.push_back({i, k});
  return {{"pairs", pairs}, {"total_cost", a.total_cost}};
}

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

inline Json metrics_to_json(const MetricReport& r) {
  Json j = document("metrics");
  j["det_l"] = r.det_l;
  j["det_l_ch"] = r.det_l_ch;
  j["top_ll"] = r.top_ll;
  j["ols_l"] = r.ols_l;
  Json per = Json::array();
  for (const ThresholdAp& t : r.per_threshold_ap)
    per.push_back({{"criterion", t.criterion}, {"threshold_m", t.threshold}, {"ap", t.ap}});
  j["per_threshold_ap"] = per;
  return j;
}

inline Json loss_terms_to_json(const LossTerms& t) {
  return {{"reg", t.reg}, {"mask_bce", t.mask_bce}, {"mask_dice", t.mask_dice}, {"cls", t.cls}};
}

inline Json total_loss_to_json(const TotalLoss& t) {
  Json layers = Json::array();
  for (std::size_t l = 0; l < t.layers.size(); ++l)
    layers.push_back({{"layer", l},
                      {"one_to_one", loss_terms_to_json(t.layers[l].one_to_one.terms)},
                      {"one_to_many", loss_terms_to_json(t.layers[l].one_to_many.terms)},
                      {"total", t.layers[l].total}});
  return {{"layers", layers}, {"one_to_one", t.one_to_one}, {"one_to_many", t.one_to_many}, {"total", t.total}};
}

inline Json gradcheck_to_json(std::span<const GradCheckReport> reports) {
  Json j = document("gradcheck");
  Json runs = Json::array();
  double worst = 0.0;
  for (const GradCheckReport& r : reports) {
    Json entries = Json::array();
    for (const GradCheckEntry& e : r.entries)
      entries.push_back({{"name", e.name},
                         {"checked", e.checked},
                         {"max_abs_error", e.max_abs_error},
                         {"max_rel_error", e.max_rel_error}});
    runs.push_back({{"seed", r.seed}, {"entries", entries}, {"max_rel_error", r.max_rel_error()}});
    worst = std::max(worst, r.max_rel_error());
  }
  j["runs"] = runs;
  j["max_rel_error"] = worst;
  return j;
}

}  // namespace topobda
