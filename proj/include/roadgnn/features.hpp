#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "roadgnn/dense.hpp"
#include "roadgnn/embedding.hpp"
#include "roadgnn/geo.hpp"
#include "roadgnn/graph.hpp"
#include "roadgnn/raster.hpp"

namespace roadgnn {

struct FeatureBlock {
  std::string name;
  std::size_t width = 0;
};

// Assembled per-node feature rows x~ = [geometric | binary | histogram? | embedding?]
// plus the column schema and training-set standardization statistics.
struct FeatureMatrix {
  Dense rows;
  std::vector<FeatureBlock> schema;
  std::vector<double> mean;    // empty until standardize()
  std::vector<double> stddev;

  std::size_t width() const { return rows.cols; }
  std::size_t schema_width() const {
    std::size_t w = 0;
    for (const auto& b : schema) w += b.width;
    return w;
  }
  std::pair<std::size_t, std::size_t> block_span(const std::string& name) const {
    std::size_t off = 0;
    for (const auto& b : schema) {
      if (b.name == name) return {off, b.width};
      off += b.width;
    }
    throw SchemaError("feature matrix has no block '" + name + "'");
  }
  bool has_block(const std::string& name) const {
    for (const auto& b : schema)
      if (b.name == name) return true;
    return false;
  }
};

struct FeatureOptions {
  bool geometric = true;
  bool binary = true;
  bool histogram = false;
  bool embedding = false;
  std::size_t resample_points = 10;
  std::optional<double> ref_lat;  // default: mean segment latitude
};

namespace detail {

inline std::vector<std::pair<double, double>> node_polyline(const RoadGraph& graph, std::size_t i) {
  const Segment& s = graph.nodes[i];
  if (s.geometry) return *s.geometry;
  const auto& ep = graph.endpoints[i];
  return {{ep[0], ep[1]}, {ep[2], ep[3]}};
}

inline double safe_bearing(const std::vector<std::pair<double, double>>& pts) {
  if (pts.front() != pts.back()) return bearing(pts);
  // loop road: fall back to the first distinct pair
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (pts[i] != pts.front()) return bearing({pts.front(), pts[i]});
  return 0.0;
}

}  // namespace detail

inline double default_ref_lat(const RoadGraph& graph) {
  if (graph.size() == 0) return 0.0;
  double acc = 0.0;
  for (const auto& ep : graph.endpoints) acc += 0.5 * (ep[1] + ep[3]);
  return acc / double(graph.size());
}

// Road-aligned tile center and heading for one node, in the projection used
// by the feature pipeline.
inline std::tuple<double, double, double> node_tile_pose(const RoadGraph& graph, std::size_t i,
                                                         const LocalProjection& proj) {
  const auto pts = detail::node_polyline(graph, i);
  double cx = 0.0, cy = 0.0;
  for (const auto& [lon, lat] : pts) {
    const auto [x, y] = proj.to_meters(lon, lat);
    cx += x;
    cy += y;
  }
  cx /= double(pts.size());
  cy /= double(pts.size());
  return {cx, cy, detail::safe_bearing(pts)};
}

// Per-node histogram vectors computed from road-aligned tiles; rasters are
// shared read-only so nodes can be processed concurrently.
inline std::vector<std::vector<double>> compute_histograms(const RoadGraph& graph,
                                                           const Raster& rgb, const Raster* dsm,
                                                           const LocalProjection& proj) {
  std::vector<std::vector<double>> out(graph.size());
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const auto [cx, cy, heading] = node_tile_pose(graph, i, proj);
    const ImageTile tile = extract_tile(rgb, cx, cy, heading);
    if (dsm) {
      const ImageTile dsm_tile = extract_tile(*dsm, cx, cy, heading);
      out[i] = histogram_features(tile, &dsm_tile);
    } else {
      out[i] = histogram_features(tile);
    }
  }
  return out;
}

struct AssembleReport {
  std::size_t embedding_fallbacks = 0;  // nodes with no embedding row, filled with zeros
};

inline FeatureMatrix assemble_features(const RoadGraph& graph, const FeatureOptions& options,
                                       const EmbeddingTable* embeddings = nullptr,
                                       const std::vector<std::vector<double>>* histograms = nullptr,
                                       AssembleReport* report = nullptr) {
  FeatureMatrix fm;
  const std::size_t n = graph.size();
  const LocalProjection proj{options.ref_lat.value_or(default_ref_lat(graph))};

  std::size_t hist_width = 0;
  if (options.histogram) {
    if (!histograms || histograms->size() != n)
      throw SchemaError("assemble_features: histogram block selected but no per-node histograms");
    hist_width = histograms->front().size();
    for (const auto& h : *histograms)
      if (h.size() != hist_width) throw SchemaError("assemble_features: ragged histogram vectors");
  }
  std::size_t emb_width = 0;
  if (options.embedding) {
    if (!embeddings) throw SchemaError("assemble_features: embedding block selected but no table");
    emb_width = embeddings->dim;
  }

  if (options.geometric)
    fm.schema.push_back({"geometric", 5 + 2 * options.resample_points});
  if (options.binary) fm.schema.push_back({"binary", 3});
  if (options.histogram) fm.schema.push_back({"histogram", hist_width});
  if (options.embedding) fm.schema.push_back({"embedding", emb_width});

  fm.rows = Dense(n, fm.schema_width());
  AssembleReport rep;
  for (std::size_t i = 0; i < n; ++i) {
    double* row = fm.rows.row(i);
    std::size_t col = 0;
    if (options.geometric) {
      const auto pts = detail::node_polyline(graph, i);
      const Segment& s = graph.nodes[i];
      const auto resampled = resample_geometry(pts, options.resample_points, proj);
      double arc = 0.0;
      for (std::size_t k = 1; k < pts.size(); ++k) {
        const auto [x0, y0] = proj.to_meters(pts[k - 1].first, pts[k - 1].second);
        const auto [x1, y1] = proj.to_meters(pts[k].first, pts[k].second);
        arc += std::hypot(x1 - x0, y1 - y0);
      }
      row[col++] = s.length.value_or(arc);
      const double b = detail::safe_bearing(pts);
      row[col++] = std::sin(deg2rad(b));
      row[col++] = std::cos(deg2rad(b));
      double cx = 0.0, cy = 0.0;
      for (const auto& [lon, lat] : pts) {
        const auto [x, y] = proj.to_meters(lon, lat);
        cx += x;
        cy += y;
      }
      row[col++] = cx / double(pts.size());
      row[col++] = cy / double(pts.size());
      for (const auto& [dx, dy] : resampled) {
        row[col++] = dx;
        row[col++] = dy;
      }
    }
    if (options.binary) {
      const Segment& s = graph.nodes[i];
      row[col++] = s.oneway.value_or(false) ? 1.0 : 0.0;
      row[col++] = s.bridge.value_or(false) ? 1.0 : 0.0;
      row[col++] = s.tunnel.value_or(false) ? 1.0 : 0.0;
    }
    if (options.histogram) {
      for (double h : (*histograms)[i]) row[col++] = h;
    }
    if (options.embedding) {
      const std::vector<float>* vec = embeddings->find(graph.node_hash[i]);
      if (vec) {
        for (float x : *vec) row[col++] = double(x);
      } else {
        ++rep.embedding_fallbacks;
        col += emb_width;  // rows start zeroed
      }
    }
  }
  if (report) *report = rep;
  return fm;
}

// Shifts/scales the geometric and embedding blocks to train-mean 0 and
// train-std 1; binary and histogram blocks stay untouched. Columns with
// train-std below 1e-12 collapse to 0.
inline FeatureMatrix standardize(const FeatureMatrix& fm, const std::vector<bool>& train_mask) {
  if (train_mask.size() != fm.rows.rows) throw SchemaError("standardize: mask size mismatch");
  std::size_t n_train = 0;
  for (bool m : train_mask) n_train += m;
  if (n_train == 0) throw SchemaError("standardize: empty train mask");
  if (n_train < 2) throw SchemaError("standardize: need >= 2 training rows");

  std::vector<bool> continuous(fm.width(), false);
  for (const char* name : {"geometric", "embedding"}) {
    if (!fm.has_block(name)) continue;
    const auto [off, w] = fm.block_span(name);
    for (std::size_t c = off; c < off + w; ++c) continuous[c] = true;
  }

  FeatureMatrix out = fm;
  out.mean.assign(fm.width(), 0.0);
  out.stddev.assign(fm.width(), 1.0);
  for (std::size_t c = 0; c < fm.width(); ++c) {
    if (!continuous[c]) continue;
    double sum = 0.0;
    for (std::size_t r = 0; r < fm.rows.rows; ++r)
      if (train_mask[r]) sum += fm.rows(r, c);
    const double mean = sum / double(n_train);
    double ss = 0.0;
    for (std::size_t r = 0; r < fm.rows.rows; ++r)
      if (train_mask[r]) ss += (fm.rows(r, c) - mean) * (fm.rows(r, c) - mean);
    const double sd = std::sqrt(ss / double(n_train));
    out.mean[c] = mean;
    out.stddev[c] = sd;
    for (std::size_t r = 0; r < fm.rows.rows; ++r)
      out.rows(r, c) = sd < 1e-12 ? 0.0 : (fm.rows(r, c) - mean) / sd;
  }
  return out;
}

// Column subset by block names, preserving schema order.
inline FeatureMatrix select_blocks(const FeatureMatrix& fm, const std::vector<std::string>& names) {
  FeatureMatrix out;
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (const auto& b : fm.schema) {
    if (std::find(names.begin(), names.end(), b.name) == names.end()) continue;
    out.schema.push_back(b);
    spans.push_back(fm.block_span(b.name));
  }
  out.rows = Dense(fm.rows.rows, out.schema_width());
  for (std::size_t r = 0; r < fm.rows.rows; ++r) {
    std::size_t col = 0;
    for (const auto& [off, w] : spans)
      for (std::size_t c = 0; c < w; ++c) out.rows(r, col++) = fm.rows(r, off + c);
  }
  return out;
}

// Persists rows as VFE1 keyed by node hash, plus a JSON sidecar naming the
// block widths.
inline void save_feature_matrix(const FeatureMatrix& fm, const RoadGraph& graph,
                                const std::string& path, const std::string& schema_path) {
  if (fm.rows.rows != graph.size()) throw SchemaError("save_feature_matrix: row/node count mismatch");
  EmbeddingTable table;
  table.dim = std::uint32_t(fm.width());
  std::vector<std::uint64_t> order;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    std::vector<float> row(fm.width());
    for (std::size_t c = 0; c < fm.width(); ++c) row[c] = float(fm.rows(i, c));
    table.vectors.emplace(graph.node_hash[i], std::move(row));
    order.push_back(graph.node_hash[i]);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  save_embeddings_vfe1(table, out, order);

  nlohmann::json j;
  j["version"] = 1;
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : fm.schema) blocks.push_back({{"name", b.name}, {"width", b.width}});
  j["blocks"] = std::move(blocks);
  std::ofstream sout(schema_path);
  if (!sout) throw IoError("cannot write " + schema_path);
  sout << j.dump(2) << "\n";
}

inline FeatureMatrix load_feature_matrix(const RoadGraph& graph, const std::string& path,
                                         const std::string& schema_path) {
  EmbeddingTable table = load_embeddings(path);
  std::ifstream sin(schema_path);
  if (!sin) throw IoError("cannot open " + schema_path);
  nlohmann::json j = nlohmann::json::parse(sin);
  FeatureMatrix fm;
  for (const auto& b : j.at("blocks"))
    fm.schema.push_back({b.at("name").get<std::string>(), b.at("width").get<std::size_t>()});
  if (fm.schema_width() != table.dim)
    throw SchemaError("feature matrix: schema width != stored row width");
  fm.rows = Dense(graph.size(), table.dim);
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const std::vector<float>* row = table.find(graph.node_hash[i]);
    if (!row) throw SchemaError("feature matrix: missing row for node " + graph.nodes[i].dual_id());
    for (std::size_t c = 0; c < table.dim; ++c) fm.rows(i, c) = double((*row)[c]);
  }
  return fm;
}

}  // namespace roadgnn
