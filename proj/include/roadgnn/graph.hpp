#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <tuple>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "roadgnn/common.hpp"

namespace roadgnn {

struct Intersection {
  std::string id;
  double lon = 0.0;
  double lat = 0.0;
};

// One road segment of the primal (intersections-as-nodes) network.
struct Segment {
  std::string u;  // tail intersection id
  std::string v;  // head intersection id
  int key = 0;
  std::optional<std::string> highway;
  std::optional<double> length;  // meters
  std::optional<bool> oneway;
  std::optional<bool> bridge;
  std::optional<bool> tunnel;
  std::optional<std::vector<std::pair<double, double>>> geometry;  // (lon, lat)

  std::string dual_id() const { return u + "-" + v + "-" + std::to_string(key); }
};

struct PrimalGraph {
  std::vector<Intersection> intersections;
  std::vector<Segment> segments;
  std::unordered_map<std::string, std::size_t> intersection_index;

  void validate() const {
    std::set<std::tuple<std::string, std::string, int>> seen;
    for (const Segment& s : segments) {
      auto it_u = intersection_index.find(s.u);
      auto it_v = intersection_index.find(s.v);
      if (it_u == intersection_index.end() || it_v == intersection_index.end())
        throw SchemaError("segment (" + s.u + "," + s.v + ") references unknown intersection");
      if (!seen.insert({s.u, s.v, s.key}).second)
        throw SchemaError("duplicate segment (" + s.u + "," + s.v + "," + std::to_string(s.key) + ")");
      if (s.geometry) {
        if (s.geometry->size() < 2)
          throw SchemaError("segment " + s.dual_id() + ": geometry needs >= 2 points");
        const auto& a = s.geometry->front();
        const auto& b = s.geometry->back();
        const Intersection& iu = intersections[it_u->second];
        const Intersection& iv = intersections[it_v->second];
        const double tol = 1e-6;
        if (std::abs(a.first - iu.lon) > tol || std::abs(a.second - iu.lat) > tol ||
            std::abs(b.first - iv.lon) > tol || std::abs(b.second - iv.lat) > tol)
          throw SchemaError("segment " + s.dual_id() + ": geometry endpoints do not match intersections");
      }
    }
  }
};

enum class Split : std::uint8_t { None, Train, Val, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    default: return "none";
  }
}

enum class UturnPolicy { Include, Exclude };
enum class Direction { In, Out, Both };

// Dual graph: one node per primal road segment, directed edge a->b iff
// head(a) == tail(b).
struct RoadGraph {
  std::vector<Segment> nodes;          // attribute maps carried over verbatim
  std::vector<std::uint64_t> node_hash;
  std::vector<std::array<double, 4>> endpoints;  // tail lon, tail lat, head lon, head lat
  std::vector<std::vector<int>> out_adj;
  std::vector<std::vector<int>> in_adj;
  std::vector<int> labels;             // class index, -1 = unlabeled
  std::vector<std::string> class_names;
  std::vector<Split> splits;

  std::size_t size() const { return nodes.size(); }
  std::size_t num_edges() const {
    std::size_t n = 0;
    for (const auto& a : out_adj) n += a.size();
    return n;
  }
  std::size_t labeled_count() const {
    return std::size_t(std::count_if(labels.begin(), labels.end(), [](int l) { return l >= 0; }));
  }

  std::vector<int> split_indices(Split s) const {
    std::vector<int> idx;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (splits[i] == s) idx.push_back(int(i));
    return idx;
  }
};

struct SplitSpec {
  std::uint64_t seed = 0;
  std::size_t val_count = 0;
  std::size_t test_count = 0;
};

namespace detail {

inline std::optional<bool> opt_bool(const nlohmann::json& j, const char* k) {
  if (!j.contains(k) || j[k].is_null()) return std::nullopt;
  return j[k].get<bool>();
}

inline Segment segment_from_json(const nlohmann::json& e) {
  Segment s;
  s.u = e.at("u").get<std::string>();
  s.v = e.at("v").get<std::string>();
  s.key = e.value("key", 0);
  if (e.contains("highway") && !e["highway"].is_null()) s.highway = e["highway"].get<std::string>();
  if (e.contains("length") && !e["length"].is_null()) s.length = e["length"].get<double>();
  s.oneway = opt_bool(e, "oneway");
  s.bridge = opt_bool(e, "bridge");
  s.tunnel = opt_bool(e, "tunnel");
  if (e.contains("geometry") && !e["geometry"].is_null()) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : e["geometry"]) pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    s.geometry = std::move(pts);
  }
  return s;
}

inline nlohmann::json segment_to_json(const Segment& s) {
  nlohmann::json e;
  e["u"] = s.u;
  e["v"] = s.v;
  e["key"] = s.key;
  if (s.highway) e["highway"] = *s.highway;
  if (s.length) e["length"] = *s.length;
  if (s.oneway) e["oneway"] = *s.oneway;
  if (s.bridge) e["bridge"] = *s.bridge;
  if (s.tunnel) e["tunnel"] = *s.tunnel;
  if (s.geometry) {
    nlohmann::json g = nlohmann::json::array();
    for (const auto& [lon, lat] : *s.geometry) g.push_back({lon, lat});
    e["geometry"] = std::move(g);
  }
  return e;
}

}  // namespace detail

inline PrimalGraph parse_primal(std::istream& in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("primal JSON parse error: ") + e.what());
  }
  PrimalGraph g;
  for (const auto& n : j.at("nodes")) {
    Intersection it;
    it.id = n.at("id").get<std::string>();
    it.lon = n.at("lon").get<double>();
    it.lat = n.at("lat").get<double>();
    if (!g.intersection_index.emplace(it.id, g.intersections.size()).second)
      throw SchemaError("duplicate intersection id " + it.id);
    g.intersections.push_back(std::move(it));
  }
  for (const auto& e : j.at("edges")) g.segments.push_back(detail::segment_from_json(e));
  g.validate();
  return g;
}

inline PrimalGraph parse_primal_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return parse_primal(in);
}

// Builds the class list from the distinct highway tags, sorted for
// reproducibility across runs and platforms.
inline RoadGraph to_dual(const PrimalGraph& primal, UturnPolicy uturn = UturnPolicy::Include) {
  RoadGraph g;
  g.nodes = primal.segments;
  const std::size_t n = g.nodes.size();
  g.node_hash.reserve(n);
  g.endpoints.reserve(n);
  for (const Segment& s : g.nodes) {
    g.node_hash.push_back(fnv1a64(s.dual_id()));
    const Intersection& iu = primal.intersections[primal.intersection_index.at(s.u)];
    const Intersection& iv = primal.intersections[primal.intersection_index.at(s.v)];
    g.endpoints.push_back({iu.lon, iu.lat, iv.lon, iv.lat});
  }

  std::set<std::string> classes;
  for (const Segment& s : g.nodes)
    if (s.highway) classes.insert(*s.highway);
  g.class_names.assign(classes.begin(), classes.end());
  std::map<std::string, int> class_index;
  for (std::size_t i = 0; i < g.class_names.size(); ++i) class_index[g.class_names[i]] = int(i);

  g.labels.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i)
    if (g.nodes[i].highway) g.labels[i] = class_index.at(*g.nodes[i].highway);

  std::unordered_map<std::string, std::vector<int>> by_tail;
  for (std::size_t i = 0; i < n; ++i) by_tail[g.nodes[i].u].push_back(int(i));

  g.out_adj.assign(n, {});
  g.in_adj.assign(n, {});
  for (std::size_t a = 0; a < n; ++a) {
    auto it = by_tail.find(g.nodes[a].v);
    if (it == by_tail.end()) continue;
    for (int b : it->second) {
      if (std::size_t(b) == a) continue;
      if (uturn == UturnPolicy::Exclude && g.nodes[b].u == g.nodes[a].v &&
          g.nodes[b].v == g.nodes[a].u)
        continue;
      g.out_adj[a].push_back(b);
      g.in_adj[b].push_back(int(a));
    }
  }
  for (auto& adj : g.out_adj) std::sort(adj.begin(), adj.end());
  for (auto& adj : g.in_adj) std::sort(adj.begin(), adj.end());

  g.splits.assign(n, Split::None);
  return g;
}

// Deterministic split of labeled nodes: val, then test, remainder to train.
inline void split_nodes(RoadGraph& graph, const SplitSpec& spec) {
  std::vector<int> labeled;
  for (std::size_t i = 0; i < graph.size(); ++i)
    if (graph.labels[i] >= 0) labeled.push_back(int(i));
  if (spec.val_count + spec.test_count > labeled.size())
    throw SchemaError("split_nodes: requested " + std::to_string(spec.val_count + spec.test_count) +
                      " val+test nodes but only " + std::to_string(labeled.size()) + " labeled");
  Rng rng(spec.seed);
  std::shuffle(labeled.begin(), labeled.end(), rng);
  std::fill(graph.splits.begin(), graph.splits.end(), Split::None);
  std::size_t i = 0;
  for (; i < spec.val_count; ++i) graph.splits[labeled[i]] = Split::Val;
  for (; i < spec.val_count + spec.test_count; ++i) graph.splits[labeled[i]] = Split::Test;
  for (; i < labeled.size(); ++i) graph.splits[labeled[i]] = Split::Train;
}

inline std::vector<int> neighbors(const RoadGraph& graph, int v, Direction dir) {
  if (v < 0 || std::size_t(v) >= graph.size())
    throw SchemaError("neighbors: unknown node " + std::to_string(v));
  std::vector<int> out;
  if (dir == Direction::Out || dir == Direction::Both)
    out.insert(out.end(), graph.out_adj[v].begin(), graph.out_adj[v].end());
  if (dir == Direction::In || dir == Direction::Both)
    out.insert(out.end(), graph.in_adj[v].begin(), graph.in_adj[v].end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline void save_road_graph(const RoadGraph& g, const std::string& path) {
  nlohmann::json j;
  j["dual"] = true;
  j["classes"] = g.class_names;
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < g.size(); ++i) {
    nlohmann::json n = detail::segment_to_json(g.nodes[i]);
    n["split"] = split_name(g.splits[i]);
    n["tail"] = {g.endpoints[i][0], g.endpoints[i][1]};
    n["head"] = {g.endpoints[i][2], g.endpoints[i][3]};
    nodes.push_back(std::move(n));
  }
  j["nodes"] = std::move(nodes);
  nlohmann::json edges = nlohmann::json::array();
  for (std::size_t a = 0; a < g.size(); ++a)
    for (int b : g.out_adj[a]) edges.push_back({int(a), b});
  j["edges"] = std::move(edges);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump() << "\n";
}

inline RoadGraph load_road_graph(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("road graph parse error: ") + e.what());
  }
  if (!j.value("dual", false)) throw SchemaError(path + ": not a dual road graph file");
  RoadGraph g;
  g.class_names = j.at("classes").get<std::vector<std::string>>();
  std::map<std::string, int> class_index;
  for (std::size_t i = 0; i < g.class_names.size(); ++i) class_index[g.class_names[i]] = int(i);
  for (const auto& n : j.at("nodes")) {
    Segment s = detail::segment_from_json(n);
    const std::string sp = n.value("split", "none");
    g.splits.push_back(sp == "train" ? Split::Train
                       : sp == "val" ? Split::Val
                       : sp == "test" ? Split::Test
                                      : Split::None);
    g.labels.push_back(s.highway ? class_index.at(*s.highway) : -1);
    g.node_hash.push_back(fnv1a64(s.dual_id()));
    std::array<double, 4> ep{0, 0, 0, 0};
    if (n.contains("tail")) {
      ep[0] = n["tail"][0].get<double>();
      ep[1] = n["tail"][1].get<double>();
      ep[2] = n["head"][0].get<double>();
      ep[3] = n["head"][1].get<double>();
    } else if (s.geometry && !s.geometry->empty()) {
      ep = {s.geometry->front().first, s.geometry->front().second, s.geometry->back().first,
            s.geometry->back().second};
    }
    g.endpoints.push_back(ep);
    g.nodes.push_back(std::move(s));
  }
  g.out_adj.assign(g.size(), {});
  g.in_adj.assign(g.size(), {});
  for (const auto& e : j.at("edges")) {
    const int a = e.at(0).get<int>(), b = e.at(1).get<int>();
    g.out_adj[a].push_back(b);
    g.in_adj[b].push_back(a);
  }
  for (auto& adj : g.out_adj) std::sort(adj.begin(), adj.end());
  for (auto& adj : g.in_adj) std::sort(adj.begin(), adj.end());
  return g;
}

}  // namespace roadgnn
