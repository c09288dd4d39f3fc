#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "roadgnn/dense.hpp"
#include "roadgnn/features.hpp"
#include "roadgnn/graph.hpp"

namespace roadgnn {

enum class GnnVariant { Gcn, Sage };

inline const char* variant_name(GnnVariant v) { return v == GnnVariant::Gcn ? "gcn" : "sage"; }

// Two-layer message-passing model with a single FC classifier head.
// GCN layers mean-aggregate over {self} u {neighbors}; SAGE layers
// concatenate the self representation with the neighbor mean.
struct GnnModel {
  GnnVariant variant = GnnVariant::Sage;
  std::vector<LinearLayer> layers;
  LinearLayer classifier;
  double dropout_rate = 0.0;

  std::size_t depth() const { return layers.size(); }
  std::size_t input_dim() const {
    return variant == GnnVariant::Sage ? layers.front().in_dim() / 2 : layers.front().in_dim();
  }
  std::size_t num_classes() const { return classifier.out_dim(); }

  std::vector<Dense*> params() {
    std::vector<Dense*> p;
    for (auto& l : layers) {
      p.push_back(&l.weight);
      p.push_back(&l.bias);
    }
    p.push_back(&classifier.weight);
    p.push_back(&classifier.bias);
    return p;
  }
  // weight decay applies to weights only, never biases
  std::vector<bool> decay_mask() const {
    std::vector<bool> m;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      m.push_back(true);
      m.push_back(false);
    }
    m.push_back(true);
    m.push_back(false);
    return m;
  }
};

inline GnnModel make_model(GnnVariant variant, std::size_t in_dim, std::size_t hidden_dim,
                           std::size_t num_classes, double dropout_rate, Rng& rng,
                           std::size_t depth = 2) {
  GnnModel m;
  m.variant = variant;
  m.dropout_rate = dropout_rate;
  std::size_t cur = in_dim;
  for (std::size_t k = 0; k < depth; ++k) {
    const std::size_t layer_in = variant == GnnVariant::Sage ? 2 * cur : cur;
    m.layers.emplace_back(hidden_dim, layer_in);
    init_linear(m.layers.back(), rng);
    cur = hidden_dim;
  }
  m.classifier = LinearLayer(num_classes, cur);
  init_linear(m.classifier, rng);
  return m;
}

// Gradient buffers shaped like the model parameters.
struct GnnGradients {
  std::vector<LinearLayer> layers;
  LinearLayer classifier;

  explicit GnnGradients(const GnnModel& m) {
    for (const auto& l : m.layers) layers.emplace_back(l.out_dim(), l.in_dim());
    classifier = LinearLayer(m.classifier.out_dim(), m.classifier.in_dim());
  }
  std::vector<const Dense*> as_list() const {
    std::vector<const Dense*> g;
    for (const auto& l : layers) {
      g.push_back(&l.weight);
      g.push_back(&l.bias);
    }
    g.push_back(&classifier.weight);
    g.push_back(&classifier.bias);
    return g;
  }
};

inline std::vector<double> mean_aggregate(const std::vector<std::vector<double>>& vectors,
                                          std::size_t expected_len) {
  std::vector<double> out(expected_len, 0.0);
  if (vectors.empty()) return out;
  for (const auto& v : vectors) {
    if (v.size() != expected_len) throw SchemaError("mean_aggregate: length mismatch");
    for (std::size_t i = 0; i < expected_len; ++i) out[i] += v[i];
  }
  for (double& x : out) x /= double(vectors.size());
  return out;
}

// sigma(W * mean({h_self} u {h_neighbors}) + b); pass apply_relu=false for
// the raw linear output.
inline std::vector<double> gcn_layer_forward(const LinearLayer& layer,
                                             const std::vector<double>& h_self,
                                             const std::vector<std::vector<double>>& h_neighbors,
                                             bool apply_relu = true) {
  std::vector<std::vector<double>> members;
  members.reserve(1 + h_neighbors.size());
  members.push_back(h_self);
  for (const auto& h : h_neighbors) members.push_back(h);
  const std::vector<double> agg = mean_aggregate(members, layer.in_dim());
  Dense in(1, layer.in_dim());
  std::copy(agg.begin(), agg.end(), in.v.begin());
  Dense out = linear_forward(layer, in);
  if (apply_relu) out = relu(out);
  return out.v;
}

// sigma(W * (h_self (+) mean({h_neighbors})) + b)
inline std::vector<double> sage_layer_forward(const LinearLayer& layer,
                                              const std::vector<double>& h_self,
                                              const std::vector<std::vector<double>>& h_neighbors,
                                              bool apply_relu = true) {
  if (layer.in_dim() != 2 * h_self.size())
    throw SchemaError("sage_layer_forward: layer in-dim must be 2x feature dim");
  const std::vector<double> agg = mean_aggregate(h_neighbors, h_self.size());
  Dense in(1, layer.in_dim());
  std::copy(h_self.begin(), h_self.end(), in.v.begin());
  std::copy(agg.begin(), agg.end(), in.v.begin() + std::ptrdiff_t(h_self.size()));
  Dense out = linear_forward(layer, in);
  if (apply_relu) out = relu(out);
  return out.v;
}

// Layered neighborhood sample. layers[k] computes depth-(k+1)
// representations: per target, the sampled neighbor ids. base_nodes are the
// ids whose raw features seed the forward pass.
struct SampledBlock {
  struct Layer {
    std::vector<int> targets;
    std::vector<std::vector<int>> neighbor_ids;
  };
  std::vector<Layer> layers;  // ordered depth 1 .. K
  std::vector<int> base_nodes;
  std::vector<int> fanouts;
};

// GraphSAGE-style layered sampling. Nodes with degree <= fan-out keep their
// full neighbor list (so fan-outs >= max degree reproduce the dense
// neighborhood exactly); larger degrees are subsampled uniformly without
// replacement. fanout < 0 means unbounded.
inline SampledBlock sample_neighborhood(const RoadGraph& graph, const std::vector<int>& targets,
                                        const std::vector<int>& fanouts, Rng& rng,
                                        Direction dir = Direction::Both) {
  const std::size_t depth = fanouts.size();
  for (int t : targets)
    if (t < 0 || std::size_t(t) >= graph.size())
      throw SchemaError("sample_neighborhood: unknown target " + std::to_string(t));

  SampledBlock block;
  block.fanouts = fanouts;
  block.layers.resize(depth);
  std::vector<int> need = targets;
  for (std::size_t k = depth; k >= 1; --k) {
    auto& layer = block.layers[k - 1];
    layer.targets = need;
    std::vector<int> next = need;
    const int fanout = fanouts[k - 1];
    for (int t : layer.targets) {
      std::vector<int> nbrs = neighbors(graph, t, dir);
      if (fanout >= 0 && nbrs.size() > std::size_t(fanout)) {
        std::vector<int> sampled;
        std::sample(nbrs.begin(), nbrs.end(), std::back_inserter(sampled), fanout, rng);
        nbrs = std::move(sampled);
      }
      next.insert(next.end(), nbrs.begin(), nbrs.end());
      layer.neighbor_ids.push_back(std::move(nbrs));
    }
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    need = std::move(next);
  }
  block.base_nodes = std::move(need);
  return block;
}

// Full-neighborhood block: the dense forward used for deterministic eval.
inline SampledBlock full_block(const RoadGraph& graph, const std::vector<int>& targets,
                               std::size_t depth, Direction dir = Direction::Both) {
  Rng unused(0);
  return sample_neighborhood(graph, targets, std::vector<int>(depth, -1), unused, dir);
}

struct ForwardCache {
  const SampledBlock* block = nullptr;
  std::vector<std::vector<int>> level_nodes;           // per depth 0..K
  std::vector<std::unordered_map<int, int>> row_of;    // id -> row, per depth
  std::vector<Dense> h;          // post-activation (and dropout) reps per depth; h[0] = features
  std::vector<Dense> agg_in;     // per layer: rows fed to the linear map
  std::vector<Dense> pre_act;    // per layer: linear outputs
  std::vector<Dense> drop_mask;  // per layer
  Dense logits;
};

// Depth-wise forward over a sampled block. Dropout follows each hidden
// ReLU and is active only in train mode.
inline ForwardCache model_forward(const GnnModel& model, const FeatureMatrix& features,
                                  const SampledBlock& block, Mode mode, Rng& rng) {
  if (block.layers.size() != model.depth())
    throw SchemaError("model_forward: block depth != model depth");
  ForwardCache cache;
  cache.block = &block;
  const std::size_t depth = model.depth();
  cache.level_nodes.resize(depth + 1);
  cache.row_of.resize(depth + 1);
  cache.level_nodes[0] = block.base_nodes;
  for (std::size_t k = 1; k <= depth; ++k) cache.level_nodes[k] = block.layers[k - 1].targets;
  for (std::size_t k = 0; k <= depth; ++k)
    for (std::size_t i = 0; i < cache.level_nodes[k].size(); ++i)
      cache.row_of[k][cache.level_nodes[k][i]] = int(i);

  cache.h.resize(depth + 1);
  cache.agg_in.resize(depth);
  cache.pre_act.resize(depth);
  cache.drop_mask.resize(depth);

  const std::size_t in_dim = model.input_dim();
  if (features.width() != in_dim)
    throw SchemaError("model_forward: feature width " + std::to_string(features.width()) +
                      " != model input dim " + std::to_string(in_dim));
  cache.h[0] = Dense(cache.level_nodes[0].size(), in_dim);
  for (std::size_t i = 0; i < cache.level_nodes[0].size(); ++i) {
    const int id = cache.level_nodes[0][i];
    if (std::size_t(id) >= features.rows.rows)
      throw SchemaError("model_forward: missing feature row for node " + std::to_string(id));
    std::copy(features.rows.row(id), features.rows.row(id) + in_dim, cache.h[0].row(i));
  }

  for (std::size_t k = 1; k <= depth; ++k) {
    const auto& layer_spec = block.layers[k - 1];
    const LinearLayer& lin = model.layers[k - 1];
    const Dense& h_prev = cache.h[k - 1];
    const auto& prev_rows = cache.row_of[k - 1];
    const std::size_t prev_dim = h_prev.cols;

    Dense agg(layer_spec.targets.size(), lin.in_dim());
    for (std::size_t i = 0; i < layer_spec.targets.size(); ++i) {
      const int self_row = prev_rows.at(layer_spec.targets[i]);
      const auto& nbrs = layer_spec.neighbor_ids[i];
      double* out = agg.row(i);
      if (model.variant == GnnVariant::Gcn) {
        const double inv = 1.0 / double(1 + nbrs.size());
        for (std::size_t c = 0; c < prev_dim; ++c) out[c] = h_prev(self_row, c) * inv;
        for (int nb : nbrs) {
          const int r = prev_rows.at(nb);
          for (std::size_t c = 0; c < prev_dim; ++c) out[c] += h_prev(r, c) * inv;
        }
      } else {
        for (std::size_t c = 0; c < prev_dim; ++c) out[c] = h_prev(self_row, c);
        if (!nbrs.empty()) {
          const double inv = 1.0 / double(nbrs.size());
          for (int nb : nbrs) {
            const int r = prev_rows.at(nb);
            for (std::size_t c = 0; c < prev_dim; ++c) out[prev_dim + c] += h_prev(r, c) * inv;
          }
        }
      }
    }
    cache.agg_in[k - 1] = std::move(agg);
    cache.pre_act[k - 1] = linear_forward(lin, cache.agg_in[k - 1]);
    Dense act = relu(cache.pre_act[k - 1]);
    cache.h[k] = dropout(act, model.dropout_rate, mode, rng, &cache.drop_mask[k - 1]);
  }

  cache.logits = linear_forward(model.classifier, cache.h[depth]);
  return cache;
}

// Latent node representations z_v (final-depth rows).
inline const Dense& latent(const ForwardCache& cache) { return cache.h.back(); }

// Exact chain rule through the sampled block; grad_logits rows align with
// the block's final targets.
inline GnnGradients model_backward(const GnnModel& model, const ForwardCache& cache,
                                   const Dense& grad_logits) {
  if (!cache.block) throw SchemaError("model_backward: stale forward cache");
  const std::size_t depth = model.depth();
  if (grad_logits.rows != cache.logits.rows || grad_logits.cols != cache.logits.cols)
    throw SchemaError("model_backward: grad_logits shape mismatch");
  GnnGradients grads(model);

  Dense d_h = linear_backward(model.classifier, cache.h[depth], grad_logits,
                              grads.classifier.weight, grads.classifier.bias);

  for (std::size_t k = depth; k >= 1; --k) {
    const auto& layer_spec = cache.block->layers[k - 1];
    const LinearLayer& lin = model.layers[k - 1];
    const Dense d_act = apply_mask(d_h, cache.drop_mask[k - 1]);
    const Dense d_pre = relu_backward(cache.pre_act[k - 1], d_act);
    const Dense d_agg = linear_backward(lin, cache.agg_in[k - 1], d_pre,
                                        grads.layers[k - 1].weight, grads.layers[k - 1].bias);

    const Dense& h_prev = cache.h[k - 1];
    const auto& prev_rows = cache.row_of[k - 1];
    const std::size_t prev_dim = h_prev.cols;
    Dense d_prev(h_prev.rows, prev_dim);
    for (std::size_t i = 0; i < layer_spec.targets.size(); ++i) {
      const int self_row = prev_rows.at(layer_spec.targets[i]);
      const auto& nbrs = layer_spec.neighbor_ids[i];
      const double* g = d_agg.row(i);
      if (model.variant == GnnVariant::Gcn) {
        const double inv = 1.0 / double(1 + nbrs.size());
        for (std::size_t c = 0; c < prev_dim; ++c) d_prev(self_row, c) += g[c] * inv;
        for (int nb : nbrs) {
          const int r = prev_rows.at(nb);
          for (std::size_t c = 0; c < prev_dim; ++c) d_prev(r, c) += g[c] * inv;
        }
      } else {
        for (std::size_t c = 0; c < prev_dim; ++c) d_prev(self_row, c) += g[c];
        if (!nbrs.empty()) {
          const double inv = 1.0 / double(nbrs.size());
          for (int nb : nbrs) {
            const int r = prev_rows.at(nb);
            for (std::size_t c = 0; c < prev_dim; ++c) d_prev(r, c) += g[prev_dim + c] * inv;
          }
        }
      }
    }
    d_h = std::move(d_prev);
  }
  return grads;
}

// Checkpoint: magic "RGN1", u32 header length, JSON header, then f64
// parameter blocks in declaration order.
inline void save_checkpoint(const GnnModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  nlohmann::json j;
  j["variant"] = variant_name(model.variant);
  j["dropout"] = model.dropout_rate;
  j["classes"] = model.num_classes();
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& l : model.layers) dims.push_back({l.out_dim(), l.in_dim()});
  j["layers"] = std::move(dims);
  j["classifier"] = {model.classifier.out_dim(), model.classifier.in_dim()};
  const std::string header = j.dump();
  out.write("RGN1", 4);
  const std::uint32_t len = std::uint32_t(header.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(header.data(), std::streamsize(header.size()));
  GnnModel& m = const_cast<GnnModel&>(model);
  for (const Dense* p : m.params())
    out.write(reinterpret_cast<const char*>(p->v.data()), std::streamsize(p->v.size() * 8));
}

inline GnnModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string_view(magic, 4) != "RGN1")
    throw IoError("checkpoint: bad magic (want RGN1)");
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  std::string header(len, '\0');
  in.read(header.data(), len);
  if (!in) throw IoError("checkpoint: truncated header");
  nlohmann::json j = nlohmann::json::parse(header);
  GnnModel model;
  model.variant = j.at("variant").get<std::string>() == "gcn" ? GnnVariant::Gcn : GnnVariant::Sage;
  model.dropout_rate = j.at("dropout").get<double>();
  for (const auto& d : j.at("layers"))
    model.layers.emplace_back(d.at(0).get<std::size_t>(), d.at(1).get<std::size_t>());
  model.classifier = LinearLayer(j.at("classifier").at(0).get<std::size_t>(),
                                 j.at("classifier").at(1).get<std::size_t>());
  for (Dense* p : model.params()) {
    in.read(reinterpret_cast<char*>(p->v.data()), std::streamsize(p->v.size() * 8));
    if (!in) throw IoError("checkpoint: truncated parameters");
  }
  return model;
}

}  // namespace roadgnn
