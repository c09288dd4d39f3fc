#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "roadgnn/features.hpp"
#include "roadgnn/gnn.hpp"
#include "roadgnn/graph.hpp"

namespace roadgnn {

struct TrainConfig {
  GnnVariant variant = GnnVariant::Sage;
  std::size_t hidden_dim = 128;
  double learning_rate = 0.05;
  double gamma = 0.5;
  double weight_decay = 0.0004;
  double dropout = 0.15;
  double momentum = 0.9;
  int epochs = 100;
  std::size_t batch_size = 64;
  std::vector<int> fanouts = {25, 10};
  std::uint64_t seed = 0;
  Direction direction = Direction::Both;
  std::vector<std::string> feature_blocks;  // empty = use all blocks as given

  nlohmann::json to_json() const {
    return {{"variant", variant_name(variant)}, {"hidden_dim", hidden_dim},
            {"learning_rate", learning_rate}, {"gamma", gamma},
            {"weight_decay", weight_decay},   {"dropout", dropout},
            {"momentum", momentum},           {"epochs", epochs},
            {"batch_size", batch_size},       {"fanouts", fanouts},
            {"seed", seed},                   {"feature_blocks", feature_blocks}};
  }
};

using Confusion = std::vector<std::vector<std::size_t>>;  // [true][pred]

struct Metrics {
  Confusion confusion;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> precision, recall, f1;

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& row : confusion)
      for (std::size_t c : row) t += c;
    return t;
  }

  nlohmann::json to_json() const {
    return {{"micro_f1", micro_f1}, {"macro_f1", macro_f1}, {"precision", precision},
            {"recall", recall},     {"f1", f1},             {"confusion", confusion}};
  }
};

// Micro-averaged F1 over class-pooled TP/FP/FN. For exhaustive single-label
// classification this equals trace/total, i.e. plain accuracy.
inline double micro_f1(const Confusion& confusion) {
  std::size_t tp = 0, fp = 0, fn = 0, total = 0;
  const std::size_t c = confusion.size();
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      total += confusion[i][j];
      if (i == j)
        tp += confusion[i][j];
      else {
        fn += confusion[i][j];  // true i, predicted j
        fp += confusion[i][j];  // predicted j, true i
      }
    }
  }
  if (total == 0) throw SchemaError("micro_f1: empty confusion matrix");
  return 2.0 * double(tp) / double(2 * tp + fp + fn);
}

inline Metrics compute_metrics(Confusion confusion) {
  Metrics m;
  const std::size_t c = confusion.size();
  m.confusion = std::move(confusion);
  m.micro_f1 = micro_f1(m.confusion);
  m.precision.assign(c, 0.0);
  m.recall.assign(c, 0.0);
  m.f1.assign(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t tp = m.confusion[k][k], row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += m.confusion[k][j];
      col += m.confusion[j][k];
    }
    m.precision[k] = col ? double(tp) / double(col) : 0.0;
    m.recall[k] = row ? double(tp) / double(row) : 0.0;
    m.f1[k] = (m.precision[k] + m.recall[k]) > 0.0
                  ? 2.0 * m.precision[k] * m.recall[k] / (m.precision[k] + m.recall[k])
                  : 0.0;
  }
  m.macro_f1 = std::accumulate(m.f1.begin(), m.f1.end(), 0.0) / double(c);
  return m;
}

// Dense (full-neighborhood) eval-mode predictions over the masked nodes.
inline Metrics evaluate(const GnnModel& model, const RoadGraph& graph,
                        const FeatureMatrix& features, const std::vector<int>& mask,
                        Direction dir = Direction::Both) {
  if (mask.empty()) throw SchemaError("evaluate: empty mask");
  const std::size_t c = graph.class_names.empty() ? model.num_classes() : graph.class_names.size();
  Confusion confusion(c, std::vector<std::size_t>(c, 0));
  Rng rng(0);  // eval mode draws nothing
  const SampledBlock block = full_block(graph, mask, model.depth(), dir);
  const ForwardCache cache = model_forward(model, features, block, Mode::Eval, rng);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const int truth = graph.labels[mask[i]];
    if (truth < 0) continue;
    const double* row = cache.logits.row(i);
    const int pred = int(std::max_element(row, row + cache.logits.cols) - row);
    ++confusion[truth][pred];
  }
  return compute_metrics(std::move(confusion));
}

struct RunRecord {
  TrainConfig config;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_f1;      // per epoch
  int best_epoch = -1;
  double best_val_f1 = 0.0;
  std::optional<Metrics> val_metrics;
  std::optional<Metrics> test_metrics;
  std::optional<GnnModel> best_model;  // best-validation-epoch snapshot
  bool failed = false;
  std::string error;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"config", config.to_json()}, {"train_loss", train_loss},
                        {"val_f1", val_f1},           {"best_epoch", best_epoch},
                        {"best_val_f1", best_val_f1}, {"failed", failed}};
    if (!error.empty()) j["error"] = error;
    if (val_metrics) j["val_metrics"] = val_metrics->to_json();
    if (test_metrics) j["test_metrics"] = test_metrics->to_json();
    return j;
  }
};

// Transductive mini-batch training: every node's features may be touched by
// aggregation, but only training labels enter the loss.
inline RunRecord train(const TrainConfig& config, const RoadGraph& graph,
                       const FeatureMatrix& features) {
  RunRecord record;
  record.config = config;

  FeatureMatrix selected =
      config.feature_blocks.empty() ? features : select_blocks(features, config.feature_blocks);

  std::vector<int> train_ids = graph.split_indices(Split::Train);
  std::vector<int> val_ids = graph.split_indices(Split::Val);
  std::vector<int> test_ids = graph.split_indices(Split::Test);
  if (train_ids.empty()) throw SchemaError("train: graph has no training split");

  Rng rng(config.seed);
  GnnModel model = make_model(config.variant, selected.width(), config.hidden_dim,
                              graph.class_names.size(), config.dropout, rng);
  OptimizerState opt;
  opt.base_lr = config.learning_rate;
  opt.momentum = config.momentum;
  opt.weight_decay = config.weight_decay;
  opt.gamma = config.gamma;
  opt.attach(model.params());

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    lr_schedule_step(opt, epoch);
    std::shuffle(train_ids.begin(), train_ids.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < train_ids.size(); start += config.batch_size) {
      const std::size_t end = std::min(start + config.batch_size, train_ids.size());
      std::vector<int> batch(train_ids.begin() + std::ptrdiff_t(start),
                             train_ids.begin() + std::ptrdiff_t(end));
      const SampledBlock block = sample_neighborhood(graph, batch, config.fanouts, rng,
                                                     config.direction);
      const ForwardCache cache = model_forward(model, selected, block, Mode::Train, rng);
      std::vector<int> labels;
      labels.reserve(batch.size());
      for (int id : batch) labels.push_back(graph.labels[id]);
      auto [loss, grad_logits] = softmax_cross_entropy(cache.logits, labels);
      if (!std::isfinite(loss))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
      const GnnGradients grads = model_backward(model, cache, grad_logits);
      sgd_step(model.params(), grads.as_list(), opt, model.decay_mask());
      epoch_loss += loss;
      ++batches;
    }
    record.train_loss.push_back(epoch_loss / double(batches));

    const std::vector<int>& eval_ids = val_ids.empty() ? train_ids : val_ids;
    const Metrics val = evaluate(model, graph, selected, eval_ids, config.direction);
    record.val_f1.push_back(val.micro_f1);
    if (record.best_epoch < 0 || val.micro_f1 > record.best_val_f1) {
      record.best_epoch = epoch;
      record.best_val_f1 = val.micro_f1;
      record.best_model = model;
    }
  }

  const GnnModel& best = *record.best_model;
  record.val_metrics = evaluate(best, graph, selected, val_ids.empty() ? train_ids : val_ids,
                                config.direction);
  if (!test_ids.empty())
    record.test_metrics = evaluate(best, graph, selected, test_ids, config.direction);
  return record;
}

struct GridSpace {
  std::vector<double> learning_rate = {0.5, 0.05};
  std::vector<double> gamma = {0.2, 0.5, 0.8};
  std::vector<double> weight_decay = {0.0004, 0.0008};
  std::vector<double> dropout = {0.0, 0.15, 0.3};

  std::size_t size() const {
    return learning_rate.size() * gamma.size() * weight_decay.size() * dropout.size();
  }
};

inline std::vector<TrainConfig> enumerate_grid(const GridSpace& space, const TrainConfig& base) {
  std::vector<TrainConfig> configs;
  std::size_t idx = 0;
  for (double lr : space.learning_rate)
    for (double g : space.gamma)
      for (double wd : space.weight_decay)
        for (double dr : space.dropout) {
          TrainConfig c = base;
          c.learning_rate = lr;
          c.gamma = g;
          c.weight_decay = wd;
          c.dropout = dr;
          c.seed = base.seed * 1000003ull + idx;  // reproducible per-config seed
          configs.push_back(c);
          ++idx;
        }
  return configs;
}

// Exhaustive cartesian search, ranked by best validation micro-F1. A run
// that throws is recorded as failed, not fatal.
inline std::vector<RunRecord> grid_search(const GridSpace& space, const TrainConfig& base,
                                          const RoadGraph& graph, const FeatureMatrix& features,
                                          unsigned jobs = 1) {
  const std::vector<TrainConfig> configs = enumerate_grid(space, base);
  if (configs.empty()) throw SchemaError("grid_search: empty space");
  std::vector<RunRecord> records(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < configs.size(); i = next.fetch_add(1)) {
      try {
        records[i] = train(configs[i], graph, features);
      } catch (const std::exception& e) {
        records[i].config = configs[i];
        records[i].failed = true;
        records[i].error = e.what();
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::stable_sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
    if (a.failed != b.failed) return !a.failed;
    return a.best_val_f1 > b.best_val_f1;
  });
  return records;
}

// Mean test metric over the k best-validation records. rank_by_test
// implements the alternative reading of "top 5 runs"; the default ranks by
// validation.
inline double top_k_average(const std::vector<RunRecord>& records, std::size_t k = 5,
                            bool rank_by_test = false) {
  std::vector<const RunRecord*> ok;
  for (const auto& r : records)
    if (!r.failed && r.test_metrics) ok.push_back(&r);
  if (ok.size() < k) throw SchemaError("top_k_average: fewer than k usable records");
  std::stable_sort(ok.begin(), ok.end(), [&](const RunRecord* a, const RunRecord* b) {
    return rank_by_test ? a->test_metrics->micro_f1 > b->test_metrics->micro_f1
                        : a->best_val_f1 > b->best_val_f1;
  });
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += ok[i]->test_metrics->micro_f1;
  return acc / double(k);
}

struct SyntheticDataset {
  RoadGraph graph;
  FeatureMatrix features;  // blocks: geometric, binary, histogram, embedding
  EmbeddingTable embeddings;
};

// Default class-share profile with a few underrepresented classes.
inline std::vector<double> default_imbalance_profile(std::size_t n_classes) {
  std::vector<double> p(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) p[c] = double(n_classes - c);
  // push the tail classes down
  for (std::size_t c = n_classes - 3; c < n_classes; ++c) p[c] *= 0.35;
  const double sum = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& x : p) x /= sum;
  return p;
}

// Grid-shaped dual road graph with planted labels. Three informativeness
// tiers: geometric attributes carry a weak class signal, the histogram-like
// block a moderate one, the embedding block a strong one (class-dependent
// Gaussian means), so relative feature-block value is recoverable by
// training.
inline SyntheticDataset generate_synthetic(std::size_t n_nodes, std::size_t n_classes = 8,
                                           std::size_t embedding_dim = 32,
                                           std::vector<double> profile = {},
                                           std::uint64_t seed = 0) {
  if (n_nodes < 10 * n_classes) throw SchemaError("generate_synthetic: need >= 10 nodes per class");
  if (profile.empty()) profile = default_imbalance_profile(n_classes);
  if (profile.size() != n_classes) throw SchemaError("generate_synthetic: profile size mismatch");

  Rng rng(seed);

  // grid of intersections large enough for n_nodes directed segments
  std::size_t side = 2;
  while (2 * side * (side - 1) < n_nodes) ++side;
  const double spacing = 0.001;  // degrees, ~100 m

  // class counts from the profile, largest-remainder rounding
  std::vector<std::size_t> counts(n_classes);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    counts[c] = std::size_t(profile[c] * double(n_nodes));
    assigned += counts[c];
  }
  for (std::size_t c = 0; assigned < n_nodes; c = (c + 1) % n_classes, ++assigned) ++counts[c];

  std::vector<int> node_class;
  node_class.reserve(n_nodes);
  for (std::size_t c = 0; c < n_classes; ++c)
    node_class.insert(node_class.end(), counts[c], int(c));
  std::shuffle(node_class.begin(), node_class.end(), rng);

  PrimalGraph primal;
  auto inter_id = [&](std::size_t r, std::size_t c) {
    return "i" + std::to_string(r) + "_" + std::to_string(c);
  };
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      Intersection it;
      it.id = inter_id(r, c);
      it.lon = double(c) * spacing;
      it.lat = double(r) * spacing;
      primal.intersection_index.emplace(it.id, primal.intersections.size());
      primal.intersections.push_back(std::move(it));
    }

  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::size_t made = 0;
  auto add_segment = [&](std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) {
    if (made >= n_nodes) return;
    Segment s;
    const bool flip = coin(rng);
    s.u = flip ? inter_id(r1, c1) : inter_id(r0, c0);
    s.v = flip ? inter_id(r0, c0) : inter_id(r1, c1);
    s.key = 0;
    const int cls = node_class[made];
    s.highway = "class_" + std::to_string(cls);
    // weak signal: small class-dependent length shift under heavy noise
    s.length = std::max(10.0, 100.0 + 10.0 * cls + 40.0 * noise(rng));
    s.oneway = std::bernoulli_distribution(0.3 + 0.04 * cls)(rng);
    s.bridge = coin(rng) && coin(rng) && coin(rng);
    s.tunnel = false;
    primal.segments.push_back(std::move(s));
    ++made;
  };
  for (std::size_t r = 0; r < side && made < n_nodes; ++r)
    for (std::size_t c = 0; c + 1 < side && made < n_nodes; ++c) add_segment(r, c, r, c + 1);
  for (std::size_t c = 0; c < side && made < n_nodes; ++c)
    for (std::size_t r = 0; r + 1 < side && made < n_nodes; ++r) add_segment(r, c, r + 1, c);
  if (made < n_nodes) throw SchemaError("generate_synthetic: grid too small");

  SyntheticDataset ds;
  ds.graph = to_dual(primal);

  // geometric + binary from the graph itself
  FeatureOptions opts;
  const FeatureMatrix geo = assemble_features(ds.graph, opts);

  // moderate signal: smoothed per-class bump over 32 bins, shared across RGB
  constexpr std::size_t kBins = 32;
  std::vector<std::vector<double>> hist(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    const int cls = ds.graph.labels[i];
    const double center = 2.0 + double(cls) * 27.0 / double(n_classes - 1);
    std::vector<double>& h = hist[i];
    h.assign(3 * kBins, 0.0);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double sum = 0.0;
      for (std::size_t b = 0; b < kBins; ++b) {
        const double d = double(b) - center;
        double v = std::exp(-d * d / (2.0 * 3.0 * 3.0)) + 0.7 * std::abs(noise(rng));
        h[ch * kBins + b] = v;
        sum += v;
      }
      for (std::size_t b = 0; b < kBins; ++b) h[ch * kBins + b] /= sum;
    }
  }

  // strong signal: well-separated class means in embedding space
  std::vector<std::vector<double>> class_mean(n_classes, std::vector<double>(embedding_dim));
  for (auto& m : class_mean)
    for (double& x : m) x = 3.0 * noise(rng);
  ds.embeddings.dim = std::uint32_t(embedding_dim);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    const auto& m = class_mean[ds.graph.labels[i]];
    std::vector<float> vec(embedding_dim);
    for (std::size_t d = 0; d < embedding_dim; ++d) vec[d] = float(m[d] + noise(rng));
    ds.embeddings.vectors.emplace(ds.graph.node_hash[i], std::move(vec));
  }

  ds.features.schema = geo.schema;
  ds.features.schema.push_back({"histogram", 3 * kBins});
  ds.features.schema.push_back({"embedding", embedding_dim});
  ds.features.rows = Dense(n_nodes, ds.features.schema_width());
  for (std::size_t i = 0; i < n_nodes; ++i) {
    double* row = ds.features.rows.row(i);
    std::size_t col = 0;
    for (std::size_t c = 0; c < geo.width(); ++c) row[col++] = geo.rows(i, c);
    for (double h : hist[i]) row[col++] = h;
    const std::vector<float>& vec = ds.embeddings.vectors.at(ds.graph.node_hash[i]);
    for (float x : vec) row[col++] = double(x);
  }
  return ds;
}

}  // namespace roadgnn
