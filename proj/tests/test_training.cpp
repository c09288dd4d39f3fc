#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "test_util.hpp"

using namespace roadgnn;

namespace {

// small logistic-regression probe used as an oracle for feature-block
// informativeness; trains on the first 70% of rows and reports held-out
// accuracy on the rest
double linear_probe_accuracy(const Dense& x, const std::vector<int>& labels, std::size_t classes,
                             int iters = 200, double lr = 0.5) {
  Rng rng(0);
  LinearLayer probe(classes, x.cols);
  init_linear(probe, rng);
  const std::size_t n_train = x.rows * 7 / 10;
  // standardize columns (train statistics) for a fair probe
  Dense xs = x;
  for (std::size_t c = 0; c < x.cols; ++c) {
    double mean = 0, ss = 0;
    for (std::size_t r = 0; r < n_train; ++r) mean += x(r, c);
    mean /= double(n_train);
    for (std::size_t r = 0; r < n_train; ++r) ss += (x(r, c) - mean) * (x(r, c) - mean);
    const double sd = std::sqrt(ss / double(n_train));
    for (std::size_t r = 0; r < x.rows; ++r) xs(r, c) = sd < 1e-12 ? 0.0 : (x(r, c) - mean) / sd;
  }
  Dense xtrain(n_train, x.cols);
  std::copy(xs.v.begin(), xs.v.begin() + std::ptrdiff_t(n_train * x.cols), xtrain.v.begin());
  const std::vector<int> ytrain(labels.begin(), labels.begin() + std::ptrdiff_t(n_train));
  OptimizerState opt;
  opt.base_lr = opt.lr = lr;
  opt.momentum = 0.9;
  opt.attach({&probe.weight, &probe.bias});
  for (int it = 0; it < iters; ++it) {
    const Dense logits = linear_forward(probe, xtrain);
    auto [loss, grad] = softmax_cross_entropy(logits, ytrain);
    Dense gw(probe.weight.rows, probe.weight.cols), gb(1, probe.bias.cols);
    linear_backward(probe, xtrain, grad, gw, gb);
    sgd_step({&probe.weight, &probe.bias}, {&gw, &gb}, opt);
  }
  const Dense logits = linear_forward(probe, xs);
  std::size_t correct = 0;
  for (std::size_t r = n_train; r < xs.rows; ++r) {
    const double* row = logits.row(r);
    const int pred = int(std::max_element(row, row + logits.cols) - row);
    correct += pred == labels[r];
  }
  return double(correct) / double(xs.rows - n_train);
}

}  // namespace

TEST_CASE("micro_f1 basics") {
  CHECK(micro_f1({{5, 0}, {0, 5}}) == 1.0);
  CHECK(micro_f1({{2, 1}, {1, 2}}) == Catch::Approx(4.0 / 6.0));
  CHECK(micro_f1({{0, 4}, {3, 0}}) == 0.0);
  CHECK_THROWS_AS(micro_f1({{0, 0}, {0, 0}}), SchemaError);
}

TEST_CASE("micro_f1 equals accuracy for exhaustive single-label predictions") {
  Rng rng(2);
  std::uniform_int_distribution<int> cls(0, 7);
  for (int trial = 0; trial < 50; ++trial) {
    Confusion m(8, std::vector<std::size_t>(8, 0));
    std::size_t correct = 0, total = 1000;
    for (std::size_t i = 0; i < total; ++i) {
      const int t = cls(rng), p = cls(rng);
      ++m[t][p];
      correct += t == p;
    }
    CHECK(micro_f1(m) == double(correct) / double(total));
  }
}

TEST_CASE("compute_metrics per-class values") {
  const Metrics m = compute_metrics({{3, 1}, {0, 4}});
  CHECK(m.total() == 8);
  CHECK(m.precision[0] == 1.0);
  CHECK(m.recall[0] == Catch::Approx(0.75));
  CHECK(m.precision[1] == Catch::Approx(0.8));
  CHECK(m.recall[1] == 1.0);
  CHECK(m.micro_f1 == Catch::Approx(7.0 / 8.0));
}

TEST_CASE("grid enumeration is the full cartesian product") {
  GridSpace space;
  TrainConfig base;
  base.seed = 3;
  const auto configs = enumerate_grid(space, base);
  REQUIRE(configs.size() == 36);  // 2 * 3 * 2 * 3
  std::set<std::tuple<double, double, double, double>> unique_pts;
  for (const auto& c : configs)
    unique_pts.insert({c.learning_rate, c.gamma, c.weight_decay, c.dropout});
  CHECK(unique_pts.size() == 36);

  GridSpace single{{0.05}, {0.5}, {0.0004}, {0.15}};
  CHECK(enumerate_grid(single, base).size() == 1);
}

TEST_CASE("top_k_average ranks by validation score") {
  std::vector<RunRecord> records;
  const std::vector<double> val = {0.9, 0.8, 0.7, 0.6, 0.5, 0.4};
  const std::vector<double> test = {0.9, 0.8, 0.7, 0.6, 0.5, 0.99};
  for (std::size_t i = 0; i < val.size(); ++i) {
    RunRecord r;
    r.best_val_f1 = val[i];
    Metrics m;
    m.micro_f1 = test[i];
    r.test_metrics = m;
    records.push_back(std::move(r));
  }
  CHECK(top_k_average(records, 5) == Catch::Approx(0.70));
  CHECK(top_k_average(records, 1) == Catch::Approx(0.9));
  CHECK(top_k_average(records, 6) == Catch::Approx((0.9 + 0.8 + 0.7 + 0.6 + 0.5 + 0.99) / 6.0));
  CHECK_THROWS_AS(top_k_average(records, 7), SchemaError);

  // oracle: independent sort-and-mean on shuffled copies
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(records.begin(), records.end(), rng);
    std::vector<std::pair<double, double>> pairs;
    for (const auto& r : records) pairs.emplace_back(r.best_val_f1, r.test_metrics->micro_f1);
    std::sort(pairs.begin(), pairs.end(), [](auto& a, auto& b) { return a.first > b.first; });
    double expect = 0;
    for (int i = 0; i < 5; ++i) expect += pairs[std::size_t(i)].second;
    CHECK(top_k_average(records, 5) == Catch::Approx(expect / 5.0));
  }
}

TEST_CASE("generate_synthetic determinism and class balance") {
  const SyntheticDataset a = generate_synthetic(400, 8, 16, {}, 7);
  const SyntheticDataset b = generate_synthetic(400, 8, 16, {}, 7);
  REQUIRE(a.graph.size() == 400);
  CHECK(a.graph.labels == b.graph.labels);
  CHECK(a.features.rows.v == b.features.rows.v);
  CHECK(a.graph.out_adj == b.graph.out_adj);

  const auto profile = default_imbalance_profile(8);
  std::vector<std::size_t> counts(8, 0);
  for (int l : a.graph.labels) ++counts[std::size_t(l)];
  for (std::size_t c = 0; c < 8; ++c) {
    const double expected = profile[c] * 400.0;
    CHECK(std::abs(double(counts[c]) - expected) <= 1.0 + 1e-9);
  }
  // imbalance: smallest class clearly underrepresented
  CHECK(counts[7] * 3 < counts[0]);
}

TEST_CASE("synthetic informativeness tiers via linear probes") {
  const SyntheticDataset ds = generate_synthetic(1200, 8, 32, {}, 1);
  std::vector<int> labels(ds.graph.labels.begin(), ds.graph.labels.end());

  const FeatureMatrix emb = select_blocks(ds.features, {"embedding"});
  CHECK(linear_probe_accuracy(emb.rows, labels, 8) >= 0.9);

  const FeatureMatrix geo = select_blocks(ds.features, {"geometric", "binary"});
  CHECK(linear_probe_accuracy(geo.rows, labels, 8) <= 0.6);

  const FeatureMatrix hist = select_blocks(ds.features, {"histogram"});
  const double hist_acc = linear_probe_accuracy(hist.rows, labels, 8);
  CHECK(hist_acc > linear_probe_accuracy(geo.rows, labels, 8));
}

TEST_CASE("train on a separable synthetic dataset") {
  SyntheticDataset ds = generate_synthetic(300, 8, 8, {}, 3);
  split_nodes(ds.graph, SplitSpec{1, 40, 40});
  std::vector<bool> mask(ds.graph.size(), false);
  for (int i : ds.graph.split_indices(Split::Train)) mask[std::size_t(i)] = true;
  const FeatureMatrix fm = standardize(ds.features, mask);

  TrainConfig cfg;
  cfg.hidden_dim = 32;
  cfg.epochs = 30;
  cfg.seed = 5;
  const RunRecord record = train(cfg, ds.graph, fm);
  REQUIRE(record.train_loss.size() == 30);
  CHECK(record.train_loss.back() < record.train_loss.front());
  CHECK(record.best_val_f1 > 1.0 / 8.0);
  REQUIRE(record.test_metrics.has_value());
  CHECK(record.test_metrics->total() == 40);
  CHECK(record.best_epoch >= 0);
  CHECK(record.best_epoch < 30);
}

TEST_CASE("train determinism") {
  SyntheticDataset ds = generate_synthetic(200, 8, 8, {}, 4);
  split_nodes(ds.graph, SplitSpec{2, 30, 30});
  TrainConfig cfg;
  cfg.hidden_dim = 16;
  cfg.epochs = 5;
  cfg.seed = 9;
  const RunRecord a = train(cfg, ds.graph, ds.features);
  const RunRecord b = train(cfg, ds.graph, ds.features);
  CHECK(a.train_loss == b.train_loss);
  CHECK(a.val_f1 == b.val_f1);
  CHECK(a.best_epoch == b.best_epoch);
  CHECK(a.test_metrics->confusion == b.test_metrics->confusion);
  for (std::size_t i = 0; i < a.best_model->layers.size(); ++i)
    CHECK(a.best_model->layers[i].weight.v == b.best_model->layers[i].weight.v);
}

TEST_CASE("zero learning rate leaves parameters at initialization") {
  SyntheticDataset ds = generate_synthetic(120, 8, 8, {}, 8);
  split_nodes(ds.graph, SplitSpec{3, 10, 10});
  TrainConfig cfg;
  cfg.hidden_dim = 16;
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;
  cfg.dropout = 0.0;
  cfg.seed = 21;
  const RunRecord record = train(cfg, ds.graph, ds.features);
  Rng rng(cfg.seed);
  const GnnModel init = make_model(cfg.variant, ds.features.width(), cfg.hidden_dim,
                                   ds.graph.class_names.size(), cfg.dropout, rng);
  for (std::size_t k = 0; k < init.layers.size(); ++k)
    CHECK(record.best_model->layers[k].weight.v == init.layers[k].weight.v);
  CHECK(record.best_model->classifier.weight.v == init.classifier.weight.v);
}

TEST_CASE("only training labels drive parameter updates") {
  SyntheticDataset ds = generate_synthetic(200, 8, 8, {}, 11);
  split_nodes(ds.graph, SplitSpec{5, 30, 30});
  TrainConfig cfg;
  cfg.hidden_dim = 16;
  cfg.epochs = 1;
  cfg.seed = 13;
  const RunRecord a = train(cfg, ds.graph, ds.features);

  RoadGraph perturbed = ds.graph;
  for (int i : perturbed.split_indices(Split::Val)) perturbed.labels[i] = (perturbed.labels[i] + 3) % 8;
  for (int i : perturbed.split_indices(Split::Test)) perturbed.labels[i] = (perturbed.labels[i] + 5) % 8;
  const RunRecord b = train(cfg, perturbed, ds.features);

  CHECK(a.train_loss == b.train_loss);
  // single epoch: best_model is the epoch-0 snapshot in both runs
  for (std::size_t k = 0; k < a.best_model->layers.size(); ++k)
    CHECK(a.best_model->layers[k].weight.v == b.best_model->layers[k].weight.v);
  CHECK(a.best_model->classifier.weight.v == b.best_model->classifier.weight.v);
}

TEST_CASE("grid_search ranks by validation and records failures") {
  SyntheticDataset ds = generate_synthetic(150, 8, 8, {}, 17);
  split_nodes(ds.graph, SplitSpec{7, 20, 20});
  GridSpace space{{0.1, 0.01}, {0.5}, {0.0004}, {0.0, 0.15}};
  TrainConfig base;
  base.hidden_dim = 8;
  base.epochs = 3;
  base.seed = 1;
  const auto records = grid_search(space, base, ds.graph, ds.features);
  REQUIRE(records.size() == 4);
  for (std::size_t i = 0; i + 1 < records.size(); ++i)
    CHECK(records[i].best_val_f1 >= records[i + 1].best_val_f1);
  for (const auto& r : records) CHECK_FALSE(r.failed);
}

TEST_CASE("evaluate confusion total equals mask size") {
  SyntheticDataset ds = generate_synthetic(150, 8, 8, {}, 23);
  split_nodes(ds.graph, SplitSpec{11, 25, 25});
  Rng rng(0);
  const GnnModel model = make_model(GnnVariant::Sage, ds.features.width(), 8, 8, 0.0, rng);
  const auto val_ids = ds.graph.split_indices(Split::Val);
  const Metrics m = evaluate(model, ds.graph, ds.features, val_ids);
  CHECK(m.total() == val_ids.size());
  CHECK_THROWS_AS(evaluate(model, ds.graph, ds.features, {}), SchemaError);
}

TEST_CASE("run record serializes to JSON") {
  SyntheticDataset ds = generate_synthetic(120, 8, 8, {}, 29);
  split_nodes(ds.graph, SplitSpec{1, 10, 10});
  TrainConfig cfg;
  cfg.hidden_dim = 8;
  cfg.epochs = 2;
  const RunRecord r = train(cfg, ds.graph, ds.features);
  const auto j = r.to_json();
  CHECK(j["train_loss"].size() == 2);
  CHECK(j["config"]["variant"] == "sage");
  CHECK(j.contains("test_metrics"));
}
