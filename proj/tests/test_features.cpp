#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "test_util.hpp"

using namespace roadgnn;

namespace {

EmbeddingTable make_table(const RoadGraph& g, std::uint32_t dim, std::uint64_t seed,
                          double coverage = 1.0) {
  Rng rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  EmbeddingTable t;
  t.dim = dim;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (unit(rng) > coverage) continue;
    std::vector<float> v(dim);
    for (float& x : v) x = dist(rng);
    t.vectors.emplace(g.node_hash[i], std::move(v));
  }
  return t;
}

}  // namespace

TEST_CASE("embedding CSV load") {
  std::stringstream csv;
  csv << "node_id,dim=512\n";
  for (int i = 0; i < 10; ++i) {
    csv << "road_" << i;
    for (int d = 0; d < 512; ++d) csv << "," << (i * 0.5 + d * 0.001);
    csv << "\n";
  }
  const EmbeddingTable t = load_embeddings_csv(csv);
  REQUIRE(t.dim == 512);
  REQUIRE(t.vectors.size() == 10);
  const auto* v = t.find(fnv1a64("road_3"));
  REQUIRE(v != nullptr);
  CHECK((*v)[0] == Catch::Approx(1.5f));
}

TEST_CASE("embedding CSV rejects ragged rows and duplicates") {
  std::stringstream ragged("node_id,dim=3\na,1,2,3\nb,1,2\n");
  CHECK_THROWS_AS(load_embeddings_csv(ragged), SchemaError);
  std::stringstream dup("node_id,dim=2\na,1,2\na,3,4\n");
  CHECK_THROWS_AS(load_embeddings_csv(dup), SchemaError);
  std::stringstream dim_mismatch("node_id,dim=2\na,1,2\n");
  CHECK_THROWS_AS(load_embeddings_csv(dim_mismatch, 512), SchemaError);
}

TEST_CASE("VFE1 binary round-trips bit-for-bit") {
  const PrimalGraph p = testutil::random_primal(20, 40, 8);
  const RoadGraph g = to_dual(p);
  const EmbeddingTable t = make_table(g, 17, 4);
  std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
  save_embeddings_vfe1(t, buf);
  const std::string bytes1 = buf.str();
  const EmbeddingTable back = load_embeddings_vfe1(buf);
  REQUIRE(back.dim == t.dim);
  REQUIRE(back.vectors.size() == t.vectors.size());
  for (const auto& [id, v] : t.vectors) {
    const auto* w = back.find(id);
    REQUIRE(w != nullptr);
    CHECK(std::memcmp(w->data(), v.data(), v.size() * 4) == 0);
  }
}

TEST_CASE("assemble_features block widths") {
  const PrimalGraph p = testutil::random_primal(30, 60, 12);
  const RoadGraph g = to_dual(p);

  FeatureOptions opts;  // geometric(n=10) + binary
  const FeatureMatrix base = assemble_features(g, opts);
  CHECK(base.width() == 28);  // 5 + 20 + 3
  CHECK(base.schema_width() == base.width());

  std::vector<std::vector<double>> hist(g.size(), std::vector<double>(96, 1.0 / 96));
  opts.histogram = true;
  const FeatureMatrix with_hist = assemble_features(g, opts, nullptr, &hist);
  CHECK(with_hist.width() == 28 + 96);

  const EmbeddingTable t2048 = make_table(g, 2048, 5);
  opts.embedding = true;
  const FeatureMatrix full = assemble_features(g, opts, &t2048, &hist);
  CHECK(full.width() == 28 + 96 + 2048);
  CHECK(full.schema.size() == 4);
  CHECK(full.block_span("embedding").second == 2048);
}

TEST_CASE("assemble_features embedding fallback is counted") {
  const PrimalGraph p = testutil::random_primal(30, 80, 12);
  const RoadGraph g = to_dual(p);
  const EmbeddingTable partial = make_table(g, 8, 5, 0.5);
  FeatureOptions opts;
  opts.embedding = true;
  AssembleReport rep;
  const FeatureMatrix fm = assemble_features(g, opts, &partial, nullptr, &rep);
  CHECK(rep.embedding_fallbacks == g.size() - partial.vectors.size());
  const auto [off, w] = fm.block_span("embedding");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (partial.find(g.node_hash[i])) continue;
    for (std::size_t c = 0; c < w; ++c) CHECK(fm.rows(i, off + c) == 0.0);
  }
}

TEST_CASE("assemble_features is order-independent") {
  PrimalGraph p = testutil::random_primal(25, 50, 3);
  const RoadGraph g = to_dual(p);
  FeatureOptions opts;
  const FeatureMatrix fm = assemble_features(g, opts);

  PrimalGraph shuffled = p;
  Rng rng(99);
  std::shuffle(shuffled.segments.begin(), shuffled.segments.end(), rng);
  const RoadGraph g2 = to_dual(shuffled);
  const FeatureMatrix fm2 = assemble_features(g2, opts);

  for (std::size_t i = 0; i < g.size(); ++i) {
    const std::string id = g.nodes[i].dual_id();
    std::size_t j = 0;
    while (g2.nodes[j].dual_id() != id) ++j;
    for (std::size_t c = 0; c < fm.width(); ++c) REQUIRE(fm.rows(i, c) == fm2.rows(j, c));
  }
}

TEST_CASE("standardize") {
  FeatureMatrix fm;
  fm.schema = {{"geometric", 2}};
  fm.rows = Dense(4, 2);
  // column 0 constant, column 1 train values {0, 2}
  fm.rows(0, 0) = 5;
  fm.rows(1, 0) = 5;
  fm.rows(2, 0) = 5;
  fm.rows(3, 0) = 5;
  fm.rows(0, 1) = 0;
  fm.rows(1, 1) = 2;
  fm.rows(2, 1) = 10;
  fm.rows(3, 1) = -4;
  const std::vector<bool> mask = {true, true, false, false};
  const FeatureMatrix out = standardize(fm, mask);
  CHECK(out.rows(0, 0) == 0.0);
  CHECK(out.rows(2, 0) == 0.0);
  CHECK(out.rows(0, 1) == Catch::Approx(-1.0));
  CHECK(out.rows(1, 1) == Catch::Approx(1.0));

  CHECK_THROWS_AS(standardize(fm, std::vector<bool>(4, false)), SchemaError);
}

TEST_CASE("standardize leaves binary/histogram untouched and normalizes the rest") {
  const PrimalGraph p = testutil::random_primal(40, 100, 6);
  const RoadGraph g = to_dual(p);
  std::vector<std::vector<double>> hist(g.size(), std::vector<double>(96, 0.0));
  Rng rng(7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& h : hist)
    for (double& x : h) x = unit(rng);
  FeatureOptions opts;
  opts.histogram = true;
  const FeatureMatrix fm = assemble_features(g, opts, nullptr, &hist);
  std::vector<bool> mask(g.size(), false);
  for (std::size_t i = 0; i < g.size(); i += 2) mask[i] = true;
  std::size_t n_train = 0;
  for (bool b : mask) n_train += b;
  const FeatureMatrix out = standardize(fm, mask);

  const auto [hoff, hw] = fm.block_span("histogram");
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t c = 0; c < hw; ++c) CHECK(out.rows(i, hoff + c) == fm.rows(i, hoff + c));

  const auto [goff, gw] = fm.block_span("geometric");
  for (std::size_t c = goff; c < goff + gw; ++c) {
    double mean = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (mask[i]) mean += out.rows(i, c);
    mean /= double(n_train);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (mask[i]) ss += (out.rows(i, c) - mean) * (out.rows(i, c) - mean);
    const double sd = std::sqrt(ss / double(n_train));
    CHECK(std::abs(mean) < 1e-12);
    CHECK((sd == 0.0 || std::abs(sd - 1.0) < 1e-9));
  }
}

TEST_CASE("feature matrix save/load via VFE1 + schema sidecar") {
  const PrimalGraph p = testutil::random_primal(20, 40, 15);
  const RoadGraph g = to_dual(p);
  FeatureOptions opts;
  const FeatureMatrix fm = assemble_features(g, opts);
  save_feature_matrix(fm, g, "fm_test.vfe1", "fm_test.vfe1.schema.json");
  const FeatureMatrix back = load_feature_matrix(g, "fm_test.vfe1", "fm_test.vfe1.schema.json");
  REQUIRE(back.width() == fm.width());
  REQUIRE(back.schema.size() == fm.schema.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t c = 0; c < fm.width(); ++c)
      CHECK(back.rows(i, c) == Catch::Approx(fm.rows(i, c)).epsilon(1e-6));
  std::remove("fm_test.vfe1");
  std::remove("fm_test.vfe1.schema.json");
}

TEST_CASE("select_blocks keeps schema order and widths") {
  const PrimalGraph p = testutil::random_primal(15, 30, 2);
  const RoadGraph g = to_dual(p);
  const EmbeddingTable t = make_table(g, 6, 1);
  FeatureOptions opts;
  opts.embedding = true;
  const FeatureMatrix fm = assemble_features(g, opts, &t);
  const FeatureMatrix sub = select_blocks(fm, {"geometric", "binary"});
  CHECK(sub.width() == 28);
  const auto [goff, gw] = fm.block_span("geometric");
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t c = 0; c < gw; ++c) CHECK(sub.rows(i, c) == fm.rows(i, goff + c));
}
