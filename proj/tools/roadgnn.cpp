// Command-line front end for the road-type classification pipeline:
// ingest -> featurize -> train/grid -> eval, plus tile extraction and a
// synthetic dataset generator.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "roadgnn/roadgnn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace roadgnn;

namespace {

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j = json::parse(in);
  if (!j.contains("version")) throw SchemaError("config " + path + ": missing 'version' field");
  return j;
}

// flags win over config values, config values win over defaults
template <typename T>
void merge(const CLI::Option* opt, const json& cfg, const char* key, T& value) {
  if (opt && opt->count() > 0) return;
  if (cfg.contains(key)) value = cfg[key].get<T>();
}

void write_resolved_config(const json& resolved, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "resolved_config.json");
  out << resolved.dump(2) << "\n";
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  if (j.contains("variant")) c.variant = j["variant"] == "gcn" ? GnnVariant::Gcn : GnnVariant::Sage;
  if (j.contains("hidden_dim")) c.hidden_dim = j["hidden_dim"].get<std::size_t>();
  if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("gamma")) c.gamma = j["gamma"].get<double>();
  if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
  if (j.contains("dropout")) c.dropout = j["dropout"].get<double>();
  if (j.contains("momentum")) c.momentum = j["momentum"].get<double>();
  if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
  if (j.contains("fanouts")) c.fanouts = j["fanouts"].get<std::vector<int>>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("feature_blocks"))
    c.feature_blocks = j["feature_blocks"].get<std::vector<std::string>>();
  return c;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_metrics(const Metrics& m, const std::string& path) {
  std::ofstream out(path);
  out << m.to_json().dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"road network GNN pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  app.add_option("--config", config_path, "JSON config file (flags override)");
  auto* seed_opt = app.add_option("--seed", seed, "RNG seed");
  app.add_option("--jobs", jobs, "worker threads for grid runs");
  auto* out_opt = app.add_option("--out", out_dir, "output directory");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "parse primal JSON, build dual graph, assign splits");
  std::string ingest_input, uturn = "include";
  std::size_t val_count = 0, test_count = 0;
  ingest->add_option("input", ingest_input, "primal network JSON")->required();
  auto* uturn_opt = ingest->add_option("--uturn", uturn, "include|exclude U-turn (reverse-pair) edges");
  auto* val_opt = ingest->add_option("--val", val_count, "validation node count");
  auto* test_opt = ingest->add_option("--test", test_count, "test node count");

  // featurize
  auto* feat = app.add_subcommand("featurize", "assemble per-node feature matrix");
  std::string feat_graph, feat_blocks = "geometric,binary", rgb_path, rgb_world, dsm_path,
              dsm_world, emb_path;
  std::size_t resample_points = 10;
  std::uint32_t embedding_dim = 0;
  bool do_standardize = false;
  feat->add_option("graph", feat_graph, "dual graph JSON from ingest")->required();
  auto* blocks_opt = feat->add_option("--blocks", feat_blocks,
                                      "comma list of geometric,binary,histogram,embedding");
  feat->add_option("--resample-points", resample_points, "geometry resample point count");
  feat->add_option("--rgb", rgb_path, "RGB raster (PPM P6)");
  feat->add_option("--rgb-world", rgb_world, "world file for the RGB raster");
  feat->add_option("--dsm", dsm_path, "DSM raster (PGM P5)");
  feat->add_option("--dsm-world", dsm_world, "world file for the DSM raster");
  feat->add_option("--embeddings", emb_path, "embedding table (CSV or VFE1)");
  feat->add_option("--embedding-dim", embedding_dim, "expected embedding dim");
  feat->add_flag("--standardize", do_standardize, "standardize continuous columns on the train split");

  // tile
  auto* tile_cmd = app.add_subcommand("tile", "extract one road-aligned image tile");
  std::string tile_rgb, tile_world, tile_graph;
  int tile_node = -1;
  double tile_cx = 0, tile_cy = 0, tile_heading = 0;
  bool tile_center_given = false;
  tile_cmd->add_option("--rgb", tile_rgb)->required();
  tile_cmd->add_option("--rgb-world", tile_world)->required();
  tile_cmd->add_option("--graph", tile_graph, "dual graph (tile pose from node)");
  tile_cmd->add_option("--node", tile_node, "node index in the graph");
  auto* cx_opt = tile_cmd->add_option("--center-x", tile_cx, "tile center easting (m)");
  tile_cmd->add_option("--center-y", tile_cy, "tile center northing (m)");
  tile_cmd->add_option("--heading", tile_heading, "heading degrees, clockwise from north");

  // train
  auto* train_cmd = app.add_subcommand("train", "single training run");
  std::string train_graph, train_features, train_variant = "sage", train_blocks;
  TrainConfig tc;
  train_cmd->add_option("graph", train_graph)->required();
  train_cmd->add_option("features", train_features, "feature matrix (.vfe1; schema sidecar next to it)")
      ->required();
  auto* var_opt = train_cmd->add_option("--variant", train_variant, "gcn|sage");
  auto* hid_opt = train_cmd->add_option("--hidden", tc.hidden_dim);
  auto* lr_opt = train_cmd->add_option("--lr", tc.learning_rate);
  auto* gam_opt = train_cmd->add_option("--gamma", tc.gamma);
  auto* wd_opt = train_cmd->add_option("--weight-decay", tc.weight_decay);
  auto* dr_opt = train_cmd->add_option("--dropout", tc.dropout);
  auto* mom_opt = train_cmd->add_option("--momentum", tc.momentum);
  auto* ep_opt = train_cmd->add_option("--epochs", tc.epochs);
  auto* bs_opt = train_cmd->add_option("--batch-size", tc.batch_size);
  auto* fo_opt = train_cmd->add_option("--fanouts", tc.fanouts, "per-depth fan-outs");
  auto* tb_opt = train_cmd->add_option("--blocks", train_blocks, "feature blocks to use");

  // grid
  auto* grid_cmd = app.add_subcommand("grid", "Table-style exhaustive hyperparameter search");
  std::string grid_graph, grid_features, grid_variant = "sage";
  GridSpace space;
  int grid_epochs = 100;
  grid_cmd->add_option("graph", grid_graph)->required();
  grid_cmd->add_option("features", grid_features)->required();
  grid_cmd->add_option("--variant", grid_variant, "gcn|sage");
  grid_cmd->add_option("--lr", space.learning_rate, "learning rate grid");
  grid_cmd->add_option("--gamma", space.gamma, "lr-scheduler gamma grid");
  grid_cmd->add_option("--weight-decay", space.weight_decay, "weight decay grid");
  grid_cmd->add_option("--dropout", space.dropout, "dropout grid");
  grid_cmd->add_option("--epochs", grid_epochs);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string eval_graph, eval_features, eval_ckpt, eval_split = "test", eval_blocks;
  eval_cmd->add_option("graph", eval_graph)->required();
  eval_cmd->add_option("features", eval_features)->required();
  eval_cmd->add_option("checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--split", eval_split, "train|val|test");
  eval_cmd->add_option("--blocks", eval_blocks, "feature blocks the checkpoint was trained on");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic desk-scale dataset");
  std::size_t synth_nodes = 2000, synth_classes = 8, synth_emb_dim = 32;
  double synth_val_frac = 0.1, synth_test_frac = 0.1;
  synth_cmd->add_option("--nodes", synth_nodes);
  synth_cmd->add_option("--classes", synth_classes);
  synth_cmd->add_option("--embedding-dim", synth_emb_dim);
  synth_cmd->add_option("--val-frac", synth_val_frac);
  synth_cmd->add_option("--test-frac", synth_test_frac);

  CLI11_PARSE(app, argc, argv);

  try {
    const json cfg = load_config(config_path);
    merge(seed_opt, cfg, "seed", seed);
    merge(out_opt, cfg, "out", out_dir);
    fs::create_directories(out_dir);

    if (*ingest) {
      merge(uturn_opt, cfg, "uturn", uturn);
      merge(val_opt, cfg, "val", val_count);
      merge(test_opt, cfg, "test", test_count);
      if (uturn != "include" && uturn != "exclude")
        throw SchemaError("--uturn must be include or exclude");
      const PrimalGraph primal = parse_primal_file(ingest_input);
      RoadGraph graph = to_dual(primal, uturn == "exclude" ? UturnPolicy::Exclude
                                                           : UturnPolicy::Include);
      split_nodes(graph, SplitSpec{seed, val_count, test_count});
      const std::string out_path = (fs::path(out_dir) / "graph.json").string();
      save_road_graph(graph, out_path);
      write_resolved_config({{"version", 1}, {"command", "ingest"}, {"input", ingest_input},
                             {"uturn", uturn}, {"val", val_count}, {"test", test_count},
                             {"seed", seed}},
                            out_dir);
      std::cout << "nodes: " << graph.size() << "\nedges: " << graph.num_edges()
                << "\ntrain/val/test = " << graph.split_indices(Split::Train).size() << "/"
                << graph.split_indices(Split::Val).size() << "/"
                << graph.split_indices(Split::Test).size() << "\nwrote " << out_path << "\n";
    } else if (*feat) {
      merge(blocks_opt, cfg, "blocks", feat_blocks);
      const auto blocks = split_csv(feat_blocks);
      FeatureOptions opts;
      opts.geometric = std::count(blocks.begin(), blocks.end(), "geometric") > 0;
      opts.binary = std::count(blocks.begin(), blocks.end(), "binary") > 0;
      opts.histogram = std::count(blocks.begin(), blocks.end(), "histogram") > 0;
      opts.embedding = std::count(blocks.begin(), blocks.end(), "embedding") > 0;
      opts.resample_points = resample_points;
      const RoadGraph graph = load_road_graph(feat_graph);

      std::optional<EmbeddingTable> table;
      if (opts.embedding) {
        if (emb_path.empty()) throw SchemaError("embedding block selected but no --embeddings");
        table = load_embeddings(emb_path, embedding_dim);
      }
      std::optional<std::vector<std::vector<double>>> hist;
      if (opts.histogram) {
        if (rgb_path.empty() || rgb_world.empty())
          throw SchemaError("histogram block selected but no --rgb/--rgb-world");
        const Raster rgb = load_raster(rgb_path, rgb_world);
        std::optional<Raster> dsm;
        if (!dsm_path.empty()) dsm = load_raster(dsm_path, dsm_world);
        const LocalProjection proj{default_ref_lat(graph)};
        hist = compute_histograms(graph, rgb, dsm ? &*dsm : nullptr, proj);
      }
      AssembleReport report;
      FeatureMatrix fm = assemble_features(graph, opts, table ? &*table : nullptr,
                                           hist ? &*hist : nullptr, &report);
      if (do_standardize) {
        std::vector<bool> mask(graph.size(), false);
        for (int i : graph.split_indices(Split::Train)) mask[std::size_t(i)] = true;
        fm = standardize(fm, mask);
      }
      const std::string out_path = (fs::path(out_dir) / "features.vfe1").string();
      save_feature_matrix(fm, graph, out_path, out_path + ".schema.json");
      write_resolved_config({{"version", 1}, {"command", "featurize"}, {"graph", feat_graph},
                             {"blocks", feat_blocks}, {"resample_points", resample_points},
                             {"standardize", do_standardize}},
                            out_dir);
      std::cout << "row width: " << fm.width()
                << "\nembedding zero-fallbacks: " << report.embedding_fallbacks << "\nwrote "
                << out_path << "\n";
    } else if (*tile_cmd) {
      const Raster rgb = load_raster(tile_rgb, tile_world);
      tile_center_given = cx_opt->count() > 0;
      double cx = tile_cx, cy = tile_cy, heading = tile_heading;
      if (!tile_center_given) {
        if (tile_graph.empty() || tile_node < 0)
          throw SchemaError("tile: give --center-x/--center-y/--heading or --graph/--node");
        const RoadGraph graph = load_road_graph(tile_graph);
        const LocalProjection proj{default_ref_lat(graph)};
        std::tie(cx, cy, heading) = node_tile_pose(graph, std::size_t(tile_node), proj);
      }
      const ImageTile tile = extract_tile(rgb, cx, cy, heading);
      Raster out;
      out.width = out.height = tile.size;
      out.channels = tile.channels;
      out.data = tile.pixels;
      const std::string out_path = (fs::path(out_dir) / "tile.ppm").string();
      std::ofstream os(out_path, std::ios::binary);
      save_pnm(out, os);
      std::cout << "center: (" << cx << ", " << cy << ") heading: " << heading
                << "\nout_of_bounds_fraction: " << tile.out_of_bounds_fraction << "\nwrote "
                << out_path << "\n";
    } else if (*train_cmd) {
      TrainConfig c = config_from_json(cfg);
      merge(var_opt, cfg, "", train_variant);
      if (var_opt->count() > 0) c.variant = train_variant == "gcn" ? GnnVariant::Gcn : GnnVariant::Sage;
      if (hid_opt->count()) c.hidden_dim = tc.hidden_dim;
      if (lr_opt->count()) c.learning_rate = tc.learning_rate;
      if (gam_opt->count()) c.gamma = tc.gamma;
      if (wd_opt->count()) c.weight_decay = tc.weight_decay;
      if (dr_opt->count()) c.dropout = tc.dropout;
      if (mom_opt->count()) c.momentum = tc.momentum;
      if (ep_opt->count()) c.epochs = tc.epochs;
      if (bs_opt->count()) c.batch_size = tc.batch_size;
      if (fo_opt->count()) c.fanouts = tc.fanouts;
      if (tb_opt->count()) c.feature_blocks = split_csv(train_blocks);
      if (seed_opt->count() || !cfg.contains("seed")) c.seed = seed;

      const RoadGraph graph = load_road_graph(train_graph);
      const FeatureMatrix fm =
          load_feature_matrix(graph, train_features, train_features + ".schema.json");
      const RunRecord record = train(c, graph, fm);
      std::ofstream run_out(fs::path(out_dir) / "run.json");
      run_out << record.to_json().dump() << "\n";
      save_checkpoint(*record.best_model, (fs::path(out_dir) / "best.rgn1").string());
      write_resolved_config({{"version", 1}, {"command", "train"}, {"config", c.to_json()}},
                            out_dir);
      std::cout << "best epoch: " << record.best_epoch << "\nval micro-F1: " << record.best_val_f1;
      if (record.test_metrics) std::cout << "\ntest micro-F1: " << record.test_metrics->micro_f1;
      std::cout << "\nwrote " << (fs::path(out_dir) / "run.json").string() << "\n";
    } else if (*grid_cmd) {
      TrainConfig base = config_from_json(cfg);
      base.variant = grid_variant == "gcn" ? GnnVariant::Gcn : GnnVariant::Sage;
      base.epochs = grid_epochs;
      base.seed = seed;
      const RoadGraph graph = load_road_graph(grid_graph);
      const FeatureMatrix fm =
          load_feature_matrix(graph, grid_features, grid_features + ".schema.json");
      const std::vector<RunRecord> records = grid_search(space, base, graph, fm, jobs);

      std::ofstream runs_out(fs::path(out_dir) / "runs.jsonl");
      for (const auto& r : records) runs_out << r.to_json().dump() << "\n";
      std::ofstream csv(fs::path(out_dir) / "summary.csv");
      csv << "learning_rate,gamma,weight_decay,dropout,seed,val_micro_f1,test_micro_f1,failed\n";
      for (const auto& r : records) {
        csv << r.config.learning_rate << "," << r.config.gamma << "," << r.config.weight_decay
            << "," << r.config.dropout << "," << r.config.seed << "," << r.best_val_f1 << ","
            << (r.test_metrics ? r.test_metrics->micro_f1 : 0.0) << "," << (r.failed ? 1 : 0)
            << "\n";
      }
      write_resolved_config({{"version", 1}, {"command", "grid"}, {"base", base.to_json()},
                             {"space",
                              {{"learning_rate", space.learning_rate}, {"gamma", space.gamma},
                               {"weight_decay", space.weight_decay}, {"dropout", space.dropout}}}},
                            out_dir);
      std::cout << "runs: " << records.size() << "\n";
      if (records.size() >= 5) std::cout << "top-5 test micro-F1: " << top_k_average(records, 5) << "\n";
      std::cout << "wrote " << (fs::path(out_dir) / "summary.csv").string() << "\n";
    } else if (*eval_cmd) {
      const RoadGraph graph = load_road_graph(eval_graph);
      FeatureMatrix fm = load_feature_matrix(graph, eval_features, eval_features + ".schema.json");
      if (!eval_blocks.empty()) fm = select_blocks(fm, split_csv(eval_blocks));
      const GnnModel model = load_checkpoint(eval_ckpt);
      const Split split = eval_split == "train" ? Split::Train
                          : eval_split == "val" ? Split::Val
                                                : Split::Test;
      const Metrics m = evaluate(model, graph, fm, graph.split_indices(split));
      const std::string out_path = (fs::path(out_dir) / "metrics.json").string();
      write_metrics(m, out_path);
      std::cout << eval_split << " micro-F1: " << m.micro_f1 << "\nwrote " << out_path << "\n";
    } else if (*synth_cmd) {
      SyntheticDataset ds = generate_synthetic(synth_nodes, synth_classes, synth_emb_dim, {}, seed);
      split_nodes(ds.graph, SplitSpec{seed, std::size_t(synth_val_frac * double(synth_nodes)),
                                      std::size_t(synth_test_frac * double(synth_nodes))});
      save_road_graph(ds.graph, (fs::path(out_dir) / "graph.json").string());
      const std::string feat_path = (fs::path(out_dir) / "features.vfe1").string();
      save_feature_matrix(ds.features, ds.graph, feat_path, feat_path + ".schema.json");
      std::ofstream emb_out(fs::path(out_dir) / "embeddings.vfe1", std::ios::binary);
      save_embeddings_vfe1(ds.embeddings, emb_out, ds.graph.node_hash);
      write_resolved_config({{"version", 1}, {"command", "synth"}, {"nodes", synth_nodes},
                             {"classes", synth_classes}, {"embedding_dim", synth_emb_dim},
                             {"seed", seed}},
                            out_dir);
      std::cout << "nodes: " << ds.graph.size() << "\nfeature width: " << ds.features.width()
                << "\nwrote " << out_dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
