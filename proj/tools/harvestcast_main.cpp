// Command-line surface for the yield forecasting pipeline: generate synthetic
// data, ingest rasters, assemble datasets, train, evaluate, and rasterize
// bounding-box forecasts.
//
// Exit codes: 0 success, 2 input/format error, 3 numeric failure,
// 4 missing data.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "harvestcast/forecast.hpp"
#include "harvestcast/metrics.hpp"
#include "harvestcast/model.hpp"
#include "harvestcast/train.hpp"

namespace hc = harvestcast;

namespace {

int run_synth(const std::string& out_dir, std::size_t samples, std::uint64_t seed, double noise,
              bool world, std::size_t regions) {
  std::filesystem::create_directories(out_dir);
  hc::Dataset dataset = hc::generate_synthetic({.size = samples, .noise_fraction = noise}, seed);
  const auto table = std::filesystem::path(out_dir) / "samples.csv";
  hc::write_samples(dataset, table);
  std::cout << "wrote " << dataset.size() << " samples to " << table.string() << "\n";

  if (world) {
    hc::SyntheticWorldSpec spec;
    spec.seed = seed;
    spec.noise_fraction = noise;
    spec.regions = regions;
    const auto paths = hc::write_synthetic_world(spec, std::filesystem::path(out_dir) / "world");
    std::cout << "wrote gridded world under " << paths.root.string() << "\n"
              << "  sources config: " << paths.sources_config.string() << "\n"
              << "  yield records:  " << paths.yield_records.string() << "\n"
              << "  season id:      " << spec.season << "\n";
  }
  return 0;
}

int run_ingest(const std::string& asc, const std::string& variable, const std::string& out) {
  hc::Grid grid = hc::read_esri_ascii(asc, variable);
  hc::write_grid(grid, out);
  std::cout << "wrote " << grid.rows << "x" << grid.cols << " grid for '" << variable << "' to "
            << out << "\n";
  return 0;
}

int run_dataset(const std::string& yields, const std::string& sources, const std::string& out) {
  const std::vector<hc::YieldRecord> records = hc::load_yield_records(yields);
  hc::FileSourceClient client(hc::load_source_config(sources));
  hc::Dataset dataset = hc::build_dataset(
      client, records, [](const hc::YieldRecord& r) { return std::to_string(r.year); });
  hc::write_samples(dataset, out);
  std::cout << "assembled " << dataset.size() << " samples from " << records.size()
            << " yield records into " << out << "\n";
  return 0;
}

int run_train(const std::string& data_path, const std::string& out, const hc::TrainConfig& config,
              const std::string& history_path) {
  hc::Dataset dataset = hc::load_samples(data_path);
  hc::split_dataset(dataset, config.seed);
  const hc::NormStats stats = hc::fit_normalizer(dataset);
  for (const std::string& dropped : stats.dropped_features) {
    std::cerr << "warning: constant feature dropped: " << dropped << "\n";
  }

  hc::YieldNetConfig net_config;
  net_config.learning_rate = config.learning_rate;
  hc::YieldNet net = hc::YieldNet::build(net_config, config.seed);
  std::cout << "training " << net.param_count() << " parameters on "
            << dataset.indices_of(hc::Split::train).size() << " samples (validation "
            << dataset.indices_of(hc::Split::validation).size() << ", test "
            << dataset.indices_of(hc::Split::test).size() << ")\n";

  const hc::TrainResult result = hc::train_loop(net, dataset, stats, config);
  if (!history_path.empty()) hc::write_history(result.history, history_path);
  if (result.abort) {
    std::cerr << "training aborted at epoch " << result.abort->epoch << ", batch "
              << result.abort->batch << ": " << result.abort->reason << "\n";
    if (result.best_epoch > 0) {
      hc::save_checkpoint(result.best, out);
      std::cerr << "last good snapshot (epoch " << result.best_epoch << ") saved to " << out
                << "\n";
    }
    return 3;
  }
  hc::save_checkpoint(result.best, out);
  std::cout << "best epoch " << result.best_epoch << " with validation MAE "
            << result.best_validation_loss << " after " << result.history.size()
            << " epochs; checkpoint written to " << out << "\n";
  return 0;
}

int run_evaluate(const std::string& data_path, const std::string& checkpoint,
                 const std::string& split_name, std::uint64_t seed,
                 const std::string& report_path) {
  hc::Dataset dataset = hc::load_samples(data_path);
  const hc::YieldNet net = hc::load_checkpoint(checkpoint);

  std::vector<double> predicted;
  std::vector<double> observed;
  if (split_name == "all") {
    dataset.split.assign(dataset.size(), hc::Split::test);
    predicted = hc::predict_split(net, dataset, net.norm_stats(), hc::Split::test);
    for (const hc::Sample& s : dataset.samples) observed.push_back(s.yield_kg_ha);
  } else {
    hc::split_dataset(dataset, seed);
    const hc::Split split = split_name == "train"        ? hc::Split::train
                            : split_name == "validation" ? hc::Split::validation
                                                         : hc::Split::test;
    predicted = hc::predict_split(net, dataset, net.norm_stats(), split);
    for (std::size_t i : dataset.indices_of(split)) {
      observed.push_back(dataset.samples[i].yield_kg_ha);
    }
  }

  const hc::Metrics metrics = hc::compute_metrics(predicted, observed);
  std::cout << hc::format_metrics(metrics, split_name + " split (" +
                                               std::to_string(observed.size()) + " samples)");
  if (!report_path.empty()) {
    std::ofstream report(report_path);
    report << hc::metrics_to_csv(metrics);
    std::cout << "report written to " << report_path << "\n";
  }
  return 0;
}

int run_predict_bbox(const std::vector<double>& bbox_values, double resolution,
                     const std::string& checkpoint, const std::string& sources,
                     const std::string& season, const std::string& out, std::size_t workers) {
  if (bbox_values.size() != 4) {
    throw hc::ContractError("bbox: expected lat_min,lon_min,lat_max,lon_max");
  }
  hc::BBoxRequest request;
  request.bbox.lat_min = bbox_values[0];
  request.bbox.lon_min = bbox_values[1];
  request.bbox.lat_max = bbox_values[2];
  request.bbox.lon_max = bbox_values[3];
  request.resolution_deg = resolution;
  request.season = season;

  const hc::YieldNet net = hc::load_checkpoint(checkpoint);
  hc::FileSourceClient client(hc::load_source_config(sources));
  const hc::Grid grid = hc::predict_bbox(request, client, net, workers);
  hc::write_grid(grid, out);

  std::size_t nodata = 0;
  for (float v : grid.values) nodata += grid.is_nodata(v) ? 1 : 0;
  std::cout << "wrote " << grid.rows << "x" << grid.cols << " forecast to " << out << " ("
            << nodata << " nodata cells)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"harvestcast: pre-season crop yield forecasting"};
  app.require_subcommand(1);
  // Key-value config file with one [subcommand] section per command;
  // command-line flags override file values.
  app.set_config("--config", "", "Read options from a key-value file");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset (and world grids)");
  std::string synth_out;
  std::size_t synth_samples = 2000;
  std::uint64_t synth_seed = 0;
  double synth_noise = 0.05;
  bool synth_world = false;
  std::size_t synth_regions = 60;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--samples", synth_samples, "Sample count");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--noise", synth_noise, "Noise sigma as a fraction of mean yield");
  synth->add_flag("--world", synth_world, "Also write a gridded world with yield records");
  synth->add_option("--regions", synth_regions, "Yield records in the world");

  auto* ingest = app.add_subcommand("ingest", "Convert an ESRI ASCII raster to AGRD");
  std::string ingest_asc, ingest_variable, ingest_out;
  ingest->add_option("--asc", ingest_asc, "Input .asc file")->required();
  ingest->add_option("--variable", ingest_variable, "Variable name")->required();
  ingest->add_option("--out", ingest_out, "Output .agrd path")->required();

  auto* dataset = app.add_subcommand("dataset", "Join yield records with gridded sources");
  std::string dataset_yields, dataset_sources, dataset_out;
  dataset->add_option("--yields", dataset_yields, "Yield record table")->required();
  dataset->add_option("--sources", dataset_sources, "Source config file")->required();
  dataset->add_option("--out", dataset_out, "Output sample table")->required();

  auto* train = app.add_subcommand("train", "Train the network on a sample table");
  std::string train_data, train_out, train_history;
  hc::TrainConfig train_config;
  train_config.seed = 42;
  train->add_option("--data", train_data, "Sample table")->required();
  train->add_option("--out", train_out, "Checkpoint output path")->required();
  train->add_option("--seed", train_config.seed, "Split/init/shuffle seed");
  train->add_option("--max-epochs", train_config.max_epochs, "Epoch cap");
  train->add_option("--patience", train_config.patience, "Early-stopping patience");
  train->add_option("--batch-size", train_config.batch_size, "Mini-batch size");
  train->add_option("--lr", train_config.learning_rate, "Adam learning rate");
  train->add_option("--history", train_history, "Write per-epoch losses here");

  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a sample table");
  std::string eval_data, eval_checkpoint, eval_report;
  std::string eval_split = "test";
  std::uint64_t eval_seed = 42;
  evaluate->add_option("--data", eval_data, "Sample table")->required();
  evaluate->add_option("--checkpoint", eval_checkpoint, "Checkpoint path")->required();
  evaluate->add_option("--split", eval_split, "train|validation|test|all")
      ->check(CLI::IsMember({"train", "validation", "test", "all"}));
  evaluate->add_option("--seed", eval_seed, "Split seed used during training");
  evaluate->add_option("--report", eval_report, "Write a delimited report here");

  auto* bbox = app.add_subcommand("predict-bbox", "Rasterize forecasts over a bounding box");
  std::vector<double> bbox_values;
  double bbox_resolution = 0.0025;
  std::string bbox_checkpoint, bbox_sources, bbox_season, bbox_out;
  std::size_t bbox_workers = std::max(1u, std::thread::hardware_concurrency());
  bbox->add_option("--bbox", bbox_values, "lat_min,lon_min,lat_max,lon_max")
      ->required()
      ->delimiter(',');
  bbox->add_option("--resolution-deg", bbox_resolution, "Output cell size in degrees");
  bbox->add_option("--checkpoint", bbox_checkpoint, "Checkpoint path")->required();
  bbox->add_option("--sources", bbox_sources, "Source config file")->required();
  bbox->add_option("--season", bbox_season, "Season window identifier")->required();
  bbox->add_option("--out", bbox_out, "Output AGRD path")->required();
  bbox->add_option("--workers", bbox_workers, "Worker threads");

  try {
    app.parse(argc, argv);

    if (synth->parsed()) {
      return run_synth(synth_out, synth_samples, synth_seed, synth_noise, synth_world,
                       synth_regions);
    }
    if (ingest->parsed()) return run_ingest(ingest_asc, ingest_variable, ingest_out);
    if (dataset->parsed()) return run_dataset(dataset_yields, dataset_sources, dataset_out);
    if (train->parsed()) return run_train(train_data, train_out, train_config, train_history);
    if (evaluate->parsed()) {
      return run_evaluate(eval_data, eval_checkpoint, eval_split, eval_seed, eval_report);
    }
    if (bbox->parsed()) {
      return run_predict_bbox(bbox_values, bbox_resolution, bbox_checkpoint, bbox_sources,
                              bbox_season, bbox_out, bbox_workers);
    }
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const hc::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const hc::MissingDataError& e) {
    std::cerr << "missing data: " << e.what() << "\n";
    return 4;
  } catch (const hc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
