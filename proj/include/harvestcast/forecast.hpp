#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "harvestcast/model.hpp"
#include "harvestcast/raster.hpp"

namespace harvestcast {

struct BBoxRequest {
  BoundingBox bbox;
  double resolution_deg = 0.0025;  // ~250 m
  std::string season;

  void validate() const;
};

// Rasterized forecast over a bounding box: one cell per output pixel, cell
// centers at lat_min + (i+0.5)*res. Every cell assembles features, normalizes
// with the net's stored statistics, predicts and clamps at 0; cells with
// missing source data become nodata. Cells are distributed across `workers`
// threads row by row; output bytes do not depend on the worker count.
Grid predict_bbox(const BBoxRequest& request, SourceClient& client, const YieldNet& net,
                  std::size_t workers = 1);

// ---- dataset assembly from sources -------------------------------------------

// Yield record table: delimited text with header
// region_id,year,lat,lon,yield_kg_ha.
struct YieldRecord {
  std::string region_id;
  int year = 0;
  double lat = 0.0;
  double lon = 0.0;
  double yield_kg_ha = 0.0;
};

std::vector<YieldRecord> load_yield_records(const std::filesystem::path& path);
void write_yield_records(std::span<const YieldRecord> records,
                         const std::filesystem::path& path);

// Joins yield records with the gridded sources into a sample table dataset.
// season_of maps a record to the period identifier used by the source layout
// (by default the year as a string).
Dataset build_dataset(SourceClient& client, std::span<const YieldRecord> records,
                      const std::function<std::string(const YieldRecord&)>& season_of);

// ---- synthetic world -----------------------------------------------------------

// A self-contained gridded world for demos and end-to-end tests: smooth
// analytic fields for every soil and weather variable written as AGRD grids
// under <root>/static and <root>/dynamic/<season>, a sources.cfg, and a yield
// record table sampled at random points with the synthetic ground-truth
// response plus noise.
struct SyntheticWorldSpec {
  BoundingBox bbox{-20.0, -15.0, -50.0, -45.0};
  double static_resolution_deg = 0.02;
  double dynamic_resolution_deg = 0.25;
  std::string season = "2020";
  std::size_t regions = 60;
  double noise_fraction = 0.05;
  std::uint64_t seed = 0;
};

struct SyntheticWorldPaths {
  std::filesystem::path root;
  std::filesystem::path sources_config;
  std::filesystem::path yield_records;
};

SyntheticWorldPaths write_synthetic_world(const SyntheticWorldSpec& spec,
                                          const std::filesystem::path& root);

}  // namespace harvestcast
