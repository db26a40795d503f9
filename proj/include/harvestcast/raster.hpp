#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "harvestcast/data.hpp"
#include "harvestcast/errors.hpp"

namespace harvestcast {

struct BoundingBox {
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;

  void validate() const;
};

// Georeferenced raster of one variable. (lat0, lon0) is the cell center of
// index (0, 0); dlat may be negative for north-up storage. Values are 32-bit
// floats, row-major, with a nodata sentinel.
struct Grid {
  std::string variable;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  double lat0 = 0.0;
  double lon0 = 0.0;
  double dlat = 0.0;  // |dlat| > 0
  double dlon = 0.0;  // dlon > 0
  float nodata = -9999.0f;
  std::vector<float> values;

  void validate() const;
  float at(std::uint32_t row, std::uint32_t col) const { return values[row * cols + col]; }
  bool is_nodata(float v) const { return v == nodata; }

  // Extent spanned by the cells, half a cell beyond the outer centers.
  double lat_edge_low() const;
  double lat_edge_high() const;
  double lon_edge_low() const;
  double lon_edge_high() const;
};

// AGRD container: magic "AGRD", version u16, rows u32, cols u32, lat0 f64,
// lon0 f64, dlat f64, dlon f64, nodata f32, then rows*cols f32 values,
// little-endian row-major. Round trips are bit-exact.
Grid read_grid(const std::filesystem::path& path);
void write_grid(const Grid& grid, const std::filesystem::path& path);

// ESRI ASCII grid ingestion (ncols/nrows/xll*/cellsize/NODATA_value header).
Grid read_esri_ascii(const std::filesystem::path& path, const std::string& variable);

enum class SampleMethod { nearest, bilinear };

// Point sampling. Nearest returns the closest cell center (half-cell margin
// at the border); bilinear averages the 4 surrounding centers and degrades to
// the nearest valid corner when any corner is nodata or outside the grid.
// Returns nullopt when every candidate corner is nodata. Points outside the
// extent raise ContractError with the extent in the message.
std::optional<double> sample_grid(const Grid& grid, double lat, double lon, SampleMethod method);

struct GridRequest {
  std::string variable;
  std::string period;  // empty for static variables
  BoundingBox bbox;    // advisory; file-backed sources return whole grids

  std::string cache_key() const { return variable + "|" + period; }
};

// Cached fetch interface over the upstream rasters. Identical requests hit
// the in-memory cache (at most one underlying read, also under concurrent
// misses). When a disk cache directory is configured, fetched grids are
// persisted there and later runs read the cached copy.
class SourceClient {
public:
  virtual ~SourceClient() = default;

  std::shared_ptr<const Grid> fetch(const GridRequest& request);

  // Number of fetches that had to go past the in-memory cache.
  std::size_t underlying_reads() const;

  void set_disk_cache_dir(std::filesystem::path dir) { disk_cache_dir_ = std::move(dir); }

protected:
  virtual std::shared_ptr<const Grid> fetch_uncached(const GridRequest& request) = 0;

private:
  std::shared_ptr<const Grid> fetch_through_disk_cache(const GridRequest& request);

  std::mutex mutex_;
  std::map<std::string, std::shared_future<std::shared_ptr<const Grid>>> cache_;
  std::atomic<std::size_t> underlying_reads_ = 0;
  std::optional<std::filesystem::path> disk_cache_dir_;
};

// Directory-backed source: static variables live at <root>/static/<var>.agrd,
// dynamic ones at <root>/dynamic/<period>/<var>.agrd. The layout root comes
// from a plain key-value config file ("root = /path"; optional "static_dir" /
// "dynamic_dir" overrides). HARVESTCAST_CACHE_DIR, when set, enables the
// disk cache.
struct SourceConfig {
  std::filesystem::path root;
  std::filesystem::path static_dir;   // default <root>/static
  std::filesystem::path dynamic_dir;  // default <root>/dynamic
};

SourceConfig load_source_config(const std::filesystem::path& path);
void write_source_config(const SourceConfig& config, const std::filesystem::path& path);

class FileSourceClient : public SourceClient {
public:
  explicit FileSourceClient(SourceConfig config);

  std::filesystem::path path_for(const GridRequest& request) const;

protected:
  std::shared_ptr<const Grid> fetch_uncached(const GridRequest& request) override;

private:
  SourceConfig config_;
};

// Feature vectors for one point: the 63 soil values sampled nearest (the soil
// grid sets the output resolution), weather sampled bilinear from the coarse
// grids, lat/lon appended to the static vector. Missing variables, months or
// nodata samples produce a MissingDataError listing every gap.
struct PointFeatures {
  std::array<double, kStaticFeatureCount> static_features{};
  std::array<double, kDynamicFeatureCount> dynamic{};
};

PointFeatures assemble_features(SourceClient& client, double lat, double lon,
                                const std::string& season);

// Non-throwing variant: returns nullopt and fills `gaps` when data is missing
// at this point. Fetch failures (absent variables) still throw.
std::optional<PointFeatures> try_assemble_features(SourceClient& client, double lat, double lon,
                                                   const std::string& season,
                                                   std::vector<std::string>* gaps);

}  // namespace harvestcast
