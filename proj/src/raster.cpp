#include "harvestcast/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace harvestcast {

void BoundingBox::validate() const {
  if (!(lat_min < lat_max) || !(lon_min < lon_max)) {
    throw ContractError("bbox: degenerate extent lat [" + std::to_string(lat_min) + ", " +
                        std::to_string(lat_max) + "], lon [" + std::to_string(lon_min) + ", " +
                        std::to_string(lon_max) + "]");
  }
}

void Grid::validate() const {
  if (rows == 0 || cols == 0) throw ContractError("grid: empty dimensions");
  if (static_cast<std::size_t>(rows) * cols != values.size()) {
    throw ContractError("grid: " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " but " + std::to_string(values.size()) + " values");
  }
  if (!(dlon > 0.0) || dlat == 0.0 || !std::isfinite(dlat) || !std::isfinite(dlon)) {
    throw ContractError("grid: invalid cell size dlat=" + std::to_string(dlat) +
                        " dlon=" + std::to_string(dlon));
  }
  for (float v : values) {
    if (v != nodata && !std::isfinite(v)) {
      throw NumericError("grid: non-finite value that is not the nodata sentinel");
    }
  }
}

double Grid::lat_edge_low() const {
  const double a = lat0 - 0.5 * dlat;
  const double b = lat0 + (static_cast<double>(rows) - 0.5) * dlat;
  return std::min(a, b);
}

double Grid::lat_edge_high() const {
  const double a = lat0 - 0.5 * dlat;
  const double b = lat0 + (static_cast<double>(rows) - 0.5) * dlat;
  return std::max(a, b);
}

double Grid::lon_edge_low() const { return lon0 - 0.5 * dlon; }

double Grid::lon_edge_high() const {
  return lon0 + (static_cast<double>(cols) - 0.5) * dlon;
}

// ---- AGRD io -----------------------------------------------------------------

namespace {

constexpr char kGridMagic[4] = {'A', 'G', 'R', 'D'};
constexpr std::uint16_t kGridVersion = 1;
constexpr std::size_t kGridHeaderBytes = 4 + 2 + 4 + 4 + 4 * 8 + 4;

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError(std::string("grid: short file while reading ") + what);
  return value;
}

}  // namespace

void write_grid(const Grid& grid, const std::filesystem::path& path) {
  grid.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("grid: cannot write " + path.string());
  out.write(kGridMagic, sizeof(kGridMagic));
  write_raw(out, kGridVersion);
  write_raw(out, grid.rows);
  write_raw(out, grid.cols);
  write_raw(out, grid.lat0);
  write_raw(out, grid.lon0);
  write_raw(out, grid.dlat);
  write_raw(out, grid.dlon);
  write_raw(out, grid.nodata);
  out.write(reinterpret_cast<const char*>(grid.values.data()),
            static_cast<std::streamsize>(grid.values.size() * sizeof(float)));
  if (!out.flush()) throw IoError("grid: write failed for " + path.string());
}

Grid read_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("grid: cannot read " + path.string());

  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kGridMagic, sizeof(kGridMagic)) != 0) {
    throw FormatError("grid: bad magic in " + path.string());
  }
  const auto version = read_raw<std::uint16_t>(in, "version");
  if (version != kGridVersion) {
    throw FormatError("grid: unknown version " + std::to_string(version) + " in " +
                      path.string());
  }

  Grid grid;
  grid.variable = path.stem().string();
  grid.rows = read_raw<std::uint32_t>(in, "rows");
  grid.cols = read_raw<std::uint32_t>(in, "cols");
  grid.lat0 = read_raw<double>(in, "lat0");
  grid.lon0 = read_raw<double>(in, "lon0");
  grid.dlat = read_raw<double>(in, "dlat");
  grid.dlon = read_raw<double>(in, "dlon");
  grid.nodata = read_raw<float>(in, "nodata");

  const std::size_t count = static_cast<std::size_t>(grid.rows) * grid.cols;
  grid.values.resize(count);
  in.read(reinterpret_cast<char*>(grid.values.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float)) {
    throw FormatError("grid: truncated payload in " + path.string());
  }
  in.seekg(0, std::ios::end);
  if (static_cast<std::size_t>(in.tellg()) != kGridHeaderBytes + count * sizeof(float)) {
    throw FormatError("grid: trailing bytes in " + path.string());
  }
  grid.validate();
  return grid;
}

// ---- ESRI ASCII ingestion -------------------------------------------------------

Grid read_esri_ascii(const std::filesystem::path& path, const std::string& variable) {
  std::ifstream in(path);
  if (!in) throw IoError("ascii grid: cannot read " + path.string());

  std::size_t ncols = 0, nrows = 0;
  double xll = 0.0, yll = 0.0, cellsize = 0.0, nodata = -9999.0;
  bool x_is_center = false, y_is_center = false;
  bool have_cols = false, have_rows = false, have_x = false, have_y = false, have_cell = false;

  std::string key;
  while (in >> key) {
    std::string lower(key);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (lower == "ncols") {
      in >> ncols;
      have_cols = true;
    } else if (lower == "nrows") {
      in >> nrows;
      have_rows = true;
    } else if (lower == "xllcorner" || lower == "xllcenter") {
      in >> xll;
      x_is_center = lower == "xllcenter";
      have_x = true;
    } else if (lower == "yllcorner" || lower == "yllcenter") {
      in >> yll;
      y_is_center = lower == "yllcenter";
      have_y = true;
    } else if (lower == "cellsize") {
      in >> cellsize;
      have_cell = true;
    } else if (lower == "nodata_value") {
      in >> nodata;
    } else {
      break;  // first value token
    }
  }
  if (!have_cols || !have_rows || !have_x || !have_y || !have_cell || !in) {
    throw FormatError("ascii grid: incomplete header in " + path.string());
  }
  if (cellsize <= 0.0 || ncols == 0 || nrows == 0) {
    throw FormatError("ascii grid: bad dimensions in " + path.string());
  }

  Grid grid;
  grid.variable = variable;
  grid.rows = static_cast<std::uint32_t>(nrows);
  grid.cols = static_cast<std::uint32_t>(ncols);
  grid.dlat = -cellsize;  // row 0 is the northernmost row
  grid.dlon = cellsize;
  grid.lon0 = x_is_center ? xll : xll + 0.5 * cellsize;
  const double lat_bottom_center = y_is_center ? yll : yll + 0.5 * cellsize;
  grid.lat0 = lat_bottom_center + (static_cast<double>(nrows) - 1.0) * cellsize;
  grid.nodata = static_cast<float>(nodata);

  grid.values.resize(nrows * ncols);
  // `key` already holds the first value token.
  std::size_t index = 0;
  grid.values[index++] = std::strtof(key.c_str(), nullptr);
  double v = 0.0;
  while (index < grid.values.size() && in >> v) {
    grid.values[index++] = static_cast<float>(v);
  }
  if (index != grid.values.size()) {
    throw FormatError("ascii grid: expected " + std::to_string(grid.values.size()) +
                      " values, found " + std::to_string(index) + " in " + path.string());
  }
  if (in >> v) {
    throw FormatError("ascii grid: trailing values in " + path.string());
  }
  grid.validate();
  return grid;
}

// ---- sampling --------------------------------------------------------------------

namespace {

// Continuous cell coordinate; integers sit on cell centers. Snaps near-exact
// centers so sampling a grid at its own centers is exact.
double continuous_index(double value, double origin, double step) {
  double x = (value - origin) / step;
  const double snapped = std::round(x);
  if (std::abs(x - snapped) < 1e-9) x = snapped;
  return x;
}

}  // namespace

std::optional<double> sample_grid(const Grid& grid, double lat, double lon, SampleMethod method) {
  const double r = continuous_index(lat, grid.lat0, grid.dlat);
  const double c = continuous_index(lon, grid.lon0, grid.dlon);
  const double rows = static_cast<double>(grid.rows);
  const double cols = static_cast<double>(grid.cols);

  // Inside the extent means within half a cell of the outer centers.
  if (r < -0.5 || r > rows - 0.5 || c < -0.5 || c > cols - 0.5) {
    std::ostringstream os;
    os << "sample: point (" << lat << ", " << lon << ") outside grid extent lat ["
       << grid.lat_edge_low() << ", " << grid.lat_edge_high() << "], lon ["
       << grid.lon_edge_low() << ", " << grid.lon_edge_high() << "]";
    throw ContractError(os.str());
  }

  if (method == SampleMethod::nearest) {
    const auto row = static_cast<std::uint32_t>(std::clamp(std::round(r), 0.0, rows - 1.0));
    const auto col = static_cast<std::uint32_t>(std::clamp(std::round(c), 0.0, cols - 1.0));
    const float v = grid.at(row, col);
    if (grid.is_nodata(v)) return std::nullopt;
    return static_cast<double>(v);
  }

  // Bilinear over the 4 surrounding centers; corners outside the grid or
  // holding nodata degrade the sample to the nearest valid corner.
  const double r0 = std::floor(r);
  const double c0 = std::floor(c);
  struct Corner {
    double row, col;
    double value;
    bool valid;
  };
  Corner corners[4];
  int k = 0;
  for (int dr = 0; dr <= 1; ++dr) {
    for (int dc = 0; dc <= 1; ++dc) {
      const double rr = r0 + dr;
      const double cc = c0 + dc;
      Corner corner{rr, cc, 0.0, false};
      if (rr >= 0.0 && rr <= rows - 1.0 && cc >= 0.0 && cc <= cols - 1.0) {
        const float v = grid.at(static_cast<std::uint32_t>(rr), static_cast<std::uint32_t>(cc));
        if (!grid.is_nodata(v)) {
          corner.value = static_cast<double>(v);
          corner.valid = true;
        }
      }
      corners[k++] = corner;
    }
  }

  const bool all_valid = corners[0].valid && corners[1].valid && corners[2].valid &&
                         corners[3].valid;
  if (all_valid) {
    const double fr = r - r0;
    const double fc = c - c0;
    // Nested lerps keep constant fields exactly constant.
    auto lerp = [](double a, double b, double t) { return a + t * (b - a); };
    const double top = lerp(corners[0].value, corners[1].value, fc);
    const double bottom = lerp(corners[2].value, corners[3].value, fc);
    return lerp(top, bottom, fr);
  }

  const Corner* best = nullptr;
  double best_dist = std::numeric_limits<double>::infinity();
  for (const Corner& corner : corners) {
    if (!corner.valid) continue;
    const double dr = corner.row - r;
    const double dc = corner.col - c;
    const double dist = dr * dr + dc * dc;
    if (dist < best_dist) {
      best_dist = dist;
      best = &corner;
    }
  }
  if (best == nullptr) return std::nullopt;
  return best->value;
}

// ---- source client -----------------------------------------------------------------

std::shared_ptr<const Grid> SourceClient::fetch(const GridRequest& request) {
  const std::string key = request.cache_key();
  std::promise<std::shared_ptr<const Grid>> promise;
  std::shared_future<std::shared_ptr<const Grid>> future;
  bool owner = false;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      future = promise.get_future().share();
      cache_.emplace(key, future);
      owner = true;
      underlying_reads_.fetch_add(1, std::memory_order_relaxed);
    } else {
      future = it->second;
    }
  }
  if (owner) {
    // Single flight: concurrent identical misses wait on this future.
    try {
      promise.set_value(fetch_through_disk_cache(request));
    } catch (...) {
      promise.set_exception(std::current_exception());
      std::lock_guard<std::mutex> lock(mutex_);
      cache_.erase(key);  // failures are not cached
    }
  }
  return future.get();
}

std::size_t SourceClient::underlying_reads() const {
  return underlying_reads_.load(std::memory_order_relaxed);
}

std::shared_ptr<const Grid> SourceClient::fetch_through_disk_cache(const GridRequest& request) {
  if (!disk_cache_dir_) return fetch_uncached(request);
  std::string name = request.cache_key();
  std::replace(name.begin(), name.end(), '|', '_');
  std::replace(name.begin(), name.end(), '/', '_');
  const std::filesystem::path cached = *disk_cache_dir_ / (name + ".agrd");
  if (std::filesystem::exists(cached)) {
    return std::make_shared<Grid>(read_grid(cached));
  }
  std::shared_ptr<const Grid> grid = fetch_uncached(request);
  std::error_code ec;
  std::filesystem::create_directories(*disk_cache_dir_, ec);
  if (!ec) write_grid(*grid, cached);
  return grid;
}

// ---- file-backed client ---------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

SourceConfig load_source_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("sources: cannot read " + path.string());
  SourceConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ParseError("sources: line " + std::to_string(line_no) + " of " + path.string() +
                       " is not key = value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key == "root") {
      config.root = value;
    } else if (key == "static_dir") {
      config.static_dir = value;
    } else if (key == "dynamic_dir") {
      config.dynamic_dir = value;
    } else {
      throw ParseError("sources: unknown key '" + key + "' at line " + std::to_string(line_no) +
                       " of " + path.string());
    }
  }
  if (config.root.empty() && (config.static_dir.empty() || config.dynamic_dir.empty())) {
    throw ParseError("sources: " + path.string() + " must set root (or both *_dir keys)");
  }
  if (config.static_dir.empty()) config.static_dir = config.root / "static";
  if (config.dynamic_dir.empty()) config.dynamic_dir = config.root / "dynamic";
  return config;
}

void write_source_config(const SourceConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("sources: cannot write " + path.string());
  out << "root = " << config.root.string() << "\n";
  if (!config.static_dir.empty() && config.static_dir != config.root / "static") {
    out << "static_dir = " << config.static_dir.string() << "\n";
  }
  if (!config.dynamic_dir.empty() && config.dynamic_dir != config.root / "dynamic") {
    out << "dynamic_dir = " << config.dynamic_dir.string() << "\n";
  }
  if (!out.flush()) throw IoError("sources: write failed for " + path.string());
}

FileSourceClient::FileSourceClient(SourceConfig config) : config_(std::move(config)) {
  if (config_.static_dir.empty()) config_.static_dir = config_.root / "static";
  if (config_.dynamic_dir.empty()) config_.dynamic_dir = config_.root / "dynamic";
  const char* cache_dir = std::getenv("HARVESTCAST_CACHE_DIR");
  if (cache_dir != nullptr && *cache_dir != '\0') set_disk_cache_dir(cache_dir);
}

std::filesystem::path FileSourceClient::path_for(const GridRequest& request) const {
  if (request.period.empty()) {
    return config_.static_dir / (request.variable + ".agrd");
  }
  return config_.dynamic_dir / request.period / (request.variable + ".agrd");
}

std::shared_ptr<const Grid> FileSourceClient::fetch_uncached(const GridRequest& request) {
  const std::filesystem::path path = path_for(request);
  if (!std::filesystem::exists(path)) {
    throw MissingDataError("sources: no grid for variable '" + request.variable + "'" +
                           (request.period.empty() ? "" : " period '" + request.period + "'") +
                           " (looked at " + path.string() + ")");
  }
  return std::make_shared<Grid>(read_grid(path));
}

// ---- feature assembly ------------------------------------------------------------------

std::optional<PointFeatures> try_assemble_features(SourceClient& client, double lat, double lon,
                                                   const std::string& season,
                                                   std::vector<std::string>* gaps) {
  PointFeatures features;
  bool complete = true;
  auto note_gap = [&](const std::string& what) {
    complete = false;
    if (gaps != nullptr) gaps->push_back(what);
  };

  for (std::size_t i = 0; i < kSoilPropertyCount * kSoilDepthCount; ++i) {
    const std::string name = static_feature_name(i);
    const std::shared_ptr<const Grid> grid = client.fetch({name, "", {}});
    std::optional<double> v;
    try {
      v = sample_grid(*grid, lat, lon, SampleMethod::nearest);
    } catch (const ContractError&) {
      v = std::nullopt;  // outside this grid's extent
    }
    if (!v) {
      note_gap(name);
      continue;
    }
    features.static_features[i] = *v;
  }
  features.static_features[kSoilPropertyCount * kSoilDepthCount] = lat;
  features.static_features[kSoilPropertyCount * kSoilDepthCount + 1] = lon;

  for (std::size_t f = 0; f < kDynamicFeatureCount; ++f) {
    const std::string name = dynamic_feature_name(f);
    const std::shared_ptr<const Grid> grid = client.fetch({name, season, {}});
    std::optional<double> v;
    try {
      v = sample_grid(*grid, lat, lon, SampleMethod::bilinear);
    } catch (const ContractError&) {
      v = std::nullopt;
    }
    if (!v) {
      note_gap(name + " (" + season + ")");
      continue;
    }
    features.dynamic[f] = *v;
  }

  if (!complete) return std::nullopt;
  return features;
}

PointFeatures assemble_features(SourceClient& client, double lat, double lon,
                                const std::string& season) {
  std::vector<std::string> gaps;
  std::optional<PointFeatures> features = try_assemble_features(client, lat, lon, season, &gaps);
  if (!features) {
    std::ostringstream os;
    os << "assemble: missing data at (" << lat << ", " << lon << "):";
    for (const std::string& gap : gaps) os << " " << gap;
    throw MissingDataError(os.str());
  }
  return *features;
}

}  // namespace harvestcast
