#include "harvestcast/forecast.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace harvestcast {

void BBoxRequest::validate() const {
  bbox.validate();
  if (!(resolution_deg > 0.0) || !std::isfinite(resolution_deg)) {
    throw ContractError("bbox: resolution must be positive, got " +
                        std::to_string(resolution_deg));
  }
}

namespace {

std::size_t cells_for(double extent, double resolution) {
  double x = extent / resolution;
  const double snapped = std::round(x);
  if (std::abs(x - snapped) < 1e-9) x = snapped;
  return static_cast<std::size_t>(std::ceil(x));
}

// Normalized feature tensors for a row of assembled points.
struct RowBatch {
  std::vector<double> dynamic;
  std::vector<double> static_;
  std::vector<std::uint32_t> cols;
};

}  // namespace

Grid predict_bbox(const BBoxRequest& request, SourceClient& client, const YieldNet& net,
                  std::size_t workers) {
  request.validate();
  if (workers == 0) throw ContractError("bbox: need at least one worker");

  // Fetch every required variable up front so absent sources fail fast with
  // the full gap list (and the cache is warm before workers start).
  {
    std::vector<std::string> missing;
    for (std::size_t i = 0; i < kSoilPropertyCount * kSoilDepthCount; ++i) {
      try {
        client.fetch({static_feature_name(i), "", request.bbox});
      } catch (const MissingDataError&) {
        missing.push_back(static_feature_name(i));
      }
    }
    for (std::size_t f = 0; f < kDynamicFeatureCount; ++f) {
      try {
        client.fetch({dynamic_feature_name(f), request.season, request.bbox});
      } catch (const MissingDataError&) {
        missing.push_back(dynamic_feature_name(f) + " (" + request.season + ")");
      }
    }
    if (!missing.empty()) {
      std::ostringstream os;
      os << "bbox: missing source variables:";
      for (const std::string& m : missing) os << " " << m;
      throw MissingDataError(os.str());
    }
  }

  const double res = request.resolution_deg;
  Grid out;
  out.variable = "yield_kg_ha";
  out.rows = static_cast<std::uint32_t>(
      cells_for(request.bbox.lat_max - request.bbox.lat_min, res));
  out.cols = static_cast<std::uint32_t>(
      cells_for(request.bbox.lon_max - request.bbox.lon_min, res));
  out.lat0 = request.bbox.lat_min + 0.5 * res;
  out.lon0 = request.bbox.lon_min + 0.5 * res;
  out.dlat = res;
  out.dlon = res;
  out.nodata = -9999.0f;
  out.values.assign(static_cast<std::size_t>(out.rows) * out.cols, out.nodata);

  const NormStats& stats = net.norm_stats();

  auto process_row = [&](std::uint32_t row) {
    const double lat = out.lat0 + static_cast<double>(row) * res;
    RowBatch batch;
    batch.dynamic.reserve(out.cols * kDynamicFeatureCount);
    batch.static_.reserve(out.cols * kStaticFeatureCount);
    for (std::uint32_t col = 0; col < out.cols; ++col) {
      const double lon = out.lon0 + static_cast<double>(col) * res;
      std::optional<PointFeatures> features =
          try_assemble_features(client, lat, lon, request.season, nullptr);
      if (!features) continue;
      Sample probe;
      std::copy(features->static_features.begin(), features->static_features.end(),
                probe.static_features.begin());
      std::copy(features->dynamic.begin(), features->dynamic.end(), probe.dynamic.begin());
      auto [dyn, sta] = normalize(probe, stats);
      batch.dynamic.insert(batch.dynamic.end(), dyn.values().begin(), dyn.values().end());
      batch.static_.insert(batch.static_.end(), sta.values().begin(), sta.values().end());
      batch.cols.push_back(col);
    }
    if (batch.cols.empty()) return;
    const std::size_t n = batch.cols.size();
    Tape tape(/*grad_enabled=*/false);
    Tensor dyn = Tensor::from_data({n, kMonthCount, kWeatherVariableCount},
                                   std::move(batch.dynamic));
    Tensor sta = Tensor::from_data({n, kStaticFeatureCount}, std::move(batch.static_));
    Tensor pred = net.forward(tape, dyn, sta);
    for (std::size_t i = 0; i < n; ++i) {
      // Serving boundary: reported yields are clamped at zero.
      const double v = std::max(0.0, net.denormalize_label(pred.values()[i]));
      out.values[static_cast<std::size_t>(row) * out.cols + batch.cols[i]] =
          static_cast<float>(v);
    }
  };

  if (workers == 1 || out.rows == 1) {
    for (std::uint32_t row = 0; row < out.rows; ++row) process_row(row);
  } else {
    std::atomic<std::uint32_t> next_row{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto run = [&]() {
      while (true) {
        const std::uint32_t row = next_row.fetch_add(1);
        if (row >= out.rows) return;
        try {
          process_row(row);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    const std::size_t count = std::min<std::size_t>(workers, out.rows);
    pool.reserve(count);
    for (std::size_t i = 0; i < count; ++i) pool.emplace_back(run);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }
  return out;
}

// ---- yield records ---------------------------------------------------------------

std::vector<YieldRecord> load_yield_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("yields: cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("yields: " + path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "region_id,year,lat,lon,yield_kg_ha") {
    throw ParseError("yields: bad header in " + path.string());
  }

  auto parse_field = [](const std::string& field, double& out) {
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
    return ec == std::errc() && ptr == field.data() + field.size() && !field.empty();
  };

  std::vector<YieldRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t begin = 0;
    while (true) {
      const std::size_t comma = line.find(',', begin);
      if (comma == std::string::npos) {
        fields.push_back(line.substr(begin));
        break;
      }
      fields.push_back(line.substr(begin, comma - begin));
      begin = comma + 1;
    }
    if (fields.size() != 5) {
      throw ParseError("yields: line " + std::to_string(line_no) + ": expected 5 columns, got " +
                       std::to_string(fields.size()));
    }
    YieldRecord r;
    r.region_id = fields[0];
    int year = 0;
    auto [yptr, yec] = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), year);
    bool ok = !r.region_id.empty() && yec == std::errc() &&
              yptr == fields[1].data() + fields[1].size();
    r.year = year;
    ok = ok && parse_field(fields[2], r.lat) && parse_field(fields[3], r.lon) &&
         parse_field(fields[4], r.yield_kg_ha);
    if (!ok || r.yield_kg_ha < 0.0 || !std::isfinite(r.yield_kg_ha)) {
      throw ParseError("yields: line " + std::to_string(line_no) + ": malformed record");
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_yield_records(std::span<const YieldRecord> records,
                         const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("yields: cannot write " + path.string());
  out << "region_id,year,lat,lon,yield_kg_ha\n";
  char buffer[32];
  auto emit = [&](double v) {
    std::snprintf(buffer, sizeof(buffer), "%.17g", v);
    out << buffer;
  };
  for (const YieldRecord& r : records) {
    out << r.region_id << ',' << r.year << ',';
    emit(r.lat);
    out << ',';
    emit(r.lon);
    out << ',';
    emit(r.yield_kg_ha);
    out << '\n';
  }
  if (!out.flush()) throw IoError("yields: write failed for " + path.string());
}

Dataset build_dataset(SourceClient& client, std::span<const YieldRecord> records,
                      const std::function<std::string(const YieldRecord&)>& season_of) {
  Dataset dataset;
  std::vector<std::string> failures;
  for (const YieldRecord& r : records) {
    std::vector<std::string> gaps;
    std::optional<PointFeatures> features =
        try_assemble_features(client, r.lat, r.lon, season_of(r), &gaps);
    if (!features) {
      std::ostringstream os;
      os << r.region_id << "/" << r.year << " at (" << r.lat << ", " << r.lon << "):";
      for (const std::string& g : gaps) os << " " << g;
      failures.push_back(os.str());
      continue;
    }
    Sample s;
    s.region_id = r.region_id;
    s.year = r.year;
    s.lat = r.lat;
    s.lon = r.lon;
    std::copy(features->static_features.begin(), features->static_features.end(),
              s.static_features.begin());
    std::copy(features->dynamic.begin(), features->dynamic.end(), s.dynamic.begin());
    s.yield_kg_ha = r.yield_kg_ha;
    dataset.samples.push_back(std::move(s));
  }
  if (!failures.empty()) {
    std::ostringstream os;
    os << "dataset: " << failures.size() << " record(s) with missing data";
    for (const std::string& f : failures) os << "\n  " << f;
    throw MissingDataError(os.str());
  }
  return dataset;
}

// ---- synthetic world ----------------------------------------------------------------

namespace {

// Smooth periodic field over the bbox; amplitude and center chosen per
// variable so sampled features stay in the same ranges the sample generator
// draws from.
struct Field {
  double center = 0.0;
  double amplitude = 0.0;
  double kx = 0.0, ky = 0.0, phase_x = 0.0, phase_y = 0.0;

  double operator()(double lat, double lon) const {
    return center + amplitude * std::sin(kx * lon + phase_x) * std::cos(ky * lat + phase_y);
  }
};

Field make_field(std::mt19937_64& rng, double center, double amplitude) {
  std::uniform_real_distribution<double> freq(0.25, 1.1);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  Field f;
  f.center = center;
  f.amplitude = amplitude;
  f.kx = 2.0 * M_PI * freq(rng);
  f.ky = 2.0 * M_PI * freq(rng);
  f.phase_x = phase(rng);
  f.phase_y = phase(rng);
  return f;
}

Grid rasterize_field(const Field& field, const BoundingBox& bbox, double resolution,
                     const std::string& variable) {
  Grid grid;
  grid.variable = variable;
  grid.rows = static_cast<std::uint32_t>(
      std::ceil((bbox.lat_max - bbox.lat_min) / resolution - 1e-9));
  grid.cols = static_cast<std::uint32_t>(
      std::ceil((bbox.lon_max - bbox.lon_min) / resolution - 1e-9));
  grid.lat0 = bbox.lat_min + 0.5 * resolution;
  grid.lon0 = bbox.lon_min + 0.5 * resolution;
  grid.dlat = resolution;
  grid.dlon = resolution;
  grid.values.resize(static_cast<std::size_t>(grid.rows) * grid.cols);
  for (std::uint32_t r = 0; r < grid.rows; ++r) {
    const double lat = grid.lat0 + r * resolution;
    for (std::uint32_t c = 0; c < grid.cols; ++c) {
      const double lon = grid.lon0 + c * resolution;
      grid.values[static_cast<std::size_t>(r) * grid.cols + c] =
          static_cast<float>(field(lat, lon));
    }
  }
  return grid;
}

double season_weight(std::size_t month) {
  return std::sin(M_PI * (static_cast<double>(month) + 0.5) / static_cast<double>(kMonthCount));
}

}  // namespace

SyntheticWorldPaths write_synthetic_world(const SyntheticWorldSpec& spec,
                                          const std::filesystem::path& root) {
  spec.bbox.validate();
  if (spec.regions < 1) throw ContractError("world: need at least one region");

  std::filesystem::create_directories(root / "static");
  std::filesystem::create_directories(root / "dynamic" / spec.season);

  std::mt19937_64 rng(spec.seed);

  // Soil fields, property-major like the schema.
  struct PropertySpec {
    double center, amplitude, depth_slope;
  };
  const PropertySpec soil_specs[kSoilPropertyCount] = {
      {32.0, 16.0, 0.0},     // clay
      {28.0, 12.0, 0.0},     // silt
      {40.0, 16.0, 0.0},     // sand
      {1350.0, 180.0, 12.0}, // bulk density
      {15.0, 11.0, 0.0},     // coarse fragments
      {22.0, 13.0, 0.0},     // cec
      {18.0, 8.0, -2.0},     // soc, declining with depth
      {60.0, 9.0, 0.0},      // ph_h2o x10
      {54.0, 9.0, 0.0},      // ph_kcl x10
  };
  for (std::size_t p = 0; p < kSoilPropertyCount; ++p) {
    Field base = make_field(rng, soil_specs[p].center, soil_specs[p].amplitude);
    for (std::size_t d = 0; d < kSoilDepthCount; ++d) {
      Field field = base;
      field.center += soil_specs[p].depth_slope * static_cast<double>(d);
      const std::string name = static_feature_name(p * kSoilDepthCount + d);
      write_grid(rasterize_field(field, spec.bbox, spec.static_resolution_deg, name),
                 root / "static" / (name + ".agrd"));
    }
  }

  // Weather fields per month.
  Field tmin_base = make_field(rng, 17.0, 4.0);
  Field tmax_base = make_field(rng, 27.0, 4.0);
  Field precip_base = make_field(rng, 110.0, 45.0);
  for (std::size_t m = 0; m < kMonthCount; ++m) {
    const double w = season_weight(m);
    Field tmin = tmin_base;
    tmin.center += 2.5 * w;
    Field tmax = tmax_base;
    tmax.center += 2.5 * w;
    Field precip = precip_base;
    precip.center *= 0.55 + 0.9 * w;
    precip.amplitude *= 0.55 + 0.9 * w;
    const Field* fields[kWeatherVariableCount] = {&tmin, &tmax, &precip};
    for (std::size_t v = 0; v < kWeatherVariableCount; ++v) {
      const std::string name = dynamic_feature_name(m * kWeatherVariableCount + v);
      write_grid(rasterize_field(*fields[v], spec.bbox, spec.dynamic_resolution_deg, name),
                 root / "dynamic" / spec.season / (name + ".agrd"));
    }
  }

  SyntheticWorldPaths paths;
  paths.root = root;
  paths.sources_config = root / "sources.cfg";
  SourceConfig config;
  config.root = root;
  write_source_config(config, paths.sources_config);

  // Yield records at random interior points, labeled with the ground-truth
  // response on the assembled features plus noise.
  SourceConfig client_config;
  client_config.root = root;
  FileSourceClient client(client_config);
  const double margin =
      std::max(spec.static_resolution_deg, spec.dynamic_resolution_deg);
  std::uniform_real_distribution<double> lat_dist(spec.bbox.lat_min + margin,
                                                  spec.bbox.lat_max - margin);
  std::uniform_real_distribution<double> lon_dist(spec.bbox.lon_min + margin,
                                                  spec.bbox.lon_max - margin);

  const std::map<std::string, double>& constants = synthetic_truth_constants();
  std::vector<YieldRecord> records;
  std::vector<double> truths;
  records.reserve(spec.regions);
  int year = 0;
  try {
    year = std::stoi(spec.season);
  } catch (...) {
    year = 2020;
  }
  for (std::size_t i = 0; i < spec.regions; ++i) {
    YieldRecord r;
    r.region_id = "region-" + std::to_string(i);
    r.year = year;
    r.lat = lat_dist(rng);
    r.lon = lon_dist(rng);
    PointFeatures features = assemble_features(client, r.lat, r.lon, spec.season);
    Sample probe;
    std::copy(features.static_features.begin(), features.static_features.end(),
              probe.static_features.begin());
    std::copy(features.dynamic.begin(), features.dynamic.end(), probe.dynamic.begin());
    const double truth = synthetic_ground_truth(probe, constants);
    truths.push_back(truth);
    records.push_back(std::move(r));
  }
  double mean_truth = 0.0;
  for (double t : truths) mean_truth += t;
  mean_truth /= static_cast<double>(truths.size());
  const double sigma = spec.noise_fraction * mean_truth;
  std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double n = sigma > 0.0 ? noise(rng) : 0.0;
    records[i].yield_kg_ha = std::max(0.0, truths[i] + n);
  }

  paths.yield_records = root / "yields.csv";
  write_yield_records(records, paths.yield_records);
  return paths;
}

}  // namespace harvestcast
