#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <thread>

#include "harvestcast/raster.hpp"

using namespace harvestcast;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::create_directories(dir);
  return dir;
}

Grid make_grid(std::uint32_t rows, std::uint32_t cols, double lat0, double lon0, double dlat,
               double dlon, std::vector<float> values) {
  Grid g;
  g.variable = "test";
  g.rows = rows;
  g.cols = cols;
  g.lat0 = lat0;
  g.lon0 = lon0;
  g.dlat = dlat;
  g.dlon = dlon;
  g.values = std::move(values);
  return g;
}

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Constant-valued world covering the soil and weather schema.
void write_constant_world(const std::filesystem::path& root, const std::string& season,
                          double static_value, double weather_value) {
  std::filesystem::create_directories(root / "static");
  std::filesystem::create_directories(root / "dynamic" / season);
  Grid g = make_grid(4, 4, -20.0, -50.0, 0.5, 0.5, std::vector<float>(16, (float)static_value));
  for (std::size_t i = 0; i < kSoilPropertyCount * kSoilDepthCount; ++i) {
    g.variable = static_feature_name(i);
    write_grid(g, root / "static" / (g.variable + ".agrd"));
  }
  Grid w = make_grid(3, 3, -20.0, -50.0, 1.0, 1.0, std::vector<float>(9, (float)weather_value));
  for (std::size_t f = 0; f < kDynamicFeatureCount; ++f) {
    w.variable = dynamic_feature_name(f);
    write_grid(w, root / "dynamic" / season / (w.variable + ".agrd"));
  }
}

}  // namespace

TEST_CASE("agrd round trip") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> value(-50.0f, 50.0f);
  std::vector<float> values(15);
  for (float& v : values) v = value(rng);
  Grid g = make_grid(3, 5, -10.0, -55.0, -0.05, 0.05, values);
  g.variable = "clay_d0";

  const auto dir = temp_dir("hc_raster");
  const auto path = dir / "clay_d0.agrd";
  write_grid(g, path);
  Grid back = read_grid(path);

  CHECK(back.rows == g.rows);
  CHECK(back.cols == g.cols);
  CHECK(back.lat0 == g.lat0);
  CHECK(back.lon0 == g.lon0);
  CHECK(back.dlat == g.dlat);
  CHECK(back.dlon == g.dlon);
  CHECK(back.nodata == g.nodata);
  CHECK(back.values == g.values);

  SUBCASE("write-read-write is byte identical") {
    const auto again = dir / "again.agrd";
    write_grid(back, again);
    CHECK(slurp(path) == slurp(again));
  }
  SUBCASE("truncated payload") {
    std::vector<char> bytes = slurp(path);
    bytes.resize(bytes.size() - 4);
    const auto bad = dir / "trunc.agrd";
    std::ofstream(bad, std::ios::binary).write(bytes.data(), bytes.size());
    CHECK_THROWS_AS(read_grid(bad), FormatError);
  }
  SUBCASE("bad magic") {
    std::vector<char> bytes = slurp(path);
    bytes[0] = 'X';
    const auto bad = dir / "magic.agrd";
    std::ofstream(bad, std::ios::binary).write(bytes.data(), bytes.size());
    CHECK_THROWS_AS(read_grid(bad), FormatError);
  }
  SUBCASE("unknown version") {
    std::vector<char> bytes = slurp(path);
    bytes[4] = 9;
    const auto bad = dir / "version.agrd";
    std::ofstream(bad, std::ios::binary).write(bytes.data(), bytes.size());
    CHECK_THROWS_AS(read_grid(bad), FormatError);
  }
  SUBCASE("one-by-one grid is valid") {
    Grid tiny = make_grid(1, 1, 0.0, 0.0, 1.0, 1.0, {42.0f});
    const auto p = dir / "tiny.agrd";
    write_grid(tiny, p);
    CHECK(read_grid(p).values[0] == 42.0f);
  }
}

TEST_CASE("esri ascii ingestion") {
  const auto dir = temp_dir("hc_asc");
  const auto path = dir / "demo.asc";
  std::ofstream(path) << "ncols 3\nnrows 2\nxllcorner 10.0\nyllcorner 20.0\n"
                      << "cellsize 0.5\nNODATA_value -9999\n"
                      << "1 2 3\n4 5 6\n";
  Grid g = read_esri_ascii(path, "demo");
  CHECK(g.rows == 2);
  CHECK(g.cols == 3);
  CHECK(g.dlat == -0.5);
  CHECK(g.dlon == 0.5);
  // top row center: yll + (nrows - 0.5) * cellsize
  CHECK(g.lat0 == doctest::Approx(20.75));
  CHECK(g.lon0 == doctest::Approx(10.25));
  CHECK(g.at(0, 0) == 1.0f);
  CHECK(g.at(1, 2) == 6.0f);
  // north-up storage: sampling the top-left center returns the first value
  CHECK(*sample_grid(g, 20.75, 10.25, SampleMethod::nearest) == 1.0);

  SUBCASE("value count mismatch") {
    const auto bad = dir / "short.asc";
    std::ofstream(bad) << "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3 4\n";
    CHECK_THROWS_AS(read_esri_ascii(bad, "x"), FormatError);
  }
}

TEST_CASE("sampling") {
  SUBCASE("constant grid returns the constant under both methods") {
    Grid g = make_grid(4, 4, 0.0, 0.0, 1.0, 1.0, std::vector<float>(16, 7.5f));
    CHECK(*sample_grid(g, 1.3, 2.7, SampleMethod::nearest) == 7.5);
    CHECK(*sample_grid(g, 1.3, 2.7, SampleMethod::bilinear) == 7.5);
  }
  SUBCASE("bilinear at the midpoint averages the four corners") {
    Grid g = make_grid(2, 2, 0.0, 0.0, 1.0, 1.0, {1.0f, 2.0f, 3.0f, 4.0f});
    CHECK(*sample_grid(g, 0.5, 0.5, SampleMethod::bilinear) == doctest::Approx(2.5));
  }
  SUBCASE("hand bilinear at the quarter point") {
    Grid g = make_grid(2, 2, 0.0, 0.0, 1.0, 1.0, {1.0f, 2.0f, 3.0f, 4.0f});
    CHECK(*sample_grid(g, 0.25, 0.25, SampleMethod::bilinear) == doctest::Approx(1.75));
  }
  SUBCASE("cell centers reproduce stored values exactly, both methods") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> value(-100.0f, 100.0f);
    std::vector<float> values(6 * 5);
    for (float& v : values) v = value(rng);
    // north-up storage, negative dlat
    Grid g = make_grid(6, 5, -10.0, -55.0, -0.25, 0.5, values);
    for (std::uint32_t r = 0; r < g.rows; ++r) {
      for (std::uint32_t c = 0; c < g.cols; ++c) {
        const double lat = g.lat0 + r * g.dlat;
        const double lon = g.lon0 + c * g.dlon;
        CHECK(*sample_grid(g, lat, lon, SampleMethod::nearest) == (double)g.at(r, c));
        CHECK(*sample_grid(g, lat, lon, SampleMethod::bilinear) == (double)g.at(r, c));
      }
    }
  }
  SUBCASE("bilinear bounded by the corner extremes") {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<float> value(-5.0f, 5.0f);
    std::vector<float> values(16);
    for (float& v : values) v = value(rng);
    Grid g = make_grid(4, 4, 0.0, 0.0, 1.0, 1.0, values);
    std::uniform_real_distribution<double> point(0.0, 3.0);
    const float lo = *std::min_element(values.begin(), values.end());
    const float hi = *std::max_element(values.begin(), values.end());
    for (int i = 0; i < 200; ++i) {
      const double v = *sample_grid(g, point(rng), point(rng), SampleMethod::bilinear);
      CHECK(v >= lo - 1e-9);
      CHECK(v <= hi + 1e-9);
    }
  }
  SUBCASE("nodata corner degrades to the nearest valid corner") {
    Grid g = make_grid(2, 2, 0.0, 0.0, 1.0, 1.0, {1.0f, -9999.0f, 3.0f, 4.0f});
    // nearest valid corner to (0.25, 0.25) is (0, 0)
    CHECK(*sample_grid(g, 0.25, 0.25, SampleMethod::bilinear) == 1.0);
    // close to the masked corner, the nearest valid is (1, 1) -> 4
    CHECK(*sample_grid(g, 0.4, 0.9, SampleMethod::bilinear) == 4.0);
  }
  SUBCASE("all corners nodata") {
    Grid g = make_grid(2, 2, 0.0, 0.0, 1.0, 1.0,
                       {-9999.0f, -9999.0f, -9999.0f, -9999.0f});
    CHECK(!sample_grid(g, 0.5, 0.5, SampleMethod::bilinear).has_value());
    CHECK(!sample_grid(g, 0.1, 0.1, SampleMethod::nearest).has_value());
  }
  SUBCASE("outside the extent raises with the extent in the message") {
    Grid g = make_grid(2, 2, 0.0, 0.0, 1.0, 1.0, {1.0f, 2.0f, 3.0f, 4.0f});
    CHECK_THROWS_WITH_AS(sample_grid(g, 5.0, 0.5, SampleMethod::nearest),
                         doctest::Contains("extent"), ContractError);
    // half-cell margin is still inside
    CHECK(*sample_grid(g, -0.49, 0.0, SampleMethod::nearest) == 1.0);
  }
}

TEST_CASE("source client cache") {
  const auto root = temp_dir("hc_sources");
  const std::string season = "2020";
  write_constant_world(root, season, 30.0, 15.0);
  SourceConfig config;
  config.root = root;

  SUBCASE("at most one underlying read per request") {
    FileSourceClient client(config);
    GridRequest request{"clay_d0", "", {}};
    auto a = client.fetch(request);
    auto b = client.fetch(request);
    CHECK(a.get() == b.get());
    CHECK(client.underlying_reads() == 1);
  }
  SUBCASE("concurrent identical misses cause one fetch") {
    FileSourceClient client(config);
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) {
      threads.emplace_back([&client] {
        for (int k = 0; k < 10; ++k) client.fetch({"silt_d5", "", {}});
      });
    }
    for (auto& t : threads) t.join();
    CHECK(client.underlying_reads() == 1);
  }
  SUBCASE("missing variable") {
    FileSourceClient client(config);
    CHECK_THROWS_WITH_AS(client.fetch({"unobtainium", "", {}}),
                         doctest::Contains("unobtainium"), MissingDataError);
  }
  SUBCASE("disk cache serves a second client without the source") {
    const auto cache_dir = temp_dir("hc_disk_cache");
    SourceConfig cfg_copy = config;
    {
      FileSourceClient client(cfg_copy);
      client.set_disk_cache_dir(cache_dir);
      client.fetch({"sand_d15", "", {}});
    }
    // remove the original source file; the cache must still satisfy the fetch
    std::filesystem::remove(root / "static" / "sand_d15.agrd");
    FileSourceClient client(cfg_copy);
    client.set_disk_cache_dir(cache_dir);
    auto grid = client.fetch({"sand_d15", "", {}});
    CHECK(grid->values[0] == 30.0f);
    write_constant_world(root, season, 30.0, 15.0);  // restore for other cases
  }
}

TEST_CASE("assemble_features") {
  const auto root = temp_dir("hc_assemble");
  const std::string season = "2021";
  write_constant_world(root, season, 25.0, 12.0);
  SourceConfig config;
  config.root = root;
  FileSourceClient client(config);

  SUBCASE("constant world gives constant features") {
    PointFeatures f = assemble_features(client, -19.0, -49.0, season);
    for (std::size_t i = 0; i < kSoilPropertyCount * kSoilDepthCount; ++i) {
      CHECK(f.static_features[i] == 25.0);
    }
    CHECK(f.static_features[63] == -19.0);
    CHECK(f.static_features[64] == -49.0);
    for (double v : f.dynamic) CHECK(v == 12.0);
  }
  SUBCASE("exactly one fetch per variable across repeated calls") {
    FileSourceClient fresh(config);
    assemble_features(fresh, -19.0, -49.0, season);
    assemble_features(fresh, -18.5, -48.5, season);
    CHECK(fresh.underlying_reads() == kSoilPropertyCount * kSoilDepthCount + kDynamicFeatureCount);
  }
  SUBCASE("soil sampled at a cell center returns that cell") {
    // overwrite one soil grid with distinct values
    Grid g = make_grid(4, 4, -20.0, -50.0, 0.5, 0.5, std::vector<float>(16, 0.0f));
    for (std::size_t i = 0; i < 16; ++i) g.values[i] = static_cast<float>(i);
    g.variable = "cec_d0";
    write_grid(g, root / "static" / "cec_d0.agrd");
    FileSourceClient fresh(config);
    PointFeatures f = assemble_features(fresh, -19.5, -49.0, season);
    // row 1, col 2 of the 4x4 grid
    CHECK(f.static_features[5 * kSoilDepthCount + 0] == 6.0);
    write_constant_world(root, season, 25.0, 12.0);
  }
  SUBCASE("missing month listed as a gap") {
    std::filesystem::remove(root / "dynamic" / season / "m3_precip.agrd");
    FileSourceClient fresh(config);
    CHECK_THROWS_WITH_AS(assemble_features(fresh, -19.0, -49.0, season),
                         doctest::Contains("m3_precip"), MissingDataError);
    write_constant_world(root, season, 25.0, 12.0);
  }
}

TEST_CASE("source config file") {
  const auto dir = temp_dir("hc_cfg");
  const auto path = dir / "sources.cfg";
  std::ofstream(path) << "# comment\nroot = " << (dir / "world").string() << "\n";
  SourceConfig config = load_source_config(path);
  CHECK(config.root == dir / "world");
  CHECK(config.static_dir == dir / "world" / "static");
  CHECK(config.dynamic_dir == dir / "world" / "dynamic");

  const auto bad = dir / "bad.cfg";
  std::ofstream(bad) << "root\n";
  CHECK_THROWS_AS(load_source_config(bad), ParseError);
}
