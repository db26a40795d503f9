#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "harvestcast/tensor.hpp"

namespace harvestcast {

inline constexpr std::size_t kSoilPropertyCount = 9;
inline constexpr std::size_t kSoilDepthCount = 7;
inline constexpr std::size_t kMonthCount = 8;
inline constexpr std::size_t kWeatherVariableCount = 3;
inline constexpr std::size_t kStaticFeatureCount = kSoilPropertyCount * kSoilDepthCount + 2;  // 65
inline constexpr std::size_t kDynamicFeatureCount = kMonthCount * kWeatherVariableCount;      // 24

extern const std::array<const char*, kSoilPropertyCount> kSoilProperties;
extern const std::array<int, kSoilDepthCount> kSoilDepthsCm;
extern const std::array<const char*, kWeatherVariableCount> kWeatherVariables;  // tmin, tmax, precip

// Names of the 65 static features: soil properties property-major across the
// 7 depths ("clay_d0" ... "ph_kcl_d200"), then "lat", "lon".
std::string static_feature_name(std::size_t index);
// Names of the 24 dynamic features, month-major: "m1_tmin" ... "m8_precip".
std::string dynamic_feature_name(std::size_t index);
// The 92 sample-table columns in file order.
std::vector<std::string> sample_table_columns();

enum class Split : std::uint8_t { train = 0, validation = 1, test = 2 };

// One (region, season) record: 63 soil values + lat/lon as static features,
// an 8-month weather matrix, and the observed yield label.
struct Sample {
  std::string region_id;
  int year = 0;
  double lat = 0.0;
  double lon = 0.0;
  std::array<double, kStaticFeatureCount> static_features{};  // [..., lat, lon]
  std::array<double, kDynamicFeatureCount> dynamic{};         // rows = months, cols = (tmin, tmax, precip)
  double yield_kg_ha = 0.0;

  double weather(std::size_t month, std::size_t variable) const {
    return dynamic[month * kWeatherVariableCount + variable];
  }
  double& weather(std::size_t month, std::size_t variable) {
    return dynamic[month * kWeatherVariableCount + variable];
  }

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::string provenance = "real";  // "real" | "synthetic"
  std::vector<Split> split;         // empty until split_dataset ran
  std::map<std::string, double> metadata;  // synthetic generator constants

  std::size_t size() const { return samples.size(); }
  bool has_split() const { return split.size() == samples.size(); }
  std::vector<std::size_t> indices_of(Split s) const;
};

// Standardization statistics, fit on the training split only. Features:
// std == 0 marks a constant feature that was dropped; normalize maps it to 0.
// Labels: training standardizes the regression target with label_mean/std and
// every reported loss and prediction is mapped back to kg/ha (MAE is
// positively homogeneous, so reported losses are exact). A constant label
// column keeps label_std = 1. Default-constructed stats are the identity.
struct NormStats {
  std::array<double, kStaticFeatureCount> static_mean{};
  std::array<double, kStaticFeatureCount> static_std;
  std::array<double, kDynamicFeatureCount> dynamic_mean{};
  std::array<double, kDynamicFeatureCount> dynamic_std;
  double label_mean = 0.0;
  double label_std = 1.0;
  std::vector<std::string> dropped_features;

  NormStats() {
    static_std.fill(1.0);
    dynamic_std.fill(1.0);
  }
};

// Sample-table ingestion. Delimited text (comma), one header row, exactly 92
// data columns: region_id, year, lat, lon, 63 soil columns, 24 weather
// columns, yield_kg_ha. Malformed rows are reported with line numbers; any
// bad row fails the load.
Dataset load_samples(const std::filesystem::path& path);
void write_samples(const Dataset& dataset, const std::filesystem::path& path);

// The split protocol: seeded shuffle, test = round(0.2*N), validation =
// round(0.3*(N - test)), train = remainder. Needs at least 10 samples.
struct SplitSizes {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};
SplitSizes split_sizes(std::size_t n);
void split_dataset(Dataset& dataset, std::uint64_t seed);

NormStats fit_normalizer(const Dataset& dataset);

// Returns (dynamic [8 x 3], static [65]) standardized feature tensors.
std::pair<Tensor, Tensor> normalize(const Sample& sample, const NormStats& stats);
std::array<double, kStaticFeatureCount> denormalize_static(const Tensor& t, const NormStats& stats);
std::array<double, kDynamicFeatureCount> denormalize_dynamic(const Tensor& t, const NormStats& stats);

// Synthetic dataset with a known smooth ground-truth yield function. All
// generator constants land in Dataset::metadata so tests can recompute the
// noiseless truth via synthetic_ground_truth.
struct SyntheticSpec {
  std::size_t size = 0;
  double noise_fraction = 0.05;  // sigma as a fraction of the mean noiseless yield
};
Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);
double synthetic_ground_truth(const Sample& sample, const std::map<std::string, double>& constants);
const std::map<std::string, double>& synthetic_truth_constants();

}  // namespace harvestcast
