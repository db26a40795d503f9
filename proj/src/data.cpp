#include "harvestcast/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace harvestcast {

const std::array<const char*, kSoilPropertyCount> kSoilProperties = {
    "clay", "silt", "sand", "bulk_density", "coarse_fragments",
    "cec",  "soc",  "ph_h2o", "ph_kcl"};

const std::array<int, kSoilDepthCount> kSoilDepthsCm = {0, 5, 15, 30, 60, 100, 200};

const std::array<const char*, kWeatherVariableCount> kWeatherVariables = {"tmin", "tmax",
                                                                          "precip"};

std::string static_feature_name(std::size_t index) {
  if (index < kSoilPropertyCount * kSoilDepthCount) {
    const std::size_t property = index / kSoilDepthCount;
    const std::size_t depth = index % kSoilDepthCount;
    return std::string(kSoilProperties[property]) + "_d" + std::to_string(kSoilDepthsCm[depth]);
  }
  if (index == kSoilPropertyCount * kSoilDepthCount) return "lat";
  if (index == kSoilPropertyCount * kSoilDepthCount + 1) return "lon";
  throw ContractError("static feature index " + std::to_string(index) + " out of range");
}

std::string dynamic_feature_name(std::size_t index) {
  if (index >= kDynamicFeatureCount) {
    throw ContractError("dynamic feature index " + std::to_string(index) + " out of range");
  }
  const std::size_t month = index / kWeatherVariableCount;
  const std::size_t variable = index % kWeatherVariableCount;
  return "m" + std::to_string(month + 1) + "_" + kWeatherVariables[variable];
}

std::vector<std::string> sample_table_columns() {
  std::vector<std::string> columns = {"region_id", "year", "lat", "lon"};
  for (std::size_t i = 0; i < kSoilPropertyCount * kSoilDepthCount; ++i) {
    columns.push_back(static_feature_name(i));
  }
  for (std::size_t i = 0; i < kDynamicFeatureCount; ++i) {
    columns.push_back(dynamic_feature_name(i));
  }
  columns.push_back("yield_kg_ha");
  return columns;
}

std::vector<std::size_t> Dataset::indices_of(Split s) const {
  if (!has_split()) throw ContractError("dataset has no split assignment");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == s) out.push_back(i);
  }
  return out;
}

// ---- sample validation -----------------------------------------------------

namespace {

// clay/silt/sand are mass fractions in percent.
constexpr std::size_t kMassFractionProperties = 3;

void validate_sample(const Sample& s, std::vector<std::string>* errors, std::size_t line) {
  auto report = [&](const std::string& msg) {
    if (errors == nullptr) throw ContractError("sample: " + msg);
    errors->push_back("line " + std::to_string(line) + ": " + msg);
  };
  for (double v : s.static_features) {
    if (!std::isfinite(v)) {
      report("non-finite static feature");
      return;
    }
  }
  for (double v : s.dynamic) {
    if (!std::isfinite(v)) {
      report("non-finite weather value");
      return;
    }
  }
  if (!std::isfinite(s.yield_kg_ha) || s.yield_kg_ha < 0.0) {
    report("yield must be finite and >= 0, got " + std::to_string(s.yield_kg_ha));
  }
  for (std::size_t p = 0; p < kMassFractionProperties; ++p) {
    for (std::size_t d = 0; d < kSoilDepthCount; ++d) {
      const double v = s.static_features[p * kSoilDepthCount + d];
      if (v < 0.0 || v > 100.0) {
        report(static_feature_name(p * kSoilDepthCount + d) + " = " + std::to_string(v) +
               " outside [0, 100]");
      }
    }
  }
}

std::vector<std::string> split_line(const std::string& line) {
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
  return fields;
}

bool parse_double(const std::string& field, double& out) {
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && !field.empty();
}

bool parse_int(const std::string& field, int& out) {
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && !field.empty();
}

}  // namespace

Dataset load_samples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("samples: cannot read " + path.string());

  const std::vector<std::string> columns = sample_table_columns();
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError("samples: " + path.string() + " is empty (missing header)");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  {
    const std::vector<std::string> header = split_line(line);
    if (header != columns) {
      std::string expect_hint = header.size() == columns.size()
                                    ? "column names do not match the schema"
                                    : ("expected " + std::to_string(columns.size()) +
                                       " columns, found " + std::to_string(header.size()));
      throw ParseError("samples: bad header in " + path.string() + ": " + expect_hint);
    }
  }

  Dataset dataset;
  std::vector<std::string> errors;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_line(line);
    if (fields.size() != columns.size()) {
      errors.push_back("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(columns.size()) + " columns, found " +
                       std::to_string(fields.size()));
      continue;
    }
    Sample s;
    s.region_id = fields[0];
    bool row_ok = !s.region_id.empty();
    if (!row_ok) {
      errors.push_back("line " + std::to_string(line_no) + ": empty region_id");
    }
    row_ok = row_ok && parse_int(fields[1], s.year);
    row_ok = row_ok && parse_double(fields[2], s.lat);
    row_ok = row_ok && parse_double(fields[3], s.lon);
    std::size_t col = 4;
    for (std::size_t i = 0; row_ok && i < kSoilPropertyCount * kSoilDepthCount; ++i, ++col) {
      row_ok = parse_double(fields[col], s.static_features[i]);
    }
    for (std::size_t i = 0; row_ok && i < kDynamicFeatureCount; ++i, ++col) {
      row_ok = parse_double(fields[col], s.dynamic[i]);
    }
    row_ok = row_ok && parse_double(fields[col], s.yield_kg_ha);
    if (!row_ok) {
      if (errors.empty() || errors.back().find("line " + std::to_string(line_no)) != 0) {
        errors.push_back("line " + std::to_string(line_no) + ": non-numeric field in column " +
                         (col < columns.size() ? columns[col] : "?"));
      }
      continue;
    }
    s.static_features[kSoilPropertyCount * kSoilDepthCount] = s.lat;
    s.static_features[kSoilPropertyCount * kSoilDepthCount + 1] = s.lon;
    const std::size_t before = errors.size();
    validate_sample(s, &errors, line_no);
    if (errors.size() == before) dataset.samples.push_back(std::move(s));
  }

  if (!errors.empty()) {
    std::ostringstream os;
    os << "samples: " << errors.size() << " bad row(s) in " << path.string();
    const std::size_t shown = std::min<std::size_t>(errors.size(), 50);
    for (std::size_t i = 0; i < shown; ++i) os << "\n  " << errors[i];
    if (shown < errors.size()) os << "\n  ...";
    throw ParseError(os.str());
  }
  return dataset;
}

void write_samples(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("samples: cannot write " + path.string());

  const std::vector<std::string> columns = sample_table_columns();
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i) out << ',';
    out << columns[i];
  }
  out << '\n';

  char buffer[32];
  auto emit = [&](double v) {
    std::snprintf(buffer, sizeof(buffer), "%.17g", v);
    out << buffer;
  };
  for (const Sample& s : dataset.samples) {
    if (s.region_id.find(',') != std::string::npos) {
      throw ContractError("samples: region_id '" + s.region_id + "' contains the delimiter");
    }
    out << s.region_id << ',' << s.year << ',';
    emit(s.lat);
    out << ',';
    emit(s.lon);
    for (std::size_t i = 0; i < kSoilPropertyCount * kSoilDepthCount; ++i) {
      out << ',';
      emit(s.static_features[i]);
    }
    for (std::size_t i = 0; i < kDynamicFeatureCount; ++i) {
      out << ',';
      emit(s.dynamic[i]);
    }
    out << ',';
    emit(s.yield_kg_ha);
    out << '\n';
  }
  if (!out.flush()) throw IoError("samples: write failed for " + path.string());
}

// ---- splitting ---------------------------------------------------------------

SplitSizes split_sizes(std::size_t n) {
  SplitSizes sizes;
  sizes.test = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
  sizes.validation =
      static_cast<std::size_t>(std::llround(0.3 * static_cast<double>(n - sizes.test)));
  sizes.train = n - sizes.test - sizes.validation;
  return sizes;
}

void split_dataset(Dataset& dataset, std::uint64_t seed) {
  const std::size_t n = dataset.size();
  if (n < 10) {
    throw ContractError("split: need at least 10 samples, got " + std::to_string(n));
  }
  const SplitSizes sizes = split_sizes(n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  dataset.split.assign(n, Split::train);
  std::size_t position = 0;
  for (std::size_t i = 0; i < sizes.test; ++i) dataset.split[order[position++]] = Split::test;
  for (std::size_t i = 0; i < sizes.validation; ++i) {
    dataset.split[order[position++]] = Split::validation;
  }
}

// ---- normalization --------------------------------------------------------------

namespace {

constexpr double kVarianceFloor = 1e-24;

}  // namespace

NormStats fit_normalizer(const Dataset& dataset) {
  const std::vector<std::size_t> train = dataset.indices_of(Split::train);
  if (train.empty()) throw ContractError("normalizer: empty training split");

  NormStats stats;
  for (std::size_t f = 0; f < kStaticFeatureCount; ++f) {
    double sum = 0.0;
    for (std::size_t i : train) sum += dataset.samples[i].static_features[f];
    const double mean = sum / static_cast<double>(train.size());
    double var_sum = 0.0;
    for (std::size_t i : train) {
      const double d = dataset.samples[i].static_features[f] - mean;
      var_sum += d * d;
    }
    const double variance = var_sum / static_cast<double>(train.size());
    stats.static_mean[f] = mean;
    stats.static_std[f] = variance < kVarianceFloor ? 0.0 : std::sqrt(variance);
    if (stats.static_std[f] == 0.0) stats.dropped_features.push_back(static_feature_name(f));
  }
  for (std::size_t f = 0; f < kDynamicFeatureCount; ++f) {
    double sum = 0.0;
    for (std::size_t i : train) sum += dataset.samples[i].dynamic[f];
    const double mean = sum / static_cast<double>(train.size());
    double var_sum = 0.0;
    for (std::size_t i : train) {
      const double d = dataset.samples[i].dynamic[f] - mean;
      var_sum += d * d;
    }
    const double variance = var_sum / static_cast<double>(train.size());
    stats.dynamic_mean[f] = mean;
    stats.dynamic_std[f] = variance < kVarianceFloor ? 0.0 : std::sqrt(variance);
    if (stats.dynamic_std[f] == 0.0) stats.dropped_features.push_back(dynamic_feature_name(f));
  }
  {
    double sum = 0.0;
    for (std::size_t i : train) sum += dataset.samples[i].yield_kg_ha;
    const double mean = sum / static_cast<double>(train.size());
    double var_sum = 0.0;
    for (std::size_t i : train) {
      const double d = dataset.samples[i].yield_kg_ha - mean;
      var_sum += d * d;
    }
    const double variance = var_sum / static_cast<double>(train.size());
    stats.label_mean = mean;
    stats.label_std = variance < kVarianceFloor ? 1.0 : std::sqrt(variance);
  }
  return stats;
}

std::pair<Tensor, Tensor> normalize(const Sample& sample, const NormStats& stats) {
  std::vector<double> dyn(kDynamicFeatureCount);
  for (std::size_t f = 0; f < kDynamicFeatureCount; ++f) {
    dyn[f] = stats.dynamic_std[f] == 0.0
                 ? 0.0
                 : (sample.dynamic[f] - stats.dynamic_mean[f]) / stats.dynamic_std[f];
  }
  std::vector<double> sta(kStaticFeatureCount);
  for (std::size_t f = 0; f < kStaticFeatureCount; ++f) {
    sta[f] = stats.static_std[f] == 0.0
                 ? 0.0
                 : (sample.static_features[f] - stats.static_mean[f]) / stats.static_std[f];
  }
  return {Tensor::from_data({kMonthCount, kWeatherVariableCount}, std::move(dyn)),
          Tensor::from_data({kStaticFeatureCount}, std::move(sta))};
}

std::array<double, kStaticFeatureCount> denormalize_static(const Tensor& t,
                                                           const NormStats& stats) {
  if (t.size() != kStaticFeatureCount) {
    throw DimensionError("denormalize_static: shape " + shape_to_string(t.shape()));
  }
  std::array<double, kStaticFeatureCount> out{};
  for (std::size_t f = 0; f < kStaticFeatureCount; ++f) {
    out[f] = stats.static_std[f] == 0.0
                 ? stats.static_mean[f]
                 : t.values()[f] * stats.static_std[f] + stats.static_mean[f];
  }
  return out;
}

std::array<double, kDynamicFeatureCount> denormalize_dynamic(const Tensor& t,
                                                             const NormStats& stats) {
  if (t.size() != kDynamicFeatureCount) {
    throw DimensionError("denormalize_dynamic: shape " + shape_to_string(t.shape()));
  }
  std::array<double, kDynamicFeatureCount> out{};
  for (std::size_t f = 0; f < kDynamicFeatureCount; ++f) {
    out[f] = stats.dynamic_std[f] == 0.0
                 ? stats.dynamic_mean[f]
                 : t.values()[f] * stats.dynamic_std[f] + stats.dynamic_mean[f];
  }
  return out;
}

// ---- synthetic world --------------------------------------------------------------

namespace {

// Ground-truth response constants. The yield surface is a sum of smooth
// responses to aggregate soil and weather quantities; every constant lands in
// Dataset::metadata so tests can recompute the noiseless truth.
const std::map<std::string, double> kTruthConstants = {
    {"y0", 160.0},         // base yield, kg/ha
    {"a_precip", 2800.0},  // precipitation response amplitude
    {"p_opt", 950.0},      // optimal total precipitation, mm
    {"p_width", 560.0},    // precipitation response width, mm
    {"a_temp", 1600.0},    // temperature response amplitude
    {"t_opt", 23.5},       // optimal mean temperature, C
    {"t_width", 6.0},      // temperature response width, C
    {"a_clay", 20.0},      // linear clay response, kg/ha per %
    {"clay_ref", 32.0},    // clay reference level, %
    {"a_soc", 24.0},       // linear organic-carbon response
    {"soc_ref", 12.0},     // organic-carbon reference, g/kg
    {"a_ph", 4.0},         // pH penalty slope (pH x 10 units)
    {"ph_ref", 60.0},      // optimal pH x 10
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double gauss(std::mt19937_64& rng, double sigma) {
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

// Seasonal weight peaking mid-cycle, in (0, 1].
double season_shape(std::size_t month) {
  return std::sin(M_PI * (static_cast<double>(month) + 0.5) / static_cast<double>(kMonthCount));
}

Sample draw_sample(std::mt19937_64& rng, std::size_t index) {
  Sample s;
  s.region_id = "synth-" + std::to_string(index);
  s.year = 2001 + static_cast<int>(index % 18);
  s.lat = uniform(rng, -30.0, -10.0);
  s.lon = uniform(rng, -55.0, -45.0);

  auto set_soil = [&](std::size_t property, std::size_t depth, double v) {
    s.static_features[property * kSoilDepthCount + depth] = v;
  };

  const double clay_base = uniform(rng, 10.0, 55.0);
  const double silt_base = uniform(rng, 10.0, 45.0);
  const double bulk_base = uniform(rng, 1100.0, 1600.0);
  const double coarse_base = uniform(rng, 0.0, 30.0);
  const double cec_base = uniform(rng, 5.0, 40.0);
  const double soc_base = uniform(rng, 8.0, 45.0);
  const double ph_base = uniform(rng, 45.0, 75.0);
  const double ph_shift = uniform(rng, 3.0, 8.0);

  for (std::size_t d = 0; d < kSoilDepthCount; ++d) {
    const double clay = std::clamp(clay_base + gauss(rng, 1.5), 0.0, 100.0);
    const double silt = std::clamp(silt_base + gauss(rng, 1.5), 0.0, 100.0);
    const double sand = std::clamp(100.0 - clay - silt, 5.0, 80.0);
    set_soil(0, d, clay);
    set_soil(1, d, silt);
    set_soil(2, d, sand);
    set_soil(3, d, bulk_base + 12.0 * static_cast<double>(d) + gauss(rng, 20.0));
    set_soil(4, d, std::max(0.0, coarse_base + gauss(rng, 1.5)));
    set_soil(5, d, std::max(0.5, cec_base + gauss(rng, 1.0)));
    set_soil(6, d, std::max(0.5, soc_base * std::exp(-0.3 * static_cast<double>(d)) +
                                     gauss(rng, 0.8)));
    const double ph = std::clamp(ph_base + gauss(rng, 1.0), 30.0, 95.0);
    set_soil(7, d, ph);
    set_soil(8, d, ph - ph_shift);
  }
  s.static_features[kSoilPropertyCount * kSoilDepthCount] = s.lat;
  s.static_features[kSoilPropertyCount * kSoilDepthCount + 1] = s.lon;

  const double t_base = uniform(rng, 16.0, 28.0);
  const double spread = uniform(rng, 8.0, 12.0);
  const double p_base = uniform(rng, 40.0, 170.0);
  for (std::size_t m = 0; m < kMonthCount; ++m) {
    const double shape = season_shape(m);
    const double t_avg = t_base + 2.5 * shape + gauss(rng, 0.8);
    s.weather(m, 0) = t_avg - spread / 2.0;
    s.weather(m, 1) = t_avg + spread / 2.0;
    s.weather(m, 2) = std::max(0.0, p_base * (0.55 + 0.9 * shape) * (1.0 + gauss(rng, 0.18)));
  }
  return s;
}

}  // namespace

const std::map<std::string, double>& synthetic_truth_constants() { return kTruthConstants; }

double synthetic_ground_truth(const Sample& s, const std::map<std::string, double>& constants) {
  auto c = [&](const char* name) {
    auto it = constants.find(name);
    if (it == constants.end()) {
      throw ContractError(std::string("synthetic truth: missing constant ") + name);
    }
    return it->second;
  };

  double clay_mean = 0.0, soc_mean = 0.0, ph_mean = 0.0;
  for (std::size_t d = 0; d < kSoilDepthCount; ++d) {
    clay_mean += s.static_features[0 * kSoilDepthCount + d];
    soc_mean += s.static_features[6 * kSoilDepthCount + d];
    ph_mean += s.static_features[7 * kSoilDepthCount + d];
  }
  clay_mean /= kSoilDepthCount;
  soc_mean /= kSoilDepthCount;
  ph_mean /= kSoilDepthCount;

  double p_total = 0.0, t_mean = 0.0;
  for (std::size_t m = 0; m < kMonthCount; ++m) {
    p_total += s.weather(m, 2);
    t_mean += (s.weather(m, 0) + s.weather(m, 1)) / 2.0;
  }
  t_mean /= kMonthCount;

  auto bump = [](double x, double center, double width) {
    const double z = (x - center) / width;
    return std::exp(-z * z);
  };

  return c("y0") + c("a_precip") * bump(p_total, c("p_opt"), c("p_width")) +
         c("a_temp") * bump(t_mean, c("t_opt"), c("t_width")) +
         c("a_clay") * (clay_mean - c("clay_ref")) + c("a_soc") * (soc_mean - c("soc_ref")) -
         c("a_ph") * std::abs(ph_mean - c("ph_ref"));
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.size < 1) throw ContractError("synthetic: size must be >= 1");
  if (spec.noise_fraction < 0.0) throw ContractError("synthetic: negative noise fraction");

  Dataset dataset;
  dataset.provenance = "synthetic";
  dataset.metadata = kTruthConstants;

  std::mt19937_64 rng(seed);
  std::vector<double> truth(spec.size);
  dataset.samples.reserve(spec.size);
  for (std::size_t i = 0; i < spec.size; ++i) {
    Sample s = draw_sample(rng, i);
    truth[i] = synthetic_ground_truth(s, dataset.metadata);
    if (truth[i] < 0.0) {
      throw NumericError("synthetic: ground truth went negative; constants are inconsistent");
    }
    dataset.samples.push_back(std::move(s));
  }

  const double mean_truth =
      std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(spec.size);
  const double sigma = spec.noise_fraction * mean_truth;
  for (std::size_t i = 0; i < spec.size; ++i) {
    const double noise = sigma > 0.0 ? gauss(rng, sigma) : 0.0;
    dataset.samples[i].yield_kg_ha = std::max(0.0, truth[i] + noise);
  }

  dataset.metadata["noise_fraction"] = spec.noise_fraction;
  dataset.metadata["noise_sigma"] = sigma;
  dataset.metadata["mean_truth"] = mean_truth;
  for (const Sample& s : dataset.samples) validate_sample(s, nullptr, 0);
  return dataset;
}

}  // namespace harvestcast
