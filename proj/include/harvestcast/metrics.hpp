#pragma once

#include <span>
#include <string>

namespace harvestcast {

// The five evaluation scores plus the count of observations excluded from the
// percentage metrics (obs <= 0 rows, which real yield tables do contain).
// r2 is 1 - SS_res/SS_tot and can go negative for bad models.
struct Metrics {
  double mae = 0.0;    // kg/ha
  double mape = 0.0;   // %
  double rmse = 0.0;   // kg/ha
  double rmspe = 0.0;  // %
  double r2 = 0.0;
  std::size_t percentage_exclusions = 0;
};

Metrics compute_metrics(std::span<const double> predicted, std::span<const double> observed);

// Human-readable summary, one metric per row.
std::string format_metrics(const Metrics& metrics, const std::string& title);
// Delimited text: header "metric,value" plus one row per score.
std::string metrics_to_csv(const Metrics& metrics);

}  // namespace harvestcast
