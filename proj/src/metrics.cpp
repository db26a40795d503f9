#include "harvestcast/metrics.hpp"

#include <cmath>
#include <sstream>

#include "harvestcast/errors.hpp"

namespace harvestcast {

Metrics compute_metrics(std::span<const double> predicted, std::span<const double> observed) {
  if (predicted.size() != observed.size()) {
    throw ContractError("metrics: " + std::to_string(predicted.size()) + " predictions vs " +
                        std::to_string(observed.size()) + " observations");
  }
  const std::size_t n = observed.size();
  if (n == 0) throw ContractError("metrics: empty input");

  double abs_sum = 0.0, sq_sum = 0.0, obs_sum = 0.0;
  double pct_abs_sum = 0.0, pct_sq_sum = 0.0;
  std::size_t pct_n = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = observed[i] - predicted[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    obs_sum += observed[i];
    if (observed[i] > 0.0) {
      const double r = e / observed[i];
      pct_abs_sum += std::abs(r);
      pct_sq_sum += r * r;
      ++pct_n;
    }
  }
  if (pct_n == 0) {
    throw ContractError("metrics: no positive observations for the percentage metrics");
  }

  const double obs_mean = obs_sum / static_cast<double>(n);
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = observed[i] - obs_mean;
    ss_tot += d * d;
  }
  if (ss_tot == 0.0) {
    throw ContractError("metrics: observations have zero variance, r2 undefined");
  }

  Metrics m;
  m.mae = abs_sum / static_cast<double>(n);
  m.rmse = std::sqrt(sq_sum / static_cast<double>(n));
  m.mape = 100.0 * pct_abs_sum / static_cast<double>(pct_n);
  m.rmspe = 100.0 * std::sqrt(pct_sq_sum / static_cast<double>(pct_n));
  m.r2 = 1.0 - sq_sum / ss_tot;
  m.percentage_exclusions = n - pct_n;
  return m;
}

std::string format_metrics(const Metrics& m, const std::string& title) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << title << "\n"
     << "  MAE    " << m.mae << " kg/ha\n"
     << "  MAPE   " << m.mape << " %\n"
     << "  RMSE   " << m.rmse << " kg/ha\n"
     << "  RMSPE  " << m.rmspe << " %\n"
     << "  R2     ";
  os.precision(4);
  os << m.r2 << "\n";
  if (m.percentage_exclusions > 0) {
    os << "  (" << m.percentage_exclusions
       << " non-positive observations excluded from MAPE/RMSPE)\n";
  }
  return os.str();
}

std::string metrics_to_csv(const Metrics& m) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,value\n"
     << "mae," << m.mae << "\n"
     << "mape," << m.mape << "\n"
     << "rmse," << m.rmse << "\n"
     << "rmspe," << m.rmspe << "\n"
     << "r2," << m.r2 << "\n"
     << "percentage_exclusions," << m.percentage_exclusions << "\n";
  return os.str();
}

}  // namespace harvestcast
