#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "harvestcast/data.hpp"
#include "harvestcast/model.hpp"

namespace harvestcast {

struct TrainConfig {
  std::size_t max_epochs = 1000;
  std::size_t patience = 50;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  double learning_rate = 0.0005;
  // Validate on the training split itself (overfit diagnostics).
  bool validate_on_training_split = false;
  // Optional early exit once the training loss falls below this value.
  std::optional<double> stop_below_train_loss;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double seconds = 0.0;
};

struct TrainAbort {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::string reason;
};

struct TrainResult {
  YieldNet best;                  // parameters at the minimum validation loss
  std::vector<EpochLog> history;  // one entry per completed epoch
  std::size_t best_epoch = 0;     // 1-based
  double best_validation_loss = 0.0;
  std::optional<TrainAbort> abort;  // set when a NaN loss stopped training
};

enum class StopDecision { go_on, stop };

// Stop exactly when (current_epoch - argmin_val_epoch) >= patience.
// Improvement is strict decrease; ties count as no improvement.
struct EarlyStopState {
  StopDecision decision = StopDecision::go_on;
  std::size_t best_epoch = 0;  // 1-based argmin of validation loss
};
EarlyStopState early_stop_decision(const std::vector<EpochLog>& history, std::size_t patience);

// Mini-batch MAE/Adam training with per-epoch seeded shuffling, full-split
// loss evaluation, best-validation snapshotting and patience-based early
// stopping. Features are standardized with `stats`, which must have been fit
// on the training split; labels stay in kg/ha. The returned network carries
// `stats` so its checkpoint alone suffices for serving.
TrainResult train_loop(const YieldNet& net, const Dataset& dataset, const NormStats& stats,
                       const TrainConfig& config);

// Raw (unclamped) model outputs over one split, in dataset order.
std::vector<double> predict_split(const YieldNet& net, const Dataset& dataset,
                                  const NormStats& stats, Split split);

// MAE of the raw outputs against the labels of one split.
double evaluate_split_mae(const YieldNet& net, const Dataset& dataset, const NormStats& stats,
                          Split split);

// History as delimited text: epoch,train_loss,val_loss,seconds.
void write_history(const std::vector<EpochLog>& history, const std::filesystem::path& path);

}  // namespace harvestcast
