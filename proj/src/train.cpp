#include "harvestcast/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include "harvestcast/optim.hpp"

namespace harvestcast {

void TrainConfig::validate() const {
  if (max_epochs == 0) throw ContractError("train: max_epochs must be >= 1");
  if (patience == 0) throw ContractError("train: patience must be >= 1");
  if (batch_size == 0) throw ContractError("train: batch_size must be >= 1");
  if (!std::isfinite(learning_rate) || learning_rate <= 0.0) {
    throw ContractError("train: learning_rate must be finite and positive");
  }
}

EarlyStopState early_stop_decision(const std::vector<EpochLog>& history, std::size_t patience) {
  if (history.empty()) throw ContractError("early_stop_decision: empty history");
  std::size_t best_epoch = history[0].epoch;
  double best = history[0].validation_loss;
  for (const EpochLog& log : history) {
    if (log.validation_loss < best) {  // strict: ties are no improvement
      best = log.validation_loss;
      best_epoch = log.epoch;
    }
  }
  const std::size_t current = history.back().epoch;
  EarlyStopState state;
  state.best_epoch = best_epoch;
  state.decision =
      (current - best_epoch) >= patience ? StopDecision::stop : StopDecision::go_on;
  return state;
}

namespace {

// Normalized features and raw labels for a list of sample indices, flattened
// in index order.
struct SplitArrays {
  std::vector<double> dynamic;  // n x 8 x 3
  std::vector<double> static_; // n x 65
  std::vector<double> target;  // n
  std::size_t count = 0;
};

SplitArrays materialize(const Dataset& dataset, const NormStats& stats,
                        const std::vector<std::size_t>& indices) {
  SplitArrays out;
  out.count = indices.size();
  out.dynamic.reserve(indices.size() * kDynamicFeatureCount);
  out.static_.reserve(indices.size() * kStaticFeatureCount);
  out.target.reserve(indices.size());
  for (std::size_t idx : indices) {
    const Sample& s = dataset.samples[idx];
    auto [dyn, sta] = normalize(s, stats);
    out.dynamic.insert(out.dynamic.end(), dyn.values().begin(), dyn.values().end());
    out.static_.insert(out.static_.end(), sta.values().begin(), sta.values().end());
    // standardized regression target; losses are reported in kg/ha by
    // scaling back with label_std (MAE is positively homogeneous)
    out.target.push_back((s.yield_kg_ha - stats.label_mean) / stats.label_std);
  }
  return out;
}

struct BatchTensors {
  Tensor dynamic;  // [b x 8 x 3]
  Tensor static_;  // [b x 65]
  Tensor target;   // [b]
};

BatchTensors gather(const SplitArrays& a, std::span<const std::size_t> rows) {
  const std::size_t b = rows.size();
  std::vector<double> dyn(b * kDynamicFeatureCount);
  std::vector<double> sta(b * kStaticFeatureCount);
  std::vector<double> tgt(b);
  for (std::size_t r = 0; r < b; ++r) {
    const std::size_t i = rows[r];
    std::copy_n(a.dynamic.data() + i * kDynamicFeatureCount, kDynamicFeatureCount,
                dyn.data() + r * kDynamicFeatureCount);
    std::copy_n(a.static_.data() + i * kStaticFeatureCount, kStaticFeatureCount,
                sta.data() + r * kStaticFeatureCount);
    tgt[r] = a.target[i];
  }
  BatchTensors t;
  t.dynamic = Tensor::from_data({b, kMonthCount, kWeatherVariableCount}, std::move(dyn));
  t.static_ = Tensor::from_data({b, kStaticFeatureCount}, std::move(sta));
  t.target = Tensor::from_data({b}, std::move(tgt));
  return t;
}

constexpr std::size_t kEvalChunk = 256;

double split_mae(const YieldNet& net, const SplitArrays& a, double label_std) {
  double abs_sum = 0.0;
  std::vector<std::size_t> rows(a.count);
  for (std::size_t i = 0; i < a.count; ++i) rows[i] = i;
  for (std::size_t begin = 0; begin < a.count; begin += kEvalChunk) {
    const std::size_t end = std::min(a.count, begin + kEvalChunk);
    BatchTensors batch = gather(a, std::span(rows).subspan(begin, end - begin));
    Tape tape(/*grad_enabled=*/false);
    Tensor pred = net.forward(tape, batch.dynamic, batch.static_);
    std::span<const double> pv = pred.values();
    for (std::size_t r = 0; r < end - begin; ++r) {
      abs_sum += std::abs(pv[r] - batch.target.values()[r]);
    }
  }
  return label_std * abs_sum / static_cast<double>(a.count);
}

std::vector<std::vector<double>> snapshot_params(const YieldNet& net) {
  std::vector<std::vector<double>> snap;
  for (const Tensor& p : net.parameters()) {
    snap.emplace_back(p.values().begin(), p.values().end());
  }
  return snap;
}

void restore_params(YieldNet& net, const std::vector<std::vector<double>>& snap) {
  std::vector<Tensor> params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(snap[i].begin(), snap[i].end(), params[i].mutable_values().begin());
  }
}

}  // namespace

TrainResult train_loop(const YieldNet& net, const Dataset& dataset, const NormStats& stats,
                       const TrainConfig& config) {
  config.validate();
  if (!dataset.has_split()) throw ContractError("train: dataset has no split assignment");

  const std::vector<std::size_t> train_idx = dataset.indices_of(Split::train);
  std::vector<std::size_t> val_idx = dataset.indices_of(Split::validation);
  if (config.validate_on_training_split) val_idx = train_idx;
  if (train_idx.empty()) throw ContractError("train: empty training split");
  if (val_idx.empty()) throw ContractError("train: empty validation split");

  const SplitArrays train_arrays = materialize(dataset, stats, train_idx);
  const SplitArrays val_arrays = materialize(dataset, stats, val_idx);

  TrainResult result;
  YieldNet work = net.clone();
  work.set_norm_stats(stats);

  AdamOptimizer optimizer(work.parameters(),
                          AdamOptimizer::Options{.learning_rate = config.learning_rate});
  std::mt19937_64 shuffle_rng(config.seed);

  std::vector<std::size_t> order(train_arrays.count);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<std::vector<double>> best_snapshot = snapshot_params(work);
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;

  auto finish = [&](std::optional<TrainAbort> abort) {
    if (best_epoch > 0) restore_params(work, best_snapshot);
    result.best = std::move(work);
    result.best_epoch = best_epoch;
    result.best_validation_loss = best_val;
    result.abort = std::move(abort);
    return std::move(result);
  };

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (std::size_t begin = 0, batch_no = 1; begin < order.size();
         begin += config.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      BatchTensors batch = gather(train_arrays, std::span(order).subspan(begin, end - begin));
      try {
        Tape tape;
        Tensor out = work.forward(tape, batch.dynamic, batch.static_);
        Tensor pred = reshape(tape, out, {end - begin});
        Tensor loss = mae_loss(tape, pred, batch.target);
        if (!std::isfinite(loss.item())) {
          throw NumericError("train: non-finite batch loss");
        }
        backprop(tape, loss);
        optimizer.step();
      } catch (const NumericError& e) {
        return finish(TrainAbort{epoch, batch_no, e.what()});
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = split_mae(work, train_arrays, stats.label_std);
    log.validation_loss = split_mae(work, val_arrays, stats.label_std);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start)
                      .count();
    if (!std::isfinite(log.train_loss) || !std::isfinite(log.validation_loss)) {
      return finish(TrainAbort{epoch, 0, "train: non-finite epoch loss"});
    }
    result.history.push_back(log);

    if (log.validation_loss < best_val) {
      best_val = log.validation_loss;
      best_epoch = epoch;
      best_snapshot = snapshot_params(work);
    }

    if (config.stop_below_train_loss && log.train_loss < *config.stop_below_train_loss) break;
    if (early_stop_decision(result.history, config.patience).decision == StopDecision::stop) {
      break;
    }
  }
  return finish(std::nullopt);
}

std::vector<double> predict_split(const YieldNet& net, const Dataset& dataset,
                                  const NormStats& stats, Split split) {
  const std::vector<std::size_t> idx = dataset.indices_of(split);
  const SplitArrays arrays = materialize(dataset, stats, idx);
  std::vector<double> out;
  out.reserve(arrays.count);
  std::vector<std::size_t> rows(arrays.count);
  for (std::size_t i = 0; i < arrays.count; ++i) rows[i] = i;
  for (std::size_t begin = 0; begin < arrays.count; begin += kEvalChunk) {
    const std::size_t end = std::min(arrays.count, begin + kEvalChunk);
    BatchTensors batch = gather(arrays, std::span(rows).subspan(begin, end - begin));
    Tape tape(/*grad_enabled=*/false);
    Tensor pred = net.forward(tape, batch.dynamic, batch.static_);
    for (double z : pred.values()) out.push_back(net.denormalize_label(z));
  }
  return out;
}

double evaluate_split_mae(const YieldNet& net, const Dataset& dataset, const NormStats& stats,
                          Split split) {
  return split_mae(net, materialize(dataset, stats, dataset.indices_of(split)),
                   stats.label_std);
}

void write_history(const std::vector<EpochLog>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("history: cannot write " + path.string());
  out << "epoch,train_loss,val_loss,seconds\n";
  out.precision(17);
  for (const EpochLog& log : history) {
    out << log.epoch << "," << log.train_loss << "," << log.validation_loss << ","
        << log.seconds << "\n";
  }
  if (!out.flush()) throw IoError("history: write failed for " + path.string());
}

}  // namespace harvestcast
