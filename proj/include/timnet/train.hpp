#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "timnet/autodiff.hpp"
#include "timnet/dataset.hpp"
#include "timnet/metrics.hpp"
#include "timnet/model.hpp"

namespace timnet::train {

struct TrainConfig {
  double lr = 0.001;
  std::uint32_t batch = 64;
  std::uint32_t epochs = 500;
  double smoothing = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  std::uint64_t seed = 1;
  bool shuffle = true;

  void validate() const;
};

/// Per-parameter Adam moments; slot i tracks the i-th parameter it was built
/// for, so the parameter list must stay stable across steps.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;

  static AdamState for_params(std::span<const diff::DiffValue> params);
};

/// Label-smoothed cross entropy over probabilities:
///   q = (1-factor)*onehot + factor/K,
///   loss = -(1/B) * sum_bk q_bk * log(max(p_bk, 1e-12)).
diff::DiffValue smoothed_cross_entropy(const diff::DiffValue& probs,
                                       std::span<const int> labels, double factor);

/// One Adam update. Gradients are read from each parameter's grad buffer;
/// caller zeroes them between steps. A NaN gradient aborts with the
/// offending parameter's name.
void adam_step(std::span<diff::DiffValue> params, AdamState& state, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_war = 0.0;
  bool has_eval = false;
  double eval_loss = 0.0;
  double eval_war = 0.0;
  double eval_uar = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;

  /// CSV: epoch,train_loss,train_war,eval_loss,eval_war,eval_uar with empty
  /// eval fields when no eval split was given.
  void write_csv(const std::filesystem::path& path) const;
};

/// Infer-mode scoring of a dataset: smoothed loss, WAR/UAR, confusion, and
/// per-item argmax predictions.
struct Score {
  double loss = 0.0;
  double war = 0.0;
  double uar = 0.0;
  eval::ConfusionMatrix matrix;
  std::vector<int> predictions;
};

Score score_dataset(model::TimNetParams& params, const model::ModelConfig& cfg,
                    const Dataset& data, double smoothing, std::size_t batch_size = 64);

struct TrainResult {
  model::TimNetParams params_final;
  model::TimNetParams params_best;  // best eval WAR; equals final without an eval split
  bool has_best = false;
  std::size_t best_epoch = 0;
  TrainHistory history;
};

/// Full optimization loop. Deterministic for a given seed: init, shuffling,
/// and dropout all derive from one master stream.
TrainResult train(const Dataset& data, const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                  const Dataset* eval_split = nullptr);

}  // namespace timnet::train
