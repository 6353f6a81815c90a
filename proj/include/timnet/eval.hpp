#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "timnet/dataset.hpp"
#include "timnet/metrics.hpp"
#include "timnet/model.hpp"
#include "timnet/train.hpp"

namespace timnet::eval {

/// Cross-validation scoring protocols: `last` scores the final-epoch model on
/// the held-out fold; `best` scores the checkpoint with the best held-out WAR
/// seen across epochs (the fold doubles as validation and test set).
enum class Protocol { LastEpoch, BestEpoch };

Protocol protocol_from_string(const std::string& s);
std::string to_string(Protocol p);

struct FoldPlan {
  std::vector<std::vector<std::size_t>> folds;  // disjoint index sets covering the dataset
  Protocol protocol = Protocol::LastEpoch;
  std::uint64_t seed = 0;
};

/// Deterministic shuffled partition into k folds with sizes differing by at
/// most one (the first n%k folds take the extra item).
FoldPlan kfold_split(std::size_t n_items, std::size_t k, std::uint64_t seed);

/// Speaker-grouped variant: whole speakers are assigned to folds, largest
/// group first into the currently smallest fold.
FoldPlan kfold_split_by_speaker(std::span<const std::string> speakers, std::size_t k,
                                std::uint64_t seed);

struct FoldResult {
  ConfusionMatrix matrix;
  double uar = 0.0;
  double war = 0.0;
  std::size_t n_items = 0;
  std::size_t best_epoch = 0;
};

struct EvalReport {
  std::vector<FoldResult> folds;
  double mean_uar = 0.0;  // unweighted mean over folds
  double mean_war = 0.0;
  Protocol protocol = Protocol::LastEpoch;
  std::vector<std::string> warnings;

  /// CSV: one row per fold plus an `aggregate` row.
  void write_csv(const std::filesystem::path& path) const;
};

/// Train on k-1 folds, score the held-out fold, aggregate. Per-fold training
/// seeds are split deterministically from tcfg.seed. A fold whose training
/// set misses a class is recorded as a warning, not an error.
EvalReport run_cv(const Dataset& data, const model::ModelConfig& mcfg,
                  const train::TrainConfig& tcfg, const FoldPlan& plan);

struct CrossEvalResult {
  EvalReport report;                       // single fold over the shared-class subset
  std::vector<std::string> shared_labels;  // sorted label strings used for scoring
  std::size_t n_evaluated = 0;
};

/// Zero-shot evaluation of a trained checkpoint on a different corpus. Items
/// are restricted to labels shared with the checkpoint vocabulary and the
/// argmax runs over the shared classes only. Features are padded/truncated to
/// the checkpoint's input length.
CrossEvalResult cross_eval(model::Checkpoint& ckpt, const Dataset& target);

/// One fused representation (g_drf) row per utterance:
/// utterance_id,c0,...,c{C-1}.
void export_embeddings(model::Checkpoint& ckpt, const Dataset& data,
                       const std::filesystem::path& path);

}  // namespace timnet::eval
