#include "timnet/eval.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

namespace timnet::eval {

Protocol protocol_from_string(const std::string& s) {
  if (s == "last") return Protocol::LastEpoch;
  if (s == "best") return Protocol::BestEpoch;
  throw ValidationError("unknown protocol '" + s + "' (expected last|best)");
}

std::string to_string(Protocol p) { return p == Protocol::LastEpoch ? "last" : "best"; }

FoldPlan kfold_split(std::size_t n_items, std::size_t k, std::uint64_t seed) {
  if (k < 1) throw ValidationError("kfold_split: k must be >= 1");
  if (k > n_items)
    throw ValidationError("kfold_split: k=" + std::to_string(k) + " exceeds n_items=" +
                          std::to_string(n_items));
  std::vector<std::size_t> order(n_items);
  std::iota(order.begin(), order.end(), 0);
  RngStream rng(seed);
  for (std::size_t i = n_items - 1; i > 0; --i) {
    const std::size_t j = rng.next_u64() % (i + 1);
    std::swap(order[i], order[j]);
  }
  FoldPlan plan;
  plan.seed = seed;
  plan.folds.resize(k);
  const std::size_t base = n_items / k;
  const std::size_t extra = n_items % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    plan.folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                         order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return plan;
}

FoldPlan kfold_split_by_speaker(std::span<const std::string> speakers, std::size_t k,
                                std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < speakers.size(); ++i) groups[speakers[i]].push_back(i);
  if (groups.size() < k)
    throw ValidationError("kfold_split_by_speaker: only " + std::to_string(groups.size()) +
                          " speakers for k=" + std::to_string(k) + " folds");
  std::vector<std::vector<std::size_t>> group_list;
  group_list.reserve(groups.size());
  for (auto& [name, idx] : groups) group_list.push_back(std::move(idx));
  // shuffle group order, then stable sort by size so ties break randomly
  RngStream rng(seed);
  for (std::size_t i = group_list.size() - 1; i > 0; --i) {
    const std::size_t j = rng.next_u64() % (i + 1);
    std::swap(group_list[i], group_list[j]);
  }
  std::stable_sort(group_list.begin(), group_list.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });

  FoldPlan plan;
  plan.seed = seed;
  plan.folds.resize(k);
  for (auto& group : group_list) {
    auto smallest = std::min_element(plan.folds.begin(), plan.folds.end(),
                                     [](const auto& a, const auto& b) { return a.size() < b.size(); });
    smallest->insert(smallest->end(), group.begin(), group.end());
  }
  for (const auto& fold : plan.folds)
    if (fold.empty()) throw ValidationError("kfold_split_by_speaker: produced an empty fold");
  return plan;
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot open " + path.string() + " for writing");
  os << "fold,n_items,uar,war\n";
  for (std::size_t f = 0; f < folds.size(); ++f) {
    os << (f + 1) << ',' << folds[f].n_items << ',' << fmt::format("{:.17g}", folds[f].uar) << ','
       << fmt::format("{:.17g}", folds[f].war) << '\n';
  }
  os << "aggregate," << std::accumulate(folds.begin(), folds.end(), std::size_t{0},
                                        [](std::size_t a, const FoldResult& r) {
                                          return a + r.n_items;
                                        })
     << ',' << fmt::format("{:.17g}", mean_uar) << ',' << fmt::format("{:.17g}", mean_war) << '\n';
  if (!os) throw RuntimeFailure("short write to " + path.string());
}

EvalReport run_cv(const Dataset& data, const model::ModelConfig& mcfg,
                  const train::TrainConfig& tcfg, const FoldPlan& plan) {
  if (plan.folds.empty()) throw ValidationError("run_cv: empty fold plan");
  std::size_t covered = 0;
  for (const auto& fold : plan.folds) covered += fold.size();
  if (covered != data.size())
    throw ValidationError("run_cv: fold plan does not cover the dataset exactly");

  EvalReport report;
  report.protocol = plan.protocol;
  RngStream seed_rng(tcfg.seed);

  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    std::vector<std::size_t> train_idx;
    train_idx.reserve(data.size() - plan.folds[f].size());
    for (std::size_t other = 0; other < plan.folds.size(); ++other) {
      if (other == f) continue;
      train_idx.insert(train_idx.end(), plan.folds[other].begin(), plan.folds[other].end());
    }
    Dataset train_set = data.subset(train_idx);
    Dataset test_set = data.subset(plan.folds[f]);

    std::set<int> train_classes(train_set.labels.begin(), train_set.labels.end());
    for (int label : test_set.labels) {
      if (!train_classes.contains(label)) {
        report.warnings.push_back("fold " + std::to_string(f + 1) + ": class '" +
                                  data.label_names[static_cast<std::size_t>(label)] +
                                  "' absent from training data");
        break;
      }
    }

    train::TrainConfig fold_cfg = tcfg;
    fold_cfg.seed = seed_rng.split(f).seed();
    train::TrainResult result = train::train(train_set, mcfg, fold_cfg, &test_set);

    model::TimNetParams& scored = plan.protocol == Protocol::BestEpoch ? result.params_best
                                                                       : result.params_final;
    const train::Score s = train::score_dataset(scored, mcfg, test_set, tcfg.smoothing);
    FoldResult fr;
    fr.matrix = s.matrix;
    fr.uar = s.uar;
    fr.war = s.war;
    fr.n_items = test_set.size();
    fr.best_epoch = result.best_epoch;
    report.folds.push_back(std::move(fr));
  }

  for (const auto& fr : report.folds) {
    report.mean_uar += fr.uar;
    report.mean_war += fr.war;
  }
  report.mean_uar /= static_cast<double>(report.folds.size());
  report.mean_war /= static_cast<double>(report.folds.size());
  return report;
}

CrossEvalResult cross_eval(model::Checkpoint& ckpt, const Dataset& target) {
  // shared-class subset, sorted for a stable index order
  std::set<std::string> ckpt_labels(ckpt.labels.begin(), ckpt.labels.end());
  std::vector<std::string> shared;
  for (const auto& name : target.label_names)
    if (ckpt_labels.contains(name)) shared.push_back(name);
  std::sort(shared.begin(), shared.end());
  if (shared.empty())
    throw ValidationError("cross_eval: checkpoint and target manifest share zero classes");

  std::map<std::string, std::size_t> shared_index;
  for (std::size_t i = 0; i < shared.size(); ++i) shared_index[shared[i]] = i;
  // checkpoint class indices participating in the restricted argmax
  std::vector<std::size_t> ckpt_class_of_shared(shared.size());
  for (std::size_t i = 0; i < shared.size(); ++i) {
    const auto it = std::find(ckpt.labels.begin(), ckpt.labels.end(), shared[i]);
    ckpt_class_of_shared[i] = static_cast<std::size_t>(it - ckpt.labels.begin());
  }

  const std::size_t input_T = ckpt.cfg.input_T;
  Dataset eval_set;
  eval_set.label_names = shared;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto& name = target.label_names[static_cast<std::size_t>(target.labels[i])];
    const auto it = shared_index.find(name);
    if (it == shared_index.end()) continue;
    eval_set.features.push_back(input_T == 0 ? target.features[i]
                                             : dsp::pad_or_truncate(target.features[i], input_T));
    eval_set.labels.push_back(static_cast<int>(it->second));
    eval_set.ids.push_back(i < target.ids.size() ? target.ids[i] : "");
    eval_set.speakers.push_back(i < target.speakers.size() ? target.speakers[i] : "");
  }

  RngStream unused(0);
  std::vector<int> preds;
  preds.reserve(eval_set.size());
  constexpr std::size_t kBatch = 64;
  for (std::size_t start = 0; start < eval_set.size(); start += kBatch) {
    const std::size_t stop = std::min(eval_set.size(), start + kBatch);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    diff::DiffValue x = diff::constant(batch_tensor(eval_set, idx));
    auto trace = model::forward(x, ckpt.params, ckpt.cfg, diff::Mode::Infer, unused);
    const Tensor& logits = trace.logits.value();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::size_t best = 0;
      for (std::size_t s = 1; s < shared.size(); ++s) {
        if (logits.at(b, ckpt_class_of_shared[s]) > logits.at(b, ckpt_class_of_shared[best]))
          best = s;
      }
      preds.push_back(static_cast<int>(best));
    }
  }

  CrossEvalResult out;
  out.shared_labels = shared;
  out.n_evaluated = eval_set.size();
  FoldResult fr;
  fr.matrix = confusion(preds, eval_set.labels, shared.size());
  std::tie(fr.uar, fr.war) = uar_war(fr.matrix);
  fr.n_items = eval_set.size();
  out.report.folds.push_back(fr);
  out.report.mean_uar = fr.uar;
  out.report.mean_war = fr.war;
  return out;
}

void export_embeddings(model::Checkpoint& ckpt, const Dataset& data,
                       const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot open " + path.string() + " for writing");
  const std::size_t channels = ckpt.cfg.channels;
  os << "utterance_id";
  for (std::size_t c = 0; c < channels; ++c) os << ",c" << c;
  os << '\n';

  const std::size_t input_T = ckpt.cfg.input_T;
  RngStream unused(0);
  constexpr std::size_t kBatch = 64;
  for (std::size_t start = 0; start < data.size(); start += kBatch) {
    const std::size_t stop = std::min(data.size(), start + kBatch);
    Dataset block;
    block.label_names = data.label_names;
    for (std::size_t i = start; i < stop; ++i) {
      block.features.push_back(input_T == 0 ? data.features[i]
                                            : dsp::pad_or_truncate(data.features[i], input_T));
      block.labels.push_back(data.labels[i]);
      block.ids.push_back(i < data.ids.size() ? data.ids[i] : std::to_string(i));
    }
    std::vector<std::size_t> idx(block.size());
    std::iota(idx.begin(), idx.end(), 0);
    diff::DiffValue x = diff::constant(batch_tensor(block, idx));
    auto trace = model::forward(x, ckpt.params, ckpt.cfg, diff::Mode::Infer, unused);
    const Tensor& g = trace.g_drf.value();
    for (std::size_t b = 0; b < block.size(); ++b) {
      os << block.ids[b];
      for (std::size_t c = 0; c < channels; ++c) os << ',' << fmt::format("{:.17g}", g.at(b, c));
      os << '\n';
    }
  }
  if (!os) throw RuntimeFailure("short write to " + path.string());
}

}  // namespace timnet::eval
