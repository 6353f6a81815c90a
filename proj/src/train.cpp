#include "timnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <numeric>

namespace timnet::train {

using diff::DiffValue;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("train config: lr must be positive");
  if (batch < 1) throw ValidationError("train config: batch must be >= 1");
  if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
  if (smoothing < 0.0 || smoothing >= 1.0)
    throw ValidationError("train config: smoothing must be in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ValidationError("train config: betas must be in [0, 1)");
  if (!(eps_adam > 0.0)) throw ValidationError("train config: eps_adam must be positive");
}

AdamState AdamState::for_params(std::span<const DiffValue> params) {
  AdamState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& p : params) {
    s.m.emplace_back(p.value().shape());
    s.v.emplace_back(p.value().shape());
  }
  return s;
}

DiffValue smoothed_cross_entropy(const DiffValue& probs, std::span<const int> labels,
                                 double factor) {
  if (factor < 0.0 || factor >= 1.0)
    throw ValidationError("smoothed_cross_entropy: factor must be in [0, 1)");
  if (probs.value().rank() != 2) throw ValidationError("smoothed_cross_entropy: probs must be [B,K]");
  const std::size_t batch = probs.value().dim(0);
  const std::size_t k = probs.value().dim(1);
  if (labels.size() != batch)
    throw ValidationError("smoothed_cross_entropy: label count does not match batch");
  for (int label : labels)
    if (label < 0 || static_cast<std::size_t>(label) >= k)
      throw ValidationError("smoothed_cross_entropy: label out of range [0, K)");

  constexpr double kClamp = 1e-12;
  const double off = factor / static_cast<double>(k);
  const double on = 1.0 - factor + off;

  double acc = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = probs.value().data() + b * k;
    for (std::size_t j = 0; j < k; ++j) {
      const double q = (static_cast<std::size_t>(labels[b]) == j) ? on : off;
      acc -= q * std::log(std::max(row[j], kClamp));
    }
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(batch));

  std::vector<int> label_copy(labels.begin(), labels.end());
  return diff::detail::make_node(
      std::move(out), {probs},
      [batch, k, on, off, labels = std::move(label_copy)](diff::Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& pg = p->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* row = p->value.data() + b * k;
          for (std::size_t j = 0; j < k; ++j) {
            if (row[j] < kClamp) continue;  // clamped region: zero derivative
            const double q = (static_cast<std::size_t>(labels[b]) == j) ? on : off;
            pg[b * k + j] -= g * q / row[j];
          }
        }
      },
      "smoothed_cross_entropy");
}

void adam_step(std::span<DiffValue> params, AdamState& state, const TrainConfig& cfg) {
  if (params.size() != state.m.size())
    throw ValidationError("adam_step: state was built for a different parameter list");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& theta = params[pi].value();
    const Tensor& g = params[pi].grad();
    Tensor& m = state.m[pi];
    Tensor& v = state.v[pi];
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      if (std::isnan(g[i]))
        throw RuntimeFailure("adam_step: NaN gradient in parameter '" + params[pi].name() + "'");
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps_adam);
    }
  }
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot open " + path.string() + " for writing");
  os << "epoch,train_loss,train_war,eval_loss,eval_war,eval_uar\n";
  for (const auto& r : records) {
    os << r.epoch << ',' << fmt::format("{:.17g}", r.train_loss) << ','
       << fmt::format("{:.17g}", r.train_war) << ',';
    if (r.has_eval) {
      os << fmt::format("{:.17g}", r.eval_loss) << ',' << fmt::format("{:.17g}", r.eval_war)
         << ',' << fmt::format("{:.17g}", r.eval_uar);
    } else {
      os << ",,";
    }
    os << '\n';
  }
  if (!os) throw RuntimeFailure("short write to " + path.string());
}

namespace {

std::vector<int> argmax_rows(const Tensor& probs) {
  const std::size_t batch = probs.dim(0), k = probs.dim(1);
  std::vector<int> preds(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = probs.data() + b * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (row[j] > row[best]) best = j;
    preds[b] = static_cast<int>(best);
  }
  return preds;
}

void validate_dataset(const Dataset& data, const model::ModelConfig& mcfg) {
  if (data.size() == 0) throw ValidationError("dataset is empty");
  if (data.labels.size() != data.size())
    throw ValidationError("dataset: label count does not match feature count");
  const std::size_t k = mcfg.n_classes;
  for (int label : data.labels)
    if (label < 0 || static_cast<std::size_t>(label) >= k)
      throw ValidationError("dataset: label out of range for K=" + std::to_string(k));
  for (const auto& f : data.features) {
    if (f.cols != mcfg.in_channels)
      throw ValidationError("dataset: feature width " + std::to_string(f.cols) +
                            " does not match model in_channels " +
                            std::to_string(mcfg.in_channels));
    if (f.rows != data.features[0].rows)
      throw ValidationError("dataset: inconsistent frame counts; pad features first");
  }
}

}  // namespace

Score score_dataset(model::TimNetParams& params, const model::ModelConfig& cfg,
                    const Dataset& data, double smoothing, std::size_t batch_size) {
  validate_dataset(data, cfg);
  RngStream unused(0);  // infer mode draws nothing
  Score score;
  score.predictions.reserve(data.size());
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t stop = std::min(data.size(), start + batch_size);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    DiffValue x = diff::constant(batch_tensor(data, idx));
    auto trace = model::forward(x, params, cfg, diff::Mode::Infer, unused);
    std::vector<int> batch_labels(data.labels.begin() + static_cast<std::ptrdiff_t>(start),
                                  data.labels.begin() + static_cast<std::ptrdiff_t>(stop));
    loss_sum += smoothed_cross_entropy(trace.probs, batch_labels, smoothing).value()[0] *
                static_cast<double>(idx.size());
    for (int p : argmax_rows(trace.probs.value())) score.predictions.push_back(p);
  }
  score.loss = loss_sum / static_cast<double>(data.size());
  score.matrix = eval::confusion(score.predictions, data.labels, cfg.n_classes);
  std::tie(score.uar, score.war) = eval::uar_war(score.matrix);
  return score;
}

TrainResult train(const Dataset& data, const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                  const Dataset* eval_split) {
  mcfg.validate();
  tcfg.validate();
  validate_dataset(data, mcfg);
  if (data.size() < 2)
    throw ValidationError("training requires at least 2 items (batch statistics)");
  if (eval_split && eval_split->size() == 0)
    throw ValidationError("eval split is empty");

  RngStream master(tcfg.seed);
  RngStream init_rng = master.split(1);
  model::TimNetParams params = model::init_timnet(mcfg, init_rng);
  std::vector<DiffValue> trainable = params.trainable(mcfg.variant);
  AdamState adam = AdamState::for_params(trainable);

  TrainResult result;
  double best_war = -1.0;

  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    if (tcfg.shuffle) {
      RngStream shuffle_rng = master.split(1000 + epoch);
      for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = shuffle_rng.next_u64() % (i + 1);
        std::swap(order[i], order[j]);
      }
    }

    // batch boundaries; a trailing singleton is merged into the previous batch
    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += tcfg.batch)
      batches.emplace_back(start, std::min(n, start + tcfg.batch));
    if (batches.size() > 1 && batches.back().second - batches.back().first == 1) {
      batches[batches.size() - 2].second = n;
      batches.pop_back();
    }

    RngStream dropout_rng = master.split(2000 + epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const auto& [start, stop] : batches) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      std::vector<int> batch_labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) batch_labels[i] = data.labels[idx[i]];

      diff::zero_grad(trainable);
      DiffValue x = diff::constant(batch_tensor(data, idx));
      auto trace = model::forward(x, params, mcfg, diff::Mode::Train, dropout_rng);
      DiffValue loss = smoothed_cross_entropy(trace.probs, batch_labels, tcfg.smoothing);
      diff::backward(loss);
      adam_step(trainable, adam, tcfg);

      loss_sum += loss.value()[0] * static_cast<double>(idx.size());
      const auto preds = argmax_rows(trace.probs.value());
      for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == batch_labels[i]) ++correct;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(n);
    record.train_war = static_cast<double>(correct) / static_cast<double>(n);

    if (eval_split) {
      const Score s = score_dataset(params, mcfg, *eval_split, tcfg.smoothing);
      record.has_eval = true;
      record.eval_loss = s.loss;
      record.eval_war = s.war;
      record.eval_uar = s.uar;
      if (s.war > best_war) {
        best_war = s.war;
        result.params_best = model::clone_params(params, mcfg);
        result.has_best = true;
        result.best_epoch = epoch;
      }
    }
    result.history.records.push_back(record);
  }

  if (!result.has_best) {
    result.params_best = model::clone_params(params, mcfg);
    result.best_epoch = tcfg.epochs;
  }
  result.params_final = std::move(params);
  return result;
}

}  // namespace timnet::train
