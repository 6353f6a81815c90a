#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "diff_helpers.hpp"
#include "timnet/train.hpp"

using namespace timnet;
using diff::DiffValue;
using testutil::random_tensor;
using testutil::sum_all;

namespace {

// Small separable dataset: class determines the sign pattern of the features,
// plus per-item noise.
Dataset toy_dataset(std::size_t per_class, std::size_t t_len, std::size_t channels,
                    std::uint64_t seed) {
  Dataset d;
  d.label_names = {"a", "b", "c"};
  RngStream rng(seed);
  for (int cls = 0; cls < 3; ++cls) {
    for (std::size_t i = 0; i < per_class; ++i) {
      dsp::FeatureMatrix f(t_len, channels);
      for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t c = 0; c < channels; ++c) {
          const double base = (cls == 0) ? 1.0 : (cls == 1 ? -1.0 : (c % 2 ? 1.0 : -1.0));
          f.at(t, c) = base + 0.3 * rng.next_uniform(-1.0, 1.0);
        }
      d.features.push_back(std::move(f));
      d.labels.push_back(cls);
      d.ids.push_back("item" + std::to_string(d.labels.size()));
      d.speakers.push_back("spk" + std::to_string(i % 2));
    }
  }
  return d;
}

model::ModelConfig toy_model(std::size_t t_len, std::size_t channels) {
  model::ModelConfig cfg;
  cfg.n_tabs = 2;
  cfg.kernel_size = 2;
  cfg.channels = static_cast<std::uint32_t>(channels);
  cfg.in_channels = static_cast<std::uint32_t>(channels);
  cfg.dropout = 0.1;
  cfg.n_classes = 3;
  cfg.input_T = static_cast<std::uint32_t>(t_len);
  return cfg;
}

}  // namespace

TEST_CASE("smoothed_cross_entropy") {
  SUBCASE("perfect one-hot prediction at factor 0 gives zero loss") {
    Tensor p({1, 3});
    p.at(0, 1) = 1.0;
    std::vector<int> labels{1};
    auto loss = train::smoothed_cross_entropy(diff::constant(p), labels, 0.0);
    CHECK(loss.value()[0] == 0.0);
  }

  SUBCASE("uniform prediction costs log K for any factor") {
    Tensor p({2, 4}, 0.25);
    std::vector<int> labels{0, 3};
    for (double factor : {0.0, 0.1, 0.5}) {
      auto loss = train::smoothed_cross_entropy(diff::constant(p), labels, factor);
      CHECK(loss.value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
  }

  SUBCASE("worked example: K=4, factor 0.1, label 2") {
    Tensor p({1, 4});
    p.at(0, 0) = 0.1;
    p.at(0, 1) = 0.2;
    p.at(0, 2) = 0.6;
    p.at(0, 3) = 0.1;
    std::vector<int> labels{2};
    const double expect = -(0.025 * std::log(0.1) + 0.025 * std::log(0.2) +
                            0.925 * std::log(0.6) + 0.025 * std::log(0.1));
    auto loss = train::smoothed_cross_entropy(diff::constant(p), labels, 0.1);
    CHECK(loss.value()[0] == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("invalid labels and factors are rejected") {
    Tensor p({1, 3}, 1.0 / 3.0);
    std::vector<int> bad{3};
    CHECK_THROWS_AS(train::smoothed_cross_entropy(diff::constant(p), bad, 0.1), ValidationError);
    std::vector<int> ok{0};
    CHECK_THROWS_AS(train::smoothed_cross_entropy(diff::constant(p), ok, 1.0), ValidationError);
    CHECK_THROWS_AS(train::smoothed_cross_entropy(diff::constant(p), ok, -0.1), ValidationError);
  }

  SUBCASE("loss is bounded below by the smoothed-target entropy") {
    RngStream rng(71);
    const std::size_t k = 5;
    const double s = 0.1;
    for (int trial = 0; trial < 100; ++trial) {
      Tensor logits = random_tensor({1, k}, rng, -3.0, 3.0);
      auto probs = diff::softmax(diff::constant(logits));
      const int label = static_cast<int>(rng.next_u64() % k);
      std::vector<int> labels{label};
      auto loss = train::smoothed_cross_entropy(probs, labels, s);
      double entropy = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const double q = (static_cast<int>(j) == label) ? 1.0 - s + s / k : s / k;
        entropy -= q * std::log(q);
      }
      CHECK(loss.value()[0] >= entropy - 1e-12);
    }
  }

  SUBCASE("gradient matches finite differences through softmax") {
    RngStream rng(72);
    auto logits = diff::parameter(random_tensor({2, 4}, rng), "logits");
    std::vector<int> labels{1, 3};
    std::vector<DiffValue> params{logits};
    auto build = [&]() {
      return train::smoothed_cross_entropy(diff::softmax(logits), labels, 0.1);
    };
    const auto report = diff::finite_diff_check(build, params, 1e-6);
    CHECK(report.max_rel_err < 1e-6);
  }
}

TEST_CASE("adam_step") {
  train::TrainConfig cfg;

  SUBCASE("zero gradients leave parameters unchanged") {
    auto theta = diff::parameter(Tensor({3}, 1.5), "theta");
    std::vector<DiffValue> params{theta};
    auto state = train::AdamState::for_params(params);
    train::adam_step(params, state, cfg);
    for (double v : theta.value().flat()) CHECK(v == 1.5);
  }

  SUBCASE("first step from zero with unit gradient") {
    auto theta = diff::parameter(Tensor({1}, 0.0), "theta");
    theta.grad()[0] = 1.0;
    std::vector<DiffValue> params{theta};
    auto state = train::AdamState::for_params(params);
    train::adam_step(params, state, cfg);
    CHECK(theta.value()[0] == doctest::Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-12));
  }

  SUBCASE("step direction is scale invariant at t=1 up to epsilon effects") {
    auto a = diff::parameter(Tensor({1}, 0.0), "a");
    auto b = diff::parameter(Tensor({1}, 0.0), "b");
    a.grad()[0] = 1.0;
    b.grad()[0] = 10.0;
    std::vector<DiffValue> pa{a}, pb{b};
    auto sa = train::AdamState::for_params(pa);
    auto sb = train::AdamState::for_params(pb);
    train::adam_step(pa, sa, cfg);
    train::adam_step(pb, sb, cfg);
    CHECK(std::abs(a.value()[0] - b.value()[0]) < 1e-10);
  }

  SUBCASE("NaN gradients abort naming the parameter") {
    auto theta = diff::parameter(Tensor({2}, 0.0), "layer.w");
    theta.grad()[1] = std::nan("");
    std::vector<DiffValue> params{theta};
    auto state = train::AdamState::for_params(params);
    try {
      train::adam_step(params, state, cfg);
      FAIL("expected RuntimeFailure");
    } catch (const RuntimeFailure& e) {
      CHECK(std::string(e.what()).find("layer.w") != std::string::npos);
    }
  }

  SUBCASE("one step on a 1-D quadratic reduces the loss") {
    auto theta = diff::parameter(Tensor({1}, 1.0), "theta");
    std::vector<DiffValue> params{theta};
    auto state = train::AdamState::for_params(params);
    auto loss_value = [&]() { return theta.value()[0] * theta.value()[0]; };
    const double before = loss_value();
    diff::zero_grad(params);
    auto loss = sum_all(diff::mul(theta, theta));
    diff::backward(loss);
    train::adam_step(params, state, cfg);
    CHECK(loss_value() < before);
  }
}

TEST_CASE("training loop") {
  const std::size_t t_len = 8, channels = 4;
  Dataset data = toy_dataset(4, t_len, channels, 5);
  model::ModelConfig mcfg = toy_model(t_len, channels);
  train::TrainConfig tcfg;
  tcfg.epochs = 5;
  tcfg.batch = 4;
  tcfg.seed = 9;

  SUBCASE("same seed twice gives bit-identical final loss") {
    auto r1 = train::train(data, mcfg, tcfg);
    auto r2 = train::train(data, mcfg, tcfg);
    CHECK(r1.history.records.back().train_loss == r2.history.records.back().train_loss);
    CHECK(r1.history.records.size() == tcfg.epochs);
  }

  SUBCASE("lr=0 leaves parameters untouched and the loss flat") {
    train::TrainConfig frozen = tcfg;
    frozen.lr = 1e-300;  // effectively zero but passes lr > 0 validation
    frozen.shuffle = false;
    auto result = train::train(data, mcfg, frozen);
    RngStream rng(frozen.seed);
    RngStream init_rng = rng.split(1);
    auto reference = model::init_timnet(mcfg, init_rng);
    const auto got = result.params_final.named_state();
    auto want = reference.named_state();
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (got[i].name.find("running") != std::string::npos) continue;  // BN stats still update
      for (std::size_t j = 0; j < got[i].tensor->numel(); ++j)
        CHECK((*got[i].tensor)[j] == doctest::Approx((*want[i].tensor)[j]).epsilon(1e-280));
    }
  }

  SUBCASE("identical consecutive batches produce identical gradients when zeroed between") {
    RngStream rng(13);
    auto params = model::init_timnet(mcfg, rng);
    auto trainable = params.trainable(mcfg.variant);
    std::vector<std::size_t> idx{0, 1, 2, 3};
    std::vector<int> labels;
    for (std::size_t i : idx) labels.push_back(data.labels[i]);

    auto run_once = [&]() {
      diff::zero_grad(trainable);
      RngStream drop(77);
      auto trace = model::forward(diff::constant(batch_tensor(data, idx)), params, mcfg,
                                  diff::Mode::Train, drop, /*update_running=*/false);
      diff::backward(train::smoothed_cross_entropy(trace.probs, labels, 0.1));
      double norm = 0.0;
      for (auto& p : trainable)
        for (double g : p.grad().flat()) norm += g * g;
      return norm;
    };
    CHECK(run_once() == run_once());
  }

  SUBCASE("eval split: history records eval metrics and best >= final WAR") {
    Dataset eval_set = toy_dataset(2, t_len, channels, 6);
    train::TrainConfig cfg2 = tcfg;
    cfg2.epochs = 6;
    auto result = train::train(data, mcfg, cfg2, &eval_set);
    REQUIRE(result.history.records.size() == 6);
    for (const auto& r : result.history.records) CHECK(r.has_eval);
    const auto best = train::score_dataset(result.params_best, mcfg, eval_set, 0.1);
    const auto last = train::score_dataset(result.params_final, mcfg, eval_set, 0.1);
    CHECK(best.war >= last.war);
    CHECK(result.best_epoch >= 1);
  }

  SUBCASE("empty datasets and label mismatches are rejected") {
    Dataset empty;
    empty.label_names = {"a", "b", "c"};
    CHECK_THROWS_AS(train::train(empty, mcfg, tcfg), ValidationError);

    Dataset bad = toy_dataset(2, t_len, channels, 7);
    bad.labels[0] = 99;
    CHECK_THROWS_AS(train::train(bad, mcfg, tcfg), ValidationError);
  }

  SUBCASE("history CSV round trips the record count") {
    namespace fs = std::filesystem;
    auto result = train::train(data, mcfg, tcfg);
    const fs::path path = fs::temp_directory_path() / "timnet_hist_test.csv";
    result.history.write_csv(path);
    std::ifstream is(path);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(is, line))
      if (!line.empty()) ++lines;
    CHECK(lines == tcfg.epochs + 1);  // header + one row per epoch
  }
}
