#include <doctest.h>

#include <cmath>
#include <cstring>

#include "diff_helpers.hpp"
#include "timnet/autodiff.hpp"
#include "timnet/gradcheck.hpp"

using namespace timnet;
using diff::DiffValue;
using diff::Mode;
using testutil::dot_const;
using testutil::random_coeffs;
using testutil::random_tensor;
using testutil::sum_all;

namespace {

DiffValue conv_1ch(const std::vector<double>& x, const std::vector<double>& w, double b,
                   std::size_t dilation) {
  Tensor xt({1, x.size(), 1});
  for (std::size_t i = 0; i < x.size(); ++i) xt[i] = x[i];
  Tensor wt({w.size(), 1, 1});
  for (std::size_t i = 0; i < w.size(); ++i) wt[i] = w[i];
  return diff::dilated_causal_conv1d(diff::constant(xt), diff::constant(wt),
                                     diff::constant(Tensor({1}, b)), dilation);
}

}  // namespace

TEST_CASE("dilated causal conv: worked examples") {
  SUBCASE("k=2 d=2 w=[1,1] on [1,2,3,4]") {
    const auto y = conv_1ch({1, 2, 3, 4}, {1, 1}, 0.0, 2);
    const double expect[4] = {1, 2, 4, 6};
    for (std::size_t t = 0; t < 4; ++t) CHECK(y.value()[t] == expect[t]);
  }
  SUBCASE("w=[0,1] is the identity for any dilation") {
    for (std::size_t d : {1, 2, 5}) {
      const auto y = conv_1ch({0.5, -1.0, 2.0, 0.0, 3.0}, {0, 1}, 0.0, d);
      const double expect[5] = {0.5, -1.0, 2.0, 0.0, 3.0};
      for (std::size_t t = 0; t < 5; ++t) CHECK(y.value()[t] == expect[t]);
    }
  }
  SUBCASE("impulse response shows the dilation signature") {
    const auto y = conv_1ch({1, 0, 0, 0, 0}, {0.7, -0.2}, 0.0, 2);
    CHECK(y.value()[0] == -0.2);  // w[k-1] multiplies x[t]
    CHECK(y.value()[1] == 0.0);
    CHECK(y.value()[2] == 0.7);  // w[0] multiplies x[t-2]
    CHECK(y.value()[3] == 0.0);
    CHECK(y.value()[4] == 0.0);
  }
  SUBCASE("matches a direct-sum oracle on random multi-channel input") {
    RngStream rng(99);
    const std::size_t B = 2, T = 9, Cin = 3, Cout = 4, k = 3, d = 2;
    Tensor x = random_tensor({B, T, Cin}, rng);
    Tensor w = random_tensor({k, Cin, Cout}, rng);
    Tensor b = random_tensor({Cout}, rng);
    const auto y =
        diff::dilated_causal_conv1d(diff::constant(x), diff::constant(w), diff::constant(b), d);
    for (std::size_t bi = 0; bi < B; ++bi)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t o = 0; o < Cout; ++o) {
          double acc = b[o];
          for (std::size_t i = 0; i < k; ++i) {
            const std::ptrdiff_t tau = static_cast<std::ptrdiff_t>(t) -
                                       static_cast<std::ptrdiff_t>((k - 1 - i) * d);
            if (tau < 0) continue;
            for (std::size_t c = 0; c < Cin; ++c)
              acc += w.at(i, c, o) * x.at(bi, static_cast<std::size_t>(tau), c);
          }
          CHECK(y.value().at(bi, t, o) == doctest::Approx(acc).epsilon(1e-12));
        }
  }
  SUBCASE("shape mismatch is rejected") {
    Tensor x({1, 4, 2});
    Tensor w({2, 3, 2});  // Cin disagrees
    CHECK_THROWS_AS(diff::dilated_causal_conv1d(diff::constant(x), diff::constant(w),
                                                diff::constant(Tensor({2})), 1),
                    ValidationError);
  }
}

TEST_CASE("dilated causal conv: causality and length preservation") {
  RngStream rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t T = 8 + rng.next_u64() % 24;
    const std::size_t k = 1 + rng.next_u64() % 3;
    const std::size_t d = 1 + rng.next_u64() % 4;
    Tensor x = random_tensor({1, T, 2}, rng);
    Tensor w = random_tensor({k, 2, 2}, rng);
    Tensor b = random_tensor({2}, rng);
    const auto base =
        diff::dilated_causal_conv1d(diff::constant(x), diff::constant(w), diff::constant(b), d);
    CHECK(base.value().dim(1) == T);

    const std::size_t t_perturb = 1 + rng.next_u64() % (T - 1);
    Tensor x2 = x;
    x2.at(0, t_perturb, rng.next_u64() % 2) += 0.5;
    const auto other =
        diff::dilated_causal_conv1d(diff::constant(x2), diff::constant(w), diff::constant(b), d);
    // bit-identical strictly before the perturbed frame
    CHECK(std::memcmp(base.value().data(), other.value().data(),
                      t_perturb * 2 * sizeof(double)) == 0);
  }
}

TEST_CASE("batch_norm") {
  SUBCASE("train mode standardizes per channel") {
    RngStream rng(5);
    auto bn = diff::make_batch_norm(3, "bn");
    Tensor x = random_tensor({2, 8, 3}, rng, -3.0, 5.0);
    const auto y = diff::batch_norm(diff::constant(x), bn, Mode::Train);
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0.0, var = 0.0;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 8; ++t) mean += y.value().at(b, t, c);
      mean /= 16.0;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 8; ++t) {
          const double dv = y.value().at(b, t, c) - mean;
          var += dv * dv;
        }
      var /= 16.0;
      CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
      CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // epsilon shrinks variance slightly
    }
  }

  SUBCASE("already standardized input is a fixed point") {
    auto bn = diff::make_batch_norm(1, "bn");
    // mean 0, variance 1 by construction
    Tensor x({1, 4, 1});
    x[0] = -1.0; x[1] = 1.0; x[2] = -1.0; x[3] = 1.0;
    const auto y = diff::batch_norm(diff::constant(x), bn, Mode::Train);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(y.value()[i] == doctest::Approx(x[i]).epsilon(1e-5));
  }

  SUBCASE("matches a two-pass statistics oracle") {
    RngStream rng(6);
    auto bn = diff::make_batch_norm(3, "bn");
    // exercise non-default affine parameters as well
    bn.gamma.value()[0] = 1.3; bn.gamma.value()[1] = 0.7; bn.gamma.value()[2] = -0.4;
    bn.beta.value()[0] = 0.1; bn.beta.value()[1] = -2.0; bn.beta.value()[2] = 0.5;
    Tensor x = random_tensor({2, 4, 3}, rng, -2.0, 2.0);
    const auto y = diff::batch_norm(diff::constant(x), bn, Mode::Train);
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 4; ++t) mean += x.at(b, t, c);
      mean /= 8.0;
      double var = 0.0;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 4; ++t) var += (x.at(b, t, c) - mean) * (x.at(b, t, c) - mean);
      var /= 8.0;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 4; ++t) {
          const double expect = bn.gamma.value()[c] * (x.at(b, t, c) - mean) /
                                    std::sqrt(var + bn.epsilon) +
                                bn.beta.value()[c];
          CHECK(std::abs(y.value().at(b, t, c) - expect) < 1e-10);
        }
    }
  }

  SUBCASE("infer mode before any update applies the (0,1) running stats") {
    auto bn = diff::make_batch_norm(2, "bn");
    RngStream rng(8);
    Tensor x = random_tensor({1, 5, 2}, rng);
    const auto y = diff::batch_norm(diff::constant(x), bn, Mode::Infer);
    for (std::size_t i = 0; i < x.numel(); ++i)
      CHECK(y.value()[i] == doctest::Approx(x[i] / std::sqrt(1.0 + bn.epsilon)).epsilon(1e-12));
  }

  SUBCASE("running stats move toward batch stats under momentum") {
    auto bn = diff::make_batch_norm(1, "bn");
    Tensor x({1, 4, 1}, 3.0);  // constant 3: batch mean 3, var 0
    (void)diff::batch_norm(diff::constant(x), bn, Mode::Train);
    CHECK(bn.running_mean[0] == doctest::Approx(0.99 * 0.0 + 0.01 * 3.0));
    CHECK(bn.running_var[0] == doctest::Approx(0.99 * 1.0 + 0.01 * 0.0));
  }
}

TEST_CASE("spatial_dropout") {
  RngStream rng(11);
  Tensor x = random_tensor({2, 6, 4}, rng, 0.5, 1.5);  // nonzero everywhere

  SUBCASE("rate 0 and infer mode are identities") {
    RngStream r1(1);
    auto a = diff::spatial_dropout(diff::constant(x), 0.0, r1, Mode::Train);
    auto b = diff::spatial_dropout(diff::constant(x), 0.7, r1, Mode::Infer);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      CHECK(a.value()[i] == x[i]);
      CHECK(b.value()[i] == x[i]);
    }
  }

  SUBCASE("rate >= 1 or negative is rejected") {
    RngStream r1(1);
    CHECK_THROWS_AS(diff::spatial_dropout(diff::constant(x), 1.0, r1, Mode::Train),
                    ValidationError);
    CHECK_THROWS_AS(diff::spatial_dropout(diff::constant(x), -0.1, r1, Mode::Train),
                    ValidationError);
  }

  SUBCASE("channels are zeroed across every time step, survivors rescaled") {
    RngStream r1(123);
    const auto y = diff::spatial_dropout(diff::constant(x), 0.5, r1, Mode::Train);
    std::size_t dropped = 0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 4; ++c) {
        const bool zero_first = y.value().at(b, 0, c) == 0.0;
        if (zero_first) ++dropped;
        for (std::size_t t = 0; t < 6; ++t) {
          if (zero_first)
            CHECK(y.value().at(b, t, c) == 0.0);
          else
            CHECK(y.value().at(b, t, c) == doctest::Approx(2.0 * x.at(b, t, c)).epsilon(1e-15));
        }
      }
    CHECK(dropped > 0);  // with 8 channels at rate .5 all-kept is a 0.4% seed fluke
  }

  SUBCASE("empirical drop fraction over 10^4 channels is 0.5 +/- 0.02") {
    RngStream r1(321);
    Tensor big({1, 2, 10000}, 1.0);
    const auto y = diff::spatial_dropout(diff::constant(big), 0.5, r1, Mode::Train);
    std::size_t dropped = 0;
    for (std::size_t c = 0; c < 10000; ++c)
      if (y.value().at(0, 0, c) == 0.0) ++dropped;
    const double fraction = static_cast<double>(dropped) / 10000.0;
    CHECK(fraction > 0.48);
    CHECK(fraction < 0.52);
  }
}

TEST_CASE("pointwise ops and softmax") {
  SUBCASE("sigmoid(0)=0.5 and relu(-3)=0") {
    Tensor x({2});
    x[0] = 0.0;
    x[1] = -3.0;
    CHECK(diff::sigmoid(diff::constant(x)).value()[0] == 0.5);
    CHECK(diff::relu(diff::constant(x)).value()[1] == 0.0);
  }

  SUBCASE("softmax of zero logits is uniform") {
    Tensor z({1, 4});
    const auto p = diff::softmax(diff::constant(z));
    for (std::size_t j = 0; j < 4; ++j) CHECK(p.value()[j] == doctest::Approx(0.25).epsilon(1e-15));
  }

  SUBCASE("softmax is shift invariant and lands on the simplex") {
    RngStream rng(31);
    for (int trial = 0; trial < 50; ++trial) {
      Tensor z = random_tensor({2, 5}, rng, -30.0, 30.0);
      Tensor shifted = z;
      const double c = rng.next_uniform(-10.0, 10.0);
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t j = 0; j < 5; ++j) shifted.at(b, j) += c;
      const auto p = diff::softmax(diff::constant(z));
      const auto q = diff::softmax(diff::constant(shifted));
      for (std::size_t b = 0; b < 2; ++b) {
        double row = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
          CHECK(p.value().at(b, j) > 0.0);
          CHECK(std::abs(p.value().at(b, j) - q.value().at(b, j)) < 1e-12);
          row += p.value().at(b, j);
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("temporal_mean") {
  SUBCASE("constant in time returns the constant") {
    Tensor x({1, 5, 2});
    for (std::size_t t = 0; t < 5; ++t) {
      x.at(0, t, 0) = 2.5;
      x.at(0, t, 1) = -1.25;
    }
    const auto m = diff::temporal_mean(diff::constant(x));
    CHECK(m.value()[0] == 2.5);
    CHECK(m.value()[1] == -1.25);
  }

  SUBCASE("linear: mean(a+b) = mean(a) + mean(b) exactly up to fp association") {
    RngStream rng(41);
    Tensor a = random_tensor({1, 4, 3}, rng);
    Tensor b = random_tensor({1, 4, 3}, rng);
    const auto lhs = diff::temporal_mean(diff::add(diff::constant(a), diff::constant(b)));
    const auto rhs = diff::add(diff::temporal_mean(diff::constant(a)),
                               diff::temporal_mean(diff::constant(b)));
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(lhs.value()[i] == doctest::Approx(rhs.value()[i]).epsilon(1e-15));
  }

  SUBCASE("matches a direct summation oracle") {
    RngStream rng(43);
    Tensor x = random_tensor({1, 3, 5}, rng);
    const auto m = diff::temporal_mean(diff::constant(x));
    for (std::size_t c = 0; c < 5; ++c) {
      const double expect = (x.at(0, 0, c) + x.at(0, 1, c) + x.at(0, 2, c)) / 3.0;
      CHECK(std::abs(m.value()[c] - expect) < 1e-12);
    }
  }
}

TEST_CASE("backward") {
  SUBCASE("sum of squares has gradient 2*theta") {
    Tensor t({2});
    t[0] = 1.0;
    t[1] = 2.0;
    auto theta = diff::parameter(t, "theta");
    auto loss = sum_all(diff::mul(theta, theta));
    diff::backward(loss);
    CHECK(theta.grad()[0] == doctest::Approx(2.0));
    CHECK(theta.grad()[1] == doctest::Approx(4.0));
  }

  SUBCASE("disconnected parameters keep a zero gradient") {
    auto used = diff::parameter(Tensor({2}, 1.0), "used");
    auto unused = diff::parameter(Tensor({3}, 1.0), "unused");
    auto loss = sum_all(diff::mul(used, used));
    diff::backward(loss);
    for (std::size_t i = 0; i < 3; ++i) CHECK(unused.grad()[i] == 0.0);
  }

  SUBCASE("non-scalar loss is rejected") {
    auto theta = diff::parameter(Tensor({2}, 1.0), "theta");
    CHECK_THROWS_AS(diff::backward(diff::mul(theta, theta)), ValidationError);
  }

  SUBCASE("gradients accumulate until zeroed") {
    auto theta = diff::parameter(Tensor({1}, 3.0), "theta");
    for (int i = 0; i < 2; ++i) {
      auto loss = sum_all(diff::mul(theta, theta));
      diff::backward(loss);
    }
    CHECK(theta.grad()[0] == doctest::Approx(12.0));  // 2 * 6
    std::vector<diff::DiffValue> params{theta};
    diff::zero_grad(params);
    CHECK(theta.grad()[0] == 0.0);
  }
}

TEST_CASE("finite_diff_check") {
  SUBCASE("quadratic form is exact to 1e-9") {
    RngStream rng(51);
    auto theta = diff::parameter(random_tensor({6}, rng), "theta");
    const auto coeffs = random_coeffs(6, rng);
    std::vector<diff::DiffValue> params{theta};
    auto build = [&]() { return dot_const(diff::mul(theta, theta), coeffs); };
    const auto report = diff::finite_diff_check(build, params, 1e-5);
    CHECK(report.max_rel_err < 1e-9);
    CHECK(report.n_coords == 6);
  }

  SUBCASE("sigmoid-gated product passes at 1e-6") {
    RngStream rng(52);
    auto x = diff::parameter(random_tensor({1, 6, 2}, rng), "x");
    auto w = diff::parameter(random_tensor({2, 2, 2}, rng), "w");
    auto b = diff::parameter(random_tensor({2}, rng), "b");
    const auto coeffs = random_coeffs(12, rng);
    std::vector<diff::DiffValue> params{x, w, b};
    auto build = [&]() {
      auto s = diff::dilated_causal_conv1d(x, w, b, 1);
      return dot_const(diff::mul(diff::sigmoid(s), x), coeffs);
    };
    const auto report = diff::finite_diff_check(build, params, 1e-5);
    CHECK(report.max_rel_err < 1e-6);
  }

  SUBCASE("every core op passes at 1e-6") {
    RngStream rng(53);
    auto x = diff::parameter(random_tensor({2, 5, 3}, rng), "x");
    const auto coeffs30 = random_coeffs(30, rng);
    const auto coeffs6 = random_coeffs(6, rng);
    std::vector<diff::DiffValue> params{x};

    auto check = [&](auto&& build, double bound = 1e-6) {
      const auto report = diff::finite_diff_check(build, params, 1e-5);
      CHECK(report.max_rel_err < bound);
    };
    check([&]() { return dot_const(diff::relu(x), coeffs30); });
    check([&]() { return dot_const(diff::sigmoid(x), coeffs30); });
    check([&]() { return dot_const(diff::time_reverse(x), coeffs30); });
    check([&]() { return dot_const(diff::temporal_mean(x), coeffs6); });
    check([&]() { return dot_const(diff::add(x, diff::mul(x, x)), coeffs30); });

    // batch norm, gradients through the batch statistics
    auto bn = diff::make_batch_norm(3, "bn");
    std::vector<diff::DiffValue> bn_params{x, bn.gamma, bn.beta};
    const auto report = diff::finite_diff_check(
        [&]() {
          return dot_const(diff::batch_norm(x, bn, Mode::Train, /*update_running=*/false),
                           coeffs30);
        },
        bn_params, 1e-5);
    CHECK(report.max_rel_err < 1e-6);

    // softmax + weighted fusion
    auto w = diff::parameter(random_tensor({2}, rng), "w");
    auto g2 = diff::parameter(random_tensor({2, 3}, rng), "g2");
    std::vector<diff::DiffValue> fusion_params{x, w, g2};
    const auto report2 = diff::finite_diff_check(
        [&]() {
          std::vector<diff::DiffValue> gs{diff::temporal_mean(x), g2};
          return dot_const(diff::softmax(diff::weighted_sum(gs, w)), coeffs6);
        },
        fusion_params, 1e-5);
    CHECK(report2.max_rel_err < 1e-6);
  }

  SUBCASE("a non-deterministic loss is detected") {
    auto theta = diff::parameter(Tensor({1}, 1.0), "theta");
    std::vector<diff::DiffValue> params{theta};
    int calls = 0;
    auto build = [&]() {
      ++calls;
      Tensor noise({1}, 0.001 * calls);
      return sum_all(diff::mul(theta, diff::constant(noise)));
    };
    CHECK_THROWS_AS(diff::finite_diff_check(build, params, 1e-5), RuntimeFailure);
  }
}

TEST_CASE("weighted_sum gradient matches per-scale dot products") {
  RngStream rng(61);
  auto g1 = diff::parameter(random_tensor({2, 3}, rng), "g1");
  auto g2 = diff::parameter(random_tensor({2, 3}, rng), "g2");
  auto w = diff::parameter(random_tensor({2}, rng), "w");
  const auto coeffs = random_coeffs(6, rng);

  std::vector<diff::DiffValue> gs{g1, g2};
  auto fused = diff::weighted_sum(gs, w);
  auto loss = dot_const(fused, coeffs);
  diff::backward(loss);

  // dL/dw_j = <dL/dg_drf, g_j>; here dL/dg_drf is the coefficient vector
  for (std::size_t j = 0; j < 2; ++j) {
    double expect = 0.0;
    for (std::size_t i = 0; i < 6; ++i) expect += coeffs[i] * gs[j].value()[i];
    CHECK(w.grad()[j] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("non-finite op output raises the error state") {
  Tensor big({1}, 1e308);
  CHECK_THROWS_AS(diff::add(diff::constant(big), diff::constant(big)), RuntimeFailure);
}
