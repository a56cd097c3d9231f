#include "prokcat/attention.hpp"

#include "prokcat/rng.hpp"
#include "fd_check.hpp"

#include <doctest.h>

using namespace prokcat;

namespace {

Tensor random_matrix(int rows, int cols, std::mt19937_64& rng, bool requires_grad = false) {
  ArrayX a(static_cast<Eigen::Index>(rows) * cols);
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng::uniform(rng, -2.0, 2.0);
  return Tensor::from_flat({rows, cols}, std::move(a), requires_grad);
}

Tensor identity_matrix(int n) {
  ArrayX a = ArrayX::Zero(static_cast<Eigen::Index>(n) * n);
  for (int i = 0; i < n; ++i) a(static_cast<Eigen::Index>(i) * n + i) = 1.0;
  return Tensor::from_flat({n, n}, std::move(a));
}

}  // namespace

TEST_CASE("soft alignment zero and analytic cases") {
  std::mt19937_64 rng(1);
  Tensor h_c = random_matrix(3, 4, rng);
  Tensor h_p = random_matrix(5, 4, rng);
  Tensor zero_w = Tensor::zeros({4, 4});
  Tensor a = soft_alignment(h_c, h_p, zero_w);
  CHECK(a.shape() == Shape{3, 5});
  for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a.value_at(i) == 0.0);

  Tensor one = soft_alignment(Tensor::from({1, 1}, {1.0}), Tensor::from({1, 1}, {1.0}),
                              Tensor::from({1, 1}, {1.0}));
  CHECK(one.item() == doctest::Approx(0.761594).epsilon(1e-5));

  CHECK_THROWS_AS(soft_alignment(random_matrix(3, 4, rng), random_matrix(5, 2, rng),
                                 Tensor::zeros({4, 4})),
                  std::invalid_argument);
}

TEST_CASE("alignment entries stay strictly inside (-1, 1)") {
  // unit-range draws: tanh saturates to exactly +-1.0 in doubles past |x|~19
  auto unit_matrix = [](int rows, int cols, std::mt19937_64& g) {
    ArrayX a(static_cast<Eigen::Index>(rows) * cols);
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng::uniform(g, -1.0, 1.0);
    return Tensor::from_flat({rows, cols}, std::move(a));
  };
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor h_c = unit_matrix(4, 3, rng);
    Tensor h_p = unit_matrix(6, 3, rng);
    Tensor w = unit_matrix(3, 3, rng);
    Tensor a = soft_alignment(h_c, h_p, w);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      CHECK(a.value_at(i) > -1.0);
      CHECK(a.value_at(i) < 1.0);
    }
  }
}

TEST_CASE("cross features: zero alignment and identity maps") {
  std::mt19937_64 rng(3);
  InteractionParams params = InteractionParams::init(4, 1, rng);
  Tensor h_p = random_matrix(5, 4, rng);
  Tensor h_c = random_matrix(3, 4, rng);

  auto [p2c_zero, c2p_zero] = cross_features(Tensor::zeros({3, 5}), h_p, h_c, params.heads[0]);
  CHECK(p2c_zero.values().abs().sum() == 0.0);
  CHECK(c2p_zero.values().abs().sum() == 0.0);

  AttentionHeadParams ident = params.heads[0];
  ident.fc_p_w = identity_matrix(4);
  ident.fc_p_b = Tensor::zeros({4});
  ident.fc_c_w = identity_matrix(4);
  ident.fc_c_b = Tensor::zeros({4});
  Tensor hp1 = random_matrix(1, 4, rng);
  Tensor hc1 = random_matrix(1, 4, rng);
  auto [p2c, c2p] = cross_features(Tensor::from({1, 1}, {1.0}), hp1, hc1, ident);
  for (int i = 0; i < 4; ++i) {
    CHECK(p2c.value_at(i) == doctest::Approx(hp1.value_at(i)));
    CHECK(c2p.value_at(i) == doctest::Approx(hc1.value_at(i)));
  }
}

TEST_CASE("cross features gradients") {
  std::mt19937_64 rng(4);
  InteractionParams params = InteractionParams::init(3, 1, rng);
  Tensor h_p = random_matrix(4, 3, rng, true);
  Tensor h_c = random_matrix(2, 3, rng, true);
  Tensor a = random_matrix(2, 4, rng, true);
  Tensor wp = random_matrix(2, 3, rng);
  Tensor wc = random_matrix(4, 3, rng);
  auto report = fdtest::check_gradients(
      {h_p, h_c, a, params.heads[0].fc_p_w, params.heads[0].fc_c_w}, [&]() {
        auto [p2c, c2p] = cross_features(a, h_p, h_c, params.heads[0]);
        return mean_all(p2c * wp) + mean_all(c2p * wc);
      });
  CHECK_MESSAGE(report.ok, report.detail);
}

TEST_CASE("attention weights: uniform for identical positions, sums to one") {
  std::mt19937_64 rng(5);
  InteractionParams params = InteractionParams::init(4, 1, rng);
  // all rows identical -> uniform weights
  ArrayX row(4);
  for (int i = 0; i < 4; ++i) row(i) = rng::uniform(rng, -1, 1);
  ArrayX hp_flat(5 * 4), c2p_flat(5 * 4);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 4; ++c) {
      hp_flat(r * 4 + c) = row(c);
      c2p_flat(r * 4 + c) = 0.5 * row(c);
    }
  Tensor h_p = Tensor::from_flat({5, 4}, hp_flat);
  Tensor h_c2p = Tensor::from_flat({5, 4}, c2p_flat);
  Tensor h_c = random_matrix(3, 4, rng);
  Tensor h_p2c = random_matrix(3, 4, rng);
  auto [alpha_p, alpha_c] = attention_weights(h_c2p, h_p, h_p2c, h_c, params.heads[0]);
  CHECK(alpha_p.shape() == Shape{5, 1});
  CHECK(alpha_c.shape() == Shape{3, 1});
  for (int i = 0; i < 5; ++i) CHECK(alpha_p.value_at(i) == doctest::Approx(0.2).epsilon(1e-9));
  CHECK(alpha_p.values().sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(alpha_c.values().sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a dominant score takes more than uniform weight") {
  AttentionHeadParams head;
  head.score_p_w = Tensor::from({2, 1}, {1.0, 1.0});
  head.score_p_b = Tensor::zeros({1});
  head.score_c_w = Tensor::from({2, 1}, {1.0, 1.0});
  head.score_c_b = Tensor::zeros({1});
  Tensor h_p = Tensor::from({3, 1}, {2.5, 0.0, 0.0});
  Tensor h_c2p = Tensor::from({3, 1}, {2.5, 0.0, 0.0});
  Tensor h_c = Tensor::from({2, 1}, {0.0, 0.0});
  Tensor h_p2c = Tensor::from({2, 1}, {0.0, 0.0});
  auto [alpha_p, alpha_c] = attention_weights(h_c2p, h_p, h_p2c, h_c, head);
  CHECK(alpha_p.value_at(0) > 1.0 / 3.0);
  CHECK(alpha_p.value_at(1) < 1.0 / 3.0);
  CHECK(alpha_c.value_at(0) == doctest::Approx(0.5));
}

TEST_CASE("apply_weights row scaling") {
  std::mt19937_64 rng(6);
  Tensor h_p = random_matrix(4, 3, rng);
  Tensor h_c = random_matrix(2, 3, rng);

  Tensor uniform = Tensor::full({4, 1}, 0.25);
  auto [wp, wc] = apply_weights(uniform, h_p, Tensor::full({2, 1}, 0.5), h_c);
  for (Eigen::Index i = 0; i < h_p.size(); ++i)
    CHECK(wp.value_at(i) == doctest::Approx(h_p.value_at(i) / 4.0));

  Tensor onehot = Tensor::from({4, 1}, {0, 0, 1, 0});
  auto [wp2, wc2] = apply_weights(onehot, h_p, Tensor::full({2, 1}, 0.5), h_c);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c)
      CHECK(wp2.value_at(r * 3 + c) == (r == 2 ? h_p.value_at(r * 3 + c) : 0.0));

  // pooled weighted rows recover the alpha-weighted average of features
  ArrayX alpha_raw(4);
  double norm = 0;
  for (int i = 0; i < 4; ++i) {
    alpha_raw(i) = rng::uniform(rng, 0.05, 1.0);
    norm += alpha_raw(i);
  }
  alpha_raw /= norm;
  Tensor alpha = Tensor::from_flat({4, 1}, alpha_raw);
  auto [wp3, wc3] = apply_weights(alpha, h_p, Tensor::full({2, 1}, 0.5), h_c);
  Tensor pooled = mean_pool(wp3);
  for (int c = 0; c < 3; ++c) {
    double expected = 0;
    for (int r = 0; r < 4; ++r) expected += alpha_raw(r) * h_p.value_at(r * 3 + c);
    CHECK(pooled.value_at(c) * 4.0 == doctest::Approx(expected).epsilon(1e-12));
  }

  CHECK_THROWS_AS(apply_weights(Tensor::zeros({3, 1}), h_p, Tensor::zeros({2, 1}), h_c),
                  std::invalid_argument);
}

TEST_CASE("single head output is a valid InteractionOutput") {
  std::mt19937_64 rng(7);
  InteractionParams params = InteractionParams::init(4, 1, rng);
  Tensor h_p = random_matrix(5, 4, rng);
  Tensor h_c = random_matrix(3, 4, rng);
  InteractionOutput out = single_head_interaction(h_p, h_c, params.heads[0]);
  CHECK(out.alignment.shape() == Shape{3, 5});
  CHECK(out.alpha_p.values().sum() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(out.alpha_c.values().sum() == doctest::Approx(1.0).epsilon(1e-9));
  for (Eigen::Index i = 0; i < out.alpha_p.size(); ++i) CHECK(out.alpha_p.value_at(i) >= 0.0);
  CHECK(out.weighted_p.shape() == Shape{5, 4});
  CHECK(out.weighted_c.shape() == Shape{3, 4});
}

TEST_CASE("multi-head with identity projection equals the single-head pipeline") {
  std::mt19937_64 rng(8);
  InteractionParams params = InteractionParams::init(4, 1, rng);
  params.out_p_w = identity_matrix(4);
  params.out_p_b = Tensor::zeros({4});
  params.out_c_w = identity_matrix(4);
  params.out_c_b = Tensor::zeros({4});
  Tensor h_p = random_matrix(5, 4, rng);
  Tensor h_c = random_matrix(3, 4, rng);
  auto [mp, mc] = multi_head_interaction(h_p, h_c, params);
  InteractionOutput single = single_head_interaction(h_p, h_c, params.heads[0]);
  for (Eigen::Index i = 0; i < mp.size(); ++i)
    CHECK(mp.value_at(i) == doctest::Approx(single.weighted_p.value_at(i)).epsilon(1e-12));
  for (Eigen::Index i = 0; i < mc.size(); ++i)
    CHECK(mc.value_at(i) == doctest::Approx(single.weighted_c.value_at(i)).epsilon(1e-12));
}

TEST_CASE("multi-head output shapes for 1, 2, 4 heads") {
  std::mt19937_64 rng(9);
  for (int heads : {1, 2, 4}) {
    InteractionParams params = InteractionParams::init(4, heads, rng);
    Tensor h_p = random_matrix(5, 4, rng);
    Tensor h_c = random_matrix(3, 4, rng);
    auto [mp, mc] = multi_head_interaction(h_p, h_c, params);
    CHECK(mp.shape() == Shape{5, 4});
    CHECK(mc.shape() == Shape{3, 4});
  }
}

TEST_CASE("multi-head end-to-end gradients match finite differences") {
  std::mt19937_64 rng(10);
  InteractionParams params = InteractionParams::init(4, 2, rng);
  Tensor h_p = random_matrix(3, 4, rng, true);
  Tensor h_c = random_matrix(2, 4, rng, true);
  Tensor wp = random_matrix(3, 4, rng);
  Tensor wc = random_matrix(2, 4, rng);

  std::vector<Tensor> leaves = params.parameters();
  leaves.push_back(h_p);
  leaves.push_back(h_c);
  auto report = fdtest::check_gradients(leaves, [&]() {
    auto [mp, mc] = multi_head_interaction(h_p, h_c, params);
    return mean_all(mp * wp) + mean_all(mc * wc);
  });
  CHECK_MESSAGE(report.ok, report.detail);
}

TEST_CASE("permuting substrate atoms permutes compound outputs and fixes protein ones") {
  std::mt19937_64 rng(11);
  InteractionParams params = InteractionParams::init(4, 1, rng);
  Tensor h_p = random_matrix(5, 4, rng);
  Tensor h_c = random_matrix(3, 4, rng);
  const std::vector<int> perm = {2, 0, 1};
  Tensor h_c_perm = gather_rows(h_c, perm);

  InteractionOutput base = single_head_interaction(h_p, h_c, params.heads[0]);
  InteractionOutput permuted = single_head_interaction(h_p, h_c_perm, params.heads[0]);

  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 5; ++j)
      CHECK(std::abs(permuted.alignment.value_at(i * 5 + j) -
                     base.alignment.value_at(perm[static_cast<size_t>(i)] * 5 + j)) < 1e-9);
    CHECK(std::abs(permuted.alpha_c.value_at(i) -
                   base.alpha_c.value_at(perm[static_cast<size_t>(i)])) < 1e-9);
    for (int c = 0; c < 4; ++c)
      CHECK(std::abs(permuted.weighted_c.value_at(i * 4 + c) -
                     base.weighted_c.value_at(perm[static_cast<size_t>(i)] * 4 + c)) < 1e-9);
  }
  for (int j = 0; j < 5; ++j)
    CHECK(std::abs(permuted.alpha_p.value_at(j) - base.alpha_p.value_at(j)) < 1e-9);
}
