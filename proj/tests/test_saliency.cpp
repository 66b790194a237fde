#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "scaat/model.hpp"
#include "scaat/saliency.hpp"
#include "support/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace scaat;
using scaat::testing::random_tensor;

namespace {

// Single dense layer, scores = W x + b.
ParamSet<double> linear_model(std::size_t c, std::size_t h, std::size_t w, std::size_t classes,
                              std::uint64_t seed) {
  ModelSpec spec{Arch::mlp, c, h, w, classes, {}, seed};
  return init_model<double>(spec);
}

Tensor<double> uniform_input(const Shape& s, Rng& rng) { return random_tensor(s, rng, 0.0, 1.0); }

SaliencyMap map_of(std::size_t h, std::size_t w, std::vector<double> v) {
  SaliencyMap m;
  m.values = Eigen::Map<MapArray>(v.data(), static_cast<Eigen::Index>(h),
                                  static_cast<Eigen::Index>(w));
  return m;
}

// |w_y| reduced over channels.
MapArray abs_weight_map(const ParamSet<double>& p, int y) {
  const auto& s = p.spec;
  const auto& w = p.at("fc0.weight").values();
  const std::size_t d = s.input_size();
  return channel_max_abs(w.data() + static_cast<std::size_t>(y) * d, s.channels, s.height,
                         s.width)
      .values;
}

}  // namespace

TEST_CASE("model parameter layout") {
  ModelSpec mlp{Arch::mlp, 1, 2, 2, 2, {3}, 0};
  auto p = init_model<double>(mlp);
  CHECK(p.count() == 4 * 3 + 3 + 3 * 2 + 2);

  auto cnn = init_model<float>(ModelSpec{Arch::cnn, 1, 8, 8, 3, {2, 4}, 1});
  CHECK(cnn.at("conv0.weight").shape() == Shape{2, 1, 3, 3});
  CHECK(cnn.at("conv1.weight").shape() == Shape{4, 2, 3, 3});
  CHECK(cnn.at("fc0.weight").shape() == Shape{3, 4 * 2 * 2});

  CHECK_THROWS_AS(ModelSpec({Arch::mlp, 1, 2, 2, 1, {}, 0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(ModelSpec({Arch::cnn, 1, 2, 2, 2, {4, 4}, 0}).validate(),
                  std::invalid_argument);
}

TEST_CASE("predict_proba examples") {
  // Zero weights give a uniform distribution.
  auto p = linear_model(1, 3, 3, 4, 0);
  for (auto& [n, t] : p.tensors) t.values_mut().setZero();
  Rng rng(1);
  auto probs = predict_proba(p, uniform_input({1, 3, 3}, rng));
  for (Eigen::Index c = 0; c < 4; ++c) CHECK(probs.values()[c] == doctest::Approx(0.25));

  // Identity weights on two features, x = [ln 2, 0].
  auto q = linear_model(1, 1, 2, 2, 0);
  q.tensors[0].second.values_mut() << 1, 0, 0, 1;
  q.tensors[1].second.values_mut().setZero();
  auto r = predict_proba(q, Tensor<double>::from({1, 1, 2}, {std::log(2.0), 0.0}));
  CHECK(r.values()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r.values()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  CHECK_THROWS_AS(forward(q, Tensor<double>::zeros({1, 2, 1})), ShapeError);
}

TEST_CASE("probabilities and argmax agree with raw scores") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = init_model<double>(ModelSpec{Arch::cnn, 2, 8, 8, 5, {3, 4},
                                          static_cast<std::uint64_t>(trial)});
    auto x = uniform_input({6, 2, 8, 8}, rng);
    auto scores = forward(p, x);
    auto probs = predict_proba(p, x);
    const auto a = argmax_rows(scores);
    const auto b = argmax_rows(probs);
    CHECK(a == b);
    for (Eigen::Index i = 0; i < 6; ++i) {
      CHECK(probs.values().segment(i * 5, 5).sum() == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("vanilla map of a linear model is |w|") {
  auto p = linear_model(3, 4, 5, 3, 11);
  Rng rng(2);
  for (int y = 0; y < 3; ++y) {
    auto m = vanilla_gsmap(p, uniform_input({3, 4, 5}, rng), y);
    CHECK(m.height() == 4);
    CHECK(m.width() == 5);
    CHECK((m.values - abs_weight_map(p, y)).abs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(vanilla_gsmap(p, uniform_input({3, 4, 5}, rng), 3), std::out_of_range);
}

TEST_CASE("vanilla map of a constant model is zero") {
  auto p = init_model<double>(ModelSpec{Arch::mlp, 1, 4, 4, 3, {5}, 3});
  p.tensors[2].second.values_mut().setZero();  // class head weights
  Rng rng(4);
  auto m = vanilla_gsmap(p, uniform_input({1, 4, 4}, rng), 1);
  CHECK(m.values.abs().maxCoeff() == 0.0);
}

TEST_CASE("vanilla maps are non-negative and ignore a constant score shift") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = init_model<double>(ModelSpec{Arch::cnn, 3, 8, 8, 4, {4, 4},
                                          static_cast<std::uint64_t>(trial)});
    auto x = uniform_input({3, 8, 8}, rng);
    auto m = vanilla_gsmap(p, x, trial % 4);
    CHECK((m.values >= 0).all());
    auto shifted = p.copy(true);
    shifted.tensors.back().second.values_mut() += 3.5;
    auto m2 = vanilla_gsmap(shifted, x, trial % 4);
    CHECK((m.values - m2.values).abs().maxCoeff() == 0.0);
  }
}

TEST_CASE("batched maps match per-sample maps") {
  auto p = init_model<double>(ModelSpec{Arch::cnn, 1, 8, 8, 3, {2, 3}, 9});
  Rng rng(6);
  auto batch = uniform_input({4, 1, 8, 8}, rng);
  std::vector<int> ys{0, 2, 1, 2};
  auto maps = vanilla_gsmaps(p, batch, ys);
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor<double> xi({1, 8, 8}, batch.values().segment(static_cast<Eigen::Index>(i * 64), 64));
    auto single = vanilla_gsmap(p, xi, ys[i]);
    CHECK((single.values - maps[i].values).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("smooth_grad") {
  auto p = init_model<double>(ModelSpec{Arch::cnn, 1, 8, 8, 3, {2, 3}, 12});
  Rng rng(8);
  auto x = uniform_input({1, 8, 8}, rng);

  Rng a(1);
  auto zero = smooth_grad(p, x, 1, 4, 0.0, a);
  CHECK((zero.values - vanilla_gsmap(p, x, 1).values).abs().maxCoeff() == 0.0);

  // One sample equals the vanilla map of the noised input.
  Rng b(2), b2(2);
  auto one = smooth_grad(p, x, 2, 1, 0.1, b);
  std::normal_distribution<double> noise(0.0, 0.1);
  Vec<double> noisy = x.values();
  for (auto& v : noisy) v += noise(b2);
  auto ref = vanilla_gsmap(p, Tensor<double>(x.shape(), noisy), 2);
  CHECK((one.values - ref.values).abs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(smooth_grad(p, x, 0, 0, 0.1, a), std::invalid_argument);
  CHECK_THROWS_AS(smooth_grad(p, x, 0, 1, -1.0, a), std::invalid_argument);
}

TEST_CASE("smooth_grad of a linear model averages to |w|") {
  auto p = linear_model(1, 3, 3, 2, 21);
  Rng rng(9);
  auto x = uniform_input({1, 3, 3}, rng);
  auto m = smooth_grad(p, x, 0, 500, 0.5, rng);
  // The gradient of a linear model does not depend on the input, so every
  // sample equals |w| and the standard error is zero.
  CHECK((m.values - abs_weight_map(p, 0)).abs().maxCoeff() < 1e-12);
}

TEST_CASE("integrated gradients") {
  auto lin = linear_model(2, 3, 3, 3, 31);
  Rng rng(10);
  auto x = uniform_input({2, 3, 3}, rng);
  auto zero = Tensor<double>::zeros({2, 3, 3});

  // Linear model with zero baseline: |w * x| for any step count.
  const auto& w = lin.at("fc0.weight").values();
  Vec<double> wx = w.segment(18, 18) * x.values();
  auto expected = channel_max_abs(wx.data(), 2, 3, 3).values;
  for (std::size_t steps : {1u, 3u, 64u}) {
    auto m = integrated_gradients(lin, x, 1, zero, steps);
    CHECK((m.values - expected).abs().maxCoeff() < 1e-12);
  }

  // Baseline equal to the input gives an all-zero map.
  CHECK(integrated_gradients(lin, x, 0, x, 8).values.abs().maxCoeff() == 0.0);

  // Completeness on a nonlinear model.
  auto cnn = init_model<double>(ModelSpec{Arch::cnn, 2, 8, 8, 3, {4, 4}, 32});
  auto xc = uniform_input({2, 8, 8}, rng);
  auto base = Tensor<double>::zeros({2, 8, 8});
  auto attr = integrated_gradients_attributions(cnn, xc, 2, base, 128);
  const double diff = forward(cnn, xc).values()[2] - forward(cnn, base).values()[2];
  CHECK(std::abs(attr.values().sum() - diff) <= 0.01 * std::abs(diff));

  CHECK_THROWS_AS(integrated_gradients(lin, x, 0, zero, 0), std::invalid_argument);
  CHECK_THROWS_AS(integrated_gradients(lin, x, 0, Tensor<double>::zeros({2, 3, 2}), 4),
                  ShapeError);
}

TEST_CASE("region_average") {
  auto m = map_of(2, 2, {0, 2, 4, 6});
  auto r = region_average(m, 2);
  CHECK((r.values == 3.0).all());
  CHECK(r.region == 2);
  CHECK((region_average(m, 1).values == m.values).all());
  CHECK_THROWS_AS(region_average(map_of(3, 4, std::vector<double>(12, 1.0)), 2),
                  std::invalid_argument);

  Rng rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(64);
    for (auto& x : v) x = u(rng);
    auto big = map_of(8, 8, v);
    for (std::size_t side : {2u, 4u, 8u}) {
      auto once = region_average(big, side);
      auto twice = region_average(once, side);
      CHECK((once.values - twice.values).abs().maxCoeff() < 1e-15);
      CHECK(once.values.mean() == doctest::Approx(big.values.mean()).epsilon(1e-12));
    }
  }
}

TEST_CASE("quantile threshold and lowest") {
  const std::vector<double> v{5, 1, 3, 2, 4};
  CHECK(quantile_threshold(v, 0.4) == 3.0);
  CHECK(quantile_threshold(v, 0.0) == 1.0);
  CHECK(quantile_threshold(v, 1.0) == std::numeric_limits<double>::infinity());
  CHECK(lowest(v, 0.4) == IndexSet{1, 3});
  CHECK(lowest(v, 0.0).empty());
  CHECK(lowest(v, 1.0) == IndexSet{0, 1, 2, 3, 4});
  const std::vector<double> flat(6, 2.0);
  for (double q : {0.0, 0.3, 0.99}) CHECK(lowest(flat, q).empty());
  CHECK_THROWS_AS(quantile_threshold(std::vector<double>{}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(quantile_threshold(v, 1.5), std::invalid_argument);
}

TEST_CASE("lowest has floor(q n) members on distinct values and nests in q") {
  Rng rng(12);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + trial * 3;
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    IndexSet prev;
    for (int step = 0; step <= 20; ++step) {
      const double q = step / 20.0;
      auto cur = lowest(v, q);
      CHECK(cur.size() == static_cast<std::size_t>(std::floor(q * n + 1e-9)));
      CHECK(std::is_sorted(cur.begin(), cur.end()));
      CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
      prev = cur;
    }
  }
}

TEST_CASE("mask region side") {
  CHECK(mask_region_side(32, 32) == 4);
  CHECK(mask_region_side(28, 28) == 2);
  CHECK(mask_region_side(16, 16) == 2);
  CHECK(mask_region_side(7, 7) == 1);
}

TEST_CASE("map export") {
  auto m = map_of(2, 3, {0, 1, 2, 3, 4, 5});
  auto g = to_gray8(m);
  CHECK(g.front() == 0);
  CHECK(g.back() == 255);
  CHECK(g[1] == 51);
  const auto dir = std::filesystem::temp_directory_path() / "scaat_test_saliency";
  write_pgm(dir / "m.pgm", m);
  write_csv(dir / "m.csv", m);
  std::ifstream pgm(dir / "m.pgm", std::ios::binary);
  std::string header;
  std::getline(pgm, header);
  CHECK(header == "P5");
  std::ifstream csv(dir / "m.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "0,1,2");
  std::filesystem::remove_all(dir);
}
