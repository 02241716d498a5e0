#include <cmath>
#include <random>

#include "doctest.h"
#include "madm/error.hpp"
#include "madm/schedule.hpp"
#include "test_util.hpp"

using namespace madm;

TEST_CASE("linear schedule endpoints and running product") {
  const auto s = make_linear_schedule(4, 0.1, 0.4);
  const double betas[] = {0.1, 0.2, 0.3, 0.4};
  const double abars[] = {0.9, 0.72, 0.504, 0.3024};
  for (int t = 1; t <= 4; ++t) {
    CHECK(s.beta(t) == doctest::Approx(betas[t - 1]).epsilon(1e-15));
    CHECK(s.alpha_bar(t) == doctest::Approx(abars[t - 1]).epsilon(1e-14));
  }
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(make_linear_schedule(1000).steps() == 1000);
}

TEST_CASE("schedule rejects invalid arguments") {
  CHECK_THROWS_AS(make_linear_schedule(5000, 0.5, 0.9), RangeError);  // alpha_bar underflow
  CHECK_THROWS_AS(make_linear_schedule(1, 0.1, 0.2), RangeError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.2, 0.1), RangeError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.1), RangeError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.1, 1.0), RangeError);
  const auto s = make_linear_schedule(4, 0.1, 0.4);
  CHECK_THROWS_AS(s.beta(0), RangeError);
  CHECK_THROWS_AS(s.beta(5), RangeError);
  CHECK_THROWS_AS(s.alpha_bar(5), RangeError);
}

TEST_CASE("schedule invariants hold for random valid parameters") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int T = std::uniform_int_distribution<int>(2, 1000)(rng);
    const double a = std::uniform_real_distribution<double>(1e-6, 0.1)(rng);
    const double b = std::uniform_real_distribution<double>(a + 1e-3, 0.5)(rng);
    const auto s = make_linear_schedule(T, a, b);
    REQUIRE(s.steps() == T);
    double product = 1.0;
    for (int t = 1; t <= T; ++t) {
      CHECK(s.beta(t) > 0.0);
      CHECK(s.beta(t) < 1.0);
      if (t > 1) {
        CHECK(s.beta(t) > s.beta(t - 1));
        CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
        CHECK(s.alpha_bar(t) == s.alpha_bar(t - 1) * s.alpha(t));
      }
      CHECK(s.alpha(t) == 1.0 - s.beta(t));
      product *= 1.0 - s.beta(t);
      CHECK(std::abs(s.alpha_bar(t) - product) <= 1e-12);
    }
    CHECK(s.alpha_bar(T) < s.alpha_bar(1));
    CHECK(s.alpha_bar(1) < 1.0);
  }
}

TEST_CASE("schedule json round trip") {
  const auto s = make_linear_schedule(200, 1e-4, 0.02);
  CHECK(NoiseSchedule::from_json(s.to_json()) == s);
}

TEST_CASE("diffuse hand values") {
  const auto s = make_linear_schedule(4, 0.1, 0.4);
  const Dims d{3, 4, 5};
  const Volume y0(d, 1.0f), eps(d, 1.0f);
  const Volume y2 = diffuse(y0, 2, eps, s);
  for (float v : y2.voxels()) CHECK(v == doctest::Approx(std::sqrt(0.72) + std::sqrt(0.28)).epsilon(1e-6));
  CHECK(y2.voxels()[0] == doctest::Approx(1.37768).epsilon(1e-5));

  const Volume y = test::random_volume(d, 3);
  const Volume zero(d, 0.0f);
  for (int t = 1; t <= 4; ++t) {
    const Volume out = diffuse(y, t, zero, s);
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(out.voxels()[i] == static_cast<float>(std::sqrt(s.alpha_bar(t)) * y.voxels()[i]));
    }
  }
  CHECK_THROWS_AS(diffuse(y, 0, zero, s), RangeError);
  CHECK_THROWS_AS(diffuse(y, 5, zero, s), RangeError);
  CHECK_THROWS_AS(diffuse(y, 1, Volume(Dims{3, 4, 4}), s), ShapeError);
}

TEST_CASE("diffuse at the end of a near-one schedule forgets y0") {
  const auto s = make_linear_schedule(50, 0.5, 0.999);
  const Dims d{20, 20, 20};
  const Volume y0 = test::random_volume(d, 1);
  const Volume eps = test::gaussian_volume(d, 2);
  const Volume out = diffuse(y0, 50, eps, s);
  CHECK(std::abs(test::correlation(out, y0)) < 0.05);
  CHECK(test::correlation(out, eps) > 0.999);
}

TEST_CASE("diffuse is affine under joint scaling") {
  const auto s = make_linear_schedule(100);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Dims d{4, 5, 6};
    const Volume y0 = test::random_volume(d, 100 + trial);
    const Volume eps = test::gaussian_volume(d, 200 + trial);
    const float a = std::uniform_real_distribution<float>(-3.0f, 3.0f)(rng);
    const int t = std::uniform_int_distribution<int>(1, 100)(rng);
    Volume ya = y0, ea = eps;
    for (auto& v : ya.voxels()) v *= a;
    for (auto& v : ea.voxels()) v *= a;
    const Volume lhs = diffuse(ya, t, ea, s);
    const Volume rhs = diffuse(y0, t, eps, s);
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      CHECK(lhs.voxels()[i] == doctest::Approx(a * rhs.voxels()[i]).epsilon(1e-5).scale(1.0));
    }
  }
}

TEST_CASE("diffuse variance matches one minus alpha bar") {
  const auto s = make_linear_schedule(200);
  const Dims d{25, 25, 25};
  const Volume zero(d, 0.0f);
  for (int t : {1, 20, 100, 200}) {
    const Volume eps = test::gaussian_volume(d, 1000 + t);
    const Volume out = diffuse(zero, t, eps, s);
    double sum = 0.0, sq = 0.0;
    for (float v : out.voxels()) {
      sum += v;
      sq += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(out.size());
    const double var = sq / n - (sum / n) * (sum / n);
    CHECK(std::abs(var / (1.0 - s.alpha_bar(t)) - 1.0) < 0.05);
  }
}

TEST_CASE("reverse step hand values") {
  const auto s = make_linear_schedule(4, 0.1, 0.4);
  const Dims d{2, 3, 4};
  const Volume y2(d, 1.37768f), eps_hat(d, 1.0f);
  const Volume out = reverse_step(y2, eps_hat, 2, s);
  const double expected = (1.0 / std::sqrt(0.8)) * (1.37768 - (0.2 / std::sqrt(0.28)));
  for (float v : out.voxels()) CHECK(v == doctest::Approx(expected).epsilon(1e-6));
  CHECK(expected == doctest::Approx(1.117717).epsilon(1e-6));

  const Volume y = test::random_volume(d, 9);
  const Volume rescaled = reverse_step(y, Volume(d, 0.0f), 3, s);
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(rescaled.voxels()[i] == doctest::Approx(y.voxels()[i] / std::sqrt(0.7)).epsilon(1e-6));
  }
}

TEST_CASE("reverse step adds sigma times z") {
  const auto s = make_linear_schedule(10, 0.01, 0.3);
  const Dims d{3, 3, 3};
  const Volume y = test::random_volume(d, 1), e = test::random_volume(d, 2), z = test::gaussian_volume(d, 3);
  const Volume with_z = reverse_step(y, e, 7, z, s);
  const Volume without = reverse_step(y, e, 7, s);
  CHECK(s.sigma(7) == std::sqrt(s.beta(7)));
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(with_z.voxels()[i] - without.voxels()[i] ==
          doctest::Approx(std::sqrt(s.beta(7)) * z.voxels()[i]).epsilon(1e-5).scale(1.0));
  }
  CHECK_THROWS_AS(reverse_step(y, e, 11, s), RangeError);
  CHECK_THROWS_AS(reverse_step(y, Volume(Dims{3, 3, 2}), 1, s), ShapeError);
}

TEST_CASE("round trip at t=1 over random volumes") {
  for (const auto& s : {make_linear_schedule(200), make_linear_schedule(4, 0.1, 0.4)}) {
    for (int trial = 0; trial < 100; ++trial) {
      const Dims d{6, 7, 8};
      const Volume y0 = test::random_volume(d, 500 + trial);
      const Volume eps = test::gaussian_volume(d, 900 + trial);
      const Volume back = reverse_step(diffuse(y0, 1, eps, s), eps, 1, s);
      CHECK(test::rel_l2_error(back, y0) <= 1e-5);
      CHECK(test::max_abs_error(back, y0) <= 1e-5 * test::max_abs(y0));
    }
  }
}
