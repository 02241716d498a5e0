#include <cmath>
#include <random>

#include "doctest.h"
#include "madm/error.hpp"
#include "madm/metrics.hpp"
#include "metric_oracles.hpp"
#include "test_util.hpp"

using namespace madm;

TEST_CASE("rmse and nmse against direct summation") {
  const Dims d{5, 5, 5};
  const Volume a = test::random_volume(d, 1);
  CHECK(rmse(a, a) == 0.0);
  CHECK(nmse(a, a) == 0.0);
  Volume shifted = a;
  for (auto& v : shifted.voxels()) v += 0.25f;
  CHECK(rmse(shifted, a) == doctest::Approx(0.25).epsilon(1e-6));

  for (int trial = 0; trial < 20; ++trial) {
    const Dims dd{5u + trial % 12, 6, 7};
    const Volume p = test::random_volume(dd, 10 + trial, 0.0f, 4.0f);
    const Volume r = test::random_volume(dd, 50 + trial, 0.0f, 4.0f);
    CHECK(std::abs(rmse(p, r) - oracle::rmse(p, r)) <= 1e-7);
    CHECK(std::abs(nmse(p, r) - oracle::nmse(p, r)) <= 1e-7);
  }
  CHECK_THROWS_AS(rmse(a, Volume(Dims{5, 5, 4})), ShapeError);
}

TEST_CASE("rmse is unchanged by a common shift") {
  const Dims d{8, 8, 8};
  const Volume p = test::random_volume(d, 3), r = test::random_volume(d, 4);
  Volume ps = p, rs = r;
  for (auto& v : ps.voxels()) v += 2.0f;
  for (auto& v : rs.voxels()) v += 2.0f;
  CHECK(rmse(ps, rs) == doctest::Approx(rmse(p, r)).epsilon(1e-5));
}

TEST_CASE("psnr identities") {
  const Dims d{6, 6, 6};
  const Volume r = test::random_volume(d, 5, 0.0f, 3.0f);
  CHECK(std::isinf(psnr(r, r)));
  CHECK(format_psnr(psnr(r, r)) == "identical");

  Volume off = r;
  const double pk = peak(r);
  for (auto& v : off.voxels()) v += static_cast<float>(pk);
  CHECK(psnr(off, r) == doctest::Approx(0.0).epsilon(1e-5).scale(1.0));

  Volume e1 = r, e2 = r;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const float n = (i % 2 ? 1.0f : -1.0f) * 0.1f;
    e1.voxels()[i] += n;
    e2.voxels()[i] += n / 2;
  }
  CHECK(psnr(e2, r) - psnr(e1, r) == doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-4));
  CHECK(20.0 * std::log10(2.0) == doctest::Approx(6.0206).epsilon(1e-4));

  for (int trial = 0; trial < 20; ++trial) {
    const Volume p = test::random_volume(Dims{5, 9, 16}, 70 + trial, 0.0f, 5.0f);
    const Volume q = test::random_volume(Dims{5, 9, 16}, 90 + trial, 0.0f, 5.0f);
    CHECK(std::abs(psnr(p, q) - 20.0 * std::log10(peak(q) / rmse(p, q))) <= 1e-9);
    CHECK(std::abs(psnr(p, q) - oracle::psnr(p, q)) <= 1e-9);
  }
}

TEST_CASE("ssim against a sliding-window oracle") {
  const Dims d{5, 5, 5};
  const Volume a = test::random_volume(d, 7, 0.0f, 2.0f);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  for (int trial = 0; trial < 10; ++trial) {
    const Dims dd{5u + trial, 5u + (trial * 3) % 12, 5u + (trial * 7) % 12};
    const Volume p = test::random_volume(dd, 100 + trial, 0.0f, 2.0f);
    Volume r = test::random_volume(dd, 200 + trial, 0.0f, 2.0f);
    for (std::size_t i = 0; i < r.size(); ++i) r.voxels()[i] = 0.6f * r.voxels()[i] + 0.5f * p.voxels()[i];
    CHECK(std::abs(ssim(p, r) - oracle::ssim(p, r, peak(r))) <= 1e-6);
    CHECK(std::abs(ssim(p, r, 2.0) - ssim(r, p, 2.0)) <= 1e-12);
  }
}

TEST_CASE("ssim of a negated zero-mean field is negative") {
  const Dims d{10, 10, 10};
  Volume r(d);
  for (std::size_t a = 0; a < d.d1; ++a)
    for (std::size_t b = 0; b < d.d2; ++b)
      for (std::size_t c = 0; c < d.d3; ++c) r(a, b, c) = (a + b + c) % 2 ? 1.0f : -1.0f;
  Volume n = r;
  for (auto& v : n.voxels()) v = -v;
  CHECK(ssim(n, r) < 0.0);
}

TEST_CASE("lesion mean error against the masked-mean oracle") {
  const Dims d{8, 8, 8};
  const Volume r = test::random_volume(d, 31, 0.0f, 5.0f);
  Volume m1(d, 0.0f), m2(d, 0.0f);
  for (std::size_t i = 0; i < 40; ++i) m1.voxels()[i] = 1.0f;
  for (std::size_t i = 100; i < 130; ++i) m2.voxels()[i] = 1.0f;
  const auto zero = lesion_mean_error(r, r, {m1, m2});
  CHECK(zero == std::vector<double>{0.0, 0.0});

  Volume p = r;
  for (std::size_t i = 0; i < 40; ++i) p.voxels()[i] += 0.5f;
  const auto e = lesion_mean_error(p, r, {m1, m2});
  CHECK(e[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(e[1] == 0.0);

  for (int trial = 0; trial < 10; ++trial) {
    const Volume pp = test::random_volume(d, 300 + trial, 0.0f, 5.0f);
    const auto got = lesion_mean_error(pp, r, {m1, m2});
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(std::abs(got[k] - oracle::masked_mean_error(pp, r, k == 0 ? m1 : m2)) <= 1e-7);
    }
  }
  CHECK_THROWS_AS(lesion_mean_error(p, r, {Volume(d, 0.0f)}), RangeError);
}

TEST_CASE("eval report aggregates and csv round trip") {
  const Dims d{6, 6, 6};
  const Volume ref = test::random_volume(d, 1, 0.0f, 3.0f);
  Volume mask(d, 0.0f);
  mask.voxels()[5] = 1.0f;
  EvalReport report;
  report.add("s0", 0.05, "copy", 0, ref, ref, {mask});
  report.add("s0", 0.05, "noisy", 0, test::random_volume(d, 2, 0.0f, 3.0f), ref, {mask});
  CHECK(report.rows().size() == 2);
  CHECK(report.lesion_rows().size() == 2);
  CHECK(report.rows()[0].rmse == 0.0);

  const std::string csv = report.volume_csv({"config_hash abc", "master_seed 7"});
  CHECK(csv.rfind("# config_hash abc\n# master_seed 7\n", 0) == 0);
  CHECK(csv.find("identical") != std::string::npos);
  const EvalReport back = EvalReport::parse_volume_csv(csv);
  REQUIRE(back.rows().size() == 2);
  CHECK(std::isinf(back.rows()[0].psnr_db));
  CHECK(back.rows()[1].rmse == doctest::Approx(report.rows()[1].rmse).epsilon(1e-7));

  const auto agg = report.aggregate();
  CHECK(agg["copy"]["psnr_db"]["mean"] == "identical");
  CHECK(agg["noisy"]["rmse"]["n"] == 1);
}

TEST_CASE("summary statistics") {
  const auto s = summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(s.median == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
}
