#include <doctest.h>

#include <cmath>

#include "emscat/metrics.hpp"

using namespace emscat;

namespace {

scene::PermittivityMap constant_map(int n, double value) {
  scene::PermittivityMap m;
  m.grid = scene::build_grid(n, 0.32);
  m.eps.assign(static_cast<size_t>(n) * n, cplx{value, 0.0});
  return m;
}

scene::PermittivityMap austria_map(int n, double eps_r) {
  return scene::rasterize(scene::austria_preset(0.32, {eps_r, 0.0}),
                          scene::build_grid(n, 0.32));
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("rrmse: zero at equality, one at doubling, closed form for air vs austria") {
  const auto truth = austria_map(32, 1.6);
  CHECK(metrics::rrmse(truth, truth) == 0.0);

  scene::PermittivityMap twice = truth;
  for (auto& e : twice.eps) e *= 2.0;
  CHECK(metrics::rrmse(twice, truth) == doctest::Approx(1.0).epsilon(1e-12));

  // est == air: direct summation over the rasterized mask
  const auto air = constant_map(32, 1.0);
  double num = 0.0, den = 0.0;
  for (const auto& e : truth.eps) {
    if (e.real() > 1.0) num += 0.36;  // |1 - 1.6|^2
    den += std::norm(e);
  }
  CHECK(metrics::rrmse(air, truth) ==
        doctest::Approx(std::sqrt(num) / std::sqrt(den)).epsilon(1e-12));

  CHECK_THROWS_AS(metrics::rrmse(constant_map(16, 1.0), truth), ValidationError);
}

TEST_CASE("psnr: cap, uniform-error arithmetic, grid checks") {
  const auto truth = austria_map(16, 2.0);
  CHECK(metrics::psnr(truth, truth) == 99.0);

  scene::PermittivityMap est = truth;
  for (auto& e : est.eps) e += cplx{0.1, 0.0};
  // MAX = 2, MSE = 0.01 -> 10 log10(400)
  CHECK(metrics::psnr(est, truth) == doctest::Approx(26.0206).epsilon(1e-4));

  CHECK_THROWS_AS(metrics::psnr(constant_map(8, 1.0), truth), ValidationError);
}

TEST_CASE("ssim: identity, degenerate variance, fixed-range symmetry") {
  const auto truth = austria_map(32, 1.6);
  CHECK(metrics::ssim(truth, truth) == doctest::Approx(1.0).epsilon(1e-12));

  // constant vs constant: luminance-only closed form with the range floor
  const auto a = constant_map(16, 1.2);
  const auto b = constant_map(16, 1.7);
  const double L = 1e-6;  // truth has zero range -> floor
  const double c1 = (0.01 * L) * (0.01 * L);
  const double expect = (2.0 * 1.2 * 1.7 + c1) / (1.2 * 1.2 + 1.7 * 1.7 + c1);
  CHECK(metrics::ssim(a, b) == doctest::Approx(expect).epsilon(1e-9));

  const auto est = austria_map(32, 1.4);
  const double fixed_range = 0.6;
  CHECK(metrics::ssim_with_range(est, truth, fixed_range) ==
        doctest::Approx(metrics::ssim_with_range(truth, est, fixed_range))
            .epsilon(1e-12));

  CHECK_THROWS_AS(metrics::ssim(constant_map(8, 1.0), constant_map(8, 1.0)),
                  ValidationError);  // grid smaller than the window
}

TEST_CASE("ssim responds to structural damage") {
  const auto truth = austria_map(32, 1.6);
  scene::PermittivityMap scrambled = truth;
  Rng rng(4);
  for (auto& e : scrambled.eps) e = cplx{1.0 + 0.6 * rng.uniform01(), 0.0};
  CHECK(metrics::ssim(scrambled, truth) < 0.3);
  CHECK(metrics::ssim(truth, truth) > metrics::ssim(scrambled, truth));
}

TEST_CASE("property: norm-ratio-adjusted triangle inequality for rrmse") {
  Rng rng(9);
  for (int trial = 0; trial < 25; ++trial) {
    auto a = constant_map(12, 1.0);
    auto b = constant_map(12, 1.0);
    auto c = constant_map(12, 1.0);
    double nb = 0.0, nc = 0.0;
    for (size_t i = 0; i < a.eps.size(); ++i) {
      a.eps[i] = cplx{1.0 + rng.uniform01(), 0.0};
      b.eps[i] = cplx{1.0 + rng.uniform01(), 0.0};
      c.eps[i] = cplx{1.0 + rng.uniform01(), 0.0};
      nb += std::norm(b.eps[i]);
      nc += std::norm(c.eps[i]);
    }
    const double lhs = metrics::rrmse(a, c);
    const double rhs = metrics::rrmse(a, b) * std::sqrt(nb) / std::sqrt(nc) +
                       metrics::rrmse(b, c);
    CHECK(lhs <= rhs + 1e-12);
  }
}

TEST_SUITE_END();
