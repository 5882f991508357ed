#include <doctest.h>

#include <cmath>

#include "emscat/preprocess.hpp"
#include "emscat/scene.hpp"

using namespace emscat;

namespace {

// hand-built single-pair measurement set
forward::MeasurementSet one_pair_set(const std::vector<double>& amps,
                                     const std::vector<double>& agc) {
  forward::MeasurementSet set;
  set.layout = em::ring_layout(1, 1.0, 1, 0.5, 0.0, 0.0);
  set.frames_per_pair = static_cast<int>(amps.size());
  set.phaseless = true;
  for (size_t t = 0; t < amps.size(); ++t) {
    forward::MeasurementRecord rec;
    rec.tx = 0;
    rec.rx = 0;
    rec.frame = static_cast<int>(t);
    rec.g_agc = agc.empty() ? 1.0 : agc[t];
    rec.amplitude = amps[t];
    set.records.push_back(rec);
  }
  return set;
}

struct Pipeline {
  scene::Grid grid = scene::build_grid(12, 0.32);
  em::WaveParams params{2.4e9};
  em::ArrayLayout layout = em::ring_layout(4, 1.0, 6, 0.5, 3.0, 3.0);
  em::GreensOperators ops = em::assemble_greens(grid, layout, params);
};

}  // namespace

TEST_SUITE_BEGIN("preprocess");

TEST_CASE("expectation filter: constants, outliers, AGC division") {
  const auto constant = preprocess::expectation_filter(one_pair_set({2.5, 2.5, 2.5}, {}));
  CHECK(constant.amplitude(0) == 2.5);
  CHECK(constant.sample_std(0) == 0.0);
  CHECK_FALSE(constant.fallback[0]);

  // the 100 lies far beyond 3 MAD of the median and is rejected
  const auto outlier =
      preprocess::expectation_filter(one_pair_set({1.0, 1.0, 1.0, 1.0, 100.0}, {}));
  CHECK(outlier.amplitude(0) == 1.0);

  // raw amplitude 2x recorded under AGC gain 2 recovers x
  const auto agc = preprocess::expectation_filter(
      one_pair_set({6.0, 6.0, 6.0}, {2.0, 2.0, 2.0}));
  CHECK(agc.amplitude(0) == 3.0);
}

TEST_CASE("calibration: identity at 0 dB, 10^(6/20) at 3+3 dB") {
  Pipeline pl;
  const scene::PermittivityMap air = scene::rasterize({}, pl.grid);

  forward::SimulateOptions opt;
  opt.noise_level = 0.0;
  opt.frames = 4;
  opt.ops = &pl.ops;
  Rng rng(3);
  const auto set = forward::simulate(air, pl.layout, pl.params, opt, rng);
  const preprocess::Vec gains = preprocess::calibrate_gain(set, pl.params, pl.layout);
  const double expect = std::pow(10.0, 6.0 / 20.0);
  for (Eigen::Index i = 0; i < gains.size(); ++i)
    CHECK(gains(i) == doctest::Approx(expect).epsilon(1e-6));

  em::ArrayLayout flat = em::ring_layout(4, 1.0, 6, 0.5, 0.0, 0.0);
  const em::GreensOperators ops0 = em::assemble_greens(pl.grid, flat, pl.params);
  forward::SimulateOptions opt0 = opt;
  opt0.ops = &ops0;
  Rng rng0(3);
  const auto set0 = forward::simulate(air, flat, pl.params, opt0, rng0);
  const preprocess::Vec unity = preprocess::calibrate_gain(set0, pl.params, flat);
  for (Eigen::Index i = 0; i < unity.size(); ++i)
    CHECK(unity(i) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("calibration under noise: within 3% with 100 frames") {
  Pipeline pl;
  const scene::PermittivityMap air = scene::rasterize({}, pl.grid);
  forward::SimulateOptions opt;
  opt.noise_level = 0.10;
  opt.frames = 100;
  opt.ops = &pl.ops;
  Rng rng(17);
  const auto set = forward::simulate(air, pl.layout, pl.params, opt, rng);
  const preprocess::Vec gains = preprocess::calibrate_gain(set, pl.params, pl.layout);
  const double expect = std::pow(10.0, 6.0 / 20.0);
  for (Eigen::Index i = 0; i < gains.size(); ++i)
    CHECK(std::abs(gains(i) - expect) / expect < 0.03);
}

TEST_CASE("normalize: identity gains and validation") {
  preprocess::Vec amps(3);
  amps << 1.0, 2.0, 3.0;
  preprocess::Vec ones = preprocess::Vec::Ones(3);
  const preprocess::Vec out = preprocess::normalize(amps, ones);
  CHECK(out == amps);

  preprocess::Vec bad = ones;
  bad(1) = 0.0;
  CHECK_THROWS_AS(preprocess::normalize(amps, bad), ValidationError);
  preprocess::Vec shorter(2);
  shorter << 1.0, 1.0;
  CHECK_THROWS_AS(preprocess::normalize(amps, shorter), ValidationError);
}

TEST_CASE("pipeline inverse: calibrate then normalize recovers |E_i + E_s|") {
  Pipeline pl;
  const scene::PermittivityMap air = scene::rasterize({}, pl.grid);
  forward::SimulateOptions opt;
  opt.noise_level = 0.0;
  opt.frames = 10;
  opt.ops = &pl.ops;

  Rng r_cal(21);
  const auto empty_set = forward::simulate(air, pl.layout, pl.params, opt, r_cal);
  const preprocess::Vec gains = preprocess::calibrate_gain(empty_set, pl.params, pl.layout);

  SUBCASE("no target: recovers |E_i^R|") {
    const auto filtered = preprocess::expectation_filter(empty_set);
    const preprocess::Vec et = preprocess::normalize(filtered.amplitude, gains);
    for (int p = 0; p < pl.layout.tx_count(); ++p) {
      const em::CVec ei = em::incident_field(
          pl.layout.tx_positions[static_cast<size_t>(p)], pl.layout.rx_positions,
          pl.params);
      for (int q = 0; q < pl.layout.rx_count(); ++q) {
        const double expect = std::abs(ei(q));
        CHECK(std::abs(et(p * pl.layout.rx_count() + q) - expect) / expect < 1e-9);
      }
    }
  }

  SUBCASE("with target: recovers |E_i^R + E_s|, invariant to the AGC draw") {
    const scene::PermittivityMap map =
        scene::rasterize(scene::austria_preset(0.32, {1.5, 0.0}), pl.grid);
    forward::ForwardSolver solver(map, pl.ops, pl.layout);

    forward::SimulateOptions opt_a = opt;
    opt_a.agc_set = {0.5, 1.0, 2.0};
    forward::SimulateOptions opt_b = opt;
    opt_b.agc_set = {0.25, 4.0};
    Rng ra(5), rb(6);
    const auto set_a = forward::simulate(map, pl.layout, pl.params, opt_a, ra);
    const auto set_b = forward::simulate(map, pl.layout, pl.params, opt_b, rb);
    const preprocess::Vec et_a =
        preprocess::normalize(preprocess::expectation_filter(set_a).amplitude, gains);
    const preprocess::Vec et_b =
        preprocess::normalize(preprocess::expectation_filter(set_b).amplitude, gains);

    for (int p = 0; p < pl.layout.tx_count(); ++p) {
      const auto sol = solver.solve(p);
      for (int q = 0; q < pl.layout.rx_count(); ++q) {
        const double expect = std::abs(sol.e_incident_rx(q) + sol.e_scattered_rx(q));
        const Eigen::Index idx = p * pl.layout.rx_count() + q;
        CHECK(std::abs(et_a(idx) - expect) / expect < 1e-9);
        CHECK(std::abs(et_b(idx) - expect) / expect < 1e-12);
      }
    }
  }
}

TEST_SUITE_END();
