#pragma once

#include <Eigen/Dense>
#include <vector>

#include "emscat/forward.hpp"

namespace emscat::preprocess {

using Vec = Eigen::VectorXd;

// Per-(tx,rx) amplitude estimates after AGC division, outlier rejection and
// frame averaging. Vectors are ordered tx-major, rx-minor (length m*n).
struct FilteredAmplitudes {
  Vec amplitude;        // mean of surviving frames
  Vec sample_std;       // per-pair std of survivors (quality weight)
  std::vector<bool> fallback;  // true when all frames were rejected
};

// Divide each frame amplitude by its recorded g_agc, drop frames farther than
// 3 median-absolute-deviations from the pair median, average the survivors.
// Pairs where everything was rejected fall back to the plain median and are
// flagged.
FilteredAmplitudes expectation_filter(const forward::MeasurementSet& set);

// Combined tx*rx amplitude gain per pair from an empty-scene measurement:
// g_pq = mean_t (|R|/g_agc) / |E_i^R(p,q)|.
Vec calibrate_gain(const forward::MeasurementSet& empty_scene_set,
                   const em::WaveParams& params, const em::ArrayLayout& layout);

// ||E_t||-hat per pair: filtered amplitude divided by the calibrated gain.
Vec normalize(const Vec& filtered_amplitudes, const Vec& gains);

}  // namespace emscat::preprocess
