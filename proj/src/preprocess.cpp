#include "emscat/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace emscat::preprocess {

namespace {

double median_inplace(std::vector<double>& v) {
  const size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  double med = v[n / 2];
  if (n % 2 == 0) {
    std::nth_element(v.begin(), v.begin() + n / 2 - 1, v.end());
    med = 0.5 * (med + v[n / 2 - 1]);
  }
  return med;
}

}  // namespace

FilteredAmplitudes expectation_filter(const forward::MeasurementSet& set) {
  if (set.frames_per_pair < 1)
    throw ValidationError("expectation_filter: frames_per_pair must be >= 1");
  const int m = set.layout.tx_count(), n = set.layout.rx_count();
  const int frames = set.frames_per_pair;

  FilteredAmplitudes out;
  out.amplitude = Vec::Zero(static_cast<Eigen::Index>(m) * n);
  out.sample_std = Vec::Zero(static_cast<Eigen::Index>(m) * n);
  out.fallback.assign(static_cast<size_t>(m) * n, false);

  std::vector<double> amps(static_cast<size_t>(frames));
  std::vector<double> dev(static_cast<size_t>(frames));
  for (int p = 0; p < m; ++p)
    for (int q = 0; q < n; ++q) {
      for (int t = 0; t < frames; ++t) {
        const auto& rec = set.at(p, q, t);
        if (!(rec.g_agc > 0.0))
          throw ValidationError("expectation_filter: non-positive AGC gain in record");
        amps[static_cast<size_t>(t)] = rec.amplitude / rec.g_agc;
      }
      std::vector<double> tmp = amps;
      const double med = median_inplace(tmp);
      for (int t = 0; t < frames; ++t)
        dev[static_cast<size_t>(t)] = std::abs(amps[static_cast<size_t>(t)] - med);
      tmp = dev;
      const double mad = median_inplace(tmp);

      double sum = 0.0, sum2 = 0.0;
      int kept = 0;
      for (int t = 0; t < frames; ++t) {
        if (dev[static_cast<size_t>(t)] <= 3.0 * mad) {
          sum += amps[static_cast<size_t>(t)];
          sum2 += amps[static_cast<size_t>(t)] * amps[static_cast<size_t>(t)];
          ++kept;
        }
      }
      const Eigen::Index idx = static_cast<Eigen::Index>(p) * n + q;
      if (kept == 0) {
        out.amplitude(idx) = med;
        out.fallback[static_cast<size_t>(idx)] = true;
      } else {
        const double mean = sum / kept;
        out.amplitude(idx) = mean;
        out.sample_std(idx) =
            kept > 1 ? std::sqrt(std::max(0.0, (sum2 - kept * mean * mean) / (kept - 1)))
                     : 0.0;
      }
    }
  return out;
}

Vec calibrate_gain(const forward::MeasurementSet& empty_scene_set,
                   const em::WaveParams& params, const em::ArrayLayout& layout) {
  const int m = layout.tx_count(), n = layout.rx_count();
  if (empty_scene_set.layout.tx_count() != m || empty_scene_set.layout.rx_count() != n)
    throw ValidationError("calibrate_gain: layout does not match the measurement set");

  Vec gains(static_cast<Eigen::Index>(m) * n);
  for (int p = 0; p < m; ++p) {
    const em::CVec ei =
        em::incident_field(layout.tx_positions[static_cast<size_t>(p)],
                           layout.rx_positions, params);
    for (int q = 0; q < n; ++q) {
      const double ref = std::abs(ei(q));
      if (ref < 1e-15)
        throw ValidationError("calibrate_gain: |E_i^R| vanishes for a pair (degenerate geometry)");
      double acc = 0.0;
      for (int t = 0; t < empty_scene_set.frames_per_pair; ++t) {
        const auto& rec = empty_scene_set.at(p, q, t);
        acc += rec.amplitude / rec.g_agc / ref;
      }
      gains(static_cast<Eigen::Index>(p) * n + q) = acc / empty_scene_set.frames_per_pair;
    }
  }
  return gains;
}

Vec normalize(const Vec& filtered_amplitudes, const Vec& gains) {
  if (filtered_amplitudes.size() != gains.size())
    throw ValidationError("normalize: amplitude/gain length mismatch");
  Vec out(filtered_amplitudes.size());
  for (Eigen::Index i = 0; i < gains.size(); ++i) {
    if (!(gains(i) > 0.0))
      throw ValidationError("normalize: gains must be > 0");
    out(i) = filtered_amplitudes(i) / gains(i);
  }
  return out;
}

}  // namespace emscat::preprocess
