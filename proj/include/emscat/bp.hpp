#pragma once

#include <vector>

#include "emscat/em.hpp"
#include "emscat/forward.hpp"
#include "emscat/preprocess.hpp"

namespace emscat::bp {

struct BpResult {
  scene::PermittivityMap eps_estimate;
  std::vector<bool> degenerate;  // cells where the contrast ratio was 0/0
};

// Classical back-projection inversion: per transmitter, J_p = gamma_p G_s^H e_p
// with the residual-minimizing scalar gamma_p, then E_t = E_i + G_D J and the
// contrast ratio chi_i = sum_p J_i conj(E_t,i) / sum_p |E_t,i|^2, clamped to
// physical permittivity (Re >= 1, imaginary part dropped).
BpResult bp_reconstruct(const std::vector<em::CVec>& e_scattered_per_tx,
                        const em::GreensOperators& ops,
                        const std::vector<em::CVec>& e_incident_per_tx);

// Complex scattered-field estimate per (tx, rx) from phase-mode measurements:
// frame mean of R/g_agc divided by the calibrated pair gain, minus E_i^R.
// Throws CapabilityError on phaseless data.
std::vector<em::CVec> scattered_from_measurements(const forward::MeasurementSet& set,
                                                  const preprocess::Vec& gains,
                                                  const em::ArrayLayout& layout,
                                                  const em::WaveParams& params);

}  // namespace emscat::bp
