#pragma once

#include <array>
#include <complex>

// Sub-sampled midpoint quadrature of k0^2 * G over a square cell, with
// G(r, r') = -(j/4) H0^(2)(k0 |r - r'|). The self entry excludes a small disc
// around the singularity and adds its closed-form contribution. Hankel values
// come from the integral-representation oracle, keeping this reference fully
// independent of the production closed forms.
namespace emscat_oracle {

std::complex<double> greens_entry_quadrature(const std::array<double, 2>& target,
                                             const std::array<double, 2>& source_center,
                                             double cell_dx, double k0,
                                             int subsamples);

std::complex<double> greens_self_quadrature(double cell_dx, double k0, int subsamples);

}  // namespace emscat_oracle
