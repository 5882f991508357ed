#include <cmath>

#include "emscat/em.hpp"

namespace emscat::em {

namespace {

constexpr double kEulerGamma = 0.57721566490153286;
constexpr double kSeriesAsymptoticSplit = 12.0;

// Ascending series, x <= 12. Cancellation is bounded by the largest term
// (~4e3 at x=12), keeping absolute error near 4e-13.
void series_j0_y0(double x, double* j0, double* y0) {
  const double q = 0.25 * x * x;
  double term = 1.0, sj = 1.0;
  double hk = 0.0, sy = 0.0;
  for (int k = 1; k < 80; ++k) {
    term *= -q / (static_cast<double>(k) * k);
    sj += term;
    hk += 1.0 / k;
    sy += -term * hk;  // (-1)^{k+1} H_k q^k/(k!)^2
    if (std::abs(term) < 1e-18 * (std::abs(sj) + 1.0)) break;
  }
  *j0 = sj;
  if (y0) *y0 = (2.0 / kPi) * ((std::log(0.5 * x) + kEulerGamma) * sj + sy);
}

void series_j1_y1(double x, double* j1, double* y1) {
  const double q = 0.25 * x * x;
  double term = 1.0, sj = 1.0;     // sum q^k/(k!(k+1)!), times x/2 later
  double hk = 0.0, hk1 = 1.0;      // H_k and H_{k+1}
  double sy = term * (hk + hk1);   // (-1)^k (H_k + H_{k+1}) q^k/(k!(k+1)!)
  for (int k = 1; k < 80; ++k) {
    term *= -q / (static_cast<double>(k) * (k + 1.0));
    sj += term;
    hk += 1.0 / k;
    hk1 += 1.0 / (k + 1.0);
    sy += term * (hk + hk1);
    if (std::abs(term) < 1e-18 * (std::abs(sj) + 1.0)) break;
  }
  *j1 = 0.5 * x * sj;
  if (y1)
    *y1 = (2.0 / kPi) * (std::log(0.5 * x) + kEulerGamma) * (0.5 * x * sj) -
          2.0 / (kPi * x) - (0.5 * x / kPi) * sy;
}

// Hankel asymptotic expansion for x >= 12; a_m(nu) built by recurrence,
// truncated at m = 15 (first omitted term < 6e-11 at the branch point).
void asymptotic_jy(int nu, double x, double* j, double* y) {
  const double mu = 4.0 * nu * nu;
  double a = 1.0;  // a_m(nu)
  double p = 1.0, q = 0.0;
  const double inv_x = 1.0 / x;
  double xm = 1.0;  // x^{-m}
  for (int m = 1; m <= 15; ++m) {
    const double tm = 2.0 * m - 1.0;
    a *= (mu - tm * tm) / (8.0 * m);
    xm *= inv_x;
    if (m % 2 == 1) {
      // contributes to Q with sign (-1)^k, k = (m-1)/2
      q += (((m - 1) / 2) % 2 == 0 ? 1.0 : -1.0) * a * xm;
    } else {
      p += ((m / 2) % 2 == 0 ? 1.0 : -1.0) * a * xm;
    }
  }
  const double omega = x - (0.5 * nu + 0.25) * kPi;
  const double c = std::cos(omega), s = std::sin(omega);
  const double scale = std::sqrt(2.0 / (kPi * x));
  *j = scale * (p * c - q * s);
  if (y) *y = scale * (p * s + q * c);
}

}  // namespace

double bessel(BesselKind kind, double x) {
  switch (kind) {
    case BesselKind::J0: {
      if (x < 0.0) throw ValidationError("bessel: J0 requires x >= 0");
      if (x == 0.0) return 1.0;
      double j;
      if (x <= kSeriesAsymptoticSplit) {
        series_j0_y0(x, &j, nullptr);
      } else {
        asymptotic_jy(0, x, &j, nullptr);
      }
      return j;
    }
    case BesselKind::J1: {
      if (x < 0.0) throw ValidationError("bessel: J1 requires x >= 0");
      if (x == 0.0) return 0.0;
      double j;
      if (x <= kSeriesAsymptoticSplit) {
        series_j1_y1(x, &j, nullptr);
      } else {
        asymptotic_jy(1, x, &j, nullptr);
      }
      return j;
    }
    case BesselKind::Y0: {
      if (!(x > 0.0))
        throw ValidationError("bessel: Y0 requires x > 0 (log singularity)");
      double j, y;
      if (x <= kSeriesAsymptoticSplit) {
        series_j0_y0(x, &j, &y);
      } else {
        asymptotic_jy(0, x, &j, &y);
      }
      return y;
    }
    case BesselKind::Y1: {
      if (!(x > 0.0))
        throw ValidationError("bessel: Y1 requires x > 0 (pole at 0)");
      double j, y;
      if (x <= kSeriesAsymptoticSplit) {
        series_j1_y1(x, &j, &y);
      } else {
        asymptotic_jy(1, x, &j, &y);
      }
      return y;
    }
  }
  throw ValidationError("bessel: unknown kind");
}

cplx hankel2(int order, double x) {
  if (!(x > 0.0)) throw ValidationError("hankel2: requires x > 0");
  if (order != 0 && order != 1)
    throw ValidationError("hankel2: order must be 0 or 1");
  double j, y;
  if (x <= kSeriesAsymptoticSplit) {
    if (order == 0)
      series_j0_y0(x, &j, &y);
    else
      series_j1_y1(x, &j, &y);
  } else {
    asymptotic_jy(order, x, &j, &y);
  }
  return {j, -y};
}

}  // namespace emscat::em
