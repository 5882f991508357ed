#include "oracles/bessel_oracle.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace emscat_oracle {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct GaussRule {
  std::vector<double> nodes;  // on [-1, 1]
  std::vector<double> weights;
};

// Gauss-Legendre nodes by Newton iteration on P_n (standard gauleg).
GaussRule gauss_legendre(int n) {
  GaussRule rule;
  rule.nodes.resize(static_cast<size_t>(n));
  rule.weights.resize(static_cast<size_t>(n));
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      const double z1 = z;
      z = z1 - p0 / pp;
      if (std::abs(z - z1) < 1e-15) break;
    }
    rule.nodes[static_cast<size_t>(i)] = -z;
    rule.nodes[static_cast<size_t>(n - 1 - i)] = z;
    const double w = 2.0 / ((1.0 - z * z) * pp * pp);
    rule.weights[static_cast<size_t>(i)] = w;
    rule.weights[static_cast<size_t>(n - 1 - i)] = w;
  }
  return rule;
}

const GaussRule& rule12() {
  static const GaussRule r = gauss_legendre(12);
  return r;
}

template <typename F>
double integrate(F f, double a, double b, int panels) {
  const GaussRule& r = rule12();
  const double h = (b - a) / panels;
  double acc = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = a + (p + 0.5) * h;
    for (size_t k = 0; k < r.nodes.size(); ++k)
      acc += r.weights[k] * f(mid + 0.5 * h * r.nodes[k]);
  }
  return acc * 0.5 * h;
}

int oscillatory_panels(double x) {
  return std::max(12, static_cast<int>(std::ceil(x / 2.0)) + 4);
}

}  // namespace

double bessel_j(int n, double x) {
  if (n < 0 || x < 0.0) throw std::invalid_argument("bessel_j oracle: bad arguments");
  if (x == 0.0) return n == 0 ? 1.0 : 0.0;
  const double v =
      integrate([n, x](double t) { return std::cos(n * t - x * std::sin(t)); }, 0.0,
                kPi, oscillatory_panels(x));
  return v / kPi;
}

double bessel_y(int n, double x) {
  if ((n != 0 && n != 1) || !(x > 0.0))
    throw std::invalid_argument("bessel_y oracle: bad arguments");
  const double first =
      integrate([n, x](double t) { return std::sin(x * std::sin(t) - n * t); }, 0.0,
                kPi, oscillatory_panels(x));
  // e^{-x sinh t} is negligible once x sinh t - n t > ~750
  const double t_max = std::asinh(760.0 / x) + 1.0;
  const double second = integrate(
      [n, x](double t) {
        // [e^{n t} + (-1)^n e^{-n t}] e^{-x sinh t} without overflow
        const double lead_exp = -x * std::sinh(t) + n * t;
        const double lead = lead_exp < -745.0 ? 0.0 : std::exp(lead_exp);
        if (n == 0) return 2.0 * lead;  // e^0 + e^0, same term twice
        const double minor_exp = -x * std::sinh(t) - n * t;
        const double minor = minor_exp < -745.0 ? 0.0 : std::exp(minor_exp);
        return lead - minor;  // n = 1: (-1)^1 e^{-t}
      },
      0.0, t_max, 64);
  return (first - second) / kPi;
}

std::complex<double> hankel2(int n, double x) {
  return {bessel_j(n, x), -bessel_y(n, x)};
}

}  // namespace emscat_oracle
