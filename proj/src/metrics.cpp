#include "emscat/metrics.hpp"

#include <cmath>
#include <vector>

namespace emscat::metrics {

namespace {

void require_same_grid(const scene::PermittivityMap& a, const scene::PermittivityMap& b) {
  if (a.grid.n_side != b.grid.n_side || a.eps.size() != b.eps.size())
    throw ValidationError("metrics: permittivity maps use different grids");
}

// mirror index with edge repeat: ..., 1, 0 | 0, 1, ..., n-1 | n-1, n-2, ...
int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -1 - i;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

}  // namespace

double rrmse(const scene::PermittivityMap& est, const scene::PermittivityMap& truth) {
  require_same_grid(est, truth);
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < truth.eps.size(); ++i) {
    num += std::norm(est.eps[i] - truth.eps[i]);
    den += std::norm(truth.eps[i]);
  }
  if (den <= 0.0) throw ValidationError("rrmse: truth map has zero norm");
  return std::sqrt(num) / std::sqrt(den);
}

double psnr(const scene::PermittivityMap& est, const scene::PermittivityMap& truth) {
  require_same_grid(est, truth);
  double mx = -std::numeric_limits<double>::infinity();
  double mse = 0.0;
  for (size_t i = 0; i < truth.eps.size(); ++i) {
    mx = std::max(mx, truth.eps[i].real());
    const double d = est.eps[i].real() - truth.eps[i].real();
    mse += d * d;
  }
  mse /= static_cast<double>(truth.eps.size());
  if (mse < 1e-20) return 99.0;
  return 10.0 * std::log10(mx * mx / mse);
}

double ssim_with_range(const scene::PermittivityMap& a, const scene::PermittivityMap& b,
                       double dynamic_range) {
  require_same_grid(a, b);
  const int n = a.grid.n_side;
  constexpr int kWin = 11;
  constexpr int kHalf = kWin / 2;
  constexpr double kSigma = 1.5;
  if (n < kWin)
    throw ValidationError("ssim: grid smaller than the 11x11 window");

  double w[kWin][kWin];
  double wsum = 0.0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      const double di = i - kHalf, dj = j - kHalf;
      w[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * kSigma * kSigma));
      wsum += w[i][j];
    }
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) w[i][j] /= wsum;

  const double L = std::max(dynamic_range, 1e-6);
  const double c1 = (0.01 * L) * (0.01 * L);
  const double c2 = (0.03 * L) * (0.03 * L);

  auto px = [&](const scene::PermittivityMap& m, int r, int c) {
    return m.eps[static_cast<size_t>(reflect(r, n)) * n + reflect(c, n)].real();
  };

  double acc = 0.0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      double mu_a = 0.0, mu_b = 0.0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          mu_a += w[i][j] * px(a, r + i - kHalf, c + j - kHalf);
          mu_b += w[i][j] * px(b, r + i - kHalf, c + j - kHalf);
        }
      double var_a = 0.0, var_b = 0.0, cov = 0.0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          const double da = px(a, r + i - kHalf, c + j - kHalf) - mu_a;
          const double db = px(b, r + i - kHalf, c + j - kHalf) - mu_b;
          var_a += w[i][j] * da * da;
          var_b += w[i][j] * db * db;
          cov += w[i][j] * da * db;
        }
      acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
             ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    }
  return acc / (static_cast<double>(n) * n);
}

double ssim(const scene::PermittivityMap& est, const scene::PermittivityMap& truth) {
  require_same_grid(est, truth);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& e : truth.eps) {
    lo = std::min(lo, e.real());
    hi = std::max(hi, e.real());
  }
  return ssim_with_range(est, truth, hi - lo);
}

}  // namespace emscat::metrics
