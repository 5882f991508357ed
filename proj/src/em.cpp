#include "emscat/em.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <thread>

namespace emscat::em {

ArrayLayout ring_layout(int m, double r_tx, int n, double r_rx,
                        double tx_gain_db, double rx_gain_db) {
  if (m < 1 || n < 1)
    throw ValidationError("ring_layout: need at least one tx and one rx");
  if (!(r_tx > 0.0) || !(r_rx > 0.0))
    throw ValidationError("ring_layout: radii must be > 0");
  ArrayLayout lay;
  lay.tx_positions.reserve(static_cast<size_t>(m));
  lay.rx_positions.reserve(static_cast<size_t>(n));
  for (int i = 0; i < m; ++i) {
    const double th = 2.0 * kPi * i / m;
    lay.tx_positions.push_back({r_tx * std::cos(th), r_tx * std::sin(th)});
  }
  for (int i = 0; i < n; ++i) {
    const double th = 2.0 * kPi * i / n;
    lay.rx_positions.push_back({r_rx * std::cos(th), r_rx * std::sin(th)});
  }
  lay.tx_gain_db.assign(static_cast<size_t>(m), tx_gain_db);
  lay.rx_gain_db.assign(static_cast<size_t>(n), rx_gain_db);
  return lay;
}

void validate_layout(const ArrayLayout& layout, const scene::Grid& grid) {
  if (layout.tx_count() < 1 || layout.rx_count() < 1)
    throw ValidationError("layout: need at least one tx and one rx");
  if (layout.tx_gain_db.size() != layout.tx_positions.size() ||
      layout.rx_gain_db.size() != layout.rx_positions.size())
    throw ValidationError("layout: gain list lengths must match antenna counts");
  for (const auto& p : layout.tx_positions)
    if (!scene::outside_domain(grid, p))
      throw ValidationError("layout: transmitter inside the sensing domain");
  for (const auto& p : layout.rx_positions)
    if (!scene::outside_domain(grid, p))
      throw ValidationError("layout: receiver inside the sensing domain");
}

namespace {

// |E_i| = 1 at the 1 m reference distance.
double incident_amplitude_scale(const WaveParams& params) {
  return 4.0 / std::abs(hankel2(0, params.k0 * 1.0));
}

}  // namespace

cplx incident_field_at(const scene::Point& tx, const scene::Point& p,
                       const WaveParams& params) {
  const double dx = p[0] - tx[0], dy = p[1] - tx[1];
  const double r = std::hypot(dx, dy);
  if (r < 1e-12)
    throw ValidationError("incident_field: evaluation point coincides with the source");
  const double scale = incident_amplitude_scale(params);
  return scale * cplx{0.0, -0.25} * hankel2(0, params.k0 * r);
}

CVec incident_field(const scene::Point& tx, const std::vector<scene::Point>& points,
                    const WaveParams& params) {
  const double scale = incident_amplitude_scale(params);
  CVec out(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    const double r = std::hypot(points[i][0] - tx[0], points[i][1] - tx[1]);
    if (r < 1e-12)
      throw ValidationError("incident_field: evaluation point coincides with the source");
    out(static_cast<Eigen::Index>(i)) =
        scale * cplx{0.0, -0.25} * hankel2(0, params.k0 * r);
  }
  return out;
}

cplx greens_coupling_offdiag(double rho, double cell_dx, const WaveParams& params) {
  const double a = cell_dx / std::sqrt(kPi);  // equal-area circle radius
  const double k0 = params.k0;
  return cplx{0.0, -0.5 * kPi * k0 * a} * bessel(BesselKind::J1, k0 * a) *
         hankel2(0, k0 * rho);
}

cplx greens_coupling_self(double cell_dx, const WaveParams& params) {
  const double a = cell_dx / std::sqrt(kPi);
  const double k0 = params.k0;
  return cplx{0.0, -0.5} * (kPi * k0 * a * hankel2(1, k0 * a) - cplx{0.0, 2.0});
}

GreensOperators assemble_greens(const scene::Grid& grid, const ArrayLayout& layout,
                                const WaveParams& params, int threads) {
  for (const auto& p : layout.rx_positions)
    if (!scene::outside_domain(grid, p))
      throw ValidationError("assemble_greens: receiver inside the sensing domain");

  const int n_cells = grid.cell_count();
  const int n_rx = layout.rx_count();
  const double dx = grid.spacing();

  GreensOperators ops{CMat(n_cells, n_cells), CMat(n_rx, n_cells), grid, params};

  const cplx self = greens_coupling_self(dx, params);
  const auto& centers = grid.cell_centers;

  auto fill_domain_rows = [&](int row_begin, int row_end) {
    for (int m = row_begin; m < row_end; ++m) {
      ops.g_domain(m, m) = self;
      for (int n = m + 1; n < n_cells; ++n) {
        const double rho = std::hypot(centers[n][0] - centers[m][0],
                                      centers[n][1] - centers[m][1]);
        const cplx g = greens_coupling_offdiag(rho, dx, params);
        ops.g_domain(m, n) = g;
        ops.g_domain(n, m) = g;  // kernel depends on |r_m - r_n| only
      }
    }
  };

  if (threads <= 1 || n_cells < 256) {
    fill_domain_rows(0, n_cells);
  } else {
    // disjoint row ranges keep the result identical to the serial fill
    std::vector<std::thread> pool;
    const int chunk = (n_cells + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int b = t * chunk, e = std::min(n_cells, b + chunk);
      if (b >= e) break;
      pool.emplace_back(fill_domain_rows, b, e);
    }
    for (auto& th : pool) th.join();
  }

  for (int q = 0; q < n_rx; ++q) {
    const auto& rq = layout.rx_positions[static_cast<size_t>(q)];
    for (int n = 0; n < n_cells; ++n) {
      const double rho = std::hypot(centers[n][0] - rq[0], centers[n][1] - rq[1]);
      ops.g_scatter(q, n) = greens_coupling_offdiag(rho, dx, params);
    }
  }
  return ops;
}

namespace {

constexpr char kGreensMagic[8] = {'E', 'M', 'S', 'G', 'R', 'N', '0', '1'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void put_matrix(std::ostream& os, const CMat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      put<double>(os, m(r, c).real());
      put<double>(os, m(r, c).imag());
    }
}
void get_matrix(std::istream& is, CMat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double re = get<double>(is);
      const double im = get<double>(is);
      m(r, c) = cplx{re, im};
    }
}

}  // namespace

void save_greens(const GreensOperators& ops, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_greens: cannot open " + path);
  os.write(kGreensMagic, sizeof(kGreensMagic));
  put<std::int32_t>(os, ops.grid.n_side);
  put<std::int32_t>(os, ops.grid.cell_count());
  put<std::int32_t>(os, static_cast<std::int32_t>(ops.g_scatter.rows()));
  put<double>(os, ops.params.frequency_hz);
  put<double>(os, ops.grid.side_length_m);
  put_matrix(os, ops.g_domain);
  put_matrix(os, ops.g_scatter);
  if (!os) throw IoError("save_greens: write failed for " + path);
}

GreensOperators load_greens(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_greens: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kGreensMagic, sizeof(magic)) != 0)
    throw IoError("load_greens: bad magic in " + path);
  const auto n_side = get<std::int32_t>(is);
  const auto n_cells = get<std::int32_t>(is);
  const auto n_rx = get<std::int32_t>(is);
  const double freq = get<double>(is);
  const double side = get<double>(is);
  if (n_side < 1 || n_cells != n_side * n_side || n_rx < 1)
    throw IoError("load_greens: inconsistent header in " + path);
  GreensOperators ops{CMat(n_cells, n_cells), CMat(n_rx, n_cells),
                      scene::build_grid(n_side, side), WaveParams(freq)};
  get_matrix(is, ops.g_domain);
  get_matrix(is, ops.g_scatter);
  if (!is) throw IoError("load_greens: truncated file " + path);
  return ops;
}

}  // namespace emscat::em
