#include "emscat/forward.hpp"

#include <cmath>

namespace emscat::forward {

ForwardSolver::ForwardSolver(const scene::PermittivityMap& map,
                             const GreensOperators& ops, const ArrayLayout& layout)
    : ops_(ops), layout_(layout) {
  const int n = ops.grid.cell_count();
  if (static_cast<int>(map.eps.size()) != n || map.grid.n_side != ops.grid.n_side)
    throw ValidationError("ForwardSolver: map and operators use different grids");
  em::validate_layout(layout, ops.grid);

  chi_.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) chi_[static_cast<size_t>(i)] = map.eps[static_cast<size_t>(i)] - 1.0;

  CMat system = -ops.g_domain;
  for (int c = 0; c < n; ++c) system.col(c) *= chi_[static_cast<size_t>(c)];
  system.diagonal().array() += 1.0;

  lu_.compute(system);
  const auto& u_diag = lu_.matrixLU().diagonal();
  double dmin = std::numeric_limits<double>::infinity(), dmax = 0.0;
  for (Eigen::Index i = 0; i < u_diag.size(); ++i) {
    const double a = std::abs(u_diag(i));
    dmin = std::min(dmin, a);
    dmax = std::max(dmax, a);
  }
  rcond_ = (dmax > 0.0) ? dmin / dmax : 0.0;
  if (!(rcond_ > 1e-14))
    throw SolverError("forward solve: state matrix numerically singular (rcond~" +
                      std::to_string(rcond_) + ")");
}

CVec ForwardSolver::solve_total(const CVec& e_incident_domain) const {
  if (e_incident_domain.size() != ops_.grid.cell_count())
    throw ValidationError("solve_total: incident vector length mismatch");
  return lu_.solve(e_incident_domain);
}

FieldSolution ForwardSolver::solve(int tx_index) const {
  if (tx_index < 0 || tx_index >= layout_.tx_count())
    throw ValidationError("solve: tx index out of range");
  const auto& tx = layout_.tx_positions[static_cast<size_t>(tx_index)];

  FieldSolution sol;
  sol.tx_index = tx_index;
  const CVec e_inc = em::incident_field(tx, ops_.grid.cell_centers, ops_.params);
  sol.e_total = lu_.solve(e_inc);
  const int n = ops_.grid.cell_count();
  sol.j_induced.resize(n);
  for (int i = 0; i < n; ++i) sol.j_induced(i) = chi_[static_cast<size_t>(i)] * sol.e_total(i);
  sol.e_scattered_rx = ops_.g_scatter * sol.j_induced;
  sol.e_incident_rx = em::incident_field(tx, layout_.rx_positions, ops_.params);
  return sol;
}

std::vector<FieldSolution> ForwardSolver::solve_all() const {
  std::vector<FieldSolution> out;
  out.reserve(static_cast<size_t>(layout_.tx_count()));
  for (int p = 0; p < layout_.tx_count(); ++p) out.push_back(solve(p));
  return out;
}

FieldSolution solve_total_field(const scene::PermittivityMap& map,
                                const GreensOperators& ops,
                                const ArrayLayout& layout, int tx_index) {
  return ForwardSolver(map, ops, layout).solve(tx_index);
}

CVec scattered_field_at(const std::vector<scene::Point>& points,
                        const scene::Grid& grid, const WaveParams& params,
                        const CVec& j_induced) {
  if (j_induced.size() != grid.cell_count())
    throw ValidationError("scattered_field_at: current vector length mismatch");
  CVec out = CVec::Zero(static_cast<Eigen::Index>(points.size()));
  const double dx = grid.spacing();
  for (size_t q = 0; q < points.size(); ++q) {
    cplx acc{0.0, 0.0};
    for (int n = 0; n < grid.cell_count(); ++n) {
      const double rho = std::hypot(grid.cell_centers[static_cast<size_t>(n)][0] - points[q][0],
                                    grid.cell_centers[static_cast<size_t>(n)][1] - points[q][1]);
      acc += em::greens_coupling_offdiag(rho, dx, params) * j_induced(n);
    }
    out(static_cast<Eigen::Index>(q)) = acc;
  }
  return out;
}

const MeasurementRecord& MeasurementSet::at(int tx, int rx, int frame) const {
  const size_t idx =
      (static_cast<size_t>(tx) * layout.rx_count() + rx) * frames_per_pair + frame;
  return records[idx];
}

MeasurementSet simulate(const scene::PermittivityMap& map, const ArrayLayout& layout,
                        const WaveParams& params, const SimulateOptions& opt, Rng& rng) {
  if (opt.frames < 1) throw ValidationError("simulate: frames must be >= 1");
  if (opt.noise_level < 0.0)
    throw ValidationError("simulate: noise_level must be >= 0");
  if (opt.agc_set.empty()) throw ValidationError("simulate: agc_set must not be empty");
  for (double g : opt.agc_set)
    if (!(g > 0.0)) throw ValidationError("simulate: AGC gains must be > 0");

  std::optional<GreensOperators> own_ops;
  const GreensOperators* ops = opt.ops;
  if (ops == nullptr) {
    own_ops = em::assemble_greens(map.grid, layout, params, opt.threads);
    ops = &*own_ops;
  }
  ForwardSolver solver(map, *ops, layout);

  const int m = layout.tx_count(), n = layout.rx_count();

  // clean gain-scaled fields, tx-major; AGC deliberately excluded from the
  // noise reference so the SNR does not depend on the per-frame draw
  CMat clean(n, m);
  for (int p = 0; p < m; ++p) {
    const FieldSolution sol = solver.solve(p);
    const double gtx = em::db_to_amplitude(layout.tx_gain_db[static_cast<size_t>(p)]);
    for (int q = 0; q < n; ++q) {
      const double grx = em::db_to_amplitude(layout.rx_gain_db[static_cast<size_t>(q)]);
      clean(q, p) = gtx * grx * (sol.e_incident_rx(q) + sol.e_scattered_rx(q));
    }
  }
  const double rms = std::sqrt(clean.array().abs2().sum() / (m * n));
  const double sigma = opt.noise_level * rms / std::sqrt(2.0);

  MeasurementSet set;
  set.layout = layout;
  set.params = params;
  set.frames_per_pair = opt.frames;
  set.phaseless = opt.phaseless;
  set.noise_level = opt.noise_level;
  set.seed = rng.seed();
  set.records.reserve(static_cast<size_t>(m) * n * opt.frames);

  for (int p = 0; p < m; ++p)
    for (int q = 0; q < n; ++q)
      for (int t = 0; t < opt.frames; ++t) {
        MeasurementRecord rec;
        rec.tx = p;
        rec.rx = q;
        rec.frame = t;
        rec.g_agc = opt.agc_set[static_cast<size_t>(
            opt.agc_set.size() == 1 ? 0 : rng.uniform_index(opt.agc_set.size()))];
        cplx r = rec.g_agc * clean(q, p);
        if (sigma > 0.0) r += cplx{sigma * rng.gauss(), sigma * rng.gauss()};
        rec.amplitude = std::abs(r);
        if (!opt.phaseless) rec.value = r;
        set.records.push_back(rec);
      }
  return set;
}

double reciprocity_check(const scene::PermittivityMap& map, const WaveParams& params,
                         const scene::Point& pos_a, const scene::Point& pos_b) {
  if (!scene::outside_domain(map.grid, pos_a) || !scene::outside_domain(map.grid, pos_b))
    throw ValidationError("reciprocity_check: probe positions must lie outside the domain");

  ArrayLayout lay;
  lay.tx_positions = {pos_a, pos_b};
  lay.rx_positions = {pos_b};
  lay.tx_gain_db = {0.0, 0.0};
  lay.rx_gain_db = {0.0};
  const GreensOperators ops = em::assemble_greens(map.grid, lay, params);
  ForwardSolver solver(map, ops, lay);

  auto total_at = [&](const scene::Point& src, const scene::Point& probe) {
    const CVec e_inc = em::incident_field(src, ops.grid.cell_centers, params);
    const CVec e_tot = solver.solve_total(e_inc);
    CVec j(ops.grid.cell_count());
    for (int i = 0; i < ops.grid.cell_count(); ++i)
      j(i) = (map.eps[static_cast<size_t>(i)] - 1.0) * e_tot(i);
    const cplx e_s = scattered_field_at({probe}, ops.grid, params, j)(0);
    return em::incident_field_at(src, probe, params) + e_s;
  };

  const cplx t_ab = total_at(pos_a, pos_b);
  const cplx t_ba = total_at(pos_b, pos_a);
  const double denom = std::max(std::abs(t_ab), std::abs(t_ba));
  return denom > 0.0 ? std::abs(t_ab - t_ba) / denom : 0.0;
}

CVec mean_complex_by_pair(const MeasurementSet& set) {
  if (set.phaseless)
    throw CapabilityError("mean_complex_by_pair: measurement set is phaseless");
  const int m = set.layout.tx_count(), n = set.layout.rx_count();
  CVec out = CVec::Zero(static_cast<Eigen::Index>(m) * n);
  for (int p = 0; p < m; ++p)
    for (int q = 0; q < n; ++q) {
      cplx acc{0.0, 0.0};
      for (int t = 0; t < set.frames_per_pair; ++t) {
        const auto& rec = set.at(p, q, t);
        acc += rec.value / rec.g_agc;
      }
      out(static_cast<Eigen::Index>(p) * n + q) = acc / double(set.frames_per_pair);
    }
  return out;
}

}  // namespace emscat::forward
