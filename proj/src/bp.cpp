#include "emscat/bp.hpp"

namespace emscat::bp {

BpResult bp_reconstruct(const std::vector<em::CVec>& e_scattered_per_tx,
                        const em::GreensOperators& ops,
                        const std::vector<em::CVec>& e_incident_per_tx) {
  const int n_cells = ops.grid.cell_count();
  const int m = static_cast<int>(e_scattered_per_tx.size());
  if (m < 1) throw ValidationError("bp_reconstruct: no transmitters");
  if (e_incident_per_tx.size() != e_scattered_per_tx.size())
    throw ValidationError("bp_reconstruct: incident/scattered list length mismatch");

  em::CVec num = em::CVec::Zero(n_cells);
  Eigen::VectorXd den = Eigen::VectorXd::Zero(n_cells);

  for (int p = 0; p < m; ++p) {
    const em::CVec& es = e_scattered_per_tx[static_cast<size_t>(p)];
    if (es.size() != ops.g_scatter.rows())
      throw ValidationError("bp_reconstruct: scattered vector length mismatch");
    if (e_incident_per_tx[static_cast<size_t>(p)].size() != n_cells)
      throw ValidationError("bp_reconstruct: incident vector length mismatch");

    const em::CVec backprop = ops.g_scatter.adjoint() * es;   // G_s^H e
    const em::CVec reradiated = ops.g_scatter * backprop;     // G_s G_s^H e
    const double rnorm2 = reradiated.squaredNorm();
    // gamma minimizes ||gamma * G_s G_s^H e - e||_2; exactly zero data keeps J = 0
    const cplx gamma = rnorm2 > 0.0 ? cplx(es.dot(reradiated) / rnorm2) : cplx(0.0, 0.0);

    const em::CVec j = gamma * backprop;
    const em::CVec e_total = e_incident_per_tx[static_cast<size_t>(p)] + ops.g_domain * j;
    for (int i = 0; i < n_cells; ++i) {
      num(i) += j(i) * std::conj(e_total(i));
      den(i) += std::norm(e_total(i));
    }
  }

  BpResult result;
  result.eps_estimate.grid = ops.grid;
  result.eps_estimate.eps.resize(static_cast<size_t>(n_cells));
  result.degenerate.assign(static_cast<size_t>(n_cells), false);
  for (int i = 0; i < n_cells; ++i) {
    cplx chi{0.0, 0.0};
    if (den(i) > 0.0) {
      chi = num(i) / den(i);
    } else {
      result.degenerate[static_cast<size_t>(i)] = true;
    }
    result.eps_estimate.eps[static_cast<size_t>(i)] =
        cplx{std::max(1.0, 1.0 + chi.real()), 0.0};
  }
  return result;
}

std::vector<em::CVec> scattered_from_measurements(const forward::MeasurementSet& set,
                                                  const preprocess::Vec& gains,
                                                  const em::ArrayLayout& layout,
                                                  const em::WaveParams& params) {
  if (set.phaseless)
    throw CapabilityError(
        "BP requires phase-mode measurements; phaseless data carries no scattered-field phase");
  const int m = layout.tx_count(), n = layout.rx_count();
  if (gains.size() != static_cast<Eigen::Index>(m) * n)
    throw ValidationError("scattered_from_measurements: gain vector length mismatch");

  const em::CVec totals = forward::mean_complex_by_pair(set);
  std::vector<em::CVec> out;
  out.reserve(static_cast<size_t>(m));
  for (int p = 0; p < m; ++p) {
    const em::CVec ei = em::incident_field(layout.tx_positions[static_cast<size_t>(p)],
                                           layout.rx_positions, params);
    em::CVec es(n);
    for (int q = 0; q < n; ++q) {
      const Eigen::Index idx = static_cast<Eigen::Index>(p) * n + q;
      if (!(gains(idx) > 0.0))
        throw ValidationError("scattered_from_measurements: non-positive gain");
      es(q) = totals(idx) / gains(idx) - ei(q);
    }
    out.push_back(std::move(es));
  }
  return out;
}

}  // namespace emscat::bp
