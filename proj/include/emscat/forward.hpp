#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "emscat/em.hpp"
#include "emscat/scene.hpp"

namespace emscat::forward {

using em::ArrayLayout;
using em::CMat;
using em::CVec;
using em::GreensOperators;
using em::WaveParams;

struct FieldSolution {
  int tx_index = 0;
  CVec e_total;        // E_t on the domain cells
  CVec j_induced;      // J = (eps - 1) .* E_t
  CVec e_scattered_rx; // E_s at the receivers
  CVec e_incident_rx;  // E_i at the receivers
};

// Dense method-of-moments solve of (I - G_D diag(chi)) E_t = E_i by LU with
// partial pivoting. The factorization depends only on the scene, so one
// solver instance serves every transmitter.
class ForwardSolver {
 public:
  ForwardSolver(const scene::PermittivityMap& map, const GreensOperators& ops,
                const ArrayLayout& layout);

  FieldSolution solve(int tx_index) const;
  std::vector<FieldSolution> solve_all() const;

  // Total field for an explicit incident excitation on the domain cells.
  CVec solve_total(const CVec& e_incident_domain) const;

  // 1 / (condition estimate) from the LU factors; ~0 means singular.
  double rcond_estimate() const { return rcond_; }

 private:
  const GreensOperators& ops_;
  const ArrayLayout& layout_;
  std::vector<cplx> chi_;  // eps - 1 per cell
  Eigen::PartialPivLU<CMat> lu_;
  double rcond_ = 0.0;
};

FieldSolution solve_total_field(const scene::PermittivityMap& map,
                                const GreensOperators& ops,
                                const ArrayLayout& layout, int tx_index);

// Radiates a domain current to arbitrary exterior points via the same
// cell-integrated coupling used for G_s.
CVec scattered_field_at(const std::vector<scene::Point>& points,
                        const scene::Grid& grid, const WaveParams& params,
                        const CVec& j_induced);

struct MeasurementRecord {
  int tx = 0;
  int rx = 0;
  int frame = 0;
  double g_agc = 1.0;
  double amplitude = 0.0;  // |R|
  cplx value{0.0, 0.0};    // R, phase mode only
};

struct MeasurementSet {
  std::vector<MeasurementRecord> records;  // (tx, rx, frame) ordered
  ArrayLayout layout;
  WaveParams params{2.4e9};
  int frames_per_pair = 1;
  bool phaseless = true;
  double noise_level = 0.0;
  std::uint64_t seed = 0;

  int pair_count() const { return layout.tx_count() * layout.rx_count(); }
  // records are stored tx-major, rx-minor, frame-innermost
  const MeasurementRecord& at(int tx, int rx, int frame) const;
};

struct SimulateOptions {
  double noise_level = 0.0;              // sigma = noise * RMS(|clean|)/sqrt(2)
  int frames = 100;
  bool phaseless = true;
  std::vector<double> agc_set = {0.5, 1.0, 2.0};
  const GreensOperators* ops = nullptr;  // reuse preassembled operators
  int threads = 1;
};

// Receiver chain of the measurement model: per (tx, rx, frame),
// R = G_agc * g_tx * g_rx * (E_i^R + E_s) + N with complex circular Gaussian
// N. G_agc is drawn per record from agc_set and stored in the record.
MeasurementSet simulate(const scene::PermittivityMap& map, const ArrayLayout& layout,
                        const WaveParams& params, const SimulateOptions& opt, Rng& rng);

// Relative total-field mismatch between source-at-a/probe-at-b and the
// swapped configuration; a physics sanity harness.
double reciprocity_check(const scene::PermittivityMap& map, const WaveParams& params,
                         const scene::Point& pos_a, const scene::Point& pos_b);

// Per-pair complex frame mean of R / g_agc; requires phase-mode data.
// Ordered tx-major. Raw measurement reduction for the phase-data consumers.
CVec mean_complex_by_pair(const MeasurementSet& set);

}  // namespace emscat::forward
