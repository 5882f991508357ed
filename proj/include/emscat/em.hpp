#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "emscat/common.hpp"
#include "emscat/scene.hpp"

namespace emscat::em {

using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

enum class BesselKind { J0, J1, Y0, Y1 };

// Cylinder Bessel functions of integer order 0/1. Power series below x=12,
// Hankel asymptotic expansion above; absolute error < 1e-9 on (0, 1e3].
double bessel(BesselKind kind, double x);

// Outgoing-wave Hankel function H^(2)_nu(x) = J_nu(x) - j*Y_nu(x) under the
// e^{+jwt} time convention. order must be 0 or 1; x > 0.
cplx hankel2(int order, double x);

struct WaveParams {
  double frequency_hz;
  double k0;  // rad/m

  static constexpr const char* time_convention = "e^{+jwt}";

  explicit WaveParams(double freq_hz)
      : frequency_hz(freq_hz), k0(2.0 * kPi * freq_hz / kSpeedOfLight) {
    if (!(freq_hz > 0.0)) throw ValidationError("WaveParams: frequency must be > 0");
  }
  double wavelength() const { return 2.0 * kPi / k0; }
};

struct ArrayLayout {
  std::vector<scene::Point> tx_positions;
  std::vector<scene::Point> rx_positions;
  std::vector<double> tx_gain_db;  // one per transmitter
  std::vector<double> rx_gain_db;  // one per receiver

  int tx_count() const { return static_cast<int>(tx_positions.size()); }
  int rx_count() const { return static_cast<int>(rx_positions.size()); }
};

// m transmitters uniform on a circle of radius r_tx, n receivers uniform on a
// circle of radius r_rx, both centered on the domain; constant per-antenna
// gains in dB. Antenna 0 sits on the +x axis, the rest go counterclockwise.
ArrayLayout ring_layout(int m, double r_tx, int n, double r_rx,
                        double tx_gain_db, double rx_gain_db);

// Throws unless every antenna lies strictly outside the grid's domain.
void validate_layout(const ArrayLayout& layout, const scene::Grid& grid);

// dB amplitude gain -> field factor 10^(dB/20).
inline double db_to_amplitude(double db) { return std::pow(10.0, db / 20.0); }

// Line-source incident field E_i(p) = A * (-j/4) * H0^(2)(k0 |p - tx|) with A
// chosen so |E_i| = 1 at 1 m from the source. Antenna gains are applied in
// the measurement model, not here.
cplx incident_field_at(const scene::Point& tx, const scene::Point& p,
                       const WaveParams& params);
CVec incident_field(const scene::Point& tx, const std::vector<scene::Point>& points,
                    const WaveParams& params);

// Discrete Green's operators of the 2D TM volume integral equation.
// g_domain(m,n) realizes k0^2 * Int_{cell n} G(r_m, r') dr' with
// G(r,r') = -(j/4) H0^(2)(k0 |r - r'|), collapsed to the equivalent-circle
// closed forms (circle radius a = dx/sqrt(pi)).
struct GreensOperators {
  CMat g_domain;   // N x N
  CMat g_scatter;  // n_rx x N
  scene::Grid grid;
  WaveParams params;
};

GreensOperators assemble_greens(const scene::Grid& grid, const ArrayLayout& layout,
                                const WaveParams& params, int threads = 1);

// Closed-form coupling used by the assembly; exposed for oracles and for
// radiating induced currents to arbitrary exterior points.
cplx greens_coupling_offdiag(double rho, double cell_dx, const WaveParams& params);
cplx greens_coupling_self(double cell_dx, const WaveParams& params);

// Binary cache of assembled operators (little-endian, versioned magic).
void save_greens(const GreensOperators& ops, const std::string& path);
GreensOperators load_greens(const std::string& path);

}  // namespace emscat::em
