#pragma once

#include <limits>
#include <optional>
#include <string>

#include "emscat/em.hpp"
#include "emscat/io.hpp"
#include "emscat/nn.hpp"
#include "emscat/scene.hpp"

namespace emscat::rinn {

enum class InputMode { Coordinate, Latent };

struct RinnConfig {
  int n_side = 32;
  double side_length_m = 0.32;
  double jitter_sigma_m = -1.0;  // < 0 selects spacing/4
  int mc_samples = 4;            // S; 32 reproduces the full-scale batch
  double eps_scale = 1.5;        // eps_hat = 1 + eps_scale * sigmoid(raw)
  double lambda1 = 1.0;
  double lambda2_value = 1.0;
  long long lambda2_switch_step = 5000;  // 0 before, lambda2_value from here on
  ad::LrSchedule lr{5e-4, 0.95, 1000, 1e-5};
  long long max_steps = 20000;
  double plateau_rel_tol = 1e-5;
  int plateau_window = 500;
  std::uint64_t seed = 0;
  InputMode input_mode = InputMode::Coordinate;
  int latent_dim = 20;
  int hidden_width = 128;  // 4-layer MLPs, 128-wide hidden layers
  bool phase_mode = false;
  // optional early target for the total loss; NaN disables it
  double target_loss = std::numeric_limits<double>::quiet_NaN();
  std::string abort_checkpoint_path;  // diagnostic dump on non-finite loss
  // optional observer: called with the current center-grid estimate every
  // eval_every steps (0 disables); evaluation is pure and does not perturb
  // the training stream
  long long eval_every = 0;
  std::function<void(long long step, const scene::PermittivityMap&)> eval_hook;

  double jitter_sigma(double spacing) const {
    return jitter_sigma_m >= 0.0 ? jitter_sigma_m : 0.25 * spacing;
  }
  std::string to_json() const;
};

// Preprocessed measurements, tx-major. Exactly one of the two fields is used
// depending on the mode.
struct MeasuredData {
  bool phase_mode = false;
  Eigen::VectorXd amplitude;  // ||E_t||-hat, length m*n (phaseless)
  em::CVec scattered;         // E_s-hat, length m*n (phase mode)
};

struct ReconstructionResult {
  scene::PermittivityMap eps_estimate;
  std::vector<io::LossRow> loss_history;
  std::vector<std::pair<std::string, double>> metrics;  // vs ground truth if given
  std::string config_snapshot;
  double wall_seconds = 0.0;
  long long steps_run = 0;
  bool plateaued = false;
  bool reached_target = false;
};

// --- network heads ---------------------------------------------------------

// eps_hat = 1 + eps_scale * net(coords); coords are normalized to [-1,1]^2 by
// the domain half-width before entering the net. Returns [N, 1].
ad::Tensor predict_epsilon(ad::Tape& tape, const ad::Mlp& net,
                           const std::vector<scene::Point>& coords, double half_width,
                           double eps_scale);

// Per-transmitter current prediction from (x~, y~, Re E_i, Im E_i) features;
// returns [N, 2] (real and imaginary channels). e_incident holds E_i at the
// same coordinates.
ad::Tensor predict_currents(ad::Tape& tape, const ad::Mlp& net,
                            const std::vector<scene::Point>& coords,
                            const em::CVec& e_incident, double half_width);

// --- losses -----------------------------------------------------------------
// Constant tensors of the physics operators and data, shared across steps.
struct LossTerms {
  ad::Tensor gd_re, gd_im;    // [N, N]
  ad::Tensor gs_re, gs_im;    // [n_rx, N]
  ad::Tensor ei_dom_re, ei_dom_im;  // [N, m]
  ad::Tensor ei_rx_re, ei_rx_im;    // [n_rx, m]
  ad::Tensor meas_amp;              // [n_rx, m] (phaseless)
  ad::Tensor meas_es_re, meas_es_im;  // [n_rx, m] (phase mode)
  bool phase_mode = false;
  Eigen::Index n_cells = 0, n_rx = 0, n_tx = 0;
};

LossTerms make_loss_terms(const em::GreensOperators& ops, const em::ArrayLayout& layout,
                          const MeasuredData& data);

// L_sa: per transmitter, || |G_s mu_J + E_i^R| - ||E_t||-hat ||_2, summed over
// transmitters; phase mode uses ||G_s mu_J - E_s-hat||_2 on the complex pair.
ad::Tensor scatter_loss(ad::Tape& tape, const LossTerms& lt, const ad::Tensor& j_re,
                        const ad::Tensor& j_im);

// L_D: sum_p || mu_J - (diag(mu_eps) - I)(E_i + G_D mu_J) ||_2.
ad::Tensor domain_loss(ad::Tape& tape, const LossTerms& lt, const ad::Tensor& j_re,
                       const ad::Tensor& j_im, const ad::Tensor& mu_eps);

// Anisotropic total variation of mu_eps on the n x n grid, normalized by N.
ad::Tensor tv_loss(ad::Tape& tape, const ad::Tensor& mu_eps, int n_side);

struct LossBreakdown {
  double l_sa = 0.0, l_d = 0.0, l_tv = 0.0;
  double total(double lambda1, double lambda2) const {
    return l_sa + lambda1 * l_d + lambda2 * l_tv;
  }
};

// Loss evaluation at externally supplied (eps, J) — ties the inverse engine
// to the forward solver in tests.
LossBreakdown eval_losses_at(const em::GreensOperators& ops, const em::ArrayLayout& layout,
                             const MeasuredData& data,
                             const std::vector<em::CVec>& j_per_tx,
                             const Eigen::VectorXd& eps_real);

// --- training ----------------------------------------------------------------
ReconstructionResult train(const MeasuredData& data, const em::GreensOperators& ops,
                           const em::ArrayLayout& layout, const RinnConfig& config,
                           const scene::PermittivityMap* ground_truth = nullptr);

}  // namespace emscat::rinn
