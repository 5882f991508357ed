#include "emscat/rinn.hpp"

#include <chrono>
#include <cmath>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <json.hpp>

#include "emscat/metrics.hpp"

namespace emscat::rinn {

using ad::Act;
using ad::Index;
using ad::Mlp;
using ad::Tape;
using ad::Tensor;

std::string RinnConfig::to_json() const {
  nlohmann::json j;
  j["n_side"] = n_side;
  j["side_length_m"] = side_length_m;
  j["jitter_sigma_m"] = jitter_sigma(side_length_m / n_side);
  j["mc_samples"] = mc_samples;
  j["eps_scale"] = eps_scale;
  j["lambda1"] = lambda1;
  j["lambda2_value"] = lambda2_value;
  j["lambda2_switch_step"] = lambda2_switch_step;
  j["lr"] = {{"base", lr.base}, {"decay", lr.decay}, {"interval", lr.interval},
             {"floor", lr.floor}};
  j["max_steps"] = max_steps;
  j["plateau_rel_tol"] = plateau_rel_tol;
  j["plateau_window"] = plateau_window;
  j["seed"] = seed;
  j["input_mode"] = input_mode == InputMode::Coordinate ? "coordinate" : "latent";
  j["latent_dim"] = latent_dim;
  j["hidden_width"] = hidden_width;
  j["phase_mode"] = phase_mode;
  if (std::isfinite(target_loss)) j["target_loss"] = target_loss;
  return j.dump(2);
}

namespace {

Tensor const_from_cmat_real(const em::CMat& m) {
  std::vector<double> v(static_cast<size_t>(m.rows() * m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      v[static_cast<size_t>(r * m.cols() + c)] = m(r, c).real();
  return ad::constant({m.rows(), m.cols()}, std::move(v));
}

Tensor const_from_cmat_imag(const em::CMat& m) {
  std::vector<double> v(static_cast<size_t>(m.rows() * m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      v[static_cast<size_t>(r * m.cols() + c)] = m(r, c).imag();
  return ad::constant({m.rows(), m.cols()}, std::move(v));
}

}  // namespace

LossTerms make_loss_terms(const em::GreensOperators& ops, const em::ArrayLayout& layout,
                          const MeasuredData& data) {
  LossTerms lt;
  lt.n_cells = ops.grid.cell_count();
  lt.n_rx = ops.g_scatter.rows();
  lt.n_tx = layout.tx_count();
  lt.phase_mode = data.phase_mode;

  lt.gd_re = const_from_cmat_real(ops.g_domain);
  lt.gd_im = const_from_cmat_imag(ops.g_domain);
  lt.gs_re = const_from_cmat_real(ops.g_scatter);
  lt.gs_im = const_from_cmat_imag(ops.g_scatter);

  em::CMat ei_dom(lt.n_cells, lt.n_tx), ei_rx(lt.n_rx, lt.n_tx);
  for (Index p = 0; p < lt.n_tx; ++p) {
    ei_dom.col(p) = em::incident_field(layout.tx_positions[static_cast<size_t>(p)],
                                       ops.grid.cell_centers, ops.params);
    ei_rx.col(p) = em::incident_field(layout.tx_positions[static_cast<size_t>(p)],
                                      layout.rx_positions, ops.params);
  }
  lt.ei_dom_re = const_from_cmat_real(ei_dom);
  lt.ei_dom_im = const_from_cmat_imag(ei_dom);
  lt.ei_rx_re = const_from_cmat_real(ei_rx);
  lt.ei_rx_im = const_from_cmat_imag(ei_rx);

  if (data.phase_mode) {
    if (data.scattered.size() != lt.n_tx * lt.n_rx)
      throw ValidationError("make_loss_terms: scattered vector length mismatch");
    em::CMat es(lt.n_rx, lt.n_tx);
    for (Index p = 0; p < lt.n_tx; ++p)
      for (Index q = 0; q < lt.n_rx; ++q) es(q, p) = data.scattered(p * lt.n_rx + q);
    lt.meas_es_re = const_from_cmat_real(es);
    lt.meas_es_im = const_from_cmat_imag(es);
  } else {
    if (data.amplitude.size() != lt.n_tx * lt.n_rx)
      throw ValidationError("make_loss_terms: amplitude vector length mismatch");
    std::vector<double> amp(static_cast<size_t>(lt.n_rx * lt.n_tx));
    for (Index p = 0; p < lt.n_tx; ++p)
      for (Index q = 0; q < lt.n_rx; ++q)
        amp[static_cast<size_t>(q * lt.n_tx + p)] = data.amplitude(p * lt.n_rx + q);
    lt.meas_amp = ad::constant({lt.n_rx, lt.n_tx}, std::move(amp));
  }
  return lt;
}

Tensor scatter_loss(Tape& tape, const LossTerms& lt, const Tensor& j_re,
                    const Tensor& j_im) {
  // complex G_s * mu_J expanded into real matmuls
  Tensor s_re = tape.sub(tape.matmul(lt.gs_re, j_re), tape.matmul(lt.gs_im, j_im));
  Tensor s_im = tape.add(tape.matmul(lt.gs_re, j_im), tape.matmul(lt.gs_im, j_re));
  if (lt.phase_mode) {
    Tensor r_re = tape.sub(s_re, lt.meas_es_re);
    Tensor r_im = tape.sub(s_im, lt.meas_es_im);
    return tape.sum_col_norms(r_re, r_im);
  }
  Tensor t_re = tape.add(s_re, lt.ei_rx_re);
  Tensor t_im = tape.add(s_im, lt.ei_rx_im);
  Tensor amp = tape.hypot(t_re, t_im);
  Tensor resid = tape.sub(amp, lt.meas_amp);
  return tape.sum_col_norms(resid);
}

Tensor domain_loss(Tape& tape, const LossTerms& lt, const Tensor& j_re,
                   const Tensor& j_im, const Tensor& mu_eps) {
  Tensor d_re = tape.sub(tape.matmul(lt.gd_re, j_re), tape.matmul(lt.gd_im, j_im));
  Tensor d_im = tape.add(tape.matmul(lt.gd_re, j_im), tape.matmul(lt.gd_im, j_re));
  Tensor et_re = tape.add(d_re, lt.ei_dom_re);
  Tensor et_im = tape.add(d_im, lt.ei_dom_im);
  Tensor contrast = tape.affine(mu_eps, 1.0, -1.0);  // eps - 1, real
  Tensor w_re = tape.colvec_mul(et_re, contrast);
  Tensor w_im = tape.colvec_mul(et_im, contrast);
  Tensor r_re = tape.sub(j_re, w_re);
  Tensor r_im = tape.sub(j_im, w_im);
  return tape.sum_col_norms(r_re, r_im);
}

Tensor tv_loss(Tape& tape, const Tensor& mu_eps, int n_side) {
  return tape.tv2d(mu_eps, n_side);
}

Tensor predict_epsilon(Tape& tape, const Mlp& net, const std::vector<scene::Point>& coords,
                       double half_width, double eps_scale) {
  const Index n = static_cast<Index>(coords.size());
  std::vector<double> in(static_cast<size_t>(n) * 2);
  for (Index i = 0; i < n; ++i) {
    in[static_cast<size_t>(2 * i)] = coords[static_cast<size_t>(i)][0] / half_width;
    in[static_cast<size_t>(2 * i + 1)] = coords[static_cast<size_t>(i)][1] / half_width;
  }
  Tensor raw = net.forward(tape, ad::constant({n, 2}, std::move(in)));
  return tape.affine(raw, eps_scale, 1.0);
}

Tensor predict_currents(Tape& tape, const Mlp& net, const std::vector<scene::Point>& coords,
                        const em::CVec& e_incident, double half_width) {
  const Index n = static_cast<Index>(coords.size());
  if (e_incident.size() != n)
    throw ValidationError("predict_currents: incident-field length mismatch");
  std::vector<double> in(static_cast<size_t>(n) * 4);
  for (Index i = 0; i < n; ++i) {
    in[static_cast<size_t>(4 * i)] = coords[static_cast<size_t>(i)][0] / half_width;
    in[static_cast<size_t>(4 * i + 1)] = coords[static_cast<size_t>(i)][1] / half_width;
    in[static_cast<size_t>(4 * i + 2)] = e_incident(i).real();
    in[static_cast<size_t>(4 * i + 3)] = e_incident(i).imag();
  }
  return net.forward(tape, ad::constant({n, 4}, std::move(in)));
}

LossBreakdown eval_losses_at(const em::GreensOperators& ops, const em::ArrayLayout& layout,
                             const MeasuredData& data,
                             const std::vector<em::CVec>& j_per_tx,
                             const Eigen::VectorXd& eps_real) {
  const Index n_cells = ops.grid.cell_count();
  const Index m = layout.tx_count();
  if (static_cast<Index>(j_per_tx.size()) != m)
    throw ValidationError("eval_losses_at: one current vector per transmitter required");
  if (eps_real.size() != n_cells)
    throw ValidationError("eval_losses_at: permittivity length mismatch");

  std::vector<double> jre(static_cast<size_t>(n_cells * m)), jim(jre.size());
  for (Index p = 0; p < m; ++p)
    for (Index i = 0; i < n_cells; ++i) {
      jre[static_cast<size_t>(i * m + p)] = j_per_tx[static_cast<size_t>(p)](i).real();
      jim[static_cast<size_t>(i * m + p)] = j_per_tx[static_cast<size_t>(p)](i).imag();
    }
  std::vector<double> ev(eps_real.data(), eps_real.data() + eps_real.size());

  Tape tape;
  const LossTerms lt = make_loss_terms(ops, layout, data);
  Tensor j_re = ad::constant({n_cells, m}, std::move(jre));
  Tensor j_im = ad::constant({n_cells, m}, std::move(jim));
  Tensor mu_eps = ad::constant({n_cells, 1}, std::move(ev));
  LossBreakdown out;
  out.l_sa = scatter_loss(tape, lt, j_re, j_im).scalar();
  out.l_d = domain_loss(tape, lt, j_re, j_im, mu_eps).scalar();
  out.l_tv = tv_loss(tape, mu_eps, ops.grid.n_side).scalar();
  return out;
}

namespace {

struct Nets {
  Mlp eps_net, j_net;
};

void zero_head(Mlp& net) {
  auto& head = net.layers.back();
  std::fill(head.w->begin(), head.w->end(), 0.0);
  std::fill(head.b->begin(), head.b->end(), 0.0);
}

Nets build_nets(const RinnConfig& cfg, Index n_cells, Index m, Rng& rng) {
  const Index h = cfg.hidden_width;
  Nets nets;
  if (cfg.input_mode == InputMode::Coordinate) {
    nets.eps_net = Mlp::init({2, h, h, h, 1},
                             {Act::Relu, Act::Relu, Act::Relu, Act::Sigmoid}, rng);
    nets.j_net = Mlp::init({4, h, h, h, 2},
                           {Act::Relu, Act::Relu, Act::Relu, Act::Identity}, rng);
  } else {
    nets.eps_net = Mlp::init({cfg.latent_dim, h, h, h, n_cells},
                             {Act::Relu, Act::Relu, Act::Relu, Act::Sigmoid}, rng);
    nets.j_net = Mlp::init({cfg.latent_dim, h, h, h, 2 * n_cells * m},
                           {Act::Relu, Act::Relu, Act::Relu, Act::Identity}, rng);
  }
  // The eps head starts at zero so the initial estimate is the scale
  // midpoint 1 + s/2 exactly. The J head keeps its random init: a zero
  // current sits exactly on the sensing-domain norm's cone tip, where the
  // subgradient vanishes and the optimizer starts from a standstill.
  zero_head(nets.eps_net);
  return nets;
}

}  // namespace

ReconstructionResult train(const MeasuredData& data, const em::GreensOperators& ops,
                           const em::ArrayLayout& layout, const RinnConfig& config,
                           const scene::PermittivityMap* ground_truth) {
  const auto t_start = std::chrono::steady_clock::now();

#if defined(__GLIBC__)
  // the step loop churns through ~0.5 GB of large tensor buffers; keeping
  // them on the heap instead of per-allocation mmap/munmap avoids refaulting
  // the pages every step
  static const bool malloc_tuned = [] {
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, -1);
    return true;
  }();
  (void)malloc_tuned;
#endif

  if (config.n_side != ops.grid.n_side)
    throw ValidationError("train: config grid does not match the assembled operators");
  if (config.phase_mode != data.phase_mode)
    throw ValidationError("train: config/data phase mode mismatch");
  if (config.mc_samples < 1) throw ValidationError("train: mc_samples must be >= 1");

  const Index n_cells = ops.grid.cell_count();
  const Index m = layout.tx_count();
  const Index n_rx = layout.rx_count();
  const Index S = config.mc_samples;
  const double half_width = ops.grid.half_width();
  const double sigma = config.jitter_sigma(ops.grid.spacing());
  const double k0 = ops.params.k0;
  const bool coord_mode = config.input_mode == InputMode::Coordinate;

  Rng init_rng = Rng(config.seed).child(1);
  Rng jitter_rng = Rng(config.seed).child(2);
  Rng latent_rng = Rng(config.seed).child(3);

  Nets nets = build_nets(config, n_cells, m, init_rng);
  auto params = nets.eps_net.parameters();
  {
    auto jp = nets.j_net.parameters();
    params.insert(params.end(), jp.begin(), jp.end());
  }
  ad::Adam adam(params, config.lr);

  const LossTerms lt = make_loss_terms(ops, layout, data);

  // incident amplitude scale for jittered-coordinate features
  const double ei_scale = 4.0 / std::abs(em::hankel2(0, k0 * 1.0));

  ReconstructionResult result;
  result.config_snapshot = config.to_json();
  result.loss_history.reserve(static_cast<size_t>(config.max_steps));

  Tape tape;
  std::vector<double> eps_in(static_cast<size_t>(S * n_cells * 2));
  std::vector<double> j_in(coord_mode ? static_cast<size_t>(S * m * n_cells * 4) : 0);
  std::vector<double> z_in(coord_mode ? 0 : static_cast<size_t>(S * config.latent_dim));
  std::vector<scene::Point> coords;

  // center-grid estimate with the current parameters; shared by the observer
  // hook and the final output. Latent mode draws fresh samples from its own
  // stream so observation never advances the training draw.
  auto current_estimate = [&](Rng latent_eval) {
    scene::PermittivityMap est;
    est.grid = ops.grid;
    est.eps.resize(static_cast<size_t>(n_cells));
    Tape eval_tape;
    if (coord_mode) {
      Tensor eps_hat = predict_epsilon(eval_tape, nets.eps_net, ops.grid.cell_centers,
                                       half_width, config.eps_scale);
      for (Index i = 0; i < n_cells; ++i)
        est.eps[static_cast<size_t>(i)] =
            cplx{(*eps_hat.data)[static_cast<size_t>(i)], 0.0};
    } else {
      std::vector<double> z(static_cast<size_t>(S * config.latent_dim));
      for (auto& v : z) v = latent_eval.gauss();
      Tensor zt = ad::constant({S, config.latent_dim}, z);
      Tensor eps_hat = eval_tape.affine(nets.eps_net.forward(eval_tape, zt),
                                        config.eps_scale, 1.0);
      Tensor mu = eval_tape.block_mean(eps_hat, S);
      for (Index i = 0; i < n_cells; ++i)
        est.eps[static_cast<size_t>(i)] = cplx{(*mu.data)[static_cast<size_t>(i)], 0.0};
    }
    return est;
  };

  long long step = 0;
  for (; step < config.max_steps; ++step) {
    Tensor mu_eps, j_re, j_im;
    if (coord_mode) {
      for (Index s = 0; s < S; ++s) {
        coords = scene::jitter_coordinates(ops.grid, sigma, jitter_rng);
        for (Index i = 0; i < n_cells; ++i) {
          eps_in[static_cast<size_t>((s * n_cells + i) * 2)] =
              coords[static_cast<size_t>(i)][0] / half_width;
          eps_in[static_cast<size_t>((s * n_cells + i) * 2 + 1)] =
              coords[static_cast<size_t>(i)][1] / half_width;
        }
        for (Index p = 0; p < m; ++p) {
          const auto& tx = layout.tx_positions[static_cast<size_t>(p)];
          double* row = j_in.data() + static_cast<size_t>(((s * m + p) * n_cells) * 4);
          for (Index i = 0; i < n_cells; ++i) {
            const auto& c = coords[static_cast<size_t>(i)];
            const double r = std::hypot(c[0] - tx[0], c[1] - tx[1]);
            const cplx ei = ei_scale * cplx{0.0, -0.25} * em::hankel2(0, k0 * r);
            row[4 * i] = c[0] / half_width;
            row[4 * i + 1] = c[1] / half_width;
            row[4 * i + 2] = ei.real();
            row[4 * i + 3] = ei.imag();
          }
        }
      }
      Tensor eps_raw =
          nets.eps_net.forward(tape, ad::constant({S * n_cells, 2}, eps_in));
      Tensor eps_hat = tape.affine(eps_raw, config.eps_scale, 1.0);
      mu_eps = tape.block_mean(eps_hat, S);  // [N, 1]
      Tensor j_out = nets.j_net.forward(tape, ad::constant({S * m * n_cells, 4}, j_in));
      Tensor mu_j = tape.block_mean(j_out, S);  // [m*N, 2]
      j_re = tape.regroup_cols(mu_j, m, n_cells, 0);
      j_im = tape.regroup_cols(mu_j, m, n_cells, 1);
    } else {
      for (auto& z : z_in) z = latent_rng.gauss();
      Tensor z = ad::constant({S, config.latent_dim}, z_in);
      Tensor eps_raw = nets.eps_net.forward(tape, z);          // [S, N]
      Tensor eps_hat = tape.affine(eps_raw, config.eps_scale, 1.0);
      Tensor mu_row = tape.block_mean(eps_hat, S);             // [1, N]
      mu_eps = tape.reshape(mu_row, {n_cells, 1});
      Tensor j_out = nets.j_net.forward(tape, z);              // [S, 2*N*m]
      Tensor mu_j = tape.reshape(tape.block_mean(j_out, S), {m * n_cells, 2});
      j_re = tape.regroup_cols(mu_j, m, n_cells, 0);
      j_im = tape.regroup_cols(mu_j, m, n_cells, 1);
    }

    Tensor l_sa = scatter_loss(tape, lt, j_re, j_im);
    Tensor l_d = domain_loss(tape, lt, j_re, j_im, mu_eps);
    Tensor l_tv = tv_loss(tape, mu_eps, config.n_side);
    const double lambda2 =
        step >= config.lambda2_switch_step ? config.lambda2_value : 0.0;
    Tensor total = tape.add(tape.add(l_sa, tape.affine(l_d, config.lambda1, 0.0)),
                            tape.affine(l_tv, lambda2, 0.0));

    const io::LossRow row{step, total.scalar(), l_sa.scalar(), l_d.scalar(),
                          l_tv.scalar()};
    result.loss_history.push_back(row);
    if (!std::isfinite(row.total)) {
      if (!config.abort_checkpoint_path.empty())
        ad::save_checkpoint(config.abort_checkpoint_path,
                            {&nets.eps_net, &nets.j_net}, &adam, step);
      throw SolverError("train: non-finite loss at step " + std::to_string(step) +
                        (config.abort_checkpoint_path.empty()
                             ? ""
                             : "; checkpoint at " + config.abort_checkpoint_path));
    }

    tape.backward(total);
    std::vector<const std::vector<double>*> grads;
    grads.reserve(params.size());
    for (const auto& p : params) grads.push_back(tape.grad_by_storage(p->data()));
    adam.step(grads);
    tape.reset();

    if (config.eval_every > 0 && config.eval_hook && (step + 1) % config.eval_every == 0)
      config.eval_hook(step + 1, current_estimate(Rng(config.seed).child(4)));

    if (std::isfinite(config.target_loss) && row.total <= config.target_loss) {
      ++step;
      result.reached_target = true;
      break;
    }
    // plateau rule: consecutive window means within rel tolerance
    const long long w = config.plateau_window;
    if (w > 0 && (step + 1) % w == 0 && step + 1 >= 2 * w) {
      double cur = 0.0, prev = 0.0;
      for (long long i = 0; i < w; ++i) {
        cur += result.loss_history[static_cast<size_t>(step - i)].total;
        prev += result.loss_history[static_cast<size_t>(step - w - i)].total;
      }
      cur /= static_cast<double>(w);
      prev /= static_cast<double>(w);
      if (std::abs(prev - cur) < config.plateau_rel_tol * std::max(std::abs(prev), 1e-30)) {
        ++step;
        result.plateaued = true;
        break;
      }
    }
  }
  result.steps_run = step;

  // final estimate at the unjittered centers
  result.eps_estimate = current_estimate(Rng(config.seed).child(4));

  if (ground_truth != nullptr) {
    result.metrics.emplace_back("rrmse", metrics::rrmse(result.eps_estimate, *ground_truth));
    result.metrics.emplace_back("psnr_db", metrics::psnr(result.eps_estimate, *ground_truth));
    result.metrics.emplace_back("ssim", metrics::ssim(result.eps_estimate, *ground_truth));
  }

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace emscat::rinn
