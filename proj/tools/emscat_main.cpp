// emscat: 2D TM inverse-scattering toolkit.
// Subcommands: scene, forward, calibrate, reconstruct, metrics.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "emscat/bp.hpp"
#include "emscat/em.hpp"
#include "emscat/forward.hpp"
#include "emscat/io.hpp"
#include "emscat/metrics.hpp"
#include "emscat/preprocess.hpp"
#include "emscat/rinn.hpp"
#include "emscat/scene.hpp"

namespace {

using namespace emscat;

int default_threads() {
  if (const char* env = std::getenv("EMSCAT_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 1;
}

struct ForwardArgs {
  std::string scene_path, out_path;
  double freq = 2.4e9;
  double noise = 0.0;
  int frames = 100;
  bool phase = false;
  bool empty = false;
  std::uint64_t seed = 0;
  int tx = 16, rx = 32;
  double tx_radius = 1.0, rx_radius = 0.5;
  double tx_gain_db = 3.0, rx_gain_db = 3.0;
  std::vector<double> agc = {0.5, 1.0, 2.0};
  int threads = 0;
};

int cmd_scene(const std::string& config_path, const std::string& out_dir) {
  const io::SceneFile sf = io::load_scene(config_path);
  const scene::PermittivityMap map = scene::rasterize(sf.shapes, sf.grid);
  std::filesystem::create_directories(out_dir);
  io::save_map(map, out_dir + "/truth.csv");
  io::write_map_pgm(map, out_dir + "/truth.pgm");
  std::cout << "scene: " << map.grid.cell_count() << " cells -> " << out_dir
            << "/truth.{csv,pgm}\n";
  return 0;
}

int cmd_forward(const ForwardArgs& a) {
  const io::SceneFile sf = io::load_scene(a.scene_path);
  const scene::PermittivityMap map =
      a.empty ? scene::rasterize({}, sf.grid) : scene::rasterize(sf.shapes, sf.grid);
  const em::WaveParams params(a.freq);
  const em::ArrayLayout layout = em::ring_layout(a.tx, a.tx_radius, a.rx, a.rx_radius,
                                                 a.tx_gain_db, a.rx_gain_db);
  em::validate_layout(layout, sf.grid);

  forward::SimulateOptions opt;
  opt.noise_level = a.noise;
  opt.frames = a.frames;
  opt.phaseless = !a.phase;
  opt.agc_set = a.agc;
  opt.threads = a.threads >= 1 ? a.threads : default_threads();
  Rng rng(a.seed);
  const forward::MeasurementSet set = forward::simulate(map, layout, params, opt, rng);
  io::save_measurements(set, {sf.grid, a.agc}, a.out_path);
  std::cout << "forward: " << set.records.size() << " records -> " << a.out_path << "\n";
  return 0;
}

int cmd_calibrate(const std::string& meas_path, const std::string& out_path) {
  const io::LoadedMeasurements lm = io::load_measurements(meas_path);
  const preprocess::Vec gains =
      preprocess::calibrate_gain(lm.set, lm.set.params, lm.set.layout);
  io::save_gains(gains, lm.set.layout.tx_count(), lm.set.layout.rx_count(), out_path);
  std::cout << "calibrate: " << gains.size() << " pair gains -> " << out_path << "\n";
  return 0;
}

struct ReconstructArgs {
  std::string meas_path, calib_path, out_dir, method = "rinn";
  std::string truth_path, greens_cache;
  int grid = 32;
  long long steps = 20000;
  bool phase = false;
  std::uint64_t seed = 0;
  int mc_samples = 4;
  double eps_scale = 1.5;
  double lambda1 = 1.0, lambda2 = 1.0;
  long long lambda2_switch = 5000;
  double lr = 5e-4, lr_decay = 0.95;
  long long lr_interval = 1000;
  double jitter_sigma = -1.0;
  double target_loss = std::numeric_limits<double>::quiet_NaN();
  std::string input_mode = "coordinate";
  int latent_dim = 20;
  int threads = 0;
};

int cmd_reconstruct(const ReconstructArgs& a) {
  const io::LoadedMeasurements lm = io::load_measurements(a.meas_path);
  const auto& set = lm.set;
  const int threads = a.threads >= 1 ? a.threads : default_threads();

  if (a.method == "bp" && set.phaseless)
    throw CapabilityError(
        "BP cannot invert phaseless data (no scattered-field phase); "
        "record phase-mode measurements or use --method rinn");
  if (a.phase && set.phaseless)
    throw CapabilityError("--phase requested but the measurement file is phaseless");

  const scene::Grid grid = scene::build_grid(a.grid, lm.meta.scene_grid.side_length_m);
  em::validate_layout(set.layout, grid);

  em::GreensOperators ops = [&]() {
    if (!a.greens_cache.empty() && std::filesystem::exists(a.greens_cache)) {
      em::GreensOperators cached = em::load_greens(a.greens_cache);
      if (cached.grid.n_side == grid.n_side &&
          cached.grid.side_length_m == grid.side_length_m &&
          cached.params.frequency_hz == set.params.frequency_hz &&
          cached.g_scatter.rows() == set.layout.rx_count())
        return cached;
      std::cerr << "greens cache mismatch; reassembling\n";
    }
    em::GreensOperators fresh = em::assemble_greens(grid, set.layout, set.params, threads);
    if (!a.greens_cache.empty()) em::save_greens(fresh, a.greens_cache);
    return fresh;
  }();

  const preprocess::Vec gains = io::load_gains(a.calib_path, set.layout.tx_count(),
                                               set.layout.rx_count());

  std::optional<scene::PermittivityMap> truth;
  if (!a.truth_path.empty()) {
    truth = io::load_map(a.truth_path);
    if (truth->grid.n_side != grid.n_side)
      throw ValidationError("reconstruct: truth grid does not match --grid");
  }

  if (a.method == "bp") {
    const auto scattered =
        bp::scattered_from_measurements(set, gains, set.layout, set.params);
    std::vector<em::CVec> incident;
    for (int p = 0; p < set.layout.tx_count(); ++p)
      incident.push_back(em::incident_field(set.layout.tx_positions[static_cast<size_t>(p)],
                                            grid.cell_centers, set.params));
    const bp::BpResult res = bp::bp_reconstruct(scattered, ops, incident);
    std::vector<std::pair<std::string, double>> mets;
    if (truth) {
      mets = {{"rrmse", metrics::rrmse(res.eps_estimate, *truth)},
              {"psnr_db", metrics::psnr(res.eps_estimate, *truth)},
              {"ssim", metrics::ssim(res.eps_estimate, *truth)}};
    }
    nlohmann::json snap;
    snap["method"] = "bp";
    snap["grid"] = a.grid;
    snap["seed"] = a.seed;
    io::write_bundle(a.out_dir, res.eps_estimate, {}, snap.dump(2),
                     truth ? &mets : nullptr);
    std::cout << "bp: bundle -> " << a.out_dir << "\n";
    return 0;
  }
  if (a.method != "rinn")
    throw ValidationError("reconstruct: unknown method '" + a.method + "'");

  rinn::RinnConfig cfg;
  cfg.n_side = a.grid;
  cfg.side_length_m = lm.meta.scene_grid.side_length_m;
  cfg.jitter_sigma_m = a.jitter_sigma;
  cfg.mc_samples = a.mc_samples;
  cfg.eps_scale = a.eps_scale;
  cfg.lambda1 = a.lambda1;
  cfg.lambda2_value = a.lambda2;
  cfg.lambda2_switch_step = a.lambda2_switch;
  cfg.lr = {a.lr, a.lr_decay, a.lr_interval, 1e-5};
  cfg.max_steps = a.steps;
  cfg.seed = a.seed;
  cfg.input_mode =
      a.input_mode == "latent" ? rinn::InputMode::Latent : rinn::InputMode::Coordinate;
  cfg.latent_dim = a.latent_dim;
  cfg.phase_mode = a.phase;
  cfg.target_loss = a.target_loss;
  std::filesystem::create_directories(a.out_dir);
  cfg.abort_checkpoint_path = a.out_dir + "/abort.checkpoint";

  rinn::MeasuredData data;
  data.phase_mode = a.phase;
  if (a.phase) {
    const auto scattered =
        bp::scattered_from_measurements(set, gains, set.layout, set.params);
    data.scattered.resize(static_cast<Eigen::Index>(set.layout.tx_count()) *
                          set.layout.rx_count());
    for (int p = 0; p < set.layout.tx_count(); ++p)
      for (int q = 0; q < set.layout.rx_count(); ++q)
        data.scattered(static_cast<Eigen::Index>(p) * set.layout.rx_count() + q) =
            scattered[static_cast<size_t>(p)](q);
  } else {
    const preprocess::FilteredAmplitudes filt = preprocess::expectation_filter(set);
    data.amplitude = preprocess::normalize(filt.amplitude, gains);
  }

  const rinn::ReconstructionResult res =
      rinn::train(data, ops, set.layout, cfg, truth ? &*truth : nullptr);
  io::write_bundle(a.out_dir, res.eps_estimate, res.loss_history, res.config_snapshot,
                   res.metrics.empty() ? nullptr : &res.metrics);
  std::cout << "rinn: " << res.steps_run << " steps in " << res.wall_seconds
            << " s (" << (res.plateaued ? "plateau" : "max steps or target")
            << ") -> " << a.out_dir << "\n";
  for (const auto& [k, v] : res.metrics) std::cout << "  " << k << " = " << v << "\n";

  const bool target_set = std::isfinite(a.target_loss);
  if (target_set && !res.reached_target &&
      res.loss_history.back().total > a.target_loss)
    return 2;  // plateau (or step budget) without reaching the requested loss
  return 0;
}

int cmd_metrics(const std::string& est_path, const std::string& truth_path,
                std::string out_path) {
  std::string est_csv = est_path;
  if (std::filesystem::is_directory(est_path)) est_csv = est_path + "/epsilon.csv";
  const scene::PermittivityMap est = io::load_map(est_csv);
  const scene::PermittivityMap truth = io::load_map(truth_path);
  const std::vector<std::pair<std::string, double>> mets = {
      {"rrmse", metrics::rrmse(est, truth)},
      {"psnr_db", metrics::psnr(est, truth)},
      {"ssim", metrics::ssim(est, truth)}};
  if (out_path.empty())
    out_path = std::filesystem::path(est_csv).parent_path().string() + "/metrics.csv";
  io::write_metrics_csv(out_path, mets);
  std::cout << "ssim " << mets[2].second << " | psnr " << mets[1].second
            << " dB | rrmse " << mets[0].second << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2D TM electromagnetic inverse-scattering toolkit"};
  app.require_subcommand(1);

  std::string scene_config, scene_out;
  auto* sc_scene = app.add_subcommand("scene", "rasterize a scene file to a ground-truth map");
  sc_scene->add_option("--config", scene_config, "scene JSON file")->required();
  sc_scene->add_option("--out", scene_out, "output directory")->required();

  ForwardArgs fa;
  auto* sc_fwd = app.add_subcommand("forward", "simulate measurements with the MoM solver");
  sc_fwd->add_option("--scene", fa.scene_path, "scene JSON file")->required();
  sc_fwd->add_option("--out", fa.out_path, "measurement CSV path")->required();
  sc_fwd->add_option("--freq", fa.freq, "frequency in Hz (default 2.4 GHz)");
  sc_fwd->add_option("--noise", fa.noise, "noise level relative to clean RMS");
  sc_fwd->add_option("--frames", fa.frames, "frames per (tx,rx) pair");
  sc_fwd->add_flag("--phase", fa.phase, "record complex values (phase mode)");
  sc_fwd->add_flag("--empty", fa.empty, "ignore shapes (empty-scene calibration run)");
  sc_fwd->add_option("--seed", fa.seed, "rng seed");
  sc_fwd->add_option("--tx", fa.tx, "transmitter count");
  sc_fwd->add_option("--rx", fa.rx, "receiver count");
  sc_fwd->add_option("--tx-radius", fa.tx_radius, "transmitter ring radius (m)");
  sc_fwd->add_option("--rx-radius", fa.rx_radius, "receiver ring radius (m)");
  sc_fwd->add_option("--tx-gain-db", fa.tx_gain_db, "per-transmitter gain (dB)");
  sc_fwd->add_option("--rx-gain-db", fa.rx_gain_db, "per-receiver gain (dB)");
  sc_fwd->add_option("--agc", fa.agc, "AGC gain set drawn per record")->delimiter(',');
  sc_fwd->add_option("--threads", fa.threads, "worker threads (default $EMSCAT_THREADS or 1)");

  std::string cal_meas, cal_out;
  auto* sc_cal = app.add_subcommand("calibrate", "derive pair gains from an empty-scene run");
  sc_cal->add_option("--meas", cal_meas, "empty-scene measurement CSV")->required();
  sc_cal->add_option("--out", cal_out, "calibration CSV path")->required();

  ReconstructArgs ra;
  auto* sc_rec = app.add_subcommand("reconstruct", "invert measurements to a permittivity map");
  sc_rec->add_option("--meas", ra.meas_path, "measurement CSV")->required();
  sc_rec->add_option("--calib", ra.calib_path, "calibration CSV")->required();
  sc_rec->add_option("--out", ra.out_dir, "result bundle directory")->required();
  sc_rec->add_option("--method", ra.method, "rinn or bp");
  sc_rec->add_option("--grid", ra.grid, "reconstruction grid cells per side");
  sc_rec->add_option("--steps", ra.steps, "max training steps");
  sc_rec->add_flag("--phase", ra.phase, "use complex scattered-field loss");
  sc_rec->add_option("--seed", ra.seed, "rng seed");
  sc_rec->add_option("--mc", ra.mc_samples, "Monte Carlo samples per step");
  sc_rec->add_option("--eps-scale", ra.eps_scale, "permittivity output scale s");
  sc_rec->add_option("--lambda1", ra.lambda1, "sensing-domain loss weight");
  sc_rec->add_option("--lambda2", ra.lambda2, "TV loss weight after the switch step");
  sc_rec->add_option("--lambda2-switch", ra.lambda2_switch, "step at which TV turns on");
  sc_rec->add_option("--lr", ra.lr, "Adam base learning rate");
  sc_rec->add_option("--lr-decay", ra.lr_decay, "exponential decay factor");
  sc_rec->add_option("--lr-interval", ra.lr_interval, "steps per decay interval");
  sc_rec->add_option("--jitter-sigma", ra.jitter_sigma,
                     "coordinate jitter sigma in meters (<0: spacing/4)");
  sc_rec->add_option("--target-loss", ra.target_loss,
                     "stop early at this total loss; exit 2 if never reached");
  sc_rec->add_option("--input-mode", ra.input_mode, "coordinate or latent");
  sc_rec->add_option("--latent-dim", ra.latent_dim, "latent dimension (latent mode)");
  sc_rec->add_option("--truth", ra.truth_path, "ground-truth map CSV for metrics");
  sc_rec->add_option("--greens-cache", ra.greens_cache, "binary operator cache path");
  sc_rec->add_option("--threads", ra.threads, "worker threads");

  std::string met_est, met_truth, met_out;
  auto* sc_met = app.add_subcommand("metrics", "image metrics of an estimate vs ground truth");
  sc_met->add_option("--est", met_est, "bundle directory or epsilon CSV")->required();
  sc_met->add_option("--truth", met_truth, "ground-truth map CSV")->required();
  sc_met->add_option("--out", met_out, "metrics CSV path (default: alongside estimate)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sc_scene->parsed()) return cmd_scene(scene_config, scene_out);
    if (sc_fwd->parsed()) return cmd_forward(fa);
    if (sc_cal->parsed()) return cmd_calibrate(cal_meas, cal_out);
    if (sc_rec->parsed()) return cmd_reconstruct(ra);
    if (sc_met->parsed()) return cmd_metrics(met_est, met_truth, met_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
