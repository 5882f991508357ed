#pragma once

#include <optional>
#include <string>
#include <vector>

#include "emscat/forward.hpp"
#include "emscat/scene.hpp"

namespace emscat::io {

// %.17g formatting: round-trips doubles exactly, so reruns are byte-identical.
std::string fmt_double(double v);

struct GrayImage {
  int width = 0;
  int height = 0;
  int maxval = 255;
  std::vector<double> pixels;  // row-major, raw sample values
};

GrayImage read_pgm(const std::string& path);  // P2 or P5, 8- or 16-bit

// 16-bit binary PGM of Re(eps), [min, max] stretched to [0, 65535];
// a constant map writes all zeros.
void write_map_pgm(const scene::PermittivityMap& map, const std::string& path);

// `index,re,im` rows plus a JSON sidecar <path>.meta.json with the grid.
void save_map(const scene::PermittivityMap& map, const std::string& csv_path);
scene::PermittivityMap load_map(const std::string& csv_path);

// Scene description file (JSON): grid plus an ordered shape list.
struct SceneFile {
  scene::Grid grid;
  std::vector<scene::Shape> shapes;
};
SceneFile load_scene(const std::string& path);

// Measurement CSV `tx,rx,frame,g_agc,amp[,re,im]` with a JSON sidecar
// carrying layout, frequency, grid, noise level, seed and mode.
struct MeasurementMeta {
  scene::Grid scene_grid;  // grid the scene was rasterized on
  std::vector<double> agc_set;
};
void save_measurements(const forward::MeasurementSet& set, const MeasurementMeta& meta,
                       const std::string& csv_path);
struct LoadedMeasurements {
  forward::MeasurementSet set;
  MeasurementMeta meta;
};
LoadedMeasurements load_measurements(const std::string& csv_path);

// Calibration file `tx,rx,gain`.
void save_gains(const Eigen::VectorXd& gains, int tx_count, int rx_count,
                const std::string& path);
Eigen::VectorXd load_gains(const std::string& path, int tx_count, int rx_count);

// Result bundle directory: epsilon.csv(+meta), epsilon.pgm, loss_history.csv,
// config.snapshot, optional metrics.csv.
struct LossRow {
  long long step;
  double total, l_sa, l_d, l_tv;
};
void write_bundle(const std::string& dir, const scene::PermittivityMap& eps,
                  const std::vector<LossRow>& history, const std::string& config_json,
                  const std::vector<std::pair<std::string, double>>* metrics);

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, double>>& metrics);

}  // namespace emscat::io
