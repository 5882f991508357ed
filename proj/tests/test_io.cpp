#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "emscat/io.hpp"

using namespace emscat;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() : path(std::filesystem::temp_directory_path() / "emscat_io_test") {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_SUITE_BEGIN("io");

TEST_CASE("map csv + sidecar round-trips bit-exactly") {
  TempDir tmp;
  scene::PermittivityMap map = scene::rasterize(
      scene::austria_preset(0.32, {1.6, -0.25}), scene::build_grid(16, 0.32));
  map.eps[3] = cplx{1.234567890123456789, -0.000123456789012345};
  const std::string path = tmp / "truth.csv";
  io::save_map(map, path);
  const scene::PermittivityMap back = io::load_map(path);
  CHECK(back.grid.n_side == 16);
  CHECK(back.grid.side_length_m == 0.32);
  REQUIRE(back.eps.size() == map.eps.size());
  for (size_t i = 0; i < map.eps.size(); ++i) CHECK(back.eps[i] == map.eps[i]);
}

TEST_CASE("pgm export: header, 16-bit stretch, import round-trip") {
  TempDir tmp;
  scene::PermittivityMap map;
  map.grid = scene::build_grid(2, 0.32);
  map.eps = {cplx{1.0, 0}, cplx{1.3, 0}, cplx{1.6, 0}, cplx{2.2, 0}};
  const std::string path = tmp / "map.pgm";
  io::write_map_pgm(map, path);

  const io::GrayImage img = io::read_pgm(path);
  CHECK(img.width == 2);
  CHECK(img.height == 2);
  CHECK(img.maxval == 65535);
  CHECK(img.pixels[0] == 0.0);
  CHECK(img.pixels[3] == 65535.0);
  CHECK(img.pixels[1] == doctest::Approx(0.25 * 65535).epsilon(1e-4));

  // degenerate constant map -> all zeros
  scene::PermittivityMap flat;
  flat.grid = scene::build_grid(2, 0.32);
  flat.eps.assign(4, cplx{1.5, 0.0});
  io::write_map_pgm(flat, tmp / "flat.pgm");
  const io::GrayImage flat_img = io::read_pgm(tmp / "flat.pgm");
  for (double p : flat_img.pixels) CHECK(p == 0.0);
}

TEST_CASE("scene file parsing: shapes, austria sugar, line-numbered errors") {
  TempDir tmp;
  {
    std::ofstream os(tmp / "scene.json");
    os << R"({
  "grid": {"n_side": 16, "side_length_m": 0.32},
  "shapes": [
    {"type": "disc", "center": [0.0, 0.05], "radius": 0.04, "epsilon": [1.5, 0.0]},
    {"type": "rectangle", "center": [-0.05, -0.05], "width": 0.06, "height": 0.04, "epsilon": 1.2},
    {"type": "austria", "epsilon": 1.6}
  ]
})";
  }
  const io::SceneFile sf = io::load_scene(tmp / "scene.json");
  CHECK(sf.grid.n_side == 16);
  CHECK(sf.shapes.size() == 5);  // austria expands to three shapes
  CHECK(sf.shapes[1].epsilon == cplx{1.2, 0.0});

  {
    std::ofstream os(tmp / "broken.json");
    os << "{\n  \"grid\": {\"n_side\": 16,\n  BROKEN\n}\n";
  }
  try {
    io::load_scene(tmp / "broken.json");
    FAIL("expected a parse error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(":3") != std::string::npos);  // line number
  }

  {
    std::ofstream os(tmp / "unknown.json");
    os << R"({"grid": {"n_side": 4, "side_length_m": 0.32},
              "shapes": [{"type": "hexagon"}]})";
  }
  CHECK_THROWS_AS(io::load_scene(tmp / "unknown.json"), IoError);
}

TEST_CASE("measurement csv + sidecar round-trips in both modes") {
  TempDir tmp;
  for (bool phaseless : {true, false}) {
    forward::MeasurementSet set;
    set.layout = em::ring_layout(2, 1.0, 3, 0.5, 3.0, 0.0);
    set.params = em::WaveParams(2.4e9);
    set.frames_per_pair = 2;
    set.phaseless = phaseless;
    set.noise_level = 0.1;
    set.seed = 77;
    Rng rng(5);
    for (int p = 0; p < 2; ++p)
      for (int q = 0; q < 3; ++q)
        for (int t = 0; t < 2; ++t) {
          forward::MeasurementRecord rec;
          rec.tx = p;
          rec.rx = q;
          rec.frame = t;
          rec.g_agc = 0.5 + rng.uniform01();
          rec.value = cplx{rng.gauss(), rng.gauss()};
          rec.amplitude = std::abs(rec.value);
          if (phaseless) rec.value = cplx{0.0, 0.0};
          set.records.push_back(rec);
        }
    const std::string path = tmp / (phaseless ? "amp.csv" : "cplx.csv");
    io::save_measurements(set, {scene::build_grid(8, 0.32), {0.5, 1.0, 2.0}}, path);
    const io::LoadedMeasurements back = io::load_measurements(path);
    CHECK(back.set.phaseless == phaseless);
    CHECK(back.set.frames_per_pair == 2);
    CHECK(back.set.seed == 77);
    CHECK(back.meta.scene_grid.n_side == 8);
    CHECK(back.set.layout.tx_gain_db[0] == 3.0);
    REQUIRE(back.set.records.size() == set.records.size());
    for (size_t i = 0; i < set.records.size(); ++i) {
      CHECK(back.set.records[i].amplitude == set.records[i].amplitude);
      CHECK(back.set.records[i].g_agc == set.records[i].g_agc);
      if (!phaseless) CHECK(back.set.records[i].value == set.records[i].value);
    }
  }
}

TEST_CASE("gain csv round-trip and validation") {
  TempDir tmp;
  Eigen::VectorXd gains(6);
  gains << 1.0, 1.1, 0.9, 2.0, 1.99526231496888, 1.0;
  const std::string path = tmp / "calib.csv";
  io::save_gains(gains, 2, 3, path);
  const Eigen::VectorXd back = io::load_gains(path, 2, 3);
  CHECK(back == gains);
  CHECK_THROWS_AS(io::load_gains(path, 3, 3), IoError);
}

TEST_CASE("bundle writer emits every artifact") {
  TempDir tmp;
  scene::PermittivityMap map;
  map.grid = scene::build_grid(16, 0.32);
  map.eps.assign(256, cplx{1.25, 0.0});
  map.eps[0] = cplx{1.5, 0.0};
  const std::vector<io::LossRow> hist{{0, 3.0, 2.0, 1.0, 0.0}, {1, 2.5, 1.75, 0.75, 0.1}};
  const std::vector<std::pair<std::string, double>> mets{{"rrmse", 0.1}};
  const std::string dir = tmp / "bundle";
  io::write_bundle(dir, map, hist, "{\"seed\": 1}", &mets);
  for (const char* f : {"epsilon.csv", "epsilon.csv.meta.json", "epsilon.pgm",
                        "loss_history.csv", "config.snapshot", "metrics.csv"})
    CHECK(std::filesystem::exists(dir + "/" + f));

  std::ifstream is(dir + "/loss_history.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header == "step,total,l_sa,l_d,l_tv");
}

TEST_SUITE_END();
