#include "emscat/io.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace emscat::io {

using nlohmann::json;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw IoError("cannot open " + path);
  return is;
}

std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw IoError("cannot open " + path + " for writing");
  return os;
}

json parse_json_file(const std::string& path) {
  std::ifstream is = open_in(path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // byte offset -> line number for the diagnostic
    size_t line = 1;
    for (size_t i = 0; i < text.size() && i + 1 < e.byte; ++i)
      if (text[i] == '\n') ++line;
    throw IoError(path + ":" + std::to_string(line) + ": " + e.what());
  }
}

cplx parse_epsilon(const json& j, const std::string& path) {
  if (j.is_number()) return cplx{j.get<double>(), 0.0};
  if (j.is_array() && j.size() == 2)
    return cplx{j.at(0).get<double>(), j.at(1).get<double>()};
  throw IoError(path + ": epsilon must be a number or [re, im]");
}

int skip_pgm_whitespace(std::istream& is) {
  int c = is.get();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      while (c != '\n' && c != EOF) c = is.get();
    }
    c = is.get();
  }
  return c;
}

int read_pgm_int(std::istream& is) {
  int c = skip_pgm_whitespace(is);
  int v = 0;
  bool any = false;
  while (c >= '0' && c <= '9') {
    v = v * 10 + (c - '0');
    any = true;
    c = is.get();
  }
  if (!any) throw IoError("PGM: expected an integer");
  return v;
}

}  // namespace

GrayImage read_pgm(const std::string& path) {
  std::ifstream is = open_in(path, true);
  char m0 = static_cast<char>(is.get());
  char m1 = static_cast<char>(is.get());
  if (m0 != 'P' || (m1 != '2' && m1 != '5'))
    throw IoError(path + ": not a P2/P5 PGM file");
  const bool binary = (m1 == '5');
  GrayImage img;
  img.width = read_pgm_int(is);
  img.height = read_pgm_int(is);
  img.maxval = read_pgm_int(is);
  if (img.width < 1 || img.height < 1 || img.maxval < 1 || img.maxval > 65535)
    throw IoError(path + ": bad PGM header");
  img.pixels.resize(static_cast<size_t>(img.width) * img.height);
  if (binary) {
    // header ends with exactly one whitespace byte (already consumed by the
    // integer reader stopping on it)
    const bool wide = img.maxval > 255;
    for (auto& p : img.pixels) {
      int hi = is.get();
      if (wide) {
        int lo = is.get();
        if (hi == EOF || lo == EOF) throw IoError(path + ": truncated PGM");
        p = hi * 256 + lo;  // big-endian per the format
      } else {
        if (hi == EOF) throw IoError(path + ": truncated PGM");
        p = hi;
      }
    }
  } else {
    for (auto& p : img.pixels) p = read_pgm_int(is);
  }
  return img;
}

void write_map_pgm(const scene::PermittivityMap& map, const std::string& path) {
  const int n = map.grid.n_side;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& e : map.eps) {
    lo = std::min(lo, e.real());
    hi = std::max(hi, e.real());
  }
  const double span = hi - lo;
  std::ofstream os = open_out(path, true);
  os << "P5\n" << n << " " << n << "\n65535\n";
  for (const auto& e : map.eps) {
    unsigned v = 0;
    if (span > 0.0) {
      const double t = (e.real() - lo) / span;
      v = static_cast<unsigned>(std::lround(t * 65535.0));
      v = std::min(v, 65535u);
    }
    os.put(static_cast<char>((v >> 8) & 0xff));
    os.put(static_cast<char>(v & 0xff));
  }
  if (!os) throw IoError("write failed for " + path);
}

void save_map(const scene::PermittivityMap& map, const std::string& csv_path) {
  {
    std::ofstream os = open_out(csv_path);
    os << "index,re,im\n";
    for (size_t i = 0; i < map.eps.size(); ++i)
      os << i << "," << fmt_double(map.eps[i].real()) << ","
         << fmt_double(map.eps[i].imag()) << "\n";
    if (!os) throw IoError("write failed for " + csv_path);
  }
  json meta;
  meta["n_side"] = map.grid.n_side;
  meta["side_length_m"] = map.grid.side_length_m;
  meta["ordering"] = "row-major, row 0 at top (+y), columns left to right (+x)";
  std::ofstream os = open_out(csv_path + ".meta.json");
  os << meta.dump(2) << "\n";
}

scene::PermittivityMap load_map(const std::string& csv_path) {
  const json meta = parse_json_file(csv_path + ".meta.json");
  scene::PermittivityMap map;
  map.grid = scene::build_grid(meta.at("n_side").get<int>(),
                               meta.at("side_length_m").get<double>());
  map.eps.assign(static_cast<size_t>(map.grid.cell_count()), cplx{1.0, 0.0});

  std::ifstream is = open_in(csv_path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("index,re,im", 0) != 0)
    throw IoError(csv_path + ": missing index,re,im header");
  size_t count = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    size_t idx;
    double re, im;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf", &idx, &re, &im) != 3)
      throw IoError(csv_path + ": malformed row '" + line + "'");
    if (idx >= map.eps.size()) throw IoError(csv_path + ": cell index out of range");
    map.eps[idx] = cplx{re, im};
    ++count;
  }
  if (count != map.eps.size())
    throw IoError(csv_path + ": expected " + std::to_string(map.eps.size()) + " rows");
  return map;
}

SceneFile load_scene(const std::string& path) {
  const json j = parse_json_file(path);
  SceneFile out;
  if (!j.contains("grid")) throw IoError(path + ": missing 'grid'");
  out.grid = scene::build_grid(j.at("grid").at("n_side").get<int>(),
                               j.at("grid").at("side_length_m").get<double>());
  const std::string base_dir = std::filesystem::path(path).parent_path().string();
  if (j.contains("shapes")) {
    for (const auto& s : j.at("shapes")) {
      const std::string type = s.at("type").get<std::string>();
      if (type == "disc") {
        out.shapes.push_back(scene::Shape::disc(
            {s.at("center").at(0).get<double>(), s.at("center").at(1).get<double>()},
            s.at("radius").get<double>(), parse_epsilon(s.at("epsilon"), path)));
      } else if (type == "annulus") {
        out.shapes.push_back(scene::Shape::annulus(
            {s.at("center").at(0).get<double>(), s.at("center").at(1).get<double>()},
            s.at("r_inner").get<double>(), s.at("r_outer").get<double>(),
            parse_epsilon(s.at("epsilon"), path)));
      } else if (type == "rectangle") {
        out.shapes.push_back(scene::Shape::rectangle(
            {s.at("center").at(0).get<double>(), s.at("center").at(1).get<double>()},
            s.at("width").get<double>(), s.at("height").get<double>(),
            parse_epsilon(s.at("epsilon"), path)));
      } else if (type == "bitmap") {
        std::string bm_path = s.at("path").get<std::string>();
        if (!bm_path.empty() && bm_path[0] != '/' && !base_dir.empty())
          bm_path = base_dir + "/" + bm_path;
        out.shapes.push_back(scene::Shape::bitmap(bm_path, s.at("eps_max").get<double>()));
      } else if (type == "austria") {
        auto preset = scene::austria_preset(out.grid.side_length_m,
                                            parse_epsilon(s.at("epsilon"), path));
        out.shapes.insert(out.shapes.end(), preset.begin(), preset.end());
      } else {
        throw IoError(path + ": unknown shape type '" + type + "'");
      }
    }
  }
  return out;
}

void save_measurements(const forward::MeasurementSet& set, const MeasurementMeta& meta,
                       const std::string& csv_path) {
  {
    std::ofstream os = open_out(csv_path);
    os << (set.phaseless ? "tx,rx,frame,g_agc,amp\n" : "tx,rx,frame,g_agc,amp,re,im\n");
    for (const auto& r : set.records) {
      os << r.tx << "," << r.rx << "," << r.frame << "," << fmt_double(r.g_agc) << ","
         << fmt_double(r.amplitude);
      if (!set.phaseless)
        os << "," << fmt_double(r.value.real()) << "," << fmt_double(r.value.imag());
      os << "\n";
    }
    if (!os) throw IoError("write failed for " + csv_path);
  }
  json j;
  j["frequency_hz"] = set.params.frequency_hz;
  j["frames_per_pair"] = set.frames_per_pair;
  j["phaseless"] = set.phaseless;
  j["noise_level"] = set.noise_level;
  j["seed"] = set.seed;
  j["agc_set"] = meta.agc_set;
  j["grid"] = {{"n_side", meta.scene_grid.n_side},
               {"side_length_m", meta.scene_grid.side_length_m}};
  json lay;
  for (const auto& p : set.layout.tx_positions) lay["tx_positions"].push_back({p[0], p[1]});
  for (const auto& p : set.layout.rx_positions) lay["rx_positions"].push_back({p[0], p[1]});
  lay["tx_gain_db"] = set.layout.tx_gain_db;
  lay["rx_gain_db"] = set.layout.rx_gain_db;
  j["layout"] = lay;
  std::ofstream os = open_out(csv_path + ".meta.json");
  os << j.dump(2) << "\n";
}

LoadedMeasurements load_measurements(const std::string& csv_path) {
  const json j = parse_json_file(csv_path + ".meta.json");
  LoadedMeasurements out{forward::MeasurementSet{}, MeasurementMeta{}};
  auto& set = out.set;
  set.params = em::WaveParams(j.at("frequency_hz").get<double>());
  set.frames_per_pair = j.at("frames_per_pair").get<int>();
  set.phaseless = j.at("phaseless").get<bool>();
  set.noise_level = j.at("noise_level").get<double>();
  set.seed = j.at("seed").get<std::uint64_t>();
  out.meta.agc_set = j.at("agc_set").get<std::vector<double>>();
  out.meta.scene_grid = scene::build_grid(j.at("grid").at("n_side").get<int>(),
                                          j.at("grid").at("side_length_m").get<double>());
  const auto& lay = j.at("layout");
  for (const auto& p : lay.at("tx_positions"))
    set.layout.tx_positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  for (const auto& p : lay.at("rx_positions"))
    set.layout.rx_positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  set.layout.tx_gain_db = lay.at("tx_gain_db").get<std::vector<double>>();
  set.layout.rx_gain_db = lay.at("rx_gain_db").get<std::vector<double>>();

  std::ifstream is = open_in(csv_path);
  std::string line;
  if (!std::getline(is, line)) throw IoError(csv_path + ": empty file");
  const bool has_phase = line.find(",re,im") != std::string::npos;
  if (has_phase == set.phaseless)
    throw IoError(csv_path + ": header does not match sidecar phase mode");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    forward::MeasurementRecord rec;
    double re = 0.0, im = 0.0;
    if (has_phase) {
      if (std::sscanf(line.c_str(), "%d,%d,%d,%lf,%lf,%lf,%lf", &rec.tx, &rec.rx,
                      &rec.frame, &rec.g_agc, &rec.amplitude, &re, &im) != 7)
        throw IoError(csv_path + ": malformed row '" + line + "'");
      rec.value = cplx{re, im};
    } else {
      if (std::sscanf(line.c_str(), "%d,%d,%d,%lf,%lf", &rec.tx, &rec.rx, &rec.frame,
                      &rec.g_agc, &rec.amplitude) != 5)
        throw IoError(csv_path + ": malformed row '" + line + "'");
    }
    set.records.push_back(rec);
  }
  const size_t expected = static_cast<size_t>(set.layout.tx_count()) *
                          set.layout.rx_count() * set.frames_per_pair;
  if (set.records.size() != expected)
    throw IoError(csv_path + ": record count does not match layout and frame count");
  return out;
}

void save_gains(const Eigen::VectorXd& gains, int tx_count, int rx_count,
                const std::string& path) {
  if (gains.size() != static_cast<Eigen::Index>(tx_count) * rx_count)
    throw ValidationError("save_gains: length mismatch");
  std::ofstream os = open_out(path);
  os << "tx,rx,gain\n";
  for (int p = 0; p < tx_count; ++p)
    for (int q = 0; q < rx_count; ++q)
      os << p << "," << q << ","
         << fmt_double(gains(static_cast<Eigen::Index>(p) * rx_count + q)) << "\n";
  if (!os) throw IoError("write failed for " + path);
}

Eigen::VectorXd load_gains(const std::string& path, int tx_count, int rx_count) {
  std::ifstream is = open_in(path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("tx,rx,gain", 0) != 0)
    throw IoError(path + ": missing tx,rx,gain header");
  Eigen::VectorXd gains =
      Eigen::VectorXd::Constant(static_cast<Eigen::Index>(tx_count) * rx_count, -1.0);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    int p, q;
    double g;
    if (std::sscanf(line.c_str(), "%d,%d,%lf", &p, &q, &g) != 3)
      throw IoError(path + ": malformed row '" + line + "'");
    if (p < 0 || p >= tx_count || q < 0 || q >= rx_count)
      throw IoError(path + ": antenna index out of range");
    gains(static_cast<Eigen::Index>(p) * rx_count + q) = g;
  }
  for (Eigen::Index i = 0; i < gains.size(); ++i)
    if (gains(i) < 0.0) throw IoError(path + ": missing gain entries");
  return gains;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, double>>& metrics) {
  std::ofstream os = open_out(path);
  os << "metric,value\n";
  for (const auto& [k, v] : metrics) os << k << "," << fmt_double(v) << "\n";
  if (!os) throw IoError("write failed for " + path);
}

void write_bundle(const std::string& dir, const scene::PermittivityMap& eps,
                  const std::vector<LossRow>& history, const std::string& config_json,
                  const std::vector<std::pair<std::string, double>>* metrics) {
  std::filesystem::create_directories(dir);
  save_map(eps, dir + "/epsilon.csv");
  write_map_pgm(eps, dir + "/epsilon.pgm");
  {
    std::ofstream os = open_out(dir + "/loss_history.csv");
    os << "step,total,l_sa,l_d,l_tv\n";
    for (const auto& row : history)
      os << row.step << "," << fmt_double(row.total) << "," << fmt_double(row.l_sa)
         << "," << fmt_double(row.l_d) << "," << fmt_double(row.l_tv) << "\n";
  }
  {
    std::ofstream os = open_out(dir + "/config.snapshot");
    os << config_json << "\n";
  }
  if (metrics) write_metrics_csv(dir + "/metrics.csv", *metrics);
}

}  // namespace emscat::io
