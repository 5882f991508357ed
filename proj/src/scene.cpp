#include "emscat/scene.hpp"

#include <cmath>

#include "emscat/io.hpp"

namespace emscat::scene {

Grid build_grid(int n_side, double side_length_m) {
  if (n_side < 1) throw ValidationError("build_grid: n_side must be >= 1");
  if (!(side_length_m > 0.0))
    throw ValidationError("build_grid: side_length_m must be > 0");
  Grid g;
  g.n_side = n_side;
  g.side_length_m = side_length_m;
  g.cell_centers.reserve(static_cast<size_t>(n_side) * n_side);
  const double dx = side_length_m / n_side;
  const double half = 0.5 * side_length_m;
  for (int row = 0; row < n_side; ++row) {
    const double y = half - (row + 0.5) * dx;  // row 0 at the top
    for (int col = 0; col < n_side; ++col) {
      const double x = -half + (col + 0.5) * dx;
      g.cell_centers.push_back({x, y});
    }
  }
  return g;
}

bool outside_domain(const Grid& grid, const Point& p) {
  const double h = grid.half_width();
  return std::abs(p[0]) > h || std::abs(p[1]) > h;
}

Shape Shape::disc(Point center, double radius, cplx eps) {
  if (!(radius > 0.0)) throw ValidationError("disc: radius must be > 0");
  if (eps.real() < 1.0) throw ValidationError("shape: Re(epsilon) must be >= 1");
  if (eps.imag() > 0.0)
    throw ValidationError("shape: Im(epsilon) must be <= 0 (e^{+jwt} lossy convention)");
  return Shape{Disc{center, radius}, eps};
}

Shape Shape::annulus(Point center, double r_inner, double r_outer, cplx eps) {
  if (!(r_inner > 0.0) || !(r_outer > 0.0))
    throw ValidationError("annulus: radii must be > 0");
  if (!(r_inner < r_outer))
    throw ValidationError("annulus: r_inner must be < r_outer");
  if (eps.real() < 1.0) throw ValidationError("shape: Re(epsilon) must be >= 1");
  if (eps.imag() > 0.0)
    throw ValidationError("shape: Im(epsilon) must be <= 0 (e^{+jwt} lossy convention)");
  return Shape{Annulus{center, r_inner, r_outer}, eps};
}

Shape Shape::rectangle(Point center, double w, double h, cplx eps) {
  if (!(w > 0.0) || !(h > 0.0))
    throw ValidationError("rectangle: width/height must be > 0");
  if (eps.real() < 1.0) throw ValidationError("shape: Re(epsilon) must be >= 1");
  if (eps.imag() > 0.0)
    throw ValidationError("shape: Im(epsilon) must be <= 0 (e^{+jwt} lossy convention)");
  return Shape{Rectangle{center, w, h}, eps};
}

Shape Shape::bitmap(std::string path, double eps_max) {
  if (!(eps_max >= 1.0)) throw ValidationError("bitmap: eps_max must be >= 1");
  return Shape{Bitmap{std::move(path), eps_max}, cplx{1.0, 0.0}};
}

namespace {

inline double sq(double v) { return v * v; }

bool contains(const Disc& d, const Point& p) {
  return sq(p[0] - d.center[0]) + sq(p[1] - d.center[1]) <= sq(d.radius);
}
bool contains(const Annulus& a, const Point& p) {
  const double r2 = sq(p[0] - a.center[0]) + sq(p[1] - a.center[1]);
  return r2 >= sq(a.r_inner) && r2 <= sq(a.r_outer);
}
bool contains(const Rectangle& r, const Point& p) {
  return std::abs(p[0] - r.center[0]) <= 0.5 * r.width &&
         std::abs(p[1] - r.center[1]) <= 0.5 * r.height;
}

struct LoadedBitmap {
  io::GrayImage img;
  double eps_max;
};

}  // namespace

PermittivityMap rasterize(const std::vector<Shape>& shapes, const Grid& grid) {
  PermittivityMap map;
  map.grid = grid;
  map.eps.assign(static_cast<size_t>(grid.cell_count()), cplx{1.0, 0.0});

  // Bitmaps are loaded once up front so painter's order stays a pure loop.
  std::vector<LoadedBitmap> bitmaps;
  for (const auto& s : shapes) {
    if (const auto* bm = std::get_if<Bitmap>(&s.geometry)) {
      bitmaps.push_back({io::read_pgm(bm->path), bm->eps_max});
    }
  }

  const double half = grid.half_width();
  const double L = grid.side_length_m;
  size_t bitmap_idx = 0;
  for (const auto& s : shapes) {
    size_t this_bitmap = 0;
    if (std::holds_alternative<Bitmap>(s.geometry)) this_bitmap = bitmap_idx++;
    for (int i = 0; i < grid.cell_count(); ++i) {
      const Point& p = grid.cell_centers[static_cast<size_t>(i)];
      std::visit(
          [&](const auto& geom) {
            using T = std::decay_t<decltype(geom)>;
            if constexpr (std::is_same_v<T, Bitmap>) {
              const auto& lb = bitmaps[this_bitmap];
              // domain -> pixel: u right, v down from the top-left corner
              const double u = (p[0] + half) / L;
              const double v = (half - p[1]) / L;
              int col = std::min(lb.img.width - 1,
                                 std::max(0, static_cast<int>(u * lb.img.width)));
              int row = std::min(lb.img.height - 1,
                                 std::max(0, static_cast<int>(v * lb.img.height)));
              const double val =
                  lb.img.pixels[static_cast<size_t>(row) * lb.img.width + col] /
                  static_cast<double>(lb.img.maxval);
              map.eps[static_cast<size_t>(i)] = cplx{1.0 + val * (lb.eps_max - 1.0), 0.0};
            } else {
              if (contains(geom, p)) map.eps[static_cast<size_t>(i)] = s.epsilon;
            }
          },
          s.geometry);
    }
  }
  return map;
}

std::vector<Shape> austria_preset(double side_length_m, cplx epsilon) {
  if (!(side_length_m > 0.0))
    throw ValidationError("austria_preset: side_length_m must be > 0");
  const double L = side_length_m;
  return {
      Shape::disc({-0.17 * L, 0.25 * L}, 0.10 * L, epsilon),
      Shape::disc({+0.17 * L, 0.25 * L}, 0.10 * L, epsilon),
      Shape::annulus({0.0, -0.10 * L}, 0.15 * L, 0.30 * L, epsilon),
  };
}

std::vector<Point> jitter_coordinates(const Grid& grid, double sigma_m, Rng& rng) {
  if (sigma_m < 0.0)
    throw ValidationError("jitter_coordinates: sigma_m must be >= 0");
  std::vector<Point> out = grid.cell_centers;
  if (sigma_m == 0.0) return out;
  for (auto& p : out) {
    p[0] += sigma_m * rng.gauss();
    p[1] += sigma_m * rng.gauss();
  }
  return out;
}

}  // namespace emscat::scene
