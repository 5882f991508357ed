#pragma once

#include <array>
#include <string>
#include <variant>
#include <vector>

#include "emscat/common.hpp"

namespace emscat::scene {

using Point = std::array<double, 2>;  // (x, y) in meters

// Uniform square discretization of the sensing domain D, centered on the
// origin. Cells are ordered row-major with row 0 at the top of the image
// (y = +L/2 - dx/2), columns left to right; this matches the PGM export and
// bitmap import orientation.
struct Grid {
  int n_side = 0;
  double side_length_m = 0.0;
  std::vector<Point> cell_centers;  // N = n_side^2 entries

  int cell_count() const { return n_side * n_side; }
  double spacing() const { return side_length_m / n_side; }
  double half_width() const { return 0.5 * side_length_m; }
};

Grid build_grid(int n_side, double side_length_m);

// True when p lies strictly outside the square domain covered by the grid.
bool outside_domain(const Grid& grid, const Point& p);

struct Disc {
  Point center;
  double radius;
};
struct Annulus {
  Point center;
  double r_inner;
  double r_outer;
};
struct Rectangle {
  Point center;
  double width;
  double height;
};
// Grayscale image stretched over the whole domain; pixel intensity v in [0,1]
// maps to eps = 1 + v*(eps_max - 1). Stands in for dataset-image scenes.
struct Bitmap {
  std::string path;
  double eps_max;
};

struct Shape {
  std::variant<Disc, Annulus, Rectangle, Bitmap> geometry;
  cplx epsilon{1.0, 0.0};  // ignored by Bitmap (per-pixel value)

  static Shape disc(Point center, double radius, cplx eps);
  static Shape annulus(Point center, double r_inner, double r_outer, cplx eps);
  static Shape rectangle(Point center, double w, double h, cplx eps);
  static Shape bitmap(std::string path, double eps_max);
};

// Discrete relative permittivity over a grid. Background cells are exactly
// 1+0j; generated scenes keep Re(eps) >= 1 and Im(eps) <= 0 (e^{+jwt} lossy
// convention).
struct PermittivityMap {
  Grid grid;
  std::vector<cplx> eps;  // row-major, grid.cell_count() entries
};

// Painter's order: later shapes overwrite earlier ones where they overlap.
PermittivityMap rasterize(const std::vector<Shape>& shapes, const Grid& grid);

// Two small discs above a large ring: the canonical two-circles-plus-ring
// test profile, scaled to the domain side length. Proportions keep every
// shape inside D with >= 0.05*L clearance.
std::vector<Shape> austria_preset(double side_length_m, cplx epsilon);

// Cell centers perturbed by iid N(0, sigma^2 I_2) noise; sigma 0 returns the
// centers unchanged. Deterministic for a given rng state.
std::vector<Point> jitter_coordinates(const Grid& grid, double sigma_m, Rng& rng);

}  // namespace emscat::scene
