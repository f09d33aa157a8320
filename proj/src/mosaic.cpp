#include "kwd/mosaic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kwd {

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Value noise: random grid nodes, smooth bilinear interpolation.
struct NoiseGrid {
  int nodes;
  double cell;
  std::vector<double> v;

  NoiseGrid(int size, double cell_px, Rng& rng) : cell(cell_px) {
    nodes = static_cast<int>(std::ceil(size / cell_px)) + 2;
    v.resize(static_cast<std::size_t>(nodes) * nodes);
    for (double& x : v) x = rng.uniform();
  }

  double at(double px, double py) const {
    const double gx = px / cell, gy = py / cell;
    const int x0 = static_cast<int>(gx), y0 = static_cast<int>(gy);
    const double fx = smoothstep(gx - x0), fy = smoothstep(gy - y0);
    auto node = [&](int yy, int xx) { return v[static_cast<std::size_t>(yy) * nodes + xx]; };
    const double a = node(y0, x0) + (node(y0, x0 + 1) - node(y0, x0)) * fx;
    const double b = node(y0 + 1, x0) + (node(y0 + 1, x0 + 1) - node(y0 + 1, x0)) * fx;
    return a + (b - a) * fy;
  }
};

void blend(Image& im, int r, int c, double cov, double red, double green, double blue) {
  if (r < 0 || c < 0 || r >= im.h || c >= im.w || cov <= 0.0) return;
  cov = std::min(cov, 1.0);
  im.at(r, c, 0) += cov * (red - im.at(r, c, 0));
  im.at(r, c, 1) += cov * (green - im.at(r, c, 1));
  im.at(r, c, 2) += cov * (blue - im.at(r, c, 2));
}

void draw_disk(Image& im, double cy, double cx, double radius, double red, double green, double blue,
               double opacity = 1.0) {
  const int r0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
  const int r1 = std::min(im.h - 1, static_cast<int>(std::ceil(cy + radius + 1)));
  const int c0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
  const int c1 = std::min(im.w - 1, static_cast<int>(std::ceil(cx + radius + 1)));
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const double d = std::hypot(r - cy, c - cx);
      const double cov = std::clamp(radius - d + 0.5, 0.0, 1.0) * opacity;
      blend(im, r, c, cov, red, green, blue);
    }
}

// Rotated ellipse with semi-axes a >= b, soft edge.
void draw_ellipse(Image& im, double cy, double cx, double a, double b, double theta, double red, double green,
                  double blue) {
  const double ext = a + 1.5;
  const int r0 = std::max(0, static_cast<int>(std::floor(cy - ext)));
  const int r1 = std::min(im.h - 1, static_cast<int>(std::ceil(cy + ext)));
  const int c0 = std::max(0, static_cast<int>(std::floor(cx - ext)));
  const int c1 = std::min(im.w - 1, static_cast<int>(std::ceil(cx + ext)));
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const double dy = r - cy, dx = c - cx;
      const double u = (dx * ct + dy * st) / a;
      const double v = (-dx * st + dy * ct) / b;
      const double rho = std::sqrt(u * u + v * v);
      const double cov = std::clamp((1.0 - rho) * b + 0.5, 0.0, 1.0);
      blend(im, r, c, cov, red, green, blue);
    }
}

// Axis-aligned half-extents of a rotated ellipse.
void ellipse_extent(double a, double b, double theta, double& ex, double& ey) {
  const double ct = std::cos(theta), st = std::sin(theta);
  ex = std::sqrt(a * a * ct * ct + b * b * st * st);
  ey = std::sqrt(a * a * st * st + b * b * ct * ct);
}

struct AnimalPlan {
  double cy, cx, a, b, theta;
  double red, green, blue;
  bool beneath = false;
  double tree_cy = 0, tree_cx = 0, tree_r = 0;
  Box box;
};

}  // namespace

bool boxes_intersect(int ax, int ay, int aw, int ah, const Box& b) {
  return ax < b.x + b.w && b.x < ax + aw && ay < b.y + b.h && b.y < ay + ah;
}

Mosaic generate_mosaic(const MosaicSpec& spec, Rng& rng) {
  if (spec.size < 32) throw std::invalid_argument("mosaic: size must be at least 32");
  auto check_range = [](int lo, int hi, const char* what) {
    if (lo < 0 || hi < lo) throw std::invalid_argument(std::string("mosaic: bad range for ") + what);
  };
  check_range(spec.animals_min, spec.animals_max, "animals");
  check_range(spec.trees_min, spec.trees_max, "trees");
  check_range(spec.trunks_min, spec.trunks_max, "trunks");
  check_range(spec.tire_marks_min, spec.tire_marks_max, "tire marks");
  check_range(spec.grass_min, spec.grass_max, "grass");
  if (spec.animal_px_min < 3 || spec.animal_px_max < spec.animal_px_min ||
      spec.animal_px_max > spec.size / 4)
    throw std::invalid_argument("mosaic: animal size range invalid for this mosaic size");

  const int S = spec.size;
  // One derived stream per element category: dropping a category leaves the
  // rest of the scene bit-identical.
  const std::uint64_t base = rng.u64();
  Rng bg_rng = derive_rng(base, {tag("bg")});
  Rng grass_rng = derive_rng(base, {tag("grass")});
  Rng tire_rng = derive_rng(base, {tag("tire")});
  Rng trunk_rng = derive_rng(base, {tag("trunk")});
  Rng tree_rng = derive_rng(base, {tag("tree")});
  Rng animal_rng = derive_rng(base, {tag("animal")});

  Mosaic m;
  m.image = Image(S, S);

  // Background: two-octave value noise blending sand and green tones.
  {
    NoiseGrid coarse(S, 24.0, bg_rng);
    NoiseGrid fine(S, 7.0, bg_rng);
    const double sand[3] = {0.78, 0.70, 0.52};
    const double green[3] = {0.36, 0.46, 0.28};
    for (int r = 0; r < S; ++r)
      for (int c = 0; c < S; ++c) {
        const double n = 0.65 * coarse.at(c, r) + 0.35 * fine.at(c, r);
        const double speck = (bg_rng.uniform() - 0.5) * 0.04;
        for (int ch = 0; ch < 3; ++ch) {
          const double v = sand[ch] + (green[ch] - sand[ch]) * n + speck;
          m.image.at(r, c, ch) = std::clamp(v, 0.0, 1.0);
        }
      }
  }

  // Grass patches: darker green speckled disks.
  {
    const int n = grass_rng.uniform_int(spec.grass_min, spec.grass_max);
    for (int i = 0; i < n; ++i) {
      const double radius = grass_rng.uniform(8.0, 20.0);
      const double cy = grass_rng.uniform(0.0, S);
      const double cx = grass_rng.uniform(0.0, S);
      const int r0 = std::max(0, static_cast<int>(cy - radius)), r1 = std::min(S - 1, static_cast<int>(cy + radius));
      const int c0 = std::max(0, static_cast<int>(cx - radius)), c1 = std::min(S - 1, static_cast<int>(cx + radius));
      for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) {
          const double d = std::hypot(r - cy, c - cx);
          if (d > radius) continue;
          const double fade = 1.0 - d / radius;
          const double tuft = grass_rng.uniform(0.0, 1.0);
          const double cov = 0.5 * fade * tuft;
          blend(m.image, r, c, cov, 0.25 + 0.1 * tuft, 0.40 + 0.12 * tuft, 0.18);
        }
    }
  }

  // Tire marks: two long parallel dark lines.
  {
    const int n = tire_rng.uniform_int(spec.tire_marks_min, spec.tire_marks_max);
    for (int i = 0; i < n; ++i) {
      const double theta = tire_rng.uniform(0.0, M_PI);
      const double off = tire_rng.uniform(0.2 * S, 0.8 * S);
      const double sep = tire_rng.uniform(3.0, 6.0);
      const double width = tire_rng.uniform(0.9, 1.4);
      const double nx = std::cos(theta), ny = std::sin(theta);
      for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c) {
          const double d = c * nx + r * ny - off;
          const double d1 = std::fabs(d - sep * 0.5), d2 = std::fabs(d + sep * 0.5);
          const double dd = std::min(d1, d2);
          const double cov = std::clamp(width - dd + 0.5, 0.0, 0.8);
          if (cov > 0.0) {
            const double kr = m.image.at(r, c, 0) * 0.55, kg = m.image.at(r, c, 1) * 0.55,
                         kb = m.image.at(r, c, 2) * 0.55;
            blend(m.image, r, c, cov, kr, kg, kb);
          }
        }
    }
  }

  // Dead trunks: thin pale elongated blobs, deliberately animal-like.
  {
    const int n = trunk_rng.uniform_int(spec.trunks_min, spec.trunks_max);
    for (int i = 0; i < n; ++i) {
      const double len = trunk_rng.uniform(10.0, 22.0);
      const double a = len * 0.5;
      const double b = a * trunk_rng.uniform(0.12, 0.25);
      const double theta = trunk_rng.uniform(0.0, M_PI);
      const double margin = a + 2.0;
      const double cy = trunk_rng.uniform(margin, S - margin);
      const double cx = trunk_rng.uniform(margin, S - margin);
      const double tone = trunk_rng.uniform(0.35, 0.55);
      draw_ellipse(m.image, cy, cx, a, b, theta, tone, tone * 0.92, tone * 0.78);
    }
  }

  // Trees: large dark disks with a darker core.
  {
    const int n = tree_rng.uniform_int(spec.trees_min, spec.trees_max);
    for (int i = 0; i < n; ++i) {
      const double radius = tree_rng.uniform(6.0, 12.0);
      const double margin = radius + 1.0;
      const double cy = tree_rng.uniform(margin, S - margin);
      const double cx = tree_rng.uniform(margin, S - margin);
      const double g = tree_rng.uniform(0.16, 0.26);
      draw_disk(m.image, cy, cx, radius, 0.08, g, 0.06);
      draw_disk(m.image, cy, cx, radius * 0.5, 0.05, g * 0.7, 0.04);
    }
  }

  // Animals last. Planning and drawing both use only the animal stream.
  {
    const int n = animal_rng.uniform_int(spec.animals_min, spec.animals_max);
    std::vector<AnimalPlan> plans;
    for (int i = 0; i < n; ++i) {
      AnimalPlan p;
      const double len = animal_rng.uniform(spec.animal_px_min, spec.animal_px_max);
      p.a = len * 0.5;
      p.b = std::max(0.8, p.a * animal_rng.uniform(0.35, 0.6));
      p.theta = animal_rng.uniform(0.0, M_PI);
      if (animal_rng.bernoulli(0.5)) {  // bright body (sheep-like)
        p.red = animal_rng.uniform(0.86, 0.98);
        p.green = p.red * animal_rng.uniform(0.92, 1.0);
        p.blue = p.green * animal_rng.uniform(0.85, 0.98);
      } else {  // dark body (cattle-like)
        p.red = animal_rng.uniform(0.05, 0.16);
        p.green = p.red * animal_rng.uniform(0.8, 1.0);
        p.blue = p.green * animal_rng.uniform(0.7, 1.0);
      }
      p.beneath = animal_rng.bernoulli(spec.beneath_tree_p);
      if (p.beneath) p.tree_r = animal_rng.uniform(5.0, 9.0);

      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        double ex, ey;
        ellipse_extent(p.a, p.b, p.theta, ex, ey);
        double lox = ex + 2.0, loy = ey + 2.0, hix = S - ex - 2.0, hiy = S - ey - 2.0;
        if (p.beneath) {
          const double pad = p.tree_r * 1.2 + 2.0;
          lox = std::max(lox, pad);
          loy = std::max(loy, pad);
          hix = std::min(hix, S - pad);
          hiy = std::min(hiy, S - pad);
        }
        if (!(lox < hix && loy < hiy)) break;
        p.cx = animal_rng.uniform(lox, hix);
        p.cy = animal_rng.uniform(loy, hiy);
        double x0 = p.cx - ex, x1 = p.cx + ex, y0 = p.cy - ey, y1 = p.cy + ey;
        if (p.beneath) {
          const double ang = animal_rng.uniform(0.0, 2.0 * M_PI);
          const double dist = p.tree_r * animal_rng.uniform(0.7, 1.1);
          p.tree_cx = p.cx + dist * std::cos(ang);
          p.tree_cy = p.cy + dist * std::sin(ang);
          x0 = std::min(x0, p.tree_cx - p.tree_r);
          x1 = std::max(x1, p.tree_cx + p.tree_r);
          y0 = std::min(y0, p.tree_cy - p.tree_r);
          y1 = std::max(y1, p.tree_cy + p.tree_r);
        }
        Box box;
        box.x = std::max(0, static_cast<int>(std::floor(x0)) - 1);
        box.y = std::max(0, static_cast<int>(std::floor(y0)) - 1);
        box.w = std::min(S, static_cast<int>(std::ceil(x1)) + 2) - box.x;
        box.h = std::min(S, static_cast<int>(std::ceil(y1)) + 2) - box.y;
        box.kind = p.beneath ? "animal_beneath_tree" : "animal";
        bool clash = false;
        for (const AnimalPlan& q : plans)
          if (boxes_intersect(box.x - 2, box.y - 2, box.w + 4, box.h + 4, q.box)) clash = true;
        if (clash) continue;
        p.box = box;
        placed = true;
      }
      if (!placed)
        throw std::runtime_error("mosaic: could not place animal " + std::to_string(i) +
                                 " inside bounds after 100 retries");
      plans.push_back(p);
    }
    for (const AnimalPlan& p : plans) {
      draw_ellipse(m.image, p.cy, p.cx, p.a, p.b, p.theta, p.red, p.green, p.blue);
      if (p.beneath) {
        draw_disk(m.image, p.tree_cy, p.tree_cx, p.tree_r, 0.08, 0.20, 0.06);
        draw_disk(m.image, p.tree_cy, p.tree_cx, p.tree_r * 0.5, 0.05, 0.14, 0.04);
      }
      m.boxes.push_back(p.box);
    }
  }
  return m;
}

std::vector<Mosaic> generate_mosaics(const MosaicSpec& spec, int count, std::uint64_t seed) {
  if (count < 0) throw std::invalid_argument("mosaic: count must be non-negative");
  std::vector<Mosaic> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng = derive_rng(seed, {tag("mosaic"), static_cast<std::uint64_t>(i)});
    out.push_back(generate_mosaic(spec, rng));
  }
  return out;
}

}  // namespace kwd
