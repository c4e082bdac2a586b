#include "crispedge/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>

#include "crispedge/errors.hpp"
#include "crispedge/evalbench.hpp"
#include "crispedge/io.hpp"
#include "crispedge/parallel.hpp"

namespace crispedge {

void GenConfig::validate() const {
  if (count < 1) throw ContractError("gen: count must be >= 1");
  if (height < 16 || width < 16) throw ContractError("gen: images must be at least 16x16");
  if (channels != 1 && channels != 3) throw ContractError("gen: channels must be 1 or 3");
  if (annotators < 1) throw ContractError("gen: need at least one annotator");
  if (!(jitter >= 0.0) || !std::isfinite(jitter)) throw ContractError("gen: jitter must be >= 0");
  if (holdout_percent < 0 || holdout_percent > 100) throw ContractError("gen: holdout_percent must be in [0, 100]");
}

std::string holdout_split(const std::string& id, int percent) {
  return fnv1a(id) % 100 < static_cast<std::uint64_t>(percent) ? "test" : "train";
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kOutlineStep = 0.2;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct OutlinePoint {
  double y, x;    // on the true outline
  double ny, nx;  // outward unit normal
  double s;       // arc length
};

/// A filled convex region: a disk or a polygon.
struct Region {
  bool disk = false;
  double cy = 0, cx = 0, r = 0;
  std::vector<std::array<double, 2>> verts;  // (y, x), consistent winding

  [[nodiscard]] bool inside(double y, double x) const {
    if (disk) return (y - cy) * (y - cy) + (x - cx) * (x - cx) < r * r;
    double sign = 0.0;
    for (std::size_t i = 0; i < verts.size(); ++i) {
      const auto& a = verts[i];
      const auto& b = verts[(i + 1) % verts.size()];
      const double cross = (b[1] - a[1]) * (y - a[0]) - (b[0] - a[0]) * (x - a[1]);
      if (cross == 0.0) return false;
      if (sign == 0.0) sign = cross;
      if ((cross > 0) != (sign > 0)) return false;
    }
    return true;
  }

  [[nodiscard]] std::vector<OutlinePoint> outline() const {
    std::vector<OutlinePoint> pts;
    if (disk) {
      const int n = std::max(8, static_cast<int>(std::ceil(kTwoPi * r / kOutlineStep)));
      for (int i = 0; i < n; ++i) {
        const double t = kTwoPi * i / n;
        pts.push_back({cy + r * std::sin(t), cx + r * std::cos(t), std::sin(t), std::cos(t), r * t});
      }
      return pts;
    }
    double my = 0, mx = 0;
    for (const auto& v : verts) {
      my += v[0] / verts.size();
      mx += v[1] / verts.size();
    }
    double s = 0.0;
    for (std::size_t i = 0; i < verts.size(); ++i) {
      const auto& a = verts[i];
      const auto& b = verts[(i + 1) % verts.size()];
      const double len = std::hypot(b[0] - a[0], b[1] - a[1]);
      double ny = -(b[1] - a[1]) / len;
      double nx = (b[0] - a[0]) / len;
      const double midy = 0.5 * (a[0] + b[0]) - my;
      const double midx = 0.5 * (a[1] + b[1]) - mx;
      if (ny * midy + nx * midx < 0) {
        ny = -ny;
        nx = -nx;
      }
      const int n = std::max(1, static_cast<int>(std::ceil(len / kOutlineStep)));
      for (int k = 0; k < n; ++k) {
        const double f = static_cast<double>(k) / n;
        pts.push_back({a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), ny, nx, s + f * len});
      }
      s += len;
    }
    return pts;
  }
};

Region random_region(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double m = std::min(h, w);
  Region g;
  const double cy = h * (0.2 + 0.6 * u(rng));
  const double cx = w * (0.2 + 0.6 * u(rng));
  switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
    case 0:
      g.disk = true;
      g.cy = cy;
      g.cx = cx;
      g.r = m * (0.1 + 0.2 * u(rng));
      break;
    case 1: {
      const double a = m * (0.08 + 0.17 * u(rng));
      const double b = m * (0.08 + 0.17 * u(rng));
      const double t = std::numbers::pi * u(rng);
      const double c = std::cos(t), s = std::sin(t);
      for (auto [p, q] : {std::pair{-a, -b}, std::pair{a, -b}, std::pair{a, b}, std::pair{-a, b}}) {
        g.verts.push_back({cy + p * s + q * c, cx + p * c - q * s});
      }
      break;
    }
    default: {
      const double base = kTwoPi * u(rng);
      for (int i = 0; i < 3; ++i) {
        const double t = base + i * kTwoPi / 3 + 0.8 * (u(rng) - 0.5);
        const double r = m * (0.12 + 0.18 * u(rng));
        g.verts.push_back({cy + r * std::sin(t), cx + r * std::cos(t)});
      }
      break;
    }
  }
  return g;
}

/// Smooth periodic normal offset with |offset| <= amplitude.
struct Wobble {
  std::array<double, 3> weight{}, phase{};
  std::array<int, 3> freq{};
  double amplitude = 0.0;

  [[nodiscard]] double at(double s, double perimeter) const {
    if (amplitude == 0.0) return 0.0;
    double v = 0.0;
    for (int k = 0; k < 3; ++k) v += weight[k] * std::sin(kTwoPi * freq[k] * s / perimeter + phase[k]);
    return amplitude * v;
  }
};

Wobble random_wobble(std::mt19937_64& rng, double amplitude) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Wobble wb;
  wb.amplitude = amplitude;
  double total = 0.0;
  for (int k = 0; k < 3; ++k) {
    wb.weight[k] = 0.2 + 0.8 * u(rng);
    wb.phase[k] = kTwoPi * u(rng);
    wb.freq[k] = std::uniform_int_distribution<int>(1, 4)(rng);
    total += wb.weight[k];
  }
  for (double& v : wb.weight) v /= total;
  return wb;
}

Sample generate_one(const GenConfig& cfg, int index) {
  std::mt19937_64 rng(mix(cfg.seed ^ mix(static_cast<std::uint64_t>(index))));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int h = cfg.height;
  const int w = cfg.width;
  const int nc = cfg.channels;

  std::vector<double> base(nc), gy(nc), gx(nc);
  for (int c = 0; c < nc; ++c) {
    base[c] = 0.15 + 0.7 * u(rng);
    gy[c] = 0.3 * (u(rng) - 0.5);
    gx[c] = 0.3 * (u(rng) - 0.5);
  }
  const int nshapes = std::uniform_int_distribution<int>(1, 4)(rng);
  std::vector<Region> regions;
  std::vector<std::vector<double>> colors;
  for (int k = 0; k < nshapes; ++k) {
    regions.push_back(random_region(rng, h, w));
    std::vector<double> col(nc);
    for (;;) {
      double diff = 0.0;
      for (int c = 0; c < nc; ++c) {
        col[c] = u(rng);
        diff += std::abs(col[c] - base[c]) / nc;
      }
      if (diff >= 0.3) break;
    }
    colors.push_back(col);
  }

  Sample s;
  char id[32];
  std::snprintf(id, sizeof id, "s%04d", index);
  s.id = id;
  s.split = holdout_split(s.id, cfg.holdout_percent);
  s.image = Tensor(Shape{1, nc, h, w});
  std::normal_distribution<double> noise(0.0, 0.03);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int top = -1;
      for (int k = 0; k < nshapes; ++k)
        if (regions[k].inside(y + 0.5, x + 0.5)) top = k;
      for (int c = 0; c < nc; ++c) {
        const double v = top < 0 ? base[c] + gy[c] * (y + 0.5) / h + gx[c] * (x + 0.5) / w : colors[top][c];
        s.image.at(0, c, y, x) = std::clamp(v + noise(rng), 0.0, 1.0);
      }
    }

  // Visible outline samples: on the image and not covered by a later shape.
  std::vector<std::vector<OutlinePoint>> visible(nshapes);
  std::vector<double> perimeter(nshapes, 1.0);
  for (int k = 0; k < nshapes; ++k) {
    std::vector<OutlinePoint> pts = regions[k].outline();
    if (!pts.empty()) perimeter[k] = std::max(1.0, pts.back().s);
    for (const OutlinePoint& p : pts) {
      if (p.y < 0 || p.y >= h || p.x < 0 || p.x >= w) continue;
      bool covered = false;
      for (int j = k + 1; j < nshapes && !covered; ++j) covered = regions[j].inside(p.y, p.x);
      if (!covered) visible[k].push_back(p);
    }
  }
  auto trace = [&](const std::vector<Wobble>* wobble) {
    BoundaryMap b(h, w, 0);
    for (int k = 0; k < nshapes; ++k) {
      // Walk the pixels in outline order, dropping staircase corners so the
      // raster is an 8-connected chain before any thinning.
      std::vector<std::pair<int, int>> path;
      for (const OutlinePoint& p : visible[k]) {
        const double d = wobble ? (*wobble)[k].at(p.s, perimeter[k]) : 0.0;
        const std::pair<int, int> q{static_cast<int>(std::floor(p.y + d * p.ny)),
                                    static_cast<int>(std::floor(p.x + d * p.nx))};
        auto near = [&](const std::pair<int, int>& a) {
          return std::abs(a.first - q.first) <= 1 && std::abs(a.second - q.second) <= 1;
        };
        while (path.size() >= 2 && near(path[path.size() - 2])) path.pop_back();
        if (path.empty() || path.back() != q) path.push_back(q);
      }
      for (auto [yy, xx] : path)
        if (b.contains(yy, xx)) b(yy, xx) = 1;
    }
    return thin(std::move(b));
  };
  s.outline = trace(nullptr);
  std::vector<BoundaryMap> maps;
  for (int a = 0; a < cfg.annotators; ++a) {
    std::vector<Wobble> wobble;
    for (int k = 0; k < nshapes; ++k) wobble.push_back(random_wobble(rng, cfg.jitter));
    maps.push_back(trace(&wobble));
  }
  s.annotations = AnnotationSet(std::move(maps));
  return s;
}

}  // namespace

std::vector<Sample> gen_synthetic(const GenConfig& config) {
  config.validate();
  std::vector<Sample> out(config.count);
  parallel_for(out.size(), config.jobs, [&](std::size_t i) { out[i] = generate_one(config, static_cast<int>(i)); });
  return out;
}

void AugmentSpec::validate() const {
  if (!(scale_lo > 0.0) || !(scale_hi >= scale_lo) || !std::isfinite(scale_hi)) {
    throw ContractError("augment: need 0 < scale_lo <= scale_hi");
  }
  if (rotations.empty()) throw ContractError("augment: at least one rotation angle is required");
  for (double a : rotations) {
    if (!std::isfinite(a)) throw ContractError("augment: rotation angles must be finite");
  }
  if (crop && (crop->first < 1 || crop->second < 1)) throw ContractError("augment: crop must be positive");
}

namespace {

BoundaryMap mirror(const BoundaryMap& b) {
  BoundaryMap out(b.rows(), b.cols(), 0);
  for (int r = 0; r < b.rows(); ++r)
    for (int c = 0; c < b.cols(); ++c) out(r, c) = b(r, b.cols() - 1 - c);
  return out;
}

Tensor mirror(const Tensor& t) {
  const Shape& s = t.shape();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) = t.at(n, c, y, s.w - 1 - x);
  return out;
}

/// Counter-clockwise quarter turn.
BoundaryMap quarter_turn(const BoundaryMap& b) {
  BoundaryMap out(b.cols(), b.rows(), 0);
  for (int r = 0; r < b.rows(); ++r)
    for (int c = 0; c < b.cols(); ++c) out(b.cols() - 1 - c, r) = b(r, c);
  return out;
}

Tensor quarter_turn(const Tensor& t) {
  const Shape& s = t.shape();
  Tensor out(Shape{s.n, s.c, s.w, s.h});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(n, c, s.w - 1 - x, y) = t.at(n, c, y, x);
  return out;
}

/// Continuous-coordinate affine map (pixel i spans [i, i+1)).
struct Affine {
  double a, b, c, d, ty, tx;  // y' = a y + b x + ty ; x' = c y + d x + tx

  [[nodiscard]] std::pair<double, double> apply(double y, double x) const {
    return {a * y + b * x + ty, c * y + d * x + tx};
  }
  [[nodiscard]] Affine inverse() const {
    const double det = a * d - b * c;
    Affine inv{d / det, -b / det, -c / det, a / det, 0, 0};
    inv.ty = -(inv.a * ty + inv.b * tx);
    inv.tx = -(inv.c * ty + inv.d * tx);
    return inv;
  }
};

Tensor warp_image(const Tensor& src, const Affine& inv, int oh, int ow) {
  const Shape& s = src.shape();
  Tensor out(Shape{s.n, s.c, oh, ow});
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      auto [qy, qx] = inv.apply(y + 0.5, x + 0.5);
      const double fy = std::clamp(qy - 0.5, 0.0, s.h - 1.0);
      const double fx = std::clamp(qx - 0.5, 0.0, s.w - 1.0);
      const int y0 = static_cast<int>(std::floor(fy));
      const int x0 = static_cast<int>(std::floor(fx));
      const int y1 = std::min(y0 + 1, s.h - 1);
      const int x1 = std::min(x0 + 1, s.w - 1);
      const double wy = fy - y0;
      const double wx = fx - x0;
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          out.at(n, c, y, x) = (1 - wy) * ((1 - wx) * src.at(n, c, y0, x0) + wx * src.at(n, c, y0, x1)) +
                               wy * ((1 - wx) * src.at(n, c, y1, x0) + wx * src.at(n, c, y1, x1));
        }
    }
  return out;
}

BoundaryMap warp_boundary(const BoundaryMap& src, const Affine& fwd, const Affine& inv, int oh, int ow) {
  BoundaryMap out(oh, ow, 0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      auto [qy, qx] = inv.apply(y + 0.5, x + 0.5);
      const int sy = static_cast<int>(std::floor(qy));
      const int sx = static_cast<int>(std::floor(qx));
      if (src.contains(sy, sx) && src(sy, sx)) out(y, x) = 1;
    }
  for (int y = 0; y < src.rows(); ++y)
    for (int x = 0; x < src.cols(); ++x) {
      if (!src(y, x)) continue;
      auto [py, px] = fwd.apply(y + 0.5, x + 0.5);
      const int dy = static_cast<int>(std::floor(py));
      const int dx = static_cast<int>(std::floor(px));
      if (out.contains(dy, dx)) out(dy, dx) = 1;
    }
  return thin(std::move(out));
}

Sample map_sample(const Sample& s, const std::function<Tensor(const Tensor&)>& fi,
                  const std::function<BoundaryMap(const BoundaryMap&)>& fb) {
  Sample out;
  out.id = s.id;
  out.split = s.split;
  out.image = fi(s.image);
  std::vector<BoundaryMap> maps;
  for (const BoundaryMap& m : s.annotations.maps()) maps.push_back(fb(m));
  out.annotations = AnnotationSet(std::move(maps));
  if (!s.outline.empty()) out.outline = fb(s.outline);
  return out;
}

Sample rotate_scale(const Sample& s, double degrees, double scale) {
  const double turns = degrees / 90.0;
  if (scale == 1.0 && turns == std::round(turns)) {
    const int k = static_cast<int>(((static_cast<long>(std::round(turns)) % 4) + 4) % 4);
    Sample out = s;
    for (int i = 0; i < k; ++i) {
      out = map_sample(out, [](const Tensor& t) { return quarter_turn(t); },
                       [](const BoundaryMap& b) { return quarter_turn(b); });
    }
    return out;
  }
  const int h = s.image.shape().h;
  const int w = s.image.shape().w;
  const int hs = std::max(1, static_cast<int>(std::lround(h * scale)));
  const int ws = std::max(1, static_cast<int>(std::lround(w * scale)));
  const double t = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(t);
  const double sn = std::sin(t);
  const bool swap = std::abs(sn) > std::abs(cs);
  const int oh = swap ? ws : hs;
  const int ow = swap ? hs : ws;
  const double ky = static_cast<double>(hs) / h;
  const double kx = static_cast<double>(ws) / w;
  // Scale about the origin, then rotate about the centres:
  // y' = cos (y_s - hs/2) - sin (x_s - ws/2) + oh/2 ; x' = sin (y_s - hs/2) + cos (x_s - ws/2) + ow/2
  Affine fwd{cs * ky, -sn * kx, sn * ky, cs * kx, 0, 0};
  fwd.ty = -cs * hs / 2.0 + sn * ws / 2.0 + oh / 2.0;
  fwd.tx = -sn * hs / 2.0 - cs * ws / 2.0 + ow / 2.0;
  const Affine inv = fwd.inverse();
  return map_sample(s, [&](const Tensor& im) { return warp_image(im, inv, oh, ow); },
                    [&](const BoundaryMap& b) { return warp_boundary(b, fwd, inv, oh, ow); });
}

Sample crop_sample(const Sample& s, int oy, int ox, int ch, int cw) {
  auto ci = [&](const Tensor& t) {
    const Shape& sh = t.shape();
    Tensor out(Shape{sh.n, sh.c, ch, cw});
    for (int n = 0; n < sh.n; ++n)
      for (int c = 0; c < sh.c; ++c)
        for (int y = 0; y < ch; ++y)
          for (int x = 0; x < cw; ++x) out.at(n, c, y, x) = t.at(n, c, oy + y, ox + x);
    return out;
  };
  auto cb = [&](const BoundaryMap& b) {
    BoundaryMap out(ch, cw, 0);
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) out(y, x) = b(oy + y, ox + x);
    return out;
  };
  return map_sample(s, ci, cb);
}

}  // namespace

Sample flip_horizontal(const Sample& s) {
  return map_sample(s, [](const Tensor& t) { return mirror(t); }, [](const BoundaryMap& b) { return mirror(b); });
}

std::vector<Sample> augment(const Sample& sample, const AugmentSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(mix(seed));
  const double scale =
      spec.scale_lo == spec.scale_hi ? spec.scale_lo : std::uniform_real_distribution<double>(spec.scale_lo, spec.scale_hi)(rng);
  std::vector<Sample> out;
  int index = 0;
  for (double angle : spec.rotations) {
    Sample rotated = rotate_scale(sample, angle, scale);
    std::vector<Sample> variants{rotated};
    if (spec.flips) variants.push_back(flip_horizontal(rotated));
    for (Sample& v : variants) {
      if (spec.crop) {
        const auto [ch, cw] = *spec.crop;
        const int h = v.image.shape().h;
        const int w = v.image.shape().w;
        if (ch > h || cw > w) {
          throw ContractError("augment: crop " + std::to_string(ch) + "x" + std::to_string(cw) +
                              " exceeds transformed image " + std::to_string(h) + "x" + std::to_string(w));
        }
        const int oy = std::uniform_int_distribution<int>(0, h - ch)(rng);
        const int ox = std::uniform_int_distribution<int>(0, w - cw)(rng);
        v = crop_sample(v, oy, ox, ch, cw);
      }
      if (spec.rotations.size() > 1 || spec.flips || spec.crop || scale != 1.0) {
        v.id = sample.id + "_a" + std::to_string(index);
      }
      ++index;
      out.push_back(std::move(v));
    }
  }
  return out;
}

std::filesystem::path save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  Manifest m;
  for (const Sample& s : samples) {
    ManifestEntry e;
    e.id = s.id;
    e.image = "images/" + s.id + ".crb";
    e.split = s.split;
    write_crb(s.image, dir / e.image);
    for (std::size_t k = 0; k < s.annotations.size(); ++k) {
      const std::string rel = "annotations/" + s.id + "_" + std::to_string(k) + ".pgm";
      write_pgm(s.annotations[k], dir / rel);
      e.annotations.push_back(rel);
    }
    m.entries.push_back(std::move(e));
  }
  const std::filesystem::path path = dir / "manifest.tsv";
  m.write(path);
  return path;
}

std::vector<Sample> load_dataset(const std::filesystem::path& manifest) {
  const Manifest m = Manifest::read(manifest);
  const std::filesystem::path base = manifest.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  std::vector<Sample> out;
  for (const ManifestEntry& e : m.entries) {
    Sample s;
    s.id = e.id;
    s.split = e.split;
    s.image = read_crb(resolve(e.image));
    if (s.image.shape().n != 1) throw ShapeError(e.id + ": image blob must hold a single image");
    std::vector<BoundaryMap> maps;
    for (const std::string& a : e.annotations) maps.push_back(read_pgm(resolve(a)));
    s.annotations = AnnotationSet(std::move(maps));
    if (s.annotations.rows() != s.image.shape().h || s.annotations.cols() != s.image.shape().w) {
      throw ShapeError(e.id + ": annotation size differs from the image");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::pair<std::vector<Sample>, std::vector<Sample>> partition(const std::vector<Sample>& samples) {
  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (const Sample& s : samples) (s.split == "test" ? out.second : out.first).push_back(s);
  return out;
}

}  // namespace crispedge
