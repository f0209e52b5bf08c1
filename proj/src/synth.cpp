#include "vrw/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "vrw/errors.hpp"
#include "vrw/rng.hpp"

namespace vrw {

void validate(const TreeConfig& c) {
  if (c.field_size < 32) throw ValidationError("tree: field_size must be >= 32");
  if (c.branches < 1) throw ValidationError("tree: branches must be >= 1");
  if (!(c.width_min > 0.0) || c.width_max < c.width_min) throw ValidationError("tree: bad width range");
  if (!(c.curvature >= 0.0)) throw ValidationError("tree: curvature must be >= 0");
}

void validate(const RenderConfig& c) {
  if (!(c.contrast >= 0.0 && c.contrast <= 1.0)) throw ValidationError("render: contrast must be in [0, 1]");
  if (!(c.noise_sigma >= 0.0)) throw ValidationError("render: noise_sigma must be >= 0");
  if (!(c.blur_sigma >= 0.0)) throw ValidationError("render: blur_sigma must be >= 0");
  if (!(c.illumination_gradient >= 0.0 && c.illumination_gradient <= 1.0)) {
    throw ValidationError("render: illumination_gradient must be in [0, 1]");
  }
}

void validate(const AnnotationConfig& c) {
  if (c.num_seeds < 0 || c.scribble_len < 0 || c.num_scribbles < 0 || c.bg_scribbles < 0 ||
      c.bg_scribble_len < 1 || c.bg_margin < 0) {
    throw ValidationError("annotation: counts and lengths must be non-negative");
  }
  if (c.num_labels < 2 || c.vessel_label < 0 || c.vessel_label >= c.num_labels || c.background_label < 0 ||
      c.background_label >= c.num_labels || c.vessel_label == c.background_label) {
    throw ValidationError("annotation: bad label ids");
  }
}

std::vector<std::pair<int, int>> bresenham(int x0, int y0, int x1, int y1) {
  std::vector<std::pair<int, int>> out;
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    out.emplace_back(x0, y0);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
  return out;
}

namespace {

struct Pt {
  double x, y;
};

// Rasterizes a quadratic Bezier into an 8-connected path, stopping at the first
// pixel outside the field.
std::vector<std::pair<int, int>> raster_bezier(Pt p0, Pt p1, Pt p2, int size, bool straight) {
  auto inside = [&](int x, int y) { return x >= 0 && y >= 0 && x < size && y < size; };
  std::vector<std::pair<int, int>> path;
  auto append = [&](const std::vector<std::pair<int, int>>& seg) {
    for (const auto& q : seg) {
      if (!inside(q.first, q.second)) return false;
      if (path.empty() || path.back() != q) path.push_back(q);
    }
    return true;
  };
  const int x0 = int(std::lround(p0.x)), y0 = int(std::lround(p0.y));
  if (straight) {
    append(bresenham(x0, y0, int(std::lround(p2.x)), int(std::lround(p2.y))));
    return path;
  }
  const double arc = std::hypot(p1.x - p0.x, p1.y - p0.y) + std::hypot(p2.x - p1.x, p2.y - p1.y);
  const int n = std::max(2, int(std::ceil(2.0 * arc)));
  int px = x0, py = y0;
  if (!append({{px, py}})) return path;
  for (int i = 1; i <= n; ++i) {
    const double t = double(i) / n, s = 1.0 - t;
    const double x = s * s * p0.x + 2 * s * t * p1.x + t * t * p2.x;
    const double y = s * s * p0.y + 2 * s * t * p1.y + t * t * p2.y;
    const int qx = int(std::lround(x)), qy = int(std::lround(y));
    if (qx == px && qy == py) continue;
    if (!append(bresenham(px, py, qx, qy))) break;
    px = qx;
    py = qy;
  }
  // drop corner pixels whose neighbors along the path already touch
  std::vector<std::pair<int, int>> thin;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (!thin.empty() && i + 1 < path.size() && std::abs(thin.back().first - path[i + 1].first) <= 1 &&
        std::abs(thin.back().second - path[i + 1].second) <= 1) {
      continue;
    }
    thin.push_back(path[i]);
  }
  return thin;
}

void stamp_disk(std::vector<std::uint8_t>& mask, int size, int cx, int cy, double radius) {
  const int r = int(std::ceil(radius));
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dx * dx + dy * dy > radius * radius) continue;
      const int x = cx + dx, y = cy + dy;
      if (x >= 0 && y >= 0 && x < size && y < size) mask[std::size_t(y) * size + x] = 1;
    }
  }
}

}  // namespace

VesselTree generate_vessel_tree(std::uint64_t seed, const TreeConfig& config) {
  validate(config);
  Rng rng(seed);
  const int S = config.field_size;
  const bool straight = config.curvature == 0.0;
  VesselTree tree;
  tree.width = tree.height = S;
  tree.mask.assign(std::size_t(S) * S, 0);

  auto control_point = [&](Pt a, Pt b) {
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    const double off = config.curvature * len * 0.5 * rng.normal();
    const double nx = len > 0 ? -(b.y - a.y) / len : 0.0, ny = len > 0 ? (b.x - a.x) / len : 0.0;
    return Pt{0.5 * (a.x + b.x) + off * nx, 0.5 * (a.y + b.y) + off * ny};
  };
  auto add_branch = [&](const std::vector<std::pair<int, int>>& path) {
    std::vector<int> idx;
    idx.reserve(path.size());
    for (const auto& [x, y] : path) idx.push_back(y * S + x);
    tree.branch_paths.push_back(std::move(idx));
    tree.branch_widths.push_back(rng.uniform(config.width_min, config.width_max));
  };

  {
    // trunk from one side of the field to the opposite side
    const double last = S - 1;
    Pt a{0.0, rng.uniform(0.2, 0.8) * last}, b{last, rng.uniform(0.2, 0.8) * last};
    if (rng.coin()) std::swap(a, b);
    if (rng.coin()) {
      std::swap(a.x, a.y);
      std::swap(b.x, b.y);
    }
    const Pt c = control_point(a, b);
    add_branch(raster_bezier(a, c, b, S, straight));
  }

  const int min_len = 8;
  for (int k = 1; k < config.branches; ++k) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const auto& parent = tree.branch_paths[rng.index(int(tree.branch_paths.size()))];
      if (int(parent.size()) < min_len) continue;
      const int n = int(parent.size());
      const int at = int(0.2 * n) + rng.index(std::max(1, int(0.6 * n)));
      const int before = parent[std::max(0, at - 3)], after = parent[std::min(n - 1, at + 3)];
      const double tx = (after % S) - (before % S), ty = (after / S) - (before / S);
      const double base = std::atan2(ty, tx);
      const double turn = rng.uniform(25.0, 65.0) * std::numbers::pi / 180.0 * (rng.coin() ? 1.0 : -1.0);
      const double len = rng.uniform(0.3, 0.6) * S;
      const Pt a{double(parent[at] % S), double(parent[at] / S)};
      const Pt b{a.x + len * std::cos(base + turn), a.y + len * std::sin(base + turn)};
      const Pt c = control_point(a, b);
      auto path = raster_bezier(a, c, b, S, straight);
      if (int(path.size()) < min_len) continue;
      path.erase(path.begin());  // the junction pixel belongs to the parent
      add_branch(path);
      break;
    }
  }

  std::set<int> centerline;
  for (std::size_t b = 0; b < tree.branch_paths.size(); ++b) {
    for (int p : tree.branch_paths[b]) {
      centerline.insert(p);
      stamp_disk(tree.mask, S, p % S, p / S, 0.5 * tree.branch_widths[b]);
    }
  }
  tree.centerline.assign(centerline.begin(), centerline.end());
  return tree;
}

Image render_image(const std::vector<std::uint8_t>& mask, int width, int height, const RenderConfig& config,
                   std::uint64_t seed) {
  validate(config);
  if (mask.size() != std::size_t(width) * height) throw ArgumentError("render_image: mask size mismatch");
  Rng rng(seed);
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double c = std::cos(theta), s = std::sin(theta);
  const double span = std::abs(c) * std::max(1, width - 1) + std::abs(s) * std::max(1, height - 1);
  const double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);
  Image img(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double ramp = config.illumination_gradient * ((x - cx) * c + (y - cy) * s) / span;
      const double bg = 0.5 + ramp;
      img(x, y) = mask[std::size_t(y) * width + x] ? bg * (1.0 - config.contrast) : bg;
    }
  }
  img = gaussian_blur(img, config.blur_sigma);
  for (double& v : img.data) {
    if (config.noise_sigma > 0.0) v += config.noise_sigma * rng.normal();
    v = std::clamp(v, 0.0, 1.0);
  }
  return img;
}

SparseLabels sample_sparse_annotations(const VesselTree& tree, const AnnotationConfig& config, std::uint64_t seed) {
  validate(config);
  if (tree.centerline.empty()) throw AnnotationError("annotation: empty centerline");
  Rng rng(seed);
  const int W = tree.width, H = tree.height;
  SparseLabels out;
  out.num_labels = config.num_labels;
  std::set<int> used;
  auto add = [&](int p, int label, LabelKind kind) {
    if (used.insert(p).second) out.entries.push_back({p, label, kind});
  };

  // centerline seeds evenly spaced along the concatenated branch paths
  std::vector<int> along;
  for (const auto& path : tree.branch_paths) along.insert(along.end(), path.begin(), path.end());
  std::vector<int> distinct(along);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (int(distinct.size()) < config.num_seeds) {
    throw AnnotationError("annotation: centerline has fewer pixels than requested seeds");
  }
  if (config.num_seeds > 0) {
    const double stride = double(along.size()) / config.num_seeds;
    const double offset = rng.uniform() * stride;
    for (int k = 0; k < config.num_seeds; ++k) {
      std::size_t i = std::size_t(offset + k * stride) % along.size();
      while (used.count(along[i])) i = (i + 1) % along.size();
      add(along[i], config.vessel_label, LabelKind::Centerline);
    }
  }

  // vessel scribbles: contiguous runs of a branch path. A scribble that finds no free
  // run of its length takes the longest free run and passes the shortfall on.
  std::vector<std::vector<char>> taken;
  for (const auto& path : tree.branch_paths) taken.emplace_back(path.size(), 0);
  int remaining = config.scribble_len;
  for (int k = 0; remaining > 0 && k < config.num_scribbles + 8; ++k) {
    const int left = std::max(1, config.num_scribbles - k);
    const int want = k < config.num_scribbles ? (remaining + left - 1) / left : remaining;
    struct Run {
      int branch, begin, length;
    };
    std::vector<Run> runs;
    for (int br = 0; br < int(taken.size()); ++br) {
      const int n = int(taken[br].size());
      for (int i = 0; i < n;) {
        if (taken[br][i]) {
          ++i;
          continue;
        }
        int j = i;
        while (j < n && !taken[br][j]) ++j;
        runs.push_back({br, i, j - i});
        i = j;
      }
    }
    if (runs.empty()) break;
    std::vector<Run> fits;
    for (const auto& r : runs) {
      if (r.length >= want) fits.push_back(r);
    }
    Run pick;
    int len = want, start;
    if (!fits.empty()) {
      pick = fits[rng.index(int(fits.size()))];
      start = pick.begin + rng.index(pick.length - want + 1);
    } else {
      pick = *std::max_element(runs.begin(), runs.end(), [](const Run& x, const Run& y) { return x.length < y.length; });
      len = pick.length;
      start = pick.begin;
    }
    const auto& path = tree.branch_paths[pick.branch];
    for (int i = start; i < start + len; ++i) {
      taken[pick.branch][i] = 1;
      add(path[i], config.vessel_label, LabelKind::Scribble);
    }
    remaining -= len;
  }

  // background scribbles: straight runs that stay farther than bg_margin from the mask
  if (config.bg_scribbles > 0) {
    std::vector<std::uint8_t> forbidden(tree.mask.size(), 0);
    const int m = config.bg_margin;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        if (!tree.mask[std::size_t(y) * W + x]) continue;
        for (int dy = -m; dy <= m; ++dy) {
          for (int dx = -m; dx <= m; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (dx * dx + dy * dy <= m * m && xx >= 0 && yy >= 0 && xx < W && yy < H) {
              forbidden[std::size_t(yy) * W + xx] = 1;
            }
          }
        }
      }
    }
    std::vector<int> allowed;
    for (int p = 0; p < W * H; ++p) {
      if (!forbidden[p]) allowed.push_back(p);
    }
    if (allowed.empty()) throw AnnotationError("annotation: no background pixels clear of the vessel margin");
    // start points are stratified over a 3x3 grid of cells, visited in random order
    std::vector<std::vector<int>> cells(9);
    for (int p : allowed) cells[std::min(2, 3 * (p / W) / H) * 3 + std::min(2, 3 * (p % W) / W)].push_back(p);
    std::vector<int> cell_order(9);
    for (int i = 0; i < 9; ++i) cell_order[i] = i;
    for (int i = 9; i > 1; --i) std::swap(cell_order[i - 1], cell_order[rng.index(i)]);
    const int min_len = std::max(1, config.bg_scribble_len / 2);
    for (int k = 0; k < config.bg_scribbles; ++k) {
      const auto& cell = cells[cell_order[k % 9]];
      const auto& pool = cell.empty() ? allowed : cell;
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        const int p = attempt < 100 ? pool[rng.index(int(pool.size()))] : allowed[rng.index(int(allowed.size()))];
        const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const int x1 = p % W + int(std::lround((config.bg_scribble_len - 1) * std::cos(a)));
        const int y1 = p / W + int(std::lround((config.bg_scribble_len - 1) * std::sin(a)));
        std::vector<int> run;
        for (const auto& [x, y] : bresenham(p % W, p / W, x1, y1)) {
          if (x < 0 || y < 0 || x >= W || y >= H || forbidden[std::size_t(y) * W + x] || used.count(y * W + x)) break;
          run.push_back(y * W + x);
        }
        if (int(run.size()) < min_len) continue;
        for (int q : run) add(q, config.background_label, LabelKind::Scribble);
        placed = true;
      }
      if (!placed) throw AnnotationError("annotation: could not place a background scribble");
    }
  }
  return out;
}

SceneRecord benchmark_record(std::uint64_t seed, int tier) {
  if (tier < 0 || tier >= kNumTiers) throw ArgumentError("benchmark_record: tier must be 0, 1 or 2");
  SceneRecord r;
  r.seed = seed;
  r.tier = tier;
  switch (tier) {
    case 0:
      r.render = {0.5, 0.03, 0.8, 0.0};
      break;
    case 1:
      r.render = {0.35, 0.06, 1.0, 0.1};
      break;
    default:
      r.render = {0.25, 0.08, 1.2, 0.2};
      r.tree.branches = 6;
      r.tree.width_min = 2.0;
      r.tree.width_max = 3.0;
      break;
  }
  return r;
}

SyntheticScene generate_scene(const SceneRecord& record) {
  SyntheticScene s;
  s.record = record;
  s.tree = generate_vessel_tree(record.seed, record.tree);
  s.image = render_image(s.tree.mask, s.tree.width, s.tree.height, record.render,
                         record.seed ^ 0x9e3779b97f4a7c15ULL);
  s.labels = sample_sparse_annotations(s.tree, record.annotation, record.seed ^ 0xc2b2ae3d27d4eb4fULL);
  return s;
}

std::vector<SceneRecord> benchmark_suite() {
  std::vector<SceneRecord> out;
  for (int s = 0; s < kBenchmarkScenes; ++s) out.push_back(benchmark_record(s, s / 10));
  return out;
}

}  // namespace vrw
