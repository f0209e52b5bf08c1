#include "vrw/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "vrw/errors.hpp"

namespace vrw {

namespace {

void same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ArgumentError(std::string(what) + ": mask sizes differ");
}

void check_raster(std::size_t n, int w, int h, const char* what) {
  if (w < 0 || h < 0 || n != std::size_t(w) * h) throw ArgumentError(std::string(what) + ": bad raster shape");
}

}  // namespace

OverlapScores dice_iou_pr(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  same_size(pred.size(), gt.size(), "dice_iou_pr");
  std::size_t tp = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    tp += a && b;
    np += a;
    ng += b;
  }
  if (np == 0 && ng == 0) return {1.0, 1.0, 1.0, 1.0};
  OverlapScores s;
  s.dice = 2.0 * tp / double(np + ng);
  s.iou = tp / double(np + ng - tp);
  s.precision = np ? tp / double(np) : 0.0;
  s.recall = ng ? tp / double(ng) : 0.0;
  return s;
}

Mask zhang_suen_thinning(std::span<const std::uint8_t> mask, int w, int h) {
  check_raster(mask.size(), w, h, "zhang_suen_thinning");
  Mask img(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) img[i] = mask[i] != 0;
  auto at = [&](int x, int y) -> int { return x < 0 || y < 0 || x >= w || y >= h ? 0 : img[std::size_t(y) * w + x]; };
  std::vector<int> del;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      del.clear();
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (!img[std::size_t(y) * w + x]) continue;
          // P2..P9 clockwise from north
          const int p[8] = {at(x, y - 1), at(x + 1, y - 1), at(x + 1, y), at(x + 1, y + 1),
                            at(x, y + 1), at(x - 1, y + 1), at(x - 1, y), at(x - 1, y - 1)};
          int b = 0, a = 0;
          for (int k = 0; k < 8; ++k) {
            b += p[k];
            a += p[k] == 0 && p[(k + 1) % 8] == 1;
          }
          if (b < 2 || b > 6 || a != 1) continue;
          const bool ok = pass == 0 ? (p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0)
                                    : (p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0);
          if (ok) del.push_back(y * w + x);
        }
      }
      for (int i : del) img[i] = 0;
      changed = changed || !del.empty();
    }
  }
  return img;
}

namespace {

// Fraction of `from` pixels within `tol` of some `to` pixel.
double matched_fraction(const Mask& from, const Mask& to, int w, int h, double tol) {
  const int r = int(std::floor(tol));
  std::size_t total = 0, hit = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!from[std::size_t(y) * w + x]) continue;
      ++total;
      bool found = false;
      for (int dy = -r; dy <= r && !found; ++dy) {
        for (int dx = -r; dx <= r && !found; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
          found = to[std::size_t(yy) * w + xx] && dx * dx + dy * dy <= tol * tol;
        }
      }
      hit += found;
    }
  }
  return total ? double(hit) / total : 0.0;
}

}  // namespace

double centerline_f1(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int w, int h,
                     double tolerance) {
  same_size(pred.size(), gt.size(), "centerline_f1");
  check_raster(pred.size(), w, h, "centerline_f1");
  if (!(tolerance >= 0.0)) throw ArgumentError("centerline_f1: tolerance must be >= 0");
  const Mask sp = zhang_suen_thinning(pred, w, h), sg = zhang_suen_thinning(gt, w, h);
  const bool ep = std::none_of(sp.begin(), sp.end(), [](auto v) { return v != 0; });
  const bool eg = std::none_of(sg.begin(), sg.end(), [](auto v) { return v != 0; });
  if (ep && eg) return 1.0;
  if (ep || eg) return 0.0;
  const double precision = matched_fraction(sp, sg, w, h, tolerance);
  const double recall = matched_fraction(sg, sp, w, h, tolerance);
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

int count_components(std::span<const std::uint8_t> mask, int w, int h) {
  check_raster(mask.size(), w, h, "count_components");
  std::vector<char> seen(mask.size(), 0);
  std::vector<int> stack;
  int count = 0;
  for (int start = 0; start < w * h; ++start) {
    if (!mask[start] || seen[start]) continue;
    ++count;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int x = p % w, y = p / w;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
          const int q = yy * w + xx;
          if (mask[q] && !seen[q]) {
            seen[q] = 1;
            stack.push_back(q);
          }
        }
      }
    }
  }
  return count;
}

double connectivity_error(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int w, int h) {
  same_size(pred.size(), gt.size(), "connectivity_error");
  const int cp = count_components(pred, w, h), cg = count_components(gt, w, h);
  return std::max(0, cp - cg) / double(std::max(1, cp));
}

double expected_calibration_error(std::span<const double> p, std::span<const std::uint8_t> gt, int bins) {
  same_size(p.size(), gt.size(), "expected_calibration_error");
  if (bins < 1) throw ArgumentError("expected_calibration_error: bins must be >= 1");
  if (p.empty()) return 0.0;
  std::vector<double> conf(bins, 0.0), acc(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) throw ArgumentError("expected_calibration_error: probability outside [0, 1]");
    const bool vessel = p[i] >= 0.5;
    const double c = vessel ? p[i] : 1.0 - p[i];
    const int b = std::min(bins - 1, int(c * bins));
    conf[b] += c;
    acc[b] += vessel == (gt[i] != 0);
    ++count[b];
  }
  double ece = 0.0;
  for (int b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    ece += std::abs(acc[b] - conf[b]) / double(p.size());  // (n_b / N) |acc_b / n_b - conf_b / n_b|
  }
  return ece;
}

Mask threshold_mask(std::span<const double> p, double threshold) {
  Mask m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = p[i] >= threshold;
  return m;
}

ImageMetrics evaluate_image(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int w, int h,
                            std::span<const double> p_vessel, int ece_bins) {
  same_size(pred.size(), gt.size(), "evaluate_image");
  check_raster(pred.size(), w, h, "evaluate_image");
  ImageMetrics m;
  const auto o = dice_iou_pr(pred, gt);
  m.dice = o.dice;
  m.iou = o.iou;
  m.precision = o.precision;
  m.recall = o.recall;
  m.centerline_f1 = centerline_f1(pred, gt, w, h);
  m.ace = connectivity_error(pred, gt, w, h);
  if (!p_vessel.empty()) {
    m.ece = expected_calibration_error(p_vessel, gt, ece_bins);
    m.has_ece = true;
  }
  return m;
}

EvalReport summarize(std::vector<ImageMetrics> images) {
  EvalReport r;
  r.images = std::move(images);
  auto stat = [&](auto field, bool ece_only) {
    std::vector<double> v;
    for (const auto& m : r.images) {
      if (!ece_only || m.has_ece) v.push_back(m.*field);
    }
    MetricSummary s;
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= double(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - s.mean) * (x - s.mean);
      s.sd = std::sqrt(ss / double(v.size() - 1));
    }
    return s;
  };
  r.dice = stat(&ImageMetrics::dice, false);
  r.iou = stat(&ImageMetrics::iou, false);
  r.precision = stat(&ImageMetrics::precision, false);
  r.recall = stat(&ImageMetrics::recall, false);
  r.centerline_f1 = stat(&ImageMetrics::centerline_f1, false);
  r.ace = stat(&ImageMetrics::ace, false);
  r.ece = stat(&ImageMetrics::ece, true);
  return r;
}

}  // namespace vrw
