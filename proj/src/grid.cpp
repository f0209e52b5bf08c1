#include "vrw/grid.hpp"

#include <algorithm>
#include <string>
#include <string_view>

#include "vrw/errors.hpp"

namespace vrw {

PixelGrid::PixelGrid(int width, int height, Connectivity connectivity)
    : width_(width), height_(height), connectivity_(connectivity) {
  if (width < 1 || height < 1) {
    throw ArgumentError("grid dimensions must be positive, got " + std::to_string(width) + "x" +
                        std::to_string(height));
  }
}

int PixelGrid::neighbors_into(int index, int* out) const {
  const int x = index % width_;
  const int y = index / width_;
  int n = 0;
  const int count = max_degree();
  for (int k = 0; k < count; ++k) {
    const int nx = x + kNeighborOffsets[k].dx;
    const int ny = y + kNeighborOffsets[k].dy;
    if (contains(nx, ny)) out[n++] = ny * width_ + nx;
  }
  return n;
}

std::vector<int> PixelGrid::neighbors(int index) const {
  if (index < 0 || index >= size()) {
    throw ArgumentError("pixel index " + std::to_string(index) + " out of range for " +
                        std::to_string(width_) + "x" + std::to_string(height_) + " grid");
  }
  int buf[8];
  const int n = neighbors_into(index, buf);
  return std::vector<int>(buf, buf + n);
}

std::optional<Offset> PixelGrid::step(int from, int to) const {
  const int dx = x_of(to) - x_of(from);
  const int dy = y_of(to) - y_of(from);
  const int count = max_degree();
  for (int k = 0; k < count; ++k) {
    if (kNeighborOffsets[k].dx == dx && kNeighborOffsets[k].dy == dy) return kNeighborOffsets[k];
  }
  return std::nullopt;
}

std::vector<int> SparseLabels::centerline_pixels() const {
  std::vector<int> out;
  for (const auto& e : entries) {
    if (e.kind == LabelKind::Centerline) out.push_back(e.pixel);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void validate_labels(const PixelGrid& grid, const SparseLabels& labels) {
  if (labels.num_labels < 2) {
    throw ValidationError("numLabels must be at least 2, got " + std::to_string(labels.num_labels));
  }
  std::vector<int> seen(grid.size(), -1);
  for (const auto& e : labels.entries) {
    if (e.pixel < 0 || e.pixel >= grid.size()) {
      throw ValidationError("label pixel index " + std::to_string(e.pixel) + " outside grid");
    }
    if (e.label < 0 || e.label >= labels.num_labels) {
      throw ValidationError("label id " + std::to_string(e.label) + " outside 0.." +
                            std::to_string(labels.num_labels - 1));
    }
    if (seen[e.pixel] >= 0 && seen[e.pixel] != e.label) {
      throw ValidationError("pixel " + std::to_string(e.pixel) + " carries conflicting labels " +
                            std::to_string(seen[e.pixel]) + " and " + std::to_string(e.label));
    }
    seen[e.pixel] = e.label;
  }
}

Partition partition(const PixelGrid& grid, const SparseLabels& labels) {
  validate_labels(grid, labels);
  if (labels.entries.empty()) {
    throw ValidationError("no labeled pixels: propagation has no absorbing states");
  }
  Partition p;
  p.label_of.assign(grid.size(), -1);
  for (const auto& e : labels.entries) p.label_of[e.pixel] = e.label;
  p.local_index.assign(grid.size(), -1);
  for (int i = 0; i < grid.size(); ++i) {
    if (p.label_of[i] >= 0) {
      p.local_index[i] = static_cast<int>(p.labeled.size());
      p.labeled.push_back(i);
    } else {
      p.local_index[i] = static_cast<int>(p.unlabeled.size());
      p.unlabeled.push_back(i);
    }
  }
  return p;
}

const char* to_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::Seed: return "seed";
    case LabelKind::Scribble: return "scribble";
    case LabelKind::Centerline: return "centerline";
  }
  return "seed";
}

LabelKind label_kind_from_string(const char* name) {
  const std::string_view s(name);
  if (s == "seed") return LabelKind::Seed;
  if (s == "scribble") return LabelKind::Scribble;
  if (s == "centerline") return LabelKind::Centerline;
  throw ValidationError("unknown label kind '" + std::string(s) + "'");
}

}  // namespace vrw
