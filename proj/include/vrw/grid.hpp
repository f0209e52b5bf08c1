#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace vrw {

enum class Connectivity { Four, Eight };

struct Offset {
  int dx;
  int dy;
};

// Neighbor offsets in the canonical order E, W, S, N, SE, SW, NE, NW.
// Image coordinates: y grows downwards.
inline constexpr Offset kNeighborOffsets[8] = {{1, 0},  {-1, 0}, {0, 1},  {0, -1},
                                               {1, 1},  {-1, 1}, {1, -1}, {-1, -1}};

// Rectangular pixel lattice with row-major indexing (index = y * width + x).
class PixelGrid {
 public:
  PixelGrid(int width, int height, Connectivity connectivity = Connectivity::Four);

  int width() const { return width_; }
  int height() const { return height_; }
  int size() const { return width_ * height_; }
  Connectivity connectivity() const { return connectivity_; }
  int max_degree() const { return connectivity_ == Connectivity::Four ? 4 : 8; }

  int index(int x, int y) const { return y * width_ + x; }
  int x_of(int index) const { return index % width_; }
  int y_of(int index) const { return index / width_; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  // In-bounds neighbors in canonical order. Throws ArgumentError on a bad index.
  std::vector<int> neighbors(int index) const;

  // Allocation-free variant; writes up to 8 entries, returns the count.
  int neighbors_into(int index, int* out) const;

  // Offset from `from` to `to` when they are neighbors, std::nullopt otherwise.
  std::optional<Offset> step(int from, int to) const;

 private:
  int width_;
  int height_;
  Connectivity connectivity_;
};

enum class LabelKind { Seed, Scribble, Centerline };

struct LabelEntry {
  int pixel;
  int label;
  LabelKind kind;

  friend bool operator==(const LabelEntry&, const LabelEntry&) = default;
};

// Sparse annotations on a grid. Duplicate entries for one pixel are allowed
// only when they carry the same label.
struct SparseLabels {
  int num_labels = 2;
  std::vector<LabelEntry> entries;

  // Pixel indices of entries with kind Centerline (deduplicated, sorted).
  std::vector<int> centerline_pixels() const;

  friend bool operator==(const SparseLabels&, const SparseLabels&) = default;
};

// Labeled/unlabeled split of the grid with index maps in both directions.
struct Partition {
  std::vector<int> unlabeled;        // pixel indices, ascending
  std::vector<int> labeled;          // pixel indices, ascending
  std::vector<int> local_index;      // pixel -> position in unlabeled or labeled
  std::vector<int> label_of;         // pixel -> label id, -1 when unlabeled

  bool is_labeled(int pixel) const { return label_of[pixel] >= 0; }
};

// Checks labels against the grid; throws ValidationError on any violation.
void validate_labels(const PixelGrid& grid, const SparseLabels& labels);

// Throws ValidationError for conflicting labels or when no pixel is labeled.
Partition partition(const PixelGrid& grid, const SparseLabels& labels);

const char* to_string(LabelKind kind);
LabelKind label_kind_from_string(const char* name);

}  // namespace vrw
