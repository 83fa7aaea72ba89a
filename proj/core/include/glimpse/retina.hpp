#ifndef GLIMPSE_RETINA_HPP
#define GLIMPSE_RETINA_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "glimpse/errors.hpp"

// Variable-resolution retina: a square grid tiled by concentric square rings
// of cells, finest in the centre. Placing the grid over an image at an
// integer offset yields a sparse row-stochastic linear operator that maps
// pixels to per-cell averages.

namespace glimpse {

struct Ring {
  int cell_size = 0;  // pixels
  int thickness = 0;  // pixels, must be a multiple of cell_size
};

struct RetinaSpec {
  int grid_side = 20;
  std::vector<Ring> rings;  // outermost first
  int center_cell = 1;      // the residual centre is tiled at this size

  static RetinaSpec standard20();  // 4x4 ring, 2x2 ring, 8x8 fovea of 1x1

  std::string to_json() const;
  static RetinaSpec from_json(const std::string& json);
};

/// Integer shift of the grid relative to the home placement (the image's
/// top-left grid_side x grid_side block). Row shift first.
struct Offset {
  int dr = 0;
  int dc = 0;
  friend bool operator==(const Offset&, const Offset&) = default;
};

struct Cell {
  int row0 = 0, col0 = 0, size = 1;  // grid coordinates
};

/// Cells in enumeration order: outermost ring first, then inward, residual
/// centre last, each scanned row-major.
struct CellLayout {
  int grid_side = 0;
  std::vector<Cell> cells;
  int cell_count() const { return static_cast<int>(cells.size()); }
};

/// Validates the spec and enumerates its cells. Throws ContractError when
/// the rings plus centre do not tile the grid.
CellLayout build_layout(const RetinaSpec& spec);

class RetinalTransform {
public:
  int image_rows() const { return rows_; }
  int image_cols() const { return cols_; }
  Offset offset() const { return offset_; }
  const CellLayout& layout() const { return layout_; }

  /// Per-cell flags; a cell is active iff its whole receptive field lies
  /// inside the image.
  const std::vector<bool>& active_mask() const { return active_; }
  int active_count() const { return static_cast<int>(active_cells_.size()); }
  /// Indices (into the layout) of the active cells, in layout order.
  const std::vector<int>& active_cells() const { return active_cells_; }

  /// Glimpse vector: one entry per active cell, the mean of its pixels.
  Eigen::VectorXd apply(const Eigen::VectorXd& image) const;

  struct Upsampled {
    Eigen::VectorXd image;      // cell value spread over its pixels
    std::vector<bool> missing;  // true where no active cell covers the pixel
  };
  Eigen::VectorXd::Index pixel_count() const {
    return static_cast<Eigen::VectorXd::Index>(rows_) * cols_;
  }
  Upsampled upsample(const Eigen::VectorXd& glimpse) const;

  /// Number of pixels covered by active cells.
  int covered_pixel_count() const;

  /// Dense D^y_active x D matrix form; rows are the sparse averaging rows.
  Eigen::MatrixXd dense() const;

  /// Identifies the (layout, image dims) pair, ignoring the offset; used to
  /// verify that two transforms can feed one fusion problem.
  std::uint64_t layout_signature() const { return layout_sig_; }

  /// Pixels (row-major indices) of active cell `a` (active-index order).
  const std::vector<int>& cell_pixels(int a) const { return pixels_[a]; }
  double cell_weight(int a) const { return weights_[a]; }

private:
  friend RetinalTransform place(const CellLayout&, int, int, const Offset&);
  int rows_ = 0, cols_ = 0;
  Offset offset_;
  CellLayout layout_;
  std::vector<bool> active_;
  std::vector<int> active_cells_;
  std::vector<std::vector<int>> pixels_;  // per active cell
  std::vector<double> weights_;           // 1/size^2 per active cell
  std::uint64_t layout_sig_ = 0;
};

/// Places the layout over an image. Any offset is legal; cells that overlap
/// the boundary are excluded entirely (no renormalization).
RetinalTransform place(const CellLayout& layout, int image_rows,
                       int image_cols, const Offset& offset);

/// Cartesian product, row-major: all (dr, dc) pairs.
std::vector<Offset> enumerate_offsets(const std::vector<int>& row_offsets,
                                      const std::vector<int>& col_offsets);

/// One retina layout placed at every offset of a run's offset table.
class PlacementSet {
public:
  PlacementSet(const RetinaSpec& spec, int image_rows, int image_cols,
               std::vector<Offset> offsets);

  int offset_count() const { return static_cast<int>(offsets_.size()); }
  const std::vector<Offset>& offsets() const { return offsets_; }
  const RetinalTransform& rt(int offset_id) const {
    return transforms_.at(offset_id);
  }
  const RetinaSpec& spec() const { return spec_; }
  int image_rows() const { return rows_; }
  int image_cols() const { return cols_; }

private:
  RetinaSpec spec_;
  int rows_, cols_;
  std::vector<Offset> offsets_;
  std::vector<RetinalTransform> transforms_;
};

}  // namespace glimpse

#endif
