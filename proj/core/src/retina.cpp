#include "glimpse/retina.hpp"

#include <nlohmann/json.hpp>

namespace glimpse {

RetinaSpec RetinaSpec::standard20() {
  return RetinaSpec{20, {{4, 4}, {2, 2}}, 1};
}

std::string RetinaSpec::to_json() const {
  nlohmann::json j;
  j["grid_side"] = grid_side;
  auto rs = nlohmann::json::array();
  for (const Ring& r : rings) rs.push_back({r.cell_size, r.thickness});
  j["rings"] = rs;
  j["center_cell"] = center_cell;
  return j.dump();
}

RetinaSpec RetinaSpec::from_json(const std::string& json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("retina spec: ") + e.what(), e.byte);
  }
  RetinaSpec spec;
  try {
    spec.grid_side = j.at("grid_side").get<int>();
    spec.center_cell = j.at("center_cell").get<int>();
    spec.rings.clear();
    for (const auto& r : j.at("rings")) {
      if (!r.is_array() || r.size() != 2)
        throw ContractError("retina spec: each ring must be [cell_size, thickness]");
      spec.rings.push_back({r[0].get<int>(), r[1].get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("retina spec: ") + e.what());
  }
  return spec;
}

CellLayout build_layout(const RetinaSpec& spec) {
  const int side = spec.grid_side;
  if (side < 1) throw ContractError("retina spec: grid_side must be >= 1");
  if (spec.center_cell < 1)
    throw ContractError("retina spec: center_cell must be >= 1");

  CellLayout layout;
  layout.grid_side = side;

  int off = 0;  // distance consumed from each edge so far
  int prev_size = INT32_MAX;
  for (const Ring& ring : spec.rings) {
    const int s = ring.cell_size;
    const int t = ring.thickness;
    if (s < 1 || t < 1) throw ContractError("retina spec: ring sizes must be >= 1");
    if (t % s != 0)
      throw ContractError("retina spec: ring thickness " + std::to_string(t) +
                          " is not a multiple of cell size " + std::to_string(s));
    if (s > prev_size)
      throw ContractError("retina spec: cell sizes must be non-increasing inward");
    prev_size = s;

    const int outer = side - 2 * off;   // side of the square this ring frames
    const int inner = outer - 2 * t;    // side of what remains inside
    if (inner < 0 || outer % s != 0 || inner % s != 0)
      throw ContractError("spec does not tile grid: ring of " +
                          std::to_string(s) + "x" + std::to_string(s) +
                          " cells leaves a residual of " + std::to_string(inner));

    const int lo = off, hi = side - off;  // this ring's outer square
    for (int r = lo; r + s <= hi; r += s) {
      for (int c = lo; c + s <= hi; c += s) {
        const bool in_band = r < lo + t || r + s > hi - t ||
                             c < lo + t || c + s > hi - t;
        if (in_band) layout.cells.push_back({r, c, s});
      }
    }
    off += t;
  }

  const int center = side - 2 * off;
  const int cs = spec.center_cell;
  if (cs > prev_size)
    throw ContractError("retina spec: cell sizes must be non-increasing inward");
  if (center % cs != 0)
    throw ContractError("spec does not tile grid: residual centre of " +
                        std::to_string(center) + " is not a multiple of " +
                        std::to_string(cs));
  for (int r = off; r + cs <= side - off; r += cs)
    for (int c = off; c + cs <= side - off; c += cs)
      layout.cells.push_back({r, c, cs});

  return layout;
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t signature(const CellLayout& layout, int rows, int cols) {
  std::uint64_t h = 1469598103934665603ull;
  h = fnv1a(h, static_cast<std::uint64_t>(rows));
  h = fnv1a(h, static_cast<std::uint64_t>(cols));
  h = fnv1a(h, static_cast<std::uint64_t>(layout.grid_side));
  for (const Cell& c : layout.cells) {
    h = fnv1a(h, static_cast<std::uint64_t>(c.row0));
    h = fnv1a(h, static_cast<std::uint64_t>(c.col0));
    h = fnv1a(h, static_cast<std::uint64_t>(c.size));
  }
  return h;
}

}  // namespace

RetinalTransform place(const CellLayout& layout, int image_rows,
                       int image_cols, const Offset& offset) {
  if (image_rows < 1 || image_cols < 1)
    throw ContractError("place: image dimensions must be positive");

  RetinalTransform rt;
  rt.rows_ = image_rows;
  rt.cols_ = image_cols;
  rt.offset_ = offset;
  rt.layout_ = layout;
  rt.layout_sig_ = signature(layout, image_rows, image_cols);
  rt.active_.assign(layout.cells.size(), false);

  for (int ci = 0; ci < layout.cell_count(); ++ci) {
    const Cell& cell = layout.cells[ci];
    const int r0 = cell.row0 + offset.dr;
    const int c0 = cell.col0 + offset.dc;
    const bool inside = r0 >= 0 && c0 >= 0 && r0 + cell.size <= image_rows &&
                        c0 + cell.size <= image_cols;
    if (!inside) continue;
    rt.active_[ci] = true;
    rt.active_cells_.push_back(ci);
    std::vector<int> px;
    px.reserve(static_cast<std::size_t>(cell.size) * cell.size);
    for (int r = r0; r < r0 + cell.size; ++r)
      for (int c = c0; c < c0 + cell.size; ++c)
        px.push_back(r * image_cols + c);
    rt.pixels_.push_back(std::move(px));
    rt.weights_.push_back(1.0 / (static_cast<double>(cell.size) * cell.size));
  }
  return rt;
}

Eigen::VectorXd RetinalTransform::apply(const Eigen::VectorXd& image) const {
  if (image.size() != pixel_count())
    throw ContractError("RetinalTransform::apply: image size mismatch");
  Eigen::VectorXd y(active_count());
  for (int a = 0; a < active_count(); ++a) {
    double s = 0.0;
    for (int p : pixels_[a]) s += image(p);
    y(a) = s * weights_[a];
  }
  return y;
}

RetinalTransform::Upsampled RetinalTransform::upsample(
    const Eigen::VectorXd& glimpse) const {
  if (glimpse.size() != active_count())
    throw ContractError("RetinalTransform::upsample: glimpse length mismatch");
  Upsampled up;
  up.image = Eigen::VectorXd::Zero(pixel_count());
  up.missing.assign(static_cast<std::size_t>(pixel_count()), true);
  for (int a = 0; a < active_count(); ++a) {
    for (int p : pixels_[a]) {
      up.image(p) = glimpse(a);
      up.missing[static_cast<std::size_t>(p)] = false;
    }
  }
  return up;
}

int RetinalTransform::covered_pixel_count() const {
  int n = 0;
  for (const auto& px : pixels_) n += static_cast<int>(px.size());
  return n;
}

Eigen::MatrixXd RetinalTransform::dense() const {
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(active_count(), pixel_count());
  for (int a = 0; a < active_count(); ++a)
    for (int p : pixels_[a]) V(a, p) = weights_[a];
  return V;
}

std::vector<Offset> enumerate_offsets(const std::vector<int>& row_offsets,
                                      const std::vector<int>& col_offsets) {
  if (row_offsets.empty() || col_offsets.empty())
    throw ContractError("enumerate_offsets: offset lists must be non-empty");
  std::vector<Offset> out;
  out.reserve(row_offsets.size() * col_offsets.size());
  for (int dr : row_offsets)
    for (int dc : col_offsets) out.push_back({dr, dc});
  return out;
}

PlacementSet::PlacementSet(const RetinaSpec& spec, int image_rows,
                           int image_cols, std::vector<Offset> offsets)
    : spec_(spec), rows_(image_rows), cols_(image_cols),
      offsets_(std::move(offsets)) {
  const CellLayout layout = build_layout(spec);
  transforms_.reserve(offsets_.size());
  for (const Offset& o : offsets_)
    transforms_.push_back(place(layout, rows_, cols_, o));
}

}  // namespace glimpse
