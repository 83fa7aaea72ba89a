#ifndef GLIMPSE_DATA_IO_HPP
#define GLIMPSE_DATA_IO_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "glimpse/errors.hpp"

namespace glimpse {

/// Normalization applied to an image set, kept so it can be inverted.
struct NormRecord {
  bool applied = false;
  bool degenerate = false;  // constant input, mapped to the midpoint
  double src_lo = 0.0, src_hi = 0.0;
  double dst_lo = 0.0, dst_hi = 0.0;
};

/// A stack of same-sized grayscale images; one column per image, pixels
/// row-major within a column.
struct ImageSet {
  int rows = 0;
  int cols = 0;
  Eigen::MatrixXd data;  // (rows*cols) x N
  std::string provenance;
  NormRecord norm;

  int count() const { return static_cast<int>(data.cols()); }
  int pixel_count() const { return rows * cols; }
  Eigen::VectorXd image(int i) const { return data.col(i); }
};

/// Reads a big-endian IDX image file (magic 0x00000803), intensities kept
/// as raw bytes in [0, 255].
ImageSet read_idx(const std::string& path);

/// Reads a big-endian IDX label file (magic 0x00000801).
std::vector<int> read_idx_labels(const std::string& path);

/// Keeps the images whose label equals `digit`.
ImageSet filter_by_label(const ImageSet& set, const std::vector<int>& labels,
                         int digit);

/// Affinely maps the whole set from its observed [min, max] to [lo, hi].
/// A constant set maps to the midpoint and is flagged degenerate.
ImageSet normalize(const ImageSet& set, double lo, double hi);

/// Undoes normalize() using the recorded parameters.
ImageSet invert_normalization(const ImageSet& set);

/// Seeded shuffle, then partition into (train, test).
std::pair<ImageSet, ImageSet> split(const ImageSet& set, double train_fraction,
                                    std::uint64_t seed);

/// P5 binary PGM with maxval 255; intensities mapped from [-1, 1]. Pixels
/// flagged missing are written white.
void write_pgm(const Eigen::VectorXd& image, int rows, int cols,
               const std::string& path,
               const std::vector<bool>* missing = nullptr);

/// Minimal RFC-4180 CSV writer.
class CsvWriter {
public:
  explicit CsvWriter(const std::string& path);
  ~CsvWriter();
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  void row(const std::vector<std::string>& fields);
  static std::string field(double v);

private:
  void* file_;
};

// ---------------------------------------------------------------------------
// GLIM: the project's checksummed little-endian binary container. Layout:
// magic "GLIM", u16 version, u16 payload kind, payload body, trailing CRC32
// of the body. Arrays are f64 row-major; strings are u32 length + UTF-8.

enum class GlimKind : std::uint16_t {
  image_set = 1,
  glimpse_dataset = 2,
  model = 3,
};

constexpr std::uint16_t kGlimVersion = 1;

/// Accumulates a payload body, then writes header + body + CRC.
class GlimWriter {
public:
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void i32(std::int32_t v);
  void f64(double v);
  void str(const std::string& s);
  void vec(const Eigen::VectorXd& v);
  void mat(const Eigen::MatrixXd& m);  // dims + row-major data

  void write_file(const std::string& path, GlimKind kind) const;

private:
  std::vector<std::uint8_t> body_;
};

/// Loads a GLIM file, verifies magic/version/CRC, then reads the body
/// sequentially. Reads past the end throw ParseError at the byte offset.
class GlimReader {
public:
  explicit GlimReader(const std::string& path);
  GlimKind kind() const { return kind_; }

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::int32_t i32();
  double f64();
  std::string str();
  Eigen::VectorXd vec();
  Eigen::MatrixXd mat();

  bool at_end() const { return pos_ == body_.size(); }

private:
  const std::uint8_t* need(std::size_t n);
  std::vector<std::uint8_t> body_;
  std::size_t pos_ = 0;
  GlimKind kind_;
};

std::uint32_t crc32(const std::uint8_t* data, std::size_t len);

void write_glim(const std::string& path, const ImageSet& set);
ImageSet read_glim_image_set(const std::string& path);

}  // namespace glimpse

#endif
