#include "glimpse/data_io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

namespace glimpse {

namespace {

std::vector<std::uint8_t> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'", 0);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  if (at + 4 > b.size())
    throw ParseError("truncated read of 4 bytes", at);
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) |
         (std::uint32_t(b[at + 2]) << 8) | std::uint32_t(b[at + 3]);
}

}  // namespace

ImageSet read_idx(const std::string& path) {
  const auto bytes = read_all(path);
  if (bytes.empty()) throw ParseError("empty IDX file", 0);
  const std::uint32_t magic = be32(bytes, 0);
  if (magic != 0x00000803u)
    throw ParseError("bad IDX magic for images: 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", magic);
      return std::string(buf);
    }(), 0);
  const std::uint32_t n = be32(bytes, 4);
  const std::uint32_t rows = be32(bytes, 8);
  const std::uint32_t cols = be32(bytes, 12);
  const std::size_t need = 16 + std::size_t(n) * rows * cols;
  if (bytes.size() < need)
    throw ParseError("truncated IDX image data", bytes.size());

  ImageSet set;
  set.rows = static_cast<int>(rows);
  set.cols = static_cast<int>(cols);
  set.provenance = path;
  set.data.resize(std::size_t(rows) * cols, n);
  std::size_t at = 16;
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t p = 0; p < rows * cols; ++p)
      set.data(p, i) = static_cast<double>(bytes[at++]);
  return set;
}

std::vector<int> read_idx_labels(const std::string& path) {
  const auto bytes = read_all(path);
  if (bytes.empty()) throw ParseError("empty IDX file", 0);
  const std::uint32_t magic = be32(bytes, 0);
  if (magic != 0x00000801u)
    throw ParseError("bad IDX magic for labels", 0);
  const std::uint32_t n = be32(bytes, 4);
  if (bytes.size() < 8 + n) throw ParseError("truncated IDX labels", bytes.size());
  std::vector<int> labels(n);
  for (std::uint32_t i = 0; i < n; ++i) labels[i] = bytes[8 + i];
  return labels;
}

ImageSet filter_by_label(const ImageSet& set, const std::vector<int>& labels,
                         int digit) {
  if (static_cast<int>(labels.size()) != set.count())
    throw ContractError("filter_by_label: label count differs from image count");
  std::vector<int> keep;
  for (int i = 0; i < set.count(); ++i)
    if (labels[i] == digit) keep.push_back(i);
  ImageSet out;
  out.rows = set.rows;
  out.cols = set.cols;
  out.provenance = set.provenance + " digit=" + std::to_string(digit);
  out.norm = set.norm;
  out.data.resize(set.data.rows(), keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i)
    out.data.col(i) = set.data.col(keep[i]);
  return out;
}

ImageSet normalize(const ImageSet& set, double lo, double hi) {
  if (!(hi > lo)) throw ContractError("normalize: hi must exceed lo");
  ImageSet out = set;
  out.norm.applied = true;
  out.norm.dst_lo = lo;
  out.norm.dst_hi = hi;
  if (set.data.size() == 0) return out;
  const double src_lo = set.data.minCoeff();
  const double src_hi = set.data.maxCoeff();
  out.norm.src_lo = src_lo;
  out.norm.src_hi = src_hi;
  if (src_hi == src_lo) {
    out.norm.degenerate = true;
    out.data.setConstant(0.5 * (lo + hi));
    std::cerr << "glimpse: normalize saw a constant image set; mapped to midpoint\n";
    return out;
  }
  const double scale = (hi - lo) / (src_hi - src_lo);
  out.data = ((set.data.array() - src_lo) * scale + lo).matrix();
  return out;
}

ImageSet invert_normalization(const ImageSet& set) {
  if (!set.norm.applied)
    throw ContractError("invert_normalization: set was not normalized");
  ImageSet out = set;
  out.norm = NormRecord{};
  if (set.norm.degenerate) {
    out.data.setConstant(set.norm.src_lo);
    return out;
  }
  const double scale =
      (set.norm.src_hi - set.norm.src_lo) / (set.norm.dst_hi - set.norm.dst_lo);
  out.data = ((set.data.array() - set.norm.dst_lo) * scale + set.norm.src_lo).matrix();
  return out;
}

std::pair<ImageSet, ImageSet> split(const ImageSet& set, double train_fraction,
                                    std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ContractError("split: fraction must be in (0, 1)");
  std::vector<int> idx(set.count());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const int n_train = static_cast<int>(std::llround(train_fraction * set.count()));

  auto take = [&](int begin, int end, const char* tag) {
    ImageSet part;
    part.rows = set.rows;
    part.cols = set.cols;
    part.provenance = set.provenance + " " + tag;
    part.norm = set.norm;
    part.data.resize(set.data.rows(), end - begin);
    for (int i = begin; i < end; ++i)
      part.data.col(i - begin) = set.data.col(idx[i]);
    return part;
  };
  return {take(0, n_train, "train"), take(n_train, set.count(), "test")};
}

void write_pgm(const Eigen::VectorXd& image, int rows, int cols,
               const std::string& path, const std::vector<bool>* missing) {
  if (image.size() != Eigen::Index(rows) * cols)
    throw ContractError("write_pgm: image size mismatch");
  if (missing && missing->size() != static_cast<std::size_t>(image.size()))
    throw ContractError("write_pgm: missing mask size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_pgm: cannot open '" + path + "'");
  out << "P5\n" << cols << " " << rows << "\n255\n";
  for (Eigen::Index p = 0; p < image.size(); ++p) {
    int v;
    if (missing && (*missing)[static_cast<std::size_t>(p)]) {
      v = 255;
    } else {
      v = static_cast<int>(std::lround((image(p) + 1.0) * 0.5 * 255.0));
      v = std::clamp(v, 0, 255);
    }
    out.put(static_cast<char>(v));
  }
  if (!out) throw Error("write_pgm: write failed for '" + path + "'");
}

CsvWriter::CsvWriter(const std::string& path) {
  auto* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Error("CsvWriter: cannot open '" + path + "'");
  file_ = f;
}

CsvWriter::~CsvWriter() {
  if (file_) std::fclose(static_cast<std::FILE*>(file_));
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  auto* f = static_cast<std::FILE*>(file_);
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const std::string& s = fields[i];
    const bool quote = s.find_first_of(",\"\r\n") != std::string::npos;
    if (quote) {
      std::fputc('"', f);
      for (char c : s) {
        if (c == '"') std::fputc('"', f);
        std::fputc(c, f);
      }
      std::fputc('"', f);
    } else {
      std::fwrite(s.data(), 1, s.size(), f);
    }
    if (i + 1 < fields.size()) std::fputc(',', f);
  }
  std::fputs("\r\n", f);
}

std::string CsvWriter::field(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// --------------------------------------------------------------------------
// GLIM container

std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i)
    c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void GlimWriter::u8(std::uint8_t v) { body_.push_back(v); }

void GlimWriter::u16(std::uint16_t v) {
  body_.push_back(static_cast<std::uint8_t>(v & 0xff));
  body_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void GlimWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    body_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void GlimWriter::i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }

void GlimWriter::f64(double v) {
  std::uint8_t raw[8];
  std::memcpy(raw, &v, 8);
  body_.insert(body_.end(), raw, raw + 8);
}

void GlimWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  body_.insert(body_.end(), s.begin(), s.end());
}

void GlimWriter::vec(const Eigen::VectorXd& v) {
  u32(static_cast<std::uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) f64(v(i));
}

void GlimWriter::mat(const Eigen::MatrixXd& m) {
  u32(static_cast<std::uint32_t>(m.rows()));
  u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
}

void GlimWriter::write_file(const std::string& path, GlimKind kind) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_glim: cannot open '" + path + "'");
  out.write("GLIM", 4);
  const std::uint16_t header[2] = {kGlimVersion,
                                   static_cast<std::uint16_t>(kind)};
  char h[4];
  std::memcpy(h, header, 4);
  out.write(h, 4);
  out.write(reinterpret_cast<const char*>(body_.data()),
            static_cast<std::streamsize>(body_.size()));
  const std::uint32_t c = crc32(body_.data(), body_.size());
  char ctail[4];
  std::memcpy(ctail, &c, 4);
  out.write(ctail, 4);
  if (!out) throw Error("write_glim: write failed for '" + path + "'");
}

GlimReader::GlimReader(const std::string& path) {
  auto bytes = read_all(path);
  if (bytes.size() < 12) throw ParseError("GLIM file too short", bytes.size());
  if (std::memcmp(bytes.data(), "GLIM", 4) != 0)
    throw ParseError("bad GLIM magic", 0);
  std::uint16_t version, kind;
  std::memcpy(&version, bytes.data() + 4, 2);
  std::memcpy(&kind, bytes.data() + 6, 2);
  if (version != kGlimVersion)
    throw ParseError("unsupported GLIM version " + std::to_string(version), 4);
  kind_ = static_cast<GlimKind>(kind);
  const std::size_t body_len = bytes.size() - 12;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + 8 + body_len, 4);
  const std::uint32_t actual = crc32(bytes.data() + 8, body_len);
  if (stored != actual)
    throw ParseError("GLIM checksum mismatch", 8 + body_len);
  body_.assign(bytes.begin() + 8, bytes.end() - 4);
}

const std::uint8_t* GlimReader::need(std::size_t n) {
  if (pos_ + n > body_.size())
    throw ParseError("GLIM payload truncated", 8 + pos_);
  const std::uint8_t* p = body_.data() + pos_;
  pos_ += n;
  return p;
}

std::uint8_t GlimReader::u8() { return *need(1); }

std::uint16_t GlimReader::u16() {
  const auto* p = need(2);
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t GlimReader::u32() {
  const auto* p = need(4);
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

std::int32_t GlimReader::i32() { return static_cast<std::int32_t>(u32()); }

double GlimReader::f64() {
  double v;
  std::memcpy(&v, need(8), 8);
  return v;
}

std::string GlimReader::str() {
  const std::uint32_t n = u32();
  const auto* p = need(n);
  return std::string(reinterpret_cast<const char*>(p), n);
}

Eigen::VectorXd GlimReader::vec() {
  const std::uint32_t n = u32();
  Eigen::VectorXd v(n);
  for (std::uint32_t i = 0; i < n; ++i) v(i) = f64();
  return v;
}

Eigen::MatrixXd GlimReader::mat() {
  const std::uint32_t r = u32();
  const std::uint32_t c = u32();
  Eigen::MatrixXd m(r, c);
  for (std::uint32_t i = 0; i < r; ++i)
    for (std::uint32_t j = 0; j < c; ++j) m(i, j) = f64();
  return m;
}

void write_glim(const std::string& path, const ImageSet& set) {
  GlimWriter w;
  w.u32(static_cast<std::uint32_t>(set.count()));
  w.u32(static_cast<std::uint32_t>(set.rows));
  w.u32(static_cast<std::uint32_t>(set.cols));
  w.str(set.provenance);
  w.u8(set.norm.applied ? 1 : 0);
  w.u8(set.norm.degenerate ? 1 : 0);
  w.f64(set.norm.src_lo);
  w.f64(set.norm.src_hi);
  w.f64(set.norm.dst_lo);
  w.f64(set.norm.dst_hi);
  w.mat(set.data);
  w.write_file(path, GlimKind::image_set);
}

ImageSet read_glim_image_set(const std::string& path) {
  GlimReader r(path);
  if (r.kind() != GlimKind::image_set)
    throw ParseError("GLIM payload is not an image set", 6);
  ImageSet set;
  const std::uint32_t n = r.u32();
  set.rows = static_cast<int>(r.u32());
  set.cols = static_cast<int>(r.u32());
  set.provenance = r.str();
  set.norm.applied = r.u8() != 0;
  set.norm.degenerate = r.u8() != 0;
  set.norm.src_lo = r.f64();
  set.norm.src_hi = r.f64();
  set.norm.dst_lo = r.f64();
  set.norm.dst_hi = r.f64();
  set.data = r.mat();
  if (set.data.rows() != Eigen::Index(set.rows) * set.cols ||
      set.data.cols() != Eigen::Index(n))
    throw ParseError("GLIM image set dims inconsistent", 6);
  return set;
}

}  // namespace glimpse
