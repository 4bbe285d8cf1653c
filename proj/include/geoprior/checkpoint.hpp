#pragma once

// Binary checkpoint, all integers and floats little-endian:
//
//   offset  size  field
//   0       8     magic "GEOPRIOR"
//   8       4     u32 version (1)
//   12      4     u32 categories C
//   16      4     u32 photographers |P| (0 when the photographer term is off)
//   20      4     u32 embedding dim D
//   24      4     u32 residual blocks B
//   28      4     u32 encoder input width
//   32      4     u32 flags: bit0 date, bit1 photographer, bit2 wrap
//   36      4     u32 dropout sites per residual block (1)
//   40      8     u64 category vocabulary digest
//   48      8     u64 photographer vocabulary digest
//   56      -     category names, then photographer names:
//                   u32 count, then per name u32 byte length + UTF-8 bytes
//   -       8     u64 weight count
//   -       4*n   f32 weights: input W (D x in, row-major), input b (D),
//                   per block: W1, b1, W2, b2; O (D x C); P (D x |P|)

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "geoprior/data.hpp"
#include "geoprior/error.hpp"
#include "geoprior/model.hpp"

namespace geoprior {

inline constexpr char kCheckpointMagic[8] = {'G', 'E', 'O', 'P', 'R', 'I', 'O', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kDropoutSitesPerBlock = 1;

struct Checkpoint {
  Variant variant;
  ModelShape shape;
  std::size_t input_width = 0;
  Vocabulary categories;
  Vocabulary photographers;
  std::vector<float> weights;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline std::size_t expected_weight_count(const ModelShape& s, std::size_t input_width) {
  const std::size_t d = s.dim;
  return d * input_width + d + s.blocks * 2 * (d * d + d) + d * s.categories + d * s.photographers;
}

namespace detail {

inline void append_matrix(std::vector<float>& out, const Matrix& m) {
  for (double v : m.values()) out.push_back(static_cast<float>(v));
}

class FloatReader {
 public:
  explicit FloatReader(std::span<const float> w) : w_(w) {}
  Matrix take(std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = static_cast<double>(w_[pos_++]);
    return m;
  }

 private:
  std::span<const float> w_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Rounds the parameters to f32.
inline Checkpoint make_checkpoint(const ModelParams& m, const Vocabulary& categories, const Vocabulary& photographers) {
  if (categories.size() != m.categories()) {
    fail(ErrorKind::Vocabulary, "category vocabulary size differs from model (" + std::to_string(categories.size()) +
                                    " vs " + std::to_string(m.categories()) + ")");
  }
  if (m.photographer_count() > 0 && photographers.size() != m.photographer_count()) {
    fail(ErrorKind::Vocabulary, "photographer vocabulary size differs from model");
  }
  Checkpoint c;
  c.variant = m.variant;
  c.shape = {m.categories(), m.photographer_count(), m.dim(), m.encoder.blocks.size()};
  c.input_width = m.encoder.in_dim();
  c.categories = categories;
  if (m.photographer_count() > 0) c.photographers = photographers;
  c.weights.reserve(expected_weight_count(c.shape, c.input_width));
  detail::append_matrix(c.weights, m.encoder.input.weight.value);
  detail::append_matrix(c.weights, m.encoder.input.bias.value);
  for (const auto& b : m.encoder.blocks) {
    detail::append_matrix(c.weights, b.first.weight.value);
    detail::append_matrix(c.weights, b.first.bias.value);
    detail::append_matrix(c.weights, b.second.weight.value);
    detail::append_matrix(c.weights, b.second.bias.value);
  }
  detail::append_matrix(c.weights, m.objects.value);
  detail::append_matrix(c.weights, m.photographers.value);
  return c;
}

inline ModelParams to_params(const Checkpoint& c) {
  if (c.weights.size() != expected_weight_count(c.shape, c.input_width)) {
    fail(ErrorKind::Format, "weight count does not match header dimensions");
  }
  const std::size_t d = c.shape.dim;
  detail::FloatReader r(c.weights);
  ModelParams m;
  m.variant = c.variant;
  m.encoder.input.weight = Param(r.take(d, c.input_width));
  m.encoder.input.bias = Param(r.take(1, d));
  for (std::size_t k = 0; k < c.shape.blocks; ++k) {
    ResidualBlock b;
    b.first.weight = Param(r.take(d, d));
    b.first.bias = Param(r.take(1, d));
    b.second.weight = Param(r.take(d, d));
    b.second.bias = Param(r.take(1, d));
    m.encoder.blocks.push_back(std::move(b));
  }
  m.objects = Param(r.take(d, c.shape.categories));
  m.photographers = Param(r.take(d, c.shape.photographers));
  return m;
}

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void names(const Vocabulary& vocab) {
    u32(static_cast<std::uint32_t>(vocab.size()));
    for (const auto& n : vocab.names()) {
      u32(static_cast<std::uint32_t>(n.size()));
      bytes(n.data(), n.size());
    }
  }

  std::vector<std::uint8_t> out;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  void need(std::size_t n, const char* field) {
    if (data_.size() - pos_ < n) fail(ErrorKind::Format, std::string("checkpoint truncated at field '") + field + "'");
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  std::string str(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Vocabulary names(const char* field) {
    const std::uint32_t count = u32(field);
    Vocabulary v;
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint32_t len = u32(field);
      if (v.add(str(len, field)) != i) fail(ErrorKind::Format, std::string("duplicate name in '") + field + "'");
    }
    return v;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  if (c.weights.size() != expected_weight_count(c.shape, c.input_width)) {
    fail(ErrorKind::Format, "weight count does not match checkpoint dimensions");
  }
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.shape.categories));
  w.u32(static_cast<std::uint32_t>(c.shape.photographers));
  w.u32(static_cast<std::uint32_t>(c.shape.dim));
  w.u32(static_cast<std::uint32_t>(c.shape.blocks));
  w.u32(static_cast<std::uint32_t>(c.input_width));
  w.u32((c.variant.use_date ? 1u : 0u) | (c.variant.use_photographer ? 2u : 0u) | (c.variant.use_wrap ? 4u : 0u));
  w.u32(kDropoutSitesPerBlock);
  w.u64(c.categories.digest());
  w.u64(c.photographers.digest());
  w.names(c.categories);
  w.names(c.photographers);
  w.u64(c.weights.size());
  w.out.reserve(w.out.size() + 4 * c.weights.size());
  for (float f : c.weights) w.f32(f);
  return std::move(w.out);
}

// Parses a complete checkpoint or throws; never returns a partial model.
inline Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.str(sizeof(kCheckpointMagic), "magic") != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    fail(ErrorKind::Format, "checkpoint field 'magic' mismatch: not a geoprior checkpoint");
  }
  if (const auto v = r.u32("version"); v != kCheckpointVersion) {
    fail(ErrorKind::Format, "checkpoint field 'version' mismatch: got " + std::to_string(v) + ", expected " +
                                std::to_string(kCheckpointVersion));
  }
  Checkpoint c;
  c.shape.categories = r.u32("categories");
  c.shape.photographers = r.u32("photographers");
  c.shape.dim = r.u32("dim");
  c.shape.blocks = r.u32("blocks");
  c.input_width = r.u32("input_width");
  const std::uint32_t flags = r.u32("flags");
  if (flags > 7) fail(ErrorKind::Format, "checkpoint field 'flags' has unknown bits");
  c.variant = {(flags & 1u) != 0, (flags & 2u) != 0, (flags & 4u) != 0};
  if (r.u32("dropout_sites") != kDropoutSitesPerBlock) {
    fail(ErrorKind::Format, "checkpoint field 'dropout_sites' mismatch");
  }
  const std::uint64_t cat_digest = r.u64("category_digest");
  const std::uint64_t ph_digest = r.u64("photographer_digest");
  c.categories = r.names("category_names");
  c.photographers = r.names("photographer_names");

  if (c.shape.categories == 0) fail(ErrorKind::Format, "checkpoint field 'categories' is zero");
  if (c.shape.dim == 0) fail(ErrorKind::Format, "checkpoint field 'dim' is zero");
  if (c.shape.blocks == 0) fail(ErrorKind::Format, "checkpoint field 'blocks' is zero");
  if (c.input_width != input_dim(c.variant)) {
    fail(ErrorKind::Format, "checkpoint field 'input_width' mismatch with variant flags");
  }
  if (!c.variant.use_photographer && c.shape.photographers != 0) {
    fail(ErrorKind::Format, "checkpoint field 'photographers' nonzero with photographer term disabled");
  }
  if (c.categories.size() != c.shape.categories) {
    fail(ErrorKind::Format, "checkpoint field 'category_names' count mismatch");
  }
  if (c.photographers.size() != c.shape.photographers) {
    fail(ErrorKind::Format, "checkpoint field 'photographer_names' count mismatch");
  }
  if (c.categories.digest() != cat_digest) fail(ErrorKind::Format, "checkpoint field 'category_digest' mismatch");
  if (c.photographers.digest() != ph_digest) {
    fail(ErrorKind::Format, "checkpoint field 'photographer_digest' mismatch");
  }

  const std::uint64_t count = r.u64("weight_count");
  if (count != expected_weight_count(c.shape, c.input_width)) {
    fail(ErrorKind::Format, "checkpoint field 'weight_count' mismatch with dimensions");
  }
  r.need(4 * count, "weights");
  c.weights.resize(count);
  for (float& f : c.weights) f = r.f32("weights");
  if (r.remaining() != 0) fail(ErrorKind::Format, "checkpoint has trailing bytes");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write checkpoint: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "failed writing checkpoint: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open checkpoint: " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace geoprior
