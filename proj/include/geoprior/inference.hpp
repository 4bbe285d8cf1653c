#pragma once

// Evaluating the trained prior, combining it with classifier probabilities
// and rasterizing it.

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "geoprior/checkpoint.hpp"
#include "geoprior/data.hpp"
#include "geoprior/encoder.hpp"
#include "geoprior/error.hpp"
#include "geoprior/numcore.hpp"

namespace geoprior {

using PriorVector = std::vector<double>;

namespace detail {

inline constexpr std::size_t kTileRows = 12;
inline constexpr std::size_t kStrip = 32;

inline std::size_t round_up(std::size_t n, std::size_t m) { return (n + m - 1) / m * m; }

// Affine layer repacked into column strips: panels[s][j][i] = W(s*kStrip + i, j).
struct PackedLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<float> panels;
  std::vector<float> bias;

  std::size_t strips() const { return round_up(out, kStrip) / kStrip; }
};

inline PackedLayer pack_layer(std::span<const float> w, std::span<const float> b, std::size_t out, std::size_t in) {
  PackedLayer l;
  l.in = in;
  l.out = out;
  l.panels.assign(l.strips() * in * kStrip, 0.0f);
  l.bias.assign(l.strips() * kStrip, 0.0f);
  for (std::size_t i = 0; i < out; ++i) {
    const std::size_t s = i / kStrip;
    const std::size_t lane = i % kStrip;
    for (std::size_t j = 0; j < in; ++j) l.panels[(s * in + j) * kStrip + lane] = w[i * in + j];
    l.bias[i] = b[i];
  }
  return l;
}

using Lanes = float __attribute__((vector_size(64)));
using UnalignedLanes = float __attribute__((vector_size(64), aligned(4)));
inline constexpr std::size_t kLanes = sizeof(Lanes) / sizeof(float);
static_assert(kStrip % kLanes == 0);

// y = act(x W^T + b) for `tiles` groups of kTileRows rows. Each output
// element accumulates over j in index order, so a row's result does not
// depend on which other rows share its tile.
inline void layer_forward(const PackedLayer& l, const float* x, std::size_t ldx, float* y, std::size_t ldy,
                          std::size_t tiles, bool relu) {
  constexpr std::size_t kVecs = kStrip / kLanes;
  const std::size_t in = l.in;
  for (std::size_t s = 0; s < l.strips(); ++s) {
    const float* panel = l.panels.data() + s * in * kStrip;
    const auto* bias = reinterpret_cast<const UnalignedLanes*>(l.bias.data() + s * kStrip);
    for (std::size_t t = 0; t < tiles; ++t) {
      const float* xt = x + t * kTileRows * ldx;
      Lanes acc[kTileRows][kVecs];
      for (std::size_t r = 0; r < kTileRows; ++r) {
        for (std::size_t v = 0; v < kVecs; ++v) acc[r][v] = bias[v];
      }
      for (std::size_t j = 0; j < in; ++j) {
        const auto* w = reinterpret_cast<const UnalignedLanes*>(panel + j * kStrip);
        for (std::size_t r = 0; r < kTileRows; ++r) {
          const float xr = xt[r * ldx + j];
          for (std::size_t v = 0; v < kVecs; ++v) acc[r][v] += xr * w[v];
        }
      }
      float* yt = y + t * kTileRows * ldy + s * kStrip;
      const Lanes zero = {};
      for (std::size_t r = 0; r < kTileRows; ++r) {
        auto* out = reinterpret_cast<UnalignedLanes*>(yt + r * ldy);
        for (std::size_t v = 0; v < kVecs; ++v) out[v] = relu ? (acc[r][v] > zero ? acc[r][v] : zero) : acc[r][v];
      }
    }
  }
}

}  // namespace detail

// f32 inference copy of a checkpoint. Holds only the encoder and O; the
// photographer matrix is never loaded. Safe to share across threads.
class PriorModel {
 public:
  explicit PriorModel(const Checkpoint& c)
      : variant_(c.variant), categories_(c.categories), dim_(c.shape.dim),
        padded_dim_(detail::round_up(c.shape.dim, detail::kStrip)), classes_(c.shape.categories) {
    if (c.weights.size() != expected_weight_count(c.shape, c.input_width)) {
      fail(ErrorKind::Format, "weight count does not match checkpoint dimensions");
    }
    input_width_ = c.input_width;
    std::span<const float> w(c.weights);
    std::size_t pos = 0;
    auto take = [&](std::size_t n) {
      auto s = w.subspan(pos, n);
      pos += n;
      return s;
    };
    const std::size_t d = dim_;
    {
      auto wi = take(d * input_width_);
      auto bi = take(d);
      input_ = detail::pack_layer(wi, bi, d, input_width_);
    }
    for (std::size_t k = 0; k < c.shape.blocks; ++k) {
      auto w1 = take(d * d);
      auto b1 = take(d);
      auto w2 = take(d * d);
      auto b2 = take(d);
      blocks_.push_back({detail::pack_layer(w1, b1, d, d), detail::pack_layer(w2, b2, d, d)});
    }
    auto o = take(d * classes_);
    objects_.assign(o.begin(), o.end());  // D x C row-major
    // Column-major copy so a category's weights are contiguous.
    objects_by_class_.assign(padded_dim_ * classes_, 0.0f);
    for (std::size_t dd = 0; dd < d; ++dd) {
      for (std::size_t cc = 0; cc < classes_; ++cc) {
        objects_by_class_[cc * padded_dim_ + dd] = objects_[dd * classes_ + cc];
      }
    }
  }

  const Variant& variant() const { return variant_; }
  const Vocabulary& categories() const { return categories_; }
  std::size_t classes() const { return classes_; }
  std::size_t dim() const { return dim_; }

  // Embeddings for a batch of points, one padded row of width
  // embedding_stride() per point.
  std::size_t embedding_stride() const { return padded_dim_; }

  // Scratch buffers reused across embed_into calls.
  struct Workspace {
    std::vector<float> x, h, inner, delta;
  };

  // Embeds `points` into ws.h (rows padded up to a whole tile).
  void embed_into(std::span<const SpatioTemporalPoint> points, Workspace& ws) const {
    const std::size_t tiles = detail::round_up(points.size(), detail::kTileRows) / detail::kTileRows;
    const std::size_t rows = tiles * detail::kTileRows;
    ws.x.assign(rows * input_width_, 0.0f);
    for (std::size_t r = 0; r < points.size(); ++r) {
      const auto enc = encode_input(points[r], variant_);
      for (std::size_t j = 0; j < input_width_; ++j) ws.x[r * input_width_ + j] = static_cast<float>(enc[j]);
    }
    ws.h.resize(rows * padded_dim_);
    ws.inner.resize(rows * padded_dim_);
    ws.delta.resize(rows * padded_dim_);
    detail::layer_forward(input_, ws.x.data(), input_width_, ws.h.data(), padded_dim_, tiles, true);
    for (const auto& b : blocks_) {
      detail::layer_forward(b.first, ws.h.data(), padded_dim_, ws.inner.data(), padded_dim_, tiles, true);
      detail::layer_forward(b.second, ws.inner.data(), padded_dim_, ws.delta.data(), padded_dim_, tiles, false);
      for (std::size_t i = 0; i < rows * padded_dim_; ++i) ws.h[i] += ws.delta[i];
    }
  }

  std::vector<float> embed_batch(std::span<const SpatioTemporalPoint> points) const {
    Workspace ws;
    embed_into(points, ws);
    ws.h.resize(points.size() * padded_dim_);
    return std::move(ws.h);
  }

  // Presence probability of category c from one padded embedding row
  // (embedding_stride() floats). Lane sums are reduced in a fixed order.
  double probability(std::span<const float> embedding, std::size_t c) const {
    if (embedding.size() < padded_dim_) fail(ErrorKind::Shape, "embedding row shorter than embedding_stride()");
    using detail::kLanes;
    const float* o = objects_by_class_.data() + c * padded_dim_;
    detail::Lanes acc = {};
    for (std::size_t d = 0; d < padded_dim_; d += kLanes) {
      acc += *reinterpret_cast<const detail::UnalignedLanes*>(embedding.data() + d) *
             *reinterpret_cast<const detail::UnalignedLanes*>(o + d);
    }
    float logit = 0.0f;
    for (std::size_t k = 0; k < kLanes; ++k) logit += acc[k];
    return sigmoid(static_cast<double>(logit));
  }

  PriorVector prior(const SpatioTemporalPoint& point) const {
    const auto e = embed_batch(std::span(&point, 1));
    PriorVector out(classes_);
    for (std::size_t c = 0; c < classes_; ++c) out[c] = probability(e, c);
    return out;
  }

  std::vector<PriorVector> prior_batch(std::span<const SpatioTemporalPoint> points) const {
    const auto e = embed_batch(points);
    std::vector<PriorVector> out(points.size(), PriorVector(classes_));
    for (std::size_t r = 0; r < points.size(); ++r) {
      const std::span<const float> row(e.data() + r * padded_dim_, padded_dim_);
      for (std::size_t c = 0; c < classes_; ++c) out[r][c] = probability(row, c);
    }
    return out;
  }

 private:
  struct Block {
    detail::PackedLayer first;
    detail::PackedLayer second;
  };

  Variant variant_;
  Vocabulary categories_;
  std::size_t dim_;
  std::size_t padded_dim_;
  std::size_t classes_;
  std::size_t input_width_ = 0;
  detail::PackedLayer input_;
  std::vector<Block> blocks_;
  std::vector<float> objects_;
  std::vector<float> objects_by_class_;
};

// ---- combination ---------------------------------------------------------

struct Posterior {
  std::vector<double> probs;
  std::size_t argmax = 0;
};

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// p' = p + alpha
inline PriorVector smooth_prior(std::span<const double> prior, double alpha) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail(ErrorKind::Validation, "smoothing alpha must be >= 0");
  PriorVector out(prior.begin(), prior.end());
  for (double& v : out) v += alpha;
  return out;
}

// posterior ∝ P(y|I) P(y|x). Without a prior (or with one that zeroes
// every class) the classifier distribution is returned unchanged.
inline Posterior combine(std::span<const double> scores, std::optional<std::span<const double>> prior) {
  if (scores.empty()) fail(ErrorKind::Vocabulary, "combine: empty score vector");
  Posterior out;
  out.probs.assign(scores.begin(), scores.end());
  if (prior) {
    if (prior->size() != scores.size()) {
      fail(ErrorKind::Vocabulary, "combine: prior has " + std::to_string(prior->size()) +
                                      " categories, scores have " + std::to_string(scores.size()));
    }
    double total = 0.0;
    std::vector<double> product(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      product[i] = scores[i] * (*prior)[i];
      total += product[i];
    }
    if (total > 0.0 && std::isfinite(total)) {
      for (double& v : product) v /= total;
      out.probs = std::move(product);
    }
  }
  out.argmax = argmax(out.probs);
  return out;
}

inline Posterior combine(std::span<const double> scores, const PriorVector& prior) {
  return combine(scores, std::optional<std::span<const double>>(prior));
}

// ---- classifier scores ---------------------------------------------------

// One probability row per example, columns in model vocabulary order.
struct ClassifierScores {
  Vocabulary categories;
  std::vector<std::string> ids;
  Matrix probs;

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index.find(id);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }
  std::span<const double> row(std::size_t r) const { return probs.row(r); }

  std::unordered_map<std::string, std::size_t> index;
};

// CSV with header `id,<label>,...`. Labels must be exactly the vocabulary
// (any order). Rows must lie in [0, 1] and sum to 1 within `sum_tolerance`;
// they are renormalized once here.
inline ClassifierScores parse_scores_csv(std::istream& in, const Vocabulary& categories,
                                         double sum_tolerance = 1e-2) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Schema, "empty score file");
  const auto header = split_csv_line(line);
  if (header.empty() || trim(header[0]) != "id") fail(ErrorKind::Schema, "score file must start with an 'id' column");
  std::vector<std::size_t> column_to_class;
  std::vector<bool> seen(categories.size(), false);
  std::vector<std::string> unknown;
  for (std::size_t k = 1; k < header.size(); ++k) {
    const std::string label = trim(header[k]);
    const auto id = categories.find(label);
    if (!id || seen[*id]) {
      unknown.push_back(label);
      continue;
    }
    seen[*id] = true;
    column_to_class.push_back(*id);
  }
  std::vector<std::string> missing;
  for (std::size_t c = 0; c < categories.size(); ++c) {
    if (!seen[c]) missing.push_back(categories.name(c));
  }
  if (!unknown.empty() || !missing.empty()) {
    std::string msg = "score columns do not match the model vocabulary;";
    if (!unknown.empty()) {
      msg += " unexpected:";
      for (const auto& u : unknown) msg += " '" + u + "'";
    }
    if (!missing.empty()) {
      msg += " missing:";
      for (const auto& m : missing) msg += " '" + m + "'";
    }
    fail(ErrorKind::Vocabulary, msg);
  }

  ClassifierScores s;
  s.categories = categories;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    auto bad = [&](const std::string& why) {
      fail(ErrorKind::Schema, "score file line " + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != header.size()) bad("expected " + std::to_string(header.size()) + " fields");
    std::vector<double> row(categories.size());
    double total = 0.0;
    for (std::size_t k = 1; k < fields.size(); ++k) {
      const auto v = parse_double(fields[k]);
      if (!v || !std::isfinite(*v) || *v < 0.0 || *v > 1.0) bad("probability outside [0, 1]: '" + fields[k] + "'");
      row[column_to_class[k - 1]] = *v;
      total += *v;
    }
    if (std::abs(total - 1.0) > sum_tolerance) bad("probabilities sum to " + format_double(total));
    for (double& v : row) v /= total;
    const std::string id = trim(fields[0]);
    if (!s.index.try_emplace(id, rows.size()).second) bad("duplicate id '" + id + "'");
    s.ids.push_back(id);
    rows.push_back(std::move(row));
  }
  s.probs = Matrix(rows.size(), categories.size());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), s.probs.row(r).begin());
  return s;
}

inline ClassifierScores load_scores(const std::filesystem::path& path, const Vocabulary& categories) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open score file: " + path.string());
  return parse_scores_csv(in, categories);
}

inline void write_scores_csv(std::ostream& out, const std::vector<std::string>& ids, const Matrix& probs,
                             const Vocabulary& categories) {
  out << "id";
  for (const auto& n : categories.names()) out << ',' << csv_escape(n);
  out << '\n';
  for (std::size_t r = 0; r < ids.size(); ++r) {
    out << csv_escape(ids[r]);
    for (double v : probs.row(r)) out << ',' << format_double(v);
    out << '\n';
  }
}

// ---- rasters -------------------------------------------------------------

// Equirectangular grid; row 0 touches +90 latitude, column 0 touches -180.
struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  double time = 0.0;
  std::size_t category = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
};

inline SpatioTemporalPoint cell_center(std::size_t row, std::size_t col, std::size_t height, std::size_t width,
                                       double time) {
  SpatioTemporalPoint p;
  p.lon = -180.0 + (static_cast<double>(col) + 0.5) * 360.0 / static_cast<double>(width);
  p.lat = 90.0 - (static_cast<double>(row) + 0.5) * 180.0 / static_cast<double>(height);
  p.time = time;
  return p;
}

// Keep-mask: nonzero cells are kept, zero cells are forced to 0.
struct RasterMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> keep;
};

// Embeds every cell center once and reads off each requested category.
inline std::vector<Raster> rasterize(const PriorModel& model, std::span<const std::size_t> categories, double time,
                                     std::size_t height, std::size_t width, const RasterMask* mask = nullptr) {
  if (height < 1 || width < 1) fail(ErrorKind::Validation, "raster dimensions must be >= 1");
  if (mask != nullptr && (mask->height != height || mask->width != width)) {
    fail(ErrorKind::Shape, "mask is " + std::to_string(mask->width) + "x" + std::to_string(mask->height) +
                               ", raster is " + std::to_string(width) + "x" + std::to_string(height));
  }
  for (std::size_t c : categories) {
    if (c >= model.classes()) fail(ErrorKind::Lookup, "raster category id out of range");
  }
  validate(cell_center(0, 0, height, width, time));
  std::vector<Raster> out;
  for (std::size_t c : categories) out.push_back({height, width, time, c, std::vector<double>(height * width)});

  // Chunks are claimed from a shared counter; each cell is written once, so
  // the result does not depend on the thread count.
  constexpr std::size_t kChunk = 20 * detail::kTileRows;
  const std::size_t cells = height * width;
  const std::size_t stride = model.embedding_stride();
  const std::size_t chunks = (cells + kChunk - 1) / kChunk;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    std::vector<SpatioTemporalPoint> points;
    points.reserve(kChunk);
    PriorModel::Workspace ws;
    for (std::size_t chunk = next++; chunk < chunks; chunk = next++) {
      const std::size_t start = chunk * kChunk;
      const std::size_t end = std::min(cells, start + kChunk);
      points.clear();
      for (std::size_t k = start; k < end; ++k) {
        points.push_back(cell_center(k / width, k % width, height, width, time));
      }
      model.embed_into(points, ws);
      for (std::size_t k = start; k < end; ++k) {
        const std::span<const float> row(ws.h.data() + (k - start) * stride, stride);
        const bool keep = mask == nullptr || mask->keep[k] != 0;
        for (std::size_t i = 0; i < categories.size(); ++i) {
          out[i].values[k] = keep ? model.probability(row, categories[i]) : 0.0;
        }
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(std::max(1U, std::thread::hardware_concurrency()), chunks);
  std::vector<std::jthread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();
  return out;
}

inline Raster rasterize(const PriorModel& model, std::size_t category, double time, std::size_t height,
                        std::size_t width, const RasterMask* mask = nullptr) {
  const std::array<std::size_t, 1> one{category};
  return std::move(rasterize(model, one, time, height, width, mask).front());
}

// Binary PGM (P5, maxval 255); byte = floor(255 p + 0.5), so 0.5 -> 128.
inline std::vector<std::uint8_t> encode_pgm(const Raster& r) {
  const std::string header = "P5\n" + std::to_string(r.width) + " " + std::to_string(r.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + r.values.size());
  for (double v : r.values) {
    const double scaled = std::floor(255.0 * std::clamp(v, 0.0, 1.0) + 0.5);
    out.push_back(static_cast<std::uint8_t>(scaled));
  }
  return out;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "failed writing file: " + path.string());
}

inline RasterMask parse_pgm_mask(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* field) {
    skip_space();
    std::size_t v = 0;
    const std::size_t begin = pos;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    if (pos == begin) fail(ErrorKind::Format, std::string("mask PGM: bad field '") + field + "'");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail(ErrorKind::Format, "mask PGM: expected P5 magic");
  pos = 2;
  RasterMask m;
  m.width = number("width");
  m.height = number("height");
  const std::size_t maxval = number("maxval");
  if (maxval == 0 || maxval > 255) fail(ErrorKind::Format, "mask PGM: maxval must be in [1, 255]");
  ++pos;  // single whitespace before the raster
  if (bytes.size() < pos || bytes.size() - pos != m.width * m.height) {
    fail(ErrorKind::Format, "mask PGM: pixel data size mismatch");
  }
  m.keep.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return m;
}

inline RasterMask load_pgm_mask(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open mask: " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_pgm_mask(bytes);
}

}  // namespace geoprior
