#pragma once

// Location encoder f(): [lon, lat, time] -> D-dimensional embedding.
//
//   h0 = relu(W_in * enc(x) + b_in)
//   h_{k+1} = h_k + W2_k * dropout(relu(W1_k * h_k + b1_k)) + b2_k
//
// enc() normalizes each input to [-1, 1] and maps it to [sin(pi v), cos(pi v)],
// so longitude and day-of-year wrap. The residual sum is not re-activated.

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "geoprior/error.hpp"
#include "geoprior/numcore.hpp"
#include "geoprior/rng.hpp"

namespace geoprior {

struct SpatioTemporalPoint {
  double lon = 0.0;   // degrees, [-180, 180]
  double lat = 0.0;   // degrees, [-90, 90]
  double time = 0.0;  // fraction of year, [0, 1]

  friend bool operator==(const SpatioTemporalPoint&, const SpatioTemporalPoint&) = default;
};

// Ablation switches. All on is the full model.
struct Variant {
  bool use_date = true;
  bool use_photographer = true;
  bool use_wrap = true;

  friend bool operator==(const Variant&, const Variant&) = default;
};

inline void validate(const SpatioTemporalPoint& p) {
  if (!std::isfinite(p.lon) || p.lon < -180.0 || p.lon > 180.0) {
    fail(ErrorKind::Validation, "longitude out of range [-180, 180]: " + std::to_string(p.lon));
  }
  if (!std::isfinite(p.lat) || p.lat < -90.0 || p.lat > 90.0) {
    fail(ErrorKind::Validation, "latitude out of range [-90, 90]: " + std::to_string(p.lat));
  }
  if (!std::isfinite(p.time) || p.time < 0.0 || p.time > 1.0) {
    fail(ErrorKind::Validation, "time out of range [0, 1]: " + std::to_string(p.time));
  }
}

inline std::array<double, 3> normalize(const SpatioTemporalPoint& p) {
  validate(p);
  return {p.lon / 180.0, p.lat / 90.0, 2.0 * p.time - 1.0};
}

inline std::vector<double> wrap_encode(std::span<const double> normalized) {
  std::vector<double> out;
  out.reserve(2 * normalized.size());
  for (double v : normalized) {
    if (!(v >= -1.0 && v <= 1.0)) fail(ErrorKind::Validation, "wrap_encode: entry outside [-1, 1]");
    out.push_back(std::sin(std::numbers::pi * v));
    out.push_back(std::cos(std::numbers::pi * v));
  }
  return out;
}

inline std::size_t input_dim(const Variant& v) {
  const std::size_t dims = v.use_date ? 3 : 2;
  return v.use_wrap ? 2 * dims : dims;
}

// The encoder's input features for one point under a variant.
inline std::vector<double> encode_input(const SpatioTemporalPoint& p, const Variant& v) {
  const auto n = normalize(p);
  const std::span<const double> active(n.data(), v.use_date ? 3 : 2);
  if (v.use_wrap) return wrap_encode(active);
  return {active.begin(), active.end()};
}

struct DenseLayer {
  Param weight;  // out x in
  Param bias;    // 1 x out

  std::size_t in_dim() const { return weight.value.cols(); }
  std::size_t out_dim() const { return weight.value.rows(); }
};

struct ResidualBlock {
  DenseLayer first;
  DenseLayer second;
};

struct EncoderWeights {
  DenseLayer input;
  std::vector<ResidualBlock> blocks;

  std::size_t in_dim() const { return input.in_dim(); }
  std::size_t dim() const { return input.out_dim(); }

  void append_params(std::vector<Param*>& out) {
    out.push_back(&input.weight);
    out.push_back(&input.bias);
    for (auto& b : blocks) {
      out.push_back(&b.first.weight);
      out.push_back(&b.first.bias);
      out.push_back(&b.second.weight);
      out.push_back(&b.second.bias);
    }
  }
};

// Uniform in [-sqrt(1/fan_in), sqrt(1/fan_in)] for weights and biases.
inline DenseLayer make_dense(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  Matrix w(out, in);
  for (double& v : w.values()) v = rng.uniform(-bound, bound);
  Matrix b(1, out);
  for (double& v : b.values()) v = rng.uniform(-bound, bound);
  return {Param(std::move(w)), Param(std::move(b))};
}

inline EncoderWeights make_encoder(std::size_t in_dim, std::size_t dim, std::size_t blocks, Rng& rng) {
  if (in_dim == 0 || dim == 0) fail(ErrorKind::Config, "encoder dimensions must be positive");
  if (blocks == 0) fail(ErrorKind::Config, "encoder needs at least one residual block");
  EncoderWeights w;
  w.input = make_dense(in_dim, dim, rng);
  for (std::size_t k = 0; k < blocks; ++k) {
    ResidualBlock b;
    b.first = make_dense(dim, dim, rng);
    b.second = make_dense(dim, dim, rng);
    w.blocks.push_back(std::move(b));
  }
  return w;
}

inline void check_shapes(const EncoderWeights& w) {
  const std::size_t d = w.dim();
  auto check = [&](const DenseLayer& l, std::size_t in, const char* what) {
    if (l.weight.value.rows() != d || l.weight.value.cols() != in || l.bias.value.rows() != 1 ||
        l.bias.value.cols() != d) {
      fail(ErrorKind::Config, std::string("encoder layer shape mismatch: ") + what);
    }
  };
  check(w.input, w.in_dim(), "input");
  if (w.blocks.empty()) fail(ErrorKind::Config, "encoder has no residual blocks");
  for (const auto& b : w.blocks) {
    check(b.first, d, "block.first");
    check(b.second, d, "block.second");
  }
}

// Inference-mode forward pass (dropout disabled).
inline std::vector<double> embed_encoded(std::span<const double> encoded, const EncoderWeights& w) {
  check_shapes(w);
  if (encoded.size() != w.in_dim()) {
    fail(ErrorKind::Config, "encoder expects " + std::to_string(w.in_dim()) + " inputs, got " +
                                std::to_string(encoded.size()));
  }
  auto relu = [](std::vector<double> v) {
    for (double& x : v) x = x > 0.0 ? x : 0.0;
    return v;
  };
  std::vector<double> h = relu(affine(encoded, w.input.weight.value, w.input.bias.value.values()));
  for (const auto& b : w.blocks) {
    const auto inner = relu(affine(h, b.first.weight.value, b.first.bias.value.values()));
    const auto delta = affine(inner, b.second.weight.value, b.second.bias.value.values());
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += delta[i];
  }
  return h;
}

inline std::vector<double> embed(const SpatioTemporalPoint& p, const EncoderWeights& w, const Variant& v) {
  return embed_encoded(encode_input(p, v), w);
}

// Records the encoder on a tape for a batch of encoded inputs (one per row).
// With dropout_rng == nullptr the pass is deterministic (inference mode).
inline Tape::NodeId embed_on_tape(Tape& tape, Matrix encoded, EncoderWeights& w, double dropout_rate,
                                  Rng* dropout_rng) {
  check_shapes(w);
  Tape::NodeId h = tape.relu(tape.affine(tape.input(std::move(encoded)), w.input.weight, w.input.bias));
  for (auto& b : w.blocks) {
    Tape::NodeId inner = tape.relu(tape.affine(h, b.first.weight, b.first.bias));
    if (dropout_rng != nullptr && dropout_rate > 0.0) inner = tape.dropout(inner, dropout_rate, *dropout_rng);
    h = tape.add(h, tape.affine(inner, b.second.weight, b.second.bias));
  }
  return h;
}

}  // namespace geoprior
