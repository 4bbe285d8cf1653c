#pragma once

// Object (D x C) and photographer (D x |P|) embedding matrices and the
// three sigmoid affinities between locations, objects and photographers.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "geoprior/error.hpp"
#include "geoprior/numcore.hpp"

namespace geoprior {

namespace detail {

inline double column_dot(std::span<const double> embedding, const Matrix& m, std::size_t col) {
  double s = 0.0;
  for (std::size_t d = 0; d < m.rows(); ++d) s += embedding[d] * m(d, col);
  return s;
}

inline void check_column(const Matrix& m, std::size_t col, const char* what) {
  if (col >= m.cols()) {
    fail(ErrorKind::Lookup, std::string(what) + " id " + std::to_string(col) + " out of range (" +
                                std::to_string(m.cols()) + " known)");
  }
}

}  // namespace detail

// Independent per-category presence probabilities s(f(x) O). Not normalized.
inline std::vector<double> object_affinity(std::span<const double> embedding, const Matrix& objects) {
  if (embedding.size() != objects.rows()) fail(ErrorKind::Shape, "object_affinity: embedding length != D");
  std::vector<double> out(objects.cols());
  for (std::size_t c = 0; c < objects.cols(); ++c) {
    out[c] = sigmoid(detail::column_dot(embedding, objects, c));
  }
  return out;
}

inline double photographer_location_affinity(std::span<const double> embedding, const Matrix& photographers,
                                             std::size_t p) {
  if (embedding.size() != photographers.rows()) {
    fail(ErrorKind::Shape, "photographer_location_affinity: embedding length != D");
  }
  detail::check_column(photographers, p, "photographer");
  return sigmoid(detail::column_dot(embedding, photographers, p));
}

inline double photographer_object_logit(const Matrix& objects, const Matrix& photographers, std::size_t y,
                                        std::size_t p) {
  if (objects.rows() != photographers.rows()) fail(ErrorKind::Shape, "object/photographer D mismatch");
  detail::check_column(objects, y, "category");
  detail::check_column(photographers, p, "photographer");
  double s = 0.0;
  for (std::size_t d = 0; d < objects.rows(); ++d) s += objects(d, y) * photographers(d, p);
  return s;
}

inline double photographer_object_affinity(const Matrix& objects, const Matrix& photographers, std::size_t y,
                                           std::size_t p) {
  return sigmoid(photographer_object_logit(objects, photographers, y, p));
}

// Uniform in [-sqrt(1/D), sqrt(1/D)].
inline Matrix make_embedding_matrix(std::size_t dim, std::size_t count, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(dim));
  Matrix m(dim, count);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

}  // namespace geoprior
