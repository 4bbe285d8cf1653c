#pragma once

#include <cstddef>
#include <vector>

#include "geoprior/embeddings.hpp"
#include "geoprior/encoder.hpp"

namespace geoprior {

struct ModelShape {
  std::size_t categories = 1;
  std::size_t photographers = 0;
  std::size_t dim = 256;
  std::size_t blocks = 4;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// theta = [encoder, O, P]. P has zero columns when photographers are off.
struct ModelParams {
  Variant variant;
  EncoderWeights encoder;
  Param objects;
  Param photographers;

  std::size_t dim() const { return encoder.dim(); }
  std::size_t categories() const { return objects.value.cols(); }
  std::size_t photographer_count() const { return photographers.value.cols(); }
  bool has_photographers() const { return variant.use_photographer && photographer_count() > 0; }

  std::vector<Param*> parameters() {
    std::vector<Param*> out;
    encoder.append_params(out);
    out.push_back(&objects);
    if (photographer_count() > 0) out.push_back(&photographers);
    return out;
  }

  void zero_grad() {
    for (Param* p : parameters()) p->zero_grad();
  }
};

inline ModelParams init_model(const ModelShape& shape, const Variant& variant, Rng& rng) {
  if (shape.categories == 0) fail(ErrorKind::Config, "model needs at least one category");
  ModelParams m;
  m.variant = variant;
  m.encoder = make_encoder(input_dim(variant), shape.dim, shape.blocks, rng);
  m.objects = Param(make_embedding_matrix(shape.dim, shape.categories, rng));
  const std::size_t np = variant.use_photographer ? shape.photographers : 0;
  m.photographers = Param(make_embedding_matrix(shape.dim, np, rng));
  return m;
}

inline std::vector<double> prior_vector(const SpatioTemporalPoint& p, const ModelParams& m) {
  return object_affinity(embed(p, m.encoder, m.variant), m.objects.value);
}

}  // namespace geoprior
