#pragma once

// Presence-only objective. For one observation (x, y, p) and one sampled
// pseudo-negative r, with a_i(v) = f(v) . O[:, i]:
//
//   L_o_loc = lambda log s(a_y(x)) + sum_{i != y} log(1 - s(a_i(x))) + sum_i log(1 - s(a_i(r)))
//   L_p_loc = log s(f(x) . P[:, p]) + log(1 - s(f(r) . P[:, p]))
//   L_p_o   = lambda log s(O[:, y] . P[:, p]) + sum_{i != y} log(1 - s(O[:, i] . P[:, p]))
//
// All terms are log-likelihoods to be maximized; the trainer negates them.

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "geoprior/embeddings.hpp"
#include "geoprior/encoder.hpp"
#include "geoprior/model.hpp"
#include "geoprior/numcore.hpp"
#include "geoprior/rng.hpp"

namespace geoprior {

enum class NegativeSampler { UniformSphere, PositivePool };

struct LossConfig {
  double lambda = 1.0;
  NegativeSampler sampler = NegativeSampler::UniformSphere;
  Variant variant;
};

struct TrainingExample {
  SpatioTemporalPoint x;
  std::size_t y = 0;
  std::optional<std::size_t> p;
  SpatioTemporalPoint r;
};

inline SpatioTemporalPoint sample_uniform_sphere(Rng& rng) {
  constexpr double kDeg = 180.0 / std::numbers::pi;
  SpatioTemporalPoint out;
  out.lon = rng.uniform(-180.0, 180.0);
  out.lat = std::asin(rng.uniform(-1.0, 1.0)) * kDeg;
  out.time = rng.uniform();
  return out;
}

inline SpatioTemporalPoint sample_negative(NegativeSampler sampler, Rng& rng,
                                           std::span<const SpatioTemporalPoint> positive_pool) {
  if (sampler == NegativeSampler::UniformSphere) return sample_uniform_sphere(rng);
  if (positive_pool.empty()) fail(ErrorKind::Config, "positive-pool sampler needs a non-empty pool");
  return positive_pool[rng.index(positive_pool.size())];
}

namespace detail {

inline void check_lambda(double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) fail(ErrorKind::Config, "lambda must be positive");
}

}  // namespace detail

// Terms take embeddings f(x) and f(r) directly.
inline double loss_object_location(std::span<const double> fx, std::span<const double> fr, const Matrix& objects,
                                   std::size_t y, double lambda) {
  detail::check_lambda(lambda);
  if (y >= objects.cols()) fail(ErrorKind::Lookup, "category id out of range");
  if (fx.size() != objects.rows() || fr.size() != objects.rows()) {
    fail(ErrorKind::Shape, "loss_object_location: embedding length != D");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < objects.cols(); ++i) {
    const double ax = detail::column_dot(fx, objects, i);
    total += i == y ? lambda * log_sigmoid(ax) : log_sigmoid(-ax);
    total += log_sigmoid(-detail::column_dot(fr, objects, i));
  }
  return total;
}

inline double loss_photographer_location(std::span<const double> fx, std::span<const double> fr,
                                         const Matrix& photographers, std::size_t p) {
  if (fx.size() != photographers.rows() || fr.size() != photographers.rows()) {
    fail(ErrorKind::Shape, "loss_photographer_location: embedding length != D");
  }
  detail::check_column(photographers, p, "photographer");
  return log_sigmoid(detail::column_dot(fx, photographers, p)) +
         log_sigmoid(-detail::column_dot(fr, photographers, p));
}

inline double loss_photographer_object(const Matrix& objects, const Matrix& photographers, std::size_t y,
                                       std::size_t p, double lambda) {
  detail::check_lambda(lambda);
  detail::check_column(objects, y, "category");
  double total = 0.0;
  for (std::size_t i = 0; i < objects.cols(); ++i) {
    const double a = photographer_object_logit(objects, photographers, i, p);
    total += i == y ? lambda * log_sigmoid(a) : log_sigmoid(-a);
  }
  return total;
}

// Per-example objective in inference mode (no dropout).
inline double total_loss(const TrainingExample& ex, const ModelParams& params, const LossConfig& config) {
  if (!(config.variant == params.variant)) fail(ErrorKind::Config, "loss config variant differs from model");
  const auto fx = embed(ex.x, params.encoder, params.variant);
  const auto fr = embed(ex.r, params.encoder, params.variant);
  double total = loss_object_location(fx, fr, params.objects.value, ex.y, config.lambda);
  if (params.has_photographers() && ex.p.has_value()) {
    total += loss_photographer_location(fx, fr, params.photographers.value, *ex.p);
    total += loss_photographer_object(params.objects.value, params.photographers.value, ex.y, *ex.p,
                                      config.lambda);
  }
  return total;
}

// Records the summed objective of a batch on the tape and returns its
// scalar node. f(x) and f(r) share one encoder pass; dropout applies to
// both when dropout_rng is given.
inline Tape::NodeId batch_objective(Tape& tape, ModelParams& params, std::span<const TrainingExample> batch,
                                    const LossConfig& config, double dropout_rate, Rng* dropout_rng) {
  detail::check_lambda(config.lambda);
  if (!(config.variant == params.variant)) fail(ErrorKind::Config, "loss config variant differs from model");
  if (batch.empty()) fail(ErrorKind::Usage, "empty batch");
  const std::size_t n = batch.size();
  const std::size_t classes = params.categories();

  Matrix encoded(2 * n, input_dim(params.variant));
  for (std::size_t i = 0; i < n; ++i) {
    if (batch[i].y >= classes) fail(ErrorKind::Lookup, "category id out of range");
    const auto ex = encode_input(batch[i].x, params.variant);
    const auto er = encode_input(batch[i].r, params.variant);
    std::copy(ex.begin(), ex.end(), encoded.row(i).begin());
    std::copy(er.begin(), er.end(), encoded.row(n + i).begin());
  }
  const Tape::NodeId emb = embed_on_tape(tape, std::move(encoded), params.encoder, dropout_rate, dropout_rng);

  Matrix targets(2 * n, classes);
  Matrix weights(2 * n, classes, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    targets(i, batch[i].y) = 1.0;
    weights(i, batch[i].y) = config.lambda;
  }
  Tape::NodeId total =
      tape.bernoulli_log_likelihood(tape.matmul(emb, params.objects), std::move(targets), std::move(weights));

  if (!params.has_photographers()) return total;

  std::vector<std::size_t> cols(2 * n, 0);
  Matrix loc_targets(2 * n, 1);
  Matrix loc_weights(2 * n, 1);
  Matrix po_targets(n, classes);
  Matrix po_weights(n, classes);
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!batch[i].p.has_value()) continue;
    const std::size_t p = *batch[i].p;
    if (p >= params.photographer_count()) fail(ErrorKind::Lookup, "photographer id out of range");
    any = true;
    cols[i] = cols[n + i] = p;
    loc_targets(i, 0) = 1.0;
    loc_weights(i, 0) = loc_weights(n + i, 0) = 1.0;
    for (std::size_t c = 0; c < classes; ++c) po_weights(i, c) = 1.0;
    po_targets(i, batch[i].y) = 1.0;
    po_weights(i, batch[i].y) = config.lambda;
  }
  if (!any) return total;

  std::vector<std::size_t> own(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(n));
  const Tape::NodeId loc = tape.row_dot(emb, tape.gather_columns(params.photographers, std::move(cols)));
  total = tape.add(total, tape.bernoulli_log_likelihood(loc, std::move(loc_targets), std::move(loc_weights)));
  const Tape::NodeId po = tape.matmul(tape.gather_columns(params.photographers, std::move(own)), params.objects);
  total = tape.add(total, tape.bernoulli_log_likelihood(po, std::move(po_targets), std::move(po_weights)));
  return total;
}

}  // namespace geoprior
