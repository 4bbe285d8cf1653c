#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "geoprior/checkpoint.hpp"
#include "geoprior/data.hpp"
#include "geoprior/loss.hpp"
#include "geoprior/model.hpp"
#include "geoprior/numcore.hpp"
#include "geoprior/rng.hpp"

namespace geoprior {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 1024;
  std::size_t dim = 256;
  std::size_t blocks = 4;
  std::size_t per_category_cap = 100;  // 0 = uncapped
  std::optional<double> lambda;        // defaults to the number of categories
  double learning_rate = 1e-3;
  double dropout_rate = 0.5;
  double l2 = 0.0;  // on O and P
  std::uint64_t seed = 0;
  NegativeSampler sampler = NegativeSampler::UniformSphere;
  Variant variant;

  void validate() const {
    if (epochs < 1) fail(ErrorKind::Config, "epochs must be >= 1");
    if (batch_size < 1) fail(ErrorKind::Config, "batch size must be >= 1");
    if (dim < 1) fail(ErrorKind::Config, "embedding dim must be >= 1");
    if (blocks < 1) fail(ErrorKind::Config, "residual blocks must be >= 1");
    if (lambda && !(*lambda > 0.0)) fail(ErrorKind::Config, "lambda must be positive");
    if (!(learning_rate > 0.0)) fail(ErrorKind::Config, "learning rate must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail(ErrorKind::Config, "dropout must be in [0, 1)");
    if (!(l2 >= 0.0)) fail(ErrorKind::Config, "l2 must be >= 0");
  }
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean per-example negated objective
  std::size_t examples = 0;
};

inline std::string format_epoch_log(const EpochLog& e) {
  return "epoch " + std::to_string(e.epoch) + " loss " + format_double(e.loss) + " examples " +
         std::to_string(e.examples);
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

// Indices into `observations` for one epoch: at most `cap` per category,
// a fresh random subset each call, shuffled. cap == 0 keeps everything.
inline std::vector<std::size_t> build_epoch(std::span<const Observation> observations, std::size_t categories,
                                            std::size_t cap, Rng& rng) {
  if (observations.empty()) fail(ErrorKind::Config, "no training observations");
  std::vector<std::vector<std::size_t>> by_category(categories);
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const auto c = observations[i].category;
    if (c >= categories) fail(ErrorKind::Lookup, "observation category out of range");
    by_category[c].push_back(i);
  }
  std::vector<std::size_t> out;
  for (auto& ids : by_category) {
    if (cap == 0 || ids.size() <= cap) {
      out.insert(out.end(), ids.begin(), ids.end());
      continue;
    }
    // Partial Fisher-Yates: the first `cap` slots become a uniform subset.
    for (std::size_t i = 0; i < cap; ++i) std::swap(ids[i], ids[i + rng.index(ids.size() - i)]);
    out.insert(out.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cap));
  }
  rng.shuffle(out);
  return out;
}

// Maximizes the summed presence-only objective with Adam on the mean batch
// gradient. The final epoch's parameters are returned, rounded to f32.
inline TrainResult train(const Dataset& data, const TrainConfig& config,
                         const std::function<void(const EpochLog&)>& on_epoch = {}, std::ostream* warnings = nullptr) {
  config.validate();
  std::vector<Observation> observations;
  for (const auto& o : data.observations) {
    if (o.has_location) observations.push_back(o);
  }
  if (observations.empty()) fail(ErrorKind::Config, "no training observations with a location");
  const std::size_t classes = data.categories.size();
  if (classes == 0) fail(ErrorKind::Config, "empty category vocabulary");
  if (warnings != nullptr) {
    std::vector<std::size_t> counts(classes, 0);
    for (const auto& o : observations) ++counts.at(o.category);
    for (std::size_t c = 0; c < classes; ++c) {
      if (counts[c] == 0) *warnings << "warning: category '" << data.categories.name(c) << "' has no observations\n";
    }
  }

  const bool photographers = config.variant.use_photographer && !data.photographers.empty();
  LossConfig loss{config.lambda.value_or(static_cast<double>(classes)), config.sampler, config.variant};

  Rng root(config.seed);
  Rng init_rng = root.fork(1);
  Rng epoch_rng = root.fork(2);
  Rng negative_rng = root.fork(3);
  Rng dropout_rng = root.fork(4);

  ModelParams params = init_model(
      {classes, photographers ? data.photographers.size() : 0, config.dim, config.blocks}, config.variant, init_rng);
  std::vector<Param*> trainable = params.parameters();
  AdamState adam = make_adam_state(trainable, {config.learning_rate, 0.9, 0.999, 1e-8});

  std::vector<SpatioTemporalPoint> pool;
  if (config.sampler == NegativeSampler::PositivePool) {
    for (const auto& o : observations) pool.push_back(o.point);
  }

  TrainResult result;
  std::vector<TrainingExample> batch;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = build_epoch(observations, classes, config.per_category_cap, epoch_rng);
    double objective_sum = 0.0;
    for (std::size_t start = 0, batch_no = 1; start < order.size(); start += config.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) {
        const Observation& o = observations[order[k]];
        TrainingExample ex;
        ex.x = o.point;
        ex.y = o.category;
        if (photographers) ex.p = o.photographer;
        ex.r = sample_negative(config.sampler, negative_rng, pool);
        batch.push_back(ex);
      }
      params.zero_grad();
      Tape tape;
      const auto objective = batch_objective(tape, params, batch, loss, config.dropout_rate, &dropout_rng);
      const double value = tape.value(objective)(0, 0);
      if (!std::isfinite(value)) {
        fail(ErrorKind::Numeric, "non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                     std::to_string(batch_no));
      }
      objective_sum += value;
      const double n = static_cast<double>(batch.size());
      tape.backward(objective, -1.0 / n);
      if (config.l2 > 0.0) {
        for (Param* p : {&params.objects, &params.photographers}) {
          for (std::size_t i = 0; i < p->value.size(); ++i) p->grad.values()[i] += config.l2 * p->value.values()[i];
        }
      }
      try {
        adam_step(trainable, adam);
      } catch (const Error& e) {
        fail(e.kind(), std::string(e.what()) + " (epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batch_no) + ")");
      }
    }
    EpochLog entry{epoch, -objective_sum / static_cast<double>(order.size()), order.size()};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  result.checkpoint = make_checkpoint(params, data.categories, data.photographers);
  return result;
}

}  // namespace geoprior
