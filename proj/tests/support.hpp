#pragma once

// Oracles and fixtures shared by the unit suites and the acceptance runner.
// Everything here is written against the public API only.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "geoprior/cli.hpp"
#include "geoprior/geoprior.hpp"

namespace geoprior::testing {

// Mann-Whitney AUC, ties counted as one half.
inline double auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + j + 1);  // 1-based average
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum += mid_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) return 0.5;
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1) / 2.0) / (p * static_cast<double>(neg));
}

// Value of the summed batch objective. A copy of `dropout_seed` is used so
// repeated calls draw the same dropout masks.
inline double objective(ModelParams& params, std::span<const TrainingExample> batch, const LossConfig& cfg,
                        double dropout_rate, const Rng* dropout_seed) {
  Tape tape;
  Rng rng = dropout_seed != nullptr ? *dropout_seed : Rng(0);
  const auto out = batch_objective(tape, params, batch, cfg, dropout_rate, dropout_seed != nullptr ? &rng : nullptr);
  return tape.value(out)(0, 0);
}

// Analytic gradient of the summed objective, written into each Param::grad.
inline void gradient(ModelParams& params, std::span<const TrainingExample> batch, const LossConfig& cfg,
                     double dropout_rate, const Rng* dropout_seed) {
  params.zero_grad();
  Tape tape;
  Rng rng = dropout_seed != nullptr ? *dropout_seed : Rng(0);
  const auto out = batch_objective(tape, params, batch, cfg, dropout_rate, dropout_seed != nullptr ? &rng : nullptr);
  tape.backward(out);
}

struct GradCheck {
  std::size_t coordinates = 0;
  std::size_t nonzero = 0;  // coordinates with a nonzero analytic gradient
  double max_rel_error = 0.0;
};

// Central differences with step h on randomly chosen coordinates. The
// relative error is |a - n| / max(|a|, |n|, floor). A double-precision
// objective of magnitude ~10 carries ~1e-9 of rounding noise through a
// 1e-6 central difference, so below `floor` the check is on absolute error.
inline GradCheck check_gradient(ModelParams& params, std::span<const TrainingExample> batch, const LossConfig& cfg,
                                double dropout_rate, const Rng* dropout_seed, std::size_t coords, Rng& pick,
                                double h = 1e-6, double floor = 1e-3) {
  gradient(params, batch, cfg, dropout_rate, dropout_seed);
  std::vector<Param*> ps = params.parameters();
  std::vector<Matrix> analytic;
  for (Param* p : ps) analytic.push_back(p->grad);
  std::size_t total = 0;
  for (Param* p : ps) total += p->value.size();
  GradCheck result;
  for (std::size_t n = 0; n < coords; ++n) {
    std::size_t flat = pick.index(total);
    std::size_t k = 0;
    while (flat >= ps[k]->value.size()) flat -= ps[k++]->value.size();
    double& w = ps[k]->value.values()[flat];
    const double saved = w;
    w = saved + h;
    const double up = objective(params, batch, cfg, dropout_rate, dropout_seed);
    w = saved - h;
    const double down = objective(params, batch, cfg, dropout_rate, dropout_seed);
    w = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[k].values()[flat];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    result.max_rel_error = std::max(result.max_rel_error, rel);
    ++result.coordinates;
    if (a != 0.0) ++result.nonzero;
  }
  return result;
}

inline std::vector<TrainingExample> random_batch(std::size_t n, std::size_t classes, std::size_t photographers,
                                                 Rng& rng) {
  std::vector<TrainingExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    TrainingExample ex;
    ex.x = sample_uniform_sphere(rng);
    ex.r = sample_uniform_sphere(rng);
    ex.y = rng.index(classes);
    if (photographers > 0 && i % 3 != 2) ex.p = rng.index(photographers);
    out.push_back(ex);
  }
  return out;
}

inline std::vector<Variant> all_variants() {
  std::vector<Variant> out;
  for (int bits = 0; bits < 8; ++bits) out.push_back({(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0});
  return out;
}

inline std::string variant_name(const Variant& v) {
  return std::string(v.use_date ? "date" : "nodate") + "_" + (v.use_photographer ? "phot" : "nophot") + "_" +
         (v.use_wrap ? "wrap" : "nowrap");
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("geoprior_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline int run_cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "geoprior");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text != nullptr) *out_text = out.str();
  if (err_text != nullptr) *err_text = err.str();
  return rc;
}

// Points uniform on the sphere with uniform time.
inline std::vector<SpatioTemporalPoint> probe_points(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SpatioTemporalPoint> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_uniform_sphere(rng));
  return out;
}

}  // namespace geoprior::testing
