#pragma once

#include <cstdio>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "geoprior/baselines.hpp"
#include "geoprior/data.hpp"
#include "geoprior/error.hpp"
#include "geoprior/inference.hpp"

namespace geoprior {

// Is `label` among the k largest entries? Ties rank the lower id first.
inline bool in_top_k(std::span<const double> posterior, std::size_t label, std::size_t k) {
  std::size_t rank = 0;
  for (std::size_t i = 0; i < posterior.size(); ++i) {
    if (posterior[i] > posterior[label] || (posterior[i] == posterior[label] && i < label)) ++rank;
  }
  return rank < k;
}

inline double topk_accuracy(std::span<const std::vector<double>> posteriors, std::span<const std::size_t> labels,
                            std::size_t k) {
  if (posteriors.size() != labels.size()) fail(ErrorKind::Shape, "topk: posteriors and labels differ in length");
  if (posteriors.empty()) fail(ErrorKind::Usage, "topk: no examples");
  if (k == 0) fail(ErrorKind::Validation, "topk: k must be >= 1");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < posteriors.size(); ++i) {
    if (k > posteriors[i].size()) {
      fail(ErrorKind::Validation, "topk: k = " + std::to_string(k) + " exceeds " +
                                      std::to_string(posteriors[i].size()) + " categories");
    }
    if (labels[i] >= posteriors[i].size()) fail(ErrorKind::Lookup, "topk: label out of range");
    if (in_top_k(posteriors[i], labels[i], k)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(posteriors.size());
}

// A spatio-temporal prior under evaluation.
struct NamedPrior {
  std::string name;
  std::function<std::vector<double>(const SpatioTemporalPoint&)> evaluate;
  // Optional batched form; used when present.
  std::function<std::vector<std::vector<double>>(std::span<const SpatioTemporalPoint>)> evaluate_batch;
};

inline NamedPrior learned_prior(const PriorModel& model, std::string name = "learned", double alpha = 0.0) {
  return {std::move(name),
          [&model, alpha](const SpatioTemporalPoint& p) { return smooth_prior(model.prior(p), alpha); },
          [&model, alpha](std::span<const SpatioTemporalPoint> ps) {
            auto out = model.prior_batch(ps);
            for (auto& v : out) v = smooth_prior(v, alpha);
            return out;
          }};
}

struct EvalRow {
  std::string name;
  // top-1 / top-3 / top-5; absent when k exceeds the category count.
  std::array<std::optional<double>, 3> accuracy;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::size_t examples = 0;
  std::vector<std::pair<std::string, std::string>> config;
};

inline constexpr std::array<std::size_t, 3> kReportedK = {1, 3, 5};

// Scores every prior on the same examples. A "uniform" row (classifier
// alone) always comes first; examples without a location use the uniform
// prior under every prior.
inline EvalReport compare_priors(const Dataset& test, const ClassifierScores& scores,
                                 std::span<const NamedPrior> priors,
                                 std::vector<std::pair<std::string, std::string>> config = {}) {
  if (!(test.categories == scores.categories)) {
    std::string msg = "test and score vocabularies differ:";
    const auto& a = test.categories.names();
    const auto& b = scores.categories.names();
    for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
      const std::string x = i < a.size() ? a[i] : "<none>";
      const std::string y = i < b.size() ? b[i] : "<none>";
      if (x != y) msg += " '" + x + "' vs '" + y + "'";
    }
    fail(ErrorKind::Vocabulary, msg);
  }
  if (test.observations.empty()) fail(ErrorKind::Usage, "no test observations");
  const std::size_t classes = test.categories.size();
  std::vector<std::size_t> score_rows;
  std::vector<std::size_t> labels;
  std::vector<SpatioTemporalPoint> located;
  for (const auto& o : test.observations) {
    const auto r = scores.find(o.id);
    if (!r) fail(ErrorKind::Schema, "no classifier scores for observation id '" + o.id + "'");
    score_rows.push_back(*r);
    labels.push_back(o.category);
    if (o.has_location) located.push_back(o.point);
  }

  EvalReport report;
  report.examples = labels.size();
  report.config = std::move(config);
  auto score_prior = [&](const std::string& name, const std::vector<std::vector<double>>* prior_values) {
    std::vector<std::vector<double>> posteriors;
    std::size_t next = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto s = scores.row(score_rows[i]);
      const bool has = test.observations[i].has_location && prior_values != nullptr;
      posteriors.push_back(has ? combine(s, (*prior_values)[next]).probs : combine(s, std::nullopt).probs);
      if (test.observations[i].has_location) ++next;
    }
    EvalRow row{name, {}};
    for (std::size_t k = 0; k < kReportedK.size(); ++k) {
      if (kReportedK[k] <= classes) row.accuracy[k] = topk_accuracy(posteriors, labels, kReportedK[k]);
    }
    report.rows.push_back(std::move(row));
  };

  score_prior("uniform", nullptr);
  for (const auto& prior : priors) {
    std::vector<std::vector<double>> values;
    if (prior.evaluate_batch) {
      values = prior.evaluate_batch(located);
    } else {
      values.reserve(located.size());
      for (const auto& p : located) values.push_back(prior.evaluate(p));
    }
    for (const auto& v : values) {
      if (v.size() != classes) fail(ErrorKind::Vocabulary, "prior '" + prior.name + "' has wrong category count");
    }
    score_prior(prior.name, &values);
  }
  return report;
}

inline const EvalRow& report_row(const EvalReport& r, const std::string& name) {
  for (const auto& row : r.rows) {
    if (row.name == name) return row;
  }
  fail(ErrorKind::Lookup, "no report row named '" + name + "'");
}

inline std::string format_report_table(const EvalReport& r) {
  std::size_t width = 5;
  for (const auto& row : r.rows) width = std::max(width, row.name.size());
  std::ostringstream out;
  char buf[64];
  auto cell = [&](const std::optional<double>& v) {
    if (v) {
      std::snprintf(buf, sizeof(buf), "%8.2f", 100.0 * *v);
    } else {
      std::snprintf(buf, sizeof(buf), "%8s", "n/a");
    }
    return std::string(buf);
  };
  out << std::string(width - 5, ' ') << "prior" << "    top1    top3    top5\n";
  for (const auto& row : r.rows) {
    out << std::string(width - row.name.size(), ' ') << row.name;
    for (const auto& a : row.accuracy) out << cell(a);
    out << '\n';
  }
  out << "examples: " << r.examples << '\n';
  for (const auto& [k, v] : r.config) out << k << ": " << v << '\n';
  return out.str();
}

inline std::string format_report_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "prior,top1,top3,top5,examples\n";
  for (const auto& row : r.rows) {
    out << csv_escape(row.name);
    for (const auto& a : row.accuracy) out << ',' << (a ? format_double(*a) : std::string());
    out << ',' << r.examples << '\n';
  }
  return out.str();
}

// Simulated classifier that confuses each category c with c ^ 1. With
// probability `accuracy` the true label gets the larger share of the pair
// mass; a small remainder is spread over the other categories.
inline ClassifierScores confusable_scores(const Dataset& data, double accuracy, Rng& rng) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) fail(ErrorKind::Validation, "accuracy must be in [0, 1]");
  const std::size_t classes = data.categories.size();
  if (classes == 0) fail(ErrorKind::Validation, "empty vocabulary");
  constexpr double kPairMass = 0.9;
  ClassifierScores s;
  s.categories = data.categories;
  s.probs = Matrix(data.observations.size(), classes);
  for (std::size_t i = 0; i < data.observations.size(); ++i) {
    const auto& o = data.observations[i];
    const std::size_t y = o.category;
    const std::size_t partner = (y ^ 1U) < classes ? (y ^ 1U) : y;
    auto row = s.probs.row(i);
    const double rest = classes > (partner == y ? 1U : 2U) ? 1.0 - kPairMass : 0.0;
    const std::size_t others = classes - (partner == y ? 1 : 2);
    for (std::size_t c = 0; c < classes; ++c) row[c] = others > 0 ? rest / static_cast<double>(others) : 0.0;
    const double pair = 1.0 - rest;
    if (partner == y) {
      row[y] = pair;
    } else {
      const double share = rng.uniform(0.55, 0.75);
      const bool correct = rng.bernoulli(accuracy);
      row[y] = pair * (correct ? share : 1.0 - share);
      row[partner] = pair - row[y];
    }
    if (!s.index.try_emplace(o.id, i).second) fail(ErrorKind::Schema, "duplicate observation id '" + o.id + "'");
    s.ids.push_back(o.id);
  }
  return s;
}

template <typename Hyper>
struct SweepResult {
  Hyper best;
  std::size_t best_index = 0;
  std::vector<double> top1;  // per grid entry
};

// Picks the grid entry with the highest validation top-1; the first entry
// wins ties.
template <typename Hyper, typename MakePrior>
SweepResult<Hyper> sweep(std::span<const Hyper> grid, MakePrior make_prior, const Dataset& validation,
                         const ClassifierScores& validation_scores) {
  if (grid.empty()) fail(ErrorKind::Usage, "sweep: empty hyperparameter grid");
  if (validation.observations.empty()) fail(ErrorKind::Usage, "sweep: empty validation split");
  SweepResult<Hyper> result{grid.front(), 0, {}};
  double best = -1.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const NamedPrior prior = make_prior(grid[i]);
    const auto report = compare_priors(validation, validation_scores, std::span(&prior, 1));
    const double top1 = *report.rows.back().accuracy[0];
    result.top1.push_back(top1);
    if (top1 > best) {
      best = top1;
      result.best = grid[i];
      result.best_index = i;
    }
  }
  return result;
}

}  // namespace geoprior
