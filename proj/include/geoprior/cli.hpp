#pragma once

// Command-line front end. `run` is the whole program; tools/geoprior.cpp
// only forwards argv.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "geoprior/baselines.hpp"
#include "geoprior/checkpoint.hpp"
#include "geoprior/data.hpp"
#include "geoprior/error.hpp"
#include "geoprior/eval.hpp"
#include "geoprior/geo.hpp"
#include "geoprior/inference.hpp"
#include "geoprior/rng.hpp"
#include "geoprior/trainer.hpp"

namespace geoprior::cli {

struct Options {
  // paths
  std::string obs, scores, model, out, world, mask, train_obs, val_obs, val_scores;
  // training
  std::size_t epochs = 30, batch = 1024, dim = 256, blocks = 4, cap = 100;
  double lambda = 0.0;  // 0 = number of categories
  double lr = 1e-3, dropout = 0.5;
  std::string sampler = "sphere";
  bool no_date = false, no_photographer = false, no_wrap = false;
  // baselines and eval
  std::string k = "1,5,10,20,50";
  std::string radius = "250,500,1000,2000";
  std::string grid = "9x18,18x36,36x72";
  double alpha = -1.0;  // negative = 1 / C
  // synthetic data
  std::size_t count = 200, eval_count = 250;
  double accuracy = 0.55;
  // rasters
  std::size_t width = 1000, height = 500;
  double time = 0.5;
  std::string category;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

// Comma-separated list parsing for the sweep flags.
inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) fail(ErrorKind::Usage, "empty list: '" + s + "'");
  return out;
}

inline double parse_number(const std::string& s, const std::string& what) {
  const auto v = parse_double(s);
  if (!v || !std::isfinite(*v)) fail(ErrorKind::Usage, "bad " + what + ": '" + s + "'");
  return *v;
}

inline std::vector<std::size_t> parse_k_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s)) {
    const double v = parse_number(item, "k");
    if (v < 1 || v != std::floor(v)) fail(ErrorKind::Usage, "k must be a positive integer: '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

// Radii are given in kilometres and returned in radians.
inline std::vector<double> parse_radius_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    const double km = parse_number(item, "radius");
    if (!(km > 0.0)) fail(ErrorKind::Usage, "radius must be positive: '" + item + "'");
    out.push_back(km / kEarthRadiusKm);
  }
  return out;
}

// "LATxLON", e.g. 18x36.
inline std::vector<std::pair<std::size_t, std::size_t>> parse_grid_list(const std::string& s) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& item : split_list(s)) {
    const auto x = item.find('x');
    if (x == std::string::npos) fail(ErrorKind::Usage, "grid must look like 18x36: '" + item + "'");
    const double lat = parse_number(item.substr(0, x), "grid");
    const double lon = parse_number(item.substr(x + 1), "grid");
    if (lat < 1 || lon < 1 || lat != std::floor(lat) || lon != std::floor(lon)) {
      fail(ErrorKind::Usage, "grid bins must be positive integers: '" + item + "'");
    }
    out.emplace_back(static_cast<std::size_t>(lat), static_cast<std::size_t>(lon));
  }
  return out;
}

inline void require(const std::string& value, const std::string& flag) {
  if (value.empty()) fail(ErrorKind::Usage, flag + " is required");
}

inline Variant variant_of(const Options& o) { return {!o.no_date, !o.no_photographer, !o.no_wrap}; }

inline void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot write " + path);
  f << text;
  if (!f) fail(ErrorKind::Io, "write failed: " + path);
}

inline Dataset load_obs(const std::string& path, const Vocabulary* vocab, bool require_category,
                        bool allow_missing_location) {
  LoadOptions opt;
  opt.categories = vocab;
  opt.require_category = require_category;
  opt.allow_missing_location = allow_missing_location;
  return load_observations(path, format_from_path(path), opt);
}

inline void report_diagnostics(const Dataset& ds, const std::string& path, std::ostream& err) {
  for (const auto& d : ds.diagnostics) err << "warning: " << path << ":" << d.line << ": " << d.message << '\n';
}

// ---- subcommands ------------------------------------------------------------

inline void cmd_synth(const Options& o, std::ostream& out) {
  require(o.out, "--out");
  SyntheticWorld world = o.world.empty() ? default_world() : load_world(o.world);
  if (o.seed_given) world.seed = o.seed;
  const std::filesystem::path dir(o.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  Rng score_rng = Rng(world.seed).fork(99);
  const struct {
    const char* name;
    std::size_t n;
    std::uint64_t stream;
    bool scores;
  } splits[] = {{"train", o.count, 0, false}, {"val", o.eval_count, 1, true}, {"test", o.eval_count, 2, true}};
  for (const auto& s : splits) {
    const Dataset ds = generate_synthetic(world, s.n, s.stream);
    std::ostringstream obs;
    write_observations_csv(obs, ds);
    write_text((dir / (std::string(s.name) + ".csv")).string(), obs.str(), out);
    if (s.scores) {
      const auto scores = confusable_scores(ds, o.accuracy, score_rng);
      std::ostringstream sc;
      write_scores_csv(sc, scores.ids, scores.probs, scores.categories);
      write_text((dir / (std::string(s.name) + "_scores.csv")).string(), sc.str(), out);
    }
    out << s.name << ": " << ds.observations.size() << " observations\n";
  }
}

inline void cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  require(o.obs, "--obs");
  require(o.out, "--out");
  const Dataset ds = load_obs(o.obs, nullptr, true, false);
  report_diagnostics(ds, o.obs, err);
  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.dim = o.dim;
  cfg.blocks = o.blocks;
  cfg.per_category_cap = o.cap;
  if (o.lambda != 0.0) cfg.lambda = o.lambda;
  cfg.learning_rate = o.lr;
  cfg.dropout_rate = o.dropout;
  cfg.seed = o.seed;
  cfg.sampler = o.sampler == "pool" ? NegativeSampler::PositivePool : NegativeSampler::UniformSphere;
  cfg.variant = variant_of(o);
  const auto result = train(ds, cfg, [&](const EpochLog& e) { out << format_epoch_log(e) << '\n'; }, &err);
  save_checkpoint(result.checkpoint, o.out);
}

inline void cmd_predict(const Options& o, std::ostream& out) {
  require(o.model, "--model");
  require(o.obs, "--obs");
  const PriorModel model(load_checkpoint(o.model));
  const Dataset ds = load_obs(o.obs, &model.categories(), false, true);
  const double alpha = std::max(o.alpha, 0.0);
  const auto priors = model.prior_batch(ds.locations());
  Matrix probs(ds.observations.size(), model.classes());
  std::vector<std::string> ids;
  std::size_t next = 0;
  for (std::size_t i = 0; i < ds.observations.size(); ++i) {
    const auto& ob = ds.observations[i];
    ids.push_back(ob.id);
    const auto p = ob.has_location ? smooth_prior(priors[next++], alpha) : uniform_prior(model.classes());
    std::copy(p.begin(), p.end(), probs.row(i).begin());
  }
  std::ostringstream text;
  write_scores_csv(text, ids, probs, model.categories());
  write_text(o.out, text.str(), out);
}

inline void cmd_combine(const Options& o, std::ostream& out) {
  require(o.model, "--model");
  require(o.obs, "--obs");
  require(o.scores, "--scores");
  const PriorModel model(load_checkpoint(o.model));
  const ClassifierScores scores = load_scores(o.scores, model.categories());
  const Dataset ds = load_obs(o.obs, &model.categories(), false, true);
  const double alpha = std::max(o.alpha, 0.0);
  const auto priors = model.prior_batch(ds.locations());
  Matrix probs(ds.observations.size(), model.classes());
  std::vector<std::string> ids;
  std::size_t next = 0;
  for (std::size_t i = 0; i < ds.observations.size(); ++i) {
    const auto& ob = ds.observations[i];
    const auto row = scores.find(ob.id);
    if (!row) fail(ErrorKind::Schema, "no classifier scores for observation id '" + ob.id + "'");
    ids.push_back(ob.id);
    const auto post = ob.has_location ? combine(scores.row(*row), smooth_prior(priors[next++], alpha))
                                      : combine(scores.row(*row), std::nullopt);
    std::copy(post.probs.begin(), post.probs.end(), probs.row(i).begin());
  }
  std::ostringstream text;
  write_scores_csv(text, ids, probs, model.categories());
  write_text(o.out, text.str(), out);
}

inline void cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
  require(o.obs, "--obs");
  require(o.scores, "--scores");
  std::optional<PriorModel> model;
  if (!o.model.empty()) model.emplace(load_checkpoint(o.model));
  std::optional<Dataset> train_ds;
  if (!o.train_obs.empty()) {
    train_ds = load_obs(o.train_obs, model ? &model->categories() : nullptr, true, false);
    report_diagnostics(*train_ds, o.train_obs, err);
  }
  const Vocabulary* vocab = model ? &model->categories() : (train_ds ? &train_ds->categories : nullptr);
  Dataset test = load_obs(o.obs, vocab, true, true);
  report_diagnostics(test, o.obs, err);
  const Vocabulary& cats = vocab != nullptr ? *vocab : test.categories;
  const ClassifierScores scores = load_scores(o.scores, cats);
  std::optional<Dataset> val;
  std::optional<ClassifierScores> val_scores;
  if (!o.val_obs.empty() || !o.val_scores.empty()) {
    require(o.val_obs, "--val-obs");
    require(o.val_scores, "--val-scores");
    val = load_obs(o.val_obs, &cats, true, true);
    val_scores = load_scores(o.val_scores, cats);
  }

  const std::size_t classes = cats.size();
  const double alpha = o.alpha < 0.0 ? 1.0 / static_cast<double>(classes) : o.alpha;
  std::vector<std::pair<std::string, std::string>> echo = {{"alpha", format_double(alpha)},
                                                           {"seed", std::to_string(o.seed)}};
  std::vector<NamedPrior> priors;
  if (model) priors.push_back(learned_prior(*model, "learned", 0.0));

  std::unique_ptr<NeighborIndex> index;
  std::vector<std::unique_ptr<GridIndex>> grids;
  if (train_ds) {
    std::vector<SpatioTemporalPoint> pts;
    std::vector<std::size_t> labels;
    for (const auto& ob : train_ds->observations) {
      pts.push_back(ob.point);
      labels.push_back(ob.category);
    }
    index = std::make_unique<NeighborIndex>(pts, labels, classes);
    // With a validation split each baseline keeps its best setting;
    // otherwise the first list entry is used.
    auto pick = [&](const auto& grid, auto make) {
      using T = typename std::decay_t<decltype(grid)>::value_type;
      if (!val) return grid.front();
      return sweep<T>(std::span<const T>(grid), make, *val, *val_scores).best;
    };
    const auto ks = parse_k_list(o.k);
    auto make_num = [&](std::size_t k) {
      return NamedPrior{"nn-num", [&, k](const SpatioTemporalPoint& q) { return nn_num_prior(q, *index, k, alpha); },
                        {}};
    };
    const std::size_t k = pick(ks, make_num);
    priors.push_back(make_num(k));
    echo.emplace_back("nn-num k", std::to_string(k));

    const auto radii = parse_radius_list(o.radius);
    auto make_spatial = [&](double r) {
      return NamedPrior{"nn-spatial",
                        [&, r](const SpatioTemporalPoint& q) { return nn_spatial_prior(q, *index, r, alpha); }, {}};
    };
    const double r = pick(radii, make_spatial);
    priors.push_back(make_spatial(r));
    echo.emplace_back("nn-spatial radius km", format_double(r * kEarthRadiusKm));

    const auto shapes = parse_grid_list(o.grid);
    for (const auto& [lat, lon] : shapes) grids.push_back(std::make_unique<GridIndex>(pts, labels, classes, lat, lon));
    std::vector<std::size_t> grid_ids(shapes.size());
    for (std::size_t i = 0; i < grid_ids.size(); ++i) grid_ids[i] = i;
    auto make_grid = [&](std::size_t g) {
      const GridIndex* gi = grids[g].get();
      return NamedPrior{"grid", [gi, alpha](const SpatioTemporalPoint& q) { return grid_prior(q, *gi, alpha); }, {}};
    };
    const std::size_t g = pick(grid_ids, make_grid);
    priors.push_back(make_grid(g));
    echo.emplace_back("grid", std::to_string(shapes[g].first) + "x" + std::to_string(shapes[g].second));
  }

  const EvalReport report = compare_priors(test, scores, priors, echo);
  const std::string table = format_report_table(report);
  out << table;
  if (!o.out.empty()) {
    const std::filesystem::path dir(o.out);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
    write_text((dir / "report.txt").string(), table, out);
    write_text((dir / "report.csv").string(), format_report_csv(report), out);
  }
}

inline void cmd_rasterize(const Options& o, std::ostream& out) {
  require(o.model, "--model");
  require(o.out, "--out");
  const PriorModel model(load_checkpoint(o.model));
  std::vector<std::size_t> cats;
  std::vector<std::string> names = o.category.empty() ? model.categories().names() : split_list(o.category);
  for (const auto& n : names) {
    const auto id = model.categories().find(n);
    if (!id) fail(ErrorKind::Vocabulary, "unknown category '" + n + "'");
    cats.push_back(*id);
  }
  std::optional<RasterMask> mask;
  if (!o.mask.empty()) mask = load_pgm_mask(o.mask);
  const auto rasters = rasterize(model, cats, o.time, o.height, o.width, mask ? &*mask : nullptr);
  // One category writes exactly --out; several treat --out as a directory.
  if (rasters.size() == 1) {
    write_file(o.out, encode_pgm(rasters.front()));
    out << "wrote " << o.out << '\n';
    return;
  }
  std::error_code ec;
  std::filesystem::create_directories(o.out, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + o.out + ": " + ec.message());
  for (std::size_t i = 0; i < rasters.size(); ++i) {
    const auto path = std::filesystem::path(o.out) / (names[i] + ".pgm");
    write_file(path, encode_pgm(rasters[i]));
    out << "wrote " << path.string() << '\n';
  }
}

inline void cmd_convert_dates(const Options& o, std::ostream& out, std::ostream& err) {
  require(o.obs, "--obs");
  const Dataset ds = load_obs(o.obs, nullptr, false, true);
  report_diagnostics(ds, o.obs, err);
  std::ostringstream text;
  write_observations_csv(text, ds);
  write_text(o.out, text.str(), out);
}

// ---- argument wiring --------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Options o;
  CLI::App app{"Spatio-temporal priors for fine-grained classification", "geoprior"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI/TOML file with flag values; flags on the command line win");
  app.get_config_ptr()->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Write a synthetic world: train/val/test observations and classifier scores");
  auto* train_cmd = app.add_subcommand("train", "Train a prior and write a checkpoint");
  auto* predict = app.add_subcommand("predict", "Write the prior for every observation");
  auto* combine_cmd = app.add_subcommand("combine", "Multiply classifier scores by the prior");
  auto* eval = app.add_subcommand("eval", "Top-k accuracy of priors combined with classifier scores");
  auto* raster = app.add_subcommand("rasterize", "Write PGM maps of the prior");
  auto* dates = app.add_subcommand("convert-dates", "Rewrite a date column as year fractions");

  auto seed = [&](CLI::App* s) { s->add_option("--seed", o.seed, "Random seed")->capture_default_str(); };
  auto obs = [&](CLI::App* s, const char* what) { s->add_option("--obs", o.obs, what)->capture_default_str(); };
  auto model = [&](CLI::App* s) { s->add_option("--model", o.model, "Checkpoint file")->capture_default_str(); };
  auto output = [&](CLI::App* s, const char* what) { s->add_option("--out", o.out, what)->capture_default_str(); };
  auto alpha = [&](CLI::App* s, const char* what) { s->add_option("--alpha", o.alpha, what)->capture_default_str(); };

  synth->add_option("--world", o.world, "World config file (built-in four-cap world if empty)")->capture_default_str();
  synth->add_option("--count", o.count, "Training observations per category")->capture_default_str();
  synth->add_option("--eval-count", o.eval_count, "Validation and test observations per category")
      ->capture_default_str();
  synth->add_option("--accuracy", o.accuracy, "Simulated classifier top-1 within each confusable pair")
      ->capture_default_str();
  output(synth, "Output directory");
  seed(synth);

  obs(train_cmd, "Training observations (CSV or JSONL)");
  output(train_cmd, "Checkpoint path");
  train_cmd->add_option("--epochs", o.epochs, "Training epochs (published: 30)")->capture_default_str();
  train_cmd->add_option("--batch", o.batch, "Batch size (published: 1024)")->capture_default_str();
  train_cmd->add_option("--dim", o.dim, "Embedding width D (published: 256)")->capture_default_str();
  train_cmd->add_option("--blocks", o.blocks, "Residual blocks (published: 4)")->capture_default_str();
  train_cmd->add_option("--cap", o.cap, "Examples per category per epoch, 0 = all (published: 100)")
      ->capture_default_str();
  train_cmd->add_option("--lambda", o.lambda, "Positive-term weight, 0 = number of categories (published: C)")
      ->capture_default_str();
  train_cmd->add_option("--lr", o.lr, "Adam learning rate (published: unstated)")->capture_default_str();
  train_cmd->add_option("--dropout", o.dropout, "Dropout rate inside residual blocks (published: unstated)")->capture_default_str();
  train_cmd->add_option("--sampler", o.sampler, "Pseudo-negative sampler (published: sphere)")
      ->check(CLI::IsMember({"sphere", "pool"}))
      ->capture_default_str();
  train_cmd->add_flag("--no-date", o.no_date, "Ignore observation time (published: off)")->capture_default_str();
  train_cmd->add_flag("--no-photographer", o.no_photographer, "Drop the photographer terms (published: off)")
      ->capture_default_str();
  train_cmd->add_flag("--no-wrap", o.no_wrap, "Feed raw coordinates instead of sin/cos (published: off)")
      ->capture_default_str();
  seed(train_cmd);

  model(predict);
  obs(predict, "Observations to score (category column optional)");
  output(predict, "Output CSV, - for stdout");
  alpha(predict, "Added to every prior entry; negative means 0");

  model(combine_cmd);
  obs(combine_cmd, "Observations with ids matching the score file");
  combine_cmd->add_option("--scores", o.scores, "Classifier score CSV")->capture_default_str();
  output(combine_cmd, "Output CSV, - for stdout");
  alpha(combine_cmd, "Added to every prior entry; negative means 0");

  obs(eval, "Test observations");
  eval->add_option("--scores", o.scores, "Classifier scores for the test observations")->capture_default_str();
  eval->add_option("--model", o.model, "Checkpoint for the learned prior (optional)")->capture_default_str();
  eval->add_option("--train", o.train_obs, "Training observations for the baselines (optional)")
      ->capture_default_str();
  eval->add_option("--val-obs", o.val_obs, "Validation observations for baseline sweeps")->capture_default_str();
  eval->add_option("--val-scores", o.val_scores, "Classifier scores for the validation observations")
      ->capture_default_str();
  eval->add_option("--k", o.k, "Neighbour counts to sweep")->capture_default_str();
  eval->add_option("--radius", o.radius, "Neighbourhood radii to sweep, km")->capture_default_str();
  eval->add_option("--grid", o.grid, "Grid shapes to sweep, LATxLON")->capture_default_str();
  alpha(eval, "Baseline smoothing; negative means 1/C");
  output(eval, "Directory for report.txt and report.csv (optional)");
  seed(eval);

  model(raster);
  raster->add_option("--category", o.category, "Comma-separated category names (all if empty)")
      ->capture_default_str();
  raster->add_option("--time", o.time, "Year fraction in [0, 1]")->capture_default_str();
  raster->add_option("--width", o.width, "Raster columns")->capture_default_str();
  raster->add_option("--height", o.height, "Raster rows")->capture_default_str();
  raster->add_option("--mask", o.mask, "P5 PGM keep-mask, zero cells forced to 0")->capture_default_str();
  output(raster, "PGM path, or directory for several categories");

  obs(dates, "Observations with a date column");
  output(dates, "Output CSV, - for stdout");

  // Every option shows a default in --help, including empty paths and flags.
  for (CLI::App* sub : app.get_subcommands({})) {
    for (CLI::Option* opt : sub->get_options()) {
      if (opt->get_name() == "--help" || !opt->get_default_str().empty()) continue;
      opt->default_str(opt->get_expected_min() == 0 ? "off" : "none");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) return app.exit(e, out, err);
    err << "error: " << to_string(ErrorKind::Usage) << ": " << e.what() << '\n';
    return exit_code(ErrorKind::Usage);
  }

  o.seed_given = synth->count("--seed") > 0;
  try {
    if (synth->parsed()) cmd_synth(o, out);
    if (train_cmd->parsed()) cmd_train(o, out, err);
    if (predict->parsed()) cmd_predict(o, out);
    if (combine_cmd->parsed()) cmd_combine(o, out);
    if (eval->parsed()) cmd_eval(o, out, err);
    if (raster->parsed()) cmd_rasterize(o, out);
    if (dates->parsed()) cmd_convert_dates(o, out, err);
  } catch (const Error& e) {
    err << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace geoprior::cli
