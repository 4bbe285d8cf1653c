#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

namespace geoprior {
namespace {

Checkpoint random_checkpoint(std::size_t classes, std::size_t dim, std::uint64_t seed, const Variant& v = {}) {
  Rng rng(seed);
  const auto params = init_model({classes, 0, dim, 2}, v, rng);
  Vocabulary names;
  for (std::size_t c = 0; c < classes; ++c) names.add("c" + std::to_string(c));
  return make_checkpoint(params, names, {});
}

Checkpoint zero_checkpoint(std::size_t classes) {
  auto c = random_checkpoint(classes, 8, 1);
  std::fill(c.weights.begin(), c.weights.end(), 0.0f);
  return c;
}

TEST(PriorModel, ZeroModelIsOneHalfEverywhere) {
  const PriorModel m(zero_checkpoint(3));
  for (const auto& p : testing::probe_points(20, 1)) {
    for (double v : m.prior(p)) EXPECT_EQ(v, 0.5);
  }
}

TEST(PriorModel, ZeroModelRasterIsByte128) {
  const PriorModel m(zero_checkpoint(2));
  const auto r = rasterize(m, 1, 0.5, 4, 8);
  const auto pgm = encode_pgm(r);
  const std::string header = "P5\n8 4\n255\n";
  ASSERT_EQ(pgm.size(), header.size() + 32);
  EXPECT_EQ(std::string(pgm.begin(), pgm.begin() + static_cast<std::ptrdiff_t>(header.size())), header);
  for (std::size_t i = header.size(); i < pgm.size(); ++i) EXPECT_EQ(pgm[i], 128);
}

TEST(PriorModel, MatchesDoublePrecisionReference) {
  for (std::size_t dim : {7u, 32u, 45u}) {
    const auto c = random_checkpoint(5, dim, dim);
    const PriorModel m(c);
    const auto params = to_params(c);
    for (const auto& p : testing::probe_points(25, 3)) {
      const auto want = prior_vector(p, params);
      const auto got = m.prior(p);
      for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(got[k], want[k], 1e-5) << "dim " << dim;
    }
  }
}

TEST(PriorModel, BatchMatchesSingle) {
  const PriorModel m(random_checkpoint(4, 40, 2));
  const auto pts = testing::probe_points(37, 5);
  const auto batch = m.prior_batch(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(batch[i], m.prior(pts[i]));
}

TEST(PriorModel, ShortEmbeddingRowIsShapeError) {
  const PriorModel m(random_checkpoint(2, 40, 2));
  const std::vector<float> row(40);
  EXPECT_THROW(m.probability(row, 0), Error);
}

TEST(Raster, EqualsPointwisePrior) {
  const PriorModel m(random_checkpoint(3, 24, 8));
  const std::vector<std::size_t> cats{0, 2};
  const auto rs = rasterize(m, cats, 0.3, 30, 60);
  ASSERT_EQ(rs.size(), 2u);
  for (std::size_t r = 0; r < 30; r += 7) {
    for (std::size_t col = 0; col < 60; col += 11) {
      const auto p = m.prior(cell_center(r, col, 30, 60, 0.3));
      EXPECT_EQ(rs[0].at(r, col), p[0]);
      EXPECT_EQ(rs[1].at(r, col), p[2]);
    }
  }
}

TEST(Raster, CellCentersCoverTheGlobe) {
  const auto first = cell_center(0, 0, 500, 1000, 0.1);
  EXPECT_DOUBLE_EQ(first.lon, -179.82);
  EXPECT_DOUBLE_EQ(first.lat, 89.82);
  const auto last = cell_center(499, 999, 500, 1000, 0.1);
  EXPECT_DOUBLE_EQ(last.lon, 179.82);
  EXPECT_DOUBLE_EQ(last.lat, -89.82);
}

TEST(Raster, MaskZeroesCells) {
  const PriorModel m(random_checkpoint(2, 8, 3));
  RasterMask mask{2, 3, {1, 0, 1, 0, 255, 0}};
  const auto r = rasterize(m, 0, 0.5, 2, 3, &mask);
  const auto plain = rasterize(m, 0, 0.5, 2, 3);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(r.values[i], mask.keep[i] ? plain.values[i] : 0.0);
}

TEST(Raster, MaskDimensionMismatchIsShapeError) {
  const PriorModel m(random_checkpoint(2, 8, 3));
  RasterMask mask{3, 3, std::vector<std::uint8_t>(9, 1)};
  try {
    rasterize(m, 0, 0.5, 2, 3, &mask);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
}

TEST(Raster, CategoryOutOfRangeIsLookupError) {
  const PriorModel m(random_checkpoint(2, 8, 3));
  try {
    rasterize(m, 2, 0.5, 2, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Lookup);
  }
}

TEST(Pgm, MaskRoundTrip) {
  Raster r{2, 3, 0.0, 0, {0.0, 1.0, 0.5, 0.2, 0.0, 1.0}};
  const auto mask = parse_pgm_mask(encode_pgm(r));
  EXPECT_EQ(mask.width, 3u);
  EXPECT_EQ(mask.height, 2u);
  EXPECT_EQ(mask.keep, (std::vector<std::uint8_t>{0, 255, 128, 51, 0, 255}));
}

TEST(Pgm, MalformedMaskIsFormatError) {
  const std::string bad = "P6\n1 1\n255\n\x01";
  try {
    parse_pgm_mask(std::span(reinterpret_cast<const std::uint8_t*>(bad.data()), bad.size()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
  }
  const std::string short_data = "P5\n2 2\n255\n\x01";
  EXPECT_THROW(parse_pgm_mask(std::span(reinterpret_cast<const std::uint8_t*>(short_data.data()), short_data.size())),
               Error);
}

TEST(Combine, PriorFlipsTheDecision) {
  const std::vector<double> s{0.6, 0.4};
  const PriorVector prior{0.01, 0.9};
  const auto post = combine(s, prior);
  EXPECT_EQ(post.argmax, 1u);
  EXPECT_NEAR(post.probs[1], 0.36 / 0.366, 1e-12);
  EXPECT_NEAR(post.probs[0] + post.probs[1], 1.0, 1e-15);
}

TEST(Combine, InvariantToPriorScale) {
  const std::vector<double> s{0.2, 0.5, 0.3};
  const auto a = combine(s, PriorVector{0.1, 0.2, 0.7});
  const auto b = combine(s, PriorVector{0.3, 0.6, 2.1});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.probs[i], b.probs[i], 1e-15);
}

TEST(Combine, NoPriorReturnsScores) {
  const std::vector<double> s{0.2, 0.5, 0.3};
  const auto post = combine(s, std::nullopt);
  EXPECT_EQ(post.probs, s);
  EXPECT_EQ(post.argmax, 1u);
}

TEST(Combine, AllZeroPriorFallsBackToScores) {
  const std::vector<double> s{0.2, 0.8};
  EXPECT_EQ(combine(s, PriorVector{0.0, 0.0}).probs, s);
}

TEST(Combine, SizeMismatchIsVocabularyError) {
  try {
    combine(std::vector<double>{0.5, 0.5}, PriorVector{1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Vocabulary);
  }
}

TEST(Combine, SmoothingAddsAlpha) {
  EXPECT_EQ(smooth_prior(std::vector<double>{0.0, 0.5}, 0.25), (PriorVector{0.25, 0.75}));
  EXPECT_THROW(smooth_prior(std::vector<double>{0.0}, -1.0), Error);
  // A large alpha pulls the posterior toward the classifier.
  const std::vector<double> s{0.6, 0.4};
  const auto post = combine(s, smooth_prior(std::vector<double>{0.01, 0.9}, 100.0));
  EXPECT_EQ(post.argmax, 0u);
}

const Vocabulary kAB(std::vector<std::string>{"a", "b"});

ClassifierScores scores_from(const std::string& text, double tol = 1e-2) {
  std::istringstream in(text);
  return parse_scores_csv(in, kAB, tol);
}

TEST(Scores, ColumnsReorderedToVocabulary) {
  const auto s = scores_from("id,b,a\nx,0.25,0.75\n");
  ASSERT_TRUE(s.find("x"));
  EXPECT_EQ(s.row(*s.find("x"))[0], 0.75);
  EXPECT_EQ(s.categories, kAB);
}

TEST(Scores, RowsRenormalizedWithinTolerance) {
  const auto s = scores_from("id,a,b\nx,0.5,0.505\n");
  EXPECT_NEAR(s.row(0)[0] + s.row(0)[1], 1.0, 1e-15);
  EXPECT_THROW(scores_from("id,a,b\nx,0.5,0.6\n"), Error);
}

TEST(Scores, VocabularyMismatchNamesLabels) {
  try {
    scores_from("id,a,c\nx,0.5,0.5\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Vocabulary);
    EXPECT_NE(std::string(e.what()).find("'c'"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
}

TEST(Scores, MalformedRowsAreSchemaErrors) {
  for (const char* text : {"id,a,b\nx,0.5\n", "id,a,b\nx,1.5,-0.5\n", "id,a,b\nx,0.5,0.5\nx,0.5,0.5\n", "a,b\n"}) {
    try {
      scores_from(text);
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Schema) << text;
    }
  }
}

TEST(Scores, WriteThenReadRoundTrips) {
  const auto s = scores_from("id,a,b\nx,0.125,0.875\ny,1,0\n");
  std::ostringstream out;
  write_scores_csv(out, s.ids, s.probs, kAB);
  const auto back = scores_from(out.str());
  EXPECT_EQ(back.probs, s.probs);
  EXPECT_EQ(back.ids, s.ids);
}

TEST(PriorModel, TrainedPriorPeaksInsideRegion) {
  const auto world = default_world();
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 64;
  cfg.dim = 64;
  cfg.blocks = 2;
  cfg.seed = 5;
  const PriorModel m(train(generate_synthetic(world, 100), cfg).checkpoint);
  for (std::size_t c = 0; c < world.categories.size(); ++c) {
    const auto& r = world.categories[c];
    const SpatioTemporalPoint center{r.lon, r.lat, 0.5};
    const SpatioTemporalPoint antipode{r.lon > 0 ? r.lon - 180 : r.lon + 180, -r.lat, 0.5};
    EXPECT_GT(m.prior(center)[c], m.prior(antipode)[c] + 0.3) << r.name;
  }
}

}  // namespace
}  // namespace geoprior
