#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

namespace geoprior {
namespace {

std::vector<Observation> observations_of(std::size_t category, std::size_t n) {
  std::vector<Observation> out(n);
  for (auto& o : out) o.category = category;
  return out;
}

TEST(BuildEpoch, SmallCategoryKeepsEverything) {
  Rng rng(1);
  const auto obs = observations_of(0, 50);
  auto ids = build_epoch(obs, 1, 100, rng);
  std::sort(ids.begin(), ids.end());
  std::vector<std::size_t> all(50);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(ids, all);
}

TEST(BuildEpoch, CapsAndResamples) {
  Rng rng(2);
  const auto obs = observations_of(0, 500);
  const auto a = build_epoch(obs, 1, 100, rng);
  const auto b = build_epoch(obs, 1, 100, rng);
  EXPECT_EQ(a.size(), 100u);
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 100u);
  EXPECT_NE(std::set<std::size_t>(a.begin(), a.end()), std::set<std::size_t>(b.begin(), b.end()));
}

TEST(BuildEpoch, CapsPerCategory) {
  Rng rng(3);
  auto obs = observations_of(0, 300);
  const auto more = observations_of(1, 20);
  obs.insert(obs.end(), more.begin(), more.end());
  const auto ids = build_epoch(obs, 2, 100, rng);
  std::size_t ones = 0;
  for (auto i : ids) ones += obs[i].category;
  EXPECT_EQ(ids.size(), 120u);
  EXPECT_EQ(ones, 20u);
}

TEST(BuildEpoch, ZeroCapKeepsEverything) {
  Rng rng(4);
  EXPECT_EQ(build_epoch(observations_of(0, 500), 1, 0, rng).size(), 500u);
}

TEST(BuildEpoch, EmptyInputIsError) {
  Rng rng(5);
  EXPECT_THROW(build_epoch({}, 1, 100, rng), Error);
}

TrainConfig small_config() {
  TrainConfig c;
  c.epochs = 5;
  c.batch_size = 64;
  c.dim = 32;
  c.blocks = 2;
  c.seed = 3;
  return c;
}

TEST(Train, LossDecreasesOverFirstEpochs) {
  const auto data = generate_synthetic(default_world(), 100);
  const auto r = train(data, small_config());
  ASSERT_EQ(r.log.size(), 5u);
  for (std::size_t e = 1; e < r.log.size(); ++e) EXPECT_LT(r.log[e].loss, r.log[e - 1].loss) << "epoch " << e + 1;
  EXPECT_EQ(r.log[0].examples, 400u);
}

TEST(Train, DegenerateSingleObservation) {
  Dataset data;
  data.categories.add("only");
  Observation o;
  o.id = "a";
  o.point = {10, 10, 0.5};
  data.observations.push_back(o);
  auto c = small_config();
  c.epochs = 1;
  const auto r = train(data, c);
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.log[0].loss));
  EXPECT_EQ(r.checkpoint.shape.categories, 1u);
}

TEST(Train, SameSeedGivesIdenticalBytes) {
  const auto data = generate_synthetic(default_world(), 30);
  auto c = small_config();
  c.epochs = 2;
  const auto a = serialize_checkpoint(train(data, c).checkpoint);
  const auto b = serialize_checkpoint(train(data, c).checkpoint);
  EXPECT_EQ(a, b);
  c.seed = 4;
  EXPECT_NE(a, serialize_checkpoint(train(data, c).checkpoint));
}

TEST(Train, InvalidConfigIsConfigError) {
  const auto data = generate_synthetic(default_world(), 5);
  auto c = small_config();
  c.dropout_rate = 1.0;
  try {
    train(data, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Train, WarnsAboutEmptyCategory) {
  auto data = generate_synthetic(default_world(), 5);
  data.categories.add("ghost");
  std::ostringstream warn;
  auto c = small_config();
  c.epochs = 1;
  train(data, c, {}, &warn);
  EXPECT_NE(warn.str().find("ghost"), std::string::npos);
}

TEST(Train, EpochLogFormat) {
  EXPECT_EQ(format_epoch_log({3, 1.5, 400}), "epoch 3 loss 1.5 examples 400");
}

Checkpoint small_checkpoint(const Variant& v = {}) {
  const auto data = generate_synthetic(default_world(), 10);
  auto c = small_config();
  c.epochs = 1;
  c.variant = v;
  return train(data, c).checkpoint;
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto c = small_checkpoint();
  const auto bytes = serialize_checkpoint(c);
  const auto back = parse_checkpoint(bytes);
  EXPECT_EQ(back, c);
  float max_diff = 0;
  for (std::size_t i = 0; i < c.weights.size(); ++i) max_diff = std::max(max_diff, std::abs(c.weights[i] - back.weights[i]));
  EXPECT_EQ(max_diff, 0.0f);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = testing::temp_dir("ckpt");
  const auto c = small_checkpoint();
  save_checkpoint(c, dir / "m.bin");
  EXPECT_EQ(load_checkpoint(dir / "m.bin"), c);
}

TEST(Checkpoint, TruncationNamesTheField) {
  const auto bytes = serialize_checkpoint(small_checkpoint());
  for (std::size_t cut : {std::size_t{4}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> head(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      parse_checkpoint(head);
      FAIL() << cut;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Format);
      EXPECT_NE(std::string(e.what()).find('\''), std::string::npos) << e.what();
    }
  }
}

TEST(Checkpoint, BadMagicIsFormatError) {
  auto bytes = serialize_checkpoint(small_checkpoint());
  bytes[0] = 'X';
  try {
    parse_checkpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
  }
}

TEST(Checkpoint, ParamsRoundTripThroughF32) {
  const auto c = small_checkpoint();
  const auto params = to_params(c);
  EXPECT_EQ(make_checkpoint(params, c.categories, c.photographers), c);
}

TEST(Checkpoint, NoDateModelIgnoresDate) {
  const PriorModel m(small_checkpoint({false, true, true}));
  EXPECT_EQ(m.prior({30, 40, 0.05}), m.prior({30, 40, 0.75}));
}

}  // namespace
}  // namespace geoprior
