#include "alertcast/model_io.hpp"
#include "alertcast/trainer.hpp"

#include <filesystem>
#include <numeric>

#include <unistd.h>

#include <gtest/gtest.h>

namespace alertcast {
namespace {

ModelConfig small_config(std::size_t vocab, std::size_t epochs) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.hidden_size = 16;
  c.arrays = 2;
  c.window = 6;
  c.batch_size = 8;
  c.epochs = epochs;
  c.seed = 42;
  return c;
}

DatasetSplit cycle_split(std::size_t traces, std::size_t length) {
  std::vector<std::vector<EventId>> seqs;
  for (std::size_t t = 0; t < traces; ++t) {
    std::vector<EventId> s;
    for (std::size_t i = 0; i < length; ++i) s.push_back(static_cast<EventId>((i + t) % 3));
    seqs.push_back(s);
  }
  DatasetSplit split;
  split.train = corpus_from_sequences(seqs, numbered_vocabulary(3));
  split.validation = corpus_from_sequences({seqs[0]}, split.train.vocabulary);
  split.test = corpus_from_sequences({}, split.train.vocabulary);
  return split;
}

std::vector<double> flat(const Parameters<double>& p) {
  std::vector<double> out;
  p.for_each_tensor([&](const char*, std::span<const double> s) { out.insert(out.end(), s.begin(), s.end()); });
  return out;
}

const TrainedModel& cycle_model() {
  static const TrainedModel m = train_model(cycle_split(4, 12), small_config(3, 40));
  return m;
}

TEST(Train, MemorizesCycle) {
  const auto& m = cycle_model();
  for (EventId a = 0; a < 3; ++a) {
    const std::vector<EventId> ctx{a};
    const auto p = predict_next(m, ctx);
    EXPECT_EQ(p.event, (a + 1) % 3);
    EXPECT_GT(p.probability, 0.9);
  }
  EXPECT_GE(m.metadata.chosen_epoch, 1u);
  EXPECT_LE(m.metadata.chosen_epoch, m.config.epochs);
  EXPECT_EQ(m.metadata.history.size(), m.config.epochs);
  ASSERT_TRUE(m.metadata.validation_precision.has_value());
  EXPECT_DOUBLE_EQ(*m.metadata.validation_precision, 1.0);
}

TEST(Train, PredictionConsistency) {
  const auto& m = cycle_model();
  const std::vector<EventId> ctx{0, 1, 2, 0};
  const auto d = predict_next_distribution(m, ctx);
  EXPECT_NEAR(std::accumulate(d.probs.begin(), d.probs.end(), 0.0), 1.0, 1e-9);
  const auto p = predict_next(m, ctx);
  EXPECT_EQ(p.probability, d.probs[p.event]);
  EXPECT_THROW(predict_next(m, std::span<const EventId>{}), ContractError);
}

TEST(Train, TruncationInvariance) {
  const auto& m = cycle_model();
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<EventId> tail(m.window());
    for (auto& e : tail) e = static_cast<EventId>(rng.below(3));
    auto longer = tail;
    for (int j = 0; j < 5; ++j) longer.insert(longer.begin(), static_cast<EventId>(rng.below(3)));
    const auto a = predict_next_distribution(m, tail);
    const auto b = predict_next_distribution(m, longer);
    EXPECT_EQ(a.probs, b.probs);
  }
}

TEST(Train, DeterministicAcrossRunsAndThreads) {
  const auto split = cycle_split(70, 10);
  auto cfg = small_config(3, 3);
  cfg.stochastic_train = true;
  const auto a = train_model(split, cfg);
  const auto b = train_model(split, cfg);
  cfg.threads = 4;
  const auto c = train_model(split, cfg);
  EXPECT_EQ(flat(a.params), flat(b.params));
  EXPECT_EQ(flat(a.params), flat(c.params));
  cfg.seed = 43;
  EXPECT_NE(flat(a.params), flat(train_model(split, cfg).params));
}

TEST(Train, SelectsOnTrainingLossWithoutValidation) {
  auto split = cycle_split(3, 9);
  split.validation = corpus_from_sequences({}, split.train.vocabulary);
  const auto m = train_model(split, small_config(3, 10));
  EXPECT_FALSE(m.metadata.validation_precision.has_value());
  double best = m.metadata.history.front().train_loss;
  for (const auto& h : m.metadata.history) best = std::min(best, h.train_loss);
  EXPECT_EQ(m.metadata.train_loss, best);
  // Chosen parameters reproduce the recorded loss.
  EXPECT_NEAR(window_metrics(m, split.train).mean_nll, best, 1e-12);
  EXPECT_LE(best, m.metadata.history.front().train_loss);
}

TEST(Train, RejectsEmptyTrainingSet) {
  DatasetSplit split;
  split.train = corpus_from_sequences({{0}, {1}}, numbered_vocabulary(2));
  split.validation = split.test = corpus_from_sequences({}, split.train.vocabulary);
  EXPECT_THROW(train_model(split, small_config(2, 1)), TrainingError);
  auto cfg = small_config(5, 1);
  split.train = corpus_from_sequences({{0, 1}}, numbered_vocabulary(2));
  EXPECT_THROW(train_model(split, cfg), ConfigError);
}

TEST(Train, SinglePrecisionTrains) {
  auto cfg = small_config(3, 40);
  cfg.precision = Precision::F32;
  const auto m = train_model(cycle_split(4, 12), cfg);
  const std::vector<EventId> ctx{1};
  EXPECT_EQ(predict_next(m, ctx).event, 2u);
}

class ModelFile : public ::testing::Test {
 protected:
  std::filesystem::path path = std::filesystem::temp_directory_path() /
                               ("alertcast_model_" + std::to_string(::getpid()) + ".bin");
  void TearDown() override { std::filesystem::remove(path); }
};

void expect_fault(std::vector<unsigned char> bytes, ModelFileFault fault) {
  try {
    deserialize_model(bytes);
    FAIL() << "expected ModelFileError";
  } catch (const ModelFileError& e) {
    EXPECT_EQ(e.fault(), fault) << e.what();
  }
}

TEST_F(ModelFile, RoundTripPredictionsIdentical) {
  auto m = cycle_model();
  m.metadata.extra["split_seed"] = 7;
  save_model(m, path);
  const auto back = load_model(path);
  EXPECT_EQ(*back.vocab, *m.vocab);
  EXPECT_EQ(back.config.to_json(), m.config.to_json());
  EXPECT_EQ(back.metadata.chosen_epoch, m.metadata.chosen_epoch);
  EXPECT_EQ(back.metadata.extra, m.metadata.extra);
  EXPECT_FALSE(back.metadata.created_at.empty());
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    std::vector<EventId> ctx(1 + rng.below(10));
    for (auto& e : ctx) e = static_cast<EventId>(rng.below(3));
    const auto a = predict_next(m, ctx);
    const auto b = predict_next(back, ctx);
    EXPECT_EQ(a.event, b.event);
    EXPECT_EQ(a.probability, b.probability);
  }
}

TEST_F(ModelFile, SinglePrecisionRoundTrip) {
  auto cfg = small_config(3, 2);
  cfg.precision = Precision::F32;
  const auto m = train_model(cycle_split(2, 8), cfg);
  const auto back = deserialize_model(serialize_model(m));
  EXPECT_EQ(flat(back.params), flat(m.params));
  EXPECT_EQ(back.config.precision, Precision::F32);
}

TEST_F(ModelFile, DistinctFaults) {
  const auto good = serialize_model(cycle_model());
  EXPECT_NO_THROW(deserialize_model(good));

  auto corrupt = good;
  corrupt[corrupt.size() - 20] ^= 0x40;  // inside the parameter block
  expect_fault(corrupt, ModelFileFault::Checksum);

  auto version = good;
  version[4] = 9;
  expect_fault(version, ModelFileFault::Version);

  auto magic = good;
  magic[0] = 'X';
  expect_fault(magic, ModelFileFault::BadMagic);

  for (std::size_t cut : {std::size_t{2}, std::size_t{10}, std::size_t{40}, good.size() - 1}) {
    expect_fault(std::vector<unsigned char>(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut)),
                 ModelFileFault::Truncated);
  }
  auto trailing = good;
  trailing.push_back(0);
  expect_fault(trailing, ModelFileFault::Malformed);
}

TEST_F(ModelFile, CreatedAtFromSourceDateEpoch) {
  ::setenv("SOURCE_DATE_EPOCH", "0", 1);
  auto m = cycle_model();
  m.metadata.created_at.clear();
  save_model(m, path);
  const auto first = read_file_bytes(path);
  save_model(m, path);
  EXPECT_EQ(read_file_bytes(path), first);
  EXPECT_EQ(load_model(path).metadata.created_at, "1970-01-01T00:00:00Z");
  ::unsetenv("SOURCE_DATE_EPOCH");
}

TEST_F(ModelFile, MissingFileIsIoError) {
  EXPECT_THROW(load_model(path / "nope"), IoError);
}

}  // namespace
}  // namespace alertcast
