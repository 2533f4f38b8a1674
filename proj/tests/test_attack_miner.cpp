#include "alertcast/attack_miner.hpp"
#include "alertcast/synth_gen.hpp"

#include <gtest/gtest.h>

namespace alertcast {
namespace {

std::set<std::string> labels(const CandidateAttack& c, const EventVocabulary& v) {
  std::set<std::string> out;
  for (auto e : c.events) out.insert(v.label(e));
  return out;
}

AttackScript linear_script(const std::string& name, std::size_t stages, double activation) {
  AttackScript s;
  s.name = name;
  s.activation = activation;
  s.order_jitter = 0.2;
  for (std::size_t i = 0; i < stages; ++i) s.stages.push_back({{{name + "-" + std::to_string(i), 1.0}}});
  return s;
}

TEST(Profile, CountsAndSupport) {
  const auto c = corpus_from_sequences({{0, 0, 1}, {0, 2}, {}}, numbered_vocabulary(3));
  const auto f = frequency_profile(c);
  EXPECT_EQ(f.occurrences, (std::vector<std::uint64_t>{3, 1, 1}));
  EXPECT_EQ(f.support, (std::vector<std::uint64_t>{2, 1, 1}));
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_LE(f.support[e], f.machines);
    EXPECT_GE(f.occurrences[e], f.support[e]);
  }
}

TEST(Miner, EmptyCorpus) {
  EXPECT_TRUE(mine_candidates(Corpus{}, {0.1, 1}).empty());
  EXPECT_THROW(mine_candidates(Corpus{}, {0.0, 1}), ConfigError);
  EXPECT_THROW(mine_candidates(Corpus{}, {0.1, 0}), ConfigError);
}

TEST(Miner, PlantedScriptWithFrequentNoise) {
  GeneratorConfig cfg;
  cfg.machines = 4000;
  cfg.seed = 11;
  cfg.scripts = {linear_script("attack", 5, 0.5)};
  cfg.noise_events = {"frequent-noise"};
  cfg.background_min = 1;
  cfg.background_max = 3;
  cfg.noise_rate = 0.1;
  const auto g = generate_corpus(cfg);
  const auto found = mine_candidates(g.corpus, {0.10, 1000});
  ASSERT_EQ(found.size(), 1u);
  const auto& want = g.manifest.script_events.at("attack");
  EXPECT_EQ(labels(found[0], *g.corpus.vocabulary), std::set<std::string>(want.begin(), want.end()));
  EXPECT_EQ(found[0].support, g.manifest.machines_running("attack"));
}

TEST(Miner, SeparatesScriptsAndSortsBySupport) {
  GeneratorConfig cfg;
  cfg.machines = 3000;
  cfg.seed = 5;
  cfg.scripts = {linear_script("a", 4, 0.3), linear_script("b", 3, 0.5), linear_script("c", 3, 0.52)};
  for (int i = 0; i < 10; ++i) cfg.noise_events.push_back("n" + std::to_string(i));
  cfg.noise_rate = 0.3;
  const auto g = generate_corpus(cfg);
  const auto found = mine_candidates(g.corpus, {0.10, 200});
  ASSERT_EQ(found.size(), 3u);
  for (std::size_t i = 1; i < found.size(); ++i) EXPECT_GE(found[i - 1].support, found[i].support);
  std::set<std::set<std::string>> got, want;
  for (const auto& c : found) got.insert(labels(c, *g.corpus.vocabulary));
  for (const auto& [name, evs] : g.manifest.script_events) want.insert(std::set<std::string>(evs.begin(), evs.end()));
  EXPECT_EQ(got, want);
}

TEST(Miner, RaisingThresholdNeverAdds) {
  auto cfg = default_scenario();
  cfg.machines = 3000;
  const auto g = generate_corpus(cfg);
  std::optional<std::set<std::vector<EventId>>> previous;
  for (std::uint64_t t : {1u, 50u, 200u, 500u, 800u, 1200u, 2000u}) {
    std::set<std::vector<EventId>> now;
    for (const auto& c : mine_candidates(g.corpus, {0.10, t})) now.insert(c.events);
    if (previous) EXPECT_TRUE(std::includes(previous->begin(), previous->end(), now.begin(), now.end())) << t;
    previous = now;
  }
}

TEST(Miner, PureNoiseHasNoCandidates) {
  GeneratorConfig cfg;
  cfg.machines = 5000;
  for (int i = 0; i < 20; ++i) cfg.noise_events.push_back("n" + std::to_string(i));
  cfg.background_min = 1;
  cfg.background_max = 8;
  const auto g = generate_corpus(cfg);
  EXPECT_TRUE(mine_candidates(g.corpus, {0.10, 200}).empty());
}

TEST(Miner, SourceAnnotation) {
  GeneratorConfig cfg;
  cfg.machines = 1000;
  cfg.scripts = {linear_script("s", 3, 1.0)};
  cfg.emit_sources = true;
  const auto g = generate_corpus(cfg);
  auto found = mine_candidates(g.corpus, {0.10, 100});
  ASSERT_EQ(found.size(), 1u);
  EXPECT_FALSE(found[0].source_consistency.has_value());
  annotate_sources(found, g.corpus);
  ASSERT_TRUE(found[0].source_consistency.has_value());
  EXPECT_EQ(*found[0].source_consistency, 1.0);
  const auto j = candidates_to_json(found, *g.corpus.vocabulary);
  EXPECT_EQ(j[0]["events"].size(), 3u);
  EXPECT_EQ(j[0]["support"].get<std::uint64_t>(), 1000u);
}

TEST(Miner, MedianBandSplitsDistinctFrequencies) {
  // e0,e1 on 100 machines; e2,e3 on those plus 30 more. A 50% margin keeps
  // all four together, a 10% margin separates the two pairs.
  std::vector<std::vector<EventId>> seqs;
  for (int m = 0; m < 130; ++m) {
    if (m < 100) seqs.push_back({0, 1, 2, 3});
    else seqs.push_back({2, 3});
  }
  const auto c = corpus_from_sequences(seqs, numbered_vocabulary(4));
  const auto loose = mine_candidates(c, {0.5, 10});
  ASSERT_EQ(loose.size(), 1u);
  EXPECT_EQ(loose[0].events.size(), 4u);
  const auto tight = mine_candidates(c, {0.10, 10});
  ASSERT_EQ(tight.size(), 2u);
  EXPECT_EQ(tight[0].events, (std::vector<EventId>{2, 3}));
  EXPECT_EQ(tight[1].events, (std::vector<EventId>{0, 1}));
}

}  // namespace
}  // namespace alertcast
