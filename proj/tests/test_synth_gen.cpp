#include "alertcast/synth_gen.hpp"

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

namespace alertcast {
namespace {

AttackScript linear_script(const std::string& name, std::size_t stages, double activation = 1.0) {
  AttackScript s;
  s.name = name;
  s.activation = activation;
  for (std::size_t i = 0; i < stages; ++i) s.stages.push_back({{{name + "-" + std::to_string(i), 1.0}}});
  return s;
}

std::string corpus_text(const GeneratedCorpus& g) {
  std::ostringstream out;
  write_corpus_jsonl(out, g.corpus);
  return out.str();
}

TEST(Generator, NoiselessLinearScriptVerbatim) {
  GeneratorConfig c;
  c.machines = 50;
  c.scripts = {linear_script("s", 5)};
  const auto g = generate_corpus(c);
  ASSERT_EQ(g.corpus.traces.size(), 50u);
  for (const auto& t : g.corpus.traces) {
    ASSERT_EQ(t.events.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(g.corpus.vocabulary->label(t.events[i]), "s-" + std::to_string(i));
  }
}

TEST(Generator, SameSeedByteIdentical) {
  auto c = default_scenario();
  c.machines = 300;
  c.seed = 7;
  const auto a = generate_corpus(c);
  const auto b = generate_corpus(c, 4);
  EXPECT_EQ(corpus_text(a), corpus_text(b));
  EXPECT_EQ(a.manifest.to_json().dump(), b.manifest.to_json().dump());
  c.seed = 8;
  EXPECT_NE(corpus_text(a), corpus_text(generate_corpus(c)));
}

TEST(Generator, ActivationBinomialBound) {
  GeneratorConfig c;
  c.machines = 10000;
  c.seed = 3;
  c.scripts = {linear_script("s", 3, 0.5)};
  const auto g = generate_corpus(c);
  const auto fired = static_cast<double>(g.manifest.machines_running("s"));
  EXPECT_LE(std::abs(fired - 5000.0), 150.0);
}

TEST(Generator, EveryEventHasOneSource) {
  auto c = default_scenario();
  c.machines = 400;
  c.dependency = long_memory_scenario().dependency;
  const auto g = generate_corpus(c);
  for (std::size_t m = 0; m < g.corpus.traces.size(); ++m) {
    const auto& t = g.corpus.traces[m];
    const auto& man = g.manifest.machines[m];
    ASSERT_EQ(man.sources.size(), t.events.size());
    ASSERT_EQ(t.sources.size(), t.events.size());
    for (std::size_t i = 0; i < t.events.size(); ++i) {
      const auto& src = man.sources[i];
      const auto& label = g.corpus.vocabulary->label(t.events[i]);
      if (src.rfind("script:", 0) == 0) {
        const auto name = src.substr(7, src.rfind(':') - 7);
        const auto& evs = g.manifest.script_events.at(name);
        EXPECT_NE(std::find(evs.begin(), evs.end(), label), evs.end());
        EXPECT_NE(std::find(man.scripts_fired.begin(), man.scripts_fired.end(), name), man.scripts_fired.end());
      } else {
        EXPECT_TRUE(src == "noise" || src == "benign" || src.rfind("dependency:", 0) == 0) << src;
      }
    }
  }
}

TEST(Generator, ScriptEventsInVaryingOrders) {
  auto c = default_scenario();
  c.machines = 500;
  const auto g = generate_corpus(c);
  // the two brute-force/auth events of the credential campaign appear in both orders
  const auto brute = g.corpus.vocabulary->id("AUTH brute force login");
  const auto deflt = g.corpus.vocabulary->id("AUTH default credential use");
  std::size_t forward = 0, backward = 0;
  for (const auto& t : g.corpus.traces) {
    const auto a = std::find(t.events.begin(), t.events.end(), brute);
    const auto b = std::find(t.events.begin(), t.events.end(), deflt);
    if (a == t.events.end() || b == t.events.end()) continue;
    (a < b ? forward : backward) += 1;
  }
  EXPECT_GT(forward, 0u);
  EXPECT_GT(backward, 0u);
}

TEST(Generator, PlantedDependencyIsDeterministic) {
  auto c = long_memory_scenario();
  c.machines = 2000;
  const auto g = generate_corpus(c);
  const auto& dep = *c.dependency;
  std::map<std::string, std::string> target_of(dep.pairs.begin(), dep.pairs.end());
  std::size_t checked = 0;
  for (const auto& t : g.corpus.traces) {
    const auto& v = *g.corpus.vocabulary;
    for (std::size_t i = 0; i + dep.distance < t.events.size(); ++i) {
      const auto it = target_of.find(v.label(t.events[i]));
      if (it == target_of.end()) continue;
      EXPECT_EQ(v.label(t.events[i + dep.distance]), it->second);
      ++checked;
    }
    ASSERT_GE(t.events.size(), dep.distance + 1);
  }
  EXPECT_EQ(checked, 2000u);
  EXPECT_EQ(g.corpus.vocab_size(), 30u);
}

TEST(Generator, ScenarioJsonRoundTrip) {
  const auto c = default_scenario();
  const auto back = GeneratorConfig::from_json(Json::parse(c.to_json().dump()));
  EXPECT_EQ(back.to_json(), c.to_json());
  auto lm = long_memory_scenario();
  EXPECT_EQ(GeneratorConfig::from_json(lm.to_json()).to_json(), lm.to_json());
}

TEST(Generator, ValidationErrors) {
  GeneratorConfig empty;
  EXPECT_THROW(generate_corpus(empty), ConfigError);
  GeneratorConfig c;
  c.scripts = {linear_script("s", 2)};
  c.noise_rate = 0.2;
  EXPECT_THROW(c.validate(), ConfigError);
  c.noise_rate = 0;
  c.scripts[0].stages[0].branches.push_back({"x", 0.5});
  EXPECT_THROW(c.validate(), ConfigError);
  c.scripts = {linear_script("s", 2)};
  c.scripts[0].stages[1].branches[0].event = "s-0";
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(builtin_scenario("nope"), ConfigError);
  EXPECT_THROW(GeneratorConfig::from_json(Json::parse(R"({"scripts":[{"stages":[]}]})")), ConfigError);
}

TEST(Generator, NoiseShareTracksRate) {
  GeneratorConfig c;
  c.machines = 2000;
  c.scripts = {linear_script("s", 10)};
  c.noise_events = {"n0", "n1", "n2"};
  c.noise_rate = 0.3;
  const auto g = generate_corpus(c);
  std::size_t noise = 0, total = 0;
  for (const auto& m : g.manifest.machines) {
    for (const auto& s : m.sources) noise += s == "noise";
    total += m.sources.size();
  }
  // 11 insertion points with r/(1-r) noise events each: about 4.7 per 10 script events
  const double share = static_cast<double>(noise) / static_cast<double>(total);
  EXPECT_GT(share, 0.28);
  EXPECT_LT(share, 0.36);
}

}  // namespace
}  // namespace alertcast
