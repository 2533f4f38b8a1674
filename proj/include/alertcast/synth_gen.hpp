#pragma once

// Synthetic multi-step attack corpora. Each machine runs a random subset of
// attack scripts, their events interleaved with unrelated noise and benign
// background events. An optional planted dependency ends a trace with a
// trigger, d - 1 filler events and the target the trigger determines.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "alertcast/event_data.hpp"
#include "alertcast/trainer.hpp"

namespace alertcast {

struct Branch {
  std::string event;
  double probability = 1.0;
};

// One of the branches fires; with the leftover probability the stage is skipped.
struct ScriptStage {
  std::vector<Branch> branches;
};

struct AttackScript {
  std::string name;
  std::vector<ScriptStage> stages;
  double activation = 1.0;    // probability the script runs on a machine
  double order_jitter = 0.0;  // chance of swapping each adjacent pair of its events

  std::vector<std::string> events() const {
    std::vector<std::string> out;
    for (const auto& s : stages)
      for (const auto& b : s.branches) out.push_back(b.event);
    return out;
  }
};

struct PlantedDependency {
  std::size_t distance = 8;
  double activation = 1.0;
  std::vector<std::pair<std::string, std::string>> pairs;  // trigger -> target
  std::vector<std::string> fillers;
};

struct GeneratorConfig {
  std::string name = "custom";
  std::uint64_t seed = 0;
  std::size_t machines = 100;
  std::vector<AttackScript> scripts;
  std::vector<std::string> noise_events;
  std::vector<std::string> benign_events;
  // Expected share of noise / benign events around script events.
  double noise_rate = 0.0;
  double benign_rate = 0.0;
  // Uniform count of standalone background events per machine.
  std::size_t background_min = 0;
  std::size_t background_max = 0;
  std::optional<PlantedDependency> dependency;
  bool emit_sources = false;

  void validate() const;
  std::vector<std::string> labels() const;
  Json to_json() const;
  static GeneratorConfig from_json(const Json& j);
};

inline std::vector<std::string> GeneratorConfig::labels() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  auto add = [&](const std::string& l) {
    if (seen.insert(l).second) out.push_back(l);
  };
  for (const auto& s : scripts)
    for (const auto& e : s.events()) add(e);
  for (const auto& e : noise_events) add(e);
  for (const auto& e : benign_events) add(e);
  if (dependency) {
    for (const auto& [t, g] : dependency->pairs) {
      add(t);
      add(g);
    }
    for (const auto& f : dependency->fillers) add(f);
  }
  return out;
}

inline void GeneratorConfig::validate() const {
  auto rate = [](double r, const std::string& what) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError(what + " must be in [0, 1]");
  };
  rate(noise_rate, "noise_rate");
  rate(benign_rate, "benign_rate");
  if (noise_rate + benign_rate >= 1.0) throw ConfigError("noise_rate + benign_rate must be < 1");
  if (noise_rate > 0 && noise_events.empty()) throw ConfigError("noise_rate > 0 needs noise_events");
  if (benign_rate > 0 && benign_events.empty()) throw ConfigError("benign_rate > 0 needs benign_events");
  if (background_min > background_max) throw ConfigError("background range is inverted");
  if (background_max > 0 && noise_events.empty() && benign_events.empty())
    throw ConfigError("background events need noise_events or benign_events");
  for (const auto& s : scripts) {
    rate(s.activation, "activation of script '" + s.name + "'");
    rate(s.order_jitter, "order_jitter of script '" + s.name + "'");
    if (s.stages.empty()) throw ConfigError("script '" + s.name + "' has no stages");
    std::set<std::string> distinct;
    for (const auto& st : s.stages) {
      double total = 0.0;
      if (st.branches.empty()) throw ConfigError("script '" + s.name + "' has an empty stage");
      for (const auto& b : st.branches) {
        rate(b.probability, "branch probability");
        total += b.probability;
        if (!distinct.insert(b.event).second)
          throw ConfigError("event '" + b.event + "' repeats within script '" + s.name + "'");
      }
      if (total > 1.0 + 1e-12) throw ConfigError("branch probabilities of a stage in '" + s.name + "' exceed 1");
    }
  }
  if (dependency) {
    rate(dependency->activation, "dependency activation");
    if (dependency->distance < 1) throw ConfigError("dependency distance must be >= 1");
    if (dependency->pairs.empty()) throw ConfigError("dependency needs trigger/target pairs");
    if (dependency->distance > 1 && dependency->fillers.empty()) throw ConfigError("dependency needs filler events");
  }
  if (labels().empty()) throw ConfigError("scenario defines no events");
}

inline Json GeneratorConfig::to_json() const {
  Json scripts_json = Json::array();
  for (const auto& s : scripts) {
    Json stages = Json::array();
    for (const auto& st : s.stages) {
      Json br = Json::array();
      for (const auto& b : st.branches) br.push_back({{"event", b.event}, {"p", b.probability}});
      stages.push_back({{"branches", br}});
    }
    scripts_json.push_back(
        {{"name", s.name}, {"activation", s.activation}, {"order_jitter", s.order_jitter}, {"stages", stages}});
  }
  Json j{{"name", name},
         {"machines", machines},
         {"noise_rate", noise_rate},
         {"benign_rate", benign_rate},
         {"background_events", {background_min, background_max}},
         {"noise_events", noise_events},
         {"benign_events", benign_events},
         {"emit_sources", emit_sources},
         {"scripts", scripts_json}};
  if (dependency) {
    Json pairs = Json::array();
    for (const auto& [t, g] : dependency->pairs) pairs.push_back({t, g});
    j["dependency"] = {{"distance", dependency->distance},
                       {"activation", dependency->activation},
                       {"pairs", pairs},
                       {"fillers", dependency->fillers}};
  }
  return j;
}

inline GeneratorConfig GeneratorConfig::from_json(const Json& j) {
  try {
    GeneratorConfig c;
    c.name = j.value("name", "custom");
    c.machines = j.value("machines", std::size_t{100});
    c.seed = j.value("seed", std::uint64_t{0});
    c.noise_rate = j.value("noise_rate", 0.0);
    c.benign_rate = j.value("benign_rate", 0.0);
    if (j.contains("background_events")) {
      c.background_min = j["background_events"].at(0).get<std::size_t>();
      c.background_max = j["background_events"].at(1).get<std::size_t>();
    }
    c.noise_events = j.value("noise_events", std::vector<std::string>{});
    c.benign_events = j.value("benign_events", std::vector<std::string>{});
    c.emit_sources = j.value("emit_sources", false);
    for (const auto& s : j.value("scripts", Json::array())) {
      AttackScript script;
      script.name = s.at("name").get<std::string>();
      script.activation = s.value("activation", 1.0);
      script.order_jitter = s.value("order_jitter", 0.0);
      for (const auto& st : s.at("stages")) {
        ScriptStage stage;
        for (const auto& b : st.at("branches")) stage.branches.push_back({b.at("event").get<std::string>(), b.value("p", 1.0)});
        script.stages.push_back(std::move(stage));
      }
      c.scripts.push_back(std::move(script));
    }
    if (j.contains("dependency")) {
      const auto& d = j["dependency"];
      PlantedDependency dep;
      dep.distance = d.value("distance", std::size_t{8});
      dep.activation = d.value("activation", 1.0);
      for (const auto& p : d.at("pairs")) dep.pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
      dep.fillers = d.value("fillers", std::vector<std::string>{});
      c.dependency = std::move(dep);
    }
    c.validate();
    return c;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad scenario: ") + e.what());
  }
}

// Which script fired where, and the source of every emitted event:
// "script:<name>:<stage>", "noise", "benign", or "dependency:<trigger|filler|target>".
struct MachineManifest {
  std::string machine;
  std::vector<std::string> scripts_fired;
  std::vector<std::string> sources;
};

struct GenerationManifest {
  std::string scenario;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<std::string>> script_events;
  std::vector<MachineManifest> machines;

  Json to_json() const {
    Json ms = Json::array();
    for (const auto& m : machines) ms.push_back({{"machine", m.machine}, {"scripts", m.scripts_fired}, {"sources", m.sources}});
    return {{"scenario", scenario}, {"seed", seed}, {"script_events", script_events}, {"machines", ms}};
  }

  std::size_t machines_running(const std::string& script) const {
    std::size_t n = 0;
    for (const auto& m : machines) n += std::count(m.scripts_fired.begin(), m.scripts_fired.end(), script);
    return n;
  }
};

struct GeneratedCorpus {
  Corpus corpus;
  GenerationManifest manifest;
};

namespace detail {

struct Emitted {
  std::string label;
  std::string source;
};

inline std::vector<Emitted> run_machine(const GeneratorConfig& cfg, Rng& rng, std::vector<std::string>& fired) {
  // Each fired script yields its stage events, then scripts are interleaved.
  std::vector<std::vector<Emitted>> runs;
  for (const auto& s : cfg.scripts) {
    if (!rng.bernoulli(s.activation)) continue;
    fired.push_back(s.name);
    std::vector<Emitted> run;
    for (std::size_t k = 0; k < s.stages.size(); ++k) {
      const double u = rng.uniform();
      double acc = 0.0;
      for (const auto& b : s.stages[k].branches) {
        acc += b.probability;
        if (u < acc) {
          run.push_back({b.event, "script:" + s.name + ":" + std::to_string(k)});
          break;
        }
      }
    }
    for (std::size_t i = 0; i + 1 < run.size(); ++i)
      if (rng.bernoulli(s.order_jitter)) std::swap(run[i], run[i + 1]);
    runs.push_back(std::move(run));
  }
  std::vector<Emitted> spine;
  std::vector<std::size_t> next(runs.size(), 0);
  std::size_t remaining = 0;
  for (const auto& r : runs) remaining += r.size();
  while (remaining > 0) {
    // pick a script with events left, weighted by what it still has to emit
    std::size_t pick = rng.below(remaining);
    std::size_t r = 0;
    while (pick >= runs[r].size() - next[r]) {
      pick -= runs[r].size() - next[r];
      ++r;
    }
    spine.push_back(runs[r][next[r]++]);
    --remaining;
  }

  auto background = [&]() -> Emitted {
    const std::size_t n = cfg.noise_events.size(), b = cfg.benign_events.size();
    const std::size_t i = rng.below(n + b);
    return i < n ? Emitted{cfg.noise_events[i], "noise"} : Emitted{cfg.benign_events[i - n], "benign"};
  };
  const std::size_t standalone =
      cfg.background_max == 0 ? 0 : cfg.background_min + rng.below(cfg.background_max - cfg.background_min + 1);
  for (std::size_t i = 0; i < standalone; ++i) {
    const auto pos = rng.below(spine.size() + 1);
    spine.insert(spine.begin() + static_cast<std::ptrdiff_t>(pos), background());
  }

  // Geometric runs of noise/benign events before each spine event and at the end.
  std::vector<Emitted> out;
  auto interject = [&] {
    if (cfg.noise_rate + cfg.benign_rate <= 0.0) return;
    for (;;) {
      const double u = rng.uniform();
      if (u < cfg.noise_rate) {
        out.push_back({cfg.noise_events[rng.below(cfg.noise_events.size())], "noise"});
      } else if (u < cfg.noise_rate + cfg.benign_rate) {
        out.push_back({cfg.benign_events[rng.below(cfg.benign_events.size())], "benign"});
      } else {
        break;
      }
    }
  };
  for (auto& e : spine) {
    interject();
    out.push_back(std::move(e));
  }
  if (!spine.empty()) interject();

  if (cfg.dependency && rng.bernoulli(cfg.dependency->activation)) {
    const auto& d = *cfg.dependency;
    const auto& [trigger, target] = d.pairs[rng.below(d.pairs.size())];
    out.push_back({trigger, "dependency:trigger"});
    for (std::size_t i = 1; i < d.distance; ++i) out.push_back({d.fillers[rng.below(d.fillers.size())], "dependency:filler"});
    out.push_back({target, "dependency:target"});
  }
  return out;
}

inline std::string machine_name(std::size_t i, std::size_t total) {
  const std::size_t digits = std::max<std::size_t>(5, std::to_string(total).size());
  std::string s = std::to_string(i);
  return "m" + std::string(digits - std::min(digits, s.size()), '0') + s;
}

}  // namespace detail

inline GeneratedCorpus generate_corpus(const GeneratorConfig& cfg, std::size_t threads = 1) {
  cfg.validate();
  const auto labels = cfg.labels();
  auto vocab = std::make_shared<EventVocabulary>(EventVocabulary::from_labels(labels, false));
  vocab->freeze();

  GeneratedCorpus g;
  g.manifest.scenario = cfg.name;
  g.manifest.seed = cfg.seed;
  for (const auto& s : cfg.scripts) g.manifest.script_events[s.name] = s.events();
  g.manifest.machines.resize(cfg.machines);
  g.corpus.vocabulary = vocab;
  g.corpus.traces.resize(cfg.machines);

  detail::parallel_for(cfg.machines, threads, [&](std::size_t m) {
    Rng rng(derive_seed(cfg.seed, 100, m));
    auto& man = g.manifest.machines[m];
    man.machine = detail::machine_name(m, cfg.machines);
    const auto emitted = detail::run_machine(cfg, rng, man.scripts_fired);
    auto& trace = g.corpus.traces[m];
    trace.machine = man.machine;
    // Script events share one attacker address per (machine, script); the
    // rest come from scattered hosts.
    std::map<std::string, std::string> attacker;
    for (std::size_t i = 0; i < emitted.size(); ++i) {
      trace.events.push_back(vocab->id(emitted[i].label));
      trace.times.push_back(static_cast<std::int64_t>(i + 1));
      man.sources.push_back(emitted[i].source);
      if (cfg.emit_sources) {
        std::string src;
        if (emitted[i].source.rfind("script:", 0) == 0) {
          const auto script = emitted[i].source.substr(7, emitted[i].source.rfind(':') - 7);
          auto it = attacker.find(script);
          if (it == attacker.end())
            it = attacker.emplace(script, "198.51.100." + std::to_string(1 + rng.below(254))).first;
          src = it->second;
        } else {
          src = "203.0.113." + std::to_string(1 + rng.below(254));
        }
        trace.sources.push_back(src);
      }
    }
  });
  return g;
}

// Built-in scenarios.

inline GeneratorConfig default_scenario() {
  GeneratorConfig c;
  c.name = "default";
  c.machines = 2000;
  c.noise_rate = 0.2;
  c.benign_rate = 0.05;
  c.background_min = 1;
  c.background_max = 6;
  c.emit_sources = true;
  AttackScript web{"web-campaign",
                   {{{{"WEB-RECON directory probe", 0.4}, {"WEB-RECON vulnerability scanner", 0.35},
                      {"WEB-RECON server fingerprint", 0.25}}},
                    {{{"WEB-RECON admin page probe", 0.8}}},
                    {{{"FRAMEWORK OGNL injection attempt", 0.3}, {"FRAMEWORK multipart content-type RCE", 0.3},
                      {"FRAMEWORK REST plugin deserialization", 0.2}, {"FRAMEWORK namespace redirect RCE", 0.2}}},
                    {{{"FRAMEWORK remote class loading", 0.6}}},
                    {{{"CMS plugin file upload", 0.35}, {"CMS SQL injection", 0.35}, {"CMS form API RCE", 0.2}}},
                    {{{"POST webshell upload", 0.5}, {"POST remote command execution", 0.35}}}},
                   0.45,
                   0.15};
  AttackScript creds{"credential-campaign",
                     {{{{"AUTH brute force login", 1.0}}},
                      {{{"AUTH default credential use", 0.7}}},
                      {{{"SMB share enumeration", 1.0}}},
                      {{{"SMB remote service creation", 0.6}, {"SMB scheduled task creation", 0.4}}}},
                     0.3,
                     0.1};
  c.scripts = {web, creds};
  for (int i = 0; i < 20; ++i) c.noise_events.push_back("NOISE signature " + std::to_string(i));
  for (int i = 0; i < 5; ++i) c.benign_events.push_back("BENIGN activity " + std::to_string(i));
  return c;
}

// Trigger j fixes the event 8 steps later; the 7 steps between are uniform
// over the payload events, which also serve as targets.
inline GeneratorConfig long_memory_scenario(std::size_t distance = 8) {
  GeneratorConfig c;
  c.name = "long-memory";
  c.machines = 5000;
  PlantedDependency d;
  d.distance = distance;
  constexpr std::size_t kPairs = 15;
  for (std::size_t j = 0; j < kPairs; ++j) {
    const std::string payload = "payload-" + std::to_string(j);
    d.fillers.push_back(payload);
  }
  for (std::size_t j = 0; j < kPairs; ++j)
    d.pairs.emplace_back("trigger-" + std::to_string(j), d.fillers[(j * 7 + 3) % kPairs]);
  c.dependency = d;
  // A short payload prefix varies trace lengths.
  c.noise_events = d.fillers;
  c.background_min = 0;
  c.background_max = 3;
  return c;
}

inline GeneratorConfig builtin_scenario(const std::string& name) {
  if (name == "default") return default_scenario();
  if (name == "long-memory") return long_memory_scenario();
  throw ConfigError("unknown built-in scenario '" + name + "' (expected default or long-memory)");
}

}  // namespace alertcast
