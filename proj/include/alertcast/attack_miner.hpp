#pragma once

// Candidate multi-step attacks: sets of events seen on nearly the same
// machines. Frequency is machine support. Events are linked when they
// co-occur on at least (1 - margin) of the machines of the more frequent one;
// each linked component is cut into median-anchored frequency bands.

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

#include "alertcast/event_data.hpp"

namespace alertcast {

struct FrequencyProfile {
  std::vector<std::uint64_t> occurrences;  // per event id, across all machines
  std::vector<std::uint64_t> support;      // per event id, distinct machines
  std::size_t machines = 0;
};

inline FrequencyProfile frequency_profile(const Corpus& corpus) {
  FrequencyProfile f;
  const auto v = corpus.vocab_size();
  f.occurrences.assign(v, 0);
  f.support.assign(v, 0);
  f.machines = corpus.traces.size();
  std::vector<std::size_t> last_seen(v, SIZE_MAX);
  for (std::size_t m = 0; m < corpus.traces.size(); ++m) {
    for (auto e : corpus.traces[m].events) {
      ++f.occurrences[e];
      if (last_seen[e] != m) {
        last_seen[e] = m;
        ++f.support[e];
      }
    }
  }
  return f;
}

struct CandidateAttack {
  std::vector<EventId> events;  // ascending ids
  double band_low = 0.0;        // support range of the members
  double band_high = 0.0;
  double band_median = 0.0;
  std::uint64_t support = 0;  // machines carrying every member
  // Share of supporting machines where all members came from one source.
  std::optional<double> source_consistency;
};

struct MinerConfig {
  double margin = 0.10;
  std::uint64_t support_threshold = 1000;

  void validate() const {
    if (!(margin > 0.0 && margin < 1.0)) throw ConfigError("margin must be in (0, 1)");
    if (support_threshold < 1) throw ConfigError("support threshold must be >= 1");
  }
};

namespace detail {

class MachineSet {
 public:
  explicit MachineSet(std::size_t n = 0) : words_((n + 63) / 64, 0) {}
  void set(std::size_t i) { words_[i / 64] |= std::uint64_t{1} << (i % 64); }
  std::uint64_t count() const {
    std::uint64_t n = 0;
    for (auto w : words_) n += static_cast<std::uint64_t>(std::popcount(w));
    return n;
  }
  std::uint64_t count_and(const MachineSet& o) const {
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < words_.size(); ++i) n += static_cast<std::uint64_t>(std::popcount(words_[i] & o.words_[i]));
    return n;
  }
  void intersect(const MachineSet& o) {
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
  }
  bool test(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1u; }

 private:
  std::vector<std::uint64_t> words_;
};

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline bool within_band(const std::vector<double>& freqs, double margin) {
  const double med = median_of(freqs);
  for (double f : freqs)
    if (std::abs(f - med) > margin * med) return false;
  return true;
}

}  // namespace detail

inline std::vector<CandidateAttack> mine_candidates(const Corpus& corpus, const MinerConfig& cfg = {}) {
  cfg.validate();
  const auto profile = frequency_profile(corpus);
  const std::size_t v = corpus.vocab_size();
  const std::size_t machines = corpus.traces.size();

  // Grouping ignores the threshold; it only filters finished groups, so a
  // higher threshold yields a subset of the candidates.
  std::vector<EventId> eligible;
  for (EventId e = 0; e < v; ++e)
    if (profile.support[e] > 0) eligible.push_back(e);
  std::stable_sort(eligible.begin(), eligible.end(),
                   [&](EventId a, EventId b) { return profile.support[a] < profile.support[b]; });
  if (eligible.size() < 2) return {};

  std::vector<detail::MachineSet> present(v);
  for (auto e : eligible) present[e] = detail::MachineSet(machines);
  for (std::size_t m = 0; m < machines; ++m)
    for (auto e : corpus.traces[m].events) present[e].set(m);

  // Union-find over the co-occurrence links. co <= min support, so only pairs
  // with min >= (1 - margin) * max can link.
  std::vector<std::size_t> parent(eligible.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t a = 0; a < eligible.size(); ++a) {
    const auto sa = static_cast<double>(profile.support[eligible[a]]);
    for (std::size_t b = a + 1; b < eligible.size(); ++b) {
      const auto sb = static_cast<double>(profile.support[eligible[b]]);
      if (sa < (1.0 - cfg.margin) * sb) break;
      const auto co = static_cast<double>(present[eligible[a]].count_and(present[eligible[b]]));
      if (co >= (1.0 - cfg.margin) * sb) parent[find(a)] = find(b);
    }
  }
  std::vector<std::vector<EventId>> components;
  std::vector<std::size_t> comp_of(eligible.size(), SIZE_MAX);
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    const auto r = find(i);
    if (comp_of[r] == SIZE_MAX) {
      comp_of[r] = components.size();
      components.emplace_back();
    }
    components[comp_of[r]].push_back(eligible[i]);
  }

  std::vector<CandidateAttack> out;
  for (auto& comp : components) {
    if (comp.size() < 2) continue;
    // Greedy banding in ascending support (components inherit the order):
    // extend while the band around the group median still admits every member.
    std::size_t start = 0;
    while (start < comp.size()) {
      std::vector<double> freqs{static_cast<double>(profile.support[comp[start]])};
      std::size_t end = start + 1;
      while (end < comp.size()) {
        freqs.push_back(static_cast<double>(profile.support[comp[end]]));
        if (!detail::within_band(freqs, cfg.margin)) {
          freqs.pop_back();
          break;
        }
        ++end;
      }
      if (end - start >= 2) {
        CandidateAttack c;
        c.events.assign(comp.begin() + static_cast<std::ptrdiff_t>(start), comp.begin() + static_cast<std::ptrdiff_t>(end));
        std::sort(c.events.begin(), c.events.end());
        auto all = present[c.events[0]];
        for (std::size_t i = 1; i < c.events.size(); ++i) all.intersect(present[c.events[i]]);
        c.support = all.count();
        c.band_low = freqs.front();
        c.band_high = freqs.back();
        c.band_median = detail::median_of(freqs);
        if (c.support >= cfg.support_threshold) out.push_back(std::move(c));
      }
      start = end;
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const CandidateAttack& a, const CandidateAttack& b) {
    if (a.support != b.support) return a.support > b.support;
    return a.events < b.events;
  });
  return out;
}

// Fills source_consistency when the corpus carries source addresses.
inline void annotate_sources(std::vector<CandidateAttack>& candidates, const Corpus& corpus) {
  for (auto& c : candidates) {
    const std::set<EventId> members(c.events.begin(), c.events.end());
    std::uint64_t supporting = 0, consistent = 0;
    bool any_sources = false;
    for (const auto& t : corpus.traces) {
      if (t.sources.empty()) continue;
      any_sources = true;
      std::set<EventId> seen;
      std::set<std::string> srcs;
      for (std::size_t i = 0; i < t.events.size(); ++i) {
        if (!members.count(t.events[i])) continue;
        seen.insert(t.events[i]);
        srcs.insert(t.sources[i]);
      }
      if (seen.size() != members.size()) continue;
      ++supporting;
      consistent += srcs.size() == 1;
    }
    if (any_sources && supporting > 0) c.source_consistency = static_cast<double>(consistent) / static_cast<double>(supporting);
  }
}

inline Json candidates_to_json(const std::vector<CandidateAttack>& candidates, const EventVocabulary& vocab) {
  Json out = Json::array();
  for (const auto& c : candidates) {
    Json labels = Json::array();
    for (auto e : c.events) labels.push_back(vocab.label(e));
    Json j{{"events", labels},
           {"support", c.support},
           {"band", {{"low", c.band_low}, {"median", c.band_median}, {"high", c.band_high}}}};
    if (c.source_consistency) j["source_consistency"] = *c.source_consistency;
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace alertcast
