#pragma once

// Event ingestion: vocabulary, per-machine traces, machine-disjoint splits
// and sliding training windows.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "alertcast/errors.hpp"
#include "alertcast/rng.hpp"

namespace alertcast {

using EventId = std::uint32_t;
using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

inline constexpr const char* kUnknownLabel = "<unk>";

class EventVocabulary {
 public:
  EventVocabulary() = default;

  static EventVocabulary from_labels(const std::vector<std::string>& labels, bool freeze_now = true) {
    EventVocabulary v;
    for (const auto& l : labels) {
      if (v.find(l)) throw VocabularyError("duplicate label '" + l + "'");
      v.add(l);
    }
    if (freeze_now) v.frozen_ = true;
    return v;
  }

  EventId add(const std::string& label) {
    if (frozen_) throw VocabularyError("vocabulary is frozen; cannot add '" + label + "'");
    if (label.empty()) throw VocabularyError("empty event label");
    if (auto it = index_.find(label); it != index_.end()) return it->second;
    const auto id = static_cast<EventId>(labels_.size());
    labels_.push_back(label);
    index_.emplace(label, id);
    return id;
  }

  // Freezing with `with_unknown` appends the reserved <unk> label last.
  void freeze(bool with_unknown = false) {
    if (frozen_) return;
    if (with_unknown && !index_.contains(kUnknownLabel)) add(kUnknownLabel);
    frozen_ = true;
  }

  bool frozen() const noexcept { return frozen_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }

  std::optional<EventId> find(const std::string& label) const {
    if (auto it = index_.find(label); it != index_.end()) return it->second;
    return std::nullopt;
  }

  EventId id(const std::string& label) const {
    if (auto found = find(label)) return *found;
    throw VocabularyError("unknown event label '" + label + "'");
  }

  std::optional<EventId> unknown_id() const { return find(kUnknownLabel); }

  const std::string& label(EventId id) const {
    if (id >= labels_.size()) throw VocabularyError("event id " + std::to_string(id) + " out of range");
    return labels_[id];
  }

  const std::vector<std::string>& labels() const noexcept { return labels_; }

  Json to_json() const { return Json(labels_); }

  static EventVocabulary from_json(const Json& j) {
    if (!j.is_array()) throw VocabularyError("vocabulary must be a JSON array of labels");
    std::vector<std::string> labels;
    labels.reserve(j.size());
    for (const auto& e : j) {
      if (!e.is_string()) throw VocabularyError("vocabulary entries must be strings");
      labels.push_back(e.get<std::string>());
    }
    return from_labels(labels);
  }

  friend bool operator==(const EventVocabulary& a, const EventVocabulary& b) {
    return a.labels_ == b.labels_;
  }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, EventId> index_;
  bool frozen_ = false;
};

using VocabularyPtr = std::shared_ptr<const EventVocabulary>;

struct RawEventRecord {
  std::string machine;
  std::int64_t timestamp = 0;
  std::string event;
  std::optional<std::string> source;
};

struct MachineTrace {
  std::string machine;
  std::vector<EventId> events;
  std::vector<std::int64_t> times;
  // Per-event source address; empty when the input carried none.
  std::vector<std::string> sources;

  std::size_t size() const noexcept { return events.size(); }
};

struct Corpus {
  VocabularyPtr vocabulary = std::make_shared<const EventVocabulary>();
  std::vector<MachineTrace> traces;

  std::size_t event_count() const {
    std::size_t n = 0;
    for (const auto& t : traces) n += t.size();
    return n;
  }

  std::size_t vocab_size() const { return vocabulary ? vocabulary->size() : 0; }
};

// Builds a corpus straight from id sequences; machine names are m0, m1, ...
inline Corpus corpus_from_sequences(const std::vector<std::vector<EventId>>& seqs, VocabularyPtr vocab) {
  Corpus c;
  c.vocabulary = std::move(vocab);
  c.traces.reserve(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    MachineTrace t;
    t.machine = "m" + std::to_string(i);
    t.events = seqs[i];
    t.times.resize(seqs[i].size());
    std::iota(t.times.begin(), t.times.end(), std::int64_t{0});
    for (auto e : t.events) {
      if (e >= c.vocab_size()) throw VocabularyError("event id " + std::to_string(e) + " out of range");
    }
    c.traces.push_back(std::move(t));
  }
  return c;
}

// Vocabulary of n synthetic labels "e0".."e{n-1}".
inline VocabularyPtr numbered_vocabulary(std::size_t n, const std::string& prefix = "e") {
  std::vector<std::string> labels;
  labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) labels.push_back(prefix + std::to_string(i));
  return std::make_shared<const EventVocabulary>(EventVocabulary::from_labels(labels));
}

enum class UnknownLabelPolicy { Strict, Lenient };

struct IngestOptions {
  // Frozen vocabulary to map labels through; null builds a fresh one.
  VocabularyPtr vocabulary;
  UnknownLabelPolicy unknown = UnknownLabelPolicy::Strict;
  // When building a fresh vocabulary, reserve <unk> at freeze time.
  bool reserve_unknown = false;
};

inline RawEventRecord parse_event_record(const std::string& line, std::size_t line_no) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(line_no, "record must be a JSON object");
  RawEventRecord r;
  auto m = j.find("machine");
  if (m == j.end() || !m->is_string() || m->get<std::string>().empty())
    throw ParseError(line_no, "field 'machine' must be a non-empty string");
  r.machine = m->get<std::string>();
  auto ts = j.find("ts");
  if (ts == j.end() || !ts->is_number_integer()) throw ParseError(line_no, "field 'ts' must be an integer");
  r.timestamp = ts->get<std::int64_t>();
  if (r.timestamp < 0) throw ParseError(line_no, "field 'ts' must be >= 0");
  auto ev = j.find("event");
  if (ev == j.end() || !ev->is_string() || ev->get<std::string>().empty())
    throw ParseError(line_no, "field 'event' must be a non-empty string");
  r.event = ev->get<std::string>();
  if (auto src = j.find("src"); src != j.end()) {
    if (!src->is_string()) throw ParseError(line_no, "field 'src' must be a string");
    r.source = src->get<std::string>();
  }
  return r;
}

// Reads JSON-lines event records and reconstructs one time-ordered trace per
// machine. Traces appear in order of each machine's first record; ties on
// timestamp keep input order. A freshly built vocabulary assigns ids in order
// of first appearance across the reconstructed traces.
inline Corpus ingest_corpus(std::istream& in, const IngestOptions& opts = {}) {
  struct Pending {
    std::string machine;
    std::vector<RawEventRecord> records;
  };
  std::vector<Pending> machines;
  std::unordered_map<std::string, std::size_t> machine_index;
  bool any_source = false;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    auto rec = parse_event_record(line, line_no);
    any_source = any_source || rec.source.has_value();
    auto [it, inserted] = machine_index.try_emplace(rec.machine, machines.size());
    if (inserted) machines.push_back({rec.machine, {}});
    machines[it->second].records.push_back(std::move(rec));
  }

  for (auto& m : machines) {
    std::stable_sort(m.records.begin(), m.records.end(),
                     [](const RawEventRecord& a, const RawEventRecord& b) { return a.timestamp < b.timestamp; });
  }

  Corpus corpus;
  std::shared_ptr<EventVocabulary> fresh;
  const EventVocabulary* vocab = opts.vocabulary.get();
  std::optional<EventId> unk;
  if (vocab) {
    if (!vocab->frozen()) throw VocabularyError("supplied vocabulary must be frozen");
    unk = vocab->unknown_id();
    if (opts.unknown == UnknownLabelPolicy::Lenient && !unk)
      throw VocabularyError("lenient ingestion requires a vocabulary with a reserved <unk> label");
  } else {
    fresh = std::make_shared<EventVocabulary>();
  }

  corpus.traces.reserve(machines.size());
  for (auto& m : machines) {
    MachineTrace t;
    t.machine = m.machine;
    t.events.reserve(m.records.size());
    t.times.reserve(m.records.size());
    for (auto& r : m.records) {
      EventId id;
      if (fresh) {
        id = fresh->add(r.event);
      } else if (auto found = vocab->find(r.event)) {
        id = *found;
      } else if (opts.unknown == UnknownLabelPolicy::Lenient) {
        id = *unk;
      } else {
        throw VocabularyError("unknown event label '" + r.event + "' (machine " + m.machine + ")");
      }
      t.events.push_back(id);
      t.times.push_back(r.timestamp);
      if (any_source) t.sources.push_back(r.source.value_or(""));
    }
    corpus.traces.push_back(std::move(t));
  }

  if (fresh) {
    fresh->freeze(opts.reserve_unknown);
    corpus.vocabulary = std::move(fresh);
  } else {
    corpus.vocabulary = opts.vocabulary;
  }
  return corpus;
}

inline void write_corpus_jsonl(std::ostream& out, const Corpus& corpus) {
  for (const auto& t : corpus.traces) {
    for (std::size_t i = 0; i < t.events.size(); ++i) {
      OrderedJson j;
      j["machine"] = t.machine;
      j["ts"] = t.times[i];
      j["event"] = corpus.vocabulary->label(t.events[i]);
      if (!t.sources.empty() && !t.sources[i].empty()) j["src"] = t.sources[i];
      out << j.dump() << '\n';
    }
  }
}

struct DatasetSplit {
  Corpus train;
  Corpus validation;
  Corpus test;
};

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

// Shuffles machines with `seed` and partitions them. Validation and test get
// floor(n * fraction) machines (at least one each), train takes the rest.
inline DatasetSplit split_by_machine(const Corpus& corpus, SplitFractions fractions, std::uint64_t seed) {
  const std::array<double, 3> f{fractions.train, fractions.validation, fractions.test};
  for (double x : f) {
    if (!(x > 0.0) || !std::isfinite(x)) throw SplitError("split fractions must be positive");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw SplitError("split fractions must sum to 1");
  const std::size_t n = corpus.traces.size();
  if (n < 3) throw SplitError("need at least 3 machines to split, got " + std::to_string(n));

  std::unordered_set<std::string> seen;
  for (const auto& t : corpus.traces) {
    if (!seen.insert(t.machine).second) throw SplitError("duplicate machine identifier '" + t.machine + "'");
  }

  auto floor_count = [n](double frac) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * frac + 1e-9));
  };
  std::size_t n_valid = std::max<std::size_t>(1, floor_count(f[1]));
  std::size_t n_test = std::max<std::size_t>(1, floor_count(f[2]));
  if (n_valid + n_test >= n) throw SplitError("too few machines for a non-empty three-way split");
  const std::size_t n_train = n - n_valid - n_test;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  auto take = [&](std::size_t begin, std::size_t count) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                 order.begin() + static_cast<std::ptrdiff_t>(begin + count));
    std::sort(idx.begin(), idx.end());
    Corpus part;
    part.vocabulary = corpus.vocabulary;
    part.traces.reserve(idx.size());
    for (auto i : idx) part.traces.push_back(corpus.traces[i]);
    return part;
  };
  return DatasetSplit{take(0, n_train), take(n_train, n_valid), take(n_train + n_valid, n_test)};
}

struct TrainingWindow {
  std::vector<EventId> context;
  EventId target = 0;
};

// Calls fn(context, target) for every position t >= 1 of every trace, with the
// context being up to `window` events immediately before t.
template <typename Fn>
void for_each_training_window(const Corpus& corpus, std::size_t window, Fn&& fn) {
  if (window < 1) throw ConfigError("window size must be >= 1");
  for (const auto& trace : corpus.traces) {
    const std::span<const EventId> ev(trace.events);
    for (std::size_t t = 1; t < ev.size(); ++t) {
      const std::size_t begin = t > window ? t - window : 0;
      fn(ev.subspan(begin, t - begin), ev[t]);
    }
  }
}

inline std::vector<TrainingWindow> make_training_windows(const Corpus& corpus, std::size_t window) {
  std::vector<TrainingWindow> out;
  for_each_training_window(corpus, window, [&](std::span<const EventId> ctx, EventId target) {
    out.push_back({std::vector<EventId>(ctx.begin(), ctx.end()), target});
  });
  return out;
}

inline std::size_t count_training_windows(const Corpus& corpus) {
  std::size_t n = 0;
  for (const auto& t : corpus.traces) n += t.size() > 1 ? t.size() - 1 : 0;
  return n;
}

}  // namespace alertcast
