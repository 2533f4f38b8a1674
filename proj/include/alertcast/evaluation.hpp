#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "alertcast/event_data.hpp"
#include "alertcast/memory_array_rnn.hpp"

namespace alertcast {

template <typename P>
concept Predictor = requires(const P& p, std::span<const EventId> ctx) {
  { p.predict(ctx) } -> std::convertible_to<Prediction>;
};

// One scored prediction: the event at `position` of trace `trace` was the target.
struct PredictionRecord {
  std::size_t trace = 0;
  std::size_t position = 0;
  EventId predicted = 0;
  double probability = 0.0;
  EventId actual = 0;
  bool correct() const { return predicted == actual; }
};

class ConfusionTally {
 public:
  explicit ConfusionTally(std::size_t classes = 0) : tp_(classes, 0), fp_(classes, 0), fn_(classes, 0) {}

  void add(std::size_t predicted, std::size_t actual) {
    const std::size_t need = std::max(predicted, actual) + 1;
    if (need > tp_.size()) {
      tp_.resize(need, 0);
      fp_.resize(need, 0);
      fn_.resize(need, 0);
    }
    ++total_;
    if (predicted == actual) {
      ++tp_[actual];
    } else {
      ++fp_[predicted];
      ++fn_[actual];
    }
  }

  std::size_t classes() const { return tp_.size(); }
  std::uint64_t tp(std::size_t c) const { return tp_[c]; }
  std::uint64_t fp(std::size_t c) const { return fp_[c]; }
  std::uint64_t fn(std::size_t c) const { return fn_[c]; }
  std::uint64_t total() const { return total_; }
  std::uint64_t sum_tp() const { return sum(tp_); }
  std::uint64_t sum_fp() const { return sum(fp_); }
  std::uint64_t sum_fn() const { return sum(fn_); }

 private:
  static std::uint64_t sum(const std::vector<std::uint64_t>& v) {
    std::uint64_t s = 0;
    for (auto x : v) s += x;
    return s;
  }
  std::vector<std::uint64_t> tp_, fp_, fn_;
  std::uint64_t total_ = 0;
};

struct ClassMetrics {
  std::string label;
  std::uint64_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t targets = 0;
  std::uint64_t skipped = 0;  // traces too short to hold out a target
  std::vector<ClassMetrics> per_class;  // classes that occur as prediction or target

  Json to_json() const {
    Json classes = Json::array();
    for (const auto& c : per_class)
      classes.push_back({{"label", c.label}, {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn},
                         {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}});
    return {{"precision", precision}, {"recall", recall}, {"f1", f1}, {"targets", targets},
            {"skipped", skipped}, {"per_class", classes}};
  }
};

namespace detail {

inline double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace detail

// Micro metrics use the tp/fp/fn sums directly; with one label per target the
// three coincide exactly.
inline MetricsReport metrics_from_tally(const ConfusionTally& t, const std::function<std::string(std::size_t)>& label) {
  MetricsReport r;
  r.targets = t.total();
  const auto tp = t.sum_tp(), fp = t.sum_fp(), fn = t.sum_fn();
  r.precision = detail::ratio(tp, tp + fp);
  r.recall = detail::ratio(tp, tp + fn);
  r.f1 = detail::ratio(2 * tp, 2 * tp + fp + fn);
  for (std::size_t c = 0; c < t.classes(); ++c) {
    if (t.tp(c) + t.fp(c) + t.fn(c) == 0) continue;
    ClassMetrics m{label(c), t.tp(c), t.fp(c), t.fn(c)};
    m.precision = detail::ratio(m.tp, m.tp + m.fp);
    m.recall = detail::ratio(m.tp, m.tp + m.fn);
    m.f1 = detail::ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn);
    r.per_class.push_back(std::move(m));
  }
  return r;
}

inline MetricsReport metrics_from_records(std::span<const PredictionRecord> records, const EventVocabulary* vocab) {
  ConfusionTally t(vocab ? vocab->size() : 0);
  for (const auto& r : records) t.add(r.predicted, r.actual);
  return metrics_from_tally(t, [&](std::size_t c) {
    return vocab && c < vocab->size() ? vocab->label(static_cast<EventId>(c)) : std::to_string(c);
  });
}

// Last-event holdout: context is every event but the last, the target is the last.
template <Predictor P>
std::vector<PredictionRecord> last_event_predictions(const P& predictor, const Corpus& corpus,
                                                     std::size_t* skipped = nullptr) {
  std::vector<PredictionRecord> out;
  std::size_t short_traces = 0;
  for (std::size_t i = 0; i < corpus.traces.size(); ++i) {
    const auto& ev = corpus.traces[i].events;
    if (ev.size() < 2) {
      ++short_traces;
      continue;
    }
    const auto p = predictor.predict(std::span(ev).first(ev.size() - 1));
    out.push_back({i, ev.size() - 1, p.event, p.probability, ev.back()});
  }
  if (skipped) *skipped = short_traces;
  return out;
}

template <Predictor P>
MetricsReport evaluate_last_event(const P& predictor, const Corpus& corpus) {
  std::size_t skipped = 0;
  const auto records = last_event_predictions(predictor, corpus, &skipped);
  auto report = metrics_from_records(records, corpus.vocabulary.get());
  report.skipped = skipped;
  return report;
}

// Confidence grid 0, 0.05, ..., 1.0.
inline std::vector<double> default_confidence_grid() {
  std::vector<double> g;
  for (int k = 0; k <= 20; ++k) g.push_back(k / 20.0);
  return g;
}

struct ConfidenceReport {
  std::vector<double> thresholds;
  // Predictions whose probability falls in [thresholds[k], thresholds[k+1]);
  // the last bucket is [thresholds.back(), 1].
  std::vector<std::uint64_t> success_bucket, failure_bucket;
  // Predictions with probability >= thresholds[k].
  std::vector<std::uint64_t> success_at_least, failure_at_least;
  std::uint64_t successes = 0, failures = 0;
  // Cumulative counts over the matching total; absent when that total is zero.
  std::optional<std::vector<double>> success_ratio, failure_ratio;

  Json to_json() const {
    Json j{{"thresholds", thresholds},
           {"success_bucket", success_bucket},
           {"failure_bucket", failure_bucket},
           {"success_at_least", success_at_least},
           {"failure_at_least", failure_at_least},
           {"successes", successes},
           {"failures", failures}};
    j["success_ratio"] = success_ratio ? Json(*success_ratio) : Json(nullptr);
    j["failure_ratio"] = failure_ratio ? Json(*failure_ratio) : Json(nullptr);
    return j;
  }

  void write_csv(std::ostream& out) const {
    out << "threshold,success_bucket,failure_bucket,success_at_least,failure_at_least,success_ratio,failure_ratio\n";
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      out << thresholds[k] << ',' << success_bucket[k] << ',' << failure_bucket[k] << ',' << success_at_least[k]
          << ',' << failure_at_least[k] << ',';
      if (success_ratio) out << (*success_ratio)[k];
      out << ',';
      if (failure_ratio) out << (*failure_ratio)[k];
      out << '\n';
    }
  }
};

inline ConfidenceReport confidence_report(std::span<const PredictionRecord> records,
                                          std::vector<double> thresholds = default_confidence_grid()) {
  if (thresholds.empty() || !std::is_sorted(thresholds.begin(), thresholds.end()))
    throw ContractError("confidence thresholds must be a non-empty ascending grid");
  ConfidenceReport r;
  const std::size_t n = thresholds.size();
  r.thresholds = std::move(thresholds);
  r.success_bucket.assign(n, 0);
  r.failure_bucket.assign(n, 0);
  r.success_at_least.assign(n, 0);
  r.failure_at_least.assign(n, 0);
  for (const auto& rec : records) {
    const double p = rec.probability;
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("prediction probability outside [0, 1]");
    auto& bucket = rec.correct() ? r.success_bucket : r.failure_bucket;
    auto& cum = rec.correct() ? r.success_at_least : r.failure_at_least;
    (rec.correct() ? r.successes : r.failures) += 1;
    std::optional<std::size_t> top;
    for (std::size_t k = 0; k < n; ++k) {
      if (p >= r.thresholds[k]) {
        ++cum[k];
        top = k;
      }
    }
    if (top) ++bucket[*top];
  }
  auto ratios = [&](const std::vector<std::uint64_t>& cum, std::uint64_t total) -> std::optional<std::vector<double>> {
    if (total == 0) return std::nullopt;
    std::vector<double> out;
    for (auto c : cum) out.push_back(detail::ratio(c, total));
    return out;
  };
  r.success_ratio = ratios(r.success_at_least, r.successes);
  r.failure_ratio = ratios(r.failure_at_least, r.failures);
  return r;
}

// Occurrence counts of short event strings within traces (never across traces).
class SubsequenceCounter {
 public:
  explicit SubsequenceCounter(const Corpus& corpus) : corpus_(&corpus) {}

  // Times `context` occurs followed by some event.
  std::uint64_t followed_by_any(std::span<const EventId> context) const {
    std::uint64_t n = 0;
    scan(context, [&](EventId) { ++n; });
    return n;
  }

  // Times `context` occurs followed by `next`.
  std::uint64_t followed_by(std::span<const EventId> context, EventId next) const {
    std::uint64_t n = 0;
    scan(context, [&](EventId e) { n += e == next; });
    return n;
  }

 private:
  template <typename Fn>
  void scan(std::span<const EventId> context, Fn&& fn) const {
    const std::size_t i = context.size();
    for (const auto& t : corpus_->traces) {
      const auto& ev = t.events;
      for (std::size_t j = i; j < ev.size(); ++j)
        if (std::equal(context.begin(), context.end(), ev.begin() + static_cast<std::ptrdiff_t>(j - i))) fn(ev[j]);
    }
  }
  const Corpus* corpus_;
};

struct UniquenessCell {
  double mean_ratio = 0.0;
  std::uint64_t count = 0;
};

struct UniquenessRow {
  std::size_t length = 0;  // i: number of preceding events
  std::vector<UniquenessCell> success;  // one per confidence bucket
  std::vector<UniquenessCell> failure;
  std::uint64_t evaluated = 0;
};

struct UniquenessReport {
  std::vector<double> thresholds;
  std::vector<UniquenessRow> rows;

  Json to_json() const {
    Json rs = Json::array();
    for (const auto& row : rows) {
      auto cells = [](const std::vector<UniquenessCell>& v) {
        Json a = Json::array();
        for (const auto& c : v) a.push_back({{"mean_ratio", c.mean_ratio}, {"count", c.count}});
        return a;
      };
      rs.push_back({{"length", row.length}, {"evaluated", row.evaluated}, {"success", cells(row.success)},
                    {"failure", cells(row.failure)}});
    }
    return {{"thresholds", thresholds}, {"rows", rs}};
  }

  void write_csv(std::ostream& out) const {
    out << "length,threshold,success_mean_ratio,success_count,failure_mean_ratio,failure_count\n";
    for (const auto& row : rows)
      for (std::size_t k = 0; k < thresholds.size(); ++k)
        out << row.length << ',' << thresholds[k] << ',' << row.success[k].mean_ratio << ',' << row.success[k].count
            << ',' << row.failure[k].mean_ratio << ',' << row.failure[k].count << '\n';
  }
};

// Ratio of a prediction at one position with i preceding events:
//   count(last i events, predicted event) / count(last i events, any event)
// over `corpus`. Means are grouped by confidence bucket, split by correctness.
inline double uniqueness_ratio(const SubsequenceCounter& counter, std::span<const EventId> context, EventId next) {
  const auto any = counter.followed_by_any(context);
  return any == 0 ? 0.0 : static_cast<double>(counter.followed_by(context, next)) / static_cast<double>(any);
}

namespace detail {

// Key for a short event string; ids are packed as raw bytes.
inline std::string ngram_key(std::span<const EventId> s) {
  return std::string(reinterpret_cast<const char*>(s.data()), s.size() * sizeof(EventId));
}

inline std::size_t bucket_of(double p, const std::vector<double>& thresholds) {
  std::size_t k = 0;
  for (std::size_t j = 0; j < thresholds.size(); ++j)
    if (p >= thresholds[j]) k = j;
  return k;
}

}  // namespace detail

inline UniquenessReport uniqueness_report(const Corpus& corpus, std::span<const PredictionRecord> records,
                                          std::size_t min_length = 2, std::size_t max_length = 9,
                                          std::vector<double> thresholds = default_confidence_grid()) {
  UniquenessReport report;
  report.thresholds = std::move(thresholds);
  const std::size_t nb = report.thresholds.size();
  for (std::size_t i = min_length; i <= max_length; ++i) {
    // Count only the contexts that are queried, in one pass over the corpus.
    std::unordered_map<std::string, std::uint64_t> any;
    std::unordered_map<std::string, std::uint64_t> with_next;
    for (const auto& rec : records) {
      const auto& ev = corpus.traces.at(rec.trace).events;
      if (rec.position < i) continue;
      any.emplace(detail::ngram_key(std::span(ev).subspan(rec.position - i, i)), 0);
    }
    for (const auto& t : corpus.traces) {
      const auto& ev = t.events;
      for (std::size_t j = i; j < ev.size(); ++j) {
        const auto key = detail::ngram_key(std::span(ev).subspan(j - i, i));
        const auto it = any.find(key);
        if (it == any.end()) continue;
        ++it->second;
        EventId next = ev[j];
        ++with_next[key + detail::ngram_key(std::span(&next, 1))];
      }
    }
    UniquenessRow row;
    row.length = i;
    row.success.assign(nb, {});
    row.failure.assign(nb, {});
    std::vector<double> sum_s(nb, 0.0), sum_f(nb, 0.0);
    for (const auto& rec : records) {
      const auto& ev = corpus.traces.at(rec.trace).events;
      if (rec.position < i) continue;
      const auto key = detail::ngram_key(std::span(ev).subspan(rec.position - i, i));
      const auto denom = any.at(key);
      if (denom == 0) continue;
      EventId next = rec.predicted;
      const auto it = with_next.find(key + detail::ngram_key(std::span(&next, 1)));
      const double r = it == with_next.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(denom);
      const auto b = detail::bucket_of(rec.probability, report.thresholds);
      if (rec.correct()) {
        sum_s[b] += r;
        ++row.success[b].count;
      } else {
        sum_f[b] += r;
        ++row.failure[b].count;
      }
      ++row.evaluated;
    }
    for (std::size_t b = 0; b < nb; ++b) {
      if (row.success[b].count) row.success[b].mean_ratio = sum_s[b] / static_cast<double>(row.success[b].count);
      if (row.failure[b].count) row.failure[b].mean_ratio = sum_f[b] / static_cast<double>(row.failure[b].count);
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

inline const std::vector<std::string>& category_dimensions() {
  static const std::vector<std::string> dims{"verdict", "severity", "attack_type", "application", "protocol", "cve"};
  return dims;
}

// Event label -> set of "dimension:value" tags.
class CategoryMap {
 public:
  void set(const std::string& label, std::set<std::string> tags) {
    if (tags.empty()) throw MappingError("event '" + label + "' has no category tags");
    for (const auto& t : tags) {
      const auto colon = t.find(':');
      if (colon == std::string::npos || colon + 1 == t.size())
        throw MappingError("tag '" + t + "' is not of the form dimension:value");
      const auto dim = t.substr(0, colon);
      const auto& dims = category_dimensions();
      if (std::find(dims.begin(), dims.end(), dim) == dims.end())
        throw MappingError("tag '" + t + "' uses an undeclared dimension");
    }
    tags_[label] = std::move(tags);
  }

  const std::set<std::string>* find(const std::string& label) const {
    const auto it = tags_.find(label);
    return it == tags_.end() ? nullptr : &it->second;
  }

  std::optional<std::string> value(const std::string& label, const std::string& dimension) const {
    const auto* tags = find(label);
    if (!tags) return std::nullopt;
    for (const auto& t : *tags)
      if (t.size() > dimension.size() && t.compare(0, dimension.size(), dimension) == 0 && t[dimension.size()] == ':')
        return t.substr(dimension.size() + 1);
    return std::nullopt;
  }

  std::size_t size() const { return tags_.size(); }

  static CategoryMap from_json(const Json& j) {
    if (!j.is_object()) throw MappingError("category map must be a JSON object");
    CategoryMap m;
    for (const auto& [label, tags] : j.items()) {
      if (!tags.is_array()) throw MappingError("categories of '" + label + "' must be an array");
      std::set<std::string> s;
      for (const auto& t : tags) s.insert(t.get<std::string>());
      m.set(label, std::move(s));
    }
    return m;
  }

  static CategoryMap load(std::istream& in) {
    try {
      return from_json(Json::parse(in));
    } catch (const Json::exception& e) {
      throw MappingError(std::string("bad category map: ") + e.what());
    }
  }

  Json to_json() const {
    Json j = Json::object();
    for (const auto& [label, tags] : tags_) j[label] = tags;
    return j;
  }

 private:
  std::map<std::string, std::set<std::string>> tags_;
};

// Scores predictions after mapping both sides through `classify` (event -> class index).
template <typename Classify>
MetricsReport mapped_metrics(std::span<const PredictionRecord> records, Classify&& classify,
                             const std::vector<std::string>& class_labels) {
  ConfusionTally t(class_labels.size());
  for (const auto& r : records) t.add(classify(r.predicted), classify(r.actual));
  return metrics_from_tally(t, [&](std::size_t c) { return c < class_labels.size() ? class_labels[c] : std::to_string(c); });
}

struct CategoryEvaluation {
  MetricsReport exact;
  MetricsReport category;  // classes are distinct category sets
  std::uint64_t exact_failures = 0;
  std::uint64_t category_rescued = 0;  // exact failures whose category sets match
  double rescued_fraction() const { return detail::ratio(category_rescued, exact_failures); }

  Json to_json() const {
    return {{"exact", exact.to_json()},
            {"category", category.to_json()},
            {"exact_failures", exact_failures},
            {"category_rescued", category_rescued},
            {"rescued_fraction", rescued_fraction()}};
  }
};

enum class MappingPolicy { Strict, Lenient };

inline CategoryEvaluation category_relaxed_eval(std::span<const PredictionRecord> records,
                                                const EventVocabulary& vocab, const CategoryMap& categories,
                                                MappingPolicy policy = MappingPolicy::Strict) {
  // Each event gets the index of its category set; unmapped events get a
  // private class in lenient mode.
  std::map<std::set<std::string>, std::size_t> set_index;
  std::vector<std::string> class_labels;
  std::vector<std::optional<std::size_t>> cls(vocab.size());
  auto class_of = [&](EventId e) -> std::size_t {
    if (cls.at(e)) return *cls[e];
    const auto& label = vocab.label(e);
    const auto* tags = categories.find(label);
    std::set<std::string> key;
    if (tags) {
      key = *tags;
    } else if (policy == MappingPolicy::Strict) {
      throw MappingError("event '" + label + "' has no category mapping");
    } else {
      key = {"event:" + label};
    }
    auto [it, fresh] = set_index.emplace(key, class_labels.size());
    if (fresh) {
      std::string name;
      for (const auto& t : key) name += (name.empty() ? "" : "|") + t;
      class_labels.push_back(name);
    }
    cls[e] = it->second;
    return it->second;
  };
  for (const auto& r : records) {
    class_of(r.predicted);
    class_of(r.actual);
  }
  CategoryEvaluation out;
  out.exact = metrics_from_records(records, &vocab);
  out.category = mapped_metrics(records, class_of, class_labels);
  for (const auto& r : records) {
    if (r.correct()) continue;
    ++out.exact_failures;
    if (class_of(r.predicted) == class_of(r.actual)) ++out.category_rescued;
  }
  return out;
}

// Block/allow collapse; both the prediction and the target need a verdict.
inline MetricsReport block_allow_eval(std::span<const PredictionRecord> records, const EventVocabulary& vocab,
                                      const CategoryMap& categories) {
  auto verdict = [&](EventId e) -> std::size_t {
    const auto v = categories.value(vocab.label(e), "verdict");
    if (!v) throw MappingError("event '" + vocab.label(e) + "' has no verdict");
    if (*v == "block") return 0;
    if (*v == "allow") return 1;
    throw MappingError("event '" + vocab.label(e) + "' has verdict '" + *v + "', expected block or allow");
  };
  return mapped_metrics(records, verdict, {"block", "allow"});
}

}  // namespace alertcast
