#pragma once

// Count-based next-event predictors: first-order Markov chain and a 3-gram
// model that backs off to the Markov chain when its context was never seen.

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "alertcast/event_data.hpp"
#include "alertcast/memory_array_rnn.hpp"

namespace alertcast {

class MarkovModel {
 public:
  MarkovModel() = default;
  MarkovModel(std::size_t vocab_size, double alpha)
      : vocab_(vocab_size), alpha_(alpha), counts_(vocab_size * vocab_size, 0), row_totals_(vocab_size, 0),
        unigram_(vocab_size, 0) {
    if (!(alpha >= 0.0)) throw ConfigError("smoothing alpha must be >= 0");
  }

  std::size_t vocab_size() const { return vocab_; }
  double alpha() const { return alpha_; }
  std::uint64_t count(EventId from, EventId to) const { return counts_[from * vocab_ + to]; }
  std::uint64_t row_total(EventId from) const { return row_totals_[from]; }
  std::uint64_t unigram(EventId e) const { return unigram_[e]; }
  std::uint64_t unigram_total() const { return unigram_total_; }

  void observe_unigram(EventId e) {
    ++unigram_[e];
    ++unigram_total_;
  }
  void observe_pair(EventId from, EventId to) {
    ++counts_[from * vocab_ + to];
    ++row_totals_[from];
  }

  // P(. | from) with additive smoothing; a row never observed falls back to
  // the smoothed unigram distribution.
  std::vector<double> conditional(EventId from) const {
    std::vector<double> p(vocab_);
    const double v = static_cast<double>(vocab_);
    if (row_totals_[from] == 0) {
      const double denom = static_cast<double>(unigram_total_) + alpha_ * v;
      for (std::size_t j = 0; j < vocab_; ++j)
        p[j] = denom > 0 ? (static_cast<double>(unigram_[j]) + alpha_) / denom : 1.0 / v;
      return p;
    }
    const double denom = static_cast<double>(row_totals_[from]) + alpha_ * v;
    for (std::size_t j = 0; j < vocab_; ++j) p[j] = (static_cast<double>(count(from, static_cast<EventId>(j))) + alpha_) / denom;
    return p;
  }

  Json to_json() const;
  static MarkovModel from_json(const Json& j);

 private:
  std::size_t vocab_ = 0;
  double alpha_ = 0.1;
  std::vector<std::uint64_t> counts_;
  std::vector<std::uint64_t> row_totals_;
  std::vector<std::uint64_t> unigram_;
  std::uint64_t unigram_total_ = 0;
};

class NGramModel {
 public:
  NGramModel() = default;
  NGramModel(std::size_t vocab_size, double alpha) : markov_(vocab_size, alpha) {}

  const MarkovModel& backoff() const { return markov_; }
  MarkovModel& backoff() { return markov_; }
  std::size_t vocab_size() const { return markov_.vocab_size(); }
  double alpha() const { return markov_.alpha(); }

  void observe_triple(EventId a, EventId b, EventId c) {
    auto& row = trigrams_[{a, b}];
    if (row.empty()) row.assign(vocab_size(), 0);
    ++row[c];
    ++context_totals_[{a, b}];
  }

  std::uint64_t count(EventId a, EventId b, EventId c) const {
    const auto it = trigrams_.find({a, b});
    return it == trigrams_.end() ? 0 : it->second[c];
  }
  std::uint64_t context_total(EventId a, EventId b) const {
    const auto it = context_totals_.find({a, b});
    return it == context_totals_.end() ? 0 : it->second;
  }

  // Uses the (a, b) counts when that context was seen, the Markov row of b otherwise.
  std::vector<double> conditional(std::span<const EventId> context) const {
    if (context.size() >= 2) {
      const EventId a = context[context.size() - 2], b = context.back();
      const auto total = context_total(a, b);
      if (total > 0) {
        const auto& row = trigrams_.at({a, b});
        const double denom = static_cast<double>(total) + alpha() * static_cast<double>(vocab_size());
        std::vector<double> p(vocab_size());
        for (std::size_t j = 0; j < p.size(); ++j) p[j] = (static_cast<double>(row[j]) + alpha()) / denom;
        return p;
      }
    }
    return markov_.conditional(context.back());
  }

  Json to_json() const;
  static NGramModel from_json(const Json& j);

 private:
  MarkovModel markov_;
  std::map<std::pair<EventId, EventId>, std::vector<std::uint64_t>> trigrams_;
  std::map<std::pair<EventId, EventId>, std::uint64_t> context_totals_;
};

namespace detail {

inline Prediction argmax_prediction(const std::vector<double>& p) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < p.size(); ++j)
    if (p[j] > p[best]) best = j;
  return {static_cast<EventId>(best), p[best]};
}

inline void require_corpus(const Corpus& corpus) {
  if (!corpus.vocabulary || corpus.vocabulary->empty()) throw ContractError("baseline needs a non-empty vocabulary");
}

}  // namespace detail

inline MarkovModel fit_markov(const Corpus& corpus, double alpha = 0.1) {
  detail::require_corpus(corpus);
  MarkovModel m(corpus.vocabulary->size(), alpha);
  for (const auto& t : corpus.traces) {
    for (std::size_t i = 0; i < t.events.size(); ++i) {
      m.observe_unigram(t.events[i]);
      if (i > 0) m.observe_pair(t.events[i - 1], t.events[i]);
    }
  }
  return m;
}

inline NGramModel fit_ngram(const Corpus& corpus, double alpha = 0.1) {
  detail::require_corpus(corpus);
  NGramModel m(corpus.vocabulary->size(), alpha);
  m.backoff() = fit_markov(corpus, alpha);
  for (const auto& t : corpus.traces)
    for (std::size_t i = 2; i < t.events.size(); ++i) m.observe_triple(t.events[i - 2], t.events[i - 1], t.events[i]);
  return m;
}

inline Prediction predict_markov(const MarkovModel& m, std::span<const EventId> context) {
  if (context.empty()) throw ContractError("prediction needs a context of at least one event");
  return detail::argmax_prediction(m.conditional(context.back()));
}

inline Prediction predict_ngram(const NGramModel& m, std::span<const EventId> context) {
  if (context.empty()) throw ContractError("prediction needs a context of at least one event");
  return detail::argmax_prediction(m.conditional(context));
}

// Adapters so baselines plug into the generic evaluators.
struct MarkovPredictor {
  const MarkovModel* model;
  Prediction predict(std::span<const EventId> ctx) const { return predict_markov(*model, ctx); }
};

struct NGramPredictor {
  const NGramModel* model;
  Prediction predict(std::span<const EventId> ctx) const { return predict_ngram(*model, ctx); }
};

// Sparse JSON: {"vocab_size", "alpha", "unigram": [...], "pairs": [[from, to, n], ...]}.
inline Json MarkovModel::to_json() const {
  Json pairs = Json::array();
  for (std::size_t a = 0; a < vocab_; ++a)
    for (std::size_t b = 0; b < vocab_; ++b)
      if (const auto n = counts_[a * vocab_ + b]; n > 0) pairs.push_back({a, b, n});
  return {{"type", "markov"}, {"vocab_size", vocab_}, {"alpha", alpha_}, {"unigram", unigram_}, {"pairs", pairs}};
}

inline MarkovModel MarkovModel::from_json(const Json& j) {
  MarkovModel m(j.at("vocab_size").get<std::size_t>(), j.at("alpha").get<double>());
  const auto uni = j.at("unigram").get<std::vector<std::uint64_t>>();
  if (uni.size() != m.vocab_) throw ContractError("unigram table size mismatch");
  for (std::size_t e = 0; e < uni.size(); ++e) {
    m.unigram_[e] = uni[e];
    m.unigram_total_ += uni[e];
  }
  for (const auto& p : j.at("pairs")) {
    const auto a = p.at(0).get<std::size_t>(), b = p.at(1).get<std::size_t>();
    if (a >= m.vocab_ || b >= m.vocab_) throw ContractError("pair id out of range");
    const auto n = p.at(2).get<std::uint64_t>();
    m.counts_[a * m.vocab_ + b] += n;
    m.row_totals_[a] += n;
  }
  return m;
}

inline Json NGramModel::to_json() const {
  Json triples = Json::array();
  for (const auto& [ctx, row] : trigrams_)
    for (std::size_t c = 0; c < row.size(); ++c)
      if (row[c] > 0) triples.push_back({ctx.first, ctx.second, c, row[c]});
  return {{"type", "ngram"}, {"order", 3}, {"backoff", markov_.to_json()}, {"triples", triples}};
}

inline NGramModel NGramModel::from_json(const Json& j) {
  NGramModel m;
  m.markov_ = MarkovModel::from_json(j.at("backoff"));
  const auto v = m.vocab_size();
  for (const auto& t : j.at("triples")) {
    const auto a = t.at(0).get<EventId>(), b = t.at(1).get<EventId>(), c = t.at(2).get<EventId>();
    if (a >= v || b >= v || c >= v) throw ContractError("triple id out of range");
    const auto n = t.at(3).get<std::uint64_t>();
    auto& row = m.trigrams_[{a, b}];
    if (row.empty()) row.assign(v, 0);
    row[c] += n;
    m.context_totals_[{a, b}] += n;
  }
  return m;
}

}  // namespace alertcast
