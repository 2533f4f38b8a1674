#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "alertcast/event_data.hpp"
#include "alertcast/memory_array_rnn.hpp"

namespace alertcast {

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;       // mean NLL per target, measured while training
  double train_precision = 0.0;  // argmax hits per target, measured while training
  std::optional<double> validation_precision;
  std::optional<double> validation_nll;  // mean per held-out target
  double learning_rate = 0.0;
};

struct TrainingMetadata {
  std::size_t chosen_epoch = 0;
  std::optional<double> validation_precision;
  double train_loss = 0.0;
  std::vector<EpochStats> history;
  // Free-form provenance (split seed, input path, ...); serialized verbatim.
  Json extra = Json::object();
  // Wall-clock stamp; the only field allowed to differ between identical runs.
  std::string created_at;
};

struct TrainedModel {
  ModelConfig config;
  Parameters<double> params;
  VocabularyPtr vocab;
  TrainingMetadata metadata;

  PredictionDistribution distribution(std::span<const EventId> context) const {
    if (context.empty()) throw ContractError("prediction needs a context of at least one event");
    const auto ctx = truncate_context<double>(context, config.window);
    return output_distribution(params, encode_context(params, ctx));
  }

  Prediction predict(std::span<const EventId> context) const {
    const auto d = distribution(context);
    const auto best = d.argmax();
    return {static_cast<EventId>(best), d.probs[best]};
  }

  std::size_t window() const { return config.window; }
};

// Argmax event and its probability. Ties go to the smallest event id.
inline Prediction predict_next(const TrainedModel& model, std::span<const EventId> context) {
  return model.predict(context);
}

inline PredictionDistribution predict_next_distribution(const TrainedModel& model, std::span<const EventId> context) {
  return model.distribution(context);
}

struct SegmentMetrics {
  double mean_nll = 0.0;
  double precision = 0.0;
  std::size_t targets = 0;
};

template <typename T>
SegmentMetrics evaluate_segments(const Parameters<T>& p, const std::vector<Segment>& segments,
                                 std::size_t chunk = 64) {
  SegmentMetrics m;
  SegmentBatch<T> batch;
  std::vector<const Segment*> ptrs;
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < segments.size(); i += chunk) {
    ptrs.clear();
    for (std::size_t j = i; j < std::min(segments.size(), i + chunk); ++j) ptrs.push_back(&segments[j]);
    const auto r = batch.run(p, ptrs, CellMode::Summation, nullptr, nullptr);
    loss += r.loss;
    correct += r.correct;
    m.targets += r.targets;
  }
  if (m.targets > 0) {
    m.mean_nll = loss / static_cast<double>(m.targets);
    m.precision = static_cast<double>(correct) / static_cast<double>(m.targets);
  }
  return m;
}

// Next-event NLL and precision over every stride-1 window of `corpus`.
inline SegmentMetrics window_metrics(const TrainedModel& model, const Corpus& corpus) {
  return evaluate_segments(model.params, window_segments(corpus, model.config.window));
}

using ProgressSink = std::function<void(const EpochStats&)>;

namespace detail {

// Segments per gradient shard. Shards are fixed by the data, not by the
// thread count, and are reduced in index order.
inline constexpr std::size_t kShardSegments = 32;

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

template <typename T>
struct Adagrad {
  Parameters<T> memory;
  double epsilon = 1e-8;

  explicit Adagrad(const Parameters<T>& shape) : memory(shape) { memory.set_zero(); }

  void step(Parameters<T>& params, Parameters<T>& grad, double lr) {
    std::vector<std::span<T>> ps, gs, ms;
    params.for_each_tensor([&](const char*, std::span<T> s) { ps.push_back(s); });
    grad.for_each_tensor([&](const char*, std::span<T> s) { gs.push_back(s); });
    memory.for_each_tensor([&](const char*, std::span<T> s) { ms.push_back(s); });
    for (std::size_t t = 0; t < ps.size(); ++t) {
      for (std::size_t i = 0; i < ps[t].size(); ++i) {
        const T g = gs[t][i];
        ms[t][i] += g * g;
        ps[t][i] -= static_cast<T>(lr) * g / (std::sqrt(ms[t][i]) + static_cast<T>(epsilon));
      }
    }
  }
};

template <typename T>
double squared_norm(const Parameters<T>& g) {
  double s = 0.0;
  g.for_each_tensor([&](const char*, std::span<const T> v) {
    for (T x : v) s += static_cast<double>(x) * static_cast<double>(x);
  });
  return s;
}

template <typename T>
void scale_in_place(Parameters<T>& g, T factor) {
  g.for_each_tensor([&](const char*, std::span<T> v) {
    for (T& x : v) x *= factor;
  });
}

inline bool better_epoch(const EpochStats& cand, const EpochStats& best, bool use_validation) {
  if (use_validation) {
    if (*cand.validation_precision != *best.validation_precision)
      return *cand.validation_precision > *best.validation_precision;
    return *cand.validation_nll < *best.validation_nll;
  }
  return cand.train_loss < best.train_loss;
}

template <typename T>
TrainedModel train_impl(const DatasetSplit& split, ModelConfig config, const ProgressSink& progress) {
  const auto& train = split.train;
  if (!train.vocabulary || train.vocabulary->empty()) throw TrainingError("empty vocabulary", 0, 0, ErrorClass::Data);
  if (config.vocab_size == 0) config.vocab_size = train.vocabulary->size();
  if (config.vocab_size != train.vocabulary->size())
    throw ConfigError("config vocab_size does not match the corpus vocabulary");
  config.validate();

  const auto segments = window_segments(train, config.window);
  if (segments.empty()) throw TrainingError("empty training set: no trace has two or more events", 0, 0, ErrorClass::Data);
  const auto val_segments = last_event_segments(split.validation, config.window);
  const bool use_validation = !val_segments.empty();

  Parameters<T> params = Parameters<T>::random(config, derive_seed(config.seed, 1));
  Adagrad<T> optimizer(params);
  const CellMode mode = config.stochastic_train ? CellMode::Stochastic : CellMode::Summation;

  std::vector<std::size_t> order(segments.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  Parameters<T> best_params = params;
  std::optional<EpochStats> best;
  std::vector<EpochStats> history;
  double lr = config.learning_rate;

  std::vector<Parameters<T>> shard_grads;
  std::vector<SegmentBatch<T>> shard_engines;
  std::vector<BatchResult> shard_results;
  Parameters<T> grad = params;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, 2, epoch));
    shuffle_rng.shuffle(order.begin(), order.end());

    double epoch_loss = 0.0;
    std::size_t epoch_correct = 0, epoch_targets = 0;
    std::size_t batch_index = 0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      // Grow the batch until it holds at least batch_size targets.
      std::vector<const Segment*> members;
      std::size_t targets = 0;
      while (pos < order.size() && targets < config.batch_size) {
        members.push_back(&segments[order[pos]]);
        targets += segments[order[pos]].targets.size();
        ++pos;
      }
      const std::size_t shards = (members.size() + kShardSegments - 1) / kShardSegments;
      if (shard_grads.size() < shards) {
        shard_grads.resize(shards, params);
        shard_engines.resize(shards);
      }
      shard_results.assign(shards, {});
      const T scale = T(1) / static_cast<T>(targets);
      parallel_for(shards, config.threads, [&](std::size_t s) {
        const std::size_t lo = s * kShardSegments;
        const std::size_t hi = std::min(members.size(), lo + kShardSegments);
        shard_grads[s].set_zero();
        Rng sampler(derive_seed(config.seed, 3 + epoch, batch_index * 1024 + s));
        shard_results[s] = shard_engines[s].run(params, std::span(members).subspan(lo, hi - lo), mode,
                                                &sampler, &shard_grads[s], scale);
      });
      grad.set_zero();
      double batch_loss = 0.0;
      for (std::size_t s = 0; s < shards; ++s) {
        grad += shard_grads[s];
        batch_loss += shard_results[s].loss;
        epoch_correct += shard_results[s].correct;
      }
      if (!std::isfinite(batch_loss)) throw TrainingError("training diverged: non-finite loss", epoch, batch_index);
      const double norm = std::sqrt(squared_norm(grad));
      if (!std::isfinite(norm)) throw TrainingError("training diverged: non-finite gradient", epoch, batch_index);
      if (norm > config.clip_norm) scale_in_place(grad, static_cast<T>(config.clip_norm / norm));
      optimizer.step(params, grad, lr);
      epoch_loss += batch_loss;
      epoch_targets += targets;
      ++batch_index;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.learning_rate = lr;
    stats.train_loss = epoch_loss / static_cast<double>(epoch_targets);
    stats.train_precision = static_cast<double>(epoch_correct) / static_cast<double>(epoch_targets);
    if (use_validation) {
      const auto vm = evaluate_segments(params, val_segments);
      stats.validation_precision = vm.precision;
      stats.validation_nll = vm.mean_nll;
    } else {
      // Select on the exact end-of-epoch training loss.
      const auto tm = evaluate_segments(params, segments);
      stats.train_loss = tm.mean_nll;
      stats.train_precision = tm.precision;
    }
    if (!params.all_finite()) throw TrainingError("training diverged: non-finite parameters", epoch, batch_index);

    if (!best || better_epoch(stats, *best, use_validation)) {
      best = stats;
      best_params = params;
    }
    history.push_back(stats);
    if (progress) progress(stats);
    lr *= config.lr_decay;
  }

  TrainedModel model;
  model.config = config;
  model.vocab = train.vocabulary;
  model.params = best_params.template cast<double>();
  if (best) {
    model.metadata.chosen_epoch = best->epoch;
    model.metadata.validation_precision = best->validation_precision;
    model.metadata.train_loss = best->train_loss;
  }
  model.metadata.history = std::move(history);
  return model;
}

}  // namespace detail

// Mini-batch truncated BPTT with Adagrad and global-norm clipping. Returns
// the parameters of the epoch with the best validation precision (ties broken
// by validation NLL), or the lowest training loss when there is no
// validation data. Deterministic for a given config.seed.
inline TrainedModel train_model(const DatasetSplit& split, ModelConfig config, const ProgressSink& progress = {}) {
  if (config.precision == Precision::F32) return detail::train_impl<float>(split, config, progress);
  return detail::train_impl<double>(split, config, progress);
}

}  // namespace alertcast
