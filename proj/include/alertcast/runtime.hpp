#pragma once

#include <deque>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "alertcast/evaluation.hpp"
#include "alertcast/model_io.hpp"
#include "alertcast/trainer.hpp"

namespace alertcast {

enum class StepColor { Green, Orange, Red };

inline const char* to_string(StepColor c) {
  switch (c) {
    case StepColor::Green: return "green";
    case StepColor::Orange: return "orange";
    case StepColor::Red: return "red";
  }
  return "red";
}

struct StepRecord {
  std::size_t step = 0;
  EventId predicted = 0;
  double probability = 0.0;
  EventId actual = 0;
  bool correct = false;
  StepColor color = StepColor::Red;
};

inline StepColor classify_step(bool correct, double probability) {
  if (!correct) return StepColor::Red;
  return probability > 0.5 ? StepColor::Green : StepColor::Orange;
}

// Stepwise prediction over one machine's event stream. The context always
// holds the last w actual events, whatever was predicted.
template <Predictor P>
class PredictionSession {
 public:
  PredictionSession(const P& predictor, std::size_t window) : predictor_(&predictor), window_(window) {
    if (window == 0) throw ContractError("session window must be >= 1");
  }

  void seed(EventId e) { push(e); }

  StepRecord step(EventId actual) {
    if (context_.empty()) throw ContractError("session must be seeded with at least one event");
    const std::vector<EventId> ctx(context_.begin(), context_.end());
    const auto p = predictor_->predict(ctx);
    StepRecord r;
    r.step = log_.size();
    r.predicted = p.event;
    r.probability = p.probability;
    r.actual = actual;
    r.correct = p.event == actual;
    r.color = classify_step(r.correct, p.probability);
    log_.push_back(r);
    push(actual);
    return r;
  }

  std::vector<EventId> context() const { return {context_.begin(), context_.end()}; }
  const std::vector<StepRecord>& log() const { return log_; }
  std::size_t window() const { return window_; }

  double precision() const {
    std::size_t hits = 0;
    for (const auto& r : log_) hits += r.correct;
    return log_.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(log_.size());
  }

  void export_jsonl(std::ostream& out, const EventVocabulary* vocab = nullptr) const {
    for (const auto& r : log_) {
      Json j{{"step", r.step},
             {"predicted", r.predicted},
             {"probability", r.probability},
             {"actual", r.actual},
             {"correct", r.correct},
             {"color", to_string(r.color)}};
      if (vocab) {
        j["predicted_label"] = vocab->label(r.predicted);
        j["actual_label"] = vocab->label(r.actual);
      }
      out << j.dump() << '\n';
    }
  }

 private:
  void push(EventId e) {
    context_.push_back(e);
    if (context_.size() > window_) context_.pop_front();
  }

  const P* predictor_;
  std::size_t window_;
  std::deque<EventId> context_;
  std::vector<StepRecord> log_;
};

struct DriftMonitorConfig {
  std::size_t window = 100;  // predictions per precision sample
  std::optional<double> floor = 0.5;
  std::optional<double> delta = 0.05;
  std::size_t reference_samples = 3;

  void validate() const {
    if (window < 1) throw ConfigError("drift window must be >= 1");
    if (floor && !(*floor >= 0.0 && *floor <= 1.0)) throw ConfigError("drift floor must be in [0, 1]");
    if (delta && !(*delta >= 0.0 && *delta <= 1.0)) throw ConfigError("drift delta must be in [0, 1]");
    if (reference_samples < 1) throw ConfigError("drift reference needs >= 1 sample");
  }
};

enum class DriftStatus { Steady, Triggered, Breaching };

inline const char* to_string(DriftStatus s) {
  switch (s) {
    case DriftStatus::Steady: return "steady";
    case DriftStatus::Triggered: return "retrain-triggered";
    case DriftStatus::Breaching: return "breaching";
  }
  return "steady";
}

struct RetrainRequest {
  std::string timestamp;
  std::size_t sample_index = 0;
  double sample = 0.0;
  std::optional<double> reference;
  std::string reason;

  Json to_json() const {
    Json j{{"type", "retrain-request"}, {"timestamp", timestamp}, {"sample_index", sample_index},
           {"sample", sample}, {"reason", reason}};
    j["reference"] = reference ? Json(*reference) : Json(nullptr);
    return j;
  }
};

// Flags a precision drop: sample < floor, or reference - sample > delta. The
// reference is the mean of the last few steady samples and is frozen during a
// breach. One trigger per breach episode; Breaching marks the repeats.
class DriftMonitor {
 public:
  explicit DriftMonitor(DriftMonitorConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  DriftStatus check(double sample) {
    if (!(sample >= 0.0 && sample <= 1.0)) throw ContractError("precision sample must be in [0, 1]");
    const auto ref = reference();
    std::string reason;
    if (cfg_.floor && sample < *cfg_.floor) reason = "below floor";
    if (cfg_.delta && ref && *ref - sample > *cfg_.delta) reason = reason.empty() ? "drop from reference" : reason + " and drop from reference";
    const std::size_t index = samples_++;
    if (reason.empty()) {
      in_breach_ = false;
      steady_.push_back(sample);
      if (steady_.size() > cfg_.reference_samples) steady_.pop_front();
      return DriftStatus::Steady;
    }
    if (in_breach_) return DriftStatus::Breaching;
    in_breach_ = true;
    last_request_ = RetrainRequest{current_timestamp(), index, sample, ref, reason};
    return DriftStatus::Triggered;
  }

  std::optional<double> reference() const {
    if (steady_.empty()) return std::nullopt;
    double s = 0.0;
    for (double x : steady_) s += x;
    return s / static_cast<double>(steady_.size());
  }

  bool in_breach() const { return in_breach_; }
  const std::optional<RetrainRequest>& last_request() const { return last_request_; }
  const DriftMonitorConfig& config() const { return cfg_; }

 private:
  DriftMonitorConfig cfg_;
  std::deque<double> steady_;
  bool in_breach_ = false;
  std::size_t samples_ = 0;
  std::optional<RetrainRequest> last_request_;
};

// Running precision over consecutive blocks of `window` predictions.
class PrecisionSampler {
 public:
  explicit PrecisionSampler(std::size_t window) : window_(window) {
    if (window == 0) throw ConfigError("sampler window must be >= 1");
  }

  // Returns a sample each time a block of `window` outcomes completes.
  std::optional<double> add(bool correct) {
    hits_ += correct;
    if (++count_ < window_) return std::nullopt;
    const double p = static_cast<double>(hits_) / static_cast<double>(count_);
    hits_ = count_ = 0;
    return p;
  }

 private:
  std::size_t window_;
  std::size_t hits_ = 0, count_ = 0;
};

}  // namespace alertcast
