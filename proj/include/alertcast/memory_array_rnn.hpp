#pragma once

// Single-layer recurrent network whose cell holds k parallel memory arrays,
// each with its own forget/input/output/candidate gate set. The hidden state
// is either the sum of the per-array outputs or, in stochastic mode, the
// output of one array drawn from a softmax over mean output-gate activation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "alertcast/errors.hpp"
#include "alertcast/event_data.hpp"
#include "alertcast/rng.hpp"

namespace alertcast {

enum class CellMode { Summation, Stochastic };
enum class Precision { F64, F32 };

inline std::string to_string(Precision p) { return p == Precision::F64 ? "f64" : "f32"; }

inline Precision precision_from_string(const std::string& s) {
  if (s == "f64") return Precision::F64;
  if (s == "f32") return Precision::F32;
  throw ConfigError("unknown precision '" + s + "' (expected f64 or f32)");
}

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_size = 128;
  std::size_t arrays = 4;  // memory arrays per cell
  std::size_t window = 20;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  std::size_t embed_size = 0;  // 0 means "same as hidden_size"
  double learning_rate = 0.1;
  double lr_decay = 1.0;  // multiplicative, applied after every epoch
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  bool stochastic_train = false;
  Precision precision = Precision::F64;
  // Worker threads for gradient accumulation. Results do not depend on it.
  std::size_t threads = 1;

  std::size_t embedding_dim() const { return embed_size == 0 ? hidden_size : embed_size; }
  std::size_t gate_rows() const { return 4 * arrays * hidden_size; }

  void validate() const {
    if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
    if (hidden_size < 1) throw ConfigError("hidden_size must be >= 1");
    if (arrays < 1) throw ConfigError("arrays (k) must be >= 1");
    if (window < 1) throw ConfigError("window must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
    if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ConfigError("lr_decay must be in (0, 1]");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }

  Json to_json() const {
    return Json{{"vocab_size", vocab_size},     {"hidden_size", hidden_size},
                {"arrays", arrays},             {"window", window},
                {"batch_size", batch_size},     {"epochs", epochs},
                {"embed_size", embedding_dim()}, {"learning_rate", learning_rate},
                {"lr_decay", lr_decay},         {"clip_norm", clip_norm},
                {"seed", seed},                 {"stochastic_train", stochastic_train},
                {"precision", to_string(precision)}};
  }

  // Missing keys keep their current value, so this doubles as an override merge.
  void merge_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    auto get = [&](const char* key, auto& field) {
      if (auto it = j.find(key); it != j.end()) {
        try {
          it->get_to(field);
        } catch (const Json::exception&) {
          throw ConfigError(std::string("bad type for config key '") + key + "'");
        }
      }
    };
    get("vocab_size", vocab_size);
    get("hidden_size", hidden_size);
    get("arrays", arrays);
    get("window", window);
    get("batch_size", batch_size);
    get("epochs", epochs);
    get("embed_size", embed_size);
    get("learning_rate", learning_rate);
    get("lr_decay", lr_decay);
    get("clip_norm", clip_norm);
    get("seed", seed);
    get("stochastic_train", stochastic_train);
    if (auto it = j.find("precision"); it != j.end()) precision = precision_from_string(it->get<std::string>());
  }

  static ModelConfig from_json(const Json& j) {
    ModelConfig c;
    c.merge_json(j);
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Gate : std::size_t { Forget = 0, Input = 1, Output = 2, Candidate = 3 };

inline const char* gate_name(Gate g) {
  switch (g) {
    case Gate::Forget: return "forget";
    case Gate::Input: return "input";
    case Gate::Output: return "output";
    case Gate::Candidate: return "candidate";
  }
  return "?";
}

template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// All learned tensors. Gate pre-activations for array a and gate g occupy rows
// [(4a + g) * hidden, (4a + g + 1) * hidden) of W, U and b.
template <typename T>
struct Parameters {
  MatrixX<T> embedding;  // embed x vocab; column j is the input vector of event j
  MatrixX<T> W;          // 4kH x embed
  MatrixX<T> U;          // 4kH x H
  VectorX<T> b;          // 4kH
  MatrixX<T> P;          // H x vocab; column j is the output embedding of event j
  VectorX<T> q;          // vocab
  std::size_t hidden = 0;
  std::size_t arrays = 0;

  static Parameters zeros(const ModelConfig& cfg) {
    Parameters p;
    const auto V = static_cast<Eigen::Index>(cfg.vocab_size);
    const auto E = static_cast<Eigen::Index>(cfg.embedding_dim());
    const auto H = static_cast<Eigen::Index>(cfg.hidden_size);
    const auto G = static_cast<Eigen::Index>(cfg.gate_rows());
    p.embedding = MatrixX<T>::Zero(E, V);
    p.W = MatrixX<T>::Zero(G, E);
    p.U = MatrixX<T>::Zero(G, H);
    p.b = VectorX<T>::Zero(G);
    p.P = MatrixX<T>::Zero(H, V);
    p.q = VectorX<T>::Zero(V);
    p.hidden = cfg.hidden_size;
    p.arrays = cfg.arrays;
    return p;
  }

  // Weights uniform in [-r, r] with r = 1/sqrt(hidden); biases zero.
  static Parameters random(const ModelConfig& cfg, std::uint64_t seed) {
    auto p = zeros(cfg);
    Rng rng(seed);
    const double r = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_size));
    auto fill = [&](auto& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-r, r));
    };
    fill(p.embedding);
    fill(p.W);
    fill(p.U);
    fill(p.P);
    return p;
  }

  Eigen::Index gate_offset(std::size_t array, Gate g) const {
    return static_cast<Eigen::Index>((4 * array + static_cast<std::size_t>(g)) * hidden);
  }

  std::size_t vocab_size() const { return static_cast<std::size_t>(q.size()); }
  std::size_t embed_size() const { return static_cast<std::size_t>(embedding.rows()); }

  // Visits every tensor in a fixed order as (name, contiguous storage).
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("embedding", std::span<T>(embedding.data(), static_cast<std::size_t>(embedding.size())));
    fn("W", std::span<T>(W.data(), static_cast<std::size_t>(W.size())));
    fn("U", std::span<T>(U.data(), static_cast<std::size_t>(U.size())));
    fn("b", std::span<T>(b.data(), static_cast<std::size_t>(b.size())));
    fn("P", std::span<T>(P.data(), static_cast<std::size_t>(P.size())));
    fn("q", std::span<T>(q.data(), static_cast<std::size_t>(q.size())));
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<Parameters*>(this)->for_each_tensor(
        [&](const char* name, std::span<T> s) { fn(name, std::span<const T>(s.data(), s.size())); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const char*, std::span<const T> s) { n += s.size(); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const char*, std::span<const T> s) {
      for (T v : s) ok = ok && std::isfinite(static_cast<double>(v));
    });
    return ok;
  }

  void set_zero() {
    for_each_tensor([](const char*, std::span<T> s) { std::fill(s.begin(), s.end(), T(0)); });
  }

  Parameters& operator+=(const Parameters& o) {
    embedding += o.embedding;
    W += o.W;
    U += o.U;
    b += o.b;
    P += o.P;
    q += o.q;
    return *this;
  }

  template <typename To>
  Parameters<To> cast() const {
    Parameters<To> p;
    p.embedding = embedding.template cast<To>();
    p.W = W.template cast<To>();
    p.U = U.template cast<To>();
    p.b = b.template cast<To>();
    p.P = P.template cast<To>();
    p.q = q.template cast<To>();
    p.hidden = hidden;
    p.arrays = arrays;
    return p;
  }
};

template <typename T>
struct CellState {
  std::vector<VectorX<T>> c;  // one cell vector per memory array
  VectorX<T> h;

  static CellState zeros(std::size_t arrays, std::size_t hidden) {
    CellState s;
    s.c.assign(arrays, VectorX<T>::Zero(static_cast<Eigen::Index>(hidden)));
    s.h = VectorX<T>::Zero(static_cast<Eigen::Index>(hidden));
    return s;
  }
};

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// Softmax over the mean output-gate activation of each array.
template <typename T>
VectorX<T> array_selection_probabilities(const std::vector<VectorX<T>>& output_gates) {
  const auto k = static_cast<Eigen::Index>(output_gates.size());
  VectorX<T> s(k);
  for (Eigen::Index a = 0; a < k; ++a) s[a] = output_gates[static_cast<std::size_t>(a)].mean();
  s.array() -= s.maxCoeff();
  s = s.array().exp();
  s /= s.sum();
  return s;
}

// Index drawn from a discrete distribution; the last index absorbs rounding.
template <typename T>
std::size_t sample_index(const VectorX<T>& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Eigen::Index i = 0; i + 1 < probs.size(); ++i) {
    acc += static_cast<double>(probs[i]);
    if (u < acc) return static_cast<std::size_t>(i);
  }
  return static_cast<std::size_t>(probs.size() - 1);
}

// One recurrence step. `selection` (optional) receives the array selection
// distribution; `rng` is only consulted in stochastic mode.
template <typename T>
CellState<T> cell_forward(const Parameters<T>& p, const std::type_identity_t<VectorX<T>>& x,
                          const std::type_identity_t<CellState<T>>& prev, CellMode mode,
                          Rng* rng = nullptr, VectorX<T>* selection = nullptr) {
  const auto H = static_cast<Eigen::Index>(p.hidden);
  if (x.size() != p.W.cols()) throw ContractError("cell_forward: input size does not match embedding size");
  if (prev.h.size() != H || prev.c.size() != p.arrays) throw ContractError("cell_forward: state shape mismatch");
  if (mode == CellMode::Stochastic && !rng && p.arrays > 1)
    throw ContractError("cell_forward: stochastic mode needs a random generator");

  const VectorX<T> z = p.W * x + p.U * prev.h + p.b;
  if (!z.allFinite()) {
    for (std::size_t a = 0; a < p.arrays; ++a) {
      for (std::size_t g = 0; g < 4; ++g) {
        if (!z.segment(p.gate_offset(a, static_cast<Gate>(g)), H).allFinite())
          throw NumericError(std::string("non-finite ") + gate_name(static_cast<Gate>(g)) +
                             " gate pre-activation in array " + std::to_string(a));
      }
    }
  }

  CellState<T> next;
  next.c.resize(p.arrays);
  std::vector<VectorX<T>> outputs(p.arrays);
  std::vector<VectorX<T>> squashed(p.arrays);
  for (std::size_t a = 0; a < p.arrays; ++a) {
    auto gate = [&](Gate g) { return z.segment(p.gate_offset(a, g), H).array(); };
    const VectorX<T> f = gate(Gate::Forget).unaryExpr([](T v) { return sigmoid(v); });
    const VectorX<T> i = gate(Gate::Input).unaryExpr([](T v) { return sigmoid(v); });
    outputs[a] = gate(Gate::Output).unaryExpr([](T v) { return sigmoid(v); });
    const VectorX<T> cand = gate(Gate::Candidate).tanh();
    next.c[a] = f.cwiseProduct(prev.c[a]) + i.cwiseProduct(cand);
    squashed[a] = next.c[a].array().tanh();
  }

  if (mode == CellMode::Summation || p.arrays == 1) {
    next.h = VectorX<T>::Zero(H);
    for (std::size_t a = 0; a < p.arrays; ++a) next.h += outputs[a].cwiseProduct(squashed[a]);
    if (selection) *selection = array_selection_probabilities(outputs);
  } else {
    const VectorX<T> probs = array_selection_probabilities(outputs);
    const std::size_t chosen = sample_index(probs, *rng);
    next.h = outputs[chosen].cwiseProduct(squashed[chosen]);
    if (selection) *selection = probs;
  }
  return next;
}

struct PredictionDistribution {
  std::vector<double> probs;

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
};

struct Prediction {
  EventId event = 0;
  double probability = 0.0;
};

template <typename T>
VectorX<T> output_logits(const Parameters<T>& p, const std::type_identity_t<VectorX<T>>& h) {
  return p.P.transpose() * h + p.q;
}

// log-softmax with max subtraction.
template <typename T>
VectorX<T> log_softmax(const VectorX<T>& logits) {
  const T m = logits.maxCoeff();
  const T lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

template <typename T>
PredictionDistribution output_distribution(const Parameters<T>& p, const std::type_identity_t<VectorX<T>>& h) {
  if (!h.allFinite()) throw NumericError("output_distribution: non-finite hidden state");
  const VectorX<T> logits = output_logits(p, h);
  const T m = logits.maxCoeff();
  const VectorX<T> e = (logits.array() - m).exp().matrix();
  const T z = e.sum();
  PredictionDistribution d;
  d.probs.resize(static_cast<std::size_t>(e.size()));
  for (Eigen::Index j = 0; j < e.size(); ++j) d.probs[static_cast<std::size_t>(j)] = static_cast<double>(e[j] / z);
  return d;
}

// Runs the recurrence over `context` (caller truncates) from a zero state in
// summation mode and returns the final hidden vector.
template <typename T>
VectorX<T> encode_context(const Parameters<T>& p, std::span<const EventId> context) {
  auto state = CellState<T>::zeros(p.arrays, p.hidden);
  for (EventId e : context) {
    if (e >= p.vocab_size()) throw ContractError("event id " + std::to_string(e) + " out of range");
    state = cell_forward(p, VectorX<T>(p.embedding.col(e)), state, CellMode::Summation);
  }
  return state.h;
}

template <typename T>
std::span<const EventId> truncate_context(std::span<const EventId> context, std::size_t window) {
  return context.size() > window ? context.subspan(context.size() - window) : context;
}

// -sum_t log Pr(e_t | last `window` events before t), summation mode.
template <typename T>
double sequence_nll(const Parameters<T>& p, std::size_t window, std::span<const EventId> trace) {
  if (trace.size() < 2) throw ContractError("sequence_nll needs a trace of length >= 2");
  double total = 0.0;
  for (std::size_t t = 1; t < trace.size(); ++t) {
    const auto ctx = truncate_context<T>(trace.first(t), window);
    const VectorX<T> lp = log_softmax<T>(output_logits(p, encode_context(p, ctx)));
    total -= static_cast<double>(lp[trace[t]]);
  }
  return total;
}

// A run of inputs fed from a zero state, with next-event targets attached to
// some of its steps. Every training window maps onto exactly one target.
struct Segment {
  std::span<const EventId> inputs;
  std::vector<std::pair<std::uint32_t, EventId>> targets;  // (step index, target event)
};

// Decomposes every trace into segments covering all stride-1 windows: one
// prefix run covering targets 1..min(n-1, w), then one length-w run per
// later target.
inline std::vector<Segment> window_segments(const Corpus& corpus, std::size_t window) {
  std::vector<Segment> out;
  for (const auto& trace : corpus.traces) {
    const std::span<const EventId> ev(trace.events);
    const std::size_t n = ev.size();
    if (n < 2) continue;
    const std::size_t prefix = std::min(n - 1, window);
    Segment s;
    s.inputs = ev.first(prefix);
    for (std::size_t step = 0; step < prefix; ++step) s.targets.emplace_back(static_cast<std::uint32_t>(step), ev[step + 1]);
    out.push_back(std::move(s));
    for (std::size_t t = window + 1; t < n; ++t) {
      Segment w;
      w.inputs = ev.subspan(t - window, window);
      w.targets.emplace_back(static_cast<std::uint32_t>(window - 1), ev[t]);
      out.push_back(std::move(w));
    }
  }
  return out;
}

// One segment per trace of length >= 2: context = all but the last event
// (truncated to the window), target = last event.
inline std::vector<Segment> last_event_segments(const Corpus& corpus, std::size_t window) {
  std::vector<Segment> out;
  for (const auto& trace : corpus.traces) {
    const std::span<const EventId> ev(trace.events);
    if (ev.size() < 2) continue;
    const auto ctx = truncate_context<double>(ev.first(ev.size() - 1), window);
    Segment s;
    s.inputs = ctx;
    s.targets.emplace_back(static_cast<std::uint32_t>(ctx.size() - 1), ev.back());
    out.push_back(std::move(s));
  }
  return out;
}

struct BatchResult {
  double loss = 0.0;         // summed NLL over targets
  std::size_t targets = 0;
  std::size_t correct = 0;   // argmax == target
};

// Lockstep forward/backward over a group of segments. Segments are ordered by
// length so that the active columns at every step form a prefix.
template <typename T>
class SegmentBatch {
 public:
  // Forward over `segments`; when `grad` is non-null, also accumulates the
  // gradient of (scale * summed NLL) into it.
  BatchResult run(const Parameters<T>& p, std::span<const Segment* const> segments, CellMode mode, Rng* rng,
                  Parameters<T>* grad, T scale = T(1)) {
    BatchResult result;
    if (segments.empty()) return result;
    order_.assign(segments.begin(), segments.end());
    std::stable_sort(order_.begin(), order_.end(),
                     [](const Segment* a, const Segment* b) { return a->inputs.size() > b->inputs.size(); });

    const auto H = static_cast<Eigen::Index>(p.hidden);
    const auto K = static_cast<Eigen::Index>(p.arrays);
    const std::size_t steps = order_.front()->inputs.size();
    if (steps == 0) throw ContractError("segment with no inputs");
    const auto B = static_cast<Eigen::Index>(order_.size());
    const bool stochastic = mode == CellMode::Stochastic && p.arrays > 1;
    if (stochastic && !rng) throw ContractError("stochastic mode needs a random generator");

    active_.assign(steps, 0);
    for (std::size_t t = 0; t < steps; ++t) {
      Eigen::Index a = 0;
      while (a < B && order_[static_cast<std::size_t>(a)]->inputs.size() > t) ++a;
      active_[t] = a;
    }

    resize_storage(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      const Eigen::Index n = active_[t];
      auto& X = X_[t];
      X.resize(p.embedding.rows(), n);
      for (Eigen::Index j = 0; j < n; ++j) {
        const EventId e = order_[static_cast<std::size_t>(j)]->inputs[t];
        if (e >= p.vocab_size()) throw ContractError("event id " + std::to_string(e) + " out of range");
        X.col(j) = p.embedding.col(e);
      }
      auto& A = A_[t];
      A.noalias() = p.W * X;
      if (t > 0) A.noalias() += p.U * Hs_[t - 1].leftCols(n);
      A.colwise() += p.b;
      if (!A.allFinite()) throw NumericError("non-finite gate pre-activation at step " + std::to_string(t));

      auto& C = C_[t];
      auto& TC = TC_[t];
      C.resize(K * H, n);
      TC.resize(K * H, n);
      for (Eigen::Index a = 0; a < K; ++a) {
        const Eigen::Index base = 4 * a * H;
        auto f = A.block(base, 0, H, n);
        auto i = A.block(base + H, 0, H, n);
        auto o = A.block(base + 2 * H, 0, H, n);
        auto g = A.block(base + 3 * H, 0, H, n);
        f = f.unaryExpr([](T v) { return sigmoid(v); });
        i = i.unaryExpr([](T v) { return sigmoid(v); });
        o = o.unaryExpr([](T v) { return sigmoid(v); });
        g = g.array().tanh().matrix();
        auto c = C.block(a * H, 0, H, n);
        c = i.cwiseProduct(g);
        if (t > 0) c += f.cwiseProduct(C_[t - 1].block(a * H, 0, H, n));
        TC.block(a * H, 0, H, n) = c.array().tanh().matrix();
      }

      auto& Ht = Hs_[t];
      Ht.resize(H, n);
      if (!stochastic) {
        Ht.setZero();
        for (Eigen::Index a = 0; a < K; ++a)
          Ht += A.block(4 * a * H + 2 * H, 0, H, n).cwiseProduct(TC.block(a * H, 0, H, n));
      } else {
        auto& choice = choice_[t];
        choice.resize(static_cast<std::size_t>(n));
        VectorX<T> scores(K);
        for (Eigen::Index j = 0; j < n; ++j) {
          for (Eigen::Index a = 0; a < K; ++a) scores[a] = A.block(4 * a * H + 2 * H, j, H, 1).mean();
          scores.array() -= scores.maxCoeff();
          scores = scores.array().exp();
          scores /= scores.sum();
          const auto chosen = static_cast<Eigen::Index>(sample_index(scores, *rng));
          choice[static_cast<std::size_t>(j)] = chosen;
          Ht.col(j) = A.block(4 * chosen * H + 2 * H, j, H, 1).cwiseProduct(TC.block(chosen * H, j, H, 1));
        }
      }
    }

    // Output layer over every target position.
    std::size_t n_targets = 0;
    for (const auto* s : order_) n_targets += s->targets.size();
    HL_.resize(H, static_cast<Eigen::Index>(n_targets));
    loss_pos_.clear();
    loss_target_.clear();
    for (std::size_t j = 0; j < order_.size(); ++j) {
      for (const auto& [step, target] : order_[j]->targets) {
        if (step >= order_[j]->inputs.size()) throw ContractError("segment target step out of range");
        if (target >= p.vocab_size()) throw ContractError("target id out of range");
        HL_.col(static_cast<Eigen::Index>(loss_pos_.size())) = Hs_[step].col(static_cast<Eigen::Index>(j));
        loss_pos_.emplace_back(step, static_cast<Eigen::Index>(j));
        loss_target_.push_back(target);
      }
    }
    Logits_.noalias() = p.P.transpose() * HL_;
    Logits_.colwise() += p.q;
    for (Eigen::Index c = 0; c < Logits_.cols(); ++c) {
      auto col = Logits_.col(c);
      Eigen::Index best = 0;
      const T m = col.maxCoeff(&best);
      const EventId target = loss_target_[static_cast<std::size_t>(c)];
      const T shifted_target = col[target] - m;
      col.array() = (col.array() - m).exp();
      const T z = col.sum();
      col /= z;
      result.loss -= static_cast<double>(shifted_target) - std::log(static_cast<double>(z));
      if (static_cast<EventId>(best) == target) ++result.correct;
    }
    result.targets = n_targets;
    if (!std::isfinite(result.loss)) throw NumericError("non-finite loss");
    if (!grad) return result;

    // Backward. Logits_ now holds probabilities; turn it into dL/dlogits.
    for (Eigen::Index c = 0; c < Logits_.cols(); ++c) Logits_(loss_target_[static_cast<std::size_t>(c)], c) -= T(1);
    Logits_ *= scale;
    grad->P.noalias() += HL_ * Logits_.transpose();
    grad->q += Logits_.rowwise().sum();
    dHL_.noalias() = p.P * Logits_;

    for (std::size_t t = 0; t < steps; ++t) {
      dHloss_[t].setZero(H, active_[t]);
    }
    for (std::size_t c = 0; c < loss_pos_.size(); ++c) {
      const auto [step, col] = loss_pos_[c];
      dHloss_[step].col(col) += dHL_.col(static_cast<Eigen::Index>(c));
    }

    dHnext_.setZero(H, B);
    dCnext_.setZero(K * H, B);
    for (std::size_t tt = steps; tt-- > 0;) {
      const Eigen::Index n = active_[tt];
      const auto& A = A_[tt];
      const auto& TC = TC_[tt];
      dh_ = dHloss_[tt] + dHnext_.leftCols(n);
      dZ_.resize(A.rows(), n);
      for (Eigen::Index a = 0; a < K; ++a) {
        const Eigen::Index base = 4 * a * H;
        const auto f = A.block(base, 0, H, n).array();
        const auto i = A.block(base + H, 0, H, n).array();
        const auto o = A.block(base + 2 * H, 0, H, n).array();
        const auto g = A.block(base + 3 * H, 0, H, n).array();
        const auto tc = TC.block(a * H, 0, H, n).array();

        dO_.resize(H, n);
        dTC_.resize(H, n);
        if (!stochastic) {
          dO_ = dh_.array() * tc;
          dTC_ = dh_.array() * o;
        } else {
          const auto& choice = choice_[tt];
          for (Eigen::Index j = 0; j < n; ++j) {
            if (choice[static_cast<std::size_t>(j)] == a) {
              dO_.col(j) = dh_.col(j).cwiseProduct(TC.block(a * H, j, H, 1));
              dTC_.col(j) = dh_.col(j).cwiseProduct(A.block(base + 2 * H, j, H, 1));
            } else {
              dO_.col(j).setZero();
              dTC_.col(j).setZero();
            }
          }
        }
        dC_ = dCnext_.block(a * H, 0, H, n).array() + dTC_.array() * (T(1) - tc.square());
        auto dz = dZ_.block(base, 0, H, n);
        if (tt > 0) {
          dz = (dC_.array() * C_[tt - 1].block(a * H, 0, H, n).array() * f * (T(1) - f)).matrix();
        } else {
          dz.setZero();
        }
        dZ_.block(base + H, 0, H, n) = (dC_.array() * g * i * (T(1) - i)).matrix();
        dZ_.block(base + 2 * H, 0, H, n) = (dO_.array() * o * (T(1) - o)).matrix();
        dZ_.block(base + 3 * H, 0, H, n) = (dC_.array() * i * (T(1) - g.square())).matrix();
        // carry to step tt-1; columns that are inactive at tt carry nothing
        dCnext_.block(a * H, 0, H, n) = (dC_.array() * f).matrix();
      }
      if (tt > 0) {
        const Eigen::Index prev_n = active_[tt - 1];
        if (prev_n > n) {
          dCnext_.middleCols(n, prev_n - n).setZero();
          dHnext_.middleCols(n, prev_n - n).setZero();
        }
      }

      grad->W.noalias() += dZ_ * X_[tt].transpose();
      grad->b += dZ_.rowwise().sum();
      dX_.noalias() = p.W.transpose() * dZ_;
      for (Eigen::Index j = 0; j < n; ++j) {
        const EventId e = order_[static_cast<std::size_t>(j)]->inputs[tt];
        grad->embedding.col(e) += dX_.col(j);
      }
      if (tt > 0) {
        grad->U.noalias() += dZ_ * Hs_[tt - 1].leftCols(n).transpose();
        dHnext_.leftCols(n).noalias() = p.U.transpose() * dZ_;
      }
    }
    return result;
  }

 private:
  void resize_storage(std::size_t steps) {
    if (X_.size() < steps) {
      X_.resize(steps);
      A_.resize(steps);
      C_.resize(steps);
      TC_.resize(steps);
      Hs_.resize(steps);
      choice_.resize(steps);
      dHloss_.resize(steps);
    }
  }

  std::vector<const Segment*> order_;
  std::vector<Eigen::Index> active_;
  std::vector<MatrixX<T>> X_, A_, C_, TC_, Hs_, dHloss_;
  std::vector<std::vector<Eigen::Index>> choice_;
  MatrixX<T> HL_, Logits_, dHL_, dHnext_, dCnext_, dh_, dZ_, dO_, dTC_, dC_, dX_;
  std::vector<std::pair<std::uint32_t, Eigen::Index>> loss_pos_;
  std::vector<EventId> loss_target_;
};

// Analytic gradient of sequence_nll over one trace (summation mode).
template <typename T>
std::pair<double, Parameters<T>> sequence_nll_gradient(const Parameters<T>& p, std::size_t window,
                                                       std::span<const EventId> trace) {
  if (trace.size() < 2) throw ContractError("sequence_nll needs a trace of length >= 2");
  Corpus c;
  MachineTrace mt;
  mt.events.assign(trace.begin(), trace.end());
  c.traces.push_back(std::move(mt));
  const auto segments = window_segments(c, window);
  std::vector<const Segment*> ptrs;
  for (const auto& s : segments) ptrs.push_back(&s);
  Parameters<T> grad = p;
  grad.set_zero();
  SegmentBatch<T> batch;
  const auto r = batch.run(p, ptrs, CellMode::Summation, nullptr, &grad);
  return {r.loss, std::move(grad)};
}

}  // namespace alertcast
