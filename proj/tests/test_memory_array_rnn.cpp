#include "alertcast/memory_array_rnn.hpp"

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

namespace alertcast {
namespace {

ModelConfig tiny_config(std::size_t vocab, std::size_t hidden, std::size_t arrays, std::size_t embed = 0) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.hidden_size = hidden;
  c.arrays = arrays;
  c.embed_size = embed;
  c.window = 20;
  return c;
}

// Plain-loop forward pass written against the parameter layout only.
struct LoopOracle {
  const Parameters<double>& p;

  double z(std::size_t row, const std::vector<double>& x, const std::vector<double>& h) const {
    double s = p.b[static_cast<Eigen::Index>(row)];
    for (std::size_t e = 0; e < x.size(); ++e) s += p.W(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(e)) * x[e];
    for (std::size_t j = 0; j < h.size(); ++j) s += p.U(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) * h[j];
    return s;
  }

  std::vector<double> hidden_after(const std::vector<EventId>& ctx) const {
    const std::size_t H = p.hidden, K = p.arrays, E = p.embed_size();
    std::vector<double> h(H, 0.0);
    std::vector<std::vector<double>> c(K, std::vector<double>(H, 0.0));
    for (EventId ev : ctx) {
      std::vector<double> x(E);
      for (std::size_t e = 0; e < E; ++e) x[e] = p.embedding(static_cast<Eigen::Index>(e), ev);
      std::vector<double> nh(H, 0.0);
      for (std::size_t a = 0; a < K; ++a) {
        for (std::size_t u = 0; u < H; ++u) {
          auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
          const double f = sig(z((4 * a + 0) * H + u, x, h));
          const double i = sig(z((4 * a + 1) * H + u, x, h));
          const double o = sig(z((4 * a + 2) * H + u, x, h));
          const double g = std::tanh(z((4 * a + 3) * H + u, x, h));
          c[a][u] = f * c[a][u] + i * g;
          nh[u] += o * std::tanh(c[a][u]);
        }
      }
      h = nh;
    }
    return h;
  }

  double log_prob(const std::vector<EventId>& ctx, EventId target) const {
    const auto h = hidden_after(ctx);
    std::vector<double> logits(p.vocab_size());
    for (std::size_t j = 0; j < logits.size(); ++j) {
      double s = p.q[static_cast<Eigen::Index>(j)];
      for (std::size_t u = 0; u < h.size(); ++u) s += h[u] * p.P(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(j));
      logits[j] = s;
    }
    double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - m);
    return logits[target] - m - std::log(z);
  }

  double nll(const std::vector<EventId>& trace, std::size_t window) const {
    double total = 0.0;
    for (std::size_t t = 1; t < trace.size(); ++t) {
      const std::size_t begin = t > window ? t - window : 0;
      std::vector<EventId> ctx(trace.begin() + static_cast<std::ptrdiff_t>(begin), trace.begin() + static_cast<std::ptrdiff_t>(t));
      total -= log_prob(ctx, trace[t]);
    }
    return total;
  }
};

std::vector<EventId> random_trace(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<EventId> t(n);
  for (auto& e : t) e = static_cast<EventId>(rng.below(vocab));
  return t;
}

TEST(CellForward, ZeroWeightsGiveHalfGatesAndZeroState) {
  const auto cfg = tiny_config(3, 4, 2, 3);
  const auto p = Parameters<double>::zeros(cfg);
  const auto prev = CellState<double>::zeros(2, 4);
  VectorX<double> sel;
  const auto next = cell_forward(p, VectorX<double>::Ones(3), prev, CellMode::Summation, nullptr, &sel);
  for (const auto& c : next.c) EXPECT_EQ(c.norm(), 0.0);
  EXPECT_EQ(next.h.norm(), 0.0);
  // output gates are all sigmoid(0) = 0.5, so selection is uniform
  EXPECT_DOUBLE_EQ(sel[0], 0.5);
  EXPECT_DOUBLE_EQ(sel[1], 0.5);
}

TEST(CellForward, SingleArrayModesAgree) {
  const auto cfg = tiny_config(5, 6, 1);
  const auto p = Parameters<double>::random(cfg, 9);
  Rng rng(1), data(2);
  auto s1 = CellState<double>::zeros(1, 6), s2 = s1;
  for (int t = 0; t < 10; ++t) {
    const EventId e = static_cast<EventId>(data.below(5));
    s1 = cell_forward(p, VectorX<double>(p.embedding.col(e)), s1, CellMode::Summation);
    s2 = cell_forward(p, VectorX<double>(p.embedding.col(e)), s2, CellMode::Stochastic, &rng);
    EXPECT_EQ(s1.h, s2.h);
  }
}

// hidden = 1, embed = 1, k = 2 with hand-picked weights, recomputed with
// scalar arithmetic.
TEST(CellForward, ScalarOracle) {
  auto cfg = tiny_config(1, 1, 2, 1);
  auto p = Parameters<double>::zeros(cfg);
  // rows: a0{f,i,o,c}, a1{f,i,o,c}
  const double w[8] = {0.3, -0.2, 0.5, 0.7, -0.4, 0.1, 0.25, -0.6};
  const double u[8] = {0.1, 0.2, -0.3, 0.4, 0.05, -0.15, 0.35, 0.2};
  const double b[8] = {0.05, -0.1, 0.0, 0.2, 0.3, 0.0, -0.05, 0.1};
  for (int r = 0; r < 8; ++r) {
    p.W(r, 0) = w[r];
    p.U(r, 0) = u[r];
    p.b[r] = b[r];
  }
  CellState<double> prev;
  prev.h = VectorX<double>::Constant(1, 0.3);
  prev.c = {VectorX<double>::Constant(1, -0.2), VectorX<double>::Constant(1, 0.6)};
  const double x = 0.9, h0 = 0.3, c0[2] = {-0.2, 0.6};

  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  double expected_h = 0.0, expected_c[2];
  for (int a = 0; a < 2; ++a) {
    const int r = 4 * a;
    const double f = sig(w[r] * x + u[r] * h0 + b[r]);
    const double i = sig(w[r + 1] * x + u[r + 1] * h0 + b[r + 1]);
    const double o = sig(w[r + 2] * x + u[r + 2] * h0 + b[r + 2]);
    const double g = std::tanh(w[r + 3] * x + u[r + 3] * h0 + b[r + 3]);
    expected_c[a] = f * c0[a] + i * g;
    expected_h += o * std::tanh(expected_c[a]);
  }
  const auto next = cell_forward(p, VectorX<double>::Constant(1, x), prev, CellMode::Summation);
  EXPECT_NEAR(next.h[0], expected_h, 1e-12);
  EXPECT_NEAR(next.c[0][0], expected_c[0], 1e-12);
  EXPECT_NEAR(next.c[1][0], expected_c[1], 1e-12);

  // stochastic: h is one array's output, chosen with softmax(o_0, o_1)
  const double o0 = sig(w[2] * x + u[2] * h0 + b[2]);
  const double o1 = sig(w[6] * x + u[6] * h0 + b[6]);
  const double p0 = std::exp(o0) / (std::exp(o0) + std::exp(o1));
  Rng rng(5);
  VectorX<double> sel;
  const auto st = cell_forward(p, VectorX<double>::Constant(1, x), prev, CellMode::Stochastic, &rng, &sel);
  EXPECT_NEAR(sel[0], p0, 1e-12);
  EXPECT_NEAR(sel[1], 1.0 - p0, 1e-12);
  const double h_a0 = o0 * std::tanh(expected_c[0]);
  const double h_a1 = o1 * std::tanh(expected_c[1]);
  EXPECT_TRUE(std::abs(st.h[0] - h_a0) < 1e-12 || std::abs(st.h[0] - h_a1) < 1e-12);
}

TEST(CellForward, SelectionIsADistribution) {
  const auto cfg = tiny_config(7, 5, 4);
  const auto p = Parameters<double>::random(cfg, 3);
  Rng rng(4), data(6);
  auto s = CellState<double>::zeros(4, 5);
  std::vector<int> counts(4, 0);
  for (int t = 0; t < 200; ++t) {
    VectorX<double> sel;
    s = cell_forward(p, VectorX<double>(p.embedding.col(static_cast<Eigen::Index>(data.below(7)))), s,
                     CellMode::Stochastic, &rng, &sel);
    EXPECT_NEAR(sel.sum(), 1.0, 1e-12);
    EXPECT_GE(sel.minCoeff(), 0.0);
    EXPECT_LE(s.h.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(CellForward, NonFiniteNamesGate) {
  const auto cfg = tiny_config(2, 2, 2);
  auto p = Parameters<double>::zeros(cfg);
  p.b[p.gate_offset(1, Gate::Input)] = std::numeric_limits<double>::quiet_NaN();
  try {
    cell_forward(p, VectorX<double>::Zero(2), CellState<double>::zeros(2, 2), CellMode::Summation);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("input gate"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("array 1"), std::string::npos) << e.what();
  }
}

TEST(CellForward, StochasticNeedsRng) {
  const auto p = Parameters<double>::zeros(tiny_config(2, 2, 2));
  EXPECT_THROW(cell_forward(p, VectorX<double>::Zero(2), CellState<double>::zeros(2, 2), CellMode::Stochastic),
               ContractError);
}

TEST(OutputDistribution, ZeroWeightsAreUniform) {
  const auto p = Parameters<double>::zeros(tiny_config(5, 3, 1));
  const auto d = output_distribution(p, VectorX<double>::Random(3).eval());
  for (double v : d.probs) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(OutputDistribution, ClosedFormTwoEvents) {
  auto p = Parameters<double>::zeros(tiny_config(2, 1, 1));
  p.q[0] = std::log(2.0);
  const auto d = output_distribution(p, VectorX<double>::Zero(1));
  EXPECT_NEAR(d.probs[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(d.probs[1], 1.0 / 3.0, 1e-15);
}

TEST(OutputDistribution, NormalizedAndShiftInvariant) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = Parameters<double>::zeros(tiny_config(9, 1, 1));
    for (Eigen::Index j = 0; j < 9; ++j) p.q[j] = rng.uniform(-30, 30);
    const auto d = output_distribution(p, VectorX<double>::Zero(1));
    EXPECT_NEAR(std::accumulate(d.probs.begin(), d.probs.end(), 0.0), 1.0, 1e-9);
    const double shift = rng.uniform(-500, 500);
    p.q.array() += shift;
    const auto d2 = output_distribution(p, VectorX<double>::Zero(1));
    for (std::size_t j = 0; j < d.probs.size(); ++j) EXPECT_NEAR(d.probs[j], d2.probs[j], 1e-12);
  }
  // huge logits do not overflow
  auto p = Parameters<double>::zeros(tiny_config(3, 1, 1));
  p.q << 1e6, 1e6 - 1, -1e6;
  const auto d = output_distribution(p, VectorX<double>::Zero(1));
  EXPECT_NEAR(d.probs[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(SequenceNll, PerfectModelIsZero) {
  auto p = Parameters<double>::zeros(tiny_config(3, 2, 2));
  p.q[1] = 800.0;
  const std::vector<EventId> trace{0, 1, 1, 1};
  EXPECT_NEAR(sequence_nll(p, 20, trace), 0.0, 1e-12);
}

TEST(SequenceNll, UniformClosedForm) {
  const auto p = Parameters<double>::zeros(tiny_config(4, 3, 2));
  const std::vector<EventId> trace{0, 3, 2, 1};
  EXPECT_NEAR(sequence_nll(p, 20, trace), 3.0 * std::log(4.0), 1e-12);
  EXPECT_THROW(sequence_nll(p, 20, std::vector<EventId>{1}), ContractError);
}

TEST(SequenceNll, MatchesLoopOracle) {
  Rng rng(21);
  for (std::size_t window : {20u, 3u}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto cfg = tiny_config(6, 5, 3, 4);
      auto p = Parameters<double>::random(cfg, 100 + static_cast<std::uint64_t>(trial));
      for (Eigen::Index i = 0; i < p.b.size(); ++i) p.b[i] = rng.uniform(-0.5, 0.5);
      for (Eigen::Index i = 0; i < p.q.size(); ++i) p.q[i] = rng.uniform(-0.5, 0.5);
      const auto trace = random_trace(rng, 9, 6);
      const LoopOracle oracle{p};
      EXPECT_NEAR(sequence_nll(p, window, trace), oracle.nll(trace, window), 1e-10);
      // the batched training path must agree on the loss value too
      const auto [loss, grad] = sequence_nll_gradient(p, window, trace);
      EXPECT_NEAR(loss, oracle.nll(trace, window), 1e-10);
    }
  }
}

// Central differences over every parameter; returns the worst relative error.
double worst_gradient_error(Parameters<double> p, std::size_t window, const std::vector<EventId>& trace,
                            double step, double floor) {
  const auto [loss, grad] = sequence_nll_gradient(p, window, trace);
  std::vector<std::span<const double>> analytic;
  grad.for_each_tensor([&](const char*, std::span<const double> s) { analytic.push_back(s); });
  double worst = 0.0;
  std::size_t t = 0;
  p.for_each_tensor([&](const char*, std::span<double> s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double saved = s[i];
      s[i] = saved + step;
      const double up = sequence_nll(p, window, trace);
      s[i] = saved - step;
      const double down = sequence_nll(p, window, trace);
      s[i] = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    ++t;
  });
  return worst;
}

TEST(Gradient, MatchesFiniteDifferences) {
  Rng rng(4);
  auto cfg = tiny_config(6, 8, 2);
  auto p = Parameters<double>::random(cfg, 17);
  for (Eigen::Index i = 0; i < p.b.size(); ++i) p.b[i] = rng.uniform(-0.3, 0.3);
  for (Eigen::Index i = 0; i < p.q.size(); ++i) p.q[i] = rng.uniform(-0.3, 0.3);
  const auto trace = random_trace(rng, 12, 6);
  EXPECT_LE(worst_gradient_error(p, 20, trace, 1e-5, 1e-7), 1e-4);
}

TEST(Gradient, TruncatedWindowsMatchFiniteDifferences) {
  Rng rng(5);
  auto cfg = tiny_config(5, 4, 3, 3);
  auto p = Parameters<double>::random(cfg, 18);
  const auto trace = random_trace(rng, 11, 5);
  EXPECT_LE(worst_gradient_error(p, 4, trace, 1e-5, 1e-7), 1e-4);
}

TEST(Segments, CoverEveryWindowOnce) {
  Rng rng(2);
  std::vector<std::vector<EventId>> seqs;
  for (int i = 0; i < 30; ++i) seqs.push_back(random_trace(rng, rng.below(40), 4));
  const auto corpus = corpus_from_sequences(seqs, numbered_vocabulary(4));
  for (std::size_t w : {1u, 5u, 20u}) {
    const auto segs = window_segments(corpus, w);
    std::vector<TrainingWindow> from_segments;
    for (const auto& s : segs) {
      for (const auto& [step, target] : s.targets) {
        std::vector<EventId> ctx(s.inputs.begin(), s.inputs.begin() + step + 1);
        from_segments.push_back({ctx, target});
      }
    }
    const auto windows = make_training_windows(corpus, w);
    ASSERT_EQ(from_segments.size(), windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
      EXPECT_EQ(from_segments[i].context, windows[i].context);
      EXPECT_EQ(from_segments[i].target, windows[i].target);
    }
  }
}

TEST(SegmentBatch, BatchedMatchesSingleSegments) {
  Rng rng(12);
  const auto cfg = tiny_config(7, 6, 2);
  const auto p = Parameters<double>::random(cfg, 4);
  std::vector<std::vector<EventId>> seqs;
  for (int i = 0; i < 9; ++i) seqs.push_back(random_trace(rng, 2 + rng.below(14), 7));
  const auto corpus = corpus_from_sequences(seqs, numbered_vocabulary(7));
  const auto segs = window_segments(corpus, 6);
  std::vector<const Segment*> all;
  for (const auto& s : segs) all.push_back(&s);

  auto g_batched = p;
  g_batched.set_zero();
  SegmentBatch<double> engine;
  const auto r = engine.run(p, all, CellMode::Summation, nullptr, &g_batched);

  auto g_single = p;
  g_single.set_zero();
  double loss = 0.0;
  for (const auto* s : all) loss += engine.run(p, std::span(&s, 1), CellMode::Summation, nullptr, &g_single).loss;
  EXPECT_NEAR(r.loss, loss, 1e-10);
  EXPECT_LE((g_batched.W - g_single.W).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((g_batched.U - g_single.U).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((g_batched.embedding - g_single.embedding).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((g_batched.P - g_single.P).cwiseAbs().maxCoeff(), 1e-12);
}

}  // namespace
}  // namespace alertcast
