#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "capguard/errors.hpp"
#include "capguard/random.hpp"
#include "capguard/reweighting.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace capguard;
using namespace capguard::reweight;

namespace {

std::vector<double> shuffled_range(std::size_t n, std::uint64_t seed) {
  std::vector<double> v(n);
  std::iota(v.begin(), v.end(), 1.0);
  rng::Engine eng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng::uniform_index(eng, i)]);
  return v;
}

std::size_t count_above(const std::vector<double>& pool, double eps) {
  return static_cast<std::size_t>(std::count_if(pool.begin(), pool.end(), [&](double x) { return x > eps; }));
}

ConfidenceSeries series(std::vector<Score> v) {
  return ConfidenceSeries("c", ScoreKind::TextOnly, std::move(v));
}

}  // namespace

TEST_CASE("quantile convention on small pools") {
  const auto pool = shuffled_range(10, 1);
  const auto t = select_threshold(pool, 0.3);
  CHECK(t.epsilon == 3.0);
  CHECK(count_above(pool, t.epsilon) == 7);
  const auto high = select_threshold(pool, 0.95);
  CHECK(high.epsilon == 10.0);
  CHECK(count_above(pool, high.epsilon) == 0);
  CHECK(quantile_index(10, 0.7) == 6);
  CHECK(quantile_index(3, 0.01) == 0);
  CHECK(quantile_index(1, 0.99) == 0);
}

TEST_CASE("threshold errors") {
  const std::vector<double> pool{1.0};
  CHECK_THROWS_AS(select_threshold({}, 0.3), EmptyPoolError);
  CHECK_THROWS_AS(select_threshold(pool, 0.0), SigmaRangeError);
  CHECK_THROWS_AS(select_threshold(pool, 1.0), SigmaRangeError);
  CHECK_THROWS_AS(select_threshold(pool, std::nan("")), SigmaRangeError);
}

TEST_CASE("threshold matches the sorted-rank oracle") {
  rng::Engine eng(21);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> pool(1 + rng::uniform_index(eng, 200));
    for (double& x : pool) x = std::round(rng::uniform01(eng) * 20) / 20;  // ties
    const double sigma = 0.01 + 0.98 * rng::uniform01(eng);
    CHECK(select_threshold(pool, sigma).epsilon == oracle::quantile(pool, sigma));
  }
  for (int i = 1; i < 10; ++i) {
    const double sigma = i / 10.0;
    const auto pool = shuffled_range(100, i);
    CHECK(select_threshold(pool, sigma).epsilon == oracle::quantile(pool, sigma));
  }
}

TEST_CASE("threshold tracks the analytic quantile") {
  rng::Engine eng(8);
  std::vector<double> pool;
  for (int i = 0; i < 10000; ++i) pool.push_back(rng::truncated_normal(eng, 0.45, 0.15, 0.0, 1.0));
  const double expected = oracle::truncated_quantile(0.45, 0.15, 0.0, 1.0, 0.30);
  CHECK(std::abs(select_threshold(pool, 0.30).epsilon - expected) <= 0.02);
}

TEST_CASE("flagged sets shrink as sigma rises") {
  rng::Engine eng(4);
  std::vector<Score> v;
  std::vector<double> pool;
  for (int i = 0; i < 300; ++i) {
    pool.push_back(rng::uniform01(eng));
    v.push_back(pool.back());
  }
  const auto s = series(v);
  std::vector<std::size_t> prev = flag_tokens(s, select_threshold(pool, 0.05).epsilon);
  for (double sigma = 0.1; sigma < 0.99; sigma += 0.05) {
    const auto cur = flag_tokens(s, select_threshold(pool, sigma).epsilon);
    CHECK(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
    prev = cur;
  }
}

TEST_CASE("weight examples") {
  ThresholdConfig cfg;
  cfg.epsilon = 0.5;
  const auto none = compute_weights(series({0.1, 0.2, std::nullopt}), cfg);
  CHECK(none.weights == std::vector<double>{1, 1, 1});
  CHECK(none.flagged.empty());

  const auto one = compute_weights(series({0.1, 0.9, std::nullopt}), cfg);
  CHECK(one.weights == std::vector<double>{1, -1, 1});
  CHECK(one.flagged == std::vector<std::size_t>{1});

  cfg.epsilon = 0.0;
  const auto two = compute_weights(ConfidenceSeries("c", ScoreKind::Differential, {1.0, 0.0, 0.5}), cfg);
  const auto expect = oracle::softmax({1.0, 0.5});
  CHECK(two.weights[0] == doctest::Approx(-expect[0]).epsilon(1e-12));
  CHECK(two.weights[1] == 1.0);
  CHECK(two.weights[2] == doctest::Approx(-expect[1]).epsilon(1e-12));
}

TEST_CASE("flagged scores one unit apart") {
  // Scores [2.0, 1.0] lie outside every score range; softmax is shift
  // invariant, so [1.0, 0.0] must give the same weights.
  ThresholdConfig cfg;
  cfg.epsilon = -0.5;
  const auto w = compute_weights(ConfidenceSeries("c", ScoreKind::Differential, {1.0, 0.0}), cfg);
  CHECK(w.weights[0] == doctest::Approx(-0.7311).epsilon(1e-4));
  CHECK(w.weights[1] == doctest::Approx(-0.2689).epsilon(1e-4));
  const auto direct = oracle::softmax({2.0, 1.0});
  CHECK(std::abs(w.weights[0] + direct[0]) <= 1e-12);
  CHECK(std::abs(w.weights[1] + direct[1]) <= 1e-12);
}

TEST_CASE("weights sum to -1 and ignore a common shift") {
  rng::Engine eng(12);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Score> v;
    std::vector<Score> shifted;
    std::vector<Score> scaled;
    for (int k = 0; k < 12; ++k) {
      const double x = 0.5 * rng::uniform01(eng);
      v.push_back(x);
      shifted.push_back(x + 0.25);
      scaled.push_back(2.0 * x);
    }
    ThresholdConfig cfg;
    cfg.epsilon = 0.2;
    const auto w = compute_weights(series(v), cfg);
    if (w.flagged.empty()) continue;
    double sum = 0.0;
    for (std::size_t k : w.flagged) sum += w.weights[k];
    CHECK(std::abs(sum + 1.0) <= 1e-9);

    ThresholdConfig shifted_cfg = cfg;
    shifted_cfg.epsilon = 0.45;
    const auto ws = compute_weights(series(shifted), shifted_cfg);
    REQUIRE(ws.flagged == w.flagged);
    for (std::size_t k = 0; k < w.weights.size(); ++k) CHECK(ws.weights[k] == doctest::Approx(w.weights[k]).epsilon(1e-12));

    ThresholdConfig scaled_cfg = cfg;
    scaled_cfg.epsilon = 0.4;
    const auto wc = compute_weights(series(scaled), scaled_cfg);
    if (w.flagged.size() >= 2) {
      bool differs = false;
      for (std::size_t k : w.flagged) differs = differs || std::abs(wc.weights[k] - w.weights[k]) > 1e-12;
      const bool all_equal = std::all_of(w.flagged.begin(), w.flagged.end(),
                                         [&](std::size_t k) { return *v[k] == *v[w.flagged.front()]; });
      CHECK((differs || all_equal));
    }
  }
}

TEST_CASE("attention reweighting examples") {
  const auto a = AttentionMatrix::post_softmax(1, 2, {0.6, 0.4});
  WeightVector w{"c", {1.0, -1.0}, {1}};
  const auto lit = apply_attention_reweight(a, w, ReweightMode::LiteralMultiply);
  CHECK(lit(0, 0) == 0.6);
  CHECK(lit(0, 1) == -0.4);
  const auto clamp = apply_attention_reweight(a, w, ReweightMode::ClampRenorm);
  CHECK(clamp(0, 0) == 1.0);
  CHECK(clamp(0, 1) == 0.0);

  const WeightVector ones{"c", {1.0, 1.0}, {}};
  for (auto mode : {ReweightMode::LiteralMultiply, ReweightMode::ClampRenorm}) {
    const auto same = apply_attention_reweight(a, ones, mode);
    CHECK(std::vector<double>(same.values().begin(), same.values().end()) == std::vector<double>{0.6, 0.4});
  }
}

TEST_CASE("attention errors") {
  CHECK_THROWS_AS(AttentionMatrix::post_softmax(1, 2, {0.6, 0.5}), InvariantError);
  CHECK_THROWS_AS(AttentionMatrix::post_softmax(1, 2, {1.2, -0.2}), InvariantError);
  CHECK_THROWS_AS(AttentionMatrix::post_softmax(2, 2, {0.5, 0.5}), ShapeError);
  const auto a = AttentionMatrix::post_softmax(1, 2, {0.0, 1.0});
  CHECK_THROWS_AS(apply_attention_reweight(a, WeightVector{"c", {1.0}, {}}, ReweightMode::LiteralMultiply),
                  ShapeError);
  CHECK_THROWS_AS(apply_attention_reweight(a, WeightVector{"c", {1.0, -1.0}, {1}}, ReweightMode::ClampRenorm),
                  DegenerateRowError);
}

TEST_CASE("reweighting properties on random matrices") {
  rng::Engine eng(30);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng::uniform_index(eng, 6);
    const std::size_t cols = 2 + rng::uniform_index(eng, 8);
    std::vector<double> a;
    std::vector<double> b;
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<double> ra;
      std::vector<double> rb;
      for (std::size_t c = 0; c < cols; ++c) {
        ra.push_back(0.01 + rng::uniform01(eng));
        rb.push_back(0.01 + rng::uniform01(eng));
      }
      const double sa = std::accumulate(ra.begin(), ra.end(), 0.0);
      const double sb = std::accumulate(rb.begin(), rb.end(), 0.0);
      for (double x : ra) a.push_back(x / sa);
      for (double x : rb) b.push_back(x / sb);
    }
    std::vector<Score> scores;
    for (std::size_t c = 0; c < cols; ++c) scores.push_back(rng::uniform01(eng));
    ThresholdConfig cfg;
    cfg.epsilon = 0.5;
    auto w = compute_weights(series(scores), cfg);
    if (w.flagged.size() == cols) w = compute_weights(series(scores), ThresholdConfig{0.3, 2.0});

    const auto ma = AttentionMatrix::post_softmax(rows, cols, a);
    const auto mb = AttentionMatrix::post_softmax(rows, cols, b);
    std::vector<double> mix(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) mix[i] = 0.3 * a[i] + 0.7 * b[i];
    const auto ra = apply_attention_reweight(ma, w, ReweightMode::LiteralMultiply);
    const auto rb = apply_attention_reweight(mb, w, ReweightMode::LiteralMultiply);
    const auto rm = apply_attention_reweight(AttentionMatrix::reweighted(rows, cols, mix), w,
                                             ReweightMode::LiteralMultiply);
    for (std::size_t i = 0; i < mix.size(); ++i) {
      CHECK(std::abs(rm.values()[i] - (0.3 * ra.values()[i] + 0.7 * rb.values()[i])) <= 1e-12);
    }

    const auto cr = apply_attention_reweight(ma, w, ReweightMode::ClampRenorm);
    for (std::size_t r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (double x : cr.row(r)) {
        CHECK(x >= 0.0);
        sum += x;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("token removal") {
  const WhitespaceTokenizer ws;
  const auto tok = tokenize_with_spans({"c", "a red dog"}, ws);
  ThresholdConfig cfg;
  cfg.epsilon = 0.5;
  CHECK(filter_noisy_tokens(tok, series({0.1, 0.9, 0.2}), cfg).text == "a dog");
  CHECK(filter_noisy_tokens(tok, series({0.1, 0.2, 0.2}), cfg).text == "a red dog");
  CHECK(filter_noisy_tokens(tok, series({0.9, 0.2, 0.2}), cfg).text == "red dog");
  CHECK(filter_noisy_tokens(tok, series({0.1, 0.2, 0.9}), cfg).text == "a red");
  CHECK_THROWS_AS(filter_noisy_tokens(tok, series({0.9, 0.9, 0.9}), cfg), AllRemovedError);
  CHECK_THROWS_AS(filter_noisy_tokens(tok, series({0.9, 0.9}), cfg), LengthMismatchError);
}

TEST_CASE("token removal keeps the original spacing when nothing is removed") {
  const auto g = GreedyVocabTokenizer::default_subword({true, true});
  const std::string text = "  Two  unlocked chests,\tleft side. ";
  const auto tok = tokenize_with_spans({"c", text}, g);
  std::vector<Score> low(tok.size(), 0.1);
  low.front() = std::nullopt;
  low.back() = std::nullopt;
  CHECK(filter_noisy_tokens(tok, series(low), ThresholdConfig{0.3, 0.5}).text == text);
}

TEST_CASE("subword removal joins across the gap with one space") {
  const auto g = GreedyVocabTokenizer::default_subword();
  const auto tok = tokenize_with_spans({"c", "two unlocked doors"}, g);
  std::vector<Score> v(tok.size(), 0.1);
  for (std::size_t k = 0; k < tok.size(); ++k) {
    if (tok[k].byte_start >= 4 && tok[k].byte_end <= 12) v[k] = 0.9;
  }
  CHECK(filter_noisy_tokens(tok, series(v), ThresholdConfig{0.3, 0.5}).text == "two doors");
}
