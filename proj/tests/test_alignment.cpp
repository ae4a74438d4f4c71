#include <cmath>
#include <string>
#include <vector>

#include "capguard/alignment.hpp"
#include "capguard/errors.hpp"
#include "capguard/random.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace capguard;

namespace {

using Entries = std::vector<std::vector<std::size_t>>;

// Two tokenizations of "unlocking red wooden doors" laid out so that source
// token 1 covers target tokens 1..3 and source token 4 equals target token 6.
Tokenization fig_source() {
  return Tokenization("c", "alpha", "unlocking red wooden doors",
                      {{0, "<bos>", 0, 0},
                       {10, "unlocking", 0, 9},
                       {11, "red", 10, 13},
                       {12, "wooden", 14, 20},
                       {13, "doors", 21, 26},
                       {1, "<eos>", 26, 26}});
}

Tokenization fig_target() {
  return Tokenization("c", "beta", "unlocking red wooden doors",
                      {{0, "<bos>", 0, 0},
                       {20, "un", 0, 2},
                       {21, "lock", 2, 6},
                       {22, "ing", 6, 9},
                       {23, "red", 10, 13},
                       {24, "wooden", 14, 20},
                       {25, "doors", 21, 26},
                       {1, "<eos>", 26, 26}});
}

AlignmentMap random_map(rng::Engine& eng) {
  // Monotone map from a random segmentation of target indices.
  const std::size_t target = 1 + rng::uniform_index(eng, 30);
  Entries entries;
  std::size_t j = 0;
  while (j < target) {
    if (rng::uniform_index(eng, 6) == 0) {
      entries.push_back({});
      continue;
    }
    std::size_t len = 1 + rng::uniform_index(eng, 4);
    if (!entries.empty() && !entries.back().empty() && rng::uniform_index(eng, 4) == 0) --j;  // shared boundary
    std::vector<std::size_t> v;
    for (std::size_t t = j; t < std::min(target, j + len); ++t) v.push_back(t);
    j = v.back() + 1;
    entries.push_back(std::move(v));
  }
  return AlignmentMap(entries.size(), target, entries);
}

}  // namespace

TEST_CASE("containment and exact-match examples") {
  const auto m = build_alignment(fig_source(), fig_target());
  CHECK(m.entries() == Entries{{}, {1, 2, 3}, {4}, {5}, {6}, {}});
  CHECK(m.source_len() == 6);
  CHECK(m.target_len() == 8);
}

TEST_CASE("identical tokenizations align to the identity") {
  const auto m = build_alignment(fig_target(), fig_target());
  CHECK(m.entries() == Entries{{}, {1}, {2}, {3}, {4}, {5}, {6}, {}});
  const WhitespaceTokenizer ws;
  const auto t = tokenize_with_spans({"c", "three red jars"}, ws);
  CHECK(build_alignment(t, t) == AlignmentMap::identity(3));
}

TEST_CASE("touching spans do not align") {
  const Tokenization a("c", "a", "abcd", {{2, "ab", 0, 2}, {3, "cd", 2, 4}});
  const Tokenization b("c", "b", "abcd", {{2, "a", 0, 1}, {3, "bc", 1, 3}, {4, "d", 3, 4}});
  CHECK(build_alignment(a, b).entries() == Entries{{0, 1}, {1, 2}});
}

TEST_CASE("alignment errors") {
  const WhitespaceTokenizer ws;
  const auto a = tokenize_with_spans({"c", "a b"}, ws);
  CHECK_THROWS_AS(build_alignment(a, tokenize_with_spans({"c", "a c"}, ws)), MismatchError);
  CHECK_THROWS_AS(build_alignment(a, tokenize_with_spans({"d", "a b"}, ws)), MismatchError);
  CHECK_THROWS_AS(build_alignment(tokenize_with_spans({"e", ""}, ws), tokenize_with_spans({"e", ""}, ws)),
                  DegenerateError);
}

TEST_CASE("alignment map validation") {
  CHECK_THROWS_AS(AlignmentMap(2, 3, {{1}, {0}}), InvariantError);
  CHECK_THROWS_AS(AlignmentMap(1, 3, {{2, 1}}), InvariantError);
  CHECK_THROWS_AS(AlignmentMap(1, 2, {{2}}), InvariantError);
  CHECK_THROWS_AS(AlignmentMap(2, 2, {{0}}), InvariantError);
  CHECK_NOTHROW(AlignmentMap(2, 2, {{0, 1}, {1}}));
}

TEST_CASE("inversion") {
  CHECK(invert_alignment(AlignmentMap(2, 4, {{1, 2, 3}, {}})).entries() == Entries{{}, {0}, {0}, {0}});
  CHECK(invert_alignment(AlignmentMap::identity(5)) == AlignmentMap::identity(5));
  CHECK(invert_alignment(AlignmentMap(2, 2, {{0, 1}, {1}})).entries() == Entries{{0}, {0, 1}});
}

TEST_CASE("projection examples") {
  const AlignmentMap m(2, 7, {{1, 2, 3}, {6}});
  const std::vector<Score> beta{std::nullopt, 0.2, 0.4, 0.6, std::nullopt, std::nullopt, 0.9};
  const auto out = project_values(beta, m);
  CHECK(*out[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(*out[1] == 0.9);

  const std::vector<Score> s{0.1, std::nullopt, 0.3};
  CHECK(project_values(s, AlignmentMap::identity(3)) == s);
  CHECK_THROWS_AS(project_values(s, AlignmentMap::identity(2)), LengthMismatchError);
}

TEST_CASE("projection skips unscored members and leaves empty sets unscored") {
  const AlignmentMap m(3, 3, {{}, {0, 1}, {2}});
  const std::vector<Score> beta{std::nullopt, 0.5, std::nullopt};
  const auto out = project_values(beta, m);
  CHECK_FALSE(out[0]);
  CHECK(*out[1] == 0.5);
  CHECK_FALSE(out[2]);
}

TEST_CASE("projection is linear") {
  rng::Engine eng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const auto m = random_map(eng);
    std::vector<Score> s;
    std::vector<Score> t;
    std::vector<Score> mix;
    const double a = rng::uniform01(eng) * 4 - 2;
    const double b = rng::uniform01(eng) * 4 - 2;
    for (std::size_t j = 0; j < m.target_len(); ++j) {
      s.push_back(rng::uniform01(eng));
      t.push_back(rng::uniform01(eng));
      mix.push_back(a * *s.back() + b * *t.back());
    }
    const auto ps = project_values(s, m);
    const auto pt = project_values(t, m);
    const auto pm = project_values(mix, m);
    for (std::size_t k = 0; k < m.source_len(); ++k) {
      REQUIRE(pm[k].has_value() == ps[k].has_value());
      if (pm[k]) CHECK(std::abs(*pm[k] - (a * *ps[k] + b * *pt[k])) <= 1e-12);
    }
  }
}

TEST_CASE("fuzzed alignments match the pairwise oracle") {
  rng::Engine eng(3);
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz  .,";
  const WhitespaceTokenizer ws({true, true});
  const auto g = GreedyVocabTokenizer::default_subword({true, false});
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const auto len = 1 + rng::uniform_index(eng, 60);
    for (std::uint64_t i = 0; i < len; ++i) text += alphabet[rng::uniform_index(eng, alphabet.size())];
    text[0] = 'x';
    const auto a = tokenize_with_spans({"c", text}, ws);
    const auto b = tokenize_with_spans({"c", text}, g);
    const auto m = build_alignment(a, b);
    CHECK(m.entries() == oracle::alignment(a, b));
    CHECK(invert_alignment(invert_alignment(m)) == m);
    CHECK(build_alignment(b, a) == invert_alignment(m));
  }
}
