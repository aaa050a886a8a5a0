#include <doctest.h>

#include <random>
#include <string>
#include <unordered_map>

#include "marknmt/marking.hpp"

using namespace marknmt;

namespace {

// 2^n oracle: longest common subsequence by enumerating every subsequence of a.
int enumerate_lcs(const TokenSeq& a, const TokenSeq& b) {
  int best = 0;
  const int n = static_cast<int>(a.size());
  for (int mask = 0; mask < (1 << n); ++mask) {
    TokenSeq sub;
    for (int i = 0; i < n; ++i)
      if (mask & (1 << i)) sub.push_back(a[i]);
    // is sub a subsequence of b?
    std::size_t j = 0;
    for (int x : b)
      if (j < sub.size() && sub[j] == x) ++j;
    if (j == sub.size()) best = std::max(best, static_cast<int>(sub.size()));
  }
  return best;
}

bool is_subsequence(const TokenSeq& sub, const TokenSeq& of) {
  std::size_t j = 0;
  for (int x : of)
    if (j < sub.size() && sub[j] == x) ++j;
  return j == sub.size();
}

TokenSeq ids_of(const std::string& line, std::unordered_map<std::string, int>& dict) {
  TokenSeq out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    auto [it, ins] = dict.emplace(cur, static_cast<int>(dict.size()));
    out.push_back(it->second);
    cur.clear();
  };
  for (char c : line) {
    if (c == ' ')
      flush();
    else
      cur.push_back(c);
  }
  flush();
  return out;
}

TokenSeq random_seq(std::mt19937_64& gen, int max_len, int alphabet) {
  std::uniform_int_distribution<int> len(0, max_len);
  std::uniform_int_distribution<int> sym(10, 10 + alphabet - 1);
  TokenSeq s(len(gen));
  for (int& x : s) x = sym(gen);
  return s;
}

}  // namespace

TEST_CASE("lcs table basics") {
  TokenSeq a = {1, 2, 3, 4};
  auto t = lcs_table(a, a);
  CHECK(t[4][4] == 4);
  for (int i = 0; i <= 4; ++i) CHECK(t[i][i] == i);

  TokenSeq b = {7, 8, 9};
  CHECK(lcs_length(a, b) == 0);
}

TEST_CASE("lcs length matches the exhaustive enumeration oracle") {
  std::mt19937_64 gen(123);
  for (int trial = 0; trial < 200; ++trial) {
    TokenSeq a = random_seq(gen, 8, 4);
    TokenSeq b = random_seq(gen, 8, 4);
    CHECK(lcs_length(a, b) == enumerate_lcs(a, b));
    CHECK(lcs_length(a, b) == lcs_length(b, a));  // symmetric
  }
}

TEST_CASE("markings form a valid optimal common subsequence") {
  std::mt19937_64 gen(321);
  for (int trial = 0; trial < 200; ++trial) {
    TokenSeq hyp = random_seq(gen, 8, 4);
    TokenSeq ref = random_seq(gen, 8, 4);
    MarkedHypothesis m = mark_hypothesis(hyp, ref, 1.0, 0.0);
    REQUIRE(m.marks.size() == hyp.size());
    REQUIRE(m.weights.size() == hyp.size());
    TokenSeq marked;
    int count = 0;
    double wsum = 0.0;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      if (m.marks[i]) {
        marked.push_back(hyp[i]);
        ++count;
      }
      wsum += m.weights[i];
    }
    CHECK(count == enumerate_lcs(hyp, ref));
    CHECK(is_subsequence(marked, ref));
    CHECK(wsum == static_cast<double>(count));  // delta = (1, 0)
  }
}

TEST_CASE("identical sequences are fully marked; empty hypothesis is empty") {
  TokenSeq s = {5, 6, 7};
  MarkedHypothesis m = mark_hypothesis(s, s, 0.5, -0.5);
  for (auto bit : m.marks) CHECK(bit == 1);
  for (double w : m.weights) CHECK(w == 0.5);

  MarkedHypothesis empty = mark_hypothesis({}, s, 0.5, -0.5);
  CHECK(empty.marks.empty());
  CHECK(empty.weights.empty());
}

TEST_CASE("appending a shared token raises the LCS length by exactly one") {
  std::mt19937_64 gen(77);
  for (int trial = 0; trial < 100; ++trial) {
    TokenSeq a = random_seq(gen, 6, 3);
    TokenSeq b = random_seq(gen, 6, 3);
    const int before = lcs_length(a, b);
    a.push_back(42);
    b.push_back(42);
    CHECK(lcs_length(a, b) == before + 1);
  }
}

TEST_CASE("hypothesis/reference pair from the marking example") {
  std::unordered_map<std::string, int> dict;
  TokenSeq hyp = ids_of(
      "Um die Her@@ vor@@ hebung zu entfernen , mark@@ ieren Sie den "
      "Menü@@ ein@@ trag .",
      dict);
  TokenSeq ref = ids_of(
      "Um die Her@@ vor@@ hebung auszu@@ schalten , de@@ aktivieren Sie diesen "
      "Menü@@ ein@@ trag .",
      dict);
  REQUIRE(hyp.size() == 16);
  MarkedHypothesis m = mark_hypothesis(hyp, ref, 0.5, -0.5);
  const std::vector<int> expected = {1, 1, 1, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 1, 1};
  REQUIRE(m.marks.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(static_cast<int>(m.marks[i]) == expected[i]);
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(m.weights[i] == (expected[i] ? 0.5 : -0.5));
}

TEST_CASE("non-finite deltas are rejected") {
  CHECK_THROWS(mark_hypothesis({1}, {1}, std::numeric_limits<double>::infinity(), 0.0));
}
