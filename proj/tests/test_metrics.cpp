#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "marknmt/error.hpp"
#include "marknmt/metrics.hpp"

using namespace marknmt;

namespace {

// Test-local word-level Levenshtein, independent of the library path.
int dp_lev(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<int>> d(a.size() + 1, std::vector<int>(b.size() + 1, 0));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1),
                          d[i - 1][j] + 1, d[i][j - 1] + 1});
  return d[a.size()][b.size()];
}

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

std::string sentence(std::mt19937_64& gen, int max_len) {
  static const char* alphabet[] = {"ka", "to", "mi", "zu"};
  std::uniform_int_distribution<int> len(0, max_len);
  std::uniform_int_distribution<int> pick(0, 3);
  std::vector<std::string> w(len(gen));
  for (auto& x : w) x = alphabet[pick(gen)];
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) out += (i ? " " : "") + w[i];
  return out;
}

// True iff some single block move strictly lowers the edit distance.
bool any_beneficial_shift(const std::vector<std::string>& h,
                          const std::vector<std::string>& r) {
  const int base = dp_lev(h, r);
  const int n = static_cast<int>(h.size());
  for (int start = 0; start < n; ++start)
    for (int size = 1; size <= n - start; ++size)
      for (int dest = 0; dest <= n - size; ++dest) {
        if (dest == start) continue;
        std::vector<std::string> moved;
        for (int i = 0; i < n; ++i)
          if (i < start || i >= start + size) moved.push_back(h[i]);
        moved.insert(moved.begin() + dest, h.begin() + start, h.begin() + start + size);
        if (dp_lev(moved, r) < base) return true;
      }
  return false;
}

}  // namespace

TEST_CASE("ter trivial and hand-derived cases") {
  CHECK(ter_sentence("a b c", "a b c").ter() == 0.0);

  SentenceEdits sub = ter_sentence("a b c", "a x c");
  CHECK(sub.substitutions == 1);
  CHECK(sub.shifts == 0);
  CHECK(sub.ter() == doctest::Approx(1.0 / 3.0));

  // one block shift repairs the order: c a b -> a b c
  SentenceEdits shift = ter_sentence("c a b", "a b c");
  CHECK(shift.shifts == 1);
  CHECK(shift.insertions + shift.deletions + shift.substitutions == 0);
  CHECK(shift.ter() == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("lowercasing and punctuation splitting follow the config") {
  CHECK(ter_sentence("Hello, world", "hello , world").ter() == 0.0);
  TerConfig cased;
  cased.lowercase = false;
  CHECK(ter_sentence("Hello", "hello", cased).ter() == 1.0);
}

TEST_CASE("empty reference against nonempty hypothesis is flagged degenerate") {
  SentenceEdits e = ter_sentence("a b", "");
  CHECK(e.degenerate);
  CHECK(e.total() == 2);
  CHECK(e.ter() == 2.0);  // edits over max(1, |ref|)
  CHECK_FALSE(ter_sentence("", "").degenerate);
}

TEST_CASE("without a beneficial shift TER equals Levenshtein over ref length") {
  std::mt19937_64 gen(99);
  int checked = 0;
  while (checked < 300) {
    const std::string h = sentence(gen, 6);
    const std::string r = sentence(gen, 6);
    const auto hw = words(h);
    const auto rw = words(r);
    if (rw.empty()) continue;
    if (any_beneficial_shift(hw, rw)) continue;
    ++checked;
    SentenceEdits e = ter_sentence(h, r);
    CHECK(e.shifts == 0);
    CHECK(e.total() == dp_lev(hw, rw));
  }
}

TEST_CASE("every applied shift strictly decreases the remaining edit distance") {
  std::mt19937_64 gen(1234);
  for (int trial = 0; trial < 150; ++trial) {
    const std::string h = sentence(gen, 8);
    const std::string r = sentence(gen, 8);
    SentenceEdits e = ter_sentence(h, r);
    const auto hw = words(h);
    const auto rw = words(r);
    // shifts + leftover edits can never exceed the shift-free distance
    CHECK(e.total() <= dp_lev(hw, rw));
    CHECK(e.ter() >= 0.0);
  }
}

TEST_CASE("corpus TER is total edits over total reference length") {
  EvalReport rep = ter_corpus({"a b c", "c a b"}, {"a b c", "a b c"});
  CHECK(rep.n_sentences == 2);
  CHECK(rep.corpus_score == doctest::Approx(1.0 / 6.0));
  CHECK(rep.config_signature.find("case:lc") != std::string::npos);
  CHECK(rep.config_signature.find("tok:tercom") != std::string::npos);
}

TEST_CASE("bleu trivial cases") {
  std::vector<std::string> corpus = {"the cat sat on the mat", "a stitch in time saves nine"};
  CHECK(bleu(corpus, corpus) == doctest::Approx(100.0));

  // no 4-gram overlap, smoothing off
  CHECK(bleu({"a b c d"}, {"w x y z"}) == 0.0);
}

TEST_CASE("bleu on a two-sentence corpus matches hand-counted precisions") {
  // hyp1 "the cat sat" vs ref1 "the cat sat down":
  //   1-grams 3/3, 2-grams 2/2, 3-grams 1/1
  // hyp2 "a b c d" vs ref2 "a b x d":
  //   1-grams 3/4 (a, b, d), 2-grams 1/3 (a b), 3-grams 0/2, 4-grams 0/1
  // corpus: p1 = 6/7, p2 = 3/5, p3 = 1/3, p4 = 0/1 -> with smoothing off, 0
  CHECK(bleu({"the cat sat", "a b c d"}, {"the cat sat down", "a b x d"}) == 0.0);

  // cap at 3-grams so the zero 4-gram bucket is out of play
  BleuConfig cfg3;
  cfg3.max_n = 3;
  const double p1 = 6.0 / 7.0, p2 = 3.0 / 5.0, p3 = 1.0 / 3.0;
  const double geo = std::pow(p1 * p2 * p3, 1.0 / 3.0);
  const double bp = std::exp(1.0 - 8.0 / 7.0);  // hyp 7 tokens vs ref 8
  CHECK(bleu({"the cat sat", "a b c d"}, {"the cat sat down", "a b x d"}, cfg3) ==
        doctest::Approx(100.0 * geo * bp).epsilon(1e-9));
}

TEST_CASE("bleu is invariant under sentence permutation") {
  std::vector<std::string> h = {"a b c d", "e f g h", "a a a a"};
  std::vector<std::string> r = {"a b c e", "e f g h", "a a b a"};
  const double base = bleu(h, r);
  std::swap(h[0], h[2]);
  std::swap(r[0], r[2]);
  CHECK(bleu(h, r) == doctest::Approx(base));
}

TEST_CASE("bleu rejects an empty corpus") {
  CHECK_THROWS_AS(bleu({}, {}), DataError);
}

TEST_CASE("approximate randomization: identical systems give p = 1") {
  std::vector<double> s = {0.1, 0.4, 0.2, 0.9};
  CHECK(approx_randomization(s, s, 1000, 7) == 1.0);
}

TEST_CASE("approximate randomization matches the exhaustive n=3 enumeration") {
  const std::vector<double> a = {1.0, 0.1, 0.8};
  const std::vector<double> b = {0.1, 0.5, 0.5};
  // exhaustive: all 2^3 swap patterns
  double observed = std::abs((a[0] - b[0]) + (a[1] - b[1]) + (a[2] - b[2]));
  int hits = 0;
  for (int mask = 0; mask < 8; ++mask) {
    double delta = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double diff = a[i] - b[i];
      delta += (mask & (1 << i)) ? -diff : diff;
    }
    if (std::abs(delta) >= observed) ++hits;
  }
  const double q = hits / 8.0;
  CHECK(q > 0.0);
  CHECK(q < 1.0);

  const int samples = 10000;
  const double p = approx_randomization(a, b, samples, 12345);
  // sampled p ~ (c+1)/(n+1) with c ~ Binomial(n, q); allow 3 sigma
  const double sigma = std::sqrt(q * (1.0 - q) / samples);
  CHECK(std::abs(p - q) <= 3.0 * sigma + 2.0 / samples);
}

TEST_CASE("dominant system is detected as significant") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> noise(0.0, 0.05);
  std::vector<double> a(100), b(100);
  for (int i = 0; i < 100; ++i) {
    a[i] = 0.2 + noise(gen);
    b[i] = 0.5 + noise(gen);
  }
  CHECK(approx_randomization(a, b, 10000, 42) < 0.05);
}

TEST_CASE("approximate randomization is deterministic and bounded") {
  std::vector<double> a = {0.1, 0.2, 0.3, 0.7};
  std::vector<double> b = {0.2, 0.1, 0.5, 0.4};
  const double p1 = approx_randomization(a, b, 500, 9);
  const double p2 = approx_randomization(a, b, 500, 9);
  CHECK(p1 == p2);
  CHECK(p1 >= 1.0 / 501.0);
  CHECK(p1 <= 1.0);
  CHECK_THROWS_AS(approx_randomization(a, {0.1}, 10, 1), DataError);
}
