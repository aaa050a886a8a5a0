#include "marknmt/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <unordered_map>

#include "marknmt/error.hpp"
#include "marknmt/rng.hpp"
#include "marknmt/tokenizer.hpp"

namespace marknmt {

namespace {

bool is_tercom_punct(char c) {
  static const std::string punct = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
  return punct.find(c) != std::string::npos;
}

struct LevResult {
  int distance = 0;
  int insertions = 0;
  int deletions = 0;
  int substitutions = 0;
};

// Word-level Levenshtein with unit costs; the breakdown follows one optimal
// alignment (deletion preferred over insertion over substitution on ties,
// which only affects the split, never the total).
LevResult levenshtein(const std::vector<int>& hyp, const std::vector<int>& ref) {
  const std::size_t n = hyp.size(), m = ref.size();
  std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = d[i - 1][j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      d[i][j] = std::min({sub, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }

  LevResult r;
  r.distance = d[n][m];
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && hyp[i - 1] == ref[j - 1] && d[i][j] == d[i - 1][j - 1]) {
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++r.insertions;  // extra hypothesis word
      --i;
    } else if (j > 0 && d[i][j] == d[i][j - 1] + 1) {
      ++r.deletions;  // reference word the hypothesis missed
      --j;
    } else {
      ++r.substitutions;
      --i;
      --j;
    }
  }
  return r;
}

int lev_distance(const std::vector<int>& hyp, const std::vector<int>& ref) {
  const std::size_t n = hyp.size(), m = ref.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

std::vector<int> apply_shift(const std::vector<int>& seq, int start, int size, int dest) {
  std::vector<int> out;
  out.reserve(seq.size());
  for (int i = 0; i < static_cast<int>(seq.size()); ++i)
    if (i < start || i >= start + size) out.push_back(seq[i]);
  out.insert(out.begin() + dest, seq.begin() + start, seq.begin() + start + size);
  return out;
}

std::vector<int> intern(const std::vector<std::string>& words,
                        std::unordered_map<std::string, int>& dict) {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) {
    auto [it, inserted] = dict.emplace(w, static_cast<int>(dict.size()));
    ids.push_back(it->second);
  }
  return ids;
}

}  // namespace

std::vector<std::string> ter_tokenize(const std::string& line, const TerConfig& cfg) {
  std::string s;
  s.reserve(line.size() + 8);
  for (char c : line) {
    char ch = c;
    if (cfg.lowercase)
      ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (cfg.split_punctuation && is_tercom_punct(ch)) {
      s.push_back(' ');
      s.push_back(ch);
      s.push_back(' ');
    } else {
      s.push_back(ch);
    }
  }
  return split_whitespace(s);
}

SentenceEdits ter_sentence(const std::string& hyp, const std::string& ref,
                           const TerConfig& cfg) {
  if (cfg.max_shift_distance < 1 || cfg.max_shift_size < 1)
    throw UsageError("ter: shift limits must be >= 1");

  std::unordered_map<std::string, int> dict;
  std::vector<int> h = intern(ter_tokenize(hyp, cfg), dict);
  const std::vector<int> r = intern(ter_tokenize(ref, cfg), dict);

  SentenceEdits edits;
  edits.ref_length = static_cast<int>(r.size());
  if (r.empty()) {
    edits.degenerate = !h.empty();
    edits.insertions = static_cast<int>(h.size());
    return edits;
  }

  int current = lev_distance(h, r);
  while (current > 0 && !h.empty()) {
    // Best single block move; candidates are scanned leftmost-first and
    // shortest-first so the required tie-break falls out of strict '<'.
    int best_gain = 0;
    int best_start = -1, best_size = 0, best_dest = 0;
    const int n = static_cast<int>(h.size());
    for (int start = 0; start < n; ++start) {
      for (int size = 1; size <= std::min(cfg.max_shift_size, n - start); ++size) {
        for (int dest = 0; dest <= n - size; ++dest) {
          if (dest == start) continue;
          if (std::abs(dest - start) > cfg.max_shift_distance) continue;
          const int d = lev_distance(apply_shift(h, start, size, dest), r);
          const int gain = current - d;
          if (gain > best_gain) {
            best_gain = gain;
            best_start = start;
            best_size = size;
            best_dest = dest;
          }
        }
      }
    }
    if (best_gain <= 0) break;  // every shift costs 1; only strict reductions help
    h = apply_shift(h, best_start, best_size, best_dest);
    current -= best_gain;
    ++edits.shifts;
  }

  const LevResult lev = levenshtein(h, r);
  edits.insertions = lev.insertions;
  edits.deletions = lev.deletions;
  edits.substitutions = lev.substitutions;
  return edits;
}

EvalReport ter_corpus(const std::vector<std::string>& hyps,
                      const std::vector<std::string>& refs, const TerConfig& cfg) {
  if (hyps.size() != refs.size())
    throw DataError("ter: " + std::to_string(hyps.size()) + " hypotheses vs " +
                    std::to_string(refs.size()) + " references");
  if (hyps.empty()) throw DataError("ter: empty corpus");
  EvalReport report;
  report.n_sentences = hyps.size();
  long long total_edits = 0, total_ref = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    SentenceEdits e = ter_sentence(hyps[i], refs[i], cfg);
    total_edits += e.total();
    total_ref += std::max(1, e.ref_length);
    report.sentences.push_back(e);
  }
  report.corpus_score = static_cast<double>(total_edits) / static_cast<double>(total_ref);
  report.config_signature = std::string("metric:ter|case:") +
                            (cfg.lowercase ? "lc" : "mixed") + "|tok:" +
                            (cfg.split_punctuation ? "tercom" : "space") +
                            "|shift-dist:" + std::to_string(cfg.max_shift_distance) +
                            "|shift-size:" + std::to_string(cfg.max_shift_size);
  return report;
}

double bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
            const BleuConfig& cfg) {
  if (hyps.size() != refs.size())
    throw DataError("bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                    std::to_string(refs.size()) + " references");
  if (hyps.empty()) throw DataError("bleu: empty corpus");

  const int max_n = cfg.max_n;
  std::vector<long long> matched(max_n, 0), total(max_n, 0);
  long long hyp_len = 0, ref_len = 0;

  TerConfig tok;  // reuse the tokenizer with punctuation splitting off
  tok.lowercase = cfg.lowercase;
  tok.split_punctuation = false;

  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto h = ter_tokenize(hyps[s], tok);
    const auto r = ter_tokenize(refs[s], tok);
    hyp_len += static_cast<long long>(h.size());
    ref_len += static_cast<long long>(r.size());
    for (int n = 1; n <= max_n; ++n) {
      std::map<std::vector<std::string>, long long> ref_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i)
        ++ref_counts[std::vector<std::string>(r.begin() + i, r.begin() + i + n)];
      std::map<std::vector<std::string>, long long> hyp_counts;
      for (std::size_t i = 0; i + n <= h.size(); ++i)
        ++hyp_counts[std::vector<std::string>(h.begin() + i, h.begin() + i + n)];
      for (const auto& [gram, count] : hyp_counts) {
        total[n - 1] += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }

  double log_prec_sum = 0.0;
  double smooth_inv = 1.0;
  for (int n = 0; n < max_n; ++n) {
    double p;
    if (matched[n] > 0) {
      p = static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    } else if (cfg.smooth && total[n] > 0) {
      smooth_inv *= 2.0;
      p = 1.0 / (smooth_inv * static_cast<double>(total[n]));
    } else {
      return 0.0;
    }
    log_prec_sum += std::log(p);
  }
  const double geo = std::exp(log_prec_sum / max_n);
  double bp = 1.0;
  if (hyp_len < ref_len && hyp_len > 0)
    bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * geo * bp;
}

double approx_randomization(const std::vector<double>& scores_a,
                            const std::vector<double>& scores_b, int samples,
                            std::uint64_t seed) {
  if (scores_a.size() != scores_b.size())
    throw DataError("approx_randomization: " + std::to_string(scores_a.size()) +
                    " vs " + std::to_string(scores_b.size()) + " scores");
  if (scores_a.empty()) throw DataError("approx_randomization: empty score vectors");
  if (samples < 1) throw UsageError("approx_randomization: samples must be >= 1");

  const std::size_t n = scores_a.size();
  // The observed statistic accumulates per-pair differences exactly like the
  // resamples do, so boundary comparisons stay consistent bit for bit.
  double observed = 0.0;
  for (std::size_t i = 0; i < n; ++i) observed += scores_a[i] - scores_b[i];
  observed = std::abs(observed);

  long long c = 0;
  for (int s = 0; s < samples; ++s) {
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double diff = scores_a[i] - scores_b[i];
      const bool swap = rng::uniform(rng::mix(seed, static_cast<std::uint64_t>(s), i)) < 0.5;
      delta += swap ? -diff : diff;
    }
    if (std::abs(delta) >= observed) ++c;
  }
  return static_cast<double>(c + 1) / static_cast<double>(samples + 1);
}

}  // namespace marknmt
