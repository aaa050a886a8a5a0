#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace marknmt {

// Translation Edit Rate configuration. Defaults follow the tercom conventions:
// lowercased comparison, punctuation split into separate tokens, shift windows
// of at most 10 tokens moved at most 50 positions.
struct TerConfig {
  bool lowercase = true;
  bool split_punctuation = true;
  int max_shift_distance = 50;
  int max_shift_size = 10;
};

struct SentenceEdits {
  int insertions = 0;
  int deletions = 0;
  int substitutions = 0;
  int shifts = 0;
  int ref_length = 0;
  bool degenerate = false;  // empty reference against a nonempty hypothesis

  int total() const { return insertions + deletions + substitutions + shifts; }
  double ter() const {
    return static_cast<double>(total()) / static_cast<double>(std::max(1, ref_length));
  }
};

struct EvalReport {
  double corpus_score = 0.0;  // TER as a ratio, BLEU as a 0..100 percentage
  std::vector<SentenceEdits> sentences;  // TER only
  std::size_t n_sentences = 0;
  std::string config_signature;
};

std::vector<std::string> ter_tokenize(const std::string& line, const TerConfig& cfg);

// Greedy block-shift search (the shift with the largest edit-distance
// reduction wins; ties go to the leftmost, then shortest candidate), followed
// by word-level Levenshtein. Each applied shift costs one edit.
SentenceEdits ter_sentence(const std::string& hyp, const std::string& ref,
                           const TerConfig& cfg = {});

EvalReport ter_corpus(const std::vector<std::string>& hyps,
                      const std::vector<std::string>& refs, const TerConfig& cfg = {});

struct BleuConfig {
  int max_n = 4;
  bool lowercase = false;
  bool smooth = false;  // exponential smoothing for zero n-gram counts
};

// Corpus-level BLEU, 0..100.
double bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
            const BleuConfig& cfg = {});

// Paired approximate randomization on per-sentence scores: p = (c+1)/(n+1)
// where c counts resampled |mean(A') - mean(B')| >= the observed |delta|.
double approx_randomization(const std::vector<double>& scores_a,
                            const std::vector<double>& scores_b, int samples,
                            std::uint64_t seed);

}  // namespace marknmt
