#pragma once

#include <cstdint>
#include <vector>

#include "marknmt/tokenizer.hpp"

namespace marknmt {

// Hypothesis tokens with per-token correctness bits and the signed weights
// resolved from them (delta_plus where marked correct, delta_minus otherwise).
struct MarkedHypothesis {
  TokenSeq hyp;
  std::vector<std::uint8_t> marks;  // 1 = token belongs to the LCS with the reference
  std::vector<double> weights;
};

// (|a|+1) x (|b|+1) prefix LCS-length table, row-major.
std::vector<std::vector<int>> lcs_table(const TokenSeq& a, const TokenSeq& b);

int lcs_length(const TokenSeq& a, const TokenSeq& b);

// Marks hypothesis tokens by LCS membership against the reference. Backtrace
// tie-break: take a match whenever the cell admits one; otherwise step toward
// the hypothesis axis, so markings are reproducible.
MarkedHypothesis mark_hypothesis(const TokenSeq& hyp, const TokenSeq& ref,
                                 double delta_plus, double delta_minus);

}  // namespace marknmt
