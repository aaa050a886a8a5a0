#pragma once

#include <string>
#include <vector>

#include "marknmt/marking.hpp"
#include "marknmt/model.hpp"
#include "marknmt/tensor.hpp"
#include "marknmt/tokenizer.hpp"

namespace marknmt {

enum class LossNormalization {
  sum_tokens,     // raw sum over token losses
  mean_tokens,    // sum / token count, per loss side (default)
  mean_sentences  // sum / row count
};

LossNormalization normalization_from_string(const std::string& name);

struct LossConfig {
  double alpha = 0.5;          // interpolation weight on the postedit loss
  double delta_plus = 0.5;
  double delta_minus = -0.5;
  double logprob_floor = -18.420680743952367;  // log(1e-8)
  LossNormalization normalization = LossNormalization::mean_tokens;

  void validate() const;
};

enum class RowKind { pe, marked };

// One scoring row: the target carries its trailing eos and one weight per
// target token. For marked rows the conditioning context is the hypothesis's
// own prefix, which is simply the target prefix here.
struct BatchRow {
  TokenSeq src;
  TokenSeq target;
  std::vector<double> weights;
  RowKind kind = RowKind::pe;
};

// Each distinct source appears exactly twice: a marked hypothesis row followed
// by its unit-weight postedit sibling.
struct CombinedBatch {
  std::vector<BatchRow> rows;
};

struct MarkedPair {
  TokenSeq src;
  MarkedHypothesis marked;  // hypothesis tokens incl. trailing eos, pre-resolved weights
  TokenSeq postedit;        // without eos
};

// -sum_t weights[t] * max(logprobs[t][target[t]], floor); floored terms pass
// no gradient.
Tensor weighted_nll(Tensor logprobs, const TokenSeq& target,
                    const std::vector<double>& weights, double logprob_floor);

struct LossValue {
  Tensor loss;              // scalar node on the caller's tape
  double token_count = 0;   // tokens contributing to the normalization
  std::vector<double> row_values;  // per-row unnormalized sums, for diagnostics
};

// Teacher-forced likelihood of (src, postedit) rows with unit weights.
LossValue loss_pe(Tape& tape, TransformerModel& model,
                  const std::vector<BatchRow>& rows, const LossConfig& cfg);

// Marking-weighted likelihood of (src, hypothesis) rows; the hypothesis is
// both the target and its own conditioning context.
LossValue loss_marked(Tape& tape, TransformerModel& model,
                      const std::vector<BatchRow>& rows, const LossConfig& cfg);

// alpha * L_PE + (1 - alpha) * L_M over one combined batch, both sides under
// the same normalization. A side with no rows (or a zero coefficient)
// contributes exactly nothing.
Tensor loss_combined(Tape& tape, TransformerModel& model, const CombinedBatch& batch,
                     const LossConfig& cfg);

// Per-side normalization denominators of one batch under the configured rule.
struct BatchDenominators {
  double pe = 1.0;
  double marked = 1.0;
};
BatchDenominators batch_denominators(const std::vector<BatchRow>& rows,
                                     const LossConfig& cfg);

// Same objective over a slice of a batch with externally fixed denominators;
// gradient workers that split a batch all scale by whole-batch statistics.
Tensor loss_combined_partial(Tape& tape, TransformerModel& model,
                             const std::vector<BatchRow>& rows, const LossConfig& cfg,
                             const BatchDenominators& denoms);

// Pairs each marked hypothesis row with its postedit sibling. The eos position
// is part of both targets; marking hyp+eos against ref+eos always marks the
// final eos correct, so its weight resolves to delta_plus.
CombinedBatch build_combined_batch(const std::vector<MarkedPair>& pairs,
                                   const LossConfig& cfg);

// Convenience used by batch construction and training: append eos, mark
// against ref+eos, resolve weights.
MarkedHypothesis mark_with_eos(const TokenSeq& hyp, const TokenSeq& ref,
                               const LossConfig& cfg);

}  // namespace marknmt
