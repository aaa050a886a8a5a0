#include "marknmt/objective.hpp"

#include <cmath>

#include "marknmt/error.hpp"

namespace marknmt {

LossNormalization normalization_from_string(const std::string& name) {
  if (name == "sum-tokens") return LossNormalization::sum_tokens;
  if (name == "mean-tokens") return LossNormalization::mean_tokens;
  if (name == "mean-sentences") return LossNormalization::mean_sentences;
  throw UsageError("unknown normalization '" + name +
                   "' (expected sum-tokens, mean-tokens, or mean-sentences)");
}

void LossConfig::validate() const {
  if (alpha < 0.0 || alpha > 1.0)
    throw UsageError("loss config: alpha must be in [0,1], got " + std::to_string(alpha));
  if (logprob_floor >= 0.0)
    throw UsageError("loss config: logprob_floor must be negative");
  if (!std::isfinite(delta_plus) || !std::isfinite(delta_minus))
    throw UsageError("loss config: delta weights must be finite");
}

Tensor weighted_nll(Tensor logprobs, const TokenSeq& target,
                    const std::vector<double>& weights, double logprob_floor) {
  const Shape& s = logprobs.shape();
  if (s.size() != 2 || static_cast<std::size_t>(s[0]) != target.size() ||
      target.size() != weights.size())
    throw ShapeError("weighted_nll: logprobs " + shape_str(s) + " vs " +
                     std::to_string(target.size()) + " targets and " +
                     std::to_string(weights.size()) + " weights");
  Tape& tape = *logprobs.tape();
  Tensor picked = ops::gather_rows(logprobs, target);
  Tensor floored = ops::clamp_min(picked, logprob_floor);
  Tensor weighted = ops::mul(
      floored, tape.input({static_cast<int>(weights.size())}, weights));
  return ops::scale(ops::sum(weighted), -1.0);
}

namespace {

LossValue loss_rows(Tape& tape, TransformerModel& model,
                    const std::vector<BatchRow>& rows, const LossConfig& cfg) {
  LossValue out;
  Tensor acc;
  for (const auto& row : rows) {
    if (row.target.empty())
      throw DataError("loss: empty target row");
    TokenSeq trg_input;
    trg_input.reserve(row.target.size() + 1);
    trg_input.push_back(Specials::bos);
    trg_input.insert(trg_input.end(), row.target.begin(), row.target.end() - 1);
    Tensor logprobs = model.forward_logprobs(tape, row.src, trg_input);
    Tensor row_loss = weighted_nll(logprobs, row.target, row.weights, cfg.logprob_floor);
    out.row_values.push_back(row_loss.scalar());
    out.token_count += static_cast<double>(row.target.size());
    acc = acc.valid() ? ops::add(acc, row_loss) : row_loss;
  }
  if (!acc.valid()) {
    out.loss = tape.input({1}, {0.0});
    return out;
  }
  switch (cfg.normalization) {
    case LossNormalization::sum_tokens:
      out.loss = acc;
      break;
    case LossNormalization::mean_tokens:
      out.loss = ops::scale(acc, 1.0 / std::max(1.0, out.token_count));
      break;
    case LossNormalization::mean_sentences:
      out.loss = ops::scale(acc, 1.0 / static_cast<double>(std::max<std::size_t>(1, rows.size())));
      break;
  }
  return out;
}

}  // namespace

LossValue loss_pe(Tape& tape, TransformerModel& model,
                  const std::vector<BatchRow>& rows, const LossConfig& cfg) {
  for (const auto& row : rows)
    for (double w : row.weights)
      if (w != 1.0 && w != 0.0)
        throw NumericError("loss_pe: postedit rows must carry unit weights");
  return loss_rows(tape, model, rows, cfg);
}

LossValue loss_marked(Tape& tape, TransformerModel& model,
                      const std::vector<BatchRow>& rows, const LossConfig& cfg) {
  return loss_rows(tape, model, rows, cfg);
}

Tensor loss_combined(Tape& tape, TransformerModel& model, const CombinedBatch& batch,
                     const LossConfig& cfg) {
  cfg.validate();
  std::vector<BatchRow> pe_rows, marked_rows;
  for (const auto& row : batch.rows)
    (row.kind == RowKind::pe ? pe_rows : marked_rows).push_back(row);

  // A side whose coefficient is exactly 0 is skipped entirely, so the alpha=1
  // trajectory is bit-identical to plain supervised training on the same rows.
  Tensor total;
  if (cfg.alpha > 0.0 && !pe_rows.empty()) {
    Tensor pe = loss_pe(tape, model, pe_rows, cfg).loss;
    total = cfg.alpha == 1.0 ? pe : ops::scale(pe, cfg.alpha);
  }
  if (cfg.alpha < 1.0 && !marked_rows.empty()) {
    Tensor m = loss_marked(tape, model, marked_rows, cfg).loss;
    Tensor scaled = cfg.alpha == 0.0 ? m : ops::scale(m, 1.0 - cfg.alpha);
    total = total.valid() ? ops::add(total, scaled) : scaled;
  }
  if (!total.valid()) total = tape.input({1}, {0.0});
  return total;
}

BatchDenominators batch_denominators(const std::vector<BatchRow>& rows,
                                     const LossConfig& cfg) {
  double pe_tokens = 0, marked_tokens = 0, pe_rows = 0, marked_rows = 0;
  for (const auto& row : rows) {
    if (row.kind == RowKind::pe) {
      pe_tokens += static_cast<double>(row.target.size());
      pe_rows += 1.0;
    } else {
      marked_tokens += static_cast<double>(row.target.size());
      marked_rows += 1.0;
    }
  }
  BatchDenominators d;
  switch (cfg.normalization) {
    case LossNormalization::sum_tokens:
      break;
    case LossNormalization::mean_tokens:
      d.pe = std::max(1.0, pe_tokens);
      d.marked = std::max(1.0, marked_tokens);
      break;
    case LossNormalization::mean_sentences:
      d.pe = std::max(1.0, pe_rows);
      d.marked = std::max(1.0, marked_rows);
      break;
  }
  return d;
}

Tensor loss_combined_partial(Tape& tape, TransformerModel& model,
                             const std::vector<BatchRow>& rows, const LossConfig& cfg,
                             const BatchDenominators& denoms) {
  Tensor pe_sum, marked_sum;
  for (const auto& row : rows) {
    if (row.kind == RowKind::pe && cfg.alpha == 0.0) continue;
    if (row.kind == RowKind::marked && cfg.alpha == 1.0) continue;
    if (row.target.empty()) throw DataError("loss: empty target row");
    TokenSeq trg_input;
    trg_input.reserve(row.target.size());
    trg_input.push_back(Specials::bos);
    trg_input.insert(trg_input.end(), row.target.begin(), row.target.end() - 1);
    Tensor logprobs = model.forward_logprobs(tape, row.src, trg_input);
    Tensor row_loss = weighted_nll(logprobs, row.target, row.weights, cfg.logprob_floor);
    Tensor& acc = row.kind == RowKind::pe ? pe_sum : marked_sum;
    acc = acc.valid() ? ops::add(acc, row_loss) : row_loss;
  }

  Tensor total;
  if (pe_sum.valid()) {
    Tensor pe = denoms.pe == 1.0 ? pe_sum : ops::scale(pe_sum, 1.0 / denoms.pe);
    total = cfg.alpha == 1.0 ? pe : ops::scale(pe, cfg.alpha);
  }
  if (marked_sum.valid()) {
    Tensor m =
        denoms.marked == 1.0 ? marked_sum : ops::scale(marked_sum, 1.0 / denoms.marked);
    Tensor scaled = cfg.alpha == 0.0 ? m : ops::scale(m, 1.0 - cfg.alpha);
    total = total.valid() ? ops::add(total, scaled) : scaled;
  }
  if (!total.valid()) total = tape.input({1}, {0.0});
  return total;
}

MarkedHypothesis mark_with_eos(const TokenSeq& hyp, const TokenSeq& ref,
                               const LossConfig& cfg) {
  TokenSeq hyp_eos = hyp;
  hyp_eos.push_back(Specials::eos);
  TokenSeq ref_eos = ref;
  ref_eos.push_back(Specials::eos);
  return mark_hypothesis(hyp_eos, ref_eos, cfg.delta_plus, cfg.delta_minus);
}

CombinedBatch build_combined_batch(const std::vector<MarkedPair>& pairs,
                                   const LossConfig& cfg) {
  CombinedBatch batch;
  batch.rows.reserve(pairs.size() * 2);
  for (const auto& p : pairs) {
    const auto& m = p.marked;
    if (m.hyp.size() != m.marks.size() || m.hyp.size() != m.weights.size())
      throw DataError("build_combined_batch: misaligned marking lengths (" +
                      std::to_string(m.hyp.size()) + " tokens, " +
                      std::to_string(m.marks.size()) + " marks, " +
                      std::to_string(m.weights.size()) + " weights)");
    BatchRow marked;
    marked.src = p.src;
    marked.target = m.hyp;  // includes eos
    marked.weights = m.weights;
    marked.kind = RowKind::marked;
    batch.rows.push_back(std::move(marked));

    BatchRow pe;
    pe.src = p.src;
    pe.target = p.postedit;
    pe.target.push_back(Specials::eos);
    pe.weights.assign(pe.target.size(), 1.0);
    pe.kind = RowKind::pe;
    batch.rows.push_back(std::move(pe));
  }
  return batch;
}

}  // namespace marknmt
