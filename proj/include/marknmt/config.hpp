#pragma once

#include <cstdint>
#include <string>

#include "marknmt/model.hpp"
#include "marknmt/objective.hpp"

namespace marknmt {

enum class TrainMode { supervised, combined, distill };

TrainMode train_mode_from_string(const std::string& name);

// Parsed from a flat key-value text file ("key = value" lines, '#' comments).
struct ExperimentConfig {
  TrainMode mode = TrainMode::supervised;

  // Data. Either parallel files (train_src + train_trg, plus train_mt for
  // distillation) or a 3-column TSV (train_triple) with source, MT output,
  // postedit.
  std::string train_src;
  std::string train_trg;
  std::string train_mt;
  std::string train_triple;
  std::string dev_src;
  std::string dev_trg;

  // Tokenizer: loaded from bpe_model/bpe_vocab when present, otherwise learned
  // from the training corpus with bpe_merges merges and saved there.
  std::string bpe_model;
  std::string bpe_vocab;  // defaults to bpe_model + ".vocab"
  int bpe_merges = 4000;

  ModelConfig model;  // vocab sizes are filled in from the tokenizer
  LossConfig loss;

  // Optimizer (adaptive moments).
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping

  int epochs = 10;
  int batch_tokens = 512;
  std::uint64_t seed = 1;
  long long max_steps = 0;  // stop after this many optimizer steps; 0 = no cap

  // Decoding: greedy for the per-epoch training pass, configurable beam for
  // evaluation.
  int train_beam = 1;
  int eval_beam = 1;
  double length_norm = 1.0;
  int decode_max_steps = 0;  // 0 means max_len - 1

  bool frozen_markings = false;  // reuse epoch-0 hypotheses/markings all run
  int threads = 4;

  std::string init_from;    // checkpoint to fine-tune from; fresh init when empty
  std::string resume_from;  // checkpoint whose .state sidecar resumes a run
  std::string ckpt_out;
  std::string best_ckpt_out;
  std::string metrics_out;

  // Test instrumentation, not a config-file key.
  bool capture_artifacts = false;

  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_string(const std::string& text);
  void validate() const;
};

}  // namespace marknmt
