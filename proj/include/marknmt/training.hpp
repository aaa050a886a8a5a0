#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "marknmt/config.hpp"
#include "marknmt/metrics.hpp"
#include "marknmt/model.hpp"
#include "marknmt/objective.hpp"
#include "marknmt/tokenizer.hpp"

namespace marknmt {

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_ter = -1.0;   // percentage; -1 when no dev set is configured
  double dev_bleu = -1.0;
  double wall_time = 0.0;  // seconds
};

// Adam moments plus the counters that make a run resumable; serialized next to
// the model checkpoint as a ".state" sidecar.
struct OptimState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long long step = 0;
  int next_epoch = 0;
  double best_dev_ter = -1.0;

  void init_like(const ModelParams& params);
};

struct TrainOutcome {
  std::shared_ptr<TransformerModel> model;
  std::shared_ptr<BpeModel> bpe;
  std::vector<EpochMetrics> metrics;
  // One {pe, marked} row counter per trained epoch.
  std::vector<std::array<long long, 2>> rows_per_epoch;
  // Filled only when cfg.capture_artifacts is set.
  std::vector<std::vector<TokenSeq>> hypotheses_by_epoch;
  std::vector<std::vector<std::vector<std::uint8_t>>> markings_by_epoch;
};

// One hypothesis per source, order preserved; deterministic for fixed params
// regardless of the worker count.
std::vector<TokenSeq> translate_corpus(TransformerModel& model,
                                       const std::vector<TokenSeq>& sources,
                                       const DecodeSettings& settings, int threads = 1);

// Entry point for all three modes (supervised, combined, distill).
TrainOutcome run_training(const ExperimentConfig& cfg);

// Train-state sidecar IO (model checkpoint saved separately at `ckpt_path`).
void save_train_state(const std::string& ckpt_path, const TransformerModel& model,
                      const OptimState& opt);
OptimState load_train_state(const std::string& ckpt_path, const TransformerModel& model);

std::string metrics_to_json(const EpochMetrics& m);

}  // namespace marknmt
