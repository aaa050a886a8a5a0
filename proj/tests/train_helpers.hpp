#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "marknmt/config.hpp"
#include "marknmt/data.hpp"
#include "marknmt/training.hpp"

namespace marknmt::testing {

struct TempWorkspace {
  std::filesystem::path dir;

  explicit TempWorkspace(const std::string& tag) {
    dir = std::filesystem::temp_directory_path() /
          ("marknmt_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
  }
  ~TempWorkspace() { std::filesystem::remove_all(dir); }

  std::string path(const std::string& name) const { return (dir / name).string(); }
};

// Writes a toy split to disk and returns a config wired to it, with a small
// fast architecture suitable for unit tests.
inline ExperimentConfig toy_config(const TempWorkspace& ws, const ToySplits& splits,
                                   const std::string& tag) {
  write_lines(ws.path(tag + ".train.src"), splits.train.src);
  write_lines(ws.path(tag + ".train.trg"), splits.train.trg);
  if (!splits.dev.src.empty()) {
    write_lines(ws.path(tag + ".dev.src"), splits.dev.src);
    write_lines(ws.path(tag + ".dev.trg"), splits.dev.trg);
  }
  if (!splits.test.src.empty()) {
    write_lines(ws.path(tag + ".test.src"), splits.test.src);
    write_lines(ws.path(tag + ".test.trg"), splits.test.trg);
  }

  ExperimentConfig cfg;
  cfg.train_src = ws.path(tag + ".train.src");
  cfg.train_trg = ws.path(tag + ".train.trg");
  if (!splits.dev.src.empty()) {
    cfg.dev_src = ws.path(tag + ".dev.src");
    cfg.dev_trg = ws.path(tag + ".dev.trg");
  }
  cfg.bpe_model = ws.path(tag + ".bpe");
  cfg.bpe_vocab = ws.path(tag + ".bpe.vocab");
  cfg.bpe_merges = 60;
  cfg.model.layers = 1;
  cfg.model.heads = 2;
  cfg.model.d_model = 32;
  cfg.model.d_ff = 64;
  cfg.model.max_len = 48;
  cfg.model.dropout = 0.0;
  cfg.epochs = 10;
  cfg.batch_tokens = 256;
  cfg.threads = 2;
  cfg.ckpt_out = ws.path(tag + ".ckpt");
  cfg.metrics_out = ws.path(tag + ".metrics.jsonl");
  return cfg;
}

}  // namespace marknmt::testing
