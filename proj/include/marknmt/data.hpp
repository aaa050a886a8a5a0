#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace marknmt {

struct ParallelCorpus {
  std::vector<std::string> src;
  std::vector<std::string> trg;
  std::string provenance;

  std::size_t size() const { return src.size(); }
};

struct TripleCorpus {
  std::vector<std::string> src;
  std::vector<std::string> mt;
  std::vector<std::string> postedit;

  std::size_t size() const { return src.size(); }
};

// Strict loaders: every anomaly errors with a line number; no silent skipping.
std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

ParallelCorpus load_parallel(const std::string& src_path, const std::string& trg_path);
TripleCorpus load_triple(const std::string& tsv_path);
void save_triple(const std::string& tsv_path, const TripleCorpus& corpus);

enum class ToyTask { copy, reorder_map, lexical_map };

ToyTask toy_task_from_string(const std::string& name);

struct ToyTaskConfig {
  ToyTask task = ToyTask::copy;
  int size = 100;       // training pairs
  int dev_size = 0;
  int test_size = 0;
  int vocab = 50;       // word-type inventory
  std::uint64_t seed = 1;
  int min_len = 3;
  int max_len = 9;
  // Fraction of the lexical table rewired to a wrong entry; a nonzero value
  // yields a systematically-wrong variant of the same task (a stand-in legacy
  // system to distill or a stale baseline domain).
  double perturb = 0.0;
};

struct ToySplits {
  ParallelCorpus train;
  ParallelCorpus dev;
  ParallelCorpus test;
};

// Deterministic per (task, seed); splits are disjoint by construction.
ToySplits gen_toy_task(const ToyTaskConfig& cfg);

// The word inventory used by the generators; deterministic in vocab size only.
std::vector<std::string> toy_word_list(int vocab);

}  // namespace marknmt
