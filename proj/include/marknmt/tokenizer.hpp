#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace marknmt {

// Sequence of subword-vocabulary indices. Sentence boundary markers (bos/eos)
// are appended by the consumers that need them, never stored in corpus data.
using TokenSeq = std::vector<int>;

// Reserved vocabulary slots; always the four lowest indices.
struct Specials {
  static constexpr int pad = 0;
  static constexpr int bos = 1;
  static constexpr int eos = 2;
  static constexpr int unk = 3;
  static constexpr int count = 4;
};

// Byte-pair encoding with the "@@" continuation convention: every non-final
// subword of a word carries the "@@" suffix.
class BpeModel {
 public:
  BpeModel() = default;

  // Greedy highest-frequency pair per step, ties broken lexicographically by
  // pair. Learns at most num_merges merges (fewer if candidates run out).
  static BpeModel learn(const std::vector<std::string>& corpus_lines, int num_merges);

  TokenSeq apply(const std::string& line) const;
  std::vector<std::string> apply_surface(const std::string& line) const;
  std::string detokenize(const TokenSeq& ids) const;

  std::vector<std::string> surface(const TokenSeq& ids) const;
  int vocab_size() const { return static_cast<int>(index_to_token_.size()); }
  int token_index(const std::string& token) const;  // unk if absent
  const std::string& token_string(int index) const;  // throws on unknown id
  const std::vector<std::pair<std::string, std::string>>& merges() const {
    return merges_;
  }

  // Model file: header line "vocab <size>", then one merge per line "left right".
  void save(const std::string& merges_path, const std::string& vocab_path) const;
  static BpeModel load(const std::string& merges_path, const std::string& vocab_path);

  // Test/bootstrap hook: build directly from an alphabet and a merge list.
  static BpeModel from_merges(const std::vector<std::string>& alphabet,
                              std::vector<std::pair<std::string, std::string>> merges);

 private:
  void build_vocab(const std::vector<std::string>& alphabet);
  std::vector<std::string> segment_word(const std::string& word) const;

  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, int> merge_rank_;
  std::vector<std::string> alphabet_;  // sorted single-character symbols
  std::unordered_map<std::string, int> token_to_index_;
  std::vector<std::string> index_to_token_;
};

std::vector<std::string> split_whitespace(const std::string& line);
std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace marknmt
