#include "marknmt/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "marknmt/error.hpp"

namespace marknmt {

namespace {

const char* kSpecialStrings[Specials::count] = {"<pad>", "<s>", "</s>", "<unk>"};

std::size_t utf8_char_len(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;  // invalid lead byte, consume one byte
}

std::vector<std::string> utf8_chars(const std::string& word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    std::size_t len = std::min(utf8_char_len(static_cast<unsigned char>(word[i])),
                               word.size() - i);
    out.push_back(word.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace

std::vector<std::string> split_whitespace(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

BpeModel BpeModel::learn(const std::vector<std::string>& corpus_lines, int num_merges) {
  if (num_merges < 0) throw UsageError("bpe_learn: num_merges must be >= 0");

  std::map<std::string, long long> word_freq;
  for (const auto& line : corpus_lines)
    for (const auto& w : split_whitespace(line)) ++word_freq[w];
  if (word_freq.empty()) throw DataError("bpe_learn: corpus contains no tokens");

  struct Entry {
    std::vector<std::string> symbols;
    long long freq;
  };
  std::vector<Entry> words;
  words.reserve(word_freq.size());
  std::vector<std::string> alphabet_set;
  for (const auto& [w, f] : word_freq) {
    Entry e{utf8_chars(w), f};
    for (const auto& s : e.symbols) alphabet_set.push_back(s);
    words.push_back(std::move(e));
  }
  std::sort(alphabet_set.begin(), alphabet_set.end());
  alphabet_set.erase(std::unique(alphabet_set.begin(), alphabet_set.end()),
                     alphabet_set.end());

  BpeModel model;
  model.alphabet_ = alphabet_set;

  for (int step = 0; step < num_merges; ++step) {
    std::map<std::pair<std::string, std::string>, long long> pair_freq;
    for (const auto& e : words)
      for (std::size_t i = 0; i + 1 < e.symbols.size(); ++i)
        pair_freq[{e.symbols[i], e.symbols[i + 1]}] += e.freq;
    if (pair_freq.empty()) break;

    // Highest frequency; the map's lexicographic key order settles ties.
    std::pair<std::string, std::string> best;
    long long best_freq = -1;
    for (const auto& [p, f] : pair_freq) {
      if (f > best_freq) {
        best = p;
        best_freq = f;
      }
    }

    for (auto& e : words) {
      std::vector<std::string> merged;
      merged.reserve(e.symbols.size());
      std::size_t i = 0;
      while (i < e.symbols.size()) {
        if (i + 1 < e.symbols.size() && e.symbols[i] == best.first &&
            e.symbols[i + 1] == best.second) {
          merged.push_back(best.first + best.second);
          i += 2;
        } else {
          merged.push_back(e.symbols[i]);
          ++i;
        }
      }
      e.symbols = std::move(merged);
    }
    model.merge_rank_[best] = static_cast<int>(model.merges_.size());
    model.merges_.push_back(best);
  }

  model.build_vocab(alphabet_set);
  return model;
}

BpeModel BpeModel::from_merges(const std::vector<std::string>& alphabet,
                               std::vector<std::pair<std::string, std::string>> merges) {
  BpeModel model;
  model.alphabet_ = alphabet;
  std::sort(model.alphabet_.begin(), model.alphabet_.end());
  model.merges_ = std::move(merges);
  for (std::size_t i = 0; i < model.merges_.size(); ++i)
    model.merge_rank_[model.merges_[i]] = static_cast<int>(i);
  model.build_vocab(model.alphabet_);
  return model;
}

void BpeModel::build_vocab(const std::vector<std::string>& alphabet) {
  // Specials first, then each symbol in both word-final and continuation form.
  // Covering both forms for every producible symbol keeps apply() closed over
  // the training alphabet regardless of where a subword lands in a word.
  index_to_token_.clear();
  token_to_index_.clear();
  for (const char* s : kSpecialStrings) {
    token_to_index_[s] = static_cast<int>(index_to_token_.size());
    index_to_token_.push_back(s);
  }
  auto add = [&](const std::string& tok) {
    if (token_to_index_.count(tok)) return;
    token_to_index_[tok] = static_cast<int>(index_to_token_.size());
    index_to_token_.push_back(tok);
  };
  for (const auto& s : alphabet) {
    add(s);
    add(s + "@@");
  }
  for (const auto& m : merges_) {
    add(m.first + m.second);
    add(m.first + m.second + "@@");
  }
}

std::vector<std::string> BpeModel::segment_word(const std::string& word) const {
  std::vector<std::string> symbols = utf8_chars(word);
  while (symbols.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best_pos = i;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const std::string left = symbols[best_pos];
    const std::string right = symbols[best_pos + 1];
    std::vector<std::string> merged;
    merged.reserve(symbols.size());
    std::size_t i = 0;
    while (i < symbols.size()) {
      if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
        merged.push_back(left + right);
        i += 2;
      } else {
        merged.push_back(symbols[i]);
        ++i;
      }
    }
    symbols = std::move(merged);
  }
  return symbols;
}

std::vector<std::string> BpeModel::apply_surface(const std::string& line) const {
  std::vector<std::string> out;
  for (const auto& word : split_whitespace(line)) {
    std::vector<std::string> pieces = segment_word(word);
    for (std::size_t i = 0; i < pieces.size(); ++i)
      out.push_back(i + 1 < pieces.size() ? pieces[i] + "@@" : pieces[i]);
  }
  return out;
}

TokenSeq BpeModel::apply(const std::string& line) const {
  TokenSeq ids;
  for (const auto& tok : apply_surface(line)) ids.push_back(token_index(tok));
  return ids;
}

int BpeModel::token_index(const std::string& token) const {
  auto it = token_to_index_.find(token);
  return it == token_to_index_.end() ? Specials::unk : it->second;
}

const std::string& BpeModel::token_string(int index) const {
  if (index < 0 || index >= vocab_size())
    throw DataError("detokenize: unknown token id " + std::to_string(index));
  return index_to_token_[static_cast<std::size_t>(index)];
}

std::vector<std::string> BpeModel::surface(const TokenSeq& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(token_string(id));
  return out;
}

std::string BpeModel::detokenize(const TokenSeq& ids) const {
  std::string out;
  bool continuing = false;
  for (int id : ids) {
    if (id == Specials::pad || id == Specials::bos || id == Specials::eos) continue;
    const std::string& tok = token_string(id);
    if (!continuing && !out.empty()) out.push_back(' ');
    if (tok.size() > 2 && tok.compare(tok.size() - 2, 2, "@@") == 0) {
      out += tok.substr(0, tok.size() - 2);
      continuing = true;
    } else {
      out += tok;
      continuing = false;
    }
  }
  return out;
}

void BpeModel::save(const std::string& merges_path, const std::string& vocab_path) const {
  std::ofstream mf(merges_path);
  if (!mf) throw DataError("bpe save: cannot write " + merges_path);
  mf << "vocab " << vocab_size() << "\n";
  for (const auto& m : merges_) mf << m.first << ' ' << m.second << "\n";

  std::ofstream vf(vocab_path);
  if (!vf) throw DataError("bpe save: cannot write " + vocab_path);
  for (int i = 0; i < vocab_size(); ++i) vf << index_to_token_[i] << '\t' << i << "\n";
}

BpeModel BpeModel::load(const std::string& merges_path, const std::string& vocab_path) {
  std::ifstream mf(merges_path);
  if (!mf) throw DataError("bpe load: cannot read " + merges_path);
  std::string header;
  if (!std::getline(mf, header) || header.rfind("vocab ", 0) != 0)
    throw DataError("bpe load: missing 'vocab <size>' header in " + merges_path);
  int declared = std::stoi(header.substr(6));

  BpeModel model;
  std::string line;
  int lineno = 1;
  while (std::getline(mf, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string left, right, extra;
    if (!(ss >> left >> right) || (ss >> extra))
      throw DataError("bpe load: malformed merge on line " + std::to_string(lineno) +
                      " of " + merges_path);
    model.merge_rank_[{left, right}] = static_cast<int>(model.merges_.size());
    model.merges_.emplace_back(left, right);
  }

  std::ifstream vf(vocab_path);
  if (!vf) throw DataError("bpe load: cannot read " + vocab_path);
  lineno = 0;
  while (std::getline(vf, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("bpe load: missing tab on line " + std::to_string(lineno) + " of " +
                      vocab_path);
    std::string tok = line.substr(0, tab);
    int index = std::stoi(line.substr(tab + 1));
    if (index != static_cast<int>(model.index_to_token_.size()))
      throw DataError("bpe load: non-contiguous index on line " + std::to_string(lineno) +
                      " of " + vocab_path);
    model.token_to_index_[tok] = index;
    model.index_to_token_.push_back(tok);
  }
  if (model.vocab_size() != declared)
    throw DataError("bpe load: header declares " + std::to_string(declared) +
                    " tokens but vocab file has " + std::to_string(model.vocab_size()));
  for (int i = 0; i < Specials::count; ++i)
    if (model.index_to_token_[i] != kSpecialStrings[i])
      throw DataError("bpe load: vocab does not reserve the special tokens");
  return model;
}

}  // namespace marknmt
