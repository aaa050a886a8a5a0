#include "marknmt/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "marknmt/error.hpp"
#include "marknmt/rng.hpp"
#include "marknmt/tokenizer.hpp"

namespace marknmt {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    std::erase(line, '\r');
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  for (const auto& l : lines) f << l << '\n';
}

ParallelCorpus load_parallel(const std::string& src_path, const std::string& trg_path) {
  ParallelCorpus corpus;
  corpus.src = read_lines(src_path);
  corpus.trg = read_lines(trg_path);
  corpus.provenance = src_path + " || " + trg_path;
  if (corpus.src.empty()) throw DataError(src_path + ": empty corpus file");
  if (corpus.trg.empty()) throw DataError(trg_path + ": empty corpus file");
  if (corpus.src.size() != corpus.trg.size())
    throw DataError("line count mismatch: " + std::to_string(corpus.src.size()) +
                    " vs " + std::to_string(corpus.trg.size()) + " (" + src_path +
                    ", " + trg_path + ")");
  for (std::size_t i = 0; i < corpus.src.size(); ++i) {
    if (split_whitespace(corpus.src[i]).empty())
      throw DataError(src_path + ": empty source line " + std::to_string(i + 1));
    if (corpus.src[i].find('\t') != std::string::npos ||
        corpus.trg[i].find('\t') != std::string::npos)
      throw DataError("interior tab in parallel text on line " + std::to_string(i + 1) +
                      " (tabs are reserved for triple TSV files)");
  }
  return corpus;
}

TripleCorpus load_triple(const std::string& tsv_path) {
  const auto lines = read_lines(tsv_path);
  if (lines.empty()) throw DataError(tsv_path + ": empty corpus file");
  TripleCorpus corpus;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      auto tab = lines[i].find('\t', start);
      if (tab == std::string::npos) {
        cols.push_back(lines[i].substr(start));
        break;
      }
      cols.push_back(lines[i].substr(start, tab - start));
      start = tab + 1;
    }
    if (cols.size() != 3)
      throw DataError(tsv_path + ": expected 3 tab-separated columns on line " +
                      std::to_string(i + 1) + ", found " + std::to_string(cols.size()));
    corpus.src.push_back(std::move(cols[0]));
    corpus.mt.push_back(std::move(cols[1]));
    corpus.postedit.push_back(std::move(cols[2]));
  }
  return corpus;
}

void save_triple(const std::string& tsv_path, const TripleCorpus& corpus) {
  std::ofstream f(tsv_path);
  if (!f) throw DataError("cannot write " + tsv_path);
  for (std::size_t i = 0; i < corpus.size(); ++i)
    f << corpus.src[i] << '\t' << corpus.mt[i] << '\t' << corpus.postedit[i] << '\n';
}

ToyTask toy_task_from_string(const std::string& name) {
  if (name == "copy") return ToyTask::copy;
  if (name == "reorder-map") return ToyTask::reorder_map;
  if (name == "lexical-map") return ToyTask::lexical_map;
  throw UsageError("unknown toy task '" + name +
                   "' (expected copy, reorder-map, or lexical-map)");
}

std::vector<std::string> toy_word_list(int vocab) {
  static const std::vector<std::string> consonants = {"b", "d", "f", "g", "k", "l", "m",
                                                      "n", "p", "r", "s", "t", "v", "z"};
  static const std::vector<std::string> vowels = {"a", "e", "i", "o", "u"};
  std::vector<std::string> syllables;
  for (const auto& c : consonants)
    for (const auto& v : vowels) syllables.push_back(c + v);
  std::vector<std::string> words;
  words.reserve(vocab);
  for (int i = 0; i < vocab; ++i)
    words.push_back(syllables[static_cast<std::size_t>(i) % syllables.size()] +
                    syllables[(static_cast<std::size_t>(i) / syllables.size() * 17 +
                               static_cast<std::size_t>(i) * 31 + 7) %
                              syllables.size()]);
  return words;
}

namespace {

// Lexical table: a rotation (always invertible), with an optional fraction of
// entries rewired to a wrong target word. The rewiring depends only on the
// vocab index and the fraction, so every seed sees the same perturbed task.
std::vector<int> lexical_table(int vocab, double perturb) {
  std::vector<int> table(vocab);
  const int shift = vocab / 2 + 1;
  for (int i = 0; i < vocab; ++i) table[i] = (i + shift) % vocab;
  if (perturb > 0.0) {
    for (int i = 0; i < vocab; ++i) {
      if (rng::uniform(rng::mix(0x7e57a5edULL, static_cast<std::uint64_t>(i))) < perturb)
        table[i] = (table[i] + 1 + i % 3) % vocab;
    }
  }
  return table;
}

std::vector<int> sample_sentence(rng::Stream& stream, int vocab, int min_len, int max_len) {
  const int len = min_len + static_cast<int>(stream.next_below(
                                static_cast<std::uint64_t>(max_len - min_len + 1)));
  std::vector<int> ids(len);
  for (int& id : ids)
    id = static_cast<int>(stream.next_below(static_cast<std::uint64_t>(vocab)));
  return ids;
}

std::string render(const std::vector<int>& ids, const std::vector<std::string>& words) {
  std::vector<std::string> toks;
  toks.reserve(ids.size());
  for (int id : ids) toks.push_back(words[static_cast<std::size_t>(id)]);
  return join_tokens(toks);
}

}  // namespace

ToySplits gen_toy_task(const ToyTaskConfig& cfg) {
  if (cfg.size < 10) throw UsageError("gen_toy_task: size must be >= 10");
  if (cfg.vocab < 10) throw UsageError("gen_toy_task: vocab must be >= 10");
  if (cfg.min_len < 1 || cfg.max_len < cfg.min_len)
    throw UsageError("gen_toy_task: bad length range");

  const auto words = toy_word_list(cfg.vocab);
  const auto table = lexical_table(cfg.vocab, cfg.perturb);
  const int total = cfg.size + cfg.dev_size + cfg.test_size;

  rng::Stream stream(rng::mix(cfg.seed, 0xc0a9f5ULL));
  std::set<std::vector<int>> seen;
  std::vector<std::string> src_lines, trg_lines;
  src_lines.reserve(total);
  trg_lines.reserve(total);

  long long attempts = 0;
  while (static_cast<int>(src_lines.size()) < total) {
    if (++attempts > 200LL * total)
      throw DataError("gen_toy_task: cannot sample enough distinct sentences; "
                      "increase vocab or length range");
    std::vector<int> src = sample_sentence(stream, cfg.vocab, cfg.min_len, cfg.max_len);
    if (!seen.insert(src).second) continue;

    std::vector<int> trg;
    switch (cfg.task) {
      case ToyTask::copy:
        trg = src;
        break;
      case ToyTask::lexical_map:
        trg.reserve(src.size());
        for (int id : src) trg.push_back(table[static_cast<std::size_t>(id)]);
        break;
      case ToyTask::reorder_map: {
        trg.reserve(src.size());
        for (int id : src) trg.push_back(table[static_cast<std::size_t>(id)]);
        // Local swaps on disjoint adjacent pairs.
        for (std::size_t j = 0; j + 1 < trg.size(); j += 2)
          if (stream.next_uniform() < 0.3) std::swap(trg[j], trg[j + 1]);
        break;
      }
    }
    src_lines.push_back(render(src, words));
    trg_lines.push_back(render(trg, words));
  }

  ToySplits splits;
  auto take = [&](int from, int count, const char* tag) {
    ParallelCorpus c;
    c.src.assign(src_lines.begin() + from, src_lines.begin() + from + count);
    c.trg.assign(trg_lines.begin() + from, trg_lines.begin() + from + count);
    c.provenance = tag;
    return c;
  };
  splits.train = take(0, cfg.size, "toy:train");
  splits.dev = take(cfg.size, cfg.dev_size, "toy:dev");
  splits.test = take(cfg.size + cfg.dev_size, cfg.test_size, "toy:test");
  return splits;
}

}  // namespace marknmt
