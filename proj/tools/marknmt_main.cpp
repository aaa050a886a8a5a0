#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "marknmt/config.hpp"
#include "marknmt/data.hpp"
#include "marknmt/error.hpp"
#include "marknmt/marking.hpp"
#include "marknmt/metrics.hpp"
#include "marknmt/model.hpp"
#include "marknmt/tokenizer.hpp"
#include "marknmt/training.hpp"

namespace {

using namespace marknmt;

int cmd_train(const std::string& config_path, const char* forced_mode) {
  ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
  if (forced_mode) cfg.mode = train_mode_from_string(forced_mode);
  TrainOutcome out = run_training(cfg);
  for (const auto& m : out.metrics) std::cout << metrics_to_json(m) << "\n";
  return 0;
}

int cmd_translate(const std::string& ckpt, const std::string& bpe_path,
                  const std::string& bpe_vocab, const std::string& src_path,
                  const std::string& out_path, int beam, int max_steps,
                  double length_norm, int threads) {
  TransformerModel model = load_checkpoint(ckpt);
  const std::string vocab_path = bpe_vocab.empty() ? bpe_path + ".vocab" : bpe_vocab;
  BpeModel bpe = BpeModel::load(bpe_path, vocab_path);
  if (bpe.vocab_size() != model.config().src_vocab)
    throw DataError("BPE vocab size " + std::to_string(bpe.vocab_size()) +
                    " does not match checkpoint vocab " +
                    std::to_string(model.config().src_vocab));

  const auto lines = read_lines(src_path);
  std::vector<TokenSeq> srcs;
  srcs.reserve(lines.size());
  for (const auto& l : lines) srcs.push_back(bpe.apply(l));

  DecodeSettings settings{beam,
                          max_steps > 0 ? max_steps : model.config().max_len - 1,
                          length_norm};
  auto hyps = translate_corpus(model, srcs, settings, threads);
  std::vector<std::string> out;
  out.reserve(hyps.size());
  for (const auto& h : hyps) out.push_back(bpe.detokenize(h));
  write_lines(out_path, out);
  return 0;
}

int cmd_mark(const std::string& hyp_path, const std::string& ref_path,
             const std::string& out_path) {
  const auto hyp_lines = read_lines(hyp_path);
  const auto ref_lines = read_lines(ref_path);
  if (hyp_lines.size() != ref_lines.size())
    throw DataError("mark: " + std::to_string(hyp_lines.size()) + " hypotheses vs " +
                    std::to_string(ref_lines.size()) + " references");

  std::vector<std::string> out;
  out.reserve(hyp_lines.size());
  for (std::size_t i = 0; i < hyp_lines.size(); ++i) {
    // marking compares surface subword tokens; intern them per sentence pair
    std::unordered_map<std::string, int> dict;
    auto intern = [&dict](const std::vector<std::string>& toks) {
      TokenSeq ids;
      ids.reserve(toks.size());
      for (const auto& t : toks) {
        auto [it, ins] = dict.emplace(t, static_cast<int>(dict.size()));
        ids.push_back(it->second);
      }
      return ids;
    };
    TokenSeq hyp = intern(split_whitespace(hyp_lines[i]));
    TokenSeq ref = intern(split_whitespace(ref_lines[i]));
    MarkedHypothesis m = mark_hypothesis(hyp, ref, 1.0, 0.0);
    std::string bits;
    for (std::size_t k = 0; k < m.marks.size(); ++k) {
      if (k) bits.push_back(' ');
      bits.push_back(m.marks[k] ? '1' : '0');
    }
    out.push_back(std::move(bits));
  }
  if (out_path.empty() || out_path == "-")
    for (const auto& l : out) std::cout << l << "\n";
  else
    write_lines(out_path, out);
  return 0;
}

int cmd_evaluate(const std::string& hyp_path, const std::string& ref_path,
                 const std::string& metric, bool keep_case) {
  const auto hyps = read_lines(hyp_path);
  const auto refs = read_lines(ref_path);
  nlohmann::json j;
  j["metric"] = metric;
  j["n_sentences"] = hyps.size();
  if (metric == "ter") {
    TerConfig cfg;
    cfg.lowercase = !keep_case;
    EvalReport rep = ter_corpus(hyps, refs, cfg);
    j["corpus_score"] = rep.corpus_score * 100.0;
    j["config_signature"] = rep.config_signature;
  } else if (metric == "bleu") {
    BleuConfig cfg;
    cfg.lowercase = !keep_case;
    j["corpus_score"] = bleu(hyps, refs, cfg);
    j["config_signature"] = std::string("metric:bleu|case:") +
                            (cfg.lowercase ? "lc" : "mixed") + "|smooth:" +
                            (cfg.smooth ? "exp" : "none") + "|max-n:4";
  } else {
    throw UsageError("evaluate: metric must be ter or bleu");
  }
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_sigtest(const std::string& hyp_a, const std::string& hyp_b,
                const std::string& ref_path, int samples, std::uint64_t seed) {
  const auto a = read_lines(hyp_a);
  const auto b = read_lines(hyp_b);
  const auto refs = read_lines(ref_path);
  TerConfig cfg;
  EvalReport ra = ter_corpus(a, refs, cfg);
  EvalReport rb = ter_corpus(b, refs, cfg);
  std::vector<double> sa, sb;
  for (const auto& s : ra.sentences) sa.push_back(s.ter());
  for (const auto& s : rb.sentences) sb.push_back(s.ter());

  double delta = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) delta += sa[i] - sb[i];
  delta /= static_cast<double>(sa.size());

  nlohmann::json j;
  j["p_value"] = approx_randomization(sa, sb, samples, seed);
  j["delta"] = delta;
  j["samples"] = samples;
  j["seed"] = seed;
  j["config_signature"] = "metric:ter|scores:per-sentence|ar:" +
                          std::to_string(samples) + "|seed:" + std::to_string(seed) +
                          "|case:lc|tok:tercom";
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_gen_corpus(const std::string& task, int size, int dev, int test, int vocab,
                   std::uint64_t seed, double perturb, int min_len, int max_len,
                   const std::string& out_dir) {
  ToyTaskConfig cfg;
  cfg.task = toy_task_from_string(task);
  cfg.size = size;
  cfg.dev_size = dev;
  cfg.test_size = test;
  cfg.vocab = vocab;
  cfg.seed = seed;
  cfg.perturb = perturb;
  cfg.min_len = min_len;
  cfg.max_len = max_len;
  ToySplits splits = gen_toy_task(cfg);

  std::filesystem::create_directories(out_dir);
  auto emit = [&](const ParallelCorpus& c, const char* name) {
    if (c.src.empty()) return;
    write_lines(out_dir + "/" + name + ".src", c.src);
    write_lines(out_dir + "/" + name + ".trg", c.trg);
  };
  emit(splits.train, "train");
  emit(splits.dev, "dev");
  emit(splits.test, "test");
  std::cout << "wrote " << splits.train.size() << " train / " << splits.dev.size()
            << " dev / " << splits.test.size() << " test pairs to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"marknmt: NMT fine-tuning with online LCS error markings"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "run a training configuration");
  train->add_option("--config", config_path, "flat key=value config file")->required();

  auto* distill = app.add_subcommand("distill", "distill a legacy system's outputs");
  distill->add_option("--config", config_path, "flat key=value config file")->required();

  std::string ckpt, bpe_path, bpe_vocab, src_path, out_path;
  int beam = 1, max_steps = 0, threads = 4;
  double length_norm = 1.0;
  auto* translate = app.add_subcommand("translate", "decode a source file");
  translate->add_option("--ckpt", ckpt)->required();
  translate->add_option("--bpe", bpe_path, "BPE merges file")->required();
  translate->add_option("--bpe-vocab", bpe_vocab, "defaults to <bpe>.vocab");
  translate->add_option("--src", src_path)->required();
  translate->add_option("--out", out_path)->required();
  translate->add_option("--beam", beam);
  translate->add_option("--max-steps", max_steps);
  translate->add_option("--length-norm", length_norm);
  translate->add_option("--threads", threads);

  std::string hyp_path, ref_path, mark_out;
  auto* mark = app.add_subcommand("mark", "LCS error markings for hypothesis tokens");
  mark->add_option("--hyp", hyp_path, "hypothesis token lines")->required();
  mark->add_option("--ref", ref_path, "reference token lines")->required();
  mark->add_option("--out", mark_out, "output path, '-' for stdout");

  std::string metric = "ter";
  bool keep_case = false;
  auto* evaluate = app.add_subcommand("evaluate", "corpus TER or BLEU as JSON");
  evaluate->add_option("--hyp", hyp_path)->required();
  evaluate->add_option("--ref", ref_path)->required();
  evaluate->add_option("--metric", metric, "ter|bleu");
  evaluate->add_flag("--keep-case", keep_case, "disable lowercasing");

  std::string hyp_a, hyp_b;
  int samples = 10000;
  std::uint64_t seed = 12345;
  auto* sigtest = app.add_subcommand("sigtest", "paired approximate randomization");
  sigtest->add_option("--hyp-a", hyp_a)->required();
  sigtest->add_option("--hyp-b", hyp_b)->required();
  sigtest->add_option("--ref", ref_path)->required();
  sigtest->add_option("--samples", samples);
  sigtest->add_option("--seed", seed);

  std::string task = "copy", out_dir = ".";
  int size = 100, dev = 0, test = 0, vocab = 50, min_len = 3, max_len = 9;
  double perturb = 0.0;
  std::uint64_t gen_seed = 1;
  auto* gen = app.add_subcommand("gen-corpus", "synthetic toy-task corpora");
  gen->add_option("--task", task, "copy|reorder-map|lexical-map");
  gen->add_option("--size", size, "training pairs");
  gen->add_option("--dev", dev);
  gen->add_option("--test", test);
  gen->add_option("--vocab", vocab);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--perturb", perturb, "fraction of lexical entries rewired");
  gen->add_option("--min-len", min_len);
  gen->add_option("--max-len", max_len);
  gen->add_option("--out-dir", out_dir);

  try {
    app.parse(argc, argv);
    if (train->parsed()) return cmd_train(config_path, nullptr);
    if (distill->parsed()) return cmd_train(config_path, "distill");
    if (translate->parsed())
      return cmd_translate(ckpt, bpe_path, bpe_vocab, src_path, out_path, beam,
                           max_steps, length_norm, threads);
    if (mark->parsed()) return cmd_mark(hyp_path, ref_path, mark_out);
    if (evaluate->parsed()) return cmd_evaluate(hyp_path, ref_path, metric, keep_case);
    if (sigtest->parsed()) return cmd_sigtest(hyp_a, hyp_b, ref_path, samples, seed);
    if (gen->parsed())
      return cmd_gen_corpus(task, size, dev, test, vocab, gen_seed, perturb, min_len,
                            max_len, out_dir);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
