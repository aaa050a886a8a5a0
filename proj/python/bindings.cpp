#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <unordered_map>

#include "marknmt/config.hpp"
#include "marknmt/data.hpp"
#include "marknmt/error.hpp"
#include "marknmt/marking.hpp"
#include "marknmt/metrics.hpp"
#include "marknmt/model.hpp"
#include "marknmt/tokenizer.hpp"
#include "marknmt/training.hpp"

namespace py = pybind11;
using namespace marknmt;

namespace {

// Surface-token marking as used by the `mark` CLI: 1 where the hypothesis
// token belongs to the LCS with the reference.
std::vector<int> mark_tokens(const std::vector<std::string>& hyp,
                             const std::vector<std::string>& ref) {
  std::unordered_map<std::string, int> dict;
  auto intern = [&dict](const std::vector<std::string>& toks) {
    TokenSeq ids;
    for (const auto& t : toks) {
      auto [it, ins] = dict.emplace(t, static_cast<int>(dict.size()));
      ids.push_back(it->second);
    }
    return ids;
  };
  MarkedHypothesis m = mark_hypothesis(intern(hyp), intern(ref), 1.0, 0.0);
  return std::vector<int>(m.marks.begin(), m.marks.end());
}

// Checkpoint + tokenizer pair for decoding from Python.
class Translator {
 public:
  Translator(const std::string& ckpt, const std::string& bpe_path,
             const std::string& vocab_path)
      : model_(load_checkpoint(ckpt)),
        bpe_(BpeModel::load(bpe_path,
                            vocab_path.empty() ? bpe_path + ".vocab" : vocab_path)) {
    if (bpe_.vocab_size() != model_.config().src_vocab)
      throw DataError("BPE vocab does not match the checkpoint vocabulary");
  }

  std::vector<std::string> translate(const std::vector<std::string>& lines, int beam,
                                     int max_steps, double length_norm, int threads) {
    std::vector<TokenSeq> srcs;
    srcs.reserve(lines.size());
    for (const auto& l : lines) srcs.push_back(bpe_.apply(l));
    DecodeSettings s{beam, max_steps > 0 ? max_steps : model_.config().max_len - 1,
                     length_norm};
    auto hyps = translate_corpus(model_, srcs, s, threads);
    std::vector<std::string> out;
    out.reserve(hyps.size());
    for (const auto& h : hyps) out.push_back(bpe_.detokenize(h));
    return out;
  }

 private:
  TransformerModel model_;
  BpeModel bpe_;
};

py::dict metrics_dict(const EpochMetrics& m) {
  py::dict d;
  d["epoch"] = m.epoch;
  d["train_loss"] = m.train_loss;
  d["dev_ter"] = m.dev_ter;
  d["dev_bleu"] = m.dev_bleu;
  d["wall_time"] = m.wall_time;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "marknmt core: BPE, LCS markings, TER/BLEU, and the training loop";

  py::register_exception<UsageError>(m, "UsageError");
  py::register_exception<DataError>(m, "DataError");
  py::register_exception<NumericError>(m, "NumericError");

  py::class_<BpeModel>(m, "BpeModel")
      .def_static("learn", &BpeModel::learn, py::arg("corpus_lines"),
                  py::arg("num_merges"))
      .def_static("load", &BpeModel::load, py::arg("merges_path"),
                  py::arg("vocab_path"))
      .def("apply", &BpeModel::apply, py::arg("line"))
      .def("apply_surface", &BpeModel::apply_surface, py::arg("line"))
      .def("detokenize", &BpeModel::detokenize, py::arg("ids"))
      .def("save", &BpeModel::save, py::arg("merges_path"), py::arg("vocab_path"))
      .def_property_readonly("vocab_size", &BpeModel::vocab_size);

  m.def("mark_tokens", &mark_tokens, py::arg("hyp_tokens"), py::arg("ref_tokens"),
        "Per-token LCS markings (1 = kept in the reference) for surface tokens");
  m.def("lcs_length", &lcs_length, py::arg("a"), py::arg("b"));
  m.def(
      "mark_ids",
      [](const TokenSeq& hyp, const TokenSeq& ref, double dplus, double dminus) {
        MarkedHypothesis mh = mark_hypothesis(hyp, ref, dplus, dminus);
        return py::make_tuple(std::vector<int>(mh.marks.begin(), mh.marks.end()),
                              mh.weights);
      },
      py::arg("hyp"), py::arg("ref"), py::arg("delta_plus") = 0.5,
      py::arg("delta_minus") = -0.5);

  m.def(
      "ter",
      [](const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
         bool lowercase) {
        TerConfig cfg;
        cfg.lowercase = lowercase;
        EvalReport rep = ter_corpus(hyps, refs, cfg);
        py::dict d;
        d["corpus_score"] = rep.corpus_score * 100.0;
        d["n_sentences"] = rep.n_sentences;
        d["config_signature"] = rep.config_signature;
        std::vector<double> sentence_ter;
        for (const auto& s : rep.sentences) sentence_ter.push_back(s.ter());
        d["sentence_ter"] = sentence_ter;
        return d;
      },
      py::arg("hyps"), py::arg("refs"), py::arg("lowercase") = true,
      "Corpus TER (0-100) with per-sentence scores");

  m.def(
      "bleu",
      [](const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
         bool lowercase, bool smooth) {
        BleuConfig cfg;
        cfg.lowercase = lowercase;
        cfg.smooth = smooth;
        return bleu(hyps, refs, cfg);
      },
      py::arg("hyps"), py::arg("refs"), py::arg("lowercase") = false,
      py::arg("smooth") = false, "Corpus BLEU, 0-100");

  m.def("approx_randomization", &approx_randomization, py::arg("scores_a"),
        py::arg("scores_b"), py::arg("samples") = 10000, py::arg("seed") = 12345,
        "Paired approximate randomization p-value on per-sentence scores");

  m.def(
      "train",
      [](const std::string& config_path) {
        TrainOutcome out = run_training(ExperimentConfig::from_file(config_path));
        py::list metrics;
        for (const auto& em : out.metrics) metrics.append(metrics_dict(em));
        return metrics;
      },
      py::arg("config_path"),
      "Run a training configuration; returns the per-epoch metrics");

  m.def(
      "gen_toy_task",
      [](const std::string& task, int size, int dev, int test, int vocab,
         std::uint64_t seed, double perturb, const std::string& out_dir) {
        ToyTaskConfig cfg;
        cfg.task = toy_task_from_string(task);
        cfg.size = size;
        cfg.dev_size = dev;
        cfg.test_size = test;
        cfg.vocab = vocab;
        cfg.seed = seed;
        cfg.perturb = perturb;
        ToySplits splits = gen_toy_task(cfg);
        auto emit = [&](const ParallelCorpus& c, const std::string& name) {
          if (c.src.empty()) return;
          write_lines(out_dir + "/" + name + ".src", c.src);
          write_lines(out_dir + "/" + name + ".trg", c.trg);
        };
        emit(splits.train, "train");
        emit(splits.dev, "dev");
        emit(splits.test, "test");
      },
      py::arg("task"), py::arg("size"), py::arg("dev") = 0, py::arg("test") = 0,
      py::arg("vocab") = 50, py::arg("seed") = 1, py::arg("perturb") = 0.0,
      py::arg("out_dir") = ".");

  py::class_<Translator>(m, "Translator")
      .def(py::init<const std::string&, const std::string&, const std::string&>(),
           py::arg("ckpt"), py::arg("bpe"), py::arg("bpe_vocab") = "")
      .def("translate", &Translator::translate, py::arg("lines"), py::arg("beam") = 1,
           py::arg("max_steps") = 0, py::arg("length_norm") = 1.0,
           py::arg("threads") = 1);
}
