#include "marknmt/config.hpp"

#include <fstream>
#include <sstream>

#include "marknmt/error.hpp"

namespace marknmt {

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "supervised") return TrainMode::supervised;
  if (name == "combined") return TrainMode::combined;
  if (name == "distill") return TrainMode::distill;
  throw UsageError("unknown mode '" + name +
                   "' (expected supervised, combined, or distill)");
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError("config: bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

ExperimentConfig ExperimentConfig::from_string(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config: expected 'key = value' on line " +
                       std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));

    try {
      if (key == "mode") cfg.mode = train_mode_from_string(val);
      else if (key == "train_src") cfg.train_src = val;
      else if (key == "train_trg") cfg.train_trg = val;
      else if (key == "train_mt") cfg.train_mt = val;
      else if (key == "train_triple") cfg.train_triple = val;
      else if (key == "dev_src") cfg.dev_src = val;
      else if (key == "dev_trg") cfg.dev_trg = val;
      else if (key == "bpe_model") cfg.bpe_model = val;
      else if (key == "bpe_vocab") cfg.bpe_vocab = val;
      else if (key == "bpe_merges") cfg.bpe_merges = std::stoi(val);
      else if (key == "layers") cfg.model.layers = std::stoi(val);
      else if (key == "heads") cfg.model.heads = std::stoi(val);
      else if (key == "d_model") cfg.model.d_model = std::stoi(val);
      else if (key == "d_ff") cfg.model.d_ff = std::stoi(val);
      else if (key == "max_len") cfg.model.max_len = std::stoi(val);
      else if (key == "dropout") cfg.model.dropout = std::stod(val);
      else if (key == "tied_embeddings")
        cfg.model.tied_embeddings = parse_bool(val, key);
      else if (key == "alpha") cfg.loss.alpha = std::stod(val);
      else if (key == "delta_plus") cfg.loss.delta_plus = std::stod(val);
      else if (key == "delta_minus") cfg.loss.delta_minus = std::stod(val);
      else if (key == "logprob_floor") cfg.loss.logprob_floor = std::stod(val);
      else if (key == "normalization")
        cfg.loss.normalization = normalization_from_string(val);
      else if (key == "lr") cfg.lr = std::stod(val);
      else if (key == "beta1") cfg.beta1 = std::stod(val);
      else if (key == "beta2") cfg.beta2 = std::stod(val);
      else if (key == "adam_eps") cfg.adam_eps = std::stod(val);
      else if (key == "clip_norm") cfg.clip_norm = std::stod(val);
      else if (key == "epochs") cfg.epochs = std::stoi(val);
      else if (key == "batch_tokens") cfg.batch_tokens = std::stoi(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else if (key == "max_steps") cfg.max_steps = std::stoll(val);
      else if (key == "train_beam") cfg.train_beam = std::stoi(val);
      else if (key == "eval_beam") cfg.eval_beam = std::stoi(val);
      else if (key == "length_norm") cfg.length_norm = std::stod(val);
      else if (key == "decode_max_steps") cfg.decode_max_steps = std::stoi(val);
      else if (key == "frozen_markings") cfg.frozen_markings = parse_bool(val, key);
      else if (key == "threads") cfg.threads = std::stoi(val);
      else if (key == "init_from") cfg.init_from = val;
      else if (key == "resume_from") cfg.resume_from = val;
      else if (key == "ckpt_out") cfg.ckpt_out = val;
      else if (key == "best_ckpt_out") cfg.best_ckpt_out = val;
      else if (key == "metrics_out") cfg.metrics_out = val;
      else
        throw UsageError("config: unknown key '" + key + "' on line " +
                         std::to_string(lineno));
    } catch (const std::invalid_argument&) {
      throw UsageError("config: bad value for " + key + ": '" + val + "'");
    } catch (const std::out_of_range&) {
      throw UsageError("config: value out of range for " + key + ": '" + val + "'");
    }
  }
  if (cfg.bpe_vocab.empty() && !cfg.bpe_model.empty())
    cfg.bpe_vocab = cfg.bpe_model + ".vocab";
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_string(ss.str());
}

void ExperimentConfig::validate() const {
  loss.validate();
  if (epochs < 0) throw UsageError("config: epochs must be >= 0");
  if (batch_tokens < 1) throw UsageError("config: batch_tokens must be >= 1");
  if (lr <= 0.0) throw UsageError("config: lr must be positive");
  if (threads < 1) throw UsageError("config: threads must be >= 1");
  if (train_beam < 1 || eval_beam < 1)
    throw UsageError("config: beam sizes must be >= 1");
  if (bpe_model.empty()) throw UsageError("config: bpe_model path is required");
  if (mode == TrainMode::distill && train_triple.empty() && train_mt.empty())
    throw UsageError("config: distill mode needs train_triple or train_mt");
  if (train_triple.empty() && (train_src.empty() || train_trg.empty()))
    throw UsageError("config: train_src and train_trg (or train_triple) are required");
  auto exists = [](const std::string& p) {
    return p.empty() || std::ifstream(p).good();
  };
  for (const auto* p : {&train_src, &train_trg, &train_mt, &train_triple, &dev_src,
                        &dev_trg, &init_from, &resume_from})
    if (!exists(*p)) throw UsageError("config: referenced file does not exist: " + *p);
}

}  // namespace marknmt
