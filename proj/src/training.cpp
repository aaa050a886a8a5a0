#include "marknmt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "marknmt/data.hpp"
#include "marknmt/error.hpp"
#include "marknmt/rng.hpp"

namespace marknmt {

void OptimState::init_like(const ModelParams& params) {
  m.clear();
  v.clear();
  for (const auto& p : params.all()) {
    m.emplace_back(p.size(), 0.0);
    v.emplace_back(p.size(), 0.0);
  }
  step = 0;
  next_epoch = 0;
  best_dev_ter = -1.0;
}

std::vector<TokenSeq> translate_corpus(TransformerModel& model,
                                       const std::vector<TokenSeq>& sources,
                                       const DecodeSettings& settings, int threads) {
  std::vector<TokenSeq> hyps(sources.size());
  auto work = [&](std::size_t first) {
    for (std::size_t i = first; i < sources.size(); i += static_cast<std::size_t>(threads)) {
      hyps[i] = settings.beam == 1 ? model.greedy_decode(sources[i], settings.max_steps)
                                   : model.beam_decode(sources[i], settings);
    }
  };
  if (threads <= 1 || sources.size() < 2) {
    work(0);
    return hyps;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(work, static_cast<std::size_t>(t));
  for (auto& th : pool) th.join();
  return hyps;
}

namespace {

using Clock = std::chrono::steady_clock;

struct Unit {
  std::vector<BatchRow> rows;
  int tokens = 0;
};

std::vector<CombinedBatch> build_batches(std::vector<Unit> units, int batch_tokens,
                                         std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(units.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&units](std::size_t a, std::size_t b) {
    return units[a].tokens < units[b].tokens;
  });

  std::vector<CombinedBatch> batches;
  CombinedBatch cur;
  int cur_tokens = 0;
  for (std::size_t idx : order) {
    Unit& u = units[idx];
    if (u.tokens > batch_tokens)
      throw UsageError("batch_tokens " + std::to_string(batch_tokens) +
                       " is smaller than a sentence of " + std::to_string(u.tokens) +
                       " target tokens; raise batch_tokens");
    if (cur_tokens > 0 && cur_tokens + u.tokens > batch_tokens) {
      batches.push_back(std::move(cur));
      cur = CombinedBatch{};
      cur_tokens = 0;
    }
    for (auto& r : u.rows) cur.rows.push_back(std::move(r));
    cur_tokens += u.tokens;
  }
  if (!cur.rows.empty()) batches.push_back(std::move(cur));

  // Length-sorted bucketing, shuffled bucket order per epoch.
  rng::Stream stream(rng::mix(seed, 0xba7cULL, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = batches.size(); i > 1; --i)
    std::swap(batches[i - 1], batches[stream.next_below(i)]);
  return batches;
}

class Adam {
 public:
  Adam(const ExperimentConfig& cfg, OptimState& state) : cfg_(cfg), state_(state) {}

  void step(ModelParams& params) {
    ++state_.step;
    if (cfg_.clip_norm > 0.0 && std::isfinite(cfg_.clip_norm)) {
      double sq = 0.0;
      for (const auto& p : params.all())
        for (double g : p.grad) sq += g * g;
      const double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) {
        const double s = cfg_.clip_norm / norm;
        for (auto& p : params.all())
          for (double& g : p.grad) g *= s;
      }
    }
    const double t = static_cast<double>(state_.step);
    const double corr1 = 1.0 - std::pow(cfg_.beta1, t);
    const double corr2 = 1.0 - std::pow(cfg_.beta2, t);
    auto& ps = params.all();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& val = *ps[i].value;
      auto& g = ps[i].grad;
      auto& m = state_.m[i];
      auto& v = state_.v[i];
      for (std::size_t k = 0; k < val.size(); ++k) {
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
        val[k] -= cfg_.lr * (m[k] / corr1) / (std::sqrt(v[k] / corr2) + cfg_.adam_eps);
      }
    }
  }

 private:
  const ExperimentConfig& cfg_;
  OptimState& state_;
};

struct PreparedData {
  std::vector<TokenSeq> src;
  std::vector<TokenSeq> trg;  // training targets: references, postedits, or MT outputs
  std::vector<std::string> dev_src_raw;
  std::vector<std::string> dev_trg_raw;
  std::vector<TokenSeq> dev_src;
};

PreparedData prepare_data(const ExperimentConfig& cfg, const BpeModel& bpe,
                          int max_len) {
  std::vector<std::string> src_lines, trg_lines;
  if (!cfg.train_triple.empty()) {
    TripleCorpus triple = load_triple(cfg.train_triple);
    src_lines = triple.src;
    trg_lines = cfg.mode == TrainMode::distill ? triple.mt : triple.postedit;
  } else {
    ParallelCorpus par = load_parallel(
        cfg.train_src, cfg.mode == TrainMode::distill ? cfg.train_mt : cfg.train_trg);
    src_lines = par.src;
    trg_lines = par.trg;
  }

  PreparedData data;
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    TokenSeq s = bpe.apply(src_lines[i]);
    TokenSeq t = bpe.apply(trg_lines[i]);
    if (static_cast<int>(s.size()) > max_len ||
        static_cast<int>(t.size()) + 1 > max_len)
      throw DataError("training line " + std::to_string(i + 1) +
                      " exceeds max_len " + std::to_string(max_len) +
                      " after subword tokenization");
    data.src.push_back(std::move(s));
    data.trg.push_back(std::move(t));
  }
  if (!cfg.dev_src.empty()) {
    ParallelCorpus dev = load_parallel(cfg.dev_src, cfg.dev_trg);
    data.dev_src_raw = dev.src;
    data.dev_trg_raw = dev.trg;
    for (const auto& line : dev.src) {
      TokenSeq s = bpe.apply(line);
      if (static_cast<int>(s.size()) > max_len)
        throw DataError("dev sentence exceeds max_len after subword tokenization");
      data.dev_src.push_back(std::move(s));
    }
  }
  return data;
}

int locate_bad_row(TransformerModel& model, const CombinedBatch& batch,
                   const LossConfig& loss_cfg) {
  for (std::size_t r = 0; r < batch.rows.size(); ++r) {
    try {
      Tape tape;
      CombinedBatch one;
      one.rows.push_back(batch.rows[r]);
      LossConfig cfg = loss_cfg;
      cfg.alpha = batch.rows[r].kind == RowKind::pe ? 1.0 : 0.0;
      (void)loss_combined(tape, model, one, cfg);
    } catch (const NumericError&) {
      return static_cast<int>(r);
    }
  }
  return -1;
}

// Forward/backward for one batch, fanned out over worker tapes with private
// gradient buffers; the reduction runs in fixed worker order, so results are
// reproducible for a given thread count.
class BatchGradients {
 public:
  BatchGradients(TransformerModel& model, int workers)
      : model_(model), workers_(std::max(1, workers)) {
    sinks_.resize(static_cast<std::size_t>(workers_));
    for (auto& sink : sinks_) {
      sink.reserve(model.params().all().size());
      for (const auto& p : model.params().all())
        sink.emplace_back(p.size(), 0.0);
    }
  }

  // Returns the batch loss value; gradients land in model.params().grad.
  double run(const CombinedBatch& batch, const LossConfig& cfg, std::uint64_t step_key) {
    const auto& rows = batch.rows;
    const int w = std::min<int>(workers_, static_cast<int>(rows.size()));
    const BatchDenominators denoms = batch_denominators(rows, cfg);

    std::vector<double> losses(static_cast<std::size_t>(w), 0.0);
    std::vector<std::string> errors(static_cast<std::size_t>(w));

    auto work = [&](int worker) {
      const std::size_t first = rows.size() * worker / w;
      const std::size_t last = rows.size() * (worker + 1) / w;
      auto& sink = sinks_[static_cast<std::size_t>(worker)];
      for (auto& g : sink) std::fill(g.begin(), g.end(), 0.0);
      if (first == last) return;
      try {
        TapeOptions opts;
        opts.training = true;
        opts.dropout_seed = rng::mix(step_key, static_cast<std::uint64_t>(worker));
        opts.grad_sink = &sink;
        Tape tape(opts);
        std::vector<BatchRow> slice(rows.begin() + first, rows.begin() + last);
        Tensor loss = loss_combined_partial(tape, model_, slice, cfg, denoms);
        losses[static_cast<std::size_t>(worker)] = loss.scalar();
        if (!std::isfinite(losses[static_cast<std::size_t>(worker)]))
          throw NumericError("loss is not finite");
        tape.backward(loss);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(worker)] = e.what();
      }
    };

    if (w == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (int t = 1; t < w; ++t) pool.emplace_back(work, t);
      work(0);
      for (auto& th : pool) th.join();
    }
    for (int t = 0; t < w; ++t)
      if (!errors[static_cast<std::size_t>(t)].empty())
        throw NumericError(errors[static_cast<std::size_t>(t)]);

    model_.params().zero_grad();
    auto& params = model_.params().all();
    double total = 0.0;
    for (int t = 0; t < w; ++t) {
      total += losses[static_cast<std::size_t>(t)];
      const auto& sink = sinks_[static_cast<std::size_t>(t)];
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& dst = params[i].grad;
        const auto& src = sink[i];
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
    return total;
  }

 private:
  TransformerModel& model_;
  int workers_;
  std::vector<std::vector<std::vector<double>>> sinks_;
};

}  // namespace

std::string metrics_to_json(const EpochMetrics& m) {
  nlohmann::json j;
  j["epoch"] = m.epoch;
  j["train_loss"] = m.train_loss;
  j["dev_ter"] = m.dev_ter;
  j["dev_bleu"] = m.dev_bleu;
  j["wall_time"] = m.wall_time;
  return j.dump();
}

void save_train_state(const std::string& ckpt_path, const TransformerModel& model,
                      const OptimState& opt) {
  save_checkpoint(ckpt_path, model);
  std::ofstream f(ckpt_path + ".state", std::ios::binary);
  if (!f) throw DataError("cannot write train state " + ckpt_path + ".state");
  const std::uint32_t magic = 0x54534b4d;  // "MKST"
  const std::uint32_t version = 1;
  f.write(reinterpret_cast<const char*>(&magic), 4);
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&opt.step), 8);
  f.write(reinterpret_cast<const char*>(&opt.next_epoch), 4);
  f.write(reinterpret_cast<const char*>(&opt.best_dev_ter), 8);
  const std::uint32_t n = static_cast<std::uint32_t>(opt.m.size());
  f.write(reinterpret_cast<const char*>(&n), 4);
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    f.write(reinterpret_cast<const char*>(opt.m[i].data()),
            static_cast<std::streamsize>(opt.m[i].size() * sizeof(double)));
    f.write(reinterpret_cast<const char*>(opt.v[i].data()),
            static_cast<std::streamsize>(opt.v[i].size() * sizeof(double)));
  }
  if (!f) throw DataError("train state write failed: " + ckpt_path + ".state");
}

OptimState load_train_state(const std::string& ckpt_path, const TransformerModel& model) {
  std::ifstream f(ckpt_path + ".state", std::ios::binary);
  if (!f) throw DataError("cannot read train state " + ckpt_path + ".state");
  std::uint32_t magic = 0, version = 0;
  f.read(reinterpret_cast<char*>(&magic), 4);
  f.read(reinterpret_cast<char*>(&version), 4);
  if (magic != 0x54534b4d || version != 1)
    throw DataError("bad train state file " + ckpt_path + ".state");
  OptimState opt;
  opt.init_like(model.params());
  f.read(reinterpret_cast<char*>(&opt.step), 8);
  f.read(reinterpret_cast<char*>(&opt.next_epoch), 4);
  f.read(reinterpret_cast<char*>(&opt.best_dev_ter), 8);
  std::uint32_t n = 0;
  f.read(reinterpret_cast<char*>(&n), 4);
  if (n != opt.m.size())
    throw DataError("train state does not match the model's parameter schema");
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    f.read(reinterpret_cast<char*>(opt.m[i].data()),
           static_cast<std::streamsize>(opt.m[i].size() * sizeof(double)));
    f.read(reinterpret_cast<char*>(opt.v[i].data()),
           static_cast<std::streamsize>(opt.v[i].size() * sizeof(double)));
  }
  if (!f) throw DataError("truncated train state " + ckpt_path + ".state");
  return opt;
}

TrainOutcome run_training(const ExperimentConfig& cfg) {
  cfg.validate();

  // Tokenizer: load if present, otherwise learn from the training text (both
  // sides jointly) and save for downstream commands.
  const std::string vocab_path =
      cfg.bpe_vocab.empty() ? cfg.bpe_model + ".vocab" : cfg.bpe_vocab;
  std::shared_ptr<BpeModel> bpe;
  if (std::ifstream(cfg.bpe_model).good()) {
    bpe = std::make_shared<BpeModel>(BpeModel::load(cfg.bpe_model, vocab_path));
  } else {
    std::vector<std::string> lines;
    if (!cfg.train_triple.empty()) {
      TripleCorpus t = load_triple(cfg.train_triple);
      lines.insert(lines.end(), t.src.begin(), t.src.end());
      lines.insert(lines.end(), t.mt.begin(), t.mt.end());
      lines.insert(lines.end(), t.postedit.begin(), t.postedit.end());
    } else {
      ParallelCorpus p = load_parallel(cfg.train_src, cfg.train_trg);
      lines.insert(lines.end(), p.src.begin(), p.src.end());
      lines.insert(lines.end(), p.trg.begin(), p.trg.end());
      if (!cfg.train_mt.empty())
        for (const auto& l : read_lines(cfg.train_mt)) lines.push_back(l);
    }
    bpe = std::make_shared<BpeModel>(BpeModel::learn(lines, cfg.bpe_merges));
    bpe->save(cfg.bpe_model, vocab_path);
  }

  // Model: resume > fine-tune init > fresh.
  std::shared_ptr<TransformerModel> model;
  OptimState opt;
  bool resumed = false;
  if (!cfg.resume_from.empty()) {
    model = std::make_shared<TransformerModel>(load_checkpoint(cfg.resume_from));
    opt = load_train_state(cfg.resume_from, *model);
    resumed = true;
  } else if (!cfg.init_from.empty()) {
    model = std::make_shared<TransformerModel>(load_checkpoint(cfg.init_from));
    opt.init_like(model->params());
  } else {
    ModelConfig mc = cfg.model;
    mc.src_vocab = bpe->vocab_size();
    mc.trg_vocab = bpe->vocab_size();
    model = std::make_shared<TransformerModel>(mc);
    model->init_params(cfg.seed);
    opt.init_like(model->params());
  }
  if (model->config().src_vocab != bpe->vocab_size())
    throw DataError("checkpoint vocab size " + std::to_string(model->config().src_vocab) +
                    " does not match the BPE model (" +
                    std::to_string(bpe->vocab_size()) + ")");

  const int max_len = model->config().max_len;
  PreparedData data = prepare_data(cfg, *bpe, max_len);

  DecodeSettings train_decode{cfg.train_beam,
                              cfg.decode_max_steps > 0 ? cfg.decode_max_steps : max_len - 1,
                              cfg.length_norm};
  DecodeSettings eval_decode{cfg.eval_beam,
                             cfg.decode_max_steps > 0 ? cfg.decode_max_steps : max_len - 1,
                             cfg.length_norm};

  std::ofstream metrics_file;
  if (!cfg.metrics_out.empty()) {
    metrics_file.open(cfg.metrics_out, resumed ? std::ios::app : std::ios::trunc);
    if (!metrics_file) throw DataError("cannot write metrics to " + cfg.metrics_out);
  }

  TrainOutcome out;
  out.model = model;
  out.bpe = bpe;

  Adam adam(cfg, opt);
  const double alpha = cfg.mode == TrainMode::combined ? cfg.loss.alpha : 1.0;
  LossConfig loss_cfg = cfg.loss;
  loss_cfg.alpha = alpha;

  std::vector<TokenSeq> frozen_hyps;  // reused when frozen_markings is set
  bool steps_exhausted = false;

  for (int epoch = opt.next_epoch; epoch < cfg.epochs && !steps_exhausted; ++epoch) {
    const auto epoch_start = Clock::now();

    // Build this epoch's units. In combined mode the translation pass runs
    // before any update of the epoch, so epoch 0 sees the starting model.
    std::vector<Unit> units;
    long long pe_rows = 0, marked_rows = 0;
    if (cfg.mode == TrainMode::combined) {
      std::vector<TokenSeq> hyps;
      if (cfg.frozen_markings && !frozen_hyps.empty()) {
        hyps = frozen_hyps;
      } else {
        hyps = translate_corpus(*model, data.src, train_decode, cfg.threads);
        if (cfg.frozen_markings) frozen_hyps = hyps;
      }
      std::vector<std::vector<std::uint8_t>> epoch_marks;
      for (std::size_t i = 0; i < data.src.size(); ++i) {
        MarkedHypothesis marked = mark_with_eos(hyps[i], data.trg[i], loss_cfg);
        if (cfg.capture_artifacts) epoch_marks.push_back(marked.marks);

        MarkedPair pair{data.src[i], std::move(marked), data.trg[i]};
        CombinedBatch pair_rows = build_combined_batch({pair}, loss_cfg);
        Unit u;
        for (auto& row : pair_rows.rows) {
          // A side with coefficient exactly 0 is dropped here as well, so the
          // alpha endpoints batch identically to single-objective training.
          if (row.kind == RowKind::marked && alpha == 1.0) continue;
          if (row.kind == RowKind::pe && alpha == 0.0) continue;
          u.tokens += static_cast<int>(row.target.size());
          (row.kind == RowKind::pe ? pe_rows : marked_rows) += 1;
          u.rows.push_back(std::move(row));
        }
        units.push_back(std::move(u));
      }
      if (cfg.capture_artifacts) {
        out.hypotheses_by_epoch.push_back(std::move(hyps));
        out.markings_by_epoch.push_back(std::move(epoch_marks));
      }
    } else {
      for (std::size_t i = 0; i < data.src.size(); ++i) {
        BatchRow row;
        row.src = data.src[i];
        row.target = data.trg[i];
        row.target.push_back(Specials::eos);
        row.weights.assign(row.target.size(), 1.0);
        row.kind = RowKind::pe;
        Unit u;
        u.tokens = static_cast<int>(row.target.size());
        u.rows.push_back(std::move(row));
        units.push_back(std::move(u));
        ++pe_rows;
      }
    }

    auto batches = build_batches(std::move(units), cfg.batch_tokens, cfg.seed, epoch);

    BatchGradients grads(*model, cfg.threads);
    double loss_sum = 0.0;
    long long batch_count = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      double loss_value = 0.0;
      try {
        loss_value = grads.run(batches[b], loss_cfg,
                               rng::mix(cfg.seed, 0xd40bULL,
                                        static_cast<std::uint64_t>(opt.step)));
      } catch (const NumericError& e) {
        const int row = locate_bad_row(*model, batches[b], loss_cfg);
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(b) + ", row " +
                           (row < 0 ? std::string("?") : std::to_string(row)) + ": " +
                           e.what());
      }
      adam.step(model->params());
      loss_sum += loss_value;
      ++batch_count;
      if (cfg.max_steps > 0 && opt.step >= cfg.max_steps) {
        steps_exhausted = true;
        break;
      }
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = batch_count > 0 ? loss_sum / static_cast<double>(batch_count) : 0.0;
    if (!data.dev_src.empty()) {
      auto dev_hyps = translate_corpus(*model, data.dev_src, eval_decode, cfg.threads);
      std::vector<std::string> detok;
      detok.reserve(dev_hyps.size());
      for (const auto& h : dev_hyps) detok.push_back(bpe->detokenize(h));
      em.dev_ter = ter_corpus(detok, data.dev_trg_raw).corpus_score * 100.0;
      em.dev_bleu = bleu(detok, data.dev_trg_raw);
      if (!cfg.best_ckpt_out.empty() &&
          (opt.best_dev_ter < 0.0 || em.dev_ter < opt.best_dev_ter)) {
        opt.best_dev_ter = em.dev_ter;
        save_checkpoint(cfg.best_ckpt_out, *model);
      }
    }
    em.wall_time =
        std::chrono::duration<double>(Clock::now() - epoch_start).count();
    out.metrics.push_back(em);
    out.rows_per_epoch.push_back({pe_rows, marked_rows});
    if (metrics_file) metrics_file << metrics_to_json(em) << "\n" << std::flush;

    opt.next_epoch = epoch + 1;
    if (!cfg.ckpt_out.empty()) save_train_state(cfg.ckpt_out, *model, opt);
  }

  // A run with zero epochs still leaves a usable checkpoint behind.
  if (out.metrics.empty() && !cfg.ckpt_out.empty())
    save_train_state(cfg.ckpt_out, *model, opt);
  return out;
}

}  // namespace marknmt
