#include "marknmt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "marknmt/error.hpp"
#include "marknmt/rng.hpp"

namespace marknmt {

void ModelConfig::validate() const {
  if (layers < 1 || heads < 1 || d_model < 1 || d_ff < 1 || max_len < 1)
    throw UsageError("model config: all size fields must be >= 1");
  if (d_model % heads != 0)
    throw UsageError("model config: d_model " + std::to_string(d_model) +
                     " not divisible by heads " + std::to_string(heads));
  if (dropout < 0.0 || dropout >= 1.0)
    throw UsageError("model config: dropout must be in [0,1)");
  if (src_vocab < Specials::count || trg_vocab < Specials::count)
    throw UsageError("model config: vocab sizes must cover the special tokens");
}

ModelParams::ModelParams(const ModelConfig& cfg) {
  const int d = cfg.d_model;
  // Count first so the vector never reallocates; at() hands out stable refs.
  const int per_layer = 2 + 8 + 2 + 4;            // norms + attention + norm + ffn
  const int dec_per_layer = per_layer + 2 + 8;    // + cross-attention block
  std::size_t count = 2 + (cfg.tied_embeddings ? 0 : 1) + 2 + 2 +
                      static_cast<std::size_t>(cfg.layers) * (per_layer + dec_per_layer);
  params_.reserve(count + 4);

  add("src_embed", {cfg.src_vocab, d});
  add("trg_embed", {cfg.trg_vocab, d});
  if (!cfg.tied_embeddings) add("out_proj", {d, cfg.trg_vocab});

  auto add_attention = [&](const std::string& p) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) add(p + "." + w, {d, d});
    for (const char* b : {"bq", "bk", "bv", "bo"}) add(p + "." + b, {d});
  };
  auto add_norm = [&](const std::string& p) {
    add(p + ".gain", {d});
    add(p + ".bias", {d});
  };
  auto add_ffn = [&](const std::string& p) {
    add(p + ".w1", {d, cfg.d_ff});
    add(p + ".b1", {cfg.d_ff});
    add(p + ".w2", {cfg.d_ff, d});
    add(p + ".b2", {d});
  };

  for (int l = 0; l < cfg.layers; ++l) {
    const std::string e = "enc." + std::to_string(l);
    add_norm(e + ".norm1");
    add_attention(e + ".attn");
    add_norm(e + ".norm2");
    add_ffn(e + ".ffn");
  }
  add_norm("enc.norm");
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string dn = "dec." + std::to_string(l);
    add_norm(dn + ".norm1");
    add_attention(dn + ".self");
    add_norm(dn + ".norm2");
    add_attention(dn + ".cross");
    add_norm(dn + ".norm3");
    add_ffn(dn + ".ffn");
  }
  add_norm("dec.norm");
}

ParamTensor& ModelParams::add(std::string name, Shape shape) {
  index_[name] = params_.size();
  params_.emplace_back(std::move(name), std::move(shape));
  params_.back().index = static_cast<int>(params_.size()) - 1;
  return params_.back();
}

ParamTensor& ModelParams::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw NumericError("unknown parameter '" + name + "'");
  return params_[it->second];
}

const ParamTensor& ModelParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw NumericError("unknown parameter '" + name + "'");
  return params_[it->second];
}

void ModelParams::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t ModelParams::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

TransformerModel::TransformerModel(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  params_ = ModelParams(cfg_);

  pos_table_.resize(static_cast<std::size_t>(cfg_.max_len) * cfg_.d_model);
  for (int pos = 0; pos < cfg_.max_len; ++pos)
    for (int i = 0; i < cfg_.d_model; ++i) {
      const double angle =
          pos / std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(cfg_.d_model));
      pos_table_[static_cast<std::size_t>(pos) * cfg_.d_model + i] =
          (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
}

void TransformerModel::init_params(std::uint64_t seed) {
  std::size_t pidx = 0;
  for (auto& p : params_.all()) {
    auto& v = *p.value;
    const std::uint64_t key = rng::mix(seed, 0x9a3aULL, pidx++);
    if (p.shape.size() == 2) {
      // Xavier for projections, 1/sqrt(d) for embeddings; biases stay zero
      // and layer-norm gains are set to one.
      const double std_dev =
          p.name.find("embed") != std::string::npos
              ? 1.0 / std::sqrt(static_cast<double>(cfg_.d_model))
              : std::sqrt(2.0 / static_cast<double>(p.shape[0] + p.shape[1]));
      for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = std_dev * rng::normal(rng::mix(key, i));
    } else if (p.name.ends_with(".gain")) {
      std::fill(v.begin(), v.end(), 1.0);
    } else {
      std::fill(v.begin(), v.end(), 0.0);
    }
  }
}

Tensor TransformerModel::positions(Tape& tape, int len) const {
  std::vector<double> vals(pos_table_.begin(),
                           pos_table_.begin() + static_cast<std::size_t>(len) * cfg_.d_model);
  return tape.input({len, cfg_.d_model}, std::move(vals));
}

Tensor TransformerModel::attention(Tape& tape, Tensor queries_in, Tensor keys_in,
                                   bool causal, const std::string& prefix) {
  const int d = cfg_.d_model;
  const int h = cfg_.heads;
  const int dh = d / h;
  const int tq = queries_in.shape()[0];
  const int tk = keys_in.shape()[0];

  auto proj = [&](Tensor x, const char* w, const char* b) {
    return ops::add_rowvec(ops::matmul(x, tape.param(params_.at(prefix + "." + w))),
                           tape.param(params_.at(prefix + "." + b)));
  };
  Tensor q = proj(queries_in, "wq", "bq");
  Tensor k = proj(keys_in, "wk", "bk");
  Tensor v = proj(keys_in, "wv", "bv");

  Tensor q3 = ops::transpose3(ops::reshape(q, {tq, h, dh}), 1, 0, 2);  // [h,tq,dh]
  Tensor k3 = ops::transpose3(ops::reshape(k, {tk, h, dh}), 1, 0, 2);
  Tensor v3 = ops::transpose3(ops::reshape(v, {tk, h, dh}), 1, 0, 2);

  Tensor scores = ops::scale(ops::bmm(q3, ops::transpose3(k3, 0, 2, 1)),
                             1.0 / std::sqrt(static_cast<double>(dh)));
  if (causal) {
    // Additive mask; -1e30 drives masked weights to exactly 0 after softmax
    // while keeping every stored value finite.
    std::vector<double> mask(static_cast<std::size_t>(h) * tq * tk, 0.0);
    for (int head = 0; head < h; ++head)
      for (int i = 0; i < tq; ++i)
        for (int j = i + 1; j < tk; ++j)
          mask[(static_cast<std::size_t>(head) * tq + i) * tk + j] = -1e30;
    scores = ops::add(scores, tape.input({h, tq, tk}, std::move(mask)));
  }
  Tensor probs = ops::dropout(ops::softmax(scores), cfg_.dropout);
  Tensor ctx = ops::bmm(probs, v3);  // [h,tq,dh]
  Tensor merged = ops::reshape(ops::transpose3(ctx, 1, 0, 2), {tq, d});
  return ops::add_rowvec(ops::matmul(merged, tape.param(params_.at(prefix + ".wo"))),
                         tape.param(params_.at(prefix + ".bo")));
}

Tensor TransformerModel::feed_forward(Tape& tape, Tensor x, const std::string& prefix) {
  Tensor h1 = ops::relu(
      ops::add_rowvec(ops::matmul(x, tape.param(params_.at(prefix + ".w1"))),
                      tape.param(params_.at(prefix + ".b1"))));
  return ops::add_rowvec(ops::matmul(h1, tape.param(params_.at(prefix + ".w2"))),
                         tape.param(params_.at(prefix + ".b2")));
}

Tensor TransformerModel::encode(Tape& tape, const TokenSeq& src) {
  if (src.empty()) throw DataError("encode: empty source sequence");
  if (static_cast<int>(src.size()) > cfg_.max_len)
    throw DataError("encode: source length " + std::to_string(src.size()) +
                    " exceeds max_len " + std::to_string(cfg_.max_len));
  const int d = cfg_.d_model;
  Tensor x = ops::scale(ops::embedding_gather(tape.param(params_.at("src_embed")), src),
                        std::sqrt(static_cast<double>(d)));
  x = ops::dropout(ops::add(x, positions(tape, static_cast<int>(src.size()))), cfg_.dropout);

  auto norm = [&](Tensor t, const std::string& name) {
    return ops::layer_norm(t, tape.param(params_.at(name + ".gain")),
                           tape.param(params_.at(name + ".bias")));
  };
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    Tensor a = attention(tape, norm(x, p + ".norm1"), norm(x, p + ".norm1"), false,
                         p + ".attn");
    x = ops::add(x, ops::dropout(a, cfg_.dropout));
    Tensor f = feed_forward(tape, norm(x, p + ".norm2"), p + ".ffn");
    x = ops::add(x, ops::dropout(f, cfg_.dropout));
  }
  return norm(x, "enc.norm");
}

Tensor TransformerModel::decode(Tape& tape, Tensor memory, const TokenSeq& trg_input) {
  if (trg_input.empty() || trg_input[0] != Specials::bos)
    throw DataError("decode: target input must begin with bos");
  if (static_cast<int>(trg_input.size()) > cfg_.max_len)
    throw DataError("decode: target length " + std::to_string(trg_input.size()) +
                    " exceeds max_len " + std::to_string(cfg_.max_len));
  const int d = cfg_.d_model;
  Tensor x = ops::scale(
      ops::embedding_gather(tape.param(params_.at("trg_embed")), trg_input),
      std::sqrt(static_cast<double>(d)));
  x = ops::dropout(ops::add(x, positions(tape, static_cast<int>(trg_input.size()))),
                   cfg_.dropout);

  auto norm = [&](Tensor t, const std::string& name) {
    return ops::layer_norm(t, tape.param(params_.at(name + ".gain")),
                           tape.param(params_.at(name + ".bias")));
  };
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    Tensor a =
        attention(tape, norm(x, p + ".norm1"), norm(x, p + ".norm1"), true, p + ".self");
    x = ops::add(x, ops::dropout(a, cfg_.dropout));
    Tensor c = attention(tape, norm(x, p + ".norm2"), memory, false, p + ".cross");
    x = ops::add(x, ops::dropout(c, cfg_.dropout));
    Tensor f = feed_forward(tape, norm(x, p + ".norm3"), p + ".ffn");
    x = ops::add(x, ops::dropout(f, cfg_.dropout));
  }
  return norm(x, "dec.norm");
}

Tensor TransformerModel::output_logits(Tape& tape, Tensor dec_out) {
  if (cfg_.tied_embeddings)
    return ops::matmul(dec_out, ops::transpose(tape.param(params_.at("trg_embed"))));
  return ops::matmul(dec_out, tape.param(params_.at("out_proj")));
}

Tensor TransformerModel::forward_logprobs(Tape& tape, const TokenSeq& src,
                                          const TokenSeq& trg_input) {
  Tensor memory = encode(tape, src);
  Tensor out = decode(tape, memory, trg_input);
  return ops::log_softmax(output_logits(tape, out));
}

EncodedSource TransformerModel::encode_source(const TokenSeq& src) {
  Tape tape;  // inference mode
  Tensor mem = encode(tape, src);
  return EncodedSource{mem.value(), static_cast<int>(src.size())};
}

std::vector<double> TransformerModel::next_token_logprobs(const EncodedSource& enc,
                                                          const TokenSeq& prefix_with_bos) {
  Tape tape;  // inference mode
  Tensor memory = tape.input({enc.len, cfg_.d_model}, enc.memory);
  Tensor out = decode(tape, memory, prefix_with_bos);
  Tensor last = ops::slice_rows(out, static_cast<int>(prefix_with_bos.size()) - 1,
                                static_cast<int>(prefix_with_bos.size()));
  Tensor logits = output_logits(tape, last);
  return ops::log_softmax(logits).value();
}

namespace {

int argmax_lowest(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
  return best;
}

// Value kernels for the incremental decoder. Loop orders mirror the tape ops
// so both paths agree to floating-point noise.

// y = x * W (+ bias afterwards), W row-major [d_in, n], p-ascending chains.
void matvec(const double* x, const double* w, const double* bias, double* y,
            std::size_t d_in, std::size_t n) {
  std::fill(y, y + n, 0.0);
  for (std::size_t p = 0; p < d_in; ++p) {
    const double xv = x[p];
    const double* wrow = w + p * n;
    for (std::size_t j = 0; j < n; ++j) y[j] += xv * wrow[j];
  }
  if (bias)
    for (std::size_t j = 0; j < n; ++j) y[j] += bias[j];
}

void layer_norm_row(const double* x, const double* gain, const double* bias,
                    double* out, int c, double eps = 1e-6) {
  double mean = 0.0;
  for (int j = 0; j < c; ++j) mean += x[j];
  mean /= c;
  double var = 0.0;
  for (int j = 0; j < c; ++j) var += (x[j] - mean) * (x[j] - mean);
  var /= c;
  const double inv = 1.0 / std::sqrt(var + eps);
  for (int j = 0; j < c; ++j) out[j] = gain[j] * ((x[j] - mean) * inv) + bias[j];
}

void softmax_inplace(double* x, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  const double inv = 1.0 / sum;
  for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

void log_softmax_inplace(double* x, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(x[i] - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < n; ++i) x[i] -= lse;
}

}  // namespace

TransformerModel::DecodeSession::DecodeSession(TransformerModel& model,
                                               const EncodedSource& enc)
    : model_(&model), enc_(&enc) {
  const int layers = model.cfg_.layers;
  const int d = model.cfg_.d_model;
  cross_k_.resize(layers);
  cross_v_.resize(layers);
  self_k_.resize(layers);
  self_v_.resize(layers);
  // cross-attention keys/values depend only on the encoder memory
  for (int l = 0; l < layers; ++l) {
    const std::string p = "dec." + std::to_string(l) + ".cross";
    const auto& wk = *model.params_.at(p + ".wk").value;
    const auto& bk = *model.params_.at(p + ".bk").value;
    const auto& wv = *model.params_.at(p + ".wv").value;
    const auto& bv = *model.params_.at(p + ".bv").value;
    cross_k_[l].resize(static_cast<std::size_t>(enc.len) * d);
    cross_v_[l].resize(static_cast<std::size_t>(enc.len) * d);
    for (int s = 0; s < enc.len; ++s) {
      matvec(enc.memory.data() + static_cast<std::size_t>(s) * d, wk.data(), bk.data(),
             cross_k_[l].data() + static_cast<std::size_t>(s) * d, d, d);
      matvec(enc.memory.data() + static_cast<std::size_t>(s) * d, wv.data(), bv.data(),
             cross_v_[l].data() + static_cast<std::size_t>(s) * d, d, d);
    }
  }
}

std::vector<double> TransformerModel::DecodeSession::step(int input_token) {
  const ModelConfig& cfg = model_->cfg_;
  const int d = cfg.d_model;
  const int heads = cfg.heads;
  const int dh = d / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const int pos = len_;
  if (pos >= cfg.max_len)
    throw DataError("decode: target length exceeds max_len " +
                    std::to_string(cfg.max_len));
  if (input_token < 0 || input_token >= cfg.trg_vocab)
    throw DataError("decode: token id out of range");

  auto& params = model_->params_;
  const auto& embed = *params.at("trg_embed").value;
  const double scale = std::sqrt(static_cast<double>(d));

  std::vector<double> x(d);
  for (int p = 0; p < d; ++p)
    x[p] = embed[static_cast<std::size_t>(input_token) * d + p] * scale;
  for (int p = 0; p < d; ++p)
    x[p] += model_->pos_table_[static_cast<std::size_t>(pos) * d + p];

  std::vector<double> normed(d), q(d), kv(d), merged(d), proj(d);
  std::vector<double> ffn_hidden(cfg.d_ff);
  std::vector<double> scores;

  auto attention_block = [&](const std::string& prefix, const double* keys,
                             const double* values, int n_keys) {
    const auto& wq = *params.at(prefix + ".wq").value;
    const auto& bq = *params.at(prefix + ".bq").value;
    matvec(normed.data(), wq.data(), bq.data(), q.data(), d, d);
    scores.assign(static_cast<std::size_t>(n_keys), 0.0);
    for (int h = 0; h < heads; ++h) {
      const double* qh = q.data() + h * dh;
      for (int j = 0; j < n_keys; ++j) {
        const double* kh = keys + static_cast<std::size_t>(j) * d + h * dh;
        double dot = 0.0;
        for (int p = 0; p < dh; ++p) dot += qh[p] * kh[p];
        scores[static_cast<std::size_t>(j)] = dot * inv_sqrt_dh;
      }
      softmax_inplace(scores.data(), static_cast<std::size_t>(n_keys));
      double* ctx = merged.data() + h * dh;
      std::fill(ctx, ctx + dh, 0.0);
      for (int j = 0; j < n_keys; ++j) {
        const double pj = scores[static_cast<std::size_t>(j)];
        const double* vh = values + static_cast<std::size_t>(j) * d + h * dh;
        for (int p = 0; p < dh; ++p) ctx[p] += pj * vh[p];
      }
    }
    const auto& wo = *params.at(prefix + ".wo").value;
    const auto& bo = *params.at(prefix + ".bo").value;
    matvec(merged.data(), wo.data(), bo.data(), proj.data(), d, d);
    for (int p = 0; p < d; ++p) x[static_cast<std::size_t>(p)] += proj[p];
  };

  for (int l = 0; l < cfg.layers; ++l) {
    const std::string dn = "dec." + std::to_string(l);

    // self-attention over the cached prefix plus this position
    layer_norm_row(x.data(), params.at(dn + ".norm1.gain").value->data(),
                   params.at(dn + ".norm1.bias").value->data(), normed.data(), d);
    auto& sk = self_k_[l];
    auto& sv = self_v_[l];
    sk.resize(static_cast<std::size_t>(pos + 1) * d);
    sv.resize(static_cast<std::size_t>(pos + 1) * d);
    matvec(normed.data(), params.at(dn + ".self.wk").value->data(),
           params.at(dn + ".self.bk").value->data(),
           sk.data() + static_cast<std::size_t>(pos) * d, d, d);
    matvec(normed.data(), params.at(dn + ".self.wv").value->data(),
           params.at(dn + ".self.bv").value->data(),
           sv.data() + static_cast<std::size_t>(pos) * d, d, d);
    attention_block(dn + ".self", sk.data(), sv.data(), pos + 1);

    layer_norm_row(x.data(), params.at(dn + ".norm2.gain").value->data(),
                   params.at(dn + ".norm2.bias").value->data(), normed.data(), d);
    attention_block(dn + ".cross", cross_k_[l].data(), cross_v_[l].data(), enc_->len);

    layer_norm_row(x.data(), params.at(dn + ".norm3.gain").value->data(),
                   params.at(dn + ".norm3.bias").value->data(), normed.data(), d);
    matvec(normed.data(), params.at(dn + ".ffn.w1").value->data(),
           params.at(dn + ".ffn.b1").value->data(), ffn_hidden.data(), d, cfg.d_ff);
    for (double& u : ffn_hidden) u = u > 0.0 ? u : 0.0;
    matvec(ffn_hidden.data(), params.at(dn + ".ffn.w2").value->data(),
           params.at(dn + ".ffn.b2").value->data(), proj.data(), cfg.d_ff, d);
    for (int p = 0; p < d; ++p) x[static_cast<std::size_t>(p)] += proj[p];
  }

  layer_norm_row(x.data(), params.at("dec.norm.gain").value->data(),
                 params.at("dec.norm.bias").value->data(), normed.data(), d);

  std::vector<double> logits(static_cast<std::size_t>(cfg.trg_vocab), 0.0);
  if (cfg.tied_embeddings) {
    for (int v = 0; v < cfg.trg_vocab; ++v) {
      const double* row = embed.data() + static_cast<std::size_t>(v) * d;
      double dot = 0.0;
      for (int p = 0; p < d; ++p) dot += normed[static_cast<std::size_t>(p)] * row[p];
      logits[static_cast<std::size_t>(v)] = dot;
    }
  } else {
    const auto& wout = *params.at("out_proj").value;
    matvec(normed.data(), wout.data(), nullptr, logits.data(), d, cfg.trg_vocab);
  }
  log_softmax_inplace(logits.data(), logits.size());
  ++len_;
  return logits;
}

TokenSeq TransformerModel::greedy_decode(const TokenSeq& src, int max_steps) {
  const int cap = std::min(max_steps, cfg_.max_len - 1);
  TokenSeq out;
  if (cap <= 0) return out;
  EncodedSource enc = encode_source(src);
  DecodeSession session(*this, enc);
  int input = Specials::bos;
  for (int step = 0; step < cap; ++step) {
    const int next = argmax_lowest(session.step(input));
    if (next == Specials::eos) break;
    out.push_back(next);
    input = next;
  }
  return out;
}

TokenSeq TransformerModel::beam_decode(const TokenSeq& src, const DecodeSettings& s) {
  return beam_search(src, s).tokens;
}

TransformerModel::BeamResult TransformerModel::beam_search(const TokenSeq& src,
                                                           const DecodeSettings& s) {
  if (s.beam < 1) throw UsageError("beam_decode: beam must be >= 1");
  const int cap = std::min(s.max_steps, cfg_.max_len - 1);
  if (cap <= 0) return {};

  EncodedSource enc = encode_source(src);

  struct Hyp {
    TokenSeq tokens;
    double logp = 0.0;
    int steps = 0;
    DecodeSession session;            // fed bos + tokens
    std::vector<double> next_logprobs;
  };
  using Result = BeamResult;

  std::vector<Hyp> active;
  {
    Hyp root{{}, 0.0, 0, DecodeSession(*this, enc), {}};
    root.next_logprobs = root.session.step(Specials::bos);
    active.push_back(std::move(root));
  }
  std::vector<Result> finished;

  for (int step = 0; step < cap && !active.empty(); ++step) {
    struct Candidate {
      std::size_t parent;
      int token;
      double logp;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(active.size() * static_cast<std::size_t>(s.beam));
    for (std::size_t h = 0; h < active.size(); ++h) {
      const auto& lp = active[h].next_logprobs;
      // Top `beam` token ids by log-prob, lowest index first on ties.
      std::vector<int> order(lp.size());
      for (std::size_t i = 0; i < lp.size(); ++i) order[i] = static_cast<int>(i);
      const std::size_t k = std::min<std::size_t>(s.beam, lp.size());
      std::partial_sort(order.begin(), order.begin() + k, order.end(),
                        [&lp](int a, int b) {
                          if (lp[a] != lp[b]) return lp[a] > lp[b];
                          return a < b;
                        });
      for (std::size_t i = 0; i < k; ++i)
        candidates.push_back({h, order[i], active[h].logp + lp[order[i]]});
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) {
                       return a.logp > b.logp;
                     });

    std::vector<Hyp> next_active;
    int kept = 0;
    for (const Candidate& c : candidates) {
      if (kept >= s.beam) break;
      const Hyp& parent = active[c.parent];
      if (c.token == Specials::eos) {
        finished.push_back({parent.tokens, c.logp, parent.steps + 1});
        ++kept;
        continue;
      }
      Hyp child{parent.tokens, c.logp, parent.steps + 1, parent.session.fork(), {}};
      child.tokens.push_back(c.token);
      if (step + 1 < cap) child.next_logprobs = child.session.step(c.token);
      next_active.push_back(std::move(child));
      ++kept;
    }
    active = std::move(next_active);
  }
  for (Hyp& hyp : active)  // truncated at cap
    finished.push_back({std::move(hyp.tokens), hyp.logp, hyp.steps});

  const Result* best = nullptr;
  double best_score = 0.0;
  for (const Result& hyp : finished) {
    const double score =
        hyp.logp / std::pow(static_cast<double>(std::max(1, hyp.steps)), s.length_norm);
    if (!best || score > best_score) {
      best = &hyp;
      best_score = score;
    }
  }
  return best ? *best : Result{};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::uint32_t kMagic = 0x544e4b4d;  // "MKNT"
constexpr std::uint32_t kVersion = 1;

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
void put(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw DataError("checkpoint: truncated file");
  return v;
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"layers", c.layers},   {"heads", c.heads},
          {"d_model", c.d_model}, {"d_ff", c.d_ff},
          {"max_len", c.max_len}, {"dropout", c.dropout},
          {"tied_embeddings", c.tied_embeddings},
          {"src_vocab", c.src_vocab}, {"trg_vocab", c.trg_vocab}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.d_model = j.at("d_model");
  c.d_ff = j.at("d_ff");
  c.max_len = j.at("max_len");
  c.dropout = j.at("dropout");
  c.tied_embeddings = j.at("tied_embeddings");
  c.src_vocab = j.at("src_vocab");
  c.trg_vocab = j.at("trg_vocab");
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const TransformerModel& model) {
  const ModelConfig& c = model.config();
  if (has_suffix(path, ".json")) {
    nlohmann::json j;
    j["schema_version"] = kVersion;
    j["config"] = config_to_json(c);
    auto& tensors = j["tensors"] = nlohmann::json::array();
    for (const auto& p : model.params().all())
      tensors.push_back({{"name", p.name}, {"shape", p.shape}, {"data", *p.value}});
    std::ofstream f(path);
    if (!f) throw DataError("checkpoint: cannot write " + path);
    f << j.dump();
    return;
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot write " + path);
  put(f, kMagic);
  put(f, kVersion);
  put<std::int32_t>(f, c.layers);
  put<std::int32_t>(f, c.heads);
  put<std::int32_t>(f, c.d_model);
  put<std::int32_t>(f, c.d_ff);
  put<std::int32_t>(f, c.max_len);
  put(f, c.dropout);
  put<std::uint8_t>(f, c.tied_embeddings ? 1 : 0);
  put<std::int32_t>(f, c.src_vocab);
  put<std::int32_t>(f, c.trg_vocab);
  put<std::uint32_t>(f, static_cast<std::uint32_t>(model.params().all().size()));
  for (const auto& p : model.params().all()) {
    put<std::uint32_t>(f, static_cast<std::uint32_t>(p.name.size()));
    f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(f, static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) put<std::int64_t>(f, d);
    f.write(reinterpret_cast<const char*>(p.value->data()),
            static_cast<std::streamsize>(p.value->size() * sizeof(double)));
  }
  if (!f) throw DataError("checkpoint: write failed for " + path);
}

TransformerModel load_checkpoint(const std::string& path) {
  if (has_suffix(path, ".json")) {
    std::ifstream f(path);
    if (!f) throw DataError("checkpoint: cannot read " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    if (j.at("schema_version").get<std::uint32_t>() != kVersion)
      throw DataError("checkpoint: unsupported schema version in " + path);
    TransformerModel model(config_from_json(j.at("config")));
    for (const auto& t : j.at("tensors")) {
      ParamTensor& p = model.params().at(t.at("name").get<std::string>());
      auto data = t.at("data").get<std::vector<double>>();
      if (data.size() != p.size())
        throw DataError("checkpoint: size mismatch for tensor '" + p.name + "'");
      *p.value = std::move(data);
    }
    return model;
  }

  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot read " + path);
  if (get<std::uint32_t>(f) != kMagic)
    throw DataError("checkpoint: bad magic in " + path);
  if (get<std::uint32_t>(f) != kVersion)
    throw DataError("checkpoint: unsupported version in " + path);
  ModelConfig c;
  c.layers = get<std::int32_t>(f);
  c.heads = get<std::int32_t>(f);
  c.d_model = get<std::int32_t>(f);
  c.d_ff = get<std::int32_t>(f);
  c.max_len = get<std::int32_t>(f);
  c.dropout = get<double>(f);
  c.tied_embeddings = get<std::uint8_t>(f) != 0;
  c.src_vocab = get<std::int32_t>(f);
  c.trg_vocab = get<std::int32_t>(f);
  TransformerModel model(c);
  const std::uint32_t n = get<std::uint32_t>(f);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t name_len = get<std::uint32_t>(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const std::uint32_t rank = get<std::uint32_t>(f);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(get<std::int64_t>(f));
    ParamTensor& p = model.params().at(name);
    if (p.shape != shape)
      throw DataError("checkpoint: shape mismatch for tensor '" + name + "'");
    f.read(reinterpret_cast<char*>(p.value->data()),
           static_cast<std::streamsize>(p.value->size() * sizeof(double)));
    if (!f) throw DataError("checkpoint: truncated tensor data in " + path);
  }
  return model;
}

}  // namespace marknmt
