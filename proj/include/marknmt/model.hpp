#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "marknmt/tensor.hpp"
#include "marknmt/tokenizer.hpp"

namespace marknmt {

struct ModelConfig {
  int layers = 2;
  int heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int max_len = 64;
  double dropout = 0.1;
  bool tied_embeddings = true;  // output projection shares the target embedding
  int src_vocab = 0;
  int trg_vocab = 0;

  void validate() const;
};

// All parameters as named dense tensors in a fixed schema order derived from
// the config; the order also fixes gradient-clipping and serialization order.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const ModelConfig& cfg);

  ParamTensor& at(const std::string& name);
  const ParamTensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<ParamTensor>& all() { return params_; }
  const std::vector<ParamTensor>& all() const { return params_; }

  void zero_grad();
  std::size_t total_size() const;

 private:
  ParamTensor& add(std::string name, Shape shape);

  std::vector<ParamTensor> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct DecodeSettings {
  int beam = 1;
  int max_steps = 0;        // cap on emitted tokens; 0 decodes nothing
  double length_norm = 1.0; // score = logprob / steps^length_norm
};

// Pre-computed encoder output for one source sentence, reusable across decode
// steps and across beam hypotheses.
struct EncodedSource {
  std::vector<double> memory;  // [len, d_model] row-major
  int len = 0;
};

class TransformerModel {
 public:
  explicit TransformerModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  void init_params(std::uint64_t seed);

  // Per-position log-distributions over the target vocabulary, shape
  // (|trg_input|, trg_vocab). trg_input must begin with bos; position t
  // conditions only on src and trg_input[0..t] (causal mask).
  Tensor forward_logprobs(Tape& tape, const TokenSeq& src, const TokenSeq& trg_input);

  EncodedSource encode_source(const TokenSeq& src);
  // Log-distribution of the next token given an encoded source and the
  // decoder prefix (bos + emitted tokens). Inference only; tape-based
  // reference path.
  std::vector<double> next_token_logprobs(const EncodedSource& enc,
                                          const TokenSeq& prefix_with_bos);

  // Incremental decoding session: per-layer key/value caches so each step
  // costs one position instead of the whole prefix. Matches the tape path to
  // floating-point noise; decode loops run on this engine.
  class DecodeSession {
   public:
    DecodeSession(TransformerModel& model, const EncodedSource& enc);
    // Feed the next decoder input token (bos first), get next-token logprobs.
    std::vector<double> step(int input_token);
    int length() const { return len_; }
    DecodeSession fork() const { return *this; }  // beam search branches

   private:
    TransformerModel* model_;
    const EncodedSource* enc_;
    std::vector<std::vector<double>> cross_k_, cross_v_;  // [layer][S*d]
    std::vector<std::vector<double>> self_k_, self_v_;    // [layer][t*d], grown
    int len_ = 0;
    friend class TransformerModel;
  };

  // Decoding; outputs exclude bos/eos. Read-only on parameters, safe to call
  // from several threads at once.
  TokenSeq greedy_decode(const TokenSeq& src, int max_steps);
  TokenSeq beam_decode(const TokenSeq& src, const DecodeSettings& settings);

  struct BeamResult {
    TokenSeq tokens;
    double logp = 0.0;  // joint log-probability, before length normalization
    int steps = 0;      // decode steps consumed, including a terminating eos
  };
  BeamResult beam_search(const TokenSeq& src, const DecodeSettings& settings);

 private:
  Tensor encode(Tape& tape, const TokenSeq& src);
  Tensor decode(Tape& tape, Tensor memory, const TokenSeq& trg_input);
  Tensor attention(Tape& tape, Tensor queries_in, Tensor keys_in, bool causal,
                   const std::string& prefix);
  Tensor feed_forward(Tape& tape, Tensor x, const std::string& prefix);
  Tensor positions(Tape& tape, int len) const;
  Tensor output_logits(Tape& tape, Tensor dec_out);

  ModelConfig cfg_;
  ModelParams params_;
  std::vector<double> pos_table_;  // [max_len, d_model] sinusoidal
};

// Checkpoint files: a little-endian binary format, plus a JSON text variant
// (selected by a ".json" suffix) carrying the same schema for debugging.
void save_checkpoint(const std::string& path, const TransformerModel& model);
TransformerModel load_checkpoint(const std::string& path);

}  // namespace marknmt
