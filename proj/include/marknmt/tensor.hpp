#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "marknmt/error.hpp"

namespace marknmt {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// A named dense parameter with a persistent gradient slot. Tape leaves alias
// the value storage (no copy per forward pass); backward() accumulates into
// `grad` until zero_grad().
struct ParamTensor {
  std::string name;
  Shape shape;
  std::shared_ptr<std::vector<double>> value;
  std::vector<double> grad;
  int index = -1;  // position in the owning schema; routes grad-sink writes

  ParamTensor() = default;
  ParamTensor(std::string name_, Shape shape_);

  std::size_t size() const { return value ? value->size() : 0; }
  void zero_grad();
};

class Tape;

// Lightweight handle to a node on a tape. Values are immutable once recorded;
// gradients are filled in by Tape::backward.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

  const Shape& shape() const;
  const std::vector<double>& value() const;
  const std::vector<double>& grad() const;
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

struct TapeOptions {
  bool training = false;        // false: no backward closures, dropout is identity
  std::uint64_t dropout_seed = 0;
  bool check_finite = true;     // verify op outputs stay finite
  // When set, backward() adds parameter gradients into (*grad_sink)[p.index]
  // instead of p.grad, so concurrent tapes never touch shared state.
  std::vector<std::vector<double>>* grad_sink = nullptr;
};

// Dynamic computation tape, rebuilt every forward pass. Operations are recorded
// in topological order by construction; backward() runs them in reverse exactly
// once. Single-threaded per tape.
class Tape {
 public:
  explicit Tape(TapeOptions opts = {});
  ~Tape();

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Constant leaf; data must be finite.
  Tensor input(Shape shape, std::vector<double> data);
  // Leaf aliasing a persistent parameter; backward() accumulates into p.grad.
  Tensor param(ParamTensor& p);

  // loss must be a scalar recorded on this tape; consumable once per forward.
  void backward(const Tensor& loss);

  const TapeOptions& options() const { return opts_; }
  bool training() const { return opts_.training; }
  std::size_t size() const;

  struct Node;
  Node& node(int id);
  const Node& node(int id) const;

  int emit(Shape shape, std::vector<double> value, const char* op_name,
           std::function<void(Tape&, int)> backprop);
  std::uint64_t next_dropout_key();

 private:
  TapeOptions opts_;
  std::vector<Node> nodes_;
  std::vector<ParamTensor*> bound_;  // per node; nullptr unless a param leaf
  bool consumed_ = false;
  std::uint64_t dropout_counter_ = 0;

  friend class Tensor;
};

struct Tape::Node {
  Shape shape;
  std::shared_ptr<const std::vector<double>> value;
  std::vector<double> grad;  // allocated lazily by backward
  std::function<void(Tape&, int)> backprop;
};

namespace ops {

// Every op validates operand shapes (ShapeError with op name and both shapes)
// and, when the tape asks for it, that its output is finite (NumericError).

Tensor matmul(Tensor a, Tensor b);                   // [m,k] x [k,n] -> [m,n]
Tensor bmm(Tensor a, Tensor b);                      // [b,m,k] x [b,k,n] -> [b,m,n]
Tensor add(Tensor a, Tensor b);                      // same shape
Tensor mul(Tensor a, Tensor b);                      // same shape
Tensor add_rowvec(Tensor a, Tensor v);               // [m,n] + [n] per row
Tensor scale(Tensor a, double c);
Tensor relu(Tensor a);
Tensor embedding_gather(Tensor table, const std::vector<int>& ids);  // [V,d] -> [T,d]
Tensor layer_norm(Tensor x, Tensor gain, Tensor bias, double eps = 1e-6);
Tensor softmax(Tensor x);        // over last axis, rank 1..3
Tensor log_softmax(Tensor x);    // over last axis, rank 1..2
Tensor dropout(Tensor x, double p);  // train-mode only; identity on inference tapes
Tensor concat_rows(const std::vector<Tensor>& parts);  // along axis 0, rank 2
Tensor reshape(Tensor x, Shape shape);
Tensor transpose(Tensor x);                          // rank 2
Tensor transpose3(Tensor x, int p0, int p1, int p2); // rank 3 permutation
Tensor slice_rows(Tensor x, int from, int to);       // rank 2 row range
Tensor gather_rows(Tensor x, const std::vector<int>& cols);  // x[t, cols[t]] -> [T]
Tensor clamp_min(Tensor x, double floor);            // max(x, floor); grad only where x > floor
Tensor sum(Tensor x);                                // all elements -> scalar [1]

}  // namespace ops
}  // namespace marknmt
