#include "marknmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "marknmt/rng.hpp"

namespace marknmt {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

bool all_finite(const std::vector<double>& v) {
  // A running sum goes non-finite iff some element is NaN/Inf.
  double acc = 0.0;
  for (double x : v) acc += x;
  return std::isfinite(acc);
}

[[noreturn]] void throw_shape(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                   " and " + shape_str(b));
}

void require(bool cond, const char* op, const Shape& a, const Shape& b) {
  if (!cond) throw_shape(op, a, b);
}

}  // namespace

ParamTensor::ParamTensor(std::string name_, Shape shape_)
    : name(std::move(name_)),
      shape(std::move(shape_)),
      value(std::make_shared<std::vector<double>>(numel(shape), 0.0)),
      grad(numel(shape), 0.0) {}

void ParamTensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
const std::vector<double>& Tensor::value() const { return *tape_->node(id_).value; }

const std::vector<double>& Tensor::grad() const {
  const auto& g = tape_->node(id_).grad;
  if (g.empty() && !value().empty())
    throw NumericError("Tensor::grad: backward() has not populated this node");
  return g;
}

double Tensor::scalar() const {
  const auto& v = value();
  if (v.size() != 1)
    throw ShapeError("Tensor::scalar: tensor has " + std::to_string(v.size()) +
                     " elements, expected 1");
  return v[0];
}

Tape::Tape(TapeOptions opts) : opts_(opts) { nodes_.reserve(256); }
Tape::~Tape() = default;

std::size_t Tape::size() const { return nodes_.size(); }
Tape::Node& Tape::node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
const Tape::Node& Tape::node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

int Tape::emit(Shape shape, std::vector<double> value, const char* op_name,
               std::function<void(Tape&, int)> backprop) {
  if (opts_.check_finite && !all_finite(value))
    throw NumericError(std::string(op_name) + ": non-finite value in output of shape " +
                       shape_str(shape));
  Node n;
  n.shape = std::move(shape);
  n.value = std::make_shared<const std::vector<double>>(std::move(value));
  if (opts_.training) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  bound_.push_back(nullptr);
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::input(Shape shape, std::vector<double> data) {
  if (numel(shape) != data.size())
    throw ShapeError("input: shape " + shape_str(shape) + " wants " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  if (!all_finite(data))
    throw NumericError("input: non-finite value in leaf of shape " + shape_str(shape));
  int id = emit(std::move(shape), std::move(data), "input", nullptr);
  return Tensor(this, id);
}

Tensor Tape::param(ParamTensor& p) {
  Node n;
  n.shape = p.shape;
  n.value = p.value;  // aliases the persistent storage
  nodes_.push_back(std::move(n));
  bound_.push_back(&p);
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

std::uint64_t Tape::next_dropout_key() {
  return rng::mix(opts_.dropout_seed, dropout_counter_++);
}

void Tape::backward(const Tensor& loss) {
  if (!opts_.training)
    throw NumericError("backward: tape was built in inference mode");
  if (loss.tape() != this)
    throw NumericError("backward: loss was recorded on a different tape");
  if (consumed_)
    throw NumericError("backward: tape already consumed; run a new forward pass");
  if (numel(node(loss.id()).shape) != 1)
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     shape_str(node(loss.id()).shape));
  consumed_ = true;

  for (auto& n : nodes_) n.grad.assign(n.value->size(), 0.0);
  nodes_[static_cast<std::size_t>(loss.id())].grad[0] = 1.0;

  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backprop) n.backprop(*this, id);
  }
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    if (!bound_[i]) continue;
    const auto& g = nodes_[i].grad;
    auto& pg = opts_.grad_sink
                   ? (*opts_.grad_sink)[static_cast<std::size_t>(bound_[i]->index)]
                   : bound_[i]->grad;
    for (std::size_t k = 0; k < g.size(); ++k) pg[k] += g[k];
  }
}

namespace ops {

namespace {

Tape& same_tape(Tensor a, Tensor b, const char* op) {
  if (a.tape() != b.tape())
    throw NumericError(std::string(op) + ": operands live on different tapes");
  return *a.tape();
}

// out += A(m x k) * B(k x n), row-major, ikj order so the inner loop streams.
void gemm_acc(std::vector<double>& out, const double* a, const double* b,
              std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// dA += dC * B^T with dC (m x n), B (k x n). B is transposed into scratch so
// the inner loop is a lane-independent axpy (dot-reduction loops do not
// vectorize under strict FP semantics).
void gemm_bt_acc(std::vector<double>& da, const double* dc, const double* b,
                 std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> bt(k * n);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  for (std::size_t i = 0; i < m; ++i) {
    const double* crow = dc + i * n;
    double* darow = da.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double cv = crow[j];
      const double* btrow = bt.data() + j * k;
      for (std::size_t p = 0; p < k; ++p) darow[p] += cv * btrow[p];
    }
  }
}

// dB += A^T * dC with A (m x k), dC (m x n).
void gemm_at_acc(std::vector<double>& db, const double* a, const double* dc,
                 std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* crow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* dbrow = db.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * crow[j];
    }
  }
}

void softmax_row(const double* in, double* out, std::size_t n) {
  double mx = in[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - mx);
    sum += out[i];
  }
  const double inv = 1.0 / sum;
  for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
}

}  // namespace

Tensor matmul(Tensor a, Tensor b) {
  Tape& t = same_tape(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0], "matmul", sa, sb);
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  std::vector<double> out(m * n, 0.0);
  gemm_acc(out, a.value().data(), b.value().data(), m, k, n);
  int ia = a.id(), ib = b.id();
  int id = t.emit({sa[0], sb[1]}, std::move(out), "matmul",
                  [ia, ib, m, k, n](Tape& tp, int self) {
                    const auto& dc = tp.node(self).grad;
                    gemm_bt_acc(tp.node(ia).grad, dc.data(),
                                tp.node(ib).value->data(), m, k, n);
                    gemm_at_acc(tp.node(ib).grad, tp.node(ia).value->data(),
                                dc.data(), m, k, n);
                  });
  return Tensor(&t, id);
}

Tensor bmm(Tensor a, Tensor b) {
  Tape& t = same_tape(a, b, "bmm");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[1],
          "bmm", sa, sb);
  const std::size_t bs = sa[0], m = sa[1], k = sa[2], n = sb[2];
  std::vector<double> out(bs * m * n, 0.0);
  for (std::size_t q = 0; q < bs; ++q) {
    std::vector<double> tmp(m * n, 0.0);
    gemm_acc(tmp, a.value().data() + q * m * k, b.value().data() + q * k * n, m, k, n);
    std::copy(tmp.begin(), tmp.end(), out.begin() + q * m * n);
  }
  int ia = a.id(), ib = b.id();
  int id = t.emit({sa[0], sa[1], sb[2]}, std::move(out), "bmm",
                  [ia, ib, bs, m, k, n](Tape& tp, int self) {
                    const auto& dc = tp.node(self).grad;
                    auto& da = tp.node(ia).grad;
                    auto& db = tp.node(ib).grad;
                    const double* av = tp.node(ia).value->data();
                    const double* bv = tp.node(ib).value->data();
                    for (std::size_t q = 0; q < bs; ++q) {
                      std::vector<double> tmp(m * k, 0.0);
                      gemm_bt_acc(tmp, dc.data() + q * m * n, bv + q * k * n, m, k, n);
                      for (std::size_t i = 0; i < m * k; ++i) da[q * m * k + i] += tmp[i];
                      std::vector<double> tmp2(k * n, 0.0);
                      gemm_at_acc(tmp2, av + q * m * k, dc.data() + q * m * n, m, k, n);
                      for (std::size_t i = 0; i < k * n; ++i) db[q * k * n + i] += tmp2[i];
                    }
                  });
  return Tensor(&t, id);
}

Tensor add(Tensor a, Tensor b) {
  Tape& t = same_tape(a, b, "add");
  require(a.shape() == b.shape(), "add", a.shape(), b.shape());
  std::vector<double> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  int ia = a.id(), ib = b.id();
  int id = t.emit(a.shape(), std::move(out), "add", [ia, ib](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    auto& da = tp.node(ia).grad;
    auto& db = tp.node(ib).grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      da[i] += g[i];
      db[i] += g[i];
    }
  });
  return Tensor(&t, id);
}

Tensor mul(Tensor a, Tensor b) {
  Tape& t = same_tape(a, b, "mul");
  require(a.shape() == b.shape(), "mul", a.shape(), b.shape());
  std::vector<double> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  int ia = a.id(), ib = b.id();
  int id = t.emit(a.shape(), std::move(out), "mul", [ia, ib](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& av = *tp.node(ia).value;
    const auto& bv2 = *tp.node(ib).value;
    auto& da = tp.node(ia).grad;
    auto& db = tp.node(ib).grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      da[i] += g[i] * bv2[i];
      db[i] += g[i] * av[i];
    }
  });
  return Tensor(&t, id);
}

Tensor add_rowvec(Tensor a, Tensor v) {
  Tape& t = same_tape(a, v, "add_rowvec");
  const Shape& sa = a.shape();
  const Shape& sv = v.shape();
  require(sa.size() == 2 && sv.size() == 1 && sa[1] == sv[0], "add_rowvec", sa, sv);
  const std::size_t m = sa[0], n = sa[1];
  std::vector<double> out(a.value());
  const auto& vv = v.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += vv[j];
  int ia = a.id(), iv = v.id();
  int id = t.emit(sa, std::move(out), "add_rowvec", [ia, iv, m, n](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    auto& da = tp.node(ia).grad;
    auto& dv = tp.node(iv).grad;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        da[i * n + j] += g[i * n + j];
        dv[j] += g[i * n + j];
      }
  });
  return Tensor(&t, id);
}

Tensor scale(Tensor a, double c) {
  Tape& t = *a.tape();
  std::vector<double> out(a.value());
  for (double& x : out) x *= c;
  int ia = a.id();
  int id = t.emit(a.shape(), std::move(out), "scale", [ia, c](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    auto& da = tp.node(ia).grad;
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * c;
  });
  return Tensor(&t, id);
}

Tensor relu(Tensor a) {
  Tape& t = *a.tape();
  std::vector<double> out(a.value());
  for (double& x : out) x = x > 0.0 ? x : 0.0;
  int ia = a.id();
  int id = t.emit(a.shape(), std::move(out), "relu", [ia](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& av = *tp.node(ia).value;
    auto& da = tp.node(ia).grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > 0.0) da[i] += g[i];
  });
  return Tensor(&t, id);
}

Tensor embedding_gather(Tensor table, const std::vector<int>& ids) {
  Tape& t = *table.tape();
  const Shape& st = table.shape();
  if (st.size() != 2)
    throw ShapeError("embedding_gather: table must be rank 2, got " + shape_str(st));
  const int v = st[0], d = st[1];
  for (int ix : ids)
    if (ix < 0 || ix >= v)
      throw DataError("embedding_gather: id " + std::to_string(ix) +
                      " out of range for table " + shape_str(st));
  std::vector<double> out(ids.size() * static_cast<std::size_t>(d));
  const auto& tv = table.value();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(tv.begin() + static_cast<std::size_t>(ids[i]) * d,
              tv.begin() + static_cast<std::size_t>(ids[i] + 1) * d,
              out.begin() + i * d);
  int it = table.id();
  std::vector<int> idcopy = ids;
  int id = t.emit({static_cast<int>(ids.size()), d}, std::move(out), "embedding_gather",
                  [it, idcopy, d](Tape& tp, int self) {
                    const auto& g = tp.node(self).grad;
                    auto& dt = tp.node(it).grad;
                    for (std::size_t i = 0; i < idcopy.size(); ++i)
                      for (int j = 0; j < d; ++j)
                        dt[static_cast<std::size_t>(idcopy[i]) * d + j] += g[i * d + j];
                  });
  return Tensor(&t, id);
}

Tensor layer_norm(Tensor x, Tensor gain, Tensor bias, double eps) {
  Tape& t = same_tape(x, gain, "layer_norm");
  same_tape(gain, bias, "layer_norm");
  const Shape& sx = x.shape();
  const int c = sx.back();
  require(gain.shape() == Shape{c} && bias.shape() == Shape{c}, "layer_norm", sx,
          gain.shape());
  const std::size_t rows = numel(sx) / static_cast<std::size_t>(c);
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= c;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (int j = 0; j < c; ++j) {
      const double h = (row[j] - mean) * inv;
      xhat[r * c + j] = h;
      out[r * c + j] = gv[j] * h + bv[j];
    }
  }
  int ix = x.id(), ig = gain.id(), ib = bias.id();
  int id = t.emit(sx, std::move(out), "layer_norm",
                  [ix, ig, ib, c, rows, xhat = std::move(xhat),
                   inv_std = std::move(inv_std)](Tape& tp, int self) {
                    const auto& g = tp.node(self).grad;
                    const auto& gv2 = *tp.node(ig).value;
                    auto& dx = tp.node(ix).grad;
                    auto& dg = tp.node(ig).grad;
                    auto& db = tp.node(ib).grad;
                    for (std::size_t r = 0; r < rows; ++r) {
                      const double* gr = g.data() + r * c;
                      const double* hr = xhat.data() + r * c;
                      double sum_dy = 0.0, sum_dyh = 0.0;
                      for (int j = 0; j < c; ++j) {
                        const double dy = gr[j] * gv2[j];
                        sum_dy += dy;
                        sum_dyh += dy * hr[j];
                        dg[j] += gr[j] * hr[j];
                        db[j] += gr[j];
                      }
                      const double inv = inv_std[r];
                      for (int j = 0; j < c; ++j) {
                        const double dy = gr[j] * gv2[j];
                        dx[r * c + j] +=
                            inv * (dy - sum_dy / c - hr[j] * sum_dyh / c);
                      }
                    }
                  });
  return Tensor(&t, id);
}

Tensor softmax(Tensor x) {
  Tape& t = *x.tape();
  const Shape& sx = x.shape();
  if (sx.empty() || sx.back() < 1)
    throw ShapeError("softmax: last axis must have size >= 1, got " + shape_str(sx));
  const int c = sx.back();
  const std::size_t rows = numel(sx) / static_cast<std::size_t>(c);
  std::vector<double> out(x.value().size());
  for (std::size_t r = 0; r < rows; ++r)
    softmax_row(x.value().data() + r * c, out.data() + r * c, c);
  int ix = x.id();
  int id = t.emit(sx, std::move(out), "softmax", [ix, c, rows](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& y = *tp.node(self).value;
    auto& dx = tp.node(ix).grad;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.data() + r * c;
      const double* gr = g.data() + r * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += yr[j] * gr[j];
      for (int j = 0; j < c; ++j) dx[r * c + j] += yr[j] * (gr[j] - dot);
    }
  });
  return Tensor(&t, id);
}

Tensor log_softmax(Tensor x) {
  Tape& t = *x.tape();
  const Shape& sx = x.shape();
  if (sx.empty() || sx.back() < 1)
    throw ShapeError("log_softmax: last axis must have size >= 1, got " + shape_str(sx));
  const int c = sx.back();
  const std::size_t rows = numel(sx) / static_cast<std::size_t>(c);
  const auto& xv = x.value();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    for (int j = 0; j < c; ++j) out[r * c + j] = row[j] - lse;
  }
  int ix = x.id();
  int id = t.emit(sx, std::move(out), "log_softmax", [ix, c, rows](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& y = *tp.node(self).value;  // log-probs
    auto& dx = tp.node(ix).grad;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.data() + r * c;
      const double* gr = g.data() + r * c;
      double gsum = 0.0;
      for (int j = 0; j < c; ++j) gsum += gr[j];
      for (int j = 0; j < c; ++j) dx[r * c + j] += gr[j] - std::exp(yr[j]) * gsum;
    }
  });
  return Tensor(&t, id);
}

Tensor dropout(Tensor x, double p) {
  Tape& t = *x.tape();
  if (p < 0.0 || p >= 1.0)
    throw NumericError("dropout: rate must be in [0,1), got " + std::to_string(p));
  if (!t.training() || p == 0.0) return x;
  const std::uint64_t key = t.next_dropout_key();
  const double scale_keep = 1.0 / (1.0 - p);
  std::vector<double> mask(x.value().size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = rng::uniform(rng::mix(key, i)) < p ? 0.0 : scale_keep;
  std::vector<double> out(x.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  int ix = x.id();
  int id = t.emit(x.shape(), std::move(out), "dropout",
                  [ix, mask = std::move(mask)](Tape& tp, int self) {
                    const auto& g = tp.node(self).grad;
                    auto& dx = tp.node(ix).grad;
                    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
                  });
  return Tensor(&t, id);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Tape& t = *parts[0].tape();
  const int cols = parts[0].shape().back();
  int rows = 0;
  for (const auto& p : parts) {
    require(p.shape().size() == 2 && p.shape()[1] == cols, "concat_rows",
            parts[0].shape(), p.shape());
    rows += p.shape()[0];
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  std::vector<int> ids;
  std::vector<int> row_counts;
  for (const auto& p : parts) {
    out.insert(out.end(), p.value().begin(), p.value().end());
    ids.push_back(p.id());
    row_counts.push_back(p.shape()[0]);
  }
  int id = t.emit({rows, cols}, std::move(out), "concat_rows",
                  [ids, row_counts, cols](Tape& tp, int self) {
                    const auto& g = tp.node(self).grad;
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      auto& dp = tp.node(ids[k]).grad;
                      const std::size_t n = static_cast<std::size_t>(row_counts[k]) * cols;
                      for (std::size_t i = 0; i < n; ++i) dp[i] += g[off + i];
                      off += n;
                    }
                  });
  return Tensor(&t, id);
}

Tensor reshape(Tensor x, Shape shape) {
  Tape& t = *x.tape();
  if (numel(shape) != x.value().size()) throw_shape("reshape", x.shape(), shape);
  std::vector<double> out(x.value());
  int ix = x.id();
  int id = t.emit(std::move(shape), std::move(out), "reshape", [ix](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    auto& dx = tp.node(ix).grad;
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
  return Tensor(&t, id);
}

Tensor transpose(Tensor x) {
  Tape& t = *x.tape();
  const Shape& s = x.shape();
  if (s.size() != 2) throw ShapeError("transpose: rank 2 required, got " + shape_str(s));
  const std::size_t m = s[0], n = s[1];
  const auto& xv = x.value();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  int ix = x.id();
  int id = t.emit({s[1], s[0]}, std::move(out), "transpose", [ix, m, n](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    auto& dx = tp.node(ix).grad;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += g[j * m + i];
  });
  return Tensor(&t, id);
}

Tensor transpose3(Tensor x, int p0, int p1, int p2) {
  Tape& t = *x.tape();
  const Shape& s = x.shape();
  if (s.size() != 3) throw ShapeError("transpose3: rank 3 required, got " + shape_str(s));
  int perm[3] = {p0, p1, p2};
  bool seen[3] = {false, false, false};
  for (int p : perm) {
    if (p < 0 || p > 2 || seen[p]) throw ShapeError("transpose3: bad permutation");
    seen[p] = true;
  }
  Shape so = {s[perm[0]], s[perm[1]], s[perm[2]]};
  const std::size_t d0 = s[0], d1 = s[1], d2 = s[2];
  const std::size_t in_stride[3] = {d1 * d2, d2, 1};
  const std::size_t o1 = static_cast<std::size_t>(so[1]);
  const std::size_t o2 = static_cast<std::size_t>(so[2]);
  const auto& xv = x.value();
  std::vector<double> out(xv.size());
  std::size_t src_idx[3];
  for (std::size_t a = 0; a < static_cast<std::size_t>(so[0]); ++a)
    for (std::size_t b = 0; b < o1; ++b)
      for (std::size_t c = 0; c < o2; ++c) {
        src_idx[perm[0]] = a;
        src_idx[perm[1]] = b;
        src_idx[perm[2]] = c;
        out[(a * o1 + b) * o2 + c] =
            xv[src_idx[0] * in_stride[0] + src_idx[1] * in_stride[1] + src_idx[2]];
      }
  int ix = x.id();
  int id = t.emit(so, std::move(out), "transpose3",
                  [ix, perm0 = perm[0], perm1 = perm[1], perm2 = perm[2], d0, d1, d2,
                   o1, o2](Tape& tp, int self) {
                    const auto& g = tp.node(self).grad;
                    auto& dx = tp.node(ix).grad;
                    const std::size_t in_stride2[3] = {d1 * d2, d2, 1};
                    std::size_t src[3];
                    const std::size_t o0 = g.size() / (o1 * o2);
                    for (std::size_t a = 0; a < o0; ++a)
                      for (std::size_t b = 0; b < o1; ++b)
                        for (std::size_t c = 0; c < o2; ++c) {
                          src[perm0] = a;
                          src[perm1] = b;
                          src[perm2] = c;
                          dx[src[0] * in_stride2[0] + src[1] * in_stride2[1] + src[2]] +=
                              g[(a * o1 + b) * o2 + c];
                        }
                  });
  return Tensor(&t, id);
}

Tensor slice_rows(Tensor x, int from, int to) {
  Tape& t = *x.tape();
  const Shape& s = x.shape();
  if (s.size() != 2 || from < 0 || to > s[0] || from >= to)
    throw ShapeError("slice_rows: bad range [" + std::to_string(from) + "," +
                     std::to_string(to) + ") for " + shape_str(s));
  const std::size_t n = s[1];
  std::vector<double> out(x.value().begin() + static_cast<std::size_t>(from) * n,
                          x.value().begin() + static_cast<std::size_t>(to) * n);
  int ix = x.id();
  int id = t.emit({to - from, s[1]}, std::move(out), "slice_rows",
                  [ix, from, n](Tape& tp, int self) {
                    const auto& g = tp.node(self).grad;
                    auto& dx = tp.node(ix).grad;
                    const std::size_t off = static_cast<std::size_t>(from) * n;
                    for (std::size_t i = 0; i < g.size(); ++i) dx[off + i] += g[i];
                  });
  return Tensor(&t, id);
}

Tensor gather_rows(Tensor x, const std::vector<int>& cols) {
  Tape& t = *x.tape();
  const Shape& s = x.shape();
  if (s.size() != 2 || static_cast<std::size_t>(s[0]) != cols.size())
    throw ShapeError("gather_rows: need one column index per row of " + shape_str(s) +
                     ", got " + std::to_string(cols.size()));
  const std::size_t n = s[1];
  for (int c : cols)
    if (c < 0 || c >= s[1])
      throw DataError("gather_rows: column " + std::to_string(c) + " out of range for " +
                      shape_str(s));
  std::vector<double> out(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i)
    out[i] = x.value()[i * n + static_cast<std::size_t>(cols[i])];
  int ix = x.id();
  std::vector<int> cc = cols;
  int id = t.emit({static_cast<int>(cols.size())}, std::move(out), "gather_rows",
                  [ix, cc, n](Tape& tp, int self) {
                    const auto& g = tp.node(self).grad;
                    auto& dx = tp.node(ix).grad;
                    for (std::size_t i = 0; i < cc.size(); ++i)
                      dx[i * n + static_cast<std::size_t>(cc[i])] += g[i];
                  });
  return Tensor(&t, id);
}

Tensor clamp_min(Tensor x, double floor) {
  Tape& t = *x.tape();
  std::vector<double> out(x.value());
  for (double& v : out) v = v < floor ? floor : v;
  int ix = x.id();
  int id = t.emit(x.shape(), std::move(out), "clamp_min",
                  [ix, floor](Tape& tp, int self) {
                    const auto& g = tp.node(self).grad;
                    const auto& xv = *tp.node(ix).value;
                    auto& dx = tp.node(ix).grad;
                    for (std::size_t i = 0; i < g.size(); ++i)
                      if (xv[i] > floor) dx[i] += g[i];
                  });
  return Tensor(&t, id);
}

Tensor sum(Tensor x) {
  Tape& t = *x.tape();
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  int ix = x.id();
  int id = t.emit({1}, {acc}, "sum", [ix](Tape& tp, int self) {
    const double g = tp.node(self).grad[0];
    auto& dx = tp.node(ix).grad;
    for (double& d : dx) d += g;
  });
  return Tensor(&t, id);
}

}  // namespace ops
}  // namespace marknmt
