#pragma once

// Minimal reverse-mode autodiff over dense row-major double tensors.
// A Tape records primitive applications; backward() replays them in
// reverse. One tape per training step, confined to one thread.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mixlid {

class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// Value-semantic handle to a shared buffer. Shape is fixed at creation;
// grad is allocated lazily on first accumulation.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : d_(std::make_shared<Data>()) {
    if (shape_numel(shape) != values.size())
      throw TensorError("tensor: shape " + shape_str(shape) + " does not match buffer of " +
                        std::to_string(values.size()));
    d_->shape = std::move(shape);
    d_->values = std::move(values);
    d_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape), value);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t size() const { return d_->values.size(); }
  std::size_t ndim() const { return d_->shape.size(); }

  // 2-D accessors; a 1-D tensor of length n is treated as (1, n).
  std::size_t rows() const { return d_->shape.size() >= 2 ? d_->shape[0] : 1; }
  std::size_t cols() const {
    return d_->shape.size() >= 2 ? d_->values.size() / d_->shape[0] : d_->values.size();
  }

  std::vector<double>& values() { return d_->values; }
  const std::vector<double>& values() const { return d_->values; }
  double* data() { return d_->values.data(); }
  const double* data() const { return d_->values.data(); }
  double item() const {
    if (size() != 1) throw TensorError("item(): tensor has " + std::to_string(size()) + " elements");
    return d_->values[0];
  }
  double at(std::size_t i) const { return d_->values[i]; }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  bool has_grad() const { return d_ && !d_->grad.empty(); }
  std::vector<double>& grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    return d_->grad;
  }
  const std::vector<double>& grad() const { return d_->grad; }
  void zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
  }

  // Identity (buffer sharing), not value equality.
  bool is(const Tensor& other) const { return d_ == other.d_; }
  const void* id() const { return d_.get(); }

  Tensor clone() const {
    Tensor t(d_->shape, d_->values, d_->requires_grad);
    t.d_->grad = d_->grad;
    return t;
  }

 private:
  struct Data {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;
  };
  std::shared_ptr<Data> d_;
};

// ---------------------------------------------------------------------------
// Tape

class Tape {
 public:
  struct Entry {
    const char* op;
    std::function<void()> backprop;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* op, std::function<void()> backprop) {
    entries_.push_back(Entry{op, std::move(backprop)});
  }

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  void reset() {
    entries_.clear();
    consumed_ = false;
  }

  // Runs all recorded backward closures in reverse order.
  void run_backward() {
    if (consumed_) throw TensorError("backward: tape already consumed");
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backprop();
    consumed_ = true;
  }

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

 private:
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// RAII: makes a tape the active recorder for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(Tape::active()) { Tape::active() = &tape; }
  ~TapeScope() { Tape::active() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// ---------------------------------------------------------------------------
// Primitives

enum class Op {
  kMatmul,
  kAdd,
  kAddBias,
  kMul,          // elementwise, or (m,1) column broadcast as second input
  kAffine,       // a*x + b with scalar constants
  kRelu,
  kSigmoid,
  kTanh,
  kSoftmaxRows,
  kLog,
  kClamp,
  kSumAll,
  kConcatCols,
  kConcatRows,
  kSliceCols,
  kSliceRows,
  kGatherRows,
  kUnfold,       // im2col with same-padding, per block of rows
  kBlockMaxRows, // column-wise max per block of rows
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kAddBias: return "add_bias";
    case Op::kMul: return "mul";
    case Op::kAffine: return "affine";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kLog: return "log";
    case Op::kClamp: return "clamp";
    case Op::kSumAll: return "sum_all";
    case Op::kConcatCols: return "concat_cols";
    case Op::kConcatRows: return "concat_rows";
    case Op::kSliceCols: return "slice_cols";
    case Op::kSliceRows: return "slice_rows";
    case Op::kGatherRows: return "gather_rows";
    case Op::kUnfold: return "unfold";
    case Op::kBlockMaxRows: return "block_max_rows";
  }
  return "?";
}

// Extra arguments for primitives that need them.
struct OpAttrs {
  std::int64_t i0 = 0;
  std::int64_t i1 = 0;
  double f0 = 0.0;
  double f1 = 0.0;
  std::vector<std::size_t> idx;  // gather indices
};

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

namespace detail {

[[noreturn]] inline void shape_fail(Op op, const Tensor& a, const Tensor& b) {
  throw TensorError(std::string(op_name(op)) + ": incompatible shapes " + shape_str(a.shape()) +
                    " and " + shape_str(b.shape()));
}

[[noreturn]] inline void shape_fail(Op op, const Tensor& a, const std::string& why) {
  throw TensorError(std::string(op_name(op)) + ": " + why + " for shape " + shape_str(a.shape()));
}

inline void accumulate(Tensor t, const std::vector<double>& delta) {
  auto& g = t.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

// Applies one primitive. If any input requires grad and a tape is active,
// the application is recorded and the output requires grad.
Tensor apply_primitive(Op op, std::vector<Tensor> inputs, OpAttrs attrs = {});

namespace detail {

inline bool any_requires_grad(const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

}  // namespace detail

inline Tensor apply_primitive(Op op, std::vector<Tensor> inputs, OpAttrs attrs) {
  Tensor out;
  std::function<void()> backprop;

  switch (op) {
    case Op::kMatmul: {
      if (inputs.size() != 2) throw TensorError("matmul: expects 2 inputs");
      Tensor a = inputs[0], b = inputs[1];
      if (a.cols() != b.rows()) detail::shape_fail(op, a, b);
      const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
      out = Tensor::zeros({m, n});
      EMap(out.data(), m, n).noalias() = ECMap(a.data(), m, k) * ECMap(b.data(), k, n);
      Tensor o = out;
      backprop = [a, b, o, m, k, n]() mutable {
        ECMap go(o.grad().data(), m, n);
        if (a.requires_grad()) {
          EMap ga(a.grad().data(), m, k);
          ga.noalias() += go * ECMap(b.data(), k, n).transpose();
        }
        if (b.requires_grad()) {
          EMap gb(b.grad().data(), k, n);
          gb.noalias() += ECMap(a.data(), m, k).transpose() * go;
        }
      };
      break;
    }

    case Op::kAdd: {
      Tensor a = inputs[0], b = inputs[1];
      if (a.size() != b.size()) detail::shape_fail(op, a, b);
      out = Tensor(a.shape(), a.values());
      for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += b.at(i);
      Tensor o = out;
      backprop = [a, b, o]() mutable {
        if (a.requires_grad()) detail::accumulate(a, o.grad());
        if (b.requires_grad()) detail::accumulate(b, o.grad());
      };
      break;
    }

    case Op::kAddBias: {
      Tensor a = inputs[0], b = inputs[1];  // a: (m,n), b: (n)
      const std::size_t m = a.rows(), n = a.cols();
      if (b.size() != n) detail::shape_fail(op, a, b);
      out = Tensor(a.shape(), a.values());
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out.values()[r * n + c] += b.at(c);
      Tensor o = out;
      backprop = [a, b, o, m, n]() mutable {
        if (a.requires_grad()) detail::accumulate(a, o.grad());
        if (b.requires_grad()) {
          auto& gb = b.grad();
          const auto& go = o.grad();
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += go[r * n + c];
        }
      };
      break;
    }

    case Op::kMul: {
      Tensor a = inputs[0], b = inputs[1];
      const std::size_t m = a.rows(), n = a.cols();
      const bool bcast = (b.size() == m && n != 1 && b.cols() == 1) || (b.rows() == m && b.cols() == 1 && n != 1);
      if (!bcast && a.size() != b.size()) detail::shape_fail(op, a, b);
      out = Tensor(a.shape(), a.values());
      if (bcast) {
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) out.values()[r * n + c] *= b.at(r);
      } else {
        for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] *= b.at(i);
      }
      Tensor o = out;
      backprop = [a, b, o, m, n, bcast]() mutable {
        const auto& go = o.grad();
        if (a.requires_grad()) {
          auto& ga = a.grad();
          if (bcast) {
            for (std::size_t r = 0; r < m; ++r)
              for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += go[r * n + c] * b.at(r);
          } else {
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * b.at(i);
          }
        }
        if (b.requires_grad()) {
          auto& gb = b.grad();
          if (bcast) {
            for (std::size_t r = 0; r < m; ++r)
              for (std::size_t c = 0; c < n; ++c) gb[r] += go[r * n + c] * a.at(r * n + c);
          } else {
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * a.at(i);
          }
        }
      };
      break;
    }

    case Op::kAffine: {
      Tensor a = inputs[0];
      const double s = attrs.f0, t = attrs.f1;
      out = Tensor(a.shape(), a.values());
      for (auto& v : out.values()) v = s * v + t;
      Tensor o = out;
      backprop = [a, o, s]() mutable {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        const auto& go = o.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * go[i];
      };
      break;
    }

    case Op::kRelu: {
      Tensor a = inputs[0];
      out = Tensor(a.shape(), a.values());
      for (auto& v : out.values())
        if (v < 0.0) v = 0.0;
      Tensor o = out;
      backprop = [a, o]() mutable {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        const auto& go = o.grad();
        for (std::size_t i = 0; i < ga.size(); ++i)
          if (a.at(i) > 0.0) ga[i] += go[i];
      };
      break;
    }

    case Op::kSigmoid: {
      Tensor a = inputs[0];
      out = Tensor(a.shape(), a.values());
      for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
      Tensor o = out;
      backprop = [a, o]() mutable {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        const auto& go = o.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) {
          const double y = o.at(i);
          ga[i] += go[i] * y * (1.0 - y);
        }
      };
      break;
    }

    case Op::kTanh: {
      Tensor a = inputs[0];
      out = Tensor(a.shape(), a.values());
      for (auto& v : out.values()) v = std::tanh(v);
      Tensor o = out;
      backprop = [a, o]() mutable {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        const auto& go = o.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) {
          const double y = o.at(i);
          ga[i] += go[i] * (1.0 - y * y);
        }
      };
      break;
    }

    case Op::kSoftmaxRows: {
      Tensor a = inputs[0];
      const std::size_t m = a.rows(), n = a.cols();
      out = Tensor(a.shape(), a.values());
      for (std::size_t r = 0; r < m; ++r) {
        double* row = out.data() + r * n;
        double mx = row[0];
        for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          row[c] = std::exp(row[c] - mx);
          z += row[c];
        }
        for (std::size_t c = 0; c < n; ++c) row[c] /= z;
      }
      Tensor o = out;
      backprop = [a, o, m, n]() mutable {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        const auto& go = o.grad();
        for (std::size_t r = 0; r < m; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < n; ++c) dot += go[r * n + c] * o.at(r * n + c);
          for (std::size_t c = 0; c < n; ++c)
            ga[r * n + c] += o.at(r * n + c) * (go[r * n + c] - dot);
        }
      };
      break;
    }

    case Op::kLog: {
      Tensor a = inputs[0];
      out = Tensor(a.shape(), a.values());
      for (auto& v : out.values()) v = std::log(v);
      Tensor o = out;
      backprop = [a, o]() mutable {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        const auto& go = o.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] / a.at(i);
      };
      break;
    }

    case Op::kClamp: {
      Tensor a = inputs[0];
      const double lo = attrs.f0, hi = attrs.f1;
      out = Tensor(a.shape(), a.values());
      // NaN must pass through so numeric blowups reach the loss check
      // instead of being silently clamped to the bound.
      for (auto& v : out.values())
        if (!std::isnan(v)) v = std::min(hi, std::max(lo, v));
      Tensor o = out;
      backprop = [a, o, lo, hi]() mutable {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        const auto& go = o.grad();
        for (std::size_t i = 0; i < ga.size(); ++i)
          if (a.at(i) > lo && a.at(i) < hi) ga[i] += go[i];
      };
      break;
    }

    case Op::kSumAll: {
      Tensor a = inputs[0];
      double s = 0.0;
      for (double v : a.values()) s += v;
      out = Tensor::scalar(s);
      Tensor o = out;
      backprop = [a, o]() mutable {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        const double g = o.grad()[0];
        for (auto& v : ga) v += g;
      };
      break;
    }

    case Op::kConcatCols: {
      if (inputs.empty()) throw TensorError("concat_cols: no inputs");
      const std::size_t m = inputs[0].rows();
      std::size_t n = 0;
      for (const auto& t : inputs) {
        if (t.rows() != m) detail::shape_fail(op, inputs[0], t);
        n += t.cols();
      }
      out = Tensor::zeros({m, n});
      std::size_t off = 0;
      for (const auto& t : inputs) {
        const std::size_t c = t.cols();
        for (std::size_t r = 0; r < m; ++r)
          std::copy(t.data() + r * c, t.data() + (r + 1) * c, out.data() + r * n + off);
        off += c;
      }
      Tensor o = out;
      auto ins = inputs;
      backprop = [ins, o, m, n]() mutable {
        const auto& go = o.grad();
        std::size_t off = 0;
        for (auto& t : ins) {
          const std::size_t c = t.cols();
          if (t.requires_grad()) {
            auto& g = t.grad();
            for (std::size_t r = 0; r < m; ++r)
              for (std::size_t j = 0; j < c; ++j) g[r * c + j] += go[r * n + off + j];
          }
          off += c;
        }
      };
      break;
    }

    case Op::kConcatRows: {
      if (inputs.empty()) throw TensorError("concat_rows: no inputs");
      const std::size_t n = inputs[0].cols();
      std::size_t m = 0;
      for (const auto& t : inputs) {
        if (t.cols() != n) detail::shape_fail(op, inputs[0], t);
        m += t.rows();
      }
      out = Tensor::zeros({m, n});
      std::size_t off = 0;
      for (const auto& t : inputs) {
        std::copy(t.data(), t.data() + t.size(), out.data() + off);
        off += t.size();
      }
      Tensor o = out;
      auto ins = inputs;
      backprop = [ins, o]() mutable {
        const auto& go = o.grad();
        std::size_t off = 0;
        for (auto& t : ins) {
          if (t.requires_grad()) {
            auto& g = t.grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[off + i];
          }
          off += t.size();
        }
      };
      break;
    }

    case Op::kSliceCols: {
      Tensor a = inputs[0];
      const std::size_t lo = static_cast<std::size_t>(attrs.i0);
      const std::size_t hi = static_cast<std::size_t>(attrs.i1);
      const std::size_t m = a.rows(), n = a.cols();
      if (lo >= hi || hi > n) detail::shape_fail(op, a, "bad column range");
      const std::size_t w = hi - lo;
      out = Tensor::zeros({m, w});
      for (std::size_t r = 0; r < m; ++r)
        std::copy(a.data() + r * n + lo, a.data() + r * n + hi, out.data() + r * w);
      Tensor o = out;
      backprop = [a, o, lo, m, n, w]() mutable {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        const auto& go = o.grad();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t j = 0; j < w; ++j) ga[r * n + lo + j] += go[r * w + j];
      };
      break;
    }

    case Op::kSliceRows: {
      Tensor a = inputs[0];
      const std::size_t lo = static_cast<std::size_t>(attrs.i0);
      const std::size_t hi = static_cast<std::size_t>(attrs.i1);
      const std::size_t n = a.cols();
      if (lo >= hi || hi > a.rows()) detail::shape_fail(op, a, "bad row range");
      out = Tensor::zeros({hi - lo, n});
      std::copy(a.data() + lo * n, a.data() + hi * n, out.data());
      Tensor o = out;
      backprop = [a, o, lo, n]() mutable {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        const auto& go = o.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[lo * n + i] += go[i];
      };
      break;
    }

    case Op::kGatherRows: {
      Tensor a = inputs[0];
      const std::size_t n = a.cols(), m = attrs.idx.size();
      for (std::size_t i : attrs.idx)
        if (i >= a.rows())
          throw TensorError("gather_rows: index " + std::to_string(i) + " out of range for " +
                            shape_str(a.shape()));
      out = Tensor::zeros({m, n});
      for (std::size_t r = 0; r < m; ++r)
        std::copy(a.data() + attrs.idx[r] * n, a.data() + (attrs.idx[r] + 1) * n,
                  out.data() + r * n);
      Tensor o = out;
      auto idx = attrs.idx;
      backprop = [a, o, idx, n]() mutable {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        const auto& go = o.grad();
        for (std::size_t r = 0; r < idx.size(); ++r)
          for (std::size_t c = 0; c < n; ++c) ga[idx[r] * n + c] += go[r * n + c];
      };
      break;
    }

    case Op::kUnfold: {
      // x: (blocks*len, d) -> (blocks*len, k*d); windows zero-padded at
      // block edges, total pad k-1 split with the extra frame on the right.
      Tensor a = inputs[0];
      const std::size_t blocks = static_cast<std::size_t>(attrs.i0);
      const std::size_t k = static_cast<std::size_t>(attrs.i1);
      const std::size_t d = a.cols();
      if (blocks == 0 || a.rows() % blocks != 0) detail::shape_fail(op, a, "bad block count");
      const std::size_t len = a.rows() / blocks;
      const std::size_t pad_left = (k - 1) / 2;
      out = Tensor::zeros({blocks * len, k * d});
      for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) -
                                       static_cast<std::ptrdiff_t>(pad_left);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
            std::copy(a.data() + (b * len + src) * d, a.data() + (b * len + src + 1) * d,
                      out.data() + (b * len + t) * k * d + j * d);
          }
      Tensor o = out;
      backprop = [a, o, blocks, len, k, d, pad_left]() mutable {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        const auto& go = o.grad();
        for (std::size_t b = 0; b < blocks; ++b)
          for (std::size_t t = 0; t < len; ++t)
            for (std::size_t j = 0; j < k; ++j) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) -
                                         static_cast<std::ptrdiff_t>(pad_left);
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
              for (std::size_t c = 0; c < d; ++c)
                ga[(b * len + src) * d + c] += go[(b * len + t) * k * d + j * d + c];
            }
      };
      break;
    }

    case Op::kBlockMaxRows: {
      // x: (blocks*len, d) -> (blocks, d); per block, column-wise max over
      // rows. Gradient routes to the first occurrence of the maximum.
      Tensor a = inputs[0];
      const std::size_t blocks = static_cast<std::size_t>(attrs.i0);
      const std::size_t d = a.cols();
      if (blocks == 0 || a.rows() % blocks != 0) detail::shape_fail(op, a, "bad block count");
      const std::size_t len = a.rows() / blocks;
      if (len == 0) detail::shape_fail(op, a, "empty block");
      out = Tensor::zeros({blocks, d});
      auto argmax = std::make_shared<std::vector<std::size_t>>(blocks * d);
      for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t c = 0; c < d; ++c) {
          std::size_t best = 0;
          double mv = a.at((b * len) * d + c);
          for (std::size_t t = 1; t < len; ++t) {
            const double v = a.at((b * len + t) * d + c);
            if (v > mv) {
              mv = v;
              best = t;
            }
          }
          out.values()[b * d + c] = mv;
          (*argmax)[b * d + c] = best;
        }
      Tensor o = out;
      backprop = [a, o, argmax, blocks, len, d]() mutable {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        const auto& go = o.grad();
        for (std::size_t b = 0; b < blocks; ++b)
          for (std::size_t c = 0; c < d; ++c)
            ga[(b * len + (*argmax)[b * d + c]) * d + c] += go[b * d + c];
      };
      break;
    }

    default:
      throw TensorError("apply_primitive: unknown primitive id");
  }

  if (detail::any_requires_grad(inputs)) {
    out.set_requires_grad(true);
    if (Tape* tape = Tape::active()) tape->record(op_name(op), std::move(backprop));
  }
  return out;
}

// Convenience wrappers.
inline Tensor matmul(const Tensor& a, const Tensor& b) { return apply_primitive(Op::kMatmul, {a, b}); }
inline Tensor add(const Tensor& a, const Tensor& b) { return apply_primitive(Op::kAdd, {a, b}); }
inline Tensor add_bias(const Tensor& a, const Tensor& b) { return apply_primitive(Op::kAddBias, {a, b}); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return apply_primitive(Op::kMul, {a, b}); }
inline Tensor affine(const Tensor& a, double scale, double shift) {
  OpAttrs at;
  at.f0 = scale;
  at.f1 = shift;
  return apply_primitive(Op::kAffine, {a}, at);
}
inline Tensor relu(const Tensor& a) { return apply_primitive(Op::kRelu, {a}); }
inline Tensor sigmoid(const Tensor& a) { return apply_primitive(Op::kSigmoid, {a}); }
inline Tensor tanh_t(const Tensor& a) { return apply_primitive(Op::kTanh, {a}); }
inline Tensor softmax_rows(const Tensor& a) { return apply_primitive(Op::kSoftmaxRows, {a}); }
inline Tensor log_t(const Tensor& a) { return apply_primitive(Op::kLog, {a}); }
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  OpAttrs at;
  at.f0 = lo;
  at.f1 = hi;
  return apply_primitive(Op::kClamp, {a}, at);
}
inline Tensor sum_all(const Tensor& a) { return apply_primitive(Op::kSumAll, {a}); }
inline Tensor concat_cols(std::vector<Tensor> parts) {
  return apply_primitive(Op::kConcatCols, std::move(parts));
}
inline Tensor concat_rows(std::vector<Tensor> parts) {
  return apply_primitive(Op::kConcatRows, std::move(parts));
}
inline Tensor slice_cols(const Tensor& a, std::size_t lo, std::size_t hi) {
  OpAttrs at;
  at.i0 = static_cast<std::int64_t>(lo);
  at.i1 = static_cast<std::int64_t>(hi);
  return apply_primitive(Op::kSliceCols, {a}, at);
}
inline Tensor slice_rows(const Tensor& a, std::size_t lo, std::size_t hi) {
  OpAttrs at;
  at.i0 = static_cast<std::int64_t>(lo);
  at.i1 = static_cast<std::int64_t>(hi);
  return apply_primitive(Op::kSliceRows, {a}, at);
}
inline Tensor gather_rows(const Tensor& a, std::vector<std::size_t> idx) {
  OpAttrs at;
  at.idx = std::move(idx);
  return apply_primitive(Op::kGatherRows, {a}, at);
}
inline Tensor unfold(const Tensor& a, std::size_t blocks, std::size_t kernel) {
  OpAttrs at;
  at.i0 = static_cast<std::int64_t>(blocks);
  at.i1 = static_cast<std::int64_t>(kernel);
  return apply_primitive(Op::kUnfold, {a}, at);
}
inline Tensor block_max_rows(const Tensor& a, std::size_t blocks) {
  OpAttrs at;
  at.i0 = static_cast<std::int64_t>(blocks);
  return apply_primitive(Op::kBlockMaxRows, {a}, at);
}

// Seeds d(loss)/d(loss)=1 and replays the tape in reverse. Gradients
// accumulate additively into every leaf that requires them.
inline void backward(Tensor loss, Tape& tape) {
  if (loss.size() != 1)
    throw TensorError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  loss.grad()[0] += 1.0;
  tape.run_backward();
}

// Central-difference numeric gradient; the testing oracle for everything
// differentiable in this library.
inline Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, Tensor x,
                                     double epsilon = 1e-5) {
  if (epsilon <= 0.0) throw TensorError("finite_difference_grad: epsilon must be positive");
  Tensor g = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x.values()[i];
    x.values()[i] = saved + epsilon;
    const double fp = f(x);
    x.values()[i] = saved - epsilon;
    const double fm = f(x);
    x.values()[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw TensorError("finite_difference_grad: non-finite evaluation");
    g.values()[i] = (fp - fm) / (2.0 * epsilon);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState for_params(const std::vector<Tensor>& params, double lr = 0.001) {
    AdamState s;
    s.lr = lr;
    for (const auto& p : params) {
      s.m.emplace_back(p.size(), 0.0);
      s.v.emplace_back(p.size(), 0.0);
    }
    return s;
  }
};

// One bias-corrected Adam update. Grads are left untouched; the caller
// zeroes them between steps.
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.m.size())
    throw TensorError("adam_step: state tracks " + std::to_string(state.m.size()) +
                      " params, got " + std::to_string(params.size()));
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& param = params[p];
    if (!param.has_grad())
      throw TensorError("adam_step: param " + std::to_string(p) + " has no gradient");
    if (state.m[p].size() != param.size())
      throw TensorError("adam_step: param " + std::to_string(p) + " shape changed");
    const auto& g = param.grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    auto& w = param.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      w[i] -= state.lr * mh / (std::sqrt(vh) + state.epsilon);
    }
  }
}

}  // namespace mixlid
