#pragma once

// Differentiable layers composing tensor primitives: embedding lookup,
// same-padded 1D convolution, max-pool over time, bidirectional LSTM,
// dense, inverted dropout, and the two cross-entropy losses.

#include "mixlid/tensor.hpp"

#include <random>

namespace mixlid {

// Probabilities are clamped to this range before any log.
constexpr double kProbClampLo = 1e-7;
constexpr double kProbClampHi = 1.0 - 1e-7;

inline double uniform_init_bound() { return 0.08; }

inline Tensor uniform_tensor(Shape shape, std::mt19937& rng, double bound = uniform_init_bound(),
                             bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// ---------------------------------------------------------------------------
// Embedding

struct EmbeddingTable {
  Tensor weights;  // (rows, cols); row 0 = padding, row 1 = unknown

  std::size_t rows() const { return weights.rows(); }
  std::size_t cols() const { return weights.cols(); }

  static EmbeddingTable init(std::size_t rows, std::size_t cols, std::mt19937& rng) {
    EmbeddingTable t;
    t.weights = uniform_tensor({rows, cols}, rng);
    // Padding row pinned to zero; its gradient is masked out in lookup,
    // so Adam never moves it.
    for (std::size_t c = 0; c < cols; ++c) t.weights.values()[c] = 0.0;
    return t;
  }
};

// Row t of the output is the table row for ids[t]. Padding id 0 yields an
// all-zero row and receives no gradient, which keeps batches invariant
// under pad extension.
inline Tensor embedding_forward(const std::vector<std::size_t>& ids, const EmbeddingTable& table) {
  for (std::size_t id : ids)
    if (id >= table.rows())
      throw TensorError("embedding_forward: id " + std::to_string(id) + " out of range [0," +
                        std::to_string(table.rows()) + ")");
  Tensor rows = gather_rows(table.weights, ids);
  bool any_pad = false;
  for (std::size_t id : ids) any_pad |= (id == 0);
  if (!any_pad) return rows;
  std::vector<double> m(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) m[i] = ids[i] == 0 ? 0.0 : 1.0;
  return mul(rows, Tensor({ids.size(), 1}, std::move(m)));
}

// ---------------------------------------------------------------------------
// Conv1d (same padding, no activation)

struct Conv1dParams {
  std::size_t kernel_size = 0;
  std::size_t in_dim = 0;
  std::size_t filters = 0;
  Tensor weights;  // (kernel_size * in_dim, filters)
  Tensor bias;     // (filters)

  static Conv1dParams init(std::size_t kernel, std::size_t in_dim, std::size_t filters,
                           std::mt19937& rng) {
    Conv1dParams p;
    p.kernel_size = kernel;
    p.in_dim = in_dim;
    p.filters = filters;
    p.weights = uniform_tensor({kernel * in_dim, filters}, rng);
    p.bias = Tensor::zeros({filters}, true);
    return p;
  }
};

// x: (blocks*len, in_dim) of independent sequences; output keeps the
// sequence length (zero same-padding, extra frame on the right).
inline Tensor conv1d_forward_blocks(const Tensor& x, std::size_t blocks, const Conv1dParams& p) {
  if (x.cols() != p.in_dim)
    throw TensorError("conv1d: input dim " + std::to_string(x.cols()) + " != " +
                      std::to_string(p.in_dim));
  Tensor col = unfold(x, blocks, p.kernel_size);
  return add_bias(matmul(col, p.weights), p.bias);
}

inline Tensor conv1d_forward(const Tensor& x, const Conv1dParams& p) {
  return conv1d_forward_blocks(x, 1, p);
}

// ---------------------------------------------------------------------------
// Max pool over time

// x: (T, d) -> (1, d) column-wise max; ties route the gradient to the
// first occurrence.
inline Tensor max_pool_over_time(const Tensor& x) {
  if (x.rows() == 0) throw TensorError("max_pool_over_time: empty sequence");
  return block_max_rows(x, 1);
}

// ---------------------------------------------------------------------------
// Dropout

// Inverted dropout: training mode scales survivors by 1/keep so that
// evaluation is the identity.
inline Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937& rng) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw TensorError("dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  std::bernoulli_distribution dist(keep);
  std::vector<double> m(x.size());
  for (auto& v : m) v = dist(rng) ? 1.0 / keep : 0.0;
  return mul(x, Tensor(x.shape(), std::move(m)));
}

// ---------------------------------------------------------------------------
// Bidirectional LSTM

struct LstmDirectionParams {
  Tensor wx;  // (in, 4*hidden), gate order i,f,g,o
  Tensor wh;  // (hidden, 4*hidden)
  Tensor b;   // (4*hidden)
};

struct BiLstmParams {
  std::size_t in_dim = 0;
  std::size_t hidden = 0;
  double dropout_rate = 0.0;
  LstmDirectionParams fwd;
  LstmDirectionParams bwd;

  static BiLstmParams init(std::size_t in_dim, std::size_t hidden, double dropout_rate,
                           std::mt19937& rng) {
    BiLstmParams p;
    p.in_dim = in_dim;
    p.hidden = hidden;
    p.dropout_rate = dropout_rate;
    for (LstmDirectionParams* dir : {&p.fwd, &p.bwd}) {
      dir->wx = uniform_tensor({in_dim, 4 * hidden}, rng);
      dir->wh = uniform_tensor({hidden, 4 * hidden}, rng);
      std::vector<double> b(4 * hidden, 0.0);
      // Forget gate bias starts at 1.
      for (std::size_t i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;
      dir->b = Tensor({4 * hidden}, std::move(b), true);
    }
    return p;
  }
};

namespace detail {

// One LSTM step over a batch. step_mask is (B,1) with 1 for live rows;
// masked rows keep state at zero, so short sequences behave exactly as
// if they were never padded.
inline void lstm_step(const Tensor& x_t, const LstmDirectionParams& p, std::size_t hidden,
                      const Tensor& step_mask, Tensor& h, Tensor& c) {
  Tensor pre = add_bias(add(matmul(x_t, p.wx), matmul(h, p.wh)), p.b);
  Tensor i = sigmoid(slice_cols(pre, 0, hidden));
  Tensor f = sigmoid(slice_cols(pre, hidden, 2 * hidden));
  Tensor g = tanh_t(slice_cols(pre, 2 * hidden, 3 * hidden));
  Tensor o = sigmoid(slice_cols(pre, 3 * hidden, 4 * hidden));
  c = mul(add(mul(f, c), mul(i, g)), step_mask);
  h = mul(mul(o, tanh_t(c)), step_mask);
}

}  // namespace detail

// xs: per-timestep inputs, each (B, in_dim); lengths: live prefix per
// batch row. Returns per-timestep outputs (B, 2*hidden), forward block
// first. Rows at t >= length are all zero.
inline std::vector<Tensor> bilstm_forward_steps(const std::vector<Tensor>& xs,
                                                const std::vector<std::size_t>& lengths,
                                                const BiLstmParams& p, bool training,
                                                std::mt19937& rng) {
  const std::size_t T = xs.size();
  if (T == 0) throw TensorError("bilstm: empty sequence");
  const std::size_t B = xs[0].rows();
  if (xs[0].cols() != p.in_dim)
    throw TensorError("bilstm: input dim " + std::to_string(xs[0].cols()) + " != " +
                      std::to_string(p.in_dim));

  std::vector<Tensor> masks(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> m(B);
    for (std::size_t b = 0; b < B; ++b) m[b] = t < lengths[b] ? 1.0 : 0.0;
    masks[t] = Tensor({B, 1}, std::move(m));
  }

  std::vector<Tensor> hf(T), hb(T);
  Tensor h = Tensor::zeros({B, p.hidden});
  Tensor c = Tensor::zeros({B, p.hidden});
  for (std::size_t t = 0; t < T; ++t) {
    detail::lstm_step(xs[t], p.fwd, p.hidden, masks[t], h, c);
    hf[t] = h;
  }
  h = Tensor::zeros({B, p.hidden});
  c = Tensor::zeros({B, p.hidden});
  for (std::size_t t = T; t-- > 0;) {
    detail::lstm_step(xs[t], p.bwd, p.hidden, masks[t], h, c);
    hb[t] = h;
  }

  std::vector<Tensor> out(T);
  for (std::size_t t = 0; t < T; ++t)
    out[t] = dropout(concat_cols({hf[t], hb[t]}), p.dropout_rate, training, rng);
  return out;
}

// Single-sequence convenience: x (T, in_dim) -> (T, 2*hidden).
inline Tensor bilstm_forward(const Tensor& x, const BiLstmParams& p, bool training,
                             std::mt19937& rng) {
  const std::size_t T = x.rows();
  std::vector<Tensor> xs(T);
  for (std::size_t t = 0; t < T; ++t) xs[t] = slice_rows(x, t, t + 1);
  auto hs = bilstm_forward_steps(xs, {T}, p, training, rng);
  return concat_rows(std::move(hs));
}

// ---------------------------------------------------------------------------
// Dense

enum class Activation { kNone, kRelu, kSigmoid, kSoftmax };

struct DenseParams {
  Tensor weights;  // (in, out)
  Tensor bias;     // (out)
  Activation activation = Activation::kNone;

  static DenseParams init(std::size_t in, std::size_t out, Activation act, std::mt19937& rng) {
    DenseParams p;
    p.weights = uniform_tensor({in, out}, rng);
    p.bias = Tensor::zeros({out}, true);
    p.activation = act;
    return p;
  }
};

// Applied identically at every row (time step).
inline Tensor dense_forward(const Tensor& x, const DenseParams& p) {
  if (x.cols() != p.weights.rows())
    throw TensorError("dense: input dim " + std::to_string(x.cols()) + " != " +
                      std::to_string(p.weights.rows()));
  Tensor y = add_bias(matmul(x, p.weights), p.bias);
  switch (p.activation) {
    case Activation::kNone: return y;
    case Activation::kRelu: return relu(y);
    case Activation::kSigmoid: return sigmoid(y);
    case Activation::kSoftmax: return softmax_rows(y);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Losses

// Mean over unmasked rows of -[y log p + (1-y) log(1-p)]. preds: (N,1)
// probabilities, targets: 0/1 per row, mask: row participates iff true.
inline Tensor bce_loss(const Tensor& preds, const std::vector<int>& targets,
                       const std::vector<bool>& mask) {
  const std::size_t n = preds.size();
  if (targets.size() != n || mask.size() != n)
    throw TensorError("bce_loss: length mismatch");
  double cnt = 0.0;
  for (bool b : mask) cnt += b ? 1.0 : 0.0;
  if (cnt == 0.0) throw TensorError("bce_loss: all positions masked");

  std::vector<double> y(n), ny(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = mask[i] ? 1.0 : 0.0;
    y[i] = m * (targets[i] != 0 ? 1.0 : 0.0);
    ny[i] = m * (targets[i] != 0 ? 0.0 : 1.0);
  }
  Tensor p = clamp(preds, kProbClampLo, kProbClampHi);
  Tensor pos = mul(log_t(p), Tensor(preds.shape(), std::move(y)));
  Tensor neg = mul(log_t(affine(p, -1.0, 1.0)), Tensor(preds.shape(), std::move(ny)));
  return affine(sum_all(add(pos, neg)), -1.0 / cnt, 0.0);
}

// Mean negative log-probability of the target class over unmasked rows.
// probs: (N, C) rows already normalized (softmax output).
inline Tensor cce_loss(const Tensor& probs, const std::vector<std::size_t>& targets,
                       const std::vector<bool>& mask) {
  const std::size_t n = probs.rows(), c = probs.cols();
  if (c < 2) throw TensorError("cce_loss: need at least 2 classes");
  if (targets.size() != n || mask.size() != n)
    throw TensorError("cce_loss: length mismatch");
  double cnt = 0.0;
  std::vector<double> onehot(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= c)
      throw TensorError("cce_loss: target " + std::to_string(targets[i]) + " out of range");
    if (mask[i]) {
      onehot[i * c + targets[i]] = 1.0;
      cnt += 1.0;
    }
  }
  if (cnt == 0.0) throw TensorError("cce_loss: all positions masked");
  Tensor lp = log_t(clamp(probs, kProbClampLo, kProbClampHi));
  Tensor picked = mul(lp, Tensor({n, c}, std::move(onehot)));
  return affine(sum_all(picked), -1.0 / cnt, 0.0);
}

}  // namespace mixlid
