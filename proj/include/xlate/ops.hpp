#pragma once

// Differentiable primitives. Every op takes and returns Tensor<Scalar> and
// registers its own backward closure; gradients for a parent are computed only
// when that parent requires them.

#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <type_traits>
#include <vector>

#include "xlate/tensor.hpp"

namespace xlate {

namespace detail {

template <typename Scalar>
Node<Scalar>& parent(Node<Scalar>& self, std::size_t i) {
  return *self.parents[i];
}

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

inline Index last_dim(const Shape& shape) { return shape.empty() ? 1 : shape.back(); }

}  // namespace detail

// --- linear algebra -------------------------------------------------------

/// [m,k] x [k,n] -> [m,n]
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const Index m = a.dim(0), n = b.dim(1);
  Vec<Scalar> out(m * n);
  MatMap<Scalar>(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  return make_result<Scalar>({m, n}, std::move(out), {a.node(), b.node()}, [m, n](Node<Scalar>& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    ConstMatMap<Scalar> dc(self.grad.data(), m, n);
    const Index k = pa.shape[1];
    if (pa.requires_grad) {
      MatMap<Scalar>(pa.grad_buffer().data(), m, k).noalias() += dc * ConstMatMap<Scalar>(pb.value.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      MatMap<Scalar>(pb.grad_buffer().data(), k, n).noalias() += ConstMatMap<Scalar>(pa.value.data(), m, k).transpose() * dc;
    }
  });
}

/// x[..., in] * W[out, in]^T + bias[out]. bias may be undefined.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias = {}) {
  if (weight.rank() != 2 || x.rank() < 1 || x.shape().back() != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  const Index in = weight.dim(1), out_dim = weight.dim(0), rows = x.size() / in;
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != out_dim) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  Vec<Scalar> out(rows * out_dim);
  MatMap<Scalar> y(out.data(), rows, out_dim);
  y.noalias() = x.matrix() * weight.matrix().transpose();
  if (has_bias) y.rowwise() += bias.data().transpose();

  std::vector<typename Tensor<Scalar>::NodePtr> parents{x.node(), weight.node()};
  if (has_bias) parents.push_back(bias.node());
  return make_result<Scalar>(std::move(shape), std::move(out), std::move(parents),
                             [rows, in, out_dim, has_bias](Node<Scalar>& self) {
                               ConstMatMap<Scalar> dy(self.grad.data(), rows, out_dim);
                               auto& px = detail::parent(self, 0);
                               auto& pw = detail::parent(self, 1);
                               if (px.requires_grad) {
                                 MatMap<Scalar>(px.grad_buffer().data(), rows, in).noalias() +=
                                     dy * ConstMatMap<Scalar>(pw.value.data(), out_dim, in);
                               }
                               if (pw.requires_grad) {
                                 MatMap<Scalar>(pw.grad_buffer().data(), out_dim, in).noalias() +=
                                     dy.transpose() * ConstMatMap<Scalar>(px.value.data(), rows, in);
                               }
                               if (has_bias) {
                                 auto& pb = detail::parent(self, 2);
                                 if (pb.requires_grad) pb.grad_buffer() += dy.colwise().sum().transpose();
                               }
                             });
}

// --- elementwise ------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  return make_result<Scalar>(a.shape(), a.data() + b.data(), {a.node(), b.node()}, [](Node<Scalar>& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      auto& p = detail::parent(self, i);
      if (p.requires_grad) p.grad_buffer() += self.grad;
    }
  });
}

/// x[..., n] + bias[n], broadcast over leading dims.
template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
  const Index n = detail::last_dim(x.shape());
  if (bias.size() != n) throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  Vec<Scalar> out = x.data();
  MatMap<Scalar>(out.data(), x.size() / n, n).rowwise() += bias.data().transpose();
  return make_result<Scalar>(x.shape(), std::move(out), {x.node(), bias.node()}, [n](Node<Scalar>& self) {
    auto& px = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    if (px.requires_grad) px.grad_buffer() += self.grad;
    if (pb.requires_grad) pb.grad_buffer() += ConstMatMap<Scalar>(self.grad.data(), self.grad.size() / n, n).colwise().sum().transpose();
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  return make_result<Scalar>(a.shape(), a.data().cwiseProduct(b.data()), {a.node(), b.node()}, [](Node<Scalar>& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    if (pa.requires_grad) pa.grad_buffer() += self.grad.cwiseProduct(pb.value);
    if (pb.requires_grad) pb.grad_buffer() += self.grad.cwiseProduct(pa.value);
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  return make_result<Scalar>(x.shape(), x.data() * factor, {x.node()}, [factor](Node<Scalar>& self) {
    detail::parent(self, 0).grad_buffer() += self.grad * factor;
  });
}

/// tanh-approximated GELU.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  constexpr Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
  constexpr Scalar k = Scalar(0.044715);
  const Vec<Scalar>& v = x.data();
  Vec<Scalar> t = (c * (v.array() + k * v.array().cube())).tanh().matrix();
  Vec<Scalar> out = (Scalar(0.5) * v.array() * (Scalar(1) + t.array())).matrix();
  return make_result<Scalar>(x.shape(), std::move(out), {x.node()}, [t = std::move(t), c, k](Node<Scalar>& self) {
    auto& px = detail::parent(self, 0);
    const auto v = px.value.array();
    const auto dydx = Scalar(0.5) * (Scalar(1) + t.array()) +
                      Scalar(0.5) * v * (Scalar(1) - t.array().square()) * c * (Scalar(1) + Scalar(3) * k * v.square());
    px.grad_buffer().array() += self.grad.array() * dydx;
  });
}

/// Inverted dropout with its own seed; identity when rate == 0.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double rate, std::uint64_t seed) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw DomainError("dropout rate must be < 1");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const Scalar scale_kept = Scalar(1.0 / (1.0 - rate));
  Vec<Scalar> mask(x.size());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? scale_kept : Scalar(0);
  Vec<Scalar> out = x.data().cwiseProduct(mask);
  return make_result<Scalar>(x.shape(), std::move(out), {x.node()}, [mask = std::move(mask)](Node<Scalar>& self) {
    detail::parent(self, 0).grad_buffer() += self.grad.cwiseProduct(mask);
  });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return make_result<Scalar>(std::move(shape), x.data(), {x.node()}, [](Node<Scalar>& self) {
    detail::parent(self, 0).grad_buffer() += self.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Vec<Scalar> out(1);
  out[0] = x.data().sum();
  return make_result<Scalar>({}, std::move(out), {x.node()}, [](Node<Scalar>& self) {
    detail::parent(self, 0).grad_buffer().array() += self.grad[0];
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

// --- normalisation and lookup ------------------------------------------------

/// Normalises over the last dimension, then applies gain and bias.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias,
                          Scalar eps = Scalar(1e-5)) {
  const Index d = detail::last_dim(x.shape());
  detail::require(gain.size() == d && bias.size() == d,
                  "layer_norm: parameters " + shape_str(gain.shape()) + " do not match input " + shape_str(x.shape()));
  const Index rows = x.size() / d;
  auto in = x.matrix();
  RowMat<Scalar> xhat(rows, d);
  Vec<Scalar> inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    const Scalar mu = in.row(r).mean();
    const Scalar var = (in.row(r).array() - mu).square().mean();
    inv_std[r] = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (in.row(r).array() - mu) * inv_std[r];
  }
  Vec<Scalar> out(rows * d);
  MatMap<Scalar> y(out.data(), rows, d);
  y = (xhat.array().rowwise() * gain.data().transpose().array()).rowwise() + bias.data().transpose().array();
  return make_result<Scalar>(x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
                             [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<Scalar>& self) {
                               ConstMatMap<Scalar> dy(self.grad.data(), rows, d);
                               auto& px = detail::parent(self, 0);
                               auto& pg = detail::parent(self, 1);
                               auto& pb = detail::parent(self, 2);
                               if (pg.requires_grad) pg.grad_buffer() += (dy.array() * xhat.array()).colwise().sum().matrix().transpose();
                               if (pb.requires_grad) pb.grad_buffer() += dy.colwise().sum().transpose();
                               if (px.requires_grad) {
                                 MatMap<Scalar> dx(px.grad_buffer().data(), rows, d);
                                 const auto gain_row = pg.value.transpose().array();
                                 for (Index r = 0; r < rows; ++r) {
                                   const auto dxhat = (dy.row(r).array() * gain_row).eval();
                                   const Scalar m1 = dxhat.mean();
                                   const Scalar m2 = (dxhat * xhat.row(r).array()).mean();
                                   dx.row(r).array() += inv_std[r] * (dxhat - m1 - xhat.row(r).array() * m2);
                                 }
                               }
                             });
}

/// Gathers rows of table[V, d]; result has shape lead + [d].
template <typename Scalar>
Tensor<Scalar> embedding(const Tensor<Scalar>& table, std::span<const int> ids, Shape lead) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be 2-D, got " + shape_str(table.shape()));
  if (numel(lead) != static_cast<Index>(ids.size())) {
    throw ShapeError("embedding: " + std::to_string(ids.size()) + " ids do not fill " + shape_str(lead));
  }
  const Index vocab = table.dim(0), d = table.dim(1);
  auto rows_in = table.matrix();
  Vec<Scalar> out(static_cast<Index>(ids.size()) * d);
  MatMap<Scalar> y(out.data(), static_cast<Index>(ids.size()), d);
  std::vector<int> kept(ids.begin(), ids.end());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i] < 0 || kept[i] >= vocab) {
      throw DomainError("embedding: id " + std::to_string(kept[i]) + " outside [0," + std::to_string(vocab) + ")");
    }
    y.row(static_cast<Index>(i)) = rows_in.row(kept[i]);
  }
  lead.push_back(d);
  return make_result<Scalar>(std::move(lead), std::move(out), {table.node()}, [d, kept = std::move(kept)](Node<Scalar>& self) {
    auto& pt = detail::parent(self, 0);
    MatMap<Scalar> dt(pt.grad_buffer().data(), pt.shape[0], d);
    ConstMatMap<Scalar> dy(self.grad.data(), static_cast<Index>(kept.size()), d);
    for (std::size_t i = 0; i < kept.size(); ++i) dt.row(kept[i]) += dy.row(static_cast<Index>(i));
  });
}

// --- reductions and probability -------------------------------------------

/// Numerically stabilised softmax along `axis`.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const Index n = x.dim(axis);
  const Vec<Scalar>& v = x.data();
  Vec<Scalar> out(v.size());
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * n * inner + in;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Index j = 0; j < n; ++j) mx = std::max(mx, v[base + j * inner]);
      Scalar total = 0;
      for (Index j = 0; j < n; ++j) total += (out[base + j * inner] = std::exp(v[base + j * inner] - mx));
      for (Index j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  return make_result<Scalar>(x.shape(), out, {x.node()}, [outer, inner, n, y = out](Node<Scalar>& self) {
    auto& px = detail::parent(self, 0);
    auto& dx = px.grad_buffer();
    for (Index o = 0; o < outer; ++o) {
      for (Index in = 0; in < inner; ++in) {
        const Index base = o * n * inner + in;
        Scalar dot = 0;
        for (Index j = 0; j < n; ++j) dot += self.grad[base + j * inner] * y[base + j * inner];
        for (Index j = 0; j < n; ++j) dx[base + j * inner] += y[base + j * inner] * (self.grad[base + j * inner] - dot);
      }
    }
  });
}

/// [batch, seq, e] -> [batch, e]: maximum over the sequence axis. Optional
/// per-batch `lengths` restrict the pool to the first lengths[b] positions.
/// Gradient goes to the arg-max position, lowest index on ties.
template <typename Scalar>
Tensor<Scalar> max_over_sequence(const Tensor<Scalar>& x, std::span<const int> lengths = {}) {
  if (x.rank() != 3) throw ShapeError("max_over_sequence: expected [batch,seq,e], got " + shape_str(x.shape()));
  const Index batch = x.dim(0), seq = x.dim(1), e = x.dim(2);
  if (seq < 1) throw DomainError("max_over_sequence: empty sequence");
  if (!lengths.empty() && static_cast<Index>(lengths.size()) != batch) {
    throw ShapeError("max_over_sequence: " + std::to_string(lengths.size()) + " lengths for batch " + std::to_string(batch));
  }
  const Vec<Scalar>& v = x.data();
  Vec<Scalar> out(batch * e);
  std::vector<Index> arg(static_cast<std::size_t>(batch * e));
  for (Index b = 0; b < batch; ++b) {
    const Index len = lengths.empty() ? seq : lengths[static_cast<std::size_t>(b)];
    if (len < 1 || len > seq) throw DomainError("max_over_sequence: length " + std::to_string(len) + " outside [1," + std::to_string(seq) + "]");
    for (Index j = 0; j < e; ++j) {
      Index best = 0;
      for (Index t = 1; t < len; ++t) {
        if (v[(b * seq + t) * e + j] > v[(b * seq + best) * e + j]) best = t;
      }
      arg[static_cast<std::size_t>(b * e + j)] = (b * seq + best) * e + j;
      out[b * e + j] = v[(b * seq + best) * e + j];
    }
  }
  return make_result<Scalar>({batch, e}, std::move(out), {x.node()}, [arg = std::move(arg)](Node<Scalar>& self) {
    auto& dx = detail::parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += self.grad[static_cast<Index>(i)];
  });
}

/// Mean negative log-likelihood over rows of logits[..., V], weighted by mask.
template <typename Scalar>
Tensor<Scalar> cross_entropy_masked(const Tensor<Scalar>& logits, std::span<const int> targets,
                                    std::span<const std::type_identity_t<Scalar>> mask) {
  const Index vocab = detail::last_dim(logits.shape());
  const Index rows = logits.size() / vocab;
  if (static_cast<Index>(targets.size()) != rows || static_cast<Index>(mask.size()) != rows) {
    throw ShapeError("cross_entropy_masked: " + std::to_string(targets.size()) + " targets / " +
                     std::to_string(mask.size()) + " mask entries for logits " + shape_str(logits.shape()));
  }
  Scalar weight = 0;
  for (Scalar m : mask) weight += m;
  if (!(weight > 0)) throw DomainError("cross_entropy_masked: every position is masked");

  auto z = logits.matrix();
  RowMat<Scalar> probs(rows, vocab);
  Scalar total = 0;
  for (Index r = 0; r < rows; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= vocab) throw DomainError("cross_entropy_masked: target " + std::to_string(t) + " outside vocabulary");
    const Scalar mx = z.row(r).maxCoeff();
    probs.row(r) = (z.row(r).array() - mx).exp();
    const Scalar norm = probs.row(r).sum();
    probs.row(r) /= norm;
    const Scalar m = mask[static_cast<std::size_t>(r)];
    if (m != Scalar(0)) total += m * (std::log(norm) + mx - z(r, t));
  }
  Vec<Scalar> out(1);
  out[0] = total / weight;
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<Scalar> msk(mask.begin(), mask.end());
  return make_result<Scalar>({}, std::move(out), {logits.node()},
                             [rows, vocab, weight, probs = std::move(probs), tgt = std::move(tgt),
                              msk = std::move(msk)](Node<Scalar>& self) {
                               MatMap<Scalar> dz(detail::parent(self, 0).grad_buffer().data(), rows, vocab);
                               const Scalar g = self.grad[0] / weight;
                               for (Index r = 0; r < rows; ++r) {
                                 const Scalar m = msk[static_cast<std::size_t>(r)];
                                 if (m == Scalar(0)) continue;
                                 dz.row(r) += (g * m) * probs.row(r);
                                 dz(r, tgt[static_cast<std::size_t>(r)]) -= g * m;
                               }
                             });
}

// --- attention ----------------------------------------------------------------

struct AttentionLayout {
  Index n_heads = 1;
  Index head_dim = 1;
  bool multi_query = true;

  Index model_dim() const { return n_heads * head_dim; }
  Index fused_width() const { return multi_query ? model_dim() + 2 * head_dim : 3 * model_dim(); }
  Index key_col(Index head) const { return model_dim() + (multi_query ? 0 : head * head_dim); }
  Index value_col(Index head) const {
    return multi_query ? model_dim() + head_dim : 2 * model_dim() + head_dim * head;
  }
};

namespace detail {
template <typename Scalar>
using Strided = Eigen::Map<const RowMat<Scalar>, 0, Eigen::OuterStride<>>;
template <typename Scalar>
using MutStrided = Eigen::Map<RowMat<Scalar>, 0, Eigen::OuterStride<>>;
}  // namespace detail

/// Causal self-attention over a fused projection qkv[batch, seq, fused_width].
/// Returns [batch, seq, model_dim]. If `probs_out` is set it receives the
/// attention matrices, one seq x seq block per (batch, head).
template <typename Scalar>
Tensor<Scalar> causal_attention(const Tensor<Scalar>& qkv, AttentionLayout layout,
                                std::vector<RowMat<Scalar>>* probs_out = nullptr) {
  if (qkv.rank() != 3 || qkv.dim(2) != layout.fused_width()) {
    throw ShapeError("causal_attention: fused input " + shape_str(qkv.shape()) + " does not match width " +
                     std::to_string(layout.fused_width()));
  }
  const Index batch = qkv.dim(0), seq = qkv.dim(1), width = qkv.dim(2);
  const Index hd = layout.head_dim, d = layout.model_dim(), heads = layout.n_heads;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));
  const Scalar* base = qkv.data().data();
  Eigen::OuterStride<> in_stride(width), out_stride(d);

  Vec<Scalar> out(batch * seq * d);
  auto probs = std::make_shared<std::vector<RowMat<Scalar>>>(static_cast<std::size_t>(batch * heads));
  for (Index b = 0; b < batch; ++b) {
    const Scalar* rows = base + b * seq * width;
    for (Index h = 0; h < heads; ++h) {
      detail::Strided<Scalar> q(rows + h * hd, seq, hd, in_stride);
      detail::Strided<Scalar> k(rows + layout.key_col(h), seq, hd, in_stride);
      detail::Strided<Scalar> v(rows + layout.value_col(h), seq, hd, in_stride);
      RowMat<Scalar>& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
      p.noalias() = (q * k.transpose()) * inv_sqrt;
      for (Index i = 0; i < seq; ++i) {
        const Scalar mx = p.row(i).head(i + 1).maxCoeff();
        p.row(i).head(i + 1) = (p.row(i).head(i + 1).array() - mx).exp();
        p.row(i).head(i + 1) /= p.row(i).head(i + 1).sum();
        p.row(i).tail(seq - i - 1).setZero();
      }
      detail::MutStrided<Scalar>(out.data() + b * seq * d + h * hd, seq, hd, out_stride).noalias() = p * v;
    }
  }
  if (probs_out) *probs_out = *probs;
  return make_result<Scalar>({batch, seq, d}, std::move(out), {qkv.node()},
                             [batch, seq, width, layout, inv_sqrt, probs](Node<Scalar>& self) {
                               auto& px = detail::parent(self, 0);
                               const Index hd = layout.head_dim, d = layout.model_dim();
                               Scalar* grad_base = px.grad_buffer().data();
                               const Scalar* val_base = px.value.data();
                               Eigen::OuterStride<> in_stride(width), out_stride(d);
                               RowMat<Scalar> dp, ds;
                               for (Index b = 0; b < batch; ++b) {
                                 const Scalar* rows = val_base + b * seq * width;
                                 Scalar* grows = grad_base + b * seq * width;
                                 for (Index h = 0; h < layout.n_heads; ++h) {
                                   const RowMat<Scalar>& p = (*probs)[static_cast<std::size_t>(b * layout.n_heads + h)];
                                   detail::Strided<Scalar> q(rows + h * hd, seq, hd, in_stride);
                                   detail::Strided<Scalar> k(rows + layout.key_col(h), seq, hd, in_stride);
                                   detail::Strided<Scalar> v(rows + layout.value_col(h), seq, hd, in_stride);
                                   detail::Strided<Scalar> dout(self.grad.data() + b * seq * d + h * hd, seq, hd, out_stride);
                                   detail::MutStrided<Scalar> dq(grows + h * hd, seq, hd, in_stride);
                                   detail::MutStrided<Scalar> dk(grows + layout.key_col(h), seq, hd, in_stride);
                                   detail::MutStrided<Scalar> dv(grows + layout.value_col(h), seq, hd, in_stride);
                                   dp.noalias() = dout * v.transpose();
                                   dv.noalias() += p.transpose() * dout;
                                   const Vec<Scalar> row_dot = (dp.array() * p.array()).rowwise().sum();
                                   ds = p.array() * (dp.array().colwise() - row_dot.array());
                                   dq.noalias() += (ds * k) * inv_sqrt;
                                   dk.noalias() += (ds.transpose() * q) * inv_sqrt;
                                 }
                               }
                             });
}

// --- mixing -------------------------------------------------------------------

/// y[b, ...] = weights[b, column] * x[b, ...]; differentiable in both.
template <typename Scalar>
Tensor<Scalar> batch_scale(const Tensor<Scalar>& x, const Tensor<Scalar>& weights, Index column) {
  if (weights.rank() != 2 || x.rank() < 1 || x.dim(0) != weights.dim(0) || column < 0 || column >= weights.dim(1)) {
    throw ShapeError("batch_scale: input " + shape_str(x.shape()) + " vs weights " + shape_str(weights.shape()) +
                     " column " + std::to_string(column));
  }
  const Index batch = x.dim(0), per = x.size() / batch, cols = weights.dim(1);
  Vec<Scalar> out(x.size());
  for (Index b = 0; b < batch; ++b) {
    out.segment(b * per, per) = x.data().segment(b * per, per) * weights.data()[b * cols + column];
  }
  return make_result<Scalar>(x.shape(), std::move(out), {x.node(), weights.node()},
                             [batch, per, cols, column](Node<Scalar>& self) {
                               auto& px = detail::parent(self, 0);
                               auto& pw = detail::parent(self, 1);
                               for (Index b = 0; b < batch; ++b) {
                                 const auto dy = self.grad.segment(b * per, per);
                                 if (px.requires_grad) px.grad_buffer().segment(b * per, per) += dy * pw.value[b * cols + column];
                                 if (pw.requires_grad) pw.grad_buffer()[b * cols + column] += dy.dot(px.value.segment(b * per, per));
                               }
                             });
}

// --- non-differentiable ---------------------------------------------------

/// Arg-max along the last axis, lowest index on ties.
template <typename Scalar>
std::vector<int> argmax(const Tensor<Scalar>& x) {
  auto m = x.matrix();
  std::vector<int> result(static_cast<std::size_t>(m.rows()));
  for (Index r = 0; r < m.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < m.cols(); ++c) {
      if (m(r, c) > m(r, best)) best = c;
    }
    result[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return result;
}

}  // namespace xlate
