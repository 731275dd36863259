#pragma once

// Routing network: a linear layer applied to the embedded input, max-pooled
// over the sequence and softmaxed into one probability per expert.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "xlate/lora.hpp"
#include "xlate/ops.hpp"

namespace xlate {

template <typename Scalar>
struct GateNetwork {
  Tensor<Scalar> weight;  // [d_model, n_experts]
  Tensor<Scalar> bias;    // [n_experts]

  Index n_experts() const { return weight.dim(1); }

  static GateNetwork init(Index d_model, Index n_experts, std::uint64_t seed, double stddev = 0.02) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, stddev);
    Vec<Scalar> w(d_model * n_experts);
    for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(normal(rng));
    return {Tensor<Scalar>({d_model, n_experts}, std::move(w)), Tensor<Scalar>::zeros({n_experts})};
  }

  void set_trainable(bool flag) {
    weight.set_requires_grad(flag);
    bias.set_requires_grad(flag);
  }
};

inline std::int64_t count_gate_params(std::int64_t d_model, std::int64_t n_experts) {
  return d_model * n_experts + n_experts;
}

/// embedded [batch, seq, d] -> probabilities [batch, n_experts].
/// `lengths` (optional) limits pooling to each sample's prompt.
template <typename Scalar>
Tensor<Scalar> gate_probs(const GateNetwork<Scalar>& gate, const Tensor<Scalar>& embedded, std::span<const int> lengths = {}) {
  if (embedded.rank() != 3) throw ShapeError("gate_probs: expected [batch,seq,d], got " + shape_str(embedded.shape()));
  if (embedded.dim(1) < 1) throw DomainError("gate_probs: empty sequence");
  const Index batch = embedded.dim(0), seq = embedded.dim(1), d = embedded.dim(2);
  Tensor<Scalar> flat = reshape(embedded, {batch * seq, d});
  Tensor<Scalar> logits = matmul(flat, gate.weight);
  logits = reshape(add_bias(logits, gate.bias), {batch, seq, gate.n_experts()});
  return softmax(max_over_sequence(logits, lengths), 1);
}

/// Arg-max of a probability vector, lowest index on ties.
template <typename Scalar>
int select_expert(std::span<const Scalar> g) {
  int best = 0;
  for (std::size_t i = 1; i < g.size(); ++i) {
    if (g[i] > g[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

enum class RouteMode { none, infer, train };

/// Per-request routing decision consumed by every LoRA site.
template <typename Scalar>
struct RoutingContext {
  RouteMode mode = RouteMode::none;
  Tensor<Scalar> weights;     // train: [batch, n_experts], rows sum to 1
  std::vector<int> selected;  // infer: one expert per batch row

  static RoutingContext backbone_only() { return {}; }

  /// Infer-mode context that pins every batch row to `expert`.
  static RoutingContext fixed(int expert, Index batch = 1) {
    RoutingContext ctx;
    ctx.mode = RouteMode::infer;
    ctx.selected.assign(static_cast<std::size_t>(batch), expert);
    return ctx;
  }

  static RoutingContext from_probs(const Tensor<Scalar>& probs, RouteMode mode) {
    RoutingContext ctx;
    ctx.mode = mode;
    if (mode == RouteMode::train) {
      ctx.weights = probs;
    } else if (mode == RouteMode::infer) {
      const Index n = probs.dim(1);
      for (Index b = 0; b < probs.dim(0); ++b) {
        ctx.selected.push_back(select_expert(std::span<const Scalar>(probs.data().data() + b * n, static_cast<std::size_t>(n))));
      }
    }
    return ctx;
  }

  ExpertMix<Scalar> to_mix() const;
};

template <typename Scalar>
ExpertMix<Scalar> RoutingContext<Scalar>::to_mix() const {
  ExpertMix<Scalar> mix;
  switch (mode) {
    case RouteMode::none: break;
    case RouteMode::train:
      mix.kind = ExpertMix<Scalar>::Kind::weighted;
      mix.weights = weights;
      break;
    case RouteMode::infer: {
      bool uniform = !selected.empty();
      for (int e : selected) uniform = uniform && e == selected.front();
      if (uniform) {
        mix.kind = ExpertMix<Scalar>::Kind::single;
        mix.expert = selected.front();
      } else {
        mix.kind = ExpertMix<Scalar>::Kind::per_sample;
        mix.per_batch = selected;
      }
      break;
    }
  }
  return mix;
}

}  // namespace xlate
