#pragma once

// The assembled translator: frozen backbone, per-language LoRA experts and the
// routing gate, plus greedy generation.

#include <optional>
#include <string>
#include <vector>

#include "xlate/gate.hpp"
#include "xlate/lora.hpp"
#include "xlate/transformer.hpp"

namespace xlate {

template <typename Scalar>
struct Model {
  Backbone<Scalar> backbone;
  std::vector<LoraExpert<Scalar>> experts;
  std::optional<GateNetwork<Scalar>> gate;

  const ModelConfig& config() const { return backbone.config; }

  int expert_index(const std::string& tag) const {
    for (std::size_t i = 0; i < experts.size(); ++i) {
      if (experts[i].tag == tag) return static_cast<int>(i);
    }
    return -1;
  }

  /// Freezes everything; callers then unfreeze the group they train.
  void freeze_all() {
    backbone.set_trainable(false);
    for (auto& e : experts) e.set_trainable(false);
    if (gate) gate->set_trainable(false);
  }
};

/// Routes a batch: embeds it, runs the gate over each sample's first
/// `prompt_lengths[b]` positions (all positions when empty) and keeps either
/// the probability rows (train) or their arg-max (infer).
template <typename Scalar>
RoutingContext<Scalar> route(const Model<Scalar>& model, const TokenBatch& tokens, RouteMode mode,
                             std::span<const int> prompt_lengths = {}) {
  if (mode == RouteMode::none) return RoutingContext<Scalar>::backbone_only();
  if (!model.gate) throw ContractError("route: model has no gate");
  if (static_cast<Index>(model.experts.size()) != model.gate->n_experts()) {
    throw ContractError("route: gate has " + std::to_string(model.gate->n_experts()) + " outputs for " +
                        std::to_string(model.experts.size()) + " experts");
  }
  const Tensor<Scalar> embedded = embed(model.backbone, tokens, model.config().gate_uses_position);
  return RoutingContext<Scalar>::from_probs(gate_probs(*model.gate, embedded, prompt_lengths), mode);
}

/// logits [batch, seq, vocab] for the given routing decision.
template <typename Scalar>
Tensor<Scalar> forward_logits(const Model<Scalar>& model, const TokenBatch& tokens, const RoutingContext<Scalar>& routing,
                              const ForwardOptions& options = {}) {
  const ExpertMix<Scalar> mix = routing.to_mix();
  if (mix.kind != ExpertMix<Scalar>::Kind::none && model.experts.empty()) throw ContractError("forward_logits: no experts loaded");
  if (mix.kind == ExpertMix<Scalar>::Kind::single &&
      (mix.expert < 0 || mix.expert >= static_cast<int>(model.experts.size()))) {
    throw ContractError("forward_logits: expert index " + std::to_string(mix.expert) + " out of range");
  }
  return forward_from_embedding(model.backbone, model.experts, embed(model.backbone, tokens), mix, options);
}

/// Incremental greedy decoder. The chosen expert is merged into private copies
/// of the adapted weights once, so each step costs one matmul per site.
template <typename Scalar>
class Decoder {
 public:
  Decoder(const Model<Scalar>& model, int expert) : bb_(model.backbone) {
    const ModelConfig& c = bb_.config;
    for (int i = 0; i < c.n_blocks; ++i) {
      const auto& blk = bb_.blocks[static_cast<std::size_t>(i)];
      Weights w{blk.qkv_weight.matrix(), blk.proj_weight.matrix(), blk.down_weight.matrix()};
      if (expert >= 0) {
        const auto& e = model.experts.at(static_cast<std::size_t>(expert));
        w.qkv += delta_weight(e.at(i, SiteKind::fused_qkv), e.scaling());
        w.proj += delta_weight(e.at(i, SiteKind::attn_proj), e.scaling());
        w.down += delta_weight(e.at(i, SiteKind::mlp_down_proj), e.scaling());
      }
      merged_.push_back(std::move(w));
      keys_.emplace_back(c.context_len, c.multi_query ? c.head_dim : c.d_model);
      values_.emplace_back(c.context_len, c.multi_query ? c.head_dim : c.d_model);
    }
  }

  Index position() const { return pos_; }

  /// Feeds one token and returns the next-token logits.
  Vec<Scalar> step(int token) {
    const ModelConfig& c = bb_.config;
    if (pos_ >= c.context_len) throw ContextError("decoder exceeded context length " + std::to_string(c.context_len));
    if (token < 0 || token >= c.vocab_size) throw DomainError("decoder: token id " + std::to_string(token) + " outside vocabulary");
    const Index d = c.d_model, hd = c.head_dim;
    Vec<Scalar> h = bb_.token_embedding.matrix().row(token).transpose() + bb_.position_embedding.matrix().row(pos_).transpose();
    const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));
    for (int i = 0; i < c.n_blocks; ++i) {
      const auto& blk = bb_.blocks[static_cast<std::size_t>(i)];
      const Weights& w = merged_[static_cast<std::size_t>(i)];
      Vec<Scalar> qkv = w.qkv * norm(h, blk.ln1_gain, blk.ln1_bias) + blk.qkv_bias.data();
      auto& kc = keys_[static_cast<std::size_t>(i)];
      auto& vc = values_[static_cast<std::size_t>(i)];
      const Index kv_width = kc.cols();
      kc.row(pos_) = qkv.segment(d, kv_width).transpose();
      vc.row(pos_) = qkv.segment(d + kv_width, kv_width).transpose();
      Vec<Scalar> att(d);
      for (Index head = 0; head < c.n_heads; ++head) {
        const Index kv_col = c.multi_query ? 0 : head * hd;
        Vec<Scalar> scores = kc.block(0, kv_col, pos_ + 1, hd) * qkv.segment(head * hd, hd) * inv_sqrt;
        scores = (scores.array() - scores.maxCoeff()).exp();
        scores /= scores.sum();
        att.segment(head * hd, hd) = vc.block(0, kv_col, pos_ + 1, hd).transpose() * scores;
      }
      h += w.proj * att + blk.proj_bias.data();
      Vec<Scalar> up = blk.up_weight.matrix() * norm(h, blk.ln2_gain, blk.ln2_bias) + blk.up_bias.data();
      h += w.down * gelu_vec(up) + blk.down_bias.data();
    }
    ++pos_;
    return bb_.token_embedding.matrix() * norm(h, bb_.final_gain, bb_.final_bias);
  }

 private:
  struct Weights {
    RowMat<Scalar> qkv, proj, down;
  };

  static Vec<Scalar> norm(const Vec<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias) {
    const Scalar mu = x.mean();
    const Scalar var = (x.array() - mu).square().mean();
    return (((x.array() - mu) / std::sqrt(var + Scalar(1e-5))) * gain.data().array() + bias.data().array()).matrix();
  }

  static Vec<Scalar> gelu_vec(const Vec<Scalar>& v) {
    constexpr Scalar c = Scalar(0.7978845608028654);
    constexpr Scalar k = Scalar(0.044715);
    return (Scalar(0.5) * v.array() * (Scalar(1) + (c * (v.array() + k * v.array().cube())).tanh())).matrix();
  }

  const Backbone<Scalar>& bb_;
  std::vector<Weights> merged_;
  std::vector<RowMat<Scalar>> keys_, values_;
  Index pos_ = 0;
};

struct GenerateOptions {
  int max_new_tokens = 128;
  int end_token = -1;  // stop after emitting this id
};

template <typename Scalar>
struct Generation {
  std::vector<int> tokens;  // prompt followed by the generated ids
  int expert = -1;          // -1: backbone only
  Scalar expert_probability = Scalar(0);
  std::vector<Scalar> gate_probs;
};

/// Greedy decoding. Routing is computed once from the prompt: by the gate when
/// `forced_expert` is unset and the model has one, otherwise as given
/// (-1 = backbone only).
template <typename Scalar>
Generation<Scalar> generate(const Model<Scalar>& model, const std::vector<int>& prompt, const GenerateOptions& options,
                            std::optional<int> forced_expert = std::nullopt) {
  if (prompt.empty()) throw ContractError("generate: empty prompt");
  const ModelConfig& c = model.config();
  if (static_cast<Index>(prompt.size()) > c.context_len) {
    throw ContextError("prompt of " + std::to_string(prompt.size()) + " tokens exceeds context length " +
                       std::to_string(c.context_len));
  }
  NoGradGuard no_grad;
  Generation<Scalar> result;
  result.tokens = prompt;
  if (forced_expert) {
    result.expert = *forced_expert;
  } else if (model.gate) {
    const TokenBatch batch = TokenBatch::single(prompt);
    const Tensor<Scalar> probs = gate_probs(*model.gate, embed(model.backbone, batch, c.gate_uses_position));
    result.gate_probs.assign(probs.data().data(), probs.data().data() + probs.size());
    result.expert = select_expert(std::span<const Scalar>(result.gate_probs));
    result.expert_probability = result.gate_probs[static_cast<std::size_t>(result.expert)];
  }
  if (options.max_new_tokens <= 0) return result;

  Decoder<Scalar> decoder(model, result.expert);
  Vec<Scalar> logits;
  for (int t : prompt) logits = decoder.step(t);
  for (int produced = 0; produced < options.max_new_tokens; ++produced) {
    Index next = 0;
    for (Index v = 1; v < logits.size(); ++v) {
      if (logits[v] > logits[next]) next = v;
    }
    result.tokens.push_back(static_cast<int>(next));
    if (static_cast<int>(next) == options.end_token || decoder.position() >= c.context_len) break;
    logits = decoder.step(static_cast<int>(next));
  }
  return result;
}

}  // namespace xlate
