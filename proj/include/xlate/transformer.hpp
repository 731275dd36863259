#pragma once

// Decoder-only GPT-style backbone with fused-QKV (optionally multi-query)
// attention, learned absolute positions and a weight-tied output head.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "xlate/config.hpp"
#include "xlate/lora.hpp"
#include "xlate/ops.hpp"

namespace xlate {

template <typename Scalar>
struct BlockParams {
  Tensor<Scalar> ln1_gain, ln1_bias;
  Tensor<Scalar> qkv_weight, qkv_bias;    // [qkv_width, d]
  Tensor<Scalar> proj_weight, proj_bias;  // [d, d]
  Tensor<Scalar> ln2_gain, ln2_bias;
  Tensor<Scalar> up_weight, up_bias;      // [hidden, d]
  Tensor<Scalar> down_weight, down_bias;  // [d, hidden]

  Tensor<Scalar>& site_weight(SiteKind kind) {
    switch (kind) {
      case SiteKind::fused_qkv: return qkv_weight;
      case SiteKind::attn_proj: return proj_weight;
      case SiteKind::mlp_down_proj: return down_weight;
    }
    return qkv_weight;
  }
  const Tensor<Scalar>& site_weight(SiteKind kind) const { return const_cast<BlockParams*>(this)->site_weight(kind); }

  std::vector<std::pair<std::string, Tensor<Scalar>>> named_parameters() const {
    return {{"ln1.gain", ln1_gain},       {"ln1.bias", ln1_bias},   {"attn.qkv.weight", qkv_weight},
            {"attn.qkv.bias", qkv_bias},  {"attn.proj.weight", proj_weight}, {"attn.proj.bias", proj_bias},
            {"ln2.gain", ln2_gain},       {"ln2.bias", ln2_bias},   {"mlp.up.weight", up_weight},
            {"mlp.up.bias", up_bias},     {"mlp.down.weight", down_weight}, {"mlp.down.bias", down_bias}};
  }
};

template <typename Scalar>
struct Backbone {
  ModelConfig config;
  Tensor<Scalar> token_embedding;     // [vocab, d], also the output head
  Tensor<Scalar> position_embedding;  // [context, d]
  std::vector<BlockParams<Scalar>> blocks;
  Tensor<Scalar> final_gain, final_bias;

  std::vector<std::pair<std::string, Tensor<Scalar>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<Scalar>>> out{{"token_embedding", token_embedding},
                                                            {"position_embedding", position_embedding}};
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      for (auto& [name, t] : blocks[i].named_parameters()) out.emplace_back("block" + std::to_string(i) + "." + name, t);
    }
    out.emplace_back("final_ln.gain", final_gain);
    out.emplace_back("final_ln.bias", final_bias);
    return out;
  }

  void set_trainable(bool flag) {
    for (auto& [name, t] : named_parameters()) {
      Tensor<Scalar> handle = t;
      handle.set_requires_grad(flag);
    }
  }

  static Backbone init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    auto gaussian = [&](Shape shape) {
      Vec<Scalar> v(numel(shape));
      for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(normal(rng));
      return Tensor<Scalar>(std::move(shape), std::move(v));
    };
    auto ones = [](Index n) { return Tensor<Scalar>::constant({n}, Scalar(1)); };
    auto zeros = [](Index n) { return Tensor<Scalar>::zeros({n}); };

    const Index d = config.d_model, hidden = config.mlp_hidden(), w = config.qkv_width();
    Backbone bb;
    bb.config = config;
    bb.token_embedding = gaussian({config.vocab_size, d});
    bb.position_embedding = gaussian({config.context_len, d});
    for (int i = 0; i < config.n_blocks; ++i) {
      BlockParams<Scalar> blk;
      blk.ln1_gain = ones(d);
      blk.ln1_bias = zeros(d);
      blk.qkv_weight = gaussian({w, d});
      blk.qkv_bias = zeros(w);
      blk.proj_weight = gaussian({d, d});
      blk.proj_bias = zeros(d);
      blk.ln2_gain = ones(d);
      blk.ln2_bias = zeros(d);
      blk.up_weight = gaussian({hidden, d});
      blk.up_bias = zeros(hidden);
      blk.down_weight = gaussian({d, hidden});
      blk.down_bias = zeros(d);
      bb.blocks.push_back(std::move(blk));
    }
    bb.final_gain = ones(d);
    bb.final_bias = zeros(d);
    return bb;
  }

  /// Parameter count of the backbone for this configuration.
  static std::int64_t count_params(const ModelConfig& c) {
    const std::int64_t d = c.d_model, h = c.mlp_hidden(), w = c.qkv_width();
    const std::int64_t per_block = 4 * d + (w * d + w) + (d * d + d) + (h * d + h) + (d * h + d);
    return static_cast<std::int64_t>(c.vocab_size) * d + static_cast<std::int64_t>(c.context_len) * d +
           c.n_blocks * per_block + 2 * d;
  }
};

/// Row-major [batch, seq] token ids.
struct TokenBatch {
  Index batch = 0;
  Index seq = 0;
  std::vector<int> ids;

  static TokenBatch single(std::vector<int> tokens) {
    const auto n = static_cast<Index>(tokens.size());
    return {1, n, std::move(tokens)};
  }
};

struct ForwardOptions {
  bool training = false;           // enables LoRA branch dropout
  std::uint64_t dropout_seed = 0;  // mixed with the site index per call
};

/// Token + position embedding, [batch, seq, d]. `with_positions` false gives
/// token embeddings only.
template <typename Scalar>
Tensor<Scalar> embed(const Backbone<Scalar>& bb, const TokenBatch& tokens, bool with_positions = true) {
  if (tokens.seq > bb.config.context_len) {
    throw ContextError("sequence of " + std::to_string(tokens.seq) + " tokens exceeds context length " +
                       std::to_string(bb.config.context_len));
  }
  if (static_cast<Index>(tokens.ids.size()) != tokens.batch * tokens.seq) {
    throw ShapeError("token batch holds " + std::to_string(tokens.ids.size()) + " ids for [" +
                     std::to_string(tokens.batch) + "x" + std::to_string(tokens.seq) + "]");
  }
  Tensor<Scalar> tok = embedding(bb.token_embedding, std::span<const int>(tokens.ids), {tokens.batch, tokens.seq});
  if (!with_positions) return tok;
  std::vector<int> positions(tokens.ids.size());
  for (Index b = 0; b < tokens.batch; ++b) {
    for (Index t = 0; t < tokens.seq; ++t) positions[static_cast<std::size_t>(b * tokens.seq + t)] = static_cast<int>(t);
  }
  return add(tok, embedding(bb.position_embedding, std::span<const int>(positions), {tokens.batch, tokens.seq}));
}

/// Runs the blocks and the tied output head on an already embedded input.
/// Returns logits [batch, seq, vocab].
template <typename Scalar>
Tensor<Scalar> forward_from_embedding(const Backbone<Scalar>& bb, const std::vector<LoraExpert<Scalar>>& experts,
                                      const Tensor<Scalar>& embedded, const ExpertMix<Scalar>& mix,
                                      const ForwardOptions& options,
                                      std::vector<std::vector<RowMat<Scalar>>>* attention_probs = nullptr) {
  const ModelConfig& c = bb.config;
  const AttentionLayout layout{c.n_heads, c.head_dim, c.multi_query};
  auto site_seed = [&](int site) { return options.dropout_seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(site) + 1; };

  Tensor<Scalar> h = embedded;
  for (int i = 0; i < c.n_blocks; ++i) {
    const auto& blk = bb.blocks[static_cast<std::size_t>(i)];
    Tensor<Scalar> a = layer_norm(h, blk.ln1_gain, blk.ln1_bias);
    const int qkv_site = site_index(i, SiteKind::fused_qkv);
    Tensor<Scalar> qkv = lora_forward(a, blk.qkv_weight, blk.qkv_bias, experts, qkv_site, mix, options.training, site_seed(qkv_site));
    std::vector<RowMat<Scalar>> probs;
    Tensor<Scalar> att = causal_attention(qkv, layout, attention_probs ? &probs : nullptr);
    if (attention_probs) attention_probs->push_back(std::move(probs));
    const int proj_site = site_index(i, SiteKind::attn_proj);
    h = add(h, lora_forward(att, blk.proj_weight, blk.proj_bias, experts, proj_site, mix, options.training, site_seed(proj_site)));

    Tensor<Scalar> m = layer_norm(h, blk.ln2_gain, blk.ln2_bias);
    Tensor<Scalar> up = gelu(linear(m, blk.up_weight, blk.up_bias));
    const int down_site = site_index(i, SiteKind::mlp_down_proj);
    h = add(h, lora_forward(up, blk.down_weight, blk.down_bias, experts, down_site, mix, options.training, site_seed(down_site)));
  }
  h = layer_norm(h, bb.final_gain, bb.final_bias);
  return linear(h, bb.token_embedding);
}

}  // namespace xlate
