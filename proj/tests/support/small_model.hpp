#pragma once

#include <random>

#include "xlate/model.hpp"

namespace xlate::testing {

inline ModelConfig tiny_config(int vocab = 11, bool multi_query = true, int n_blocks = 1) {
  ModelConfig c;
  c.n_blocks = n_blocks;
  c.d_model = 8;
  c.n_heads = 2;
  c.head_dim = 4;
  c.multi_query = multi_query;
  c.mlp_ratio = 2;
  c.vocab_size = vocab;
  c.context_len = 16;
  c.n_experts = 3;
  return c;
}

/// Experts with nonzero B so every branch contributes.
template <typename Scalar>
Model<Scalar> tiny_model(const ModelConfig& c, std::uint64_t seed, int rank = 2) {
  Model<Scalar> m;
  m.backbone = Backbone<Scalar>::init(c, seed);
  LoraSettings s;
  s.rank = rank;
  s.alpha = 4.0;
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> normal(0.0, 0.3);
  for (int e = 0; e < c.n_experts; ++e) {
    auto expert = init_expert<Scalar>(c, s, "e" + std::to_string(e), seed + 10 + static_cast<std::uint64_t>(e));
    for (auto& site : expert.sites) {
      for (Index i = 0; i < site.b.size(); ++i) site.b.mutable_data()[i] = static_cast<Scalar>(normal(rng));
    }
    m.experts.push_back(std::move(expert));
  }
  m.gate = GateNetwork<Scalar>::init(c.d_model, c.n_experts, seed + 2, 0.5);
  return m;
}

inline TokenBatch random_tokens(Index batch, Index seq, int vocab, std::mt19937_64& rng) {
  TokenBatch t{batch, seq, {}};
  for (Index i = 0; i < batch * seq; ++i) t.ids.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(vocab)));
  return t;
}

}  // namespace xlate::testing
