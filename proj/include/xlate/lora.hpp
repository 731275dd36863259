#pragma once

// Low-rank adapter experts: one (A, B) pair per adapted site, with
// delta W = (alpha / r) * B * A.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "xlate/config.hpp"
#include "xlate/ops.hpp"

namespace xlate {

template <typename Scalar>
struct LoraPair {
  Tensor<Scalar> a;  // [r, d_in]
  Tensor<Scalar> b;  // [d_out, r]
};

template <typename Scalar>
struct LoraExpert {
  std::string tag;
  LoraSettings settings;
  std::vector<LoraPair<Scalar>> sites;  // indexed by site_index(block, kind)

  Scalar scaling() const { return static_cast<Scalar>(settings.alpha / settings.rank); }
  const LoraPair<Scalar>& at(int block, SiteKind kind) const { return sites.at(static_cast<std::size_t>(site_index(block, kind))); }
  LoraPair<Scalar>& at(int block, SiteKind kind) { return sites.at(static_cast<std::size_t>(site_index(block, kind))); }

  std::vector<std::pair<std::string, Tensor<Scalar>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<Scalar>>> out;
    for (std::size_t i = 0; i < sites.size(); ++i) {
      const auto block = std::to_string(i / 3);
      const std::string site = site_name(kSiteKinds[i % 3]);
      out.emplace_back("block" + block + "." + site + ".A", sites[i].a);
      out.emplace_back("block" + block + "." + site + ".B", sites[i].b);
    }
    return out;
  }

  void set_trainable(bool flag) {
    for (auto& s : sites) {
      s.a.set_requires_grad(flag);
      s.b.set_requires_grad(flag);
    }
  }
};

/// A ~ N(0, 0.02^2), B = 0, so a fresh expert leaves the backbone function unchanged.
template <typename Scalar>
LoraExpert<Scalar> init_expert(const ModelConfig& config, const LoraSettings& settings, std::string tag, std::uint64_t seed) {
  config.validate();
  if (settings.rank < 0) throw ConfigError("LoRA rank must be >= 0");
  LoraExpert<Scalar> expert{std::move(tag), settings, {}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (int block = 0; block < config.n_blocks; ++block) {
    for (SiteKind kind : kSiteKinds) {
      const LoraSite s = site_shape(config, block, kind);
      Vec<Scalar> a(settings.rank * s.d_in);
      for (Index i = 0; i < a.size(); ++i) a[i] = static_cast<Scalar>(normal(rng));
      expert.sites.push_back({Tensor<Scalar>({settings.rank, s.d_in}, std::move(a)),
                              Tensor<Scalar>::zeros({s.d_out, settings.rank})});
    }
  }
  return expert;
}

/// Sum over adapted sites of r * (d_in + d_out).
inline std::int64_t count_lora_params(const ModelConfig& config, int rank) {
  std::int64_t total = 0;
  for (int block = 0; block < config.n_blocks; ++block) {
    for (SiteKind kind : kSiteKinds) {
      const LoraSite s = site_shape(config, block, kind);
      total += static_cast<std::int64_t>(rank) * (s.d_in + s.d_out);
    }
  }
  return total;
}

/// (alpha / r) * B * A as a dense [d_out, d_in] matrix.
template <typename Scalar>
RowMat<Scalar> delta_weight(const LoraPair<Scalar>& pair, Scalar scaling) {
  return scaling * (pair.b.matrix() * pair.a.matrix());
}

/// Rounding residual left by a merge. Subtracting delta W alone does not in
/// general give back the original bits, so the residual is kept alongside.
template <typename Scalar>
struct MergeResidual {
  RowMat<Scalar> delta;
  RowMat<Scalar> residual;
};

/// W <- W + (alpha / r) * B * A, in place.
template <typename Scalar>
MergeResidual<Scalar> merge(Tensor<Scalar>& weight, const LoraPair<Scalar>& pair, Scalar scaling) {
  RowMat<Scalar> delta = delta_weight(pair, scaling);
  if (delta.rows() != weight.dim(0) || delta.cols() != weight.dim(1)) {
    throw ShapeError("merge: delta [" + std::to_string(delta.rows()) + "x" + std::to_string(delta.cols()) +
                     "] does not match weight " + shape_str(weight.shape()));
  }
  auto w = weight.mutable_matrix();
  const RowMat<Scalar> original = w;
  w += delta;
  // original - ((original + delta) - delta) is exact for any realistic magnitude ratio.
  RowMat<Scalar> residual = original - (w - delta);
  return {std::move(delta), std::move(residual)};
}

/// Inverse of merge: subtract the stored delta and restore the rounding residual.
template <typename Scalar>
void unmerge(Tensor<Scalar>& weight, const MergeResidual<Scalar>& merged) {
  auto w = weight.mutable_matrix();
  if (merged.delta.rows() != w.rows() || merged.delta.cols() != w.cols()) {
    throw ShapeError("unmerge: stored delta does not match weight " + shape_str(weight.shape()));
  }
  w -= merged.delta;
  w += merged.residual;
}

/// How a LoRA site combines experts with the frozen base weight.
template <typename Scalar>
struct ExpertMix {
  enum class Kind { none, single, per_sample, weighted };
  Kind kind = Kind::none;
  int expert = -1;             // single
  std::vector<int> per_batch;  // per_sample: one expert index per batch row
  Tensor<Scalar> weights;      // weighted: [batch, n_experts]
};

/// y = W x + b + sum_e w_e * (alpha/r) * B_e (A_e drop(x)).
/// Dropout on the branch input is active only when `training` is set.
template <typename Scalar>
Tensor<Scalar> lora_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                            const std::vector<LoraExpert<Scalar>>& experts, int site, const ExpertMix<Scalar>& mix,
                            bool training, std::uint64_t dropout_seed) {
  Tensor<Scalar> y = linear(x, weight, bias);
  if (mix.kind == ExpertMix<Scalar>::Kind::none) return y;

  auto branch_input = [&](const LoraExpert<Scalar>& e) {
    return training ? dropout(x, e.settings.dropout, dropout_seed) : x;
  };
  auto branch = [&](const LoraExpert<Scalar>& e, const Tensor<Scalar>& in) {
    const auto& pair = e.sites.at(static_cast<std::size_t>(site));
    return scale(linear(linear(in, pair.a), pair.b), e.scaling());
  };

  switch (mix.kind) {
    case ExpertMix<Scalar>::Kind::single: {
      const auto& e = experts.at(static_cast<std::size_t>(mix.expert));
      return add(y, branch(e, branch_input(e)));
    }
    case ExpertMix<Scalar>::Kind::per_sample: {
      const Index batch = x.dim(0);
      if (static_cast<Index>(mix.per_batch.size()) != batch) {
        throw ContractError("lora_forward: " + std::to_string(mix.per_batch.size()) + " expert indices for batch " +
                            std::to_string(batch));
      }
      const Index n = static_cast<Index>(experts.size());
      Tensor<Scalar> onehot = Tensor<Scalar>::zeros({batch, n});
      std::vector<bool> used(experts.size(), false);
      for (Index b = 0; b < batch; ++b) {
        const int e = mix.per_batch[static_cast<std::size_t>(b)];
        if (e < 0 || e >= n) throw ContractError("lora_forward: expert index " + std::to_string(e) + " out of range");
        onehot.mutable_data()[b * n + e] = Scalar(1);
        used[static_cast<std::size_t>(e)] = true;
      }
      for (std::size_t e = 0; e < experts.size(); ++e) {
        if (used[e]) y = add(y, batch_scale(branch(experts[e], branch_input(experts[e])), onehot, static_cast<Index>(e)));
      }
      return y;
    }
    case ExpertMix<Scalar>::Kind::weighted: {
      if (mix.weights.rank() != 2 || mix.weights.dim(1) != static_cast<Index>(experts.size())) {
        throw ContractError("lora_forward: weight vector of shape " + shape_str(mix.weights.shape()) + " for " +
                            std::to_string(experts.size()) + " experts");
      }
      for (std::size_t e = 0; e < experts.size(); ++e) {
        y = add(y, batch_scale(branch(experts[e], branch_input(experts[e])), mix.weights, static_cast<Index>(e)));
      }
      return y;
    }
    case ExpertMix<Scalar>::Kind::none: break;
  }
  return y;
}

}  // namespace xlate
