#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "xlate/errors.hpp"
#include "xlate/tensor.hpp"

namespace xlate {

/// Architecture hyper-parameters of the decoder-only backbone.
struct ModelConfig {
  int n_blocks = 2;
  int d_model = 64;
  int n_heads = 4;
  int head_dim = 16;
  bool multi_query = true;  // one shared key/value head
  int mlp_ratio = 4;
  int vocab_size = 0;
  int context_len = 256;
  int n_experts = 5;
  bool gate_uses_position = true;  // gate reads token+position embeddings

  Index qkv_width() const { return multi_query ? d_model + 2 * head_dim : 3 * d_model; }
  Index mlp_hidden() const { return static_cast<Index>(mlp_ratio) * d_model; }

  void validate() const {
    if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
    if (context_len < 1) throw ConfigError("context_len must be >= 1");
    if (n_heads < 1 || head_dim < 1 || d_model != n_heads * head_dim) {
      throw ConfigError("d_model (" + std::to_string(d_model) + ") must equal n_heads x head_dim (" +
                        std::to_string(n_heads) + " x " + std::to_string(head_dim) + ")");
    }
    if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
    if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
    if (n_experts < 1) throw ConfigError("n_experts must be >= 1");
  }

  /// CPU-sized default used for the toy pipeline.
  static ModelConfig desk(int vocab_size) {
    ModelConfig c;
    c.n_blocks = 3;
    c.d_model = 128;
    c.n_heads = 4;
    c.head_dim = 32;
    c.context_len = 384;
    c.vocab_size = vocab_size;
    return c;
  }

  /// Full-size 15.5B backbone dimensions. Only used for parameter accounting; never
  /// instantiated with weights.
  static ModelConfig full_scale() {
    ModelConfig c;
    c.n_blocks = 40;
    c.d_model = 6144;
    c.head_dim = 128;
    c.n_heads = 48;
    c.multi_query = true;
    c.mlp_ratio = 4;
    c.vocab_size = 49152;
    c.context_len = 8192;
    c.n_experts = 5;
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Low-rank adapter hyper-parameters; defaults are rank 4, alpha 32, dropout 0.05.
struct LoraSettings {
  int rank = 4;
  double alpha = 32.0;
  double dropout = 0.05;

  bool operator==(const LoraSettings&) const = default;
};

/// The three adapted matrices of every block.
enum class SiteKind { fused_qkv = 0, attn_proj = 1, mlp_down_proj = 2 };

inline constexpr std::array<SiteKind, 3> kSiteKinds{SiteKind::fused_qkv, SiteKind::attn_proj, SiteKind::mlp_down_proj};

inline const char* site_name(SiteKind kind) {
  switch (kind) {
    case SiteKind::fused_qkv: return "fused_qkv";
    case SiteKind::attn_proj: return "attn_proj";
    case SiteKind::mlp_down_proj: return "mlp_down_proj";
  }
  return "?";
}

struct LoraSite {
  int block_index = 0;
  SiteKind kind = SiteKind::fused_qkv;
  Index d_out = 0;
  Index d_in = 0;
};

inline LoraSite site_shape(const ModelConfig& config, int block, SiteKind kind) {
  switch (kind) {
    case SiteKind::fused_qkv: return {block, kind, config.qkv_width(), config.d_model};
    case SiteKind::attn_proj: return {block, kind, config.d_model, config.d_model};
    case SiteKind::mlp_down_proj: return {block, kind, config.d_model, config.mlp_hidden()};
  }
  return {};
}

inline int site_index(int block, SiteKind kind) { return block * 3 + static_cast<int>(kind); }

}  // namespace xlate
