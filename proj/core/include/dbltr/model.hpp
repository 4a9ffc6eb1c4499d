#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dbltr/autodiff.hpp"

namespace dbltr {

struct ModelConfig {
  std::size_t input_dim = 16;
  // Widths of the backbone's affine+relu layers; empty means the backbone is
  // the identity and the embedding is the raw input.
  std::vector<std::size_t> backbone_widths = {64, 32};
  std::size_t num_classes = 10;
  std::size_t projection_hidden = 0;  // 0: same as embedding dim
  std::size_t projection_dim = 0;     // 0: half the embedding dim

  std::size_t embedding_dim() const {
    return backbone_widths.empty() ? input_dim : backbone_widths.back();
  }
  std::size_t resolved_projection_hidden() const {
    return projection_hidden ? projection_hidden : embedding_dim();
  }
  std::size_t resolved_projection_dim() const {
    return projection_dim ? projection_dim : std::max<std::size_t>(1, embedding_dim() / 2);
  }
  void validate() const;
};

// All trainable parameters as graph leaves. Weights are [out, in]; biases [out].
struct ModelParams {
  struct Layer {
    Value weight;
    Value bias;
  };
  std::vector<Layer> backbone;
  Layer classifier;   // [C, e], [C]
  Layer proj_hidden;  // [h, e], [h]
  Layer proj_out;     // [p, h], [p]

  struct Param {
    Value value;
    bool is_bias;
  };
  // Stable enumeration used by the optimizer and the checkpoint format.
  std::vector<Param> parameters() const;
  ModelParams clone() const;
  void check_finite() const;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)); biases zero.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

Value backbone_forward(const ModelParams& params, const Value& x);      // [B,d] -> [B,e]
Value classifier_forward(const ModelParams& params, const Value& emb);  // [B,e] -> [B,C]
Value projection_forward(const ModelParams& params, const Value& emb);  // [B,e] -> [B,p]

// Named-array checkpoint in the same binary container family as datasets;
// round-trips bit-exactly.
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

}  // namespace dbltr
