#pragma once

#include <cstddef>

namespace fedda::model {

// Geometry of the divided space-time transformer. Defaults follow the
// 32^3 two-gate setup.
struct ModelConfig {
  std::size_t volume_side = 32;
  std::size_t patch_side = 8;
  std::size_t gates = 2;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t blocks = 4;
  double layer_norm_eps = 1e-5;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;

  std::size_t patches_per_axis() const { return volume_side / patch_side; }
  std::size_t num_patches() const {
    const std::size_t n = patches_per_axis();
    return n * n * n;
  }
  std::size_t patch_voxels() const { return patch_side * patch_side * patch_side; }
  std::size_t patch_tokens() const { return num_patches() * gates; }
  std::size_t tokens() const { return 1 + patch_tokens(); }
  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t mlp_hidden() const { return 4 * embed_dim; }
  std::size_t output_voxels() const { return volume_side * volume_side * volume_side; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace fedda::model
