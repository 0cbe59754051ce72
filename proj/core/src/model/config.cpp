#include "fedda/model/config.hpp"

#include <stdexcept>
#include <string>

namespace fedda::model {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (volume_side == 0) fail("volume_side must be positive");
  if (patch_side == 0) fail("patch_side must be positive");
  if (volume_side % patch_side != 0) {
    fail("patch_side " + std::to_string(patch_side) + " does not divide volume_side " +
         std::to_string(volume_side));
  }
  if (gates == 0) fail("gates must be at least 1");
  if (embed_dim == 0) fail("embed_dim must be positive");
  if (heads == 0) fail("heads must be positive");
  if (embed_dim % heads != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
         std::to_string(heads));
  }
  if (blocks == 0) fail("blocks must be at least 1");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
}

}  // namespace fedda::model
