#include "fedda/model/volume.hpp"

#include <cmath>
#include <string>

namespace fedda::model {

void GatedVolumeSequence::validate() const {
  if (side == 0 || gates == 0) throw std::invalid_argument("volume sequence: empty geometry");
  if (voxels.size() != gate_size() * gates) {
    throw std::invalid_argument("volume sequence: voxel count " + std::to_string(voxels.size()) +
                                " does not match " + std::to_string(side) + "^3 x " +
                                std::to_string(gates));
  }
  for (float v : voxels) {
    if (!std::isfinite(v)) throw std::invalid_argument("volume sequence: non-finite intensity");
  }
  auto check_masks = [&](const std::vector<Mask>& masks, const char* name) {
    if (masks.empty()) return;
    if (masks.size() != gates) {
      throw std::invalid_argument(std::string(name) + " mask count does not match gates");
    }
    for (const auto& m : masks) {
      if (m.dims != std::array<std::size_t, 3>{side, side, side}) {
        throw std::invalid_argument(std::string(name) + " mask has wrong dimensions");
      }
      for (auto v : m.values) {
        if (v > 1) throw std::invalid_argument(std::string(name) + " mask is not binary");
      }
    }
  };
  check_masks(endo, "endo");
  check_masks(epi, "epi");
  if (!endo.empty() && !epi.empty()) {
    for (std::size_t t = 0; t < gates; ++t) {
      for (std::size_t i = 0; i < endo[t].size(); ++i) {
        if (endo[t].values[i] && !epi[t].values[i]) {
          throw std::invalid_argument("endo mask not contained in epi mask at gate " +
                                      std::to_string(t));
        }
      }
    }
  }
}

const char* to_string(Structure s) { return s == Structure::kEndo ? "endo" : "epi"; }

Structure parse_structure(const std::string& s) {
  if (s == "endo") return Structure::kEndo;
  if (s == "epi") return Structure::kEpi;
  throw std::invalid_argument("unknown structure '" + s + "' (expected endo or epi)");
}

GatedVolumeSequence cyclic_window(const GatedVolumeSequence& seq, std::size_t start,
                                  std::size_t length) {
  if (length == 0 || seq.gates == 0) throw std::invalid_argument("cyclic_window: empty window");
  GatedVolumeSequence out(seq.side, length);
  const std::size_t g = seq.gate_size();
  for (std::size_t i = 0; i < length; ++i) {
    const std::size_t src = (start + i) % seq.gates;
    std::copy_n(seq.voxels.begin() + src * g, g, out.voxels.begin() + i * g);
    if (!seq.endo.empty()) out.endo.push_back(seq.endo[src]);
    if (!seq.epi.empty()) out.epi.push_back(seq.epi[src]);
  }
  return out;
}

}  // namespace fedda::model
