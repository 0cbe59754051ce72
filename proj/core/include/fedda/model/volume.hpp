#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedda::model {

// Dense 3-D array indexed (z, y, x) with x fastest.
template <typename T>
struct Volume {
  std::array<std::size_t, 3> dims{0, 0, 0};  // {depth, height, width}
  std::vector<T> values;

  Volume() = default;
  Volume(std::array<std::size_t, 3> d, T fill = T{})
      : dims(d), values(d[0] * d[1] * d[2], fill) {}
  static Volume cube(std::size_t side, T fill = T{}) { return Volume({side, side, side}, fill); }

  std::size_t size() const { return values.size(); }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const {
    return (z * dims[1] + y) * dims[2] + x;
  }
  T& operator()(std::size_t z, std::size_t y, std::size_t x) { return values[index(z, y, x)]; }
  const T& operator()(std::size_t z, std::size_t y, std::size_t x) const {
    return values[index(z, y, x)];
  }

  friend bool operator==(const Volume& a, const Volume& b) {
    return a.dims == b.dims && a.values == b.values;
  }
};

using Mask = Volume<std::uint8_t>;

// T gates of a cubic volume with optional per-gate endo/epi masks.
struct GatedVolumeSequence {
  std::size_t side = 0;
  std::size_t gates = 0;
  std::vector<float> voxels;  // gate-major, then (z, y, x)
  std::vector<Mask> endo;     // empty, or one per gate
  std::vector<Mask> epi;

  GatedVolumeSequence() = default;
  GatedVolumeSequence(std::size_t side_, std::size_t gates_)
      : side(side_), gates(gates_), voxels(side_ * side_ * side_ * gates_, 0.0f) {}

  std::size_t gate_size() const { return side * side * side; }
  float& at(std::size_t t, std::size_t z, std::size_t y, std::size_t x) {
    return voxels[((t * side + z) * side + y) * side + x];
  }
  float at(std::size_t t, std::size_t z, std::size_t y, std::size_t x) const {
    return voxels[((t * side + z) * side + y) * side + x];
  }
  bool has_masks() const { return !endo.empty() || !epi.empty(); }

  // Throws std::invalid_argument when sizes disagree, intensities are not
  // finite, masks are not binary, or endo is not contained in epi.
  void validate() const;
};

enum class Structure { kEndo, kEpi };

const char* to_string(Structure s);
Structure parse_structure(const std::string& s);

// T consecutive gates starting at `start`, wrapping around the cycle.
GatedVolumeSequence cyclic_window(const GatedVolumeSequence& seq, std::size_t start,
                                  std::size_t length);

}  // namespace fedda::model
