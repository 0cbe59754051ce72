#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "fedda/model/volume.hpp"

namespace fedda::data {

// Gated left-ventricle phantom: an ellipsoidal myocardial shell whose radii
// follow a cosine contraction over the cycle.
struct PhantomParams {
  std::size_t side = 32;
  std::size_t gates = 8;
  std::array<double, 3> center{15.5, 15.5, 15.5};    // (z, y, x) in voxels
  std::array<double, 3> epi_radii{10.0, 8.5, 8.5};   // (z, y, x) at end-diastole
  double wall_thickness = 3.0;
  double contraction = 0.25;                         // in [0, 1)
  double myocardium_intensity = 1.0;
  double background_intensity = 0.1;
  double noise_std = 0.05;

  // Defaults scaled to a side-V grid.
  static PhantomParams for_side(std::size_t side, std::size_t gates = 8);

  // Radius scale at gate t: 1 - a (1 - cos(2 pi t / T)) / 2.
  double radius_scale(std::size_t t) const;
  std::array<double, 3> epi_radii_at(std::size_t t) const;
  std::array<double, 3> endo_radii_at(std::size_t t) const;

  // Throws std::invalid_argument when the shell degenerates or a field is
  // out of range.
  void validate() const;
};

// Voxel (z, y, x) is inside when sum(((i - c) / r)^2) <= 1 at its index
// coordinates.
model::Mask ellipsoid_mask(std::size_t side, const std::array<double, 3>& center,
                           const std::array<double, 3>& radii);

// Throws std::invalid_argument if any gate's endo or epi mask is empty.
model::GatedVolumeSequence generate_phantom(const PhantomParams& p, std::uint64_t seed);

// Per-site acquisition differences.
struct SiteShift {
  double gain = 1.0;
  double offset = 0.0;
  std::size_t blur_radius = 0;
  double noise_multiplier = 0.0;

  void validate() const;
};

// gain * x + offset, then a (2r+1)^3 box mean per gate (clamped at the
// border), then Gaussian noise with std noise_multiplier * base_noise_std.
// Masks are copied unchanged.
model::GatedVolumeSequence apply_site_shift(const model::GatedVolumeSequence& x,
                                            const SiteShift& s, std::uint64_t seed,
                                            double base_noise_std = 0.05);

// One long-axis slice, rows along z, columns along the rotated in-plane axis.
struct Slice {
  std::size_t rows = 0, cols = 0;
  std::vector<float> values;

  float operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

inline constexpr std::size_t kLongAxisSlices = 32;

// 32 planes through the long (z) axis at 11.25 degree steps, sampled by
// nearest neighbour around the in-plane centre (15.5, 15.5); column s lies at
// signed offset s - 15.5 along (cos a, sin a) in (x, y), halves rounding
// away from zero. Requires a 32^3 volume.
std::vector<Slice> long_axis_slices(const model::Volume<float>& volume);
// Nearest-slice, nearest-sample reconstruction of a 32^3 volume.
model::Volume<float> from_long_axis_slices(const std::vector<Slice>& slices);

}  // namespace fedda::data
