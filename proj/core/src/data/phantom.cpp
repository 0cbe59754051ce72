#include "fedda/data/phantom.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace fedda::data {

using model::GatedVolumeSequence;
using model::Mask;

PhantomParams PhantomParams::for_side(std::size_t side, std::size_t gates) {
  PhantomParams p;
  const double v = static_cast<double>(side);
  p.side = side;
  p.gates = gates;
  const double c = (v - 1.0) / 2.0;
  p.center = {c, c, c};
  p.epi_radii = {0.3125 * v, 0.265625 * v, 0.265625 * v};
  p.wall_thickness = 0.09375 * v;
  return p;
}

double PhantomParams::radius_scale(std::size_t t) const {
  const double phase = 2.0 * std::numbers::pi * static_cast<double>(t % gates) /
                       static_cast<double>(gates);
  return 1.0 - contraction * (1.0 - std::cos(phase)) / 2.0;
}

std::array<double, 3> PhantomParams::epi_radii_at(std::size_t t) const {
  const double s = radius_scale(t);
  return {epi_radii[0] * s, epi_radii[1] * s, epi_radii[2] * s};
}

std::array<double, 3> PhantomParams::endo_radii_at(std::size_t t) const {
  auto r = epi_radii_at(t);
  for (auto& x : r) x -= wall_thickness;
  return r;
}

void PhantomParams::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("phantom: " + m); };
  if (side == 0) fail("side must be positive");
  if (gates == 0) fail("gates must be positive");
  if (!(contraction >= 0.0 && contraction < 1.0)) fail("contraction must lie in [0, 1)");
  if (!(wall_thickness > 0.0)) fail("wall_thickness must be positive");
  if (!(noise_std >= 0.0)) fail("noise_std must be non-negative");
  for (double r : epi_radii) {
    if (!(r * (1.0 - contraction) - wall_thickness > 0.0)) {
      fail("inner radius vanishes at maximum contraction");
    }
  }
}

Mask ellipsoid_mask(std::size_t side, const std::array<double, 3>& center,
                    const std::array<double, 3>& radii) {
  Mask m = Mask::cube(side);
  for (std::size_t z = 0; z < side; ++z)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const double dz = (static_cast<double>(z) - center[0]) / radii[0];
        const double dy = (static_cast<double>(y) - center[1]) / radii[1];
        const double dx = (static_cast<double>(x) - center[2]) / radii[2];
        m(z, y, x) = dz * dz + dy * dy + dx * dx <= 1.0 ? 1 : 0;
      }
  return m;
}

GatedVolumeSequence generate_phantom(const PhantomParams& p, std::uint64_t seed) {
  p.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  GatedVolumeSequence out(p.side, p.gates);
  const std::size_t g = out.gate_size();
  for (std::size_t t = 0; t < p.gates; ++t) {
    Mask epi = ellipsoid_mask(p.side, p.center, p.epi_radii_at(t));
    Mask endo = ellipsoid_mask(p.side, p.center, p.endo_radii_at(t));
    std::size_t n_epi = 0, n_endo = 0;
    for (std::size_t i = 0; i < g; ++i) {
      n_epi += epi.values[i];
      n_endo += endo.values[i];
      const bool wall = epi.values[i] && !endo.values[i];
      double v = wall ? p.myocardium_intensity : p.background_intensity;
      if (p.noise_std > 0.0) v += p.noise_std * noise(rng);
      out.voxels[t * g + i] = static_cast<float>(v);
    }
    if (n_epi == 0 || n_endo == 0) {
      throw std::invalid_argument("phantom: empty mask at gate " + std::to_string(t));
    }
    out.epi.push_back(std::move(epi));
    out.endo.push_back(std::move(endo));
  }
  return out;
}

void SiteShift::validate() const {
  if (!(gain > 0.0) || !std::isfinite(gain)) throw std::invalid_argument("site shift: gain must be positive");
  if (!std::isfinite(offset)) throw std::invalid_argument("site shift: offset must be finite");
  if (!(noise_multiplier >= 0.0)) {
    throw std::invalid_argument("site shift: noise multiplier must be non-negative");
  }
}

namespace {

// Mean over a (2r+1) window along one axis of a cube, clamped at the border.
void box_pass(std::vector<double>& v, std::size_t side, std::size_t r, std::size_t stride) {
  std::vector<double> line(side), out(side);
  const std::size_t lines = v.size() / side;
  for (std::size_t l = 0; l < lines; ++l) {
    // Linear index of the first element of line l for the given stride.
    const std::size_t outer = l / stride, inner = l % stride;
    const std::size_t base = outer * stride * side + inner;
    for (std::size_t i = 0; i < side; ++i) line[i] = v[base + i * stride];
    for (std::size_t i = 0; i < side; ++i) {
      const std::size_t lo = i >= r ? i - r : 0, hi = std::min(side - 1, i + r);
      double s = 0.0;
      for (std::size_t j = lo; j <= hi; ++j) s += line[j];
      out[i] = s / static_cast<double>(hi - lo + 1);
    }
    for (std::size_t i = 0; i < side; ++i) v[base + i * stride] = out[i];
  }
}

}  // namespace

GatedVolumeSequence apply_site_shift(const GatedVolumeSequence& x, const SiteShift& s,
                                     std::uint64_t seed, double base_noise_std) {
  s.validate();
  GatedVolumeSequence out = x;
  const std::size_t g = x.gate_size(), side = x.side;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double extra = s.noise_multiplier * base_noise_std;
  std::vector<double> buf(g);
  for (std::size_t t = 0; t < x.gates; ++t) {
    for (std::size_t i = 0; i < g; ++i) buf[i] = s.gain * x.voxels[t * g + i] + s.offset;
    if (s.blur_radius > 0) {
      box_pass(buf, side, s.blur_radius, 1);
      box_pass(buf, side, s.blur_radius, side);
      box_pass(buf, side, s.blur_radius, side * side);
    }
    for (std::size_t i = 0; i < g; ++i) {
      double v = buf[i];
      if (extra > 0.0) v += extra * noise(rng);
      out.voxels[t * g + i] = static_cast<float>(v);
    }
  }
  return out;
}

namespace {

constexpr std::size_t kSliceSide = 32;
constexpr double kSliceCentre = 15.5;

double slice_angle(std::size_t k) {
  return 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(kLongAxisSlices);
}

}  // namespace

std::vector<Slice> long_axis_slices(const model::Volume<float>& volume) {
  if (volume.dims != std::array<std::size_t, 3>{kSliceSide, kSliceSide, kSliceSide}) {
    throw std::invalid_argument("long_axis_slices: volume must be 32^3");
  }
  std::vector<Slice> slices;
  for (std::size_t k = 0; k < kLongAxisSlices; ++k) {
    const double a = slice_angle(k), ca = std::cos(a), sa = std::sin(a);
    Slice s{kSliceSide, kSliceSide, std::vector<float>(kSliceSide * kSliceSide, 0.0f)};
    for (std::size_t col = 0; col < kSliceSide; ++col) {
      const double off = static_cast<double>(col) - kSliceCentre;
      const long x = std::lround(kSliceCentre + off * ca);
      const long y = std::lround(kSliceCentre + off * sa);
      if (x < 0 || y < 0 || x >= static_cast<long>(kSliceSide) ||
          y >= static_cast<long>(kSliceSide)) {
        continue;
      }
      for (std::size_t z = 0; z < kSliceSide; ++z) {
        s.values[z * kSliceSide + col] =
            volume(z, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      }
    }
    slices.push_back(std::move(s));
  }
  return slices;
}

model::Volume<float> from_long_axis_slices(const std::vector<Slice>& slices) {
  if (slices.size() != kLongAxisSlices) {
    throw std::invalid_argument("from_long_axis_slices: expected 32 slices");
  }
  for (const auto& s : slices) {
    if (s.rows != kSliceSide || s.cols != kSliceSide || s.values.size() != kSliceSide * kSliceSide) {
      throw std::invalid_argument("from_long_axis_slices: slices must be 32x32");
    }
  }
  model::Volume<float> out = model::Volume<float>::cube(kSliceSide);
  const double step = 2.0 * std::numbers::pi / static_cast<double>(kLongAxisSlices);
  for (std::size_t y = 0; y < kSliceSide; ++y) {
    for (std::size_t x = 0; x < kSliceSide; ++x) {
      const double dx = static_cast<double>(x) - kSliceCentre;
      const double dy = static_cast<double>(y) - kSliceCentre;
      double phi = std::atan2(dy, dx);
      if (phi < 0) phi += 2.0 * std::numbers::pi;
      const std::size_t k = static_cast<std::size_t>(std::lround(phi / step)) % kLongAxisSlices;
      const long col = std::lround(kSliceCentre + std::hypot(dx, dy));
      if (col < 0 || col >= static_cast<long>(kSliceSide)) continue;
      for (std::size_t z = 0; z < kSliceSide; ++z) {
        out(z, y, x) = slices[k](z, static_cast<std::size_t>(col));
      }
    }
  }
  return out;
}

}  // namespace fedda::data
