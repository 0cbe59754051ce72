#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedda/common/bytes.hpp"
#include "fedda/data/phantom.hpp"
#include "fedda/model/volume.hpp"

namespace fedda::data {

struct Subject {
  std::string id;
  std::size_t site = 0;
  model::GatedVolumeSequence sequence;  // full cycle with masks
};

struct SiteDataset {
  std::size_t id = 0;
  bool labeled = true;
  std::vector<Subject> subjects;
};

// Site s gets subjects "site-<s>-subj-<i>" drawn around `base` with small
// random jitter of centre, radii, wall thickness and contraction, then
// passes through shifts[s]. Deterministic in `seed`.
std::vector<SiteDataset> build_sites(const std::vector<std::size_t>& subjects_per_site,
                                     const std::vector<SiteShift>& shifts,
                                     const PhantomParams& base, std::uint64_t seed);

struct SubjectRef {
  std::string id;
  std::size_t site = 0;
};

// folds[f] is the test set of fold f; its training set is every other fold.
struct FoldPlan {
  std::vector<std::vector<std::string>> folds;

  std::vector<std::string> training(std::size_t fold) const;
};

// Subject-level folds stratified by site: each site's subjects are shuffled
// and dealt round-robin, continuing the dealer position across sites so fold
// sizes stay within one. Requires 2 <= k <= smallest site size.
FoldPlan kfold_split(const std::vector<SubjectRef>& subjects, std::size_t k, std::uint64_t seed);

std::vector<SubjectRef> subject_refs(const std::vector<SiteDataset>& sites);

// "FDTS" | u32 version=1 | u32 dims[3] | u32 gates | f32 voxels (gate-major)
// | u8 endo mask per voxel per gate | u8 epi mask per voxel per gate.
// Sequences without masks are written with zero masks.
Bytes encode_volume(const model::GatedVolumeSequence& seq);
model::GatedVolumeSequence decode_volume(std::span<const std::uint8_t> bytes);

// Writes <dir>/<subject>.fdts per subject and <dir>/manifest.tsv with one
// "subject\tsite\tlabeled\tfile" line per subject (file relative to dir).
void save_dataset(const std::vector<SiteDataset>& sites, const std::filesystem::path& dir);
// Reads a manifest; rejects duplicate subject ids and malformed lines.
std::vector<SiteDataset> load_dataset(const std::filesystem::path& manifest);

}  // namespace fedda::data
