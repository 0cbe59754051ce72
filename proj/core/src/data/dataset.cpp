#include "fedda/data/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fedda::data {

using model::GatedVolumeSequence;

std::vector<SiteDataset> build_sites(const std::vector<std::size_t>& subjects_per_site,
                                     const std::vector<SiteShift>& shifts,
                                     const PhantomParams& base, std::uint64_t seed) {
  if (subjects_per_site.empty()) throw std::invalid_argument("build_sites: no sites");
  if (shifts.size() != subjects_per_site.size()) {
    throw std::invalid_argument("build_sites: need one shift per site");
  }
  base.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> centre_jitter(-0.5, 0.5);
  std::uniform_real_distribution<double> radius_jitter(0.92, 1.08);
  std::uniform_real_distribution<double> wall_jitter(0.9, 1.1);
  std::uniform_real_distribution<double> contraction_jitter(-0.05, 0.05);

  std::vector<SiteDataset> sites;
  for (std::size_t s = 0; s < subjects_per_site.size(); ++s) {
    if (subjects_per_site[s] == 0) {
      throw std::invalid_argument("build_sites: site " + std::to_string(s) + " has no subjects");
    }
    SiteDataset site;
    site.id = s;
    for (std::size_t i = 0; i < subjects_per_site[s]; ++i) {
      PhantomParams p = base;
      for (auto& c : p.center) c += centre_jitter(rng);
      for (auto& r : p.epi_radii) r *= radius_jitter(rng);
      p.wall_thickness *= wall_jitter(rng);
      p.contraction = std::clamp(p.contraction + contraction_jitter(rng), 0.0, 0.9);
      const std::uint64_t phantom_seed = rng();
      const std::uint64_t shift_seed = rng();
      Subject subj;
      subj.id = "site-" + std::to_string(s) + "-subj-" + std::to_string(i);
      subj.site = s;
      subj.sequence = apply_site_shift(generate_phantom(p, phantom_seed), shifts[s], shift_seed,
                                       base.noise_std);
      site.subjects.push_back(std::move(subj));
    }
    sites.push_back(std::move(site));
  }
  return sites;
}

std::vector<std::string> FoldPlan::training(std::size_t fold) const {
  std::vector<std::string> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (f == fold) continue;
    out.insert(out.end(), folds[f].begin(), folds[f].end());
  }
  return out;
}

FoldPlan kfold_split(const std::vector<SubjectRef>& subjects, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be at least 2");
  std::map<std::size_t, std::vector<std::string>> by_site;
  std::set<std::string> seen;
  for (const auto& s : subjects) {
    if (!seen.insert(s.id).second) {
      throw std::invalid_argument("kfold_split: duplicate subject id " + s.id);
    }
    by_site[s.site].push_back(s.id);
  }
  for (const auto& [site, ids] : by_site) {
    if (ids.size() < k) {
      throw std::invalid_argument("kfold_split: site " + std::to_string(site) + " has " +
                                  std::to_string(ids.size()) + " subjects, fewer than k=" +
                                  std::to_string(k));
    }
  }
  std::mt19937_64 rng(seed);
  FoldPlan plan;
  plan.folds.resize(k);
  std::size_t dealer = 0;
  for (auto& [site, ids] : by_site) {
    std::sort(ids.begin(), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
    for (const auto& id : ids) {
      plan.folds[dealer].push_back(id);
      dealer = (dealer + 1) % k;
    }
  }
  return plan;
}

std::vector<SubjectRef> subject_refs(const std::vector<SiteDataset>& sites) {
  std::vector<SubjectRef> out;
  for (const auto& site : sites)
    for (const auto& s : site.subjects) out.push_back({s.id, site.id});
  return out;
}

namespace {

constexpr std::uint32_t kVolumeVersion = 1;

}  // namespace

Bytes encode_volume(const GatedVolumeSequence& seq) {
  seq.validate();
  ByteWriter out;
  out.text("FDTS");
  out.u32(kVolumeVersion);
  for (int i = 0; i < 3; ++i) out.u32(static_cast<std::uint32_t>(seq.side));
  out.u32(static_cast<std::uint32_t>(seq.gates));
  for (float v : seq.voxels) out.f32(v);
  auto masks = [&](const std::vector<model::Mask>& m) {
    if (m.empty()) {
      for (std::size_t i = 0; i < seq.gate_size() * seq.gates; ++i) out.u8(0);
      return;
    }
    for (const auto& g : m) out.raw(g.values);
  };
  masks(seq.endo);
  masks(seq.epi);
  return out.take();
}

GatedVolumeSequence decode_volume(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (in.remaining() < 4 || in.text(4) != "FDTS") throw FormatError("volume: bad magic");
  const auto version = in.u32();
  if (version != kVolumeVersion) {
    throw FormatError("volume: unsupported version " + std::to_string(version));
  }
  const auto dz = in.u32(), dy = in.u32(), dx = in.u32();
  if (dz != dy || dy != dx || dz == 0) throw FormatError("volume: only non-empty cubes are supported");
  const auto gates = in.u32();
  if (gates == 0) throw FormatError("volume: zero gates");
  const std::size_t g = static_cast<std::size_t>(dz) * dz * dz;
  const std::size_t expected = g * gates * (4 + 2);
  if (in.remaining() != expected) {
    throw FormatError("volume: payload length " + std::to_string(in.remaining()) +
                      " bytes, expected " + std::to_string(expected));
  }
  GatedVolumeSequence seq(dz, gates);
  for (auto& v : seq.voxels) v = in.f32();
  auto masks = [&](std::vector<model::Mask>& m) {
    for (std::size_t t = 0; t < gates; ++t) {
      model::Mask mask = model::Mask::cube(dz);
      const auto raw = in.raw(g);
      std::copy(raw.begin(), raw.end(), mask.values.begin());
      m.push_back(std::move(mask));
    }
  };
  masks(seq.endo);
  masks(seq.epi);
  seq.validate();
  return seq;
}

void save_dataset(const std::vector<SiteDataset>& sites, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  manifest << "# subject\tsite\tlabeled\tfile\n";
  std::set<std::string> seen;
  for (const auto& site : sites) {
    for (const auto& s : site.subjects) {
      if (!seen.insert(s.id).second) {
        throw std::invalid_argument("save_dataset: duplicate subject id " + s.id);
      }
      const std::string file = s.id + ".fdts";
      write_file(dir / file, encode_volume(s.sequence));
      manifest << s.id << '\t' << site.id << '\t' << (site.labeled ? 1 : 0) << '\t' << file
               << '\n';
    }
  }
  const std::string text = manifest.str();
  write_file(dir / "manifest.tsv",
             {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::vector<SiteDataset> load_dataset(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
  const auto dir = manifest.parent_path();
  std::map<std::size_t, SiteDataset> sites;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string id, site_text, labeled_text, file;
    if (!std::getline(fields, id, '\t') || !std::getline(fields, site_text, '\t') ||
        !std::getline(fields, labeled_text, '\t') || !std::getline(fields, file)) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected 4 fields");
    }
    if (!seen.insert(id).second) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": duplicate subject id " + id);
    }
    std::size_t site = 0;
    try {
      std::size_t used = 0;
      site = std::stoul(site_text, &used);
      if (used != site_text.size()) throw std::invalid_argument(site_text);
    } catch (const std::exception&) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": bad site id");
    }
    if (labeled_text != "0" && labeled_text != "1") {
      throw FormatError("manifest line " + std::to_string(line_no) + ": labeled must be 0 or 1");
    }
    auto [it, inserted] = sites.try_emplace(site);
    if (inserted) {
      it->second.id = site;
      it->second.labeled = labeled_text == "1";
    }
    Subject s;
    s.id = id;
    s.site = site;
    s.sequence = decode_volume(read_file(dir / file));
    it->second.subjects.push_back(std::move(s));
  }
  std::vector<SiteDataset> out;
  for (auto& [_, site] : sites) out.push_back(std::move(site));
  return out;
}

}  // namespace fedda::data
