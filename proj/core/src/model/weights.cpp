#include "fedda/model/weights.hpp"

#include <bit>
#include <cmath>
#include <random>
#include <stdexcept>

#include "fedda/model/names.hpp"

namespace fedda::model {

namespace {

constexpr std::uint32_t kWeightVersion = 1;
constexpr char kWeightMagic[] = "FDWT";

bool is_matrix(const std::string& name) {
  const auto leaf = name.substr(name.rfind('.') + 1);
  return leaf == "proj" || leaf[0] == 'w';
}

}  // namespace

const ad::Tensor& WeightSet::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("no weight named " + name);
  return it->second;
}

ad::Tensor& WeightSet::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("no weight named " + name);
  return it->second;
}

std::size_t WeightSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

std::uint64_t WeightSet::checksum() const {
  Fnv1a h;
  for (const auto& [name, t] : tensors_) {
    h.update(name);
    for (auto d : t.shape()) h.update_value<std::uint64_t>(d);
    for (double v : t.data()) h.update_value<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
  }
  return h.digest();
}

std::uint64_t WeightSet::schema_hash() const {
  Fnv1a h;
  for (const auto& [name, t] : tensors_) {
    h.update(name);
    h.update_value<std::uint64_t>(t.rank());
    for (auto d : t.shape()) h.update_value<std::uint64_t>(d);
  }
  return h.digest();
}

std::map<std::string, ad::Shape> weight_schema(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim;
  const std::size_t hidden = cfg.mlp_hidden();
  std::map<std::string, ad::Shape> s;
  s[names::kEmbedProj] = {d, cfg.patch_voxels()};
  s[names::kEmbedPos] = {cfg.tokens(), d};
  s[names::kEmbedCls] = {d};
  for (std::size_t l = 0; l < cfg.blocks; ++l) {
    const BlockNames b(l);
    s[b.ln1_gamma] = {d};
    s[b.ln1_beta] = {d};
    s[b.wq] = {d, d};
    s[b.wk] = {d, d};
    s[b.wv] = {d, d};
    s[b.wo] = {d, d};
    s[b.ln2_gamma] = {d};
    s[b.ln2_beta] = {d};
    s[b.mlp_w1] = {hidden, d};
    s[b.mlp_b1] = {hidden};
    s[b.mlp_w2] = {d, hidden};
    s[b.mlp_b2] = {d};
  }
  s[names::kHeadLnGamma] = {d};
  s[names::kHeadLnBeta] = {d};
  s[names::kHeadW1] = {hidden, d};
  s[names::kHeadB1] = {hidden};
  s[names::kHeadW2] = {cfg.output_voxels(), hidden};
  s[names::kHeadB2] = {cfg.output_voxels()};
  return s;
}

WeightSet init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  WeightSet w;
  for (const auto& [name, shape] : weight_schema(cfg)) {
    ad::Tensor t(shape);
    if (shape.size() == 2 && is_matrix(name)) {
      const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& v : t.data()) v = dist(rng);
    } else if (name.ends_with(".gamma")) {
      t = ad::Tensor::ones(shape);
    }
    w.set(name, std::move(t));
  }
  return w;
}

void check_weights(const WeightSet& weights, const ModelConfig& cfg) {
  std::string problems;
  for (const auto& [name, shape] : weight_schema(cfg)) {
    if (!weights.contains(name)) {
      problems += " missing " + name + ";";
    } else if (weights.at(name).shape() != shape) {
      problems += " " + name + " has shape " + ad::to_string(weights.at(name).shape()) +
                  ", expected " + ad::to_string(shape) + ";";
    }
  }
  if (!problems.empty()) throw std::invalid_argument("incomplete weight set:" + problems);
}

void encode_weights(const WeightSet& weights, ByteWriter& out) {
  out.text(std::string_view(kWeightMagic, 4));
  out.u32(kWeightVersion);
  out.u32(static_cast<std::uint32_t>(weights.size()));
  for (const auto& [name, t] : weights) {
    if (name.size() > 0xffff) throw std::invalid_argument("weight name too long: " + name);
    out.u16(static_cast<std::uint16_t>(name.size()));
    out.text(name);
    out.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) out.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) out.f64(v);
  }
}

Bytes encode_weights(const WeightSet& weights) {
  ByteWriter out;
  encode_weights(weights, out);
  return out.take();
}

WeightSet decode_weights(ByteReader& in) {
  if (in.text(4) != std::string_view(kWeightMagic, 4)) throw FormatError("bad weight magic");
  const auto version = in.u32();
  if (version != kWeightVersion) {
    throw FormatError("unsupported weight version " + std::to_string(version));
  }
  const auto count = in.u32();
  WeightSet w;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = in.u16();
    std::string name = in.text(len);
    const auto rank = in.u32();
    ad::Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto dim = in.u32();
      if (dim == 0) throw FormatError("zero extent in weight " + name);
      shape.push_back(dim);
    }
    const std::size_t n = ad::numel(shape);
    if (in.remaining() / 8 < n) throw FormatError("truncated values for weight " + name);
    std::vector<double> values(n);
    for (auto& v : values) v = in.f64();
    if (w.contains(name)) throw FormatError("duplicate weight " + name);
    w.set(name, ad::Tensor(std::move(shape), std::move(values)));
  }
  return w;
}

WeightSet decode_weights(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  WeightSet w = decode_weights(in);
  if (in.remaining() != 0) throw FormatError("trailing bytes after weight set");
  return w;
}

void save_weights(const WeightSet& weights, const std::filesystem::path& path) {
  write_file(path, encode_weights(weights));
}

WeightSet load_weights(const std::filesystem::path& path) {
  return decode_weights(read_file(path));
}

}  // namespace fedda::model
