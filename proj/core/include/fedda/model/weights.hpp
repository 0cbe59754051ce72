#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fedda/autodiff/tensor.hpp"
#include "fedda/common/bytes.hpp"
#include "fedda/model/config.hpp"

namespace fedda::model {

// Named parameter arrays, iterated in lexicographic name order.
class WeightSet {
 public:
  using Map = std::map<std::string, ad::Tensor>;

  WeightSet() = default;
  explicit WeightSet(Map tensors) : tensors_(std::move(tensors)) {}

  void set(const std::string& name, ad::Tensor value) { tensors_[name] = std::move(value); }
  const ad::Tensor& at(const std::string& name) const;
  ad::Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }

  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }
  std::size_t parameter_count() const;

  Map& tensors() { return tensors_; }
  const Map& tensors() const { return tensors_; }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  // FNV-1a over names, shapes and value bits.
  std::uint64_t checksum() const;
  // FNV-1a over names and shapes only.
  std::uint64_t schema_hash() const;

  friend bool operator==(const WeightSet&, const WeightSet&) = default;

 private:
  Map tensors_;
};

// Parameter names and shapes required by a config.
std::map<std::string, ad::Shape> weight_schema(const ModelConfig& cfg);

// Scaled-uniform matrices, zero biases/positions/CLS, unit LayerNorm gains.
WeightSet init_weights(const ModelConfig& cfg, std::uint64_t seed);

// Throws std::invalid_argument listing every missing or misshapen name.
void check_weights(const WeightSet& weights, const ModelConfig& cfg);

// "FDWT" | u32 version=1 | u32 count | per entry: u16 name length, name,
// u32 rank, u32 dims[rank], f64 values (all little-endian).
Bytes encode_weights(const WeightSet& weights);
void encode_weights(const WeightSet& weights, ByteWriter& out);
WeightSet decode_weights(std::span<const std::uint8_t> bytes);
WeightSet decode_weights(ByteReader& in);

void save_weights(const WeightSet& weights, const std::filesystem::path& path);
WeightSet load_weights(const std::filesystem::path& path);

}  // namespace fedda::model
