#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>

#include "fedda/common/bytes.hpp"
#include "fedda/model/timesformer.hpp"
#include "fedda/model/weights.hpp"

namespace fedda::fed {

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ClientUpdate {
  model::WeightSet weights;
  std::uint32_t sample_count = 0;  // training windows used this round
  std::uint32_t round = 0;

  friend bool operator==(const ClientUpdate&, const ClientUpdate&) = default;
};

// What the target site shares each round. Computed from model outputs only.
struct TargetStats {
  model::AttentionMaps maps;   // batch-averaged last-block maps
  ad::Tensor features;         // [batch * N, d_model], first-gate patch tokens
  ad::Tensor pseudo_labels;    // [batch * N, 2], columns (background, foreground)
  std::uint32_t batch = 0;
  std::uint32_t round = 0;

  friend bool operator==(const TargetStats&, const TargetStats&) = default;
};

// Payload layout: u32 round | u32 count | u64 schema hash | FDWT body.
// For updates count is the sample count and the body is the weights; for
// stats count is the batch size and the body holds "features",
// "maps.space", "maps.time" and "pseudo_labels".
inline constexpr std::size_t kHeaderBytes = 16;

Bytes serialize_update(const ClientUpdate& update);
// Throws SchemaError when the header hash disagrees with the body, FormatError
// on malformed bytes, an empty body or a zero sample count.
ClientUpdate deserialize_update(std::span<const std::uint8_t> payload);

Bytes serialize_stats(const TargetStats& stats);
TargetStats deserialize_stats(std::span<const std::uint8_t> payload);

// "round_<r>_client_<id>.bin"
std::string message_name(std::uint32_t round, std::size_t client);

// Point-to-point delivery of serialized messages keyed by message_name.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(const std::string& name, const Bytes& payload) = 0;
  // Throws std::out_of_range when the message was never sent.
  virtual Bytes receive(const std::string& name) = 0;
};

class InProcessTransport final : public Transport {
 public:
  void send(const std::string& name, const Bytes& payload) override;
  Bytes receive(const std::string& name) override;

 private:
  std::mutex mu_;
  std::map<std::string, Bytes> messages_;
};

// One file per message in `dir`, created on construction. Files are left in
// place after receipt.
class SpoolTransport final : public Transport {
 public:
  explicit SpoolTransport(std::filesystem::path dir);

  void send(const std::string& name, const Bytes& payload) override;
  Bytes receive(const std::string& name) override;
  const std::filesystem::path& directory() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

}  // namespace fedda::fed
