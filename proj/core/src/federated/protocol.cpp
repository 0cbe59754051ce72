#include "fedda/federated/protocol.hpp"

#include <fstream>

namespace fedda::fed {

namespace {

Bytes with_header(std::uint32_t round, std::uint32_t count, const model::WeightSet& body) {
  ByteWriter w;
  w.u32(round);
  w.u32(count);
  w.u64(body.schema_hash());
  encode_weights(body, w);
  return w.take();
}

struct Decoded {
  std::uint32_t round = 0;
  std::uint32_t count = 0;
  model::WeightSet body;
};

Decoded read_payload(std::span<const std::uint8_t> payload, const char* what) {
  ByteReader r(payload);
  Decoded d;
  d.round = r.u32();
  d.count = r.u32();
  const std::uint64_t hash = r.u64();
  d.body = model::decode_weights(r);
  if (r.remaining() != 0) {
    throw FormatError(std::string(what) + ": " + std::to_string(r.remaining()) +
                      " trailing bytes");
  }
  if (d.body.empty()) throw FormatError(std::string(what) + ": payload holds no arrays");
  if (hash != d.body.schema_hash()) {
    throw SchemaError(std::string(what) + ": schema hash mismatch");
  }
  if (d.count == 0) throw FormatError(std::string(what) + ": count must be positive");
  return d;
}

constexpr const char* kFeatures = "features";
constexpr const char* kMapsSpace = "maps.space";
constexpr const char* kMapsTime = "maps.time";
constexpr const char* kPseudo = "pseudo_labels";

}  // namespace

Bytes serialize_update(const ClientUpdate& update) {
  return with_header(update.round, update.sample_count, update.weights);
}

ClientUpdate deserialize_update(std::span<const std::uint8_t> payload) {
  Decoded d = read_payload(payload, "client update");
  return {std::move(d.body), d.count, d.round};
}

Bytes serialize_stats(const TargetStats& stats) {
  model::WeightSet body;
  body.set(kFeatures, stats.features);
  body.set(kMapsSpace, stats.maps.space);
  body.set(kMapsTime, stats.maps.time);
  body.set(kPseudo, stats.pseudo_labels);
  return with_header(stats.round, stats.batch, body);
}

TargetStats deserialize_stats(std::span<const std::uint8_t> payload) {
  Decoded d = read_payload(payload, "target stats");
  if (d.body.size() != 4) throw SchemaError("target stats: expected 4 arrays");
  TargetStats s;
  try {
    s.features = d.body.at(kFeatures);
    s.maps.space = d.body.at(kMapsSpace);
    s.maps.time = d.body.at(kMapsTime);
    s.pseudo_labels = d.body.at(kPseudo);
  } catch (const std::out_of_range& e) {
    throw SchemaError(std::string("target stats: ") + e.what());
  }
  s.batch = d.count;
  s.round = d.round;
  return s;
}

std::string message_name(std::uint32_t round, std::size_t client) {
  return "round_" + std::to_string(round) + "_client_" + std::to_string(client) + ".bin";
}

void InProcessTransport::send(const std::string& name, const Bytes& payload) {
  std::lock_guard lock(mu_);
  messages_[name] = payload;
}

Bytes InProcessTransport::receive(const std::string& name) {
  std::lock_guard lock(mu_);
  auto it = messages_.find(name);
  if (it == messages_.end()) throw std::out_of_range("no message " + name);
  Bytes out = std::move(it->second);
  messages_.erase(it);
  return out;
}

SpoolTransport::SpoolTransport(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

void SpoolTransport::send(const std::string& name, const Bytes& payload) {
  // Write then rename so a reader never sees a partial file.
  const auto tmp = dir_ / (name + ".part");
  write_file(tmp, payload);
  std::filesystem::rename(tmp, dir_ / name);
}

Bytes SpoolTransport::receive(const std::string& name) {
  const auto path = dir_ / name;
  if (!std::filesystem::exists(path)) throw std::out_of_range("no message " + path.string());
  return read_file(path);
}

}  // namespace fedda::fed
