#pragma once

#include <cstddef>
#include <string>

namespace fedda::model {

namespace names {
inline constexpr const char* kEmbedProj = "embed.proj";
inline constexpr const char* kEmbedPos = "embed.pos";
inline constexpr const char* kEmbedCls = "embed.cls";
inline constexpr const char* kHeadLnGamma = "head.ln.gamma";
inline constexpr const char* kHeadLnBeta = "head.ln.beta";
inline constexpr const char* kHeadW1 = "head.w1";
inline constexpr const char* kHeadB1 = "head.b1";
inline constexpr const char* kHeadW2 = "head.w2";
inline constexpr const char* kHeadB2 = "head.b2";
}  // namespace names

// Parameter names of encoder block `l`.
struct BlockNames {
  explicit BlockNames(std::size_t l) : prefix("block" + std::to_string(l) + ".") {}

  std::string prefix;
  std::string ln1_gamma = prefix + "ln1.gamma";
  std::string ln1_beta = prefix + "ln1.beta";
  std::string wq = prefix + "attn.wq";
  std::string wk = prefix + "attn.wk";
  std::string wv = prefix + "attn.wv";
  std::string wo = prefix + "attn.wo";
  std::string ln2_gamma = prefix + "ln2.gamma";
  std::string ln2_beta = prefix + "ln2.beta";
  std::string mlp_w1 = prefix + "mlp.w1";
  std::string mlp_b1 = prefix + "mlp.b1";
  std::string mlp_w2 = prefix + "mlp.w2";
  std::string mlp_b2 = prefix + "mlp.b2";
};

}  // namespace fedda::model
