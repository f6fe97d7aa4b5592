#pragma once

// Internal: the transformer block kernel shared by inference and toy-model
// training. Training passes a cache to keep the activations needed for the
// backward pass; inference passes nullptr.

#include <span>
#include <vector>

#include "spade/model.hpp"

namespace spade::detail {

struct BlockCache {
  std::size_t m = 0;
  std::vector<float> x_in;   // [m x d]
  std::vector<float> a;      // attention rmsnorm output [m x d]
  std::vector<float> inv1;   // [m]
  std::vector<float> q, k, v;  // [m x d], q and k after rotary
  std::vector<float> att;    // [heads x m x m], masked entries are 0
  std::vector<float> o;      // attention output before wo [m x d]
  std::vector<float> x_mid;  // residual after attention [m x d]
  std::vector<float> b;      // mlp rmsnorm output [m x d]
  std::vector<float> inv2;   // [m]
  std::vector<float> up, gate, hdn;  // [m x d_ff]
};

/// `in` and `out` are [m x d] row-major and may not alias.
void block_forward(const ModelCheckpoint& ckpt, int layer, std::span<const float> in, std::size_t m,
                   std::span<const long> positions, std::span<float> out, BlockCache* cache);

inline float silu(float g) { return g / (1.0f + std::exp(-g)); }

}  // namespace spade::detail
