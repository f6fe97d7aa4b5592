#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "spade/container.hpp"
#include "spade/tensor.hpp"

namespace spade {

using TokenId = std::int32_t;

struct ModelConfig {
  int n_layers = 8;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  int vocab_size = 64;
  float rope_theta = 10000.0f;
  float norm_eps = 1e-5f;
  TokenId bos_token_id = 0;
  int max_seq_len = 64;

  int d_head() const { return d_model / n_heads; }
  /// Throws ConfigError on any violated invariant.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct LayerWeights {
  Tensor attn_norm;  // [d]
  Tensor wq, wk, wv, wo;  // [d x d], y = W x
  Tensor mlp_norm;  // [d]
  Tensor w_up, w_gate;  // [d_ff x d]
  Tensor w_down;  // [d x d_ff]
};

/// Decoder-only transformer weights. Immutable once loaded; share freely
/// across threads.
class ModelCheckpoint {
 public:
  ModelConfig config;
  Tensor embed;  // [V x d]
  std::vector<LayerWeights> layers;  // layers[l - 1] is block l
  Tensor final_norm;  // [d]
  Tensor unembed;  // [V x d]

  /// Zero-filled weights with the shapes `config` declares (norms set to 1).
  static ModelCheckpoint zeros(const ModelConfig& config);
  /// Seeded random init: N(0, 1) embeddings, N(0, 1/fan_in) projections with
  /// output projections further scaled by 1/sqrt(2L), unit norms.
  static ModelCheckpoint random(const ModelConfig& config, std::uint64_t seed);

  static ModelCheckpoint load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  Container to_container() const;
  static ModelCheckpoint from_container(const Container& c);

  /// Canonical tensor names paired with tensors, in file order.
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
  std::vector<std::pair<std::string, Tensor*>> named_tensors_mut();

  /// Checks every tensor's shape and finiteness against the config.
  void validate() const;

  /// FNV-1a over the compact config JSON followed by the tensor payload, hex.
  std::string content_hash() const;

  const LayerWeights& block(int l) const { return layers.at(static_cast<std::size_t>(l - 1)); }
};

/// Hidden states h^l_i for l in [0, L] and every position of one sequence.
struct LayerState {
  Tensor hidden;  // [(L+1) x n x d]
  std::vector<TokenId> tokens;

  std::size_t n_layers() const { return hidden.dim(0) - 1; }
  std::size_t n_positions() const { return hidden.dim(1); }
  std::span<const float> at(std::size_t layer, std::size_t position) const;
  /// All n rows of one layer as an [n x d] tensor.
  Tensor layer(std::size_t layer) const;
};

/// A short sequence of hidden rows taken from some layer, with the position
/// ids it will carry through the remaining blocks.
struct ReducedState {
  Tensor rows;  // [m x d]
  std::vector<long> positions;  // strictly increasing, one per row
  int layer = 0;
};

struct ForwardResult {
  LayerState state;
  Tensor logits;  // [n x V]
  Tensor probs;  // [n x V]
};

Tensor embed(const ModelCheckpoint& ckpt, std::span<const TokenId> tokens);

/// Applies block `layer` (1-based) to `states` [m x d]. Position ids drive both
/// rotary phases and the causal mask (row i sees rows j with positions[j] <=
/// positions[i]). Adds m to `*token_block_ops` when given.
Tensor forward_block(const ModelCheckpoint& ckpt, int layer, const Tensor& states, std::span<const long> positions,
                     std::uint64_t* token_block_ops = nullptr);

ForwardResult forward_full(const ModelCheckpoint& ckpt, std::span<const TokenId> tokens,
                           std::uint64_t* token_block_ops = nullptr);

/// Runs blocks reduced.layer+1 .. L over the reduced rows. No embedding and no
/// final norm are applied.
Tensor forward_from(const ModelCheckpoint& ckpt, const ReducedState& reduced, std::uint64_t* token_block_ops = nullptr);

/// Final rmsnorm followed by the unembedding projection.
Tensor unembed(const ModelCheckpoint& ckpt, std::span<const float> h);

/// Position ids 0..n-1.
std::vector<long> iota_positions(std::size_t n);

}  // namespace spade
