#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "spade/model.hpp"

namespace spade {

enum class LensKind { LogitLens, Spade, SpadeNoS, LSpade, TunedLens, Final };
enum class TargetKind { SpadeTarget, FinalTarget };

/// Position ids carried by the reduced two-token SPADE sequence:
/// Compact uses (0, 1), Original keeps (0, n-1).
enum class PositionMode { Compact, Original };

std::string_view to_string(LensKind k);
std::string_view to_string(TargetKind k);
std::string_view to_string(PositionMode m);
LensKind parse_lens_kind(std::string_view s);
TargetKind parse_target_kind(std::string_view s);
PositionMode parse_position_mode(std::string_view s);

/// Next-token distribution produced by any decoding route.
struct Distribution {
  Tensor logits;  // [V]
  Tensor probs;  // [V], softmax(logits)
  LensKind source = LensKind::Final;
  int layer = 0;

  std::size_t argmax() const;
};

Distribution make_distribution(Tensor logits, LensKind source, int layer);

/// The model's own output distribution at the last position.
Distribution final_distribution(const ForwardResult& fwd, int n_layers);

/// Per-layer affine map h -> A h + b into the top layer's space. The target
/// kind records what it was distilled against: SPADE logits (L-SPADE) or the
/// model's final logits (Tuned Lens).
struct LinearLensMap {
  int layer = 0;
  Tensor A;  // [d x d]
  Tensor b;  // [d]
  TargetKind target_kind = TargetKind::SpadeTarget;
  std::string source_checkpoint_hash;
  double final_train_loss = 0.0;

  static LinearLensMap identity(int layer, std::size_t d, TargetKind kind);
  Tensor apply(std::span<const float> h) const;
  void validate(int n_layers) const;

  void save(const std::filesystem::path& path) const;
  static LinearLensMap load(const std::filesystem::path& path);

  LensKind lens_kind() const { return target_kind == TargetKind::SpadeTarget ? LensKind::LSpade : LensKind::TunedLens; }
};

/// Unembeds a layer-`layer` state directly.
Distribution logit_lens(const ModelCheckpoint& ckpt, std::span<const float> h_l, int layer);

/// Builds the (<s>, <a>) pair from `state` at `layer`: the rows of position 0
/// and of the last position.
ReducedState spade_reduced_state(const ModelCheckpoint& ckpt, const LayerState& state, int layer, PositionMode mode);

/// Pair from raw rows: `start_row` is position 0 and `answer_row` position
/// n-1 of an n-token sequence at `layer`.
ReducedState make_spade_pair(std::span<const float> start_row, std::span<const float> answer_row, std::size_t n,
                             int layer, PositionMode mode);

/// Re-enters `pair` at pair.layer + 1 and decodes its last row.
Distribution spade_decode(const ModelCheckpoint& ckpt, const ReducedState& pair,
                          std::uint64_t* token_block_ops = nullptr);

/// Propagates the (<s>, <a>) pair from `layer` through the remaining blocks and
/// decodes the <a> row. Adds 2 per block to `*token_block_ops`.
Distribution spade(const ModelCheckpoint& ckpt, const LayerState& state, int layer, PositionMode mode,
                   std::uint64_t* token_block_ops = nullptr);

/// Start-token ablation: propagates the <a> row alone.
Distribution spade_nos(const ModelCheckpoint& ckpt, const LayerState& state, int layer,
                       std::uint64_t* token_block_ops = nullptr);

/// Applies `map` to a layer-`layer` state and unembeds. Throws UsageError when
/// the map was trained for a different layer.
Distribution linear_lens_apply(const ModelCheckpoint& ckpt, const LinearLensMap& map, std::span<const float> h_l,
                               int layer);

/// Natural-log entropy over the full vocabulary.
double entropy(const Distribution& dist);
/// Entropy of the distribution renormalized over `candidates` only. Reporting
/// aid for multiple-choice tasks; exit decisions never use it.
double restricted_entropy(const Distribution& dist, std::span<const TokenId> candidates);
/// Largest minus second-largest probability.
double top2_gap(const Distribution& dist);

}  // namespace spade
