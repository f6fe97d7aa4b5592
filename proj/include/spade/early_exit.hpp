#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spade/lenses.hpp"

namespace spade {

/// Confidence metric for exit decisions. Each metric carries its own
/// comparison: entropy exits when value <= threshold, top-2 gap when >=.
enum class ExitMetric { Entropy, Top2Gap };

std::string_view to_string(ExitMetric m);
ExitMetric parse_exit_metric(std::string_view s);
bool metric_triggers(ExitMetric metric, double value, double threshold);

struct ExitConfig {
  double threshold = 0.5;  // nats for Entropy
  int interval = 1;
  ExitMetric metric = ExitMetric::Entropy;
  PositionMode position_mode = PositionMode::Compact;
  int min_exit_layer = 1;

  void validate(int n_layers) const;
  /// Layers where a confidence check runs: l in [1, L], l % interval == 0,
  /// l >= min_exit_layer.
  std::vector<int> scheduled_layers(int n_layers) const;
};

/// Work done by one run, in (token x block) applications.
struct OpCounter {
  std::uint64_t full_token_block_ops = 0;
  std::uint64_t reduced_token_block_ops = 0;
  std::uint64_t lens_evals = 0;

  friend bool operator==(const OpCounter&, const OpCounter&) = default;
};

struct ExitTrace {
  std::optional<int> exit_layer;
  std::vector<std::pair<int, double>> checked_layers;
  Distribution final_distribution;
  OpCounter counter;
  /// Layers whose reduced-pass output was handed to the cache hook. The hook
  /// records only; nothing is carried to later generation steps.
  std::vector<int> cache_updates;

  nlohmann::json to_json() const;
};

/// Per-layer lens maps, keyed by layer.
using LensMapSet = std::map<int, LinearLensMap>;

/// Layer-by-layer forward with lens confidence checks on scheduled layers. On
/// the first trigger at layer l the full-width pass stops and the SPADE pair
/// re-enters at l + 1; otherwise the model's final distribution is returned.
ExitTrace run_spade_exit(const ModelCheckpoint& ckpt, const LensMapSet& maps, std::span<const TokenId> tokens,
                         const ExitConfig& config);

/// Predicted counters: full = n * exit (n * L without exit), reduced =
/// 2 * (L - exit), lens = scheduled checks at or below the exit (or L).
OpCounter cost_model(std::size_t n, int n_layers, std::optional<int> exit_layer, int interval, int min_exit_layer);

}  // namespace spade
