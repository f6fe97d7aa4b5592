#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "spade/dataset.hpp"
#include "spade/early_exit.hpp"
#include "spade/lenses.hpp"

namespace spade::harness {

/// Trained linear maps for both target kinds, keyed by layer.
struct LensMaps {
  LensMapSet lspade;
  LensMapSet tuned;

  const LensMapSet& of(LensKind kind) const;
  bool empty() const { return lspade.empty() && tuned.empty(); }
};

/// File name used for a map inside a maps directory: "<lens>-layer<l>.spadelns".
std::string lens_map_file_name(const LinearLensMap& map);
void save_lens_map(const std::filesystem::path& dir, const LinearLensMap& map);
/// Reads every *.spadelns file in `dir`; each map is keyed by its own header.
LensMaps load_lens_maps(const std::filesystem::path& dir);

/// One (layer, lens) cell of a layer-wise evaluation.
struct LayerwiseRow {
  int layer = 0;
  LensKind lens = LensKind::Spade;
  double accuracy = 0.0;
  double perplexity = 0.0;
  double mean_entropy = 0.0;
  std::size_t n = 0;
  /// Argmax over the prompt's distinct non-start tokens instead of the vocab.
  double restricted_accuracy = 0.0;

  friend bool operator==(const LayerwiseRow&, const LayerwiseRow&) = default;
};

struct LayerwiseReport {
  nlohmann::json provenance = nlohmann::json::object();
  double naive_accuracy = 0.0;
  /// Rows ordered by lens (request order) then layer; the naive model appears
  /// as lens "final" at layer L.
  std::vector<LayerwiseRow> rows;

  const LayerwiseRow* find(LensKind lens, int layer) const;
  /// First layer whose accuracy reaches `fraction` * naive accuracy.
  std::optional<int> first_layer_reaching(LensKind lens, double fraction) const;
};

struct SweepRow {
  double threshold = 0.0;
  double accuracy = 0.0;
  double mean_exit_layer = 0.0;
  double mean_full_ops = 0.0;
  double mean_reduced_ops = 0.0;

  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

struct SweepReport {
  nlohmann::json provenance = nlohmann::json::object();
  double naive_accuracy = 0.0;
  std::vector<SweepRow> rows;  // in threshold order as given
};

struct LayerwiseOptions {
  std::vector<LensKind> lenses = {LensKind::LogitLens, LensKind::Spade, LensKind::SpadeNoS};
  PositionMode position_mode = PositionMode::Compact;
  /// Layers to probe; empty means every layer 1..L.
  std::vector<int> layers;
};

/// Decodes each example's answer position with every requested lens at every
/// layer. Linear lenses need a map for every probed layer (ConfigError).
LayerwiseReport eval_layerwise(const ModelCheckpoint& ckpt, const LensMaps& maps, const Dataset& data,
                               const LayerwiseOptions& options);

/// Runs run_spade_exit over the dataset for each threshold. The maps are the
/// L-SPADE set used for exit decisions.
SweepReport eval_exit_sweep(const ModelCheckpoint& ckpt, const LensMapSet& maps, const Dataset& data,
                            const std::vector<double>& thresholds, const ExitConfig& base);

/// eval_layerwise with maps trained elsewhere. Every map must name `ckpt` as
/// its source (ProvenanceError otherwise); the report is tagged with both
/// task ids.
LayerwiseReport eval_cross_task(const ModelCheckpoint& ckpt, const LensMaps& maps, const Dataset& data,
                                const std::string& train_task_id, const std::string& eval_task_id,
                                const LayerwiseOptions& options);

}  // namespace spade::harness
