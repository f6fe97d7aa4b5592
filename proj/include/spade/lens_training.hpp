#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spade/dataset.hpp"
#include "spade/lenses.hpp"

namespace spade {

/// A layer-l hidden state at the answer position and the logits the map
/// should learn to reproduce from it.
struct DistillSample {
  Tensor h_l;  // [d]
  Tensor teacher_logits;  // [V]
  int layer = 0;
  TargetKind target_kind = TargetKind::SpadeTarget;
};

enum class Optimizer { Sgd, Adam };
enum class MapInit { Identity, Zero };

struct TrainConfig {
  float learning_rate = 1e-3f;
  int steps = 2000;
  /// 0 (or >= sample count) means full-batch.
  int batch_size = 64;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::Adam;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
  MapInit init = MapInit::Identity;

  void validate() const;
};

/// One forward_full per example; captures h^l at the last prompt position and
/// the teacher logits for `target_kind` (SPADE re-entry or the model output).
std::vector<DistillSample> collect_samples(const ModelCheckpoint& ckpt, const Dataset& data, int layer,
                                           TargetKind target_kind, PositionMode mode);

/// Same as collect_samples for several layers, sharing the forward passes.
std::map<int, std::vector<DistillSample>> collect_samples_layers(const ModelCheckpoint& ckpt, const Dataset& data,
                                                                 const std::vector<int>& layers,
                                                                 TargetKind target_kind, PositionMode mode);

struct TrainResult {
  LinearLensMap map;
  double init_loss = 0.0;  // mean loss of the initial map over all samples
  double final_loss = 0.0;  // mean loss of the returned map over all samples
  std::vector<double> step_losses;  // minibatch loss before each update
};

/// Minimizes mean cross_entropy(teacher, unembed(A h + b)) with closed-form
/// gradients through the final rmsnorm and the unembedding.
TrainResult train_linear_map(const ModelCheckpoint& ckpt, const std::vector<DistillSample>& samples,
                             const TrainConfig& config);

/// Loss of one sample under `map`, and its gradients when the outputs are
/// given. Evaluated in double so finite differences resolve small gradients.
double lens_loss(const ModelCheckpoint& ckpt, const LinearLensMap& map, const DistillSample& sample,
                 std::vector<double>* grad_a = nullptr, std::vector<double>* grad_b = nullptr);

/// Mean f32 loss over `samples` (the quantity training reports).
double mean_lens_loss(const ModelCheckpoint& ckpt, const LinearLensMap& map, const std::vector<DistillSample>& samples);

/// Central differences on `coords_a` random entries of A (at least 64) and
/// every entry of b against the analytic gradient. Returns the max relative
/// error with denominator max(|fd|, |analytic|, 1e-8).
double grad_check(const ModelCheckpoint& ckpt, const LinearLensMap& map, const DistillSample& sample, double epsilon,
                  std::uint64_t seed = 0, std::size_t coords_a = 64);

/// Teacher logits cached on disk ("SPADETCH" container), keyed by checkpoint
/// hash, dataset id, layer, target kind and position mode.
struct TeacherCacheKey {
  std::string checkpoint_hash;
  std::string dataset_id;
  int layer = 0;
  TargetKind target_kind = TargetKind::SpadeTarget;
  PositionMode position_mode = PositionMode::Compact;

  std::string file_name() const;
};

void save_teacher_cache(const std::filesystem::path& dir, const TeacherCacheKey& key,
                        const std::vector<DistillSample>& samples);
/// Empty when no cache file exists. Throws ProvenanceError when the file's
/// header does not match `key`.
std::optional<std::vector<DistillSample>> load_teacher_cache(const std::filesystem::path& dir,
                                                             const TeacherCacheKey& key);

}  // namespace spade
