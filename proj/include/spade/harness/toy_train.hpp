#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "spade/dataset.hpp"
#include "spade/harness/tasks.hpp"
#include "spade/model.hpp"

namespace spade::harness {

struct ToyTrainConfig {
  int steps = 3000;  // budget
  int batch_size = 32;
  float learning_rate = 3e-3f;
  int warmup_steps = 100;
  float grad_clip = 1.0f;  // global L2 norm; <= 0 disables
  std::uint64_t seed = 0;
  int eval_every = 100;
  double target_accuracy = 0.95;
  /// Throw ConvergenceError when the budget ends below target_accuracy.
  bool require_target = true;
  /// Next-token loss at every prompt position instead of the answer alone.
  bool all_positions = false;
};

struct ToyTrainResult {
  ModelCheckpoint checkpoint;
  double held_out_accuracy = 0.0;
  int steps_run = 0;
  double last_loss = 0.0;
};

/// Fraction of examples whose full-vocabulary argmax at the last position is
/// the gold token.
double answer_accuracy(const ModelCheckpoint& ckpt, const Dataset& data);

/// Trains on the answer-position cross-entropy. Batches come from `stream`
/// (called once per example, in order); accuracy on `held_out` is checked
/// every eval_every steps and training stops once it reaches the target.
ToyTrainResult train_toy_model(const ModelConfig& model_config, const ToyTrainConfig& config,
                               const std::function<Example(Rng&)>& stream, const Dataset& held_out,
                               const std::function<void(int, double, double)>& progress = {});

/// Convenience form: fresh examples sampled from `spec`, held-out set gen_task(spec).
ToyTrainResult train_toy_model(const TaskSpec& spec, const ModelConfig& model_config, const ToyTrainConfig& config,
                               const std::function<void(int, double, double)>& progress = {});

/// Loss of one example (answer position, or the mean next-token loss over
/// every position when all_positions is set); when `grad` is given (shaped like
/// the checkpoint, e.g. ModelCheckpoint::zeros), adds scale * dLoss/dtheta.
double toy_loss_and_grad(const ModelCheckpoint& ckpt, const Example& ex, ModelCheckpoint* grad, float scale = 1.0f,
                         bool all_positions = false);

}  // namespace spade::harness
