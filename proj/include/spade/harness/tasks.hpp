#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spade/dataset.hpp"
#include "spade/rng.hpp"

namespace spade::harness {

enum class TaskKind { InductionRecall, MajorityVote, ExternalTokens };

std::string_view to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view s);

/// Synthetic single-token question generator settings.
///
/// InductionRecall: [bos, k1, v1, ..., kp, vp, q] with p = (seq_len - 2) / 2
/// distinct keys drawn from [1, V/2), values from [V/2, V), q one of the keys;
/// the answer is q's value.
/// MajorityVote: [bos, c1, ..., c_{seq_len-1}] over class tokens [1, 1 + n_classes);
/// the answer is the most frequent class (ties are re-drawn).
/// ExternalTokens: examples are read from `source` (pre-tokenized JSONL).
struct TaskSpec {
  TaskKind kind = TaskKind::InductionRecall;
  int vocab_size = 64;
  int seq_len = 6;
  int n_examples = 256;
  std::uint64_t seed = 0;
  int n_classes = 3;
  TokenId bos_token_id = 0;
  std::string source;

  void validate() const;
};

void to_json(nlohmann::json& j, const TaskSpec& s);
void from_json(const nlohmann::json& j, TaskSpec& s);

/// Deterministic in `spec`.
Dataset gen_task(const TaskSpec& spec);

/// Draws one example from `rng` (not valid for ExternalTokens).
Example sample_example(const TaskSpec& spec, Rng& rng);

/// Modal token of `tokens`, empty on a tie for the top count.
std::optional<TokenId> majority_gold(std::span<const TokenId> tokens);

/// Sidecar that records the generating spec next to a task file, so training
/// can stream fresh examples from the same distribution.
std::filesystem::path spec_sidecar_path(const std::filesystem::path& task_path);
void save_task(const std::filesystem::path& path, const TaskSpec& spec, const Dataset& data);
std::optional<TaskSpec> load_task_spec(const std::filesystem::path& task_path);

}  // namespace spade::harness
