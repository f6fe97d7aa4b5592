#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "spade/model.hpp"

namespace spade {

/// One single-token question: the prompt (starting with the start token) and
/// the token that answers it.
struct Example {
  std::vector<TokenId> prompt;
  TokenId gold = 0;

  friend bool operator==(const Example&, const Example&) = default;
};

using Dataset = std::vector<Example>;

/// JSON lines, one {"prompt": [ids], "gold": id} per line.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const Dataset& data);
std::string dataset_to_jsonl(const Dataset& data);
Dataset dataset_from_jsonl(const std::string& text);

/// Content hash of the canonical JSONL text, hex.
std::string dataset_id(const Dataset& data);

/// Throws PreconditionError unless every prompt is non-empty, starts with
/// `bos` and every id lies in [0, vocab).
void validate_dataset(const Dataset& data, int vocab, TokenId bos);

}  // namespace spade
