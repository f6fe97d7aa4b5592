#include "spade/dataset.hpp"

#include <sstream>

#include <json.hpp>

#include "spade/container.hpp"
#include "spade/error.hpp"

namespace spade {

std::string dataset_to_jsonl(const Dataset& data) {
  std::string out;
  for (const auto& ex : data) {
    out += nlohmann::json{{"prompt", ex.prompt}, {"gold", ex.gold}}.dump();
    out += '\n';
  }
  return out;
}

Dataset dataset_from_jsonl(const std::string& text) {
  Dataset data;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Example ex;
      j.at("prompt").get_to(ex.prompt);
      j.at("gold").get_to(ex.gold);
      data.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("task line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return data;
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return dataset_from_jsonl(std::string(bytes.begin(), bytes.end()));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  const std::string text = dataset_to_jsonl(data);
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string dataset_id(const Dataset& data) {
  const std::string text = dataset_to_jsonl(data);
  return hex64(fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
}

void validate_dataset(const Dataset& data, int vocab, TokenId bos) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    const std::string where = "example " + std::to_string(i);
    if (ex.prompt.empty()) throw PreconditionError(where + " has an empty prompt");
    if (ex.prompt.front() != bos) throw PreconditionError(where + " does not start with the start token");
    for (TokenId t : ex.prompt) {
      if (t < 0 || t >= vocab) throw PreconditionError(where + " has token " + std::to_string(t) + " outside the vocab");
    }
    if (ex.gold < 0 || ex.gold >= vocab) throw PreconditionError(where + " has gold " + std::to_string(ex.gold) + " outside the vocab");
  }
}

}  // namespace spade
