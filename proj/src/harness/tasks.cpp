#include "spade/harness/tasks.hpp"

#include <algorithm>
#include <map>

#include "spade/error.hpp"
#include "spade/rng.hpp"

namespace spade::harness {

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::InductionRecall: return "induction";
    case TaskKind::MajorityVote: return "majority";
    case TaskKind::ExternalTokens: return "external";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "induction" || s == "InductionRecall") return TaskKind::InductionRecall;
  if (s == "majority" || s == "MajorityVote") return TaskKind::MajorityVote;
  if (s == "external" || s == "ExternalTokens") return TaskKind::ExternalTokens;
  throw UsageError("unknown task kind '" + std::string(s) + "' (expected induction|majority|external)");
}

void TaskSpec::validate() const {
  if (n_examples < 0) throw ConfigError("n_examples must be >= 0");
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (bos_token_id < 0 || bos_token_id >= vocab_size) throw ConfigError("bos_token_id outside the vocab");
  switch (kind) {
    case TaskKind::InductionRecall: {
      if (seq_len < 4 || seq_len % 2 != 0) throw ConfigError("induction seq_len must be even and >= 4");
      const int pairs = (seq_len - 2) / 2;
      const int keys = vocab_size / 2 - 1;
      if (pairs > keys) {
        throw ConfigError("vocab " + std::to_string(vocab_size) + " has only " + std::to_string(keys) +
                          " key tokens, " + std::to_string(pairs) + " distinct keys requested");
      }
      if (bos_token_id != 0) throw ConfigError("synthetic tasks reserve token 0 for the start token");
      break;
    }
    case TaskKind::MajorityVote:
      if (seq_len < 2) throw ConfigError("majority seq_len must be >= 2");
      if (n_classes < 2 || n_classes + 1 > vocab_size) throw ConfigError("n_classes must be in [2, vocab_size - 1]");
      if (bos_token_id != 0) throw ConfigError("synthetic tasks reserve token 0 for the start token");
      break;
    case TaskKind::ExternalTokens:
      if (source.empty()) throw ConfigError("external tasks need a source file");
      break;
  }
}

void to_json(nlohmann::json& j, const TaskSpec& s) {
  j = {{"kind", to_string(s.kind)}, {"vocab_size", s.vocab_size}, {"seq_len", s.seq_len},
       {"n_examples", s.n_examples}, {"seed", s.seed},             {"n_classes", s.n_classes},
       {"bos_token_id", s.bos_token_id}, {"source", s.source}};
}

void from_json(const nlohmann::json& j, TaskSpec& s) {
  s.kind = parse_task_kind(j.at("kind").get<std::string>());
  j.at("vocab_size").get_to(s.vocab_size);
  j.at("seq_len").get_to(s.seq_len);
  j.at("n_examples").get_to(s.n_examples);
  j.at("seed").get_to(s.seed);
  s.n_classes = j.value("n_classes", 3);
  s.bos_token_id = j.value("bos_token_id", 0);
  s.source = j.value("source", std::string());
}

std::optional<TokenId> majority_gold(std::span<const TokenId> tokens) {
  std::map<TokenId, int> counts;
  for (TokenId t : tokens) ++counts[t];
  std::optional<TokenId> best;
  int best_count = 0;
  bool tie = false;
  for (const auto& [t, c] : counts) {
    if (c > best_count) {
      best = t;
      best_count = c;
      tie = false;
    } else if (c == best_count) {
      tie = true;
    }
  }
  if (tie) return std::nullopt;
  return best;
}

Example sample_example(const TaskSpec& spec, Rng& rng) {
  Example ex;
  ex.prompt.push_back(spec.bos_token_id);
  if (spec.kind == TaskKind::InductionRecall) {
    const int pairs = (spec.seq_len - 2) / 2;
    const int half = spec.vocab_size / 2;
    std::vector<TokenId> keys;
    for (TokenId k = 1; k < half; ++k) keys.push_back(k);
    // Partial Fisher-Yates: the first `pairs` entries become distinct keys.
    for (int i = 0; i < pairs; ++i) {
      std::swap(keys[static_cast<std::size_t>(i)], keys[i + rng.below(keys.size() - static_cast<std::size_t>(i))]);
    }
    std::vector<TokenId> values(static_cast<std::size_t>(pairs));
    for (int i = 0; i < pairs; ++i) {
      values[static_cast<std::size_t>(i)] = static_cast<TokenId>(half + rng.below(spec.vocab_size - half));
      ex.prompt.push_back(keys[static_cast<std::size_t>(i)]);
      ex.prompt.push_back(values[static_cast<std::size_t>(i)]);
    }
    const auto q = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(pairs)));
    ex.prompt.push_back(keys[q]);
    ex.gold = values[q];
    return ex;
  }
  if (spec.kind == TaskKind::MajorityVote) {
    const int m = spec.seq_len - 1;
    while (true) {
      ex.prompt.resize(1);
      for (int i = 0; i < m; ++i) ex.prompt.push_back(static_cast<TokenId>(1 + rng.below(spec.n_classes)));
      if (auto g = majority_gold(std::span(ex.prompt).subspan(1))) {
        ex.gold = *g;
        return ex;
      }
    }
  }
  throw UsageError("external tasks cannot be sampled");
}

Dataset gen_task(const TaskSpec& spec) {
  spec.validate();
  if (spec.kind == TaskKind::ExternalTokens) {
    Dataset data = load_dataset(spec.source);
    validate_dataset(data, spec.vocab_size, spec.bos_token_id);
    if (spec.n_examples > 0 && data.size() > static_cast<std::size_t>(spec.n_examples)) {
      data.resize(static_cast<std::size_t>(spec.n_examples));
    }
    return data;
  }
  Rng rng(spec.seed);
  Dataset data;
  data.reserve(static_cast<std::size_t>(spec.n_examples));
  for (int i = 0; i < spec.n_examples; ++i) data.push_back(sample_example(spec, rng));
  return data;
}

std::filesystem::path spec_sidecar_path(const std::filesystem::path& task_path) {
  auto p = task_path;
  p += ".spec.json";
  return p;
}

void save_task(const std::filesystem::path& path, const TaskSpec& spec, const Dataset& data) {
  save_dataset(path, data);
  const std::string text = nlohmann::json(spec).dump(2) + "\n";
  write_file_bytes(spec_sidecar_path(path), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::optional<TaskSpec> load_task_spec(const std::filesystem::path& task_path) {
  const auto p = spec_sidecar_path(task_path);
  if (!std::filesystem::exists(p)) return std::nullopt;
  const auto bytes = read_file_bytes(p);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end()).get<TaskSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

}  // namespace spade::harness
