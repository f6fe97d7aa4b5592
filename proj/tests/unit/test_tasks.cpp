#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "spade/error.hpp"
#include "spade/harness/tasks.hpp"

using namespace spade;
using namespace spade::harness;

TEST_CASE("induction examples have the documented layout") {
  TaskSpec s;
  s.seed = 3;
  auto data = gen_task(s);
  REQUIRE(data.size() == 256);
  for (const auto& ex : data) {
    REQUIRE(ex.prompt.size() == 6);
    CHECK(ex.prompt[0] == 0);
    std::set<TokenId> keys;
    TokenId want = -1;
    for (std::size_t i = 1; i + 1 < ex.prompt.size(); i += 2) {
      CHECK(ex.prompt[i] >= 1);
      CHECK(ex.prompt[i] < 32);
      CHECK(ex.prompt[i + 1] >= 32);
      CHECK(ex.prompt[i + 1] < 64);
      keys.insert(ex.prompt[i]);
      if (ex.prompt[i] == ex.prompt.back()) want = ex.prompt[i + 1];
    }
    CHECK(keys.size() == 2);
    CHECK(ex.gold == want);
  }
}

TEST_CASE("one-pair induction answers with the only value") {
  TaskSpec s;
  s.seq_len = 4;
  s.n_examples = 20;
  for (const auto& ex : gen_task(s)) {
    CHECK(ex.prompt[3] == ex.prompt[1]);
    CHECK(ex.gold == ex.prompt[2]);
  }
}

TEST_CASE("generation is deterministic in the seed") {
  TaskSpec s;
  s.seed = 9;
  CHECK(dataset_to_jsonl(gen_task(s)) == dataset_to_jsonl(gen_task(s)));
  auto t = s;
  t.seed = 10;
  CHECK(dataset_to_jsonl(gen_task(s)) != dataset_to_jsonl(gen_task(t)));
}

TEST_CASE("majority vote") {
  std::vector<TokenId> five_three = {1, 2, 1, 2, 1, 1, 2, 1};
  CHECK(majority_gold(five_three) == 1);
  std::vector<TokenId> tie = {1, 2, 1, 2};
  CHECK_FALSE(majority_gold(tie).has_value());
  TaskSpec s;
  s.kind = TaskKind::MajorityVote;
  s.seq_len = 9;
  s.seed = 4;
  for (const auto& ex : gen_task(s)) {
    CHECK(ex.prompt[0] == 0);
    std::map<TokenId, int> count;
    for (std::size_t i = 1; i < ex.prompt.size(); ++i) {
      CHECK(ex.prompt[i] >= 1);
      CHECK(ex.prompt[i] <= 3);
      ++count[ex.prompt[i]];
    }
    int best = 0;
    for (auto [tok, c] : count) best = std::max(best, c);
    CHECK(count[ex.gold] == best);
    int ties = 0;
    for (auto [tok, c] : count) ties += c == best;
    CHECK(ties == 1);
  }
}

TEST_CASE("invalid specs") {
  TaskSpec s;
  s.vocab_size = 4;  // keys [1, 2) cannot hold 2 distinct keys
  CHECK_THROWS_AS(gen_task(s), ConfigError);
  s = TaskSpec{};
  s.seq_len = 3;
  CHECK_THROWS_AS(gen_task(s), ConfigError);
  s = TaskSpec{};
  s.kind = TaskKind::MajorityVote;
  s.n_classes = 64;
  CHECK_THROWS_AS(gen_task(s), ConfigError);
  CHECK_THROWS_AS(parse_task_kind("bogus"), UsageError);
}

TEST_CASE("task files carry a spec sidecar; external tasks load the file") {
  auto dir = std::filesystem::temp_directory_path() / "spade-test-tasks";
  std::filesystem::remove_all(dir);
  TaskSpec s;
  s.seed = 5;
  s.n_examples = 10;
  auto path = dir / "ind.jsonl";
  auto data = gen_task(s);
  save_task(path, s, data);
  CHECK(std::filesystem::exists(spec_sidecar_path(path)));
  auto back = load_task_spec(path);
  REQUIRE(back.has_value());
  CHECK(back->seed == 5);
  CHECK(back->seq_len == 6);
  CHECK(dataset_to_jsonl(load_dataset(path)) == dataset_to_jsonl(data));

  TaskSpec ext;
  ext.kind = TaskKind::ExternalTokens;
  ext.source = path.string();
  CHECK(dataset_to_jsonl(gen_task(ext)) == dataset_to_jsonl(data));
  CHECK_FALSE(load_task_spec(dir / "none.jsonl").has_value());
}
