#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "spade/container.hpp"
#include "spade/dataset.hpp"
#include "spade/error.hpp"
#include "spade/model.hpp"
#include "test_util.hpp"

using namespace spade;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "spade-test-container";
  fs::create_directories(dir);
  return dir / name;
}

Container sample() {
  Container c;
  c.magic = "SPADECKP";
  c.header["note"] = "x";
  c.tensors.emplace_back("a", Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  c.tensors.emplace_back("b", Tensor::vector({-1.5f}));
  return c;
}

template <class T>
T read_le(const std::vector<std::uint8_t>& b, std::size_t at) {
  T v{};
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[at + i]) << (8 * i);
  return v;
}

}  // namespace

TEST_CASE("container byte layout") {
  auto bytes = encode_container(sample());
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "SPADECKP");
  CHECK(read_le<std::uint32_t>(bytes, 8) == 1u);
  auto hlen = read_le<std::uint64_t>(bytes, 12);
  auto header = nlohmann::json::parse(std::string(bytes.begin() + 20, bytes.begin() + 20 + static_cast<long>(hlen)));
  REQUIRE(header["tensors"].size() == 2);
  CHECK(header["tensors"][0]["name"] == "a");
  CHECK(header["tensors"][0]["shape"] == nlohmann::json({2, 3}));
  CHECK(header["tensors"][0]["dtype"] == "f32");
  std::uint64_t off_b = header["tensors"][1]["offset"];
  CHECK(off_b % 64 == 0);
  CHECK(off_b >= 24);
  float v;
  std::memcpy(&v, bytes.data() + 20 + hlen + off_b, 4);
  CHECK(v == -1.5f);
  float first;
  std::memcpy(&first, bytes.data() + 20 + hlen, 4);
  CHECK(first == 1.0f);
}

TEST_CASE("container round trip and determinism") {
  auto c = sample();
  auto bytes = encode_container(c);
  CHECK(bytes == encode_container(c));
  auto back = decode_container(bytes, "SPADECKP");
  CHECK(back.header["note"] == "x");
  CHECK_FALSE(back.header.contains("tensors"));
  CHECK(back.get("a") == c.tensors[0].second);
  CHECK(back.get("b") == c.tensors[1].second);
  CHECK_THROWS_AS(back.get("zz"), FormatError);
}

TEST_CASE("container rejects malformed input") {
  auto bytes = encode_container(sample());
  CHECK_THROWS_AS(decode_container(bytes, "SPADELNS"), FormatError);
  CHECK_THROWS_AS(decode_container(std::span(bytes).first(10), "SPADECKP"), FormatError);
  CHECK_THROWS_AS(decode_container(std::span(bytes).first(bytes.size() - 4), "SPADECKP"), FormatError);
  auto v2 = bytes;
  v2[8] = 2;
  CHECK_THROWS_AS(decode_container(v2, "SPADECKP"), FormatError);
  auto bad_json = bytes;
  bad_json[20] = '!';
  CHECK_THROWS_AS(decode_container(bad_json, "SPADECKP"), FormatError);
  CHECK_THROWS_AS(read_container(scratch("missing.bin"), "SPADECKP"), IoError);
}

TEST_CASE("fnv1a64 known values") {
  CHECK(fnv1a64({}) == 0xcbf29ce484222325ULL);
  const std::uint8_t a[] = {'a'};
  CHECK(fnv1a64(a) == 0xaf63dc4c8601ec8cULL);
  CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("checkpoint save/load round trip") {
  auto ckpt = ModelCheckpoint::random(testutil::tiny_config(), 3);
  auto path = scratch("tiny.spadeckp");
  ckpt.save(path);
  auto back = ModelCheckpoint::load(path);
  CHECK(back.config == ckpt.config);
  CHECK(back.content_hash() == ckpt.content_hash());
  auto a = ckpt.named_tensors(), b = back.named_tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(*a[i].second == *b[i].second);
  }
  CHECK(read_file_bytes(path) == encode_container(back.to_container()));
}

TEST_CASE("checkpoint canonical tensor names") {
  auto names = ModelCheckpoint::zeros(testutil::tiny_config()).named_tensors();
  REQUIRE(names.size() == 1 + 2 * 9 + 2);
  CHECK(names[0].first == "embed");
  CHECK(names[1].first == "layers.1.attn_norm");
  CHECK(names[2].first == "layers.1.wq");
  CHECK(names[9].first == "layers.1.w_down");
  CHECK(names[10].first == "layers.2.attn_norm");
  CHECK(names[19].first == "final_norm");
  CHECK(names[20].first == "unembed");
}

TEST_CASE("checkpoint tamper and shape errors") {
  auto ckpt = ModelCheckpoint::random(testutil::tiny_config(), 3);
  auto c = ckpt.to_container();
  c.tensors[0].second.data()[0] += 1.0f;
  CHECK_THROWS_AS(ModelCheckpoint::from_container(c), FormatError);

  // files without a stored hash (foreign writers) still load
  auto c2 = ckpt.to_container();
  c2.header.erase("content_hash");
  CHECK(ModelCheckpoint::from_container(c2).content_hash() == ckpt.content_hash());

  auto c3 = ckpt.to_container();
  c3.tensors[1].second = Tensor::zeros({3});
  CHECK_THROWS_AS(ModelCheckpoint::from_container(c3), FormatError);

  auto c4 = ckpt.to_container();
  c4.tensors.pop_back();
  CHECK_THROWS_AS(ModelCheckpoint::from_container(c4), FormatError);
}

TEST_CASE("content hash tracks config and weights") {
  auto a = ModelCheckpoint::random(testutil::tiny_config(), 3);
  auto b = ModelCheckpoint::random(testutil::tiny_config(), 3);
  CHECK(a.content_hash() == b.content_hash());
  b.unembed.data()[5] = 0.25f;
  CHECK(a.content_hash() != b.content_hash());
  auto c = a;
  c.config.rope_theta = 500.0f;
  CHECK(a.content_hash() != c.content_hash());
}

TEST_CASE("model config validation") {
  auto c = testutil::tiny_config();
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = testutil::tiny_config();
  c.n_heads = 8;  // d_head 1 is odd, rope needs pairs
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("task jsonl round trip") {
  Dataset d = {{{0, 3, 4}, 4}, {{0, 1}, 2}};
  auto text = dataset_to_jsonl(d);
  CHECK(text == "{\"gold\":4,\"prompt\":[0,3,4]}\n{\"gold\":2,\"prompt\":[0,1]}\n");
  auto back = dataset_from_jsonl(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].prompt == d[0].prompt);
  CHECK(back[1].gold == 2);
  CHECK(dataset_id(back) == dataset_id(d));
  auto path = scratch("t.jsonl");
  save_dataset(path, d);
  CHECK(load_dataset(path).size() == 2);
  CHECK(dataset_from_jsonl("{\"prompt\":[0,1],\"gold\":1}\n\n").size() == 1);
  CHECK_THROWS_AS(dataset_from_jsonl("{\"prompt\":[0,1]}\n"), FormatError);
  CHECK_THROWS_AS(dataset_from_jsonl("not json\n"), FormatError);
}

TEST_CASE("dataset validation") {
  CHECK_NOTHROW(validate_dataset({{{0, 3}, 4}}, 8, 0));
  CHECK_THROWS_AS(validate_dataset({{{1, 3}, 4}}, 8, 0), PreconditionError);
  CHECK_THROWS_AS(validate_dataset({{{0, 9}, 4}}, 8, 0), PreconditionError);
  CHECK_THROWS_AS(validate_dataset({{{0, 3}, 8}}, 8, 0), PreconditionError);
  CHECK_THROWS_AS(validate_dataset({{{}, 1}}, 8, 0), PreconditionError);
}
