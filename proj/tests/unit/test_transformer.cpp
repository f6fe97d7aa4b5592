#include <doctest.h>

#include "oracle_values.hpp"
#include "spade/error.hpp"
#include "spade/lenses.hpp"
#include "spade/kernels.hpp"
#include "spade/model.hpp"
#include "spade/ops.hpp"
#include "test_util.hpp"

using namespace spade;
using testutil::max_abs_err;

namespace {
const std::vector<TokenId> kTinyTokens = {0, 5, 11};
}

TEST_CASE("forward_full matches reference on the tiny model") {
  auto ckpt = ModelCheckpoint::random(testutil::tiny_config(), 7);
  auto fwd = forward_full(ckpt, kTinyTokens);
  CHECK(fwd.logits.shape() == Shape{3, 16});
  CHECK(max_abs_err(fwd.logits.data(), oracle::kTinyLogits, 48) < 1e-4);
}

TEST_CASE("forward_block matches reference") {
  auto ckpt = ModelCheckpoint::random(testutil::tiny_config(), 7);
  Rng rng(104);
  auto x = testutil::random_tensor(rng, {2, 8});
  std::vector<long> pos = {0, 1};
  std::uint64_t ops = 0;
  auto y = forward_block(ckpt, 1, x, pos, &ops);
  CHECK(max_abs_err(y.data(), oracle::kTinyBlock1, 16) < 1e-5);
  CHECK(ops == 2);
  CHECK_THROWS_AS(forward_block(ckpt, 3, x, pos), UsageError);
  CHECK_THROWS_AS(forward_block(ckpt, 1, x, std::vector<long>{0}), DimensionError);
}

TEST_CASE("unembed matches reference, ignores scale, maps zero to zero") {
  auto ckpt = ModelCheckpoint::random(testutil::tiny_config(), 7);
  Rng rng(105);
  auto h = testutil::normals(rng, 8);
  auto z = unembed(ckpt, h);
  CHECK(max_abs_err(z.data(), oracle::kTinyUnembedSeeded, 16) < 1e-5);
  auto h4 = h;
  for (auto& v : h4) v *= 4.0f;
  CHECK(max_abs_diff(unembed(ckpt, h4).data(), z.data()) < 1e-4);
  std::vector<float> zero(8, 0.0f);
  auto z0 = unembed(ckpt, zero);
  for (float v : z0.data()) CHECK(v == 0.0f);
}

TEST_CASE("embed looks up rows and rejects bad ids") {
  auto ckpt = ModelCheckpoint::random(testutil::tiny_config(), 7);
  std::vector<TokenId> t = {3, 0};
  auto e = embed(ckpt, t);
  CHECK(bit_equal(e.row(0), ckpt.embed.row(3)));
  CHECK(bit_equal(e.row(1), ckpt.embed.row(0)));
  CHECK_THROWS_AS(embed(ckpt, std::vector<TokenId>{16}), DimensionError);
  CHECK_THROWS_AS(forward_full(ckpt, std::vector<TokenId>{}), PreconditionError);
}

TEST_CASE("causality: a suffix change leaves the prefix untouched") {
  auto ckpt = ModelCheckpoint::random(testutil::small_config(), 2);
  Rng rng(1);
  auto a = testutil::random_prompt(rng, 9, 24);
  auto b = a;
  b[8] = (b[8] % 23) + 1;
  b[7] = (b[7] % 23) + 1;
  auto fa = forward_full(ckpt, a), fb = forward_full(ckpt, b);
  for (std::size_t l = 0; l <= 4; ++l)
    for (std::size_t i = 0; i < 7; ++i) CHECK(bit_equal(fa.state.at(l, i), fb.state.at(l, i)));
}

TEST_CASE("prefix property: forward of a prefix equals the prefix of the forward") {
  auto ckpt = ModelCheckpoint::random(testutil::small_config(), 2);
  Rng rng(4);
  auto full = testutil::random_prompt(rng, 10, 24);
  std::vector<TokenId> pre(full.begin(), full.begin() + 6);
  auto ff = forward_full(ckpt, full), fp = forward_full(ckpt, pre);
  for (std::size_t i = 0; i < 6; ++i) CHECK(bit_equal(ff.logits.row(i), fp.logits.row(i)));
}

TEST_CASE("re-entry: forward_from with all rows and original positions reproduces the full pass") {
  auto ckpt = ModelCheckpoint::random(testutil::small_config(), 5);
  Rng rng(6);
  auto t = testutil::random_prompt(rng, 7, 24);
  auto fwd = forward_full(ckpt, t);
  for (int l = 0; l <= 4; ++l) {
    ReducedState r{fwd.state.layer(static_cast<std::size_t>(l)), iota_positions(7), l};
    std::uint64_t ops = 0;
    auto top = forward_from(ckpt, r, &ops);
    CHECK(ops == static_cast<std::uint64_t>(7 * (4 - l)));
    CHECK(bit_equal(top.data(), fwd.state.layer(4).data()));
  }
}

TEST_CASE("op counting and final distribution") {
  auto ckpt = ModelCheckpoint::random(testutil::small_config(), 5);
  std::uint64_t ops = 0;
  auto fwd = forward_full(ckpt, std::vector<TokenId>{0, 1, 2, 3, 4}, &ops);
  CHECK(ops == 5 * 4);
  auto d = final_distribution(fwd, 4);
  CHECK(bit_equal(d.logits.data(), fwd.logits.row(4)));
  CHECK(bit_equal(d.probs.data(), fwd.probs.row(4)));
  CHECK(d.source == LensKind::Final);
  CHECK(d.layer == 4);
}

TEST_CASE("forward is deterministic and independent of kernel choice") {
  auto ckpt = ModelCheckpoint::random(ModelConfig{}, 8);
  Rng rng(7);
  auto t = testutil::random_prompt(rng, 12, 64);
  const auto before = kernels::active().isa;
  kernels::select(kernels::Isa::Scalar);
  auto a = forward_full(ckpt, t);
  for (auto isa : kernels::available()) {
    kernels::select(isa);
    auto b = forward_full(ckpt, t);
    CHECK(bit_equal(a.state.hidden.data(), b.state.hidden.data()));
    CHECK(bit_equal(a.probs.data(), b.probs.data()));
  }
  kernels::select(before);
}

TEST_CASE("zero checkpoint gives uniform predictions") {
  auto ckpt = ModelCheckpoint::zeros(testutil::tiny_config());
  auto fwd = forward_full(ckpt, kTinyTokens);
  for (float p : fwd.probs.data()) CHECK(p == doctest::Approx(1.0 / 16));
}
