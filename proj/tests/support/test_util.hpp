#pragma once

#include <cmath>
#include <vector>

#include "spade/model.hpp"
#include "spade/rng.hpp"
#include "spade/tensor.hpp"

namespace testutil {

inline std::vector<float> normals(spade::Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

inline spade::Tensor random_tensor(spade::Rng& rng, spade::Shape shape) {
  auto n = spade::shape_numel(shape);
  return spade::Tensor(std::move(shape), normals(rng, n));
}

// L=2, d=8, V=16 model shared with tests/oracles/reference.py.
inline spade::ModelConfig tiny_config() {
  spade::ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.vocab_size = 16;
  c.max_seq_len = 16;
  return c;
}

inline spade::ModelConfig small_config() {
  spade::ModelConfig c;
  c.n_layers = 4;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = 24;
  c.max_seq_len = 16;
  return c;
}

inline std::vector<spade::TokenId> random_prompt(spade::Rng& rng, std::size_t n, int vocab) {
  std::vector<spade::TokenId> t(n);
  t[0] = 0;
  for (std::size_t i = 1; i < n; ++i) t[i] = 1 + static_cast<spade::TokenId>(rng.below(static_cast<std::uint64_t>(vocab - 1)));
  return t;
}

template <class A, class B>
double max_abs_err(const A& got, const B& want, std::size_t n) {
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(static_cast<double>(got[i]) - static_cast<double>(want[i])));
  return m;
}

}  // namespace testutil
