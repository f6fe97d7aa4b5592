#include "spade/model.hpp"

#include <cmath>

#include "block.hpp"
#include "spade/error.hpp"
#include "spade/kernels.hpp"
#include "spade/ops.hpp"
#include "spade/rng.hpp"

namespace spade {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (d_model < 1 || n_heads < 1) fail("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
  if (d_head() % 2 != 0) fail("d_head " + std::to_string(d_head()) + " must be even");
  if (d_ff < 1) fail("d_ff must be positive");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (bos_token_id < 0 || bos_token_id >= vocab_size) fail("bos_token_id outside [0, vocab_size)");
  if (!(rope_theta > 0.0f) || !std::isfinite(rope_theta)) fail("rope_theta must be positive");
  if (!(norm_eps >= 0.0f) || !std::isfinite(norm_eps)) fail("norm_eps must be non-negative");
  if (max_seq_len < 1) fail("max_seq_len must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},     {"d_model", c.d_model},       {"n_heads", c.n_heads},
                     {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size}, {"rope_theta", c.rope_theta},
                     {"norm_eps", c.norm_eps},     {"bos_token_id", c.bos_token_id},
                     {"max_seq_len", c.max_seq_len}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  try {
    j.at("n_layers").get_to(c.n_layers);
    j.at("d_model").get_to(c.d_model);
    j.at("n_heads").get_to(c.n_heads);
    j.at("d_ff").get_to(c.d_ff);
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("rope_theta").get_to(c.rope_theta);
    j.at("norm_eps").get_to(c.norm_eps);
    j.at("bos_token_id").get_to(c.bos_token_id);
    c.max_seq_len = j.value("max_seq_len", 2048);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

namespace {

Tensor ones(std::size_t n) {
  Tensor t({n});
  for (auto& v : t.data()) v = 1.0f;
  return t;
}

void fill_normal(Tensor& t, Rng& rng, float stddev) {
  for (auto& v : t.data()) v = rng.normal() * stddev;
}

}  // namespace

ModelCheckpoint ModelCheckpoint::zeros(const ModelConfig& config) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto f = static_cast<std::size_t>(config.d_ff);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  ModelCheckpoint c;
  c.config = config;
  c.embed = Tensor({v, d});
  for (int l = 0; l < config.n_layers; ++l) {
    c.layers.push_back(LayerWeights{ones(d), Tensor({d, d}), Tensor({d, d}), Tensor({d, d}), Tensor({d, d}), ones(d),
                                    Tensor({f, d}), Tensor({f, d}), Tensor({d, f})});
  }
  c.final_norm = ones(d);
  c.unembed = Tensor({v, d});
  return c;
}

ModelCheckpoint ModelCheckpoint::random(const ModelConfig& config, std::uint64_t seed) {
  ModelCheckpoint c = zeros(config);
  Rng rng(seed);
  const float d = static_cast<float>(config.d_model);
  const float f = static_cast<float>(config.d_ff);
  const float out_scale = 1.0f / std::sqrt(2.0f * static_cast<float>(config.n_layers));
  fill_normal(c.embed, rng, 1.0f);
  for (auto& w : c.layers) {
    fill_normal(w.wq, rng, 1.0f / std::sqrt(d));
    fill_normal(w.wk, rng, 1.0f / std::sqrt(d));
    fill_normal(w.wv, rng, 1.0f / std::sqrt(d));
    fill_normal(w.wo, rng, out_scale / std::sqrt(d));
    fill_normal(w.w_up, rng, 1.0f / std::sqrt(d));
    fill_normal(w.w_gate, rng, 1.0f / std::sqrt(d));
    fill_normal(w.w_down, rng, out_scale / std::sqrt(f));
  }
  fill_normal(c.unembed, rng, 1.0f / std::sqrt(d));
  return c;
}

std::vector<std::pair<std::string, const Tensor*>> ModelCheckpoint::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.emplace_back("embed", &embed);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto p = "layers." + std::to_string(i + 1) + ".";
    const auto& w = layers[i];
    out.emplace_back(p + "attn_norm", &w.attn_norm);
    out.emplace_back(p + "wq", &w.wq);
    out.emplace_back(p + "wk", &w.wk);
    out.emplace_back(p + "wv", &w.wv);
    out.emplace_back(p + "wo", &w.wo);
    out.emplace_back(p + "mlp_norm", &w.mlp_norm);
    out.emplace_back(p + "w_up", &w.w_up);
    out.emplace_back(p + "w_gate", &w.w_gate);
    out.emplace_back(p + "w_down", &w.w_down);
  }
  out.emplace_back("final_norm", &final_norm);
  out.emplace_back("unembed", &unembed);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> ModelCheckpoint::named_tensors_mut() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, t] : std::as_const(*this).named_tensors()) out.emplace_back(name, const_cast<Tensor*>(t));
  return out;
}

void ModelCheckpoint::validate() const {
  config.validate();
  if (layers.size() != static_cast<std::size_t>(config.n_layers)) {
    throw FormatError("checkpoint has " + std::to_string(layers.size()) + " blocks, config says " +
                      std::to_string(config.n_layers));
  }
  const ModelCheckpoint shapes = zeros(config);
  const auto expected = shapes.named_tensors();
  const auto actual = named_tensors();
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (actual[i].second->shape() != expected[i].second->shape()) {
      throw FormatError("tensor '" + actual[i].first + "' has shape " + shape_str(actual[i].second->shape()) +
                        ", expected " + shape_str(expected[i].second->shape()));
    }
    if (!actual[i].second->all_finite()) throw NumericError("tensor '" + actual[i].first + "' is not finite");
  }
}

std::string ModelCheckpoint::content_hash() const {
  const std::string cfg = nlohmann::json(config).dump();
  std::uint64_t h = fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(cfg.data()), cfg.size()));
  Container c;
  c.magic = "SPADECKP";
  for (const auto& [name, t] : named_tensors()) c.tensors.emplace_back(name, *t);
  const auto bytes = encode_container(c);
  return hex64(fnv1a64(bytes, h));
}

Container ModelCheckpoint::to_container() const {
  Container c;
  c.magic = "SPADECKP";
  c.header["config"] = config;
  c.header["content_hash"] = content_hash();
  for (const auto& [name, t] : named_tensors()) c.tensors.emplace_back(name, *t);
  return c;
}

ModelCheckpoint ModelCheckpoint::from_container(const Container& c) {
  if (!c.header.contains("config")) throw FormatError("checkpoint header lacks config");
  ModelCheckpoint ckpt = zeros(c.header["config"].get<ModelConfig>());
  if (c.tensors.size() != ckpt.named_tensors().size()) {
    throw FormatError("checkpoint lists " + std::to_string(c.tensors.size()) + " tensors, expected " +
                      std::to_string(ckpt.named_tensors().size()));
  }
  for (auto& [name, slot] : ckpt.named_tensors_mut()) {
    const Tensor& t = c.get(name);
    if (t.shape() != slot->shape()) {
      throw FormatError("tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                        shape_str(slot->shape()));
    }
    *slot = t;
  }
  ckpt.validate();
  if (c.header.contains("content_hash") && c.header["content_hash"].get<std::string>() != ckpt.content_hash()) {
    throw FormatError("checkpoint content hash mismatch");
  }
  return ckpt;
}

ModelCheckpoint ModelCheckpoint::load(const std::filesystem::path& path) {
  try {
    return from_container(read_container(path, "SPADECKP"));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void ModelCheckpoint::save(const std::filesystem::path& path) const { write_container(path, to_container()); }

std::span<const float> LayerState::at(std::size_t layer, std::size_t position) const {
  const std::size_t n = hidden.dim(1), d = hidden.dim(2);
  if (layer > n_layers() || position >= n) throw DimensionError("LayerState index out of range");
  return hidden.data().subspan((layer * n + position) * d, d);
}

Tensor LayerState::layer(std::size_t l) const {
  const std::size_t n = hidden.dim(1), d = hidden.dim(2);
  if (l > n_layers()) throw DimensionError("LayerState layer out of range");
  const auto src = hidden.data().subspan(l * n * d, n * d);
  return Tensor({n, d}, std::vector<float>(src.begin(), src.end()));
}

std::vector<long> iota_positions(std::size_t n) {
  std::vector<long> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<long>(i);
  return p;
}

Tensor embed(const ModelCheckpoint& ckpt, std::span<const TokenId> tokens) {
  const auto d = static_cast<std::size_t>(ckpt.config.d_model);
  Tensor out({tokens.size(), d});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenId t = tokens[i];
    if (t < 0 || t >= ckpt.config.vocab_size) {
      throw DimensionError("token id " + std::to_string(t) + " at position " + std::to_string(i) + " outside [0, " +
                           std::to_string(ckpt.config.vocab_size) + ")");
    }
    const auto src = ckpt.embed.row(static_cast<std::size_t>(t));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

namespace detail {

void block_forward(const ModelCheckpoint& ckpt, int layer, std::span<const float> in, std::size_t m,
                   std::span<const long> positions, std::span<float> out, BlockCache* cache) {
  const auto& cfg = ckpt.config;
  const auto& w = ckpt.block(layer);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto f = static_cast<std::size_t>(cfg.d_ff);
  const auto heads = static_cast<std::size_t>(cfg.n_heads);
  const std::size_t dh = d / heads;
  const auto& kt = kernels::active();
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  BlockCache local;
  BlockCache& c = cache ? *cache : local;
  c.m = m;
  c.x_in.assign(in.begin(), in.end());
  c.a.assign(m * d, 0.0f);
  c.inv1.assign(m, 0.0f);
  c.q.assign(m * d, 0.0f);
  c.k.assign(m * d, 0.0f);
  c.v.assign(m * d, 0.0f);
  c.att.assign(heads * m * m, 0.0f);
  c.o.assign(m * d, 0.0f);
  c.x_mid.assign(m * d, 0.0f);
  c.b.assign(m * d, 0.0f);
  c.inv2.assign(m, 0.0f);
  c.up.assign(m * f, 0.0f);
  c.gate.assign(m * f, 0.0f);
  c.hdn.assign(m * f, 0.0f);

  for (std::size_t i = 0; i < m; ++i) {
    const auto x = in.subspan(i * d, d);
    const auto a = std::span(c.a).subspan(i * d, d);
    c.inv1[i] = ops::rmsnorm(x, w.attn_norm.data(), cfg.norm_eps, a);
    kt.matvec(w.wq.data().data(), d, d, a.data(), c.q.data() + i * d);
    kt.matvec(w.wk.data().data(), d, d, a.data(), c.k.data() + i * d);
    kt.matvec(w.wv.data().data(), d, d, a.data(), c.v.data() + i * d);
    ops::rope(std::span(c.q).subspan(i * d, d), heads, positions[i], cfg.rope_theta);
    ops::rope(std::span(c.k).subspan(i * d, d), heads, positions[i], cfg.rope_theta);
  }

  std::vector<float> scores(m);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t visible = 0;
      for (std::size_t j = 0; j < m; ++j) {
        if (positions[j] > positions[i]) continue;
        scores[visible++] = kt.dot(c.q.data() + i * d + h * dh, c.k.data() + j * d + h * dh, dh) * scale;
      }
      ops::softmax(std::span(scores).first(visible), std::span(scores).first(visible));
      float* att_row = c.att.data() + (h * m + i) * m;
      float* oi = c.o.data() + i * d + h * dh;
      std::size_t s = 0;
      for (std::size_t j = 0; j < m; ++j) {
        if (positions[j] > positions[i]) continue;
        att_row[j] = scores[s++];
        kt.axpy(att_row[j], c.v.data() + j * d + h * dh, oi, dh);
      }
    }
  }

  std::vector<float> tmp(std::max(d, f));
  for (std::size_t i = 0; i < m; ++i) {
    kt.matvec(w.wo.data().data(), d, d, c.o.data() + i * d, tmp.data());
    float* xm = c.x_mid.data() + i * d;
    for (std::size_t e = 0; e < d; ++e) xm[e] = in[i * d + e] + tmp[e];
    const auto b = std::span(c.b).subspan(i * d, d);
    c.inv2[i] = ops::rmsnorm(std::span<const float>(xm, d), w.mlp_norm.data(), cfg.norm_eps, b);
    float* up = c.up.data() + i * f;
    float* gate = c.gate.data() + i * f;
    float* hdn = c.hdn.data() + i * f;
    kt.matvec(w.w_up.data().data(), f, d, b.data(), up);
    kt.matvec(w.w_gate.data().data(), f, d, b.data(), gate);
    for (std::size_t e = 0; e < f; ++e) hdn[e] = silu(gate[e]) * up[e];
    kt.matvec(w.w_down.data().data(), d, f, hdn, tmp.data());
    for (std::size_t e = 0; e < d; ++e) out[i * d + e] = xm[e] + tmp[e];
  }
}

}  // namespace detail

namespace {

void check_positions(std::span<const long> positions, std::size_t m) {
  if (positions.size() != m) {
    throw DimensionError("got " + std::to_string(positions.size()) + " positions for " + std::to_string(m) + " rows");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (positions[i] < 0) throw PreconditionError("negative position id");
    if (i > 0 && positions[i] <= positions[i - 1]) throw PreconditionError("positions must be strictly increasing");
  }
}

void check_layer(const ModelCheckpoint& ckpt, int layer) {
  if (layer < 1 || layer > ckpt.config.n_layers) {
    throw UsageError("block index " + std::to_string(layer) + " outside [1, " + std::to_string(ckpt.config.n_layers) +
                     "]");
  }
}

}  // namespace

Tensor forward_block(const ModelCheckpoint& ckpt, int layer, const Tensor& states, std::span<const long> positions,
                     std::uint64_t* token_block_ops) {
  check_layer(ckpt, layer);
  const auto d = static_cast<std::size_t>(ckpt.config.d_model);
  if (states.rank() != 2 || states.dim(1) != d) {
    throw DimensionError("forward_block states must be [m x " + std::to_string(d) + "], got " +
                         shape_str(states.shape()));
  }
  const std::size_t m = states.dim(0);
  check_positions(positions, m);
  Tensor out({m, d});
  detail::block_forward(ckpt, layer, states.data(), m, positions, out.data(), nullptr);
  if (token_block_ops) *token_block_ops += m;
  return out;
}

Tensor unembed(const ModelCheckpoint& ckpt, std::span<const float> h) {
  const auto d = static_cast<std::size_t>(ckpt.config.d_model);
  const auto v = static_cast<std::size_t>(ckpt.config.vocab_size);
  if (h.size() != d) throw DimensionError("unembed expects a length-" + std::to_string(d) + " state");
  std::vector<float> normed(d);
  ops::rmsnorm(h, ckpt.final_norm.data(), ckpt.config.norm_eps, normed);
  Tensor logits({v});
  kernels::active().matvec(ckpt.unembed.data().data(), v, d, normed.data(), logits.data().data());
  return logits;
}

ForwardResult forward_full(const ModelCheckpoint& ckpt, std::span<const TokenId> tokens,
                           std::uint64_t* token_block_ops) {
  const std::size_t n = tokens.size();
  if (n < 1) throw PreconditionError("forward_full needs at least one token");
  if (n > static_cast<std::size_t>(ckpt.config.max_seq_len)) {
    throw PreconditionError("sequence length " + std::to_string(n) + " exceeds max_seq_len " +
                            std::to_string(ckpt.config.max_seq_len));
  }
  const auto L = static_cast<std::size_t>(ckpt.config.n_layers);
  const auto d = static_cast<std::size_t>(ckpt.config.d_model);
  const auto v = static_cast<std::size_t>(ckpt.config.vocab_size);

  ForwardResult r;
  r.state.tokens.assign(tokens.begin(), tokens.end());
  r.state.hidden = Tensor({L + 1, n, d});
  const Tensor e = embed(ckpt, tokens);
  std::copy(e.data().begin(), e.data().end(), r.state.hidden.data().begin());
  const auto positions = iota_positions(n);
  for (std::size_t l = 1; l <= L; ++l) {
    const auto prev = std::span<const float>(r.state.hidden.data()).subspan((l - 1) * n * d, n * d);
    const auto next = r.state.hidden.data().subspan(l * n * d, n * d);
    detail::block_forward(ckpt, static_cast<int>(l), prev, n, positions, next, nullptr);
    if (token_block_ops) *token_block_ops += n;
  }
  r.logits = Tensor({n, v});
  r.probs = Tensor({n, v});
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor z = unembed(ckpt, r.state.at(L, i));
    std::copy(z.data().begin(), z.data().end(), r.logits.row(i).begin());
    ops::softmax(z.data(), r.probs.row(i));
  }
  return r;
}

Tensor forward_from(const ModelCheckpoint& ckpt, const ReducedState& reduced, std::uint64_t* token_block_ops) {
  const int L = ckpt.config.n_layers;
  if (reduced.layer < 0 || reduced.layer > L) {
    throw UsageError("re-entry layer " + std::to_string(reduced.layer) + " outside [0, " + std::to_string(L) + "]");
  }
  const auto d = static_cast<std::size_t>(ckpt.config.d_model);
  if (reduced.rows.rank() != 2 || reduced.rows.dim(1) != d) {
    throw DimensionError("reduced rows must be [m x " + std::to_string(d) + "]");
  }
  const std::size_t m = reduced.rows.dim(0);
  check_positions(reduced.positions, m);
  Tensor cur = reduced.rows;
  Tensor next({m, d});
  for (int l = reduced.layer + 1; l <= L; ++l) {
    detail::block_forward(ckpt, l, cur.data(), m, reduced.positions, next.data(), nullptr);
    std::swap(cur, next);
    if (token_block_ops) *token_block_ops += m;
  }
  return cur;
}

}  // namespace spade
