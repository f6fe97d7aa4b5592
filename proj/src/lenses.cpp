#include "spade/lenses.hpp"

#include <algorithm>
#include <cmath>

#include "spade/error.hpp"
#include "spade/kernels.hpp"
#include "spade/ops.hpp"

namespace spade {

std::string_view to_string(LensKind k) {
  switch (k) {
    case LensKind::LogitLens: return "logitlens";
    case LensKind::Spade: return "spade";
    case LensKind::SpadeNoS: return "spadenos";
    case LensKind::LSpade: return "lspade";
    case LensKind::TunedLens: return "tunedlens";
    case LensKind::Final: return "final";
  }
  return "?";
}

std::string_view to_string(TargetKind k) { return k == TargetKind::SpadeTarget ? "spade" : "final"; }
std::string_view to_string(PositionMode m) { return m == PositionMode::Compact ? "compact" : "original"; }

LensKind parse_lens_kind(std::string_view s) {
  for (auto k : {LensKind::LogitLens, LensKind::Spade, LensKind::SpadeNoS, LensKind::LSpade, LensKind::TunedLens,
                 LensKind::Final}) {
    if (to_string(k) == s) return k;
  }
  throw UsageError("unknown lens '" + std::string(s) + "'");
}

TargetKind parse_target_kind(std::string_view s) {
  if (s == "spade") return TargetKind::SpadeTarget;
  if (s == "final") return TargetKind::FinalTarget;
  throw UsageError("unknown target '" + std::string(s) + "' (expected spade|final)");
}

PositionMode parse_position_mode(std::string_view s) {
  if (s == "compact") return PositionMode::Compact;
  if (s == "original") return PositionMode::Original;
  throw UsageError("unknown position mode '" + std::string(s) + "' (expected compact|original)");
}

std::size_t Distribution::argmax() const {
  const auto p = probs.data();
  // First maximal index, so ties resolve to the lowest token id.
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

Distribution make_distribution(Tensor logits, LensKind source, int layer) {
  Distribution d;
  d.probs = softmax(logits);
  d.logits = std::move(logits);
  d.source = source;
  d.layer = layer;
  return d;
}

Distribution final_distribution(const ForwardResult& fwd, int n_layers) {
  const std::size_t last = fwd.logits.dim(0) - 1;
  const auto row = fwd.logits.row(last);
  Distribution d;
  d.logits = Tensor({row.size()}, std::vector<float>(row.begin(), row.end()));
  const auto p = fwd.probs.row(last);
  d.probs = Tensor({p.size()}, std::vector<float>(p.begin(), p.end()));
  d.source = LensKind::Final;
  d.layer = n_layers;
  return d;
}

LinearLensMap LinearLensMap::identity(int layer, std::size_t d, TargetKind kind) {
  LinearLensMap m;
  m.layer = layer;
  m.A = Tensor::identity(d);
  m.b = Tensor({d});
  m.target_kind = kind;
  return m;
}

Tensor LinearLensMap::apply(std::span<const float> h) const {
  const std::size_t d = b.size();
  if (h.size() != d) throw DimensionError("lens map expects a length-" + std::to_string(d) + " state");
  Tensor out({d});
  kernels::active().matvec(A.data().data(), d, d, h.data(), out.data().data());
  for (std::size_t i = 0; i < d; ++i) out[i] = out[i] + b[i];
  return out;
}

void LinearLensMap::validate(int n_layers) const {
  if (layer < 0 || layer > n_layers) throw ConfigError("lens map layer " + std::to_string(layer) + " out of range");
  if (A.rank() != 2 || A.dim(0) != A.dim(1) || b.rank() != 1 || b.dim(0) != A.dim(0)) {
    throw DimensionError("lens map shapes A " + shape_str(A.shape()) + ", b " + shape_str(b.shape()));
  }
  A.require_finite("lens map A");
  b.require_finite("lens map b");
}

void LinearLensMap::save(const std::filesystem::path& path) const {
  Container c;
  c.magic = "SPADELNS";
  c.header = {{"layer", layer},
              {"target_kind", to_string(target_kind)},
              {"d_model", b.size()},
              {"source_checkpoint_hash", source_checkpoint_hash},
              {"final_train_loss", final_train_loss}};
  c.tensors.emplace_back("A", A);
  c.tensors.emplace_back("b", b);
  write_container(path, c);
}

LinearLensMap LinearLensMap::load(const std::filesystem::path& path) {
  const Container c = read_container(path, "SPADELNS");
  LinearLensMap m;
  try {
    m.layer = c.header.at("layer").get<int>();
    m.target_kind = parse_target_kind(c.header.at("target_kind").get<std::string>());
    m.source_checkpoint_hash = c.header.at("source_checkpoint_hash").get<std::string>();
    m.final_train_loss = c.header.value("final_train_loss", 0.0);
    const auto d = c.header.at("d_model").get<std::size_t>();
    m.A = c.get("A");
    m.b = c.get("b");
    if (m.A.shape() != Shape{d, d} || m.b.shape() != Shape{d}) throw FormatError("map tensors disagree with d_model");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

namespace {

void check_layer_range(const ModelCheckpoint& ckpt, int layer) {
  if (layer < 0 || layer > ckpt.config.n_layers) {
    throw UsageError("layer " + std::to_string(layer) + " outside [0, " + std::to_string(ckpt.config.n_layers) + "]");
  }
}

void check_starts_with_bos(const ModelCheckpoint& ckpt, const LayerState& state) {
  if (state.tokens.empty() || state.tokens.front() != ckpt.config.bos_token_id) {
    throw PreconditionError("SPADE requires the sequence to begin with the start token " +
                            std::to_string(ckpt.config.bos_token_id));
  }
}

Tensor row_copy(std::span<const float> r) { return Tensor({1, r.size()}, std::vector<float>(r.begin(), r.end())); }

}  // namespace

Distribution logit_lens(const ModelCheckpoint& ckpt, std::span<const float> h_l, int layer) {
  check_layer_range(ckpt, layer);
  return make_distribution(unembed(ckpt, h_l), LensKind::LogitLens, layer);
}

ReducedState make_spade_pair(std::span<const float> start_row, std::span<const float> answer_row, std::size_t n,
                             int layer, PositionMode mode) {
  if (n < 2) throw PreconditionError("SPADE needs a start token and at least one more position");
  if (start_row.size() != answer_row.size()) throw DimensionError("SPADE rows differ in width");
  ReducedState r;
  r.rows = Tensor({2, start_row.size()});
  std::copy(start_row.begin(), start_row.end(), r.rows.row(0).begin());
  std::copy(answer_row.begin(), answer_row.end(), r.rows.row(1).begin());
  r.positions = {0, mode == PositionMode::Compact ? 1L : static_cast<long>(n - 1)};
  r.layer = layer;
  return r;
}

ReducedState spade_reduced_state(const ModelCheckpoint& ckpt, const LayerState& state, int layer, PositionMode mode) {
  check_layer_range(ckpt, layer);
  check_starts_with_bos(ckpt, state);
  const std::size_t n = state.n_positions();
  if (n < 2) throw PreconditionError("SPADE needs a start token and at least one more position");
  const auto l = static_cast<std::size_t>(layer);
  return make_spade_pair(state.at(l, 0), state.at(l, n - 1), n, layer, mode);
}

Distribution spade_decode(const ModelCheckpoint& ckpt, const ReducedState& pair, std::uint64_t* token_block_ops) {
  const Tensor top = forward_from(ckpt, pair, token_block_ops);
  return make_distribution(unembed(ckpt, top.row(top.dim(0) - 1)), LensKind::Spade, pair.layer);
}

Distribution spade(const ModelCheckpoint& ckpt, const LayerState& state, int layer, PositionMode mode,
                   std::uint64_t* token_block_ops) {
  return spade_decode(ckpt, spade_reduced_state(ckpt, state, layer, mode), token_block_ops);
}

Distribution spade_nos(const ModelCheckpoint& ckpt, const LayerState& state, int layer,
                       std::uint64_t* token_block_ops) {
  check_layer_range(ckpt, layer);
  check_starts_with_bos(ckpt, state);
  const std::size_t n = state.n_positions();
  ReducedState r;
  r.rows = row_copy(state.at(static_cast<std::size_t>(layer), n - 1));
  // A lone row attends only to itself, so its position id cannot change the result.
  r.positions = {0};
  r.layer = layer;
  const Tensor top = forward_from(ckpt, r, token_block_ops);
  return make_distribution(unembed(ckpt, top.row(0)), LensKind::SpadeNoS, layer);
}

Distribution linear_lens_apply(const ModelCheckpoint& ckpt, const LinearLensMap& map, std::span<const float> h_l,
                               int layer) {
  check_layer_range(ckpt, layer);
  if (map.layer != layer) {
    throw UsageError("lens map trained for layer " + std::to_string(map.layer) + " applied to layer " +
                     std::to_string(layer));
  }
  const Tensor mapped = map.apply(h_l);
  return make_distribution(unembed(ckpt, mapped.data()), map.lens_kind(), layer);
}

double entropy(const Distribution& dist) { return entropy_of(dist.probs.data()); }

double restricted_entropy(const Distribution& dist, std::span<const TokenId> candidates) {
  double mass = 0.0;
  for (TokenId t : candidates) mass += dist.probs[static_cast<std::size_t>(t)];
  if (!(mass > 0.0)) return 0.0;
  double h = 0.0;
  for (TokenId t : candidates) {
    const double p = dist.probs[static_cast<std::size_t>(t)] / mass;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double top2_gap(const Distribution& dist) {
  const auto p = dist.probs.data();
  if (p.size() < 2) throw DimensionError("top2_gap needs a vocabulary of at least 2");
  float first = -1.0f, second = -1.0f;
  for (float v : p) {
    if (v > first) {
      second = first;
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  return static_cast<double>(first) - static_cast<double>(second);
}

}  // namespace spade
