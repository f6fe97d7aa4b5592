#include "spade/harness/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "spade/error.hpp"

namespace spade::harness {

namespace fs = std::filesystem;

const LensMapSet& LensMaps::of(LensKind kind) const {
  if (kind == LensKind::LSpade) return lspade;
  if (kind == LensKind::TunedLens) return tuned;
  throw UsageError("lens '" + std::string(to_string(kind)) + "' has no maps");
}

std::string lens_map_file_name(const LinearLensMap& map) {
  return std::string(to_string(map.lens_kind())) + "-layer" + std::to_string(map.layer) + ".spadelns";
}

void save_lens_map(const fs::path& dir, const LinearLensMap& map) { map.save(dir / lens_map_file_name(map)); }

LensMaps load_lens_maps(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("maps directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".spadelns") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  LensMaps out;
  for (const auto& f : files) {
    auto map = LinearLensMap::load(f);
    auto& set = map.target_kind == TargetKind::SpadeTarget ? out.lspade : out.tuned;
    const int l = map.layer;
    if (!set.emplace(l, std::move(map)).second) {
      throw ConfigError("two maps for layer " + std::to_string(l) + " in " + dir.string());
    }
  }
  return out;
}

const LayerwiseRow* LayerwiseReport::find(LensKind lens, int layer) const {
  for (const auto& r : rows) {
    if (r.lens == lens && r.layer == layer) return &r;
  }
  return nullptr;
}

std::optional<int> LayerwiseReport::first_layer_reaching(LensKind lens, double fraction) const {
  std::optional<int> best;
  for (const auto& r : rows) {
    if (r.lens == lens && r.accuracy >= fraction * naive_accuracy && (!best || r.layer < *best)) best = r.layer;
  }
  return best;
}

namespace {

struct Accum {
  std::size_t correct = 0, restricted_correct = 0, n = 0;
  double nll = 0.0, entropy = 0.0;

  void add(const Distribution& d, TokenId gold, const std::vector<TokenId>& options) {
    ++n;
    if (static_cast<TokenId>(d.argmax()) == gold) ++correct;
    double m = d.logits[0];
    for (float z : d.logits.data()) m = std::max(m, static_cast<double>(z));
    double sum = 0.0;
    for (float z : d.logits.data()) sum += std::exp(static_cast<double>(z) - m);
    nll += m + std::log(sum) - d.logits[static_cast<std::size_t>(gold)];
    entropy += spade::entropy(d);
    TokenId pick = options.front();
    for (TokenId t : options) {
      if (d.logits[static_cast<std::size_t>(t)] > d.logits[static_cast<std::size_t>(pick)]) pick = t;
    }
    if (pick == gold) ++restricted_correct;
  }

  LayerwiseRow row(int layer, LensKind lens) const {
    LayerwiseRow r;
    r.layer = layer;
    r.lens = lens;
    r.n = n;
    if (n == 0) return r;
    const double dn = static_cast<double>(n);
    r.accuracy = static_cast<double>(correct) / dn;
    r.perplexity = std::exp(nll / dn);
    r.mean_entropy = entropy / dn;
    r.restricted_accuracy = static_cast<double>(restricted_correct) / dn;
    return r;
  }
};

std::vector<TokenId> answer_options(const Example& ex, TokenId bos) {
  std::set<TokenId> s;
  for (TokenId t : ex.prompt) {
    if (t != bos) s.insert(t);
  }
  if (s.empty()) s.insert(ex.gold);
  return {s.begin(), s.end()};
}

bool is_linear(LensKind k) { return k == LensKind::LSpade || k == LensKind::TunedLens; }

}  // namespace

LayerwiseReport eval_layerwise(const ModelCheckpoint& ckpt, const LensMaps& maps, const Dataset& data,
                               const LayerwiseOptions& options) {
  const int L = ckpt.config.n_layers;
  validate_dataset(data, ckpt.config.vocab_size, ckpt.config.bos_token_id);
  std::vector<int> layers = options.layers;
  if (layers.empty()) {
    for (int l = 1; l <= L; ++l) layers.push_back(l);
  }
  for (int l : layers) {
    if (l < 0 || l > L) throw UsageError("layer " + std::to_string(l) + " outside [0, " + std::to_string(L) + "]");
  }
  for (LensKind k : options.lenses) {
    if (k == LensKind::Final) throw UsageError("the naive model is always reported; do not request it as a lens");
    if (!is_linear(k)) continue;
    const auto& set = maps.of(k);
    for (int l : layers) {
      if (!set.count(l)) {
        throw ConfigError("no " + std::string(to_string(k)) + " map for layer " + std::to_string(l));
      }
    }
  }

  const std::size_t n_lens = options.lenses.size();
  std::vector<Accum> acc(n_lens * layers.size());
  Accum naive;
  for (const auto& ex : data) {
    const auto opts = answer_options(ex, ckpt.config.bos_token_id);
    const auto fwd = forward_full(ckpt, ex.prompt);
    const std::size_t last = ex.prompt.size() - 1;
    naive.add(final_distribution(fwd, L), ex.gold, opts);
    for (std::size_t li = 0; li < n_lens; ++li) {
      const LensKind k = options.lenses[li];
      for (std::size_t j = 0; j < layers.size(); ++j) {
        const int l = layers[j];
        Distribution d;
        switch (k) {
          case LensKind::LogitLens: d = logit_lens(ckpt, fwd.state.at(l, last), l); break;
          case LensKind::Spade: d = spade(ckpt, fwd.state, l, options.position_mode); break;
          case LensKind::SpadeNoS: d = spade_nos(ckpt, fwd.state, l); break;
          default: d = linear_lens_apply(ckpt, maps.of(k).at(l), fwd.state.at(l, last), l); break;
        }
        acc[li * layers.size() + j].add(d, ex.gold, opts);
      }
    }
  }

  LayerwiseReport rep;
  for (std::size_t li = 0; li < n_lens; ++li) {
    for (std::size_t j = 0; j < layers.size(); ++j) rep.rows.push_back(acc[li * layers.size() + j].row(layers[j], options.lenses[li]));
  }
  rep.rows.push_back(naive.row(L, LensKind::Final));
  rep.naive_accuracy = rep.rows.back().accuracy;
  nlohmann::json lens_names = nlohmann::json::array();
  for (LensKind k : options.lenses) lens_names.push_back(to_string(k));
  rep.provenance = {{"checkpoint_hash", ckpt.content_hash()},
                    {"dataset_id", dataset_id(data)},
                    {"n_examples", data.size()},
                    {"n_layers", L},
                    {"vocab_size", ckpt.config.vocab_size},
                    {"position_mode", to_string(options.position_mode)},
                    {"lenses", lens_names}};
  return rep;
}

SweepReport eval_exit_sweep(const ModelCheckpoint& ckpt, const LensMapSet& maps, const Dataset& data,
                            const std::vector<double>& thresholds, const ExitConfig& base) {
  const int L = ckpt.config.n_layers;
  validate_dataset(data, ckpt.config.vocab_size, ckpt.config.bos_token_id);
  base.validate(L);
  SweepReport rep;
  std::size_t naive_correct = 0;
  for (const auto& ex : data) {
    const auto fwd = forward_full(ckpt, ex.prompt);
    if (static_cast<TokenId>(final_distribution(fwd, L).argmax()) == ex.gold) ++naive_correct;
  }
  const double dn = data.empty() ? 1.0 : static_cast<double>(data.size());
  rep.naive_accuracy = data.empty() ? 0.0 : static_cast<double>(naive_correct) / dn;
  for (double t : thresholds) {
    ExitConfig cfg = base;
    cfg.threshold = t;
    SweepRow row;
    row.threshold = t;
    double correct = 0, exit_sum = 0, full = 0, reduced = 0;
    for (const auto& ex : data) {
      const ExitTrace tr = run_spade_exit(ckpt, maps, ex.prompt, cfg);
      if (static_cast<TokenId>(tr.final_distribution.argmax()) == ex.gold) correct += 1;
      exit_sum += tr.exit_layer.value_or(L);
      full += static_cast<double>(tr.counter.full_token_block_ops);
      reduced += static_cast<double>(tr.counter.reduced_token_block_ops);
    }
    if (!data.empty()) {
      row.accuracy = correct / dn;
      row.mean_exit_layer = exit_sum / dn;
      row.mean_full_ops = full / dn;
      row.mean_reduced_ops = reduced / dn;
    }
    rep.rows.push_back(row);
  }
  rep.provenance = {{"checkpoint_hash", ckpt.content_hash()},
                    {"dataset_id", dataset_id(data)},
                    {"n_examples", data.size()},
                    {"n_layers", L},
                    {"interval", base.interval},
                    {"metric", to_string(base.metric)},
                    {"min_exit_layer", base.min_exit_layer},
                    {"position_mode", to_string(base.position_mode)}};
  return rep;
}

LayerwiseReport eval_cross_task(const ModelCheckpoint& ckpt, const LensMaps& maps, const Dataset& data,
                                const std::string& train_task_id, const std::string& eval_task_id,
                                const LayerwiseOptions& options) {
  const std::string hash = ckpt.content_hash();
  for (const auto* set : {&maps.lspade, &maps.tuned}) {
    for (const auto& [l, m] : *set) {
      if (m.source_checkpoint_hash != hash) {
        throw ProvenanceError("map for layer " + std::to_string(l) + " was trained on checkpoint '" +
                              m.source_checkpoint_hash + "', not '" + hash + "'");
      }
    }
  }
  LayerwiseReport rep = eval_layerwise(ckpt, maps, data, options);
  rep.provenance["train_task"] = train_task_id;
  rep.provenance["eval_task"] = eval_task_id;
  return rep;
}

}  // namespace spade::harness
