#include "spade/early_exit.hpp"

#include "spade/error.hpp"

namespace spade {

std::string_view to_string(ExitMetric m) { return m == ExitMetric::Entropy ? "entropy" : "top2"; }

ExitMetric parse_exit_metric(std::string_view s) {
  if (s == "entropy") return ExitMetric::Entropy;
  if (s == "top2") return ExitMetric::Top2Gap;
  throw UsageError("unknown metric '" + std::string(s) + "' (expected entropy|top2)");
}

bool metric_triggers(ExitMetric metric, double value, double threshold) {
  return metric == ExitMetric::Entropy ? value <= threshold : value >= threshold;
}

void ExitConfig::validate(int n_layers) const {
  if (interval < 1) throw ConfigError("exit interval must be >= 1");
  if (min_exit_layer < 0 || min_exit_layer > n_layers) {
    throw ConfigError("min_exit_layer " + std::to_string(min_exit_layer) + " outside [0, " + std::to_string(n_layers) +
                      "]");
  }
}

std::vector<int> ExitConfig::scheduled_layers(int n_layers) const {
  std::vector<int> out;
  for (int l = 1; l <= n_layers; ++l) {
    if (l % interval == 0 && l >= min_exit_layer) out.push_back(l);
  }
  return out;
}

nlohmann::json ExitTrace::to_json() const {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& [l, v] : checked_layers) checks.push_back({l, v});
  return {{"exit_layer", exit_layer ? nlohmann::json(*exit_layer) : nlohmann::json(nullptr)},
          {"checks", checks},
          {"ops",
           {{"full", counter.full_token_block_ops},
            {"reduced", counter.reduced_token_block_ops},
            {"lens", counter.lens_evals}}},
          {"argmax_token", final_distribution.argmax()},
          {"entropy_final", entropy(final_distribution)}};
}

ExitTrace run_spade_exit(const ModelCheckpoint& ckpt, const LensMapSet& maps, std::span<const TokenId> tokens,
                         const ExitConfig& config) {
  const int L = ckpt.config.n_layers;
  config.validate(L);
  const auto schedule = config.scheduled_layers(L);
  for (int l : schedule) {
    const auto it = maps.find(l);
    if (it == maps.end()) throw ConfigError("no lens map for scheduled check layer " + std::to_string(l));
    if (it->second.layer != l) throw ConfigError("map stored under layer " + std::to_string(l) + " is for layer " +
                                                 std::to_string(it->second.layer));
  }
  const std::size_t n = tokens.size();
  if (n < 2) throw PreconditionError("early exit needs a start token and at least one more position");
  if (tokens[0] != ckpt.config.bos_token_id) throw PreconditionError("sequence does not begin with the start token");
  if (n > static_cast<std::size_t>(ckpt.config.max_seq_len)) throw PreconditionError("sequence exceeds max_seq_len");

  ExitTrace trace;
  const auto positions = iota_positions(n);
  Tensor h = embed(ckpt, tokens);
  std::size_t next_check = 0;
  for (int l = 1; l <= L; ++l) {
    h = forward_block(ckpt, l, h, positions, &trace.counter.full_token_block_ops);
    if (next_check >= schedule.size() || schedule[next_check] != l) continue;
    ++next_check;
    const Distribution probe = linear_lens_apply(ckpt, maps.at(l), h.row(n - 1), l);
    ++trace.counter.lens_evals;
    const double value = config.metric == ExitMetric::Entropy ? entropy(probe) : top2_gap(probe);
    trace.checked_layers.emplace_back(l, value);
    if (metric_triggers(config.metric, value, config.threshold)) {
      trace.exit_layer = l;
      const ReducedState pair = make_spade_pair(h.row(0), h.row(n - 1), n, l, config.position_mode);
      trace.final_distribution = spade_decode(ckpt, pair, &trace.counter.reduced_token_block_ops);
      for (int r = l + 1; r <= L; ++r) trace.cache_updates.push_back(r);
      return trace;
    }
  }
  trace.final_distribution = make_distribution(unembed(ckpt, h.row(n - 1)), LensKind::Final, L);
  return trace;
}

OpCounter cost_model(std::size_t n, int n_layers, std::optional<int> exit_layer, int interval, int min_exit_layer) {
  OpCounter c;
  const int last = exit_layer.value_or(n_layers);
  c.full_token_block_ops = static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(last);
  c.reduced_token_block_ops = exit_layer ? 2ULL * static_cast<std::uint64_t>(n_layers - *exit_layer) : 0;
  for (int l = 1; l <= last; ++l) {
    if (l % interval == 0 && l >= min_exit_layer) ++c.lens_evals;
  }
  return c;
}

}  // namespace spade
