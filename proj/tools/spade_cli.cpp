// spade: command-line driver for task generation, toy training, lens training,
// layer-wise evaluation and early-exit runs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "spade/container.hpp"
#include "spade/early_exit.hpp"
#include "spade/error.hpp"
#include "spade/harness/evaluation.hpp"
#include "spade/harness/report.hpp"
#include "spade/harness/tasks.hpp"
#include "spade/harness/toy_train.hpp"
#include "spade/kernels.hpp"
#include "spade/lens_training.hpp"

using namespace spade;
using namespace spade::harness;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<LensKind> parse_lenses(const std::string& s) {
  std::vector<LensKind> out;
  for (const auto& name : split_list(s)) out.push_back(parse_lens_kind(name));
  if (out.empty()) throw UsageError("--lenses is empty");
  return out;
}

std::vector<double> parse_thresholds(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw UsageError("bad threshold '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--thresholds is empty");
  return out;
}

ReportFormat format_for(const std::string& flag, const fs::path& out) {
  if (!flag.empty()) return parse_report_format(flag);
  return out.extension() == ".json" ? ReportFormat::Json : ReportFormat::Csv;
}

// Task seed from the sidecar, when the task was generated here.
json task_seed(const fs::path& task) {
  auto spec = load_task_spec(task);
  return spec ? json(spec->seed) : json(nullptr);
}

const char* kManifest = "maps.json";

json read_manifest(const fs::path& dir) {
  const auto p = dir / kManifest;
  if (!fs::exists(p)) return json::object();
  const auto bytes = read_file_bytes(p);
  return json::parse(std::string(bytes.begin(), bytes.end()));
}

// ---- gen-task ---------------------------------------------------------------

struct GenTaskArgs {
  std::string kind = "induction";
  int vocab = 64, seq_len = 6, n = 256, classes = 3;
  std::uint64_t seed = 0;
  std::string source, out;
};

int run_gen_task(const GenTaskArgs& a) {
  TaskSpec s;
  s.kind = parse_task_kind(a.kind);
  s.vocab_size = a.vocab;
  s.seq_len = a.seq_len;
  s.n_examples = a.n;
  s.seed = a.seed;
  s.n_classes = a.classes;
  s.source = a.source;
  const auto data = gen_task(s);
  save_task(a.out, s, data);
  std::cout << json({{"out", a.out}, {"examples", data.size()}, {"dataset_id", dataset_id(data)}}).dump() << "\n";
  return 0;
}

// ---- train-toy --------------------------------------------------------------

struct TrainToyArgs {
  std::string task, out;
  int layers = 8, dim = 64, heads = 4, vocab = 64, d_ff = 0, steps = 3000, batch = 32, eval_every = 100;
  float lr = 3e-3f;
  double target = 0.95;
  std::uint64_t seed = 0;
  bool quiet = false;
  bool all_positions = false;
};

int run_train_toy(const TrainToyArgs& a) {
  ModelConfig mc;
  mc.n_layers = a.layers;
  mc.d_model = a.dim;
  mc.n_heads = a.heads;
  mc.vocab_size = a.vocab;
  mc.d_ff = a.d_ff > 0 ? a.d_ff : 2 * a.dim;
  ToyTrainConfig tc;
  tc.steps = a.steps;
  tc.batch_size = a.batch;
  tc.learning_rate = a.lr;
  tc.seed = a.seed;
  tc.eval_every = a.eval_every;
  tc.target_accuracy = a.target;
  tc.all_positions = a.all_positions;

  const Dataset held_out = load_dataset(a.task);
  const auto spec = load_task_spec(a.task);
  std::function<Example(Rng&)> stream;
  if (spec && spec->kind != TaskKind::ExternalTokens) {
    TaskSpec s = *spec;
    mc.max_seq_len = std::max(mc.max_seq_len, s.seq_len);
    stream = [s](Rng& rng) { return sample_example(s, rng); };
  } else {
    // No generator: resample the file itself.
    if (held_out.empty()) throw PreconditionError("task file " + a.task + " is empty");
    std::size_t longest = 0;
    for (const auto& ex : held_out) longest = std::max(longest, ex.prompt.size());
    mc.max_seq_len = std::max(mc.max_seq_len, static_cast<int>(longest));
    stream = [&held_out](Rng& rng) { return held_out[rng.below(held_out.size())]; };
  }
  auto progress = [&](int step, double loss, double acc) {
    if (!a.quiet) std::fprintf(stderr, "step %d loss %.4f held-out accuracy %.3f\n", step, loss, acc);
  };
  const auto r = train_toy_model(mc, tc, stream, held_out, progress);
  r.checkpoint.save(a.out);
  std::cout << json({{"out", a.out},
                     {"held_out_accuracy", r.held_out_accuracy},
                     {"steps_run", r.steps_run},
                     {"checkpoint_hash", r.checkpoint.content_hash()}})
                   .dump()
            << "\n";
  return 0;
}

// ---- train-lens -------------------------------------------------------------

struct TrainLensArgs {
  std::string ckpt, task, layer = "all", target = "spade", mode = "compact", out, teacher_cache;
  int steps = 2000, batch = 64;
  float lr = 1e-3f;
  std::uint64_t seed = 0;
};

int run_train_lens(const TrainLensArgs& a) {
  const auto ckpt = ModelCheckpoint::load(a.ckpt);
  const Dataset data = load_dataset(a.task);
  const TargetKind target = parse_target_kind(a.target);
  const PositionMode mode = parse_position_mode(a.mode);
  const int L = ckpt.config.n_layers;
  std::vector<int> layers;
  if (a.layer == "all") {
    for (int l = 1; l <= L; ++l) layers.push_back(l);
  } else {
    try {
      layers.push_back(std::stoi(a.layer));
    } catch (const std::exception&) {
      throw UsageError("--layer must be an integer or 'all'");
    }
    if (layers[0] < 0 || layers[0] > L) throw UsageError("--layer outside [0, " + std::to_string(L) + "]");
  }

  const std::string hash = ckpt.content_hash();
  const std::string did = dataset_id(data);
  std::map<int, std::vector<DistillSample>> samples;
  std::vector<int> missing;
  for (int l : layers) {
    if (!a.teacher_cache.empty()) {
      auto cached = load_teacher_cache(a.teacher_cache, {hash, did, l, target, mode});
      if (cached) {
        samples[l] = std::move(*cached);
        continue;
      }
    }
    missing.push_back(l);
  }
  if (!missing.empty()) {
    auto fresh = collect_samples_layers(ckpt, data, missing, target, mode);
    for (auto& [l, s] : fresh) {
      if (!a.teacher_cache.empty()) save_teacher_cache(a.teacher_cache, {hash, did, l, target, mode}, s);
      samples[l] = std::move(s);
    }
  }

  TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.steps = a.steps;
  tc.batch_size = a.batch;
  tc.seed = a.seed;
  json summary = json::array();
  for (int l : layers) {
    const auto r = train_linear_map(ckpt, samples.at(l), tc);
    save_lens_map(a.out, r.map);
    summary.push_back({{"layer", l}, {"init_loss", r.init_loss}, {"final_loss", r.final_loss}});
  }
  json manifest = {{"checkpoint_hash", hash},
                   {"dataset_id", did},
                   {"task", fs::path(a.task).filename().string()},
                   {"target", to_string(target)},
                   {"position_mode", to_string(mode)},
                   {"layers", summary}};
  write_text(fs::path(a.out) / kManifest, manifest.dump(2) + "\n");
  std::cout << manifest.dump() << "\n";
  return 0;
}

// ---- eval-lens / eval-cross -------------------------------------------------

struct EvalArgs {
  std::string ckpt, task, maps, lenses = "logitlens,spade,spadenos", format, mode = "compact", out;
};

int run_eval_lens(const EvalArgs& a) {
  const auto ckpt = ModelCheckpoint::load(a.ckpt);
  const Dataset data = load_dataset(a.task);
  LayerwiseOptions opt;
  opt.lenses = parse_lenses(a.lenses);
  opt.position_mode = parse_position_mode(a.mode);
  LensMaps maps;
  if (!a.maps.empty()) maps = load_lens_maps(a.maps);
  auto rep = eval_layerwise(ckpt, maps, data, opt);
  rep.provenance["task_seed"] = task_seed(a.task);
  emit_report(a.out, rep, format_for(a.format, a.out));
  return 0;
}

int run_eval_cross(const EvalArgs& a) {
  const auto ckpt = ModelCheckpoint::load(a.ckpt);
  const Dataset data = load_dataset(a.task);
  LayerwiseOptions opt;
  opt.lenses = parse_lenses(a.lenses);
  opt.position_mode = parse_position_mode(a.mode);
  const auto maps = load_lens_maps(a.maps);
  const json manifest = read_manifest(a.maps);
  const std::string train_id = manifest.value("dataset_id", std::string("unknown"));
  auto rep = eval_cross_task(ckpt, maps, data, train_id, dataset_id(data), opt);
  rep.provenance["task_seed"] = task_seed(a.task);
  emit_report(a.out, rep, format_for(a.format, a.out));
  return 0;
}

// ---- run-exit / sweep-exit --------------------------------------------------

struct ExitArgs {
  std::string ckpt, maps, task, metric = "entropy", mode = "compact", thresholds, format, out;
  double threshold = 0.5;
  int interval = 1, min_exit_layer = 1;
};

ExitConfig exit_config(const ExitArgs& a) {
  ExitConfig c;
  c.threshold = a.threshold;
  c.interval = a.interval;
  c.metric = parse_exit_metric(a.metric);
  c.position_mode = parse_position_mode(a.mode);
  c.min_exit_layer = a.min_exit_layer;
  return c;
}

int run_exit(const ExitArgs& a) {
  const auto ckpt = ModelCheckpoint::load(a.ckpt);
  const Dataset data = load_dataset(a.task);
  const auto maps = load_lens_maps(a.maps);
  const ExitConfig cfg = exit_config(a);
  validate_dataset(data, ckpt.config.vocab_size, ckpt.config.bos_token_id);
  json traces = json::array();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto tr = run_spade_exit(ckpt, maps.lspade, data[i].prompt, cfg);
    json j = tr.to_json();
    j["index"] = i;
    j["gold"] = data[i].gold;
    if (static_cast<TokenId>(tr.final_distribution.argmax()) == data[i].gold) ++correct;
    traces.push_back(std::move(j));
  }
  json out = {{"config",
               {{"threshold", cfg.threshold},
                {"interval", cfg.interval},
                {"metric", to_string(cfg.metric)},
                {"position_mode", to_string(cfg.position_mode)},
                {"min_exit_layer", cfg.min_exit_layer}}},
              {"checkpoint_hash", ckpt.content_hash()},
              {"dataset_id", dataset_id(data)},
              {"accuracy", data.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.size())},
              {"traces", traces}};
  write_text(a.out, out.dump(2) + "\n");
  return 0;
}

int run_sweep(const ExitArgs& a) {
  const auto ckpt = ModelCheckpoint::load(a.ckpt);
  const Dataset data = load_dataset(a.task);
  const auto maps = load_lens_maps(a.maps);
  auto rep = eval_exit_sweep(ckpt, maps.lspade, data, parse_thresholds(a.thresholds), exit_config(a));
  rep.provenance["task_seed"] = task_seed(a.task);
  emit_report(a.out, rep, format_for(a.format, a.out));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intermediate-layer decoding and early exit for small decoder-only transformers"};
  app.require_subcommand(1);
  auto isa = std::string();
  app.add_option("--kernels", isa, "Force a kernel set: scalar|avx2|neon");

  GenTaskArgs gen;
  auto* g = app.add_subcommand("gen-task", "Generate a synthetic task file");
  g->add_option("--kind", gen.kind, "induction|majority|external")->capture_default_str();
  g->add_option("--vocab", gen.vocab)->capture_default_str();
  g->add_option("--seq-len", gen.seq_len)->capture_default_str();
  g->add_option("--n", gen.n)->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--classes", gen.classes, "Classes for majority")->capture_default_str();
  g->add_option("--source", gen.source, "Pre-tokenized JSONL for external");
  g->add_option("--out", gen.out)->required();

  TrainToyArgs toy;
  auto* t = app.add_subcommand("train-toy", "Train a toy model on a task file");
  t->add_option("--task", toy.task)->required();
  t->add_option("--layers", toy.layers)->capture_default_str();
  t->add_option("--dim", toy.dim)->capture_default_str();
  t->add_option("--heads", toy.heads)->capture_default_str();
  t->add_option("--vocab", toy.vocab)->capture_default_str();
  t->add_option("--d-ff", toy.d_ff, "MLP width (default 2*dim)");
  t->add_option("--steps", toy.steps)->capture_default_str();
  t->add_option("--batch", toy.batch)->capture_default_str();
  t->add_option("--lr", toy.lr)->capture_default_str();
  t->add_option("--target", toy.target, "Held-out accuracy to reach")->capture_default_str();
  t->add_option("--eval-every", toy.eval_every)->capture_default_str();
  t->add_option("--seed", toy.seed)->capture_default_str();
  t->add_flag("--quiet", toy.quiet);
  t->add_flag("--all-positions", toy.all_positions, "Next-token loss at every position, not only the answer");
  t->add_option("--out", toy.out)->required();

  TrainLensArgs lens;
  auto* tl = app.add_subcommand("train-lens", "Distill per-layer linear lens maps");
  tl->add_option("--ckpt", lens.ckpt)->required();
  tl->add_option("--task", lens.task)->required();
  tl->add_option("--layer", lens.layer, "Layer index or 'all'")->capture_default_str();
  tl->add_option("--target", lens.target, "spade|final")->capture_default_str();
  tl->add_option("--position-mode", lens.mode, "compact|original")->capture_default_str();
  tl->add_option("--steps", lens.steps)->capture_default_str();
  tl->add_option("--batch", lens.batch)->capture_default_str();
  tl->add_option("--lr", lens.lr)->capture_default_str();
  tl->add_option("--seed", lens.seed)->capture_default_str();
  tl->add_option("--teacher-cache", lens.teacher_cache, "Directory for cached teacher logits");
  tl->add_option("--out", lens.out)->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval-lens", "Layer-wise accuracy and perplexity report");
  e->add_option("--ckpt", ev.ckpt)->required();
  e->add_option("--task", ev.task)->required();
  e->add_option("--maps", ev.maps, "Maps directory (needed for lspade/tunedlens)");
  e->add_option("--lenses", ev.lenses, "Comma list of logitlens,spade,spadenos,lspade,tunedlens")->capture_default_str();
  e->add_option("--position-mode", ev.mode)->capture_default_str();
  e->add_option("--format", ev.format, "csv|json (default from extension)");
  e->add_option("--out", ev.out)->required();

  EvalArgs cross;
  cross.lenses = "lspade";
  auto* c = app.add_subcommand("eval-cross", "Layer-wise report with maps trained on another task");
  c->add_option("--ckpt", cross.ckpt)->required();
  c->add_option("--maps-from", cross.maps)->required();
  c->add_option("--task", cross.task)->required();
  c->add_option("--lenses", cross.lenses)->capture_default_str();
  c->add_option("--position-mode", cross.mode)->capture_default_str();
  c->add_option("--format", cross.format, "csv|json (default from extension)");
  c->add_option("--out", cross.out)->required();

  ExitArgs ex;
  auto* r = app.add_subcommand("run-exit", "Early-exit traces for every example of a task");
  r->add_option("--ckpt", ex.ckpt)->required();
  r->add_option("--maps", ex.maps)->required();
  r->add_option("--task", ex.task)->required();
  r->add_option("--threshold", ex.threshold)->capture_default_str();
  r->add_option("--interval", ex.interval)->capture_default_str();
  r->add_option("--metric", ex.metric, "entropy|top2")->capture_default_str();
  r->add_option("--min-exit-layer", ex.min_exit_layer)->capture_default_str();
  r->add_option("--position-mode", ex.mode)->capture_default_str();
  r->add_option("--out", ex.out)->required();

  ExitArgs sw;
  sw.interval = 2;
  auto* s = app.add_subcommand("sweep-exit", "Accuracy and cost across exit thresholds");
  s->add_option("--ckpt", sw.ckpt)->required();
  s->add_option("--maps", sw.maps)->required();
  s->add_option("--task", sw.task)->required();
  s->add_option("--thresholds", sw.thresholds, "Comma list")->required();
  s->add_option("--interval", sw.interval)->capture_default_str();
  s->add_option("--metric", sw.metric)->capture_default_str();
  s->add_option("--min-exit-layer", sw.min_exit_layer)->capture_default_str();
  s->add_option("--position-mode", sw.mode)->capture_default_str();
  s->add_option("--format", sw.format, "csv|json (default from extension)");
  s->add_option("--out", sw.out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (!isa.empty()) kernels::select(kernels::parse_isa(isa));
    if (g->parsed()) return run_gen_task(gen);
    if (t->parsed()) return run_train_toy(toy);
    if (tl->parsed()) return run_train_lens(lens);
    if (e->parsed()) return run_eval_lens(ev);
    if (c->parsed()) return run_eval_cross(cross);
    if (r->parsed()) return run_exit(ex);
    if (s->parsed()) return run_sweep(sw);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
