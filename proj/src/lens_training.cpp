#include "spade/lens_training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spade/error.hpp"
#include "spade/kernels.hpp"
#include "spade/ops.hpp"
#include "spade/rng.hpp"

namespace spade {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0f)) throw ConfigError("learning_rate must be > 0");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (batch_size < 0) throw ConfigError("batch_size must be >= 0");
}

std::map<int, std::vector<DistillSample>> collect_samples_layers(const ModelCheckpoint& ckpt, const Dataset& data,
                                                                 const std::vector<int>& layers,
                                                                 TargetKind target_kind, PositionMode mode) {
  validate_dataset(data, ckpt.config.vocab_size, ckpt.config.bos_token_id);
  for (int l : layers) {
    if (l < 0 || l > ckpt.config.n_layers) throw UsageError("layer " + std::to_string(l) + " out of range");
  }
  std::map<int, std::vector<DistillSample>> out;
  for (const auto& ex : data) {
    const ForwardResult fwd = forward_full(ckpt, ex.prompt);
    const std::size_t last = ex.prompt.size() - 1;
    for (int l : layers) {
      const auto h = fwd.state.at(static_cast<std::size_t>(l), last);
      DistillSample s;
      s.h_l = Tensor({h.size()}, std::vector<float>(h.begin(), h.end()));
      if (target_kind == TargetKind::FinalTarget) {
        const auto z = fwd.logits.row(last);
        s.teacher_logits = Tensor({z.size()}, std::vector<float>(z.begin(), z.end()));
      } else {
        s.teacher_logits = spade(ckpt, fwd.state, l, mode).logits;
      }
      s.layer = l;
      s.target_kind = target_kind;
      out[l].push_back(std::move(s));
    }
  }
  return out;
}

std::vector<DistillSample> collect_samples(const ModelCheckpoint& ckpt, const Dataset& data, int layer,
                                           TargetKind target_kind, PositionMode mode) {
  auto all = collect_samples_layers(ckpt, data, {layer}, target_kind, mode);
  return std::move(all[layer]);
}

namespace {

// Primitive linear algebra for the loss template: f32 goes through the
// dispatched kernels, f64 (the audit path) through plain loops.
template <class T>
struct Prim;

template <>
struct Prim<float> {
  static float dot(const float* a, const float* b, std::size_t n) { return kernels::active().dot(a, b, n); }
  static void matvec(const float* w, std::size_t r, std::size_t c, const float* x, float* y) {
    kernels::active().matvec(w, r, c, x, y);
  }
  static void matvec_t_acc(const float* w, std::size_t r, std::size_t c, const float* y, float* x) {
    kernels::active().matvec_t_acc(w, r, c, y, x);
  }
  static void outer_acc(const float* a, std::size_t r, const float* b, std::size_t c, float* w) {
    kernels::active().outer_acc(a, r, b, c, w);
  }
};

template <>
struct Prim<double> {
  static double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
  }
  static void matvec(const double* w, std::size_t r, std::size_t c, const double* x, double* y) {
    for (std::size_t i = 0; i < r; ++i) y[i] = dot(w + i * c, x, c);
  }
  static void matvec_t_acc(const double* w, std::size_t r, std::size_t c, const double* y, double* x) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) x[j] += y[i] * w[i * c + j];
    }
  }
  static void outer_acc(const double* a, std::size_t r, const double* b, std::size_t c, double* w) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) w[i * c + j] += a[i] * b[j];
    }
  }
};

template <class T>
struct LensProblem {
  std::size_t d = 0, V = 0;
  T eps = 0;
  const T* A = nullptr;
  const T* b = nullptr;
  const T* norm = nullptr;  // final rmsnorm weight [d]
  const T* W = nullptr;  // unembedding [V x d]
};

template <class T>
struct Work {
  std::vector<T> hat, n, z, dz, dn, dhat;
  Work(std::size_t d, std::size_t V) : hat(d), n(d), z(V), dz(V), dn(d), dhat(d) {}
};

// Loss of one sample; when grad_a is non-null, accumulates scale * gradient.
template <class T>
double loss_and_grad(const LensProblem<T>& P, const T* h, const T* teacher_probs, T* grad_a, T* grad_b, T scale,
                     Work<T>& w) {
  using Ops = Prim<T>;
  const std::size_t d = P.d, V = P.V;
  Ops::matvec(P.A, d, d, h, w.hat.data());
  for (std::size_t i = 0; i < d; ++i) w.hat[i] = w.hat[i] + P.b[i];

  const T ss = Ops::dot(w.hat.data(), w.hat.data(), d);
  const T r = T(1) / std::sqrt(ss / static_cast<T>(d) + P.eps);
  for (std::size_t i = 0; i < d; ++i) w.n[i] = (w.hat[i] * r) * P.norm[i];
  Ops::matvec(P.W, V, d, w.n.data(), w.z.data());

  const T mx = *std::max_element(w.z.begin(), w.z.end());
  double sum = 0.0;
  for (std::size_t v = 0; v < V; ++v) sum += std::exp(static_cast<double>(w.z[v] - mx));
  const double lse = std::log(sum);
  double loss = 0.0;
  for (std::size_t v = 0; v < V; ++v) {
    loss -= static_cast<double>(teacher_probs[v]) * (static_cast<double>(w.z[v] - mx) - lse);
  }
  if (!grad_a) return loss;

  // dL/dz = softmax(z) - teacher
  for (std::size_t v = 0; v < V; ++v) {
    const T q = static_cast<T>(std::exp(static_cast<double>(w.z[v] - mx) - lse));
    w.dz[v] = (q - teacher_probs[v]) * scale;
  }
  std::fill(w.dn.begin(), w.dn.end(), T(0));
  Ops::matvec_t_acc(P.W, V, d, w.dz.data(), w.dn.data());

  // Back through n = norm * hat * r(hat).
  T s = 0;
  for (std::size_t i = 0; i < d; ++i) s += P.norm[i] * w.dn[i] * w.hat[i];
  const T c = r * r * r / static_cast<T>(d) * s;
  for (std::size_t i = 0; i < d; ++i) w.dhat[i] = r * P.norm[i] * w.dn[i] - c * w.hat[i];

  for (std::size_t i = 0; i < d; ++i) grad_b[i] = grad_b[i] + w.dhat[i];
  Ops::outer_acc(w.dhat.data(), d, h, d, grad_a);
  return loss;
}

LensProblem<float> f32_problem(const ModelCheckpoint& ckpt, const LinearLensMap& map) {
  LensProblem<float> P;
  P.d = static_cast<std::size_t>(ckpt.config.d_model);
  P.V = static_cast<std::size_t>(ckpt.config.vocab_size);
  P.eps = ckpt.config.norm_eps;
  P.A = map.A.data().data();
  P.b = map.b.data().data();
  P.norm = ckpt.final_norm.data().data();
  P.W = ckpt.unembed.data().data();
  return P;
}

std::vector<double> widen(std::span<const float> x) { return std::vector<double>(x.begin(), x.end()); }

std::vector<double> teacher_probs_f64(const Tensor& logits) {
  const auto z = logits.data();
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t v = 0; v < z.size(); ++v) sum += p[v] = std::exp(z[v] - mx);
  for (auto& x : p) x /= sum;
  return p;
}

void check_sample(const ModelCheckpoint& ckpt, const LinearLensMap& map, const DistillSample& s) {
  const auto d = static_cast<std::size_t>(ckpt.config.d_model);
  const auto V = static_cast<std::size_t>(ckpt.config.vocab_size);
  if (s.h_l.size() != d || s.teacher_logits.size() != V) throw DimensionError("distill sample shape mismatch");
  if (map.A.shape() != Shape{d, d} || map.b.shape() != Shape{d}) throw DimensionError("lens map shape mismatch");
}

}  // namespace

double lens_loss(const ModelCheckpoint& ckpt, const LinearLensMap& map, const DistillSample& sample,
                 std::vector<double>* grad_a, std::vector<double>* grad_b) {
  check_sample(ckpt, map, sample);
  const auto d = static_cast<std::size_t>(ckpt.config.d_model);
  const auto V = static_cast<std::size_t>(ckpt.config.vocab_size);
  const auto A = widen(map.A.data()), b = widen(map.b.data());
  const auto norm = widen(ckpt.final_norm.data()), W = widen(ckpt.unembed.data());
  const auto h = widen(sample.h_l.data());
  const auto pt = teacher_probs_f64(sample.teacher_logits);
  LensProblem<double> P{d, V, static_cast<double>(ckpt.config.norm_eps), A.data(), b.data(), norm.data(), W.data()};
  Work<double> w(d, V);
  if (grad_a && grad_b) {
    grad_a->assign(d * d, 0.0);
    grad_b->assign(d, 0.0);
    return loss_and_grad(P, h.data(), pt.data(), grad_a->data(), grad_b->data(), 1.0, w);
  }
  return loss_and_grad<double>(P, h.data(), pt.data(), nullptr, nullptr, 1.0, w);
}

double mean_lens_loss(const ModelCheckpoint& ckpt, const LinearLensMap& map,
                      const std::vector<DistillSample>& samples) {
  if (samples.empty()) throw PreconditionError("no samples");
  const auto P = f32_problem(ckpt, map);
  Work<float> w(P.d, P.V);
  Tensor pt({P.V});
  double total = 0.0;
  for (const auto& s : samples) {
    check_sample(ckpt, map, s);
    ops::softmax(s.teacher_logits.data(), pt.data());
    total += loss_and_grad<float>(P, s.h_l.data().data(), pt.data().data(), nullptr, nullptr, 1.0f, w);
  }
  return total / static_cast<double>(samples.size());
}

TrainResult train_linear_map(const ModelCheckpoint& ckpt, const std::vector<DistillSample>& samples,
                             const TrainConfig& config) {
  config.validate();
  if (samples.empty()) throw PreconditionError("train_linear_map needs at least one sample");
  const int layer = samples.front().layer;
  const TargetKind kind = samples.front().target_kind;
  for (const auto& s : samples) {
    if (s.layer != layer || s.target_kind != kind) throw PreconditionError("samples mix layers or target kinds");
  }
  const auto d = static_cast<std::size_t>(ckpt.config.d_model);

  TrainResult result;
  LinearLensMap& map = result.map;
  map = LinearLensMap::identity(layer, d, kind);
  if (config.init == MapInit::Zero) map.A = Tensor({d, d});
  map.source_checkpoint_hash = ckpt.content_hash();
  for (const auto& s : samples) check_sample(ckpt, map, s);

  // Teacher probabilities are fixed for the whole run.
  std::vector<Tensor> teacher(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) teacher[i] = softmax(samples[i].teacher_logits);

  result.init_loss = mean_lens_loss(ckpt, map, samples);

  const std::size_t N = samples.size();
  const bool full_batch = config.batch_size == 0 || static_cast<std::size_t>(config.batch_size) >= N;
  const std::size_t B = full_batch ? N : static_cast<std::size_t>(config.batch_size);
  Rng rng(config.seed);
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = N;  // forces a shuffle on first use

  std::vector<float> gA(d * d), gb(d), mA(d * d), vA(d * d), mb(d), vb(d);
  Work<float> w(d, static_cast<std::size_t>(ckpt.config.vocab_size));
  double b1t = 1.0, b2t = 1.0;

  for (int step = 0; step < config.steps; ++step) {
    std::fill(gA.begin(), gA.end(), 0.0f);
    std::fill(gb.begin(), gb.end(), 0.0f);
    const auto P = f32_problem(ckpt, map);
    const float scale = 1.0f / static_cast<float>(B);
    double batch_loss = 0.0;
    for (std::size_t k = 0; k < B; ++k) {
      std::size_t idx;
      if (full_batch) {
        idx = k;
      } else {
        if (cursor == N) {
          for (std::size_t i = N - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
          cursor = 0;
        }
        idx = order[cursor++];
      }
      batch_loss += loss_and_grad<float>(P, samples[idx].h_l.data().data(), teacher[idx].data().data(), gA.data(),
                                         gb.data(), scale, w);
    }
    batch_loss /= static_cast<double>(B);
    if (!std::isfinite(batch_loss)) throw TrainingDivergedError(step, "lens loss is not finite");
    result.step_losses.push_back(batch_loss);

    auto& A = map.A;
    auto& b = map.b;
    if (config.optimizer == Optimizer::Sgd) {
      for (std::size_t i = 0; i < d * d; ++i) A[i] = A[i] - config.learning_rate * gA[i];
      for (std::size_t i = 0; i < d; ++i) b[i] = b[i] - config.learning_rate * gb[i];
    } else {
      b1t *= config.beta1;
      b2t *= config.beta2;
      const float c1 = static_cast<float>(1.0 - b1t), c2 = static_cast<float>(1.0 - b2t);
      auto adam = [&](float& p, float g, float& m, float& v) {
        m = config.beta1 * m + (1.0f - config.beta1) * g;
        v = config.beta2 * v + (1.0f - config.beta2) * g * g;
        p = p - config.learning_rate * (m / c1) / (std::sqrt(v / c2) + config.adam_eps);
      };
      for (std::size_t i = 0; i < d * d; ++i) adam(A[i], gA[i], mA[i], vA[i]);
      for (std::size_t i = 0; i < d; ++i) adam(b[i], gb[i], mb[i], vb[i]);
    }
    if (!map.A.all_finite() || !map.b.all_finite()) throw TrainingDivergedError(step, "map parameters not finite");
  }
  result.final_loss = mean_lens_loss(ckpt, map, samples);
  map.final_train_loss = result.final_loss;
  return result;
}

double grad_check(const ModelCheckpoint& ckpt, const LinearLensMap& map, const DistillSample& sample, double epsilon,
                  std::uint64_t seed, std::size_t coords_a) {
  if (!(epsilon >= 1e-5 && epsilon <= 1e-2)) throw UsageError("grad_check epsilon must lie in [1e-5, 1e-2]");
  check_sample(ckpt, map, sample);
  const auto d = static_cast<std::size_t>(ckpt.config.d_model);
  std::vector<double> ga, gb;
  lens_loss(ckpt, map, sample, &ga, &gb);

  // Perturb a double copy of the map so the probe step is exact.
  const auto d_map_A = widen(map.A.data());
  const auto d_map_b = widen(map.b.data());
  const auto norm = widen(ckpt.final_norm.data()), W = widen(ckpt.unembed.data());
  const auto h = widen(sample.h_l.data());
  const auto pt = teacher_probs_f64(sample.teacher_logits);
  const auto V = static_cast<std::size_t>(ckpt.config.vocab_size);
  Work<double> w(d, V);
  auto eval = [&](const std::vector<double>& A, const std::vector<double>& b) {
    LensProblem<double> P{d, V, static_cast<double>(ckpt.config.norm_eps), A.data(), b.data(), norm.data(), W.data()};
    return loss_and_grad<double>(P, h.data(), pt.data(), nullptr, nullptr, 1.0, w);
  };
  auto rel = [](double fd, double an) { return std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-8}); };

  double worst = 0.0;
  Rng rng(seed);
  std::vector<std::size_t> picks(d * d);
  std::iota(picks.begin(), picks.end(), 0);
  const std::size_t n_a = std::min(std::max<std::size_t>(coords_a, 64), d * d);
  for (std::size_t i = 0; i < n_a; ++i) std::swap(picks[i], picks[i + rng.below(d * d - i)]);
  for (std::size_t k = 0; k < n_a; ++k) {
    const std::size_t idx = picks[k];
    auto plus = d_map_A, minus = d_map_A;
    plus[idx] += epsilon;
    minus[idx] -= epsilon;
    const double fd = (eval(plus, d_map_b) - eval(minus, d_map_b)) / (2.0 * epsilon);
    worst = std::max(worst, rel(fd, ga[idx]));
  }
  for (std::size_t idx = 0; idx < d; ++idx) {
    auto plus = d_map_b, minus = d_map_b;
    plus[idx] += epsilon;
    minus[idx] -= epsilon;
    const double fd = (eval(d_map_A, plus) - eval(d_map_A, minus)) / (2.0 * epsilon);
    worst = std::max(worst, rel(fd, gb[idx]));
  }
  return worst;
}

std::string TeacherCacheKey::file_name() const {
  const std::string k = checkpoint_hash + "|" + dataset_id + "|" + std::to_string(layer) + "|" +
                        std::string(to_string(target_kind)) + "|" + std::string(to_string(position_mode));
  return "teacher-" + hex64(fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(k.data()), k.size()))) +
         ".spadetch";
}

namespace {

nlohmann::json key_header(const TeacherCacheKey& key) {
  return {{"checkpoint_hash", key.checkpoint_hash},
          {"dataset_id", key.dataset_id},
          {"layer", key.layer},
          {"target_kind", to_string(key.target_kind)},
          {"position_mode", to_string(key.position_mode)}};
}

}  // namespace

void save_teacher_cache(const std::filesystem::path& dir, const TeacherCacheKey& key,
                        const std::vector<DistillSample>& samples) {
  if (samples.empty()) throw PreconditionError("refusing to cache an empty sample set");
  const std::size_t N = samples.size(), d = samples[0].h_l.size(), V = samples[0].teacher_logits.size();
  Tensor h({N, d}), z({N, V});
  for (std::size_t i = 0; i < N; ++i) {
    std::copy(samples[i].h_l.data().begin(), samples[i].h_l.data().end(), h.row(i).begin());
    std::copy(samples[i].teacher_logits.data().begin(), samples[i].teacher_logits.data().end(), z.row(i).begin());
  }
  Container c;
  c.magic = "SPADETCH";
  c.header = key_header(key);
  c.tensors.emplace_back("h", std::move(h));
  c.tensors.emplace_back("teacher_logits", std::move(z));
  write_container(dir / key.file_name(), c);
}

std::optional<std::vector<DistillSample>> load_teacher_cache(const std::filesystem::path& dir,
                                                             const TeacherCacheKey& key) {
  const auto path = dir / key.file_name();
  if (!std::filesystem::exists(path)) return std::nullopt;
  const Container c = read_container(path, "SPADETCH");
  if (c.header != key_header(key)) throw ProvenanceError(path.string() + ": cache header does not match its key");
  const Tensor& h = c.get("h");
  const Tensor& z = c.get("teacher_logits");
  if (h.rank() != 2 || z.rank() != 2 || h.dim(0) != z.dim(0)) throw FormatError(path.string() + ": bad cache tensors");
  std::vector<DistillSample> out(h.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto hr = h.row(i);
    const auto zr = z.row(i);
    out[i].h_l = Tensor({hr.size()}, std::vector<float>(hr.begin(), hr.end()));
    out[i].teacher_logits = Tensor({zr.size()}, std::vector<float>(zr.begin(), zr.end()));
    out[i].layer = key.layer;
    out[i].target_kind = key.target_kind;
  }
  return out;
}

}  // namespace spade
