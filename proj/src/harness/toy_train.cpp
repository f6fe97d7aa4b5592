#include "spade/harness/toy_train.hpp"

#include <algorithm>
#include <cmath>

#include "block.hpp"
#include "spade/error.hpp"
#include "spade/kernels.hpp"
#include "spade/ops.hpp"

namespace spade::harness {

namespace {

// dx for y = x * w * r(x), r = 1/sqrt(mean(x^2) + eps); adds dw into `dweight`.
void rmsnorm_backward(const float* x, const float* weight, float r, const float* dy, std::size_t d, float* dweight,
                      float* dx) {
  float s = 0.0f;
  for (std::size_t i = 0; i < d; ++i) {
    dweight[i] = dweight[i] + dy[i] * x[i] * r;
    s += weight[i] * dy[i] * x[i];
  }
  const float c = r * r * r / static_cast<float>(d) * s;
  for (std::size_t i = 0; i < d; ++i) dx[i] = dx[i] + (r * weight[i] * dy[i] - c * x[i]);
}

// Back-propagates dy [m x d] through block `layer`; returns d(input) in `dx`.
void block_backward(const ModelCheckpoint& ckpt, int layer, const detail::BlockCache& c,
                    std::span<const long> positions, const std::vector<float>& dy, LayerWeights& g,
                    std::vector<float>& dx) {
  const auto& cfg = ckpt.config;
  const auto& w = ckpt.block(layer);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto f = static_cast<std::size_t>(cfg.d_ff);
  const auto heads = static_cast<std::size_t>(cfg.n_heads);
  const std::size_t dh = d / heads;
  const std::size_t m = c.m;
  const auto& kt = kernels::active();
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  std::vector<float> d_xmid(dy);
  std::vector<float> d_hdn(f), d_up(f), d_gate(f), d_b(d);
  for (std::size_t i = 0; i < m; ++i) {
    const float* dyi = dy.data() + i * d;
    std::fill(d_hdn.begin(), d_hdn.end(), 0.0f);
    kt.matvec_t_acc(w.w_down.data().data(), d, f, dyi, d_hdn.data());
    kt.outer_acc(dyi, d, c.hdn.data() + i * f, f, g.w_down.data().data());
    const float* up = c.up.data() + i * f;
    const float* gate = c.gate.data() + i * f;
    for (std::size_t e = 0; e < f; ++e) {
      const float sig = 1.0f / (1.0f + std::exp(-gate[e]));
      d_up[e] = d_hdn[e] * (gate[e] * sig);
      d_gate[e] = d_hdn[e] * up[e] * (sig * (1.0f + gate[e] * (1.0f - sig)));
    }
    const float* bi = c.b.data() + i * d;
    kt.outer_acc(d_up.data(), f, bi, d, g.w_up.data().data());
    kt.outer_acc(d_gate.data(), f, bi, d, g.w_gate.data().data());
    std::fill(d_b.begin(), d_b.end(), 0.0f);
    kt.matvec_t_acc(w.w_up.data().data(), f, d, d_up.data(), d_b.data());
    kt.matvec_t_acc(w.w_gate.data().data(), f, d, d_gate.data(), d_b.data());
    rmsnorm_backward(c.x_mid.data() + i * d, w.mlp_norm.data().data(), c.inv2[i], d_b.data(), d,
                     g.mlp_norm.data().data(), d_xmid.data() + i * d);
  }

  dx = d_xmid;
  std::vector<float> d_o(m * d, 0.0f);
  for (std::size_t i = 0; i < m; ++i) {
    kt.matvec_t_acc(w.wo.data().data(), d, d, d_xmid.data() + i * d, d_o.data() + i * d);
    kt.outer_acc(d_xmid.data() + i * d, d, c.o.data() + i * d, d, g.wo.data().data());
  }

  std::vector<float> dq(m * d, 0.0f), dk(m * d, 0.0f), dv(m * d, 0.0f), datt(m);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < m; ++i) {
      const float* att = c.att.data() + (h * m + i) * m;
      const float* doi = d_o.data() + i * d + h * dh;
      float weighted = 0.0f;
      for (std::size_t j = 0; j < m; ++j) {
        if (positions[j] > positions[i]) continue;
        datt[j] = kt.dot(doi, c.v.data() + j * d + h * dh, dh);
        weighted += att[j] * datt[j];
        kt.axpy(att[j], doi, dv.data() + j * d + h * dh, dh);
      }
      for (std::size_t j = 0; j < m; ++j) {
        if (positions[j] > positions[i]) continue;
        const float ds = att[j] * (datt[j] - weighted) * scale;
        kt.axpy(ds, c.k.data() + j * d + h * dh, dq.data() + i * d + h * dh, dh);
        kt.axpy(ds, c.q.data() + i * d + h * dh, dk.data() + j * d + h * dh, dh);
      }
    }
  }

  std::vector<float> d_a(d);
  for (std::size_t i = 0; i < m; ++i) {
    ops::rope_inverse(std::span(dq).subspan(i * d, d), heads, positions[i], cfg.rope_theta);
    ops::rope_inverse(std::span(dk).subspan(i * d, d), heads, positions[i], cfg.rope_theta);
    const float* ai = c.a.data() + i * d;
    kt.outer_acc(dq.data() + i * d, d, ai, d, g.wq.data().data());
    kt.outer_acc(dk.data() + i * d, d, ai, d, g.wk.data().data());
    kt.outer_acc(dv.data() + i * d, d, ai, d, g.wv.data().data());
    std::fill(d_a.begin(), d_a.end(), 0.0f);
    kt.matvec_t_acc(w.wq.data().data(), d, d, dq.data() + i * d, d_a.data());
    kt.matvec_t_acc(w.wk.data().data(), d, d, dk.data() + i * d, d_a.data());
    kt.matvec_t_acc(w.wv.data().data(), d, d, dv.data() + i * d, d_a.data());
    rmsnorm_backward(c.x_in.data() + i * d, w.attn_norm.data().data(), c.inv1[i], d_a.data(), d,
                     g.attn_norm.data().data(), dx.data() + i * d);
  }
}

}  // namespace

double toy_loss_and_grad(const ModelCheckpoint& ckpt, const Example& ex, ModelCheckpoint* grad, float scale,
                         bool all_positions) {
  const auto& cfg = ckpt.config;
  const std::size_t n = ex.prompt.size();
  const auto L = static_cast<std::size_t>(cfg.n_layers);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto V = static_cast<std::size_t>(cfg.vocab_size);
  if (n < 1 || n > static_cast<std::size_t>(cfg.max_seq_len)) throw PreconditionError("bad prompt length");
  if (ex.gold < 0 || ex.gold >= cfg.vocab_size) throw PreconditionError("gold token outside the vocab");

  const auto positions = iota_positions(n);
  std::vector<detail::BlockCache> caches(grad ? L : 0);
  const Tensor e = embed(ckpt, ex.prompt);
  std::vector<float> cur(e.data().begin(), e.data().end()), next(n * d);
  for (std::size_t l = 1; l <= L; ++l) {
    detail::block_forward(ckpt, static_cast<int>(l), cur, n, positions, next, grad ? &caches[l - 1] : nullptr);
    std::swap(cur, next);
  }
  // Output rows scored: the answer position only, or every position with the
  // next prompt token as target (the gold token after the last one).
  const std::size_t first = all_positions ? 0 : n - 1;
  const float w = all_positions ? scale / static_cast<float>(n) : scale;
  const auto& kt = kernels::active();
  std::vector<float> normed(d), z(V), logp(V), dz(V), dnorm(d);
  std::vector<float> dh(grad ? n * d : 0, 0.0f), dprev;
  double loss = 0.0;
  for (std::size_t i = first; i < n; ++i) {
    const auto target = static_cast<std::size_t>(i + 1 < n ? ex.prompt[i + 1] : ex.gold);
    const std::span<const float> top(cur.data() + i * d, d);
    const float r = ops::rmsnorm(top, ckpt.final_norm.data(), cfg.norm_eps, normed);
    kt.matvec(ckpt.unembed.data().data(), V, d, normed.data(), z.data());
    ops::log_softmax(z, logp);
    loss -= static_cast<double>(logp[target]);
    if (!grad) continue;
    for (std::size_t v = 0; v < V; ++v) dz[v] = std::exp(logp[v]) * w;
    dz[target] -= w;
    kt.outer_acc(dz.data(), V, normed.data(), d, grad->unembed.data().data());
    std::fill(dnorm.begin(), dnorm.end(), 0.0f);
    kt.matvec_t_acc(ckpt.unembed.data().data(), V, d, dz.data(), dnorm.data());
    rmsnorm_backward(top.data(), ckpt.final_norm.data().data(), r, dnorm.data(), d, grad->final_norm.data().data(),
                     dh.data() + i * d);
  }
  loss /= static_cast<double>(n - first);
  if (!grad) return loss;

  for (std::size_t l = L; l >= 1; --l) {
    block_backward(ckpt, static_cast<int>(l), caches[l - 1], positions, dh, grad->layers[l - 1], dprev);
    std::swap(dh, dprev);
  }
  for (std::size_t i = 0; i < n; ++i) {
    kt.axpy(1.0f, dh.data() + i * d, grad->embed.row(static_cast<std::size_t>(ex.prompt[i])).data(), d);
  }
  return loss;
}

double answer_accuracy(const ModelCheckpoint& ckpt, const Dataset& data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : data) {
    const ForwardResult fwd = forward_full(ckpt, ex.prompt);
    const auto p = fwd.probs.row(ex.prompt.size() - 1);
    const auto best = std::max_element(p.begin(), p.end()) - p.begin();
    if (best == ex.gold) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

ToyTrainResult train_toy_model(const ModelConfig& model_config, const ToyTrainConfig& config,
                               const std::function<Example(Rng&)>& stream, const Dataset& held_out,
                               const std::function<void(int, double, double)>& progress) {
  model_config.validate();
  if (config.steps < 0 || config.batch_size < 1 || config.eval_every < 1) throw ConfigError("bad toy training config");
  validate_dataset(held_out, model_config.vocab_size, model_config.bos_token_id);

  ToyTrainResult result;
  result.checkpoint = ModelCheckpoint::random(model_config, config.seed);
  ModelCheckpoint& model = result.checkpoint;
  ModelCheckpoint grad = ModelCheckpoint::zeros(model_config);
  ModelCheckpoint m1 = ModelCheckpoint::zeros(model_config);
  ModelCheckpoint m2 = ModelCheckpoint::zeros(model_config);
  auto params = model.named_tensors_mut();
  auto grads = grad.named_tensors_mut();
  auto first = m1.named_tensors_mut();
  auto second = m2.named_tensors_mut();
  for (auto* set : {&grads, &first, &second}) {
    for (auto& [name, t] : *set) std::fill(t->data().begin(), t->data().end(), 0.0f);
  }

  Rng data_rng = Rng(config.seed).fork(1);
  const float beta1 = 0.9f, beta2 = 0.999f, adam_eps = 1e-8f;
  double b1t = 1.0, b2t = 1.0;

  result.held_out_accuracy = answer_accuracy(model, held_out);
  for (int step = 1; step <= config.steps && result.held_out_accuracy < config.target_accuracy; ++step) {
    for (auto& [name, t] : grads) std::fill(t->data().begin(), t->data().end(), 0.0f);
    const float scale = 1.0f / static_cast<float>(config.batch_size);
    double loss = 0.0;
    for (int b = 0; b < config.batch_size; ++b) loss += toy_loss_and_grad(model, stream(data_rng), &grad, scale, config.all_positions);
    loss /= config.batch_size;
    if (!std::isfinite(loss)) throw NumericError("toy training loss is not finite at step " + std::to_string(step));
    result.last_loss = loss;

    double sq = 0.0;
    for (auto& [name, t] : grads) {
      for (float v : t->data()) sq += static_cast<double>(v) * v;
    }
    const double norm = std::sqrt(sq);
    const float clip = (config.grad_clip > 0.0f && norm > config.grad_clip)
                           ? static_cast<float>(config.grad_clip / norm)
                           : 1.0f;

    // Linear warmup, then cosine decay to 10% of the peak rate over the budget.
    float lr = config.learning_rate;
    if (step <= config.warmup_steps) {
      lr *= static_cast<float>(step) / static_cast<float>(std::max(1, config.warmup_steps));
    } else {
      const double span = std::max(1, config.steps - config.warmup_steps);
      const double t = static_cast<double>(step - config.warmup_steps) / span;
      lr *= static_cast<float>(0.1 + 0.9 * 0.5 * (1.0 + std::cos(3.141592653589793 * t)));
    }
    b1t *= beta1;
    b2t *= beta2;
    const float c1 = static_cast<float>(1.0 - b1t), c2 = static_cast<float>(1.0 - b2t);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto p = params[k].second->data();
      const auto g = grads[k].second->data();
      auto mm = first[k].second->data();
      auto vv = second[k].second->data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const float gi = g[i] * clip;
        mm[i] = beta1 * mm[i] + (1.0f - beta1) * gi;
        vv[i] = beta2 * vv[i] + (1.0f - beta2) * gi * gi;
        p[i] = p[i] - lr * (mm[i] / c1) / (std::sqrt(vv[i] / c2) + adam_eps);
      }
    }
    result.steps_run = step;
    if (step % config.eval_every == 0 || step == config.steps) {
      result.held_out_accuracy = answer_accuracy(model, held_out);
      if (progress) progress(step, loss, result.held_out_accuracy);
    }
  }
  model.validate();
  if (config.require_target && result.held_out_accuracy < config.target_accuracy) {
    throw ConvergenceError(result.held_out_accuracy,
                           "held-out accuracy " + std::to_string(result.held_out_accuracy) + " below target " +
                               std::to_string(config.target_accuracy) + " after " +
                               std::to_string(result.steps_run) + " steps");
  }
  return result;
}

ToyTrainResult train_toy_model(const TaskSpec& spec, const ModelConfig& model_config, const ToyTrainConfig& config,
                               const std::function<void(int, double, double)>& progress) {
  if (spec.vocab_size != model_config.vocab_size) throw ConfigError("task and model vocab sizes differ");
  const Dataset held_out = gen_task(spec);
  return train_toy_model(
      model_config, config, [&spec](Rng& rng) { return sample_example(spec, rng); }, held_out, progress);
}

}  // namespace spade::harness
