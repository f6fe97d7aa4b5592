#include "spade/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spade/error.hpp"
#include "spade/kernels.hpp"

namespace spade {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor c({m, n});
  const auto& kt = kernels::active();
  for (std::size_t i = 0; i < m; ++i) {
    float* ci = c.row(i).data();
    for (std::size_t p = 0; p < k; ++p) kt.axpy(a.at(i, p), b.row(p).data(), ci, n);
  }
  return c;
}

Tensor matvec(const Tensor& w, const Tensor& x) {
  require_rank(w, 2, "matvec matrix");
  require_rank(x, 1, "matvec vector");
  if (w.dim(1) != x.dim(0)) {
    throw DimensionError("matvec: " + shape_str(w.shape()) + " x " + shape_str(x.shape()));
  }
  Tensor y({w.dim(0)});
  kernels::active().matvec(w.data().data(), w.dim(0), w.dim(1), x.data().data(), y.data().data());
  return y;
}

namespace ops {

void softmax(std::span<const float> logits, std::span<float> out) {
  if (logits.empty()) throw DimensionError("softmax of an empty vector");
  if (out.size() != logits.size()) throw DimensionError("softmax output length mismatch");
  const float mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v = static_cast<float>(v / sum);
}

void log_softmax(std::span<const float> logits, std::span<float> out) {
  if (logits.empty()) throw DimensionError("log_softmax of an empty vector");
  if (out.size() != logits.size()) throw DimensionError("log_softmax output length mismatch");
  const float mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (float z : logits) sum += std::exp(static_cast<double>(z - mx));
  const double lse = std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<float>((logits[i] - mx) - lse);
}

float rmsnorm(std::span<const float> x, std::span<const float> weight, float eps, std::span<float> out) {
  if (x.empty()) throw DimensionError("rmsnorm of an empty vector");
  if (weight.size() != x.size() || out.size() != x.size()) throw DimensionError("rmsnorm length mismatch");
  const float ss = kernels::active().dot(x.data(), x.data(), x.size());
  const float inv = 1.0f / std::sqrt(ss / static_cast<float>(x.size()) + eps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] * inv) * weight[i];
  return inv;
}

namespace {

template <bool Inverse>
void rope_impl(std::span<float> x, std::size_t n_heads, long position, float theta) {
  if (n_heads == 0 || x.size() % n_heads != 0) throw DimensionError("rope: length not divisible by head count");
  const std::size_t dh = x.size() / n_heads;
  if (dh % 2 != 0) throw ConfigError("rope: head dimension " + std::to_string(dh) + " is odd");
  for (std::size_t i = 0; i < dh / 2; ++i) {
    const double freq = std::pow(static_cast<double>(theta), -2.0 * static_cast<double>(i) / static_cast<double>(dh));
    const double angle = static_cast<double>(position) * freq;
    const float c = static_cast<float>(std::cos(angle));
    const float s = Inverse ? -static_cast<float>(std::sin(angle)) : static_cast<float>(std::sin(angle));
    for (std::size_t h = 0; h < n_heads; ++h) {
      float* p = x.data() + h * dh + 2 * i;
      const float a = p[0], b = p[1];
      p[0] = a * c - b * s;
      p[1] = a * s + b * c;
    }
  }
}

}  // namespace

void rope(std::span<float> x, std::size_t n_heads, long position, float theta) {
  rope_impl<false>(x, n_heads, position, theta);
}

void rope_inverse(std::span<float> x, std::size_t n_heads, long position, float theta) {
  rope_impl<true>(x, n_heads, position, theta);
}

}  // namespace ops

Tensor softmax(const Tensor& logits) {
  Tensor out(logits.shape());
  ops::softmax(logits.data(), out.data());
  return out;
}

Tensor log_softmax(const Tensor& logits) {
  Tensor out(logits.shape());
  ops::log_softmax(logits.data(), out.data());
  return out;
}

Tensor rmsnorm(const Tensor& x, const Tensor& weight, float eps) {
  require_rank(x, 1, "rmsnorm input");
  weight.require_shape(x.shape(), "rmsnorm weight");
  Tensor out(x.shape());
  ops::rmsnorm(x.data(), weight.data(), eps, out.data());
  return out;
}

Tensor rope_apply(const Tensor& x, std::size_t n_heads, long position, float theta) {
  Tensor out = x;
  ops::rope(out.data(), n_heads, position, theta);
  return out;
}

double cross_entropy(const Tensor& teacher_logits, const Tensor& student_logits) {
  if (teacher_logits.size() != student_logits.size()) {
    throw DimensionError("cross_entropy: teacher " + shape_str(teacher_logits.shape()) + " vs student " +
                         shape_str(student_logits.shape()));
  }
  const Tensor p = softmax(teacher_logits);
  const Tensor logq = log_softmax(student_logits);
  double ce = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) ce -= static_cast<double>(p[v]) * logq[v];
  return ce;
}

double entropy_of(std::span<const float> probs) {
  double h = 0.0;
  for (float p : probs) {
    if (p > 0.0f) h -= static_cast<double>(p) * std::log(static_cast<double>(p));
  }
  return h;
}

}  // namespace spade
