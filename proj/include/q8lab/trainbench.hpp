// Copyright 2026 The q8lab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Toy mixed-precision training harness.
//
// A three-layer classifier (dense -> per-head block-diagonal -> dense, GELU
// activations, softmax cross-entropy) trained with plain SGD on a synthetic
// teacher task. Every matmul in the forward and backward pass goes through
// qmatmul with the operand configs picked by tensor category:
//
//   forward   X.W1, H1[h].W2[h], H2.W3       lhs <- LHS,  rhs <- RHS
//   backward  dW = A^T.G                    A <- LHS,    G <- gradient
//             dA = G.W^T                    G <- gradient, W^T <- RHS
//
// Biases, activations, the loss and the optimizer stay in reference
// precision.

#ifndef Q8LAB_TRAINBENCH_HPP_
#define Q8LAB_TRAINBENCH_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "q8lab/distributions.hpp"
#include "q8lab/error.hpp"
#include "q8lab/qmatmul.hpp"
#include "q8lab/quantizer.hpp"
#include "q8lab/random.hpp"
#include "q8lab/tensor.hpp"

namespace q8lab {

/// Quantization per tensor category; std::nullopt means off.
struct CategoryConfig {
  std::optional<QuantConfig> rhs;
  std::optional<QuantConfig> lhs;
  std::optional<QuantConfig> gradient;
};

struct ModelDims {
  std::size_t inputs = 32;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t classes = 8;
};

struct TrainRun {
  ModelDims dims;
  std::size_t steps = 300;
  std::size_t batch = 256;
  double learning_rate = 0.3;
  std::uint64_t seed = 0;
  std::size_t eval_every = 10;
  std::size_t eval_size = 512;
  /// Fraction of training labels replaced by a random class.
  double label_noise = 0.0;
  /// Log-scale spread of per-example loss weights. Weights are log-normal
  /// with unit mean, which makes upstream gradients log-normal across
  /// examples; 0 disables weighting.
  double gradient_tail = 2.0;
  CategoryConfig categories;
};

struct TrainResult {
  std::vector<std::size_t> steps;
  std::vector<double> loss;
  std::vector<double> eval;
  double auc = 0.0;
  bool diverged = false;
};

/// Trapezoidal area under an evenly spaced curve on the normalized axis [0, 1].
inline double auc(const std::vector<double>& curve) {
  if (curve.size() < 2) fail(ErrorCode::kInvalidArgument, "auc needs at least 2 points");
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) area += 0.5 * (curve[i - 1] + curve[i]);
  return area / static_cast<double>(curve.size() - 1);
}

struct Weights {
  Tensor w1;  // [inputs, hidden]
  Tensor b1;  // [hidden]
  Tensor w2;  // [heads, head_dim, head_dim]
  Tensor b2;  // [hidden]
  Tensor w3;  // [hidden, classes]
  Tensor b3;  // [classes]

  std::vector<Tensor*> all() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
  std::vector<const Tensor*> all() const { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
};

namespace detail {

inline Tensor transpose2d(const Tensor& x) {
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  }
  return Tensor({c, r}, std::move(out));
}

// [B, heads*dh] <-> [heads, B, dh].
inline Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t b = x.dim(0), d = x.dim(1), dh = d / heads;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t k = 0; k < dh; ++k) out[(h * b + i) * dh + k] = x[i * d + h * dh + k];
    }
  }
  return Tensor({heads, b, dh}, std::move(out));
}

inline Tensor merge_heads(const Tensor& x) {
  const std::size_t heads = x.dim(0), b = x.dim(1), dh = x.dim(2), d = heads * dh;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t k = 0; k < dh; ++k) out[i * d + h * dh + k] = x[(h * b + i) * dh + k];
    }
  }
  return Tensor({b, d}, std::move(out));
}

// Transposes the two trailing axes of a rank-3 tensor.
inline Tensor transpose_last2(const Tensor& x) {
  const std::size_t n = x.dim(0), r = x.dim(1), c = x.dim(2);
  std::vector<double> out(x.size());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[(s * c + j) * r + i] = x[(s * r + i) * c + j];
    }
  }
  return Tensor({n, c, r}, std::move(out));
}

inline void add_row_bias(Tensor& x, const Tensor& bias) {
  const std::size_t cols = bias.size();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += bias[i % cols];
}

inline Tensor column_sums(const Tensor& x) {
  const std::size_t cols = x.dim(1);
  std::vector<double> out(cols, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) out[i % cols] += x[i];
  return Tensor({cols}, std::move(out));
}

// tanh-approximated GELU and its derivative.
inline double gelu(double z) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * z * (1.0 + std::tanh(c * (z + 0.044715 * z * z * z)));
}

inline double gelu_grad(double z) {
  constexpr double c = 0.7978845608028654;
  const double u = c * (z + 0.044715 * z * z * z);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * z * z);
}

inline Tensor apply_gelu(const Tensor& z) {
  Tensor out = z;
  for (double& v : out.data()) v = gelu(v);
  return out;
}

}  // namespace detail

struct Batch {
  Tensor inputs;                    // [B, inputs]
  std::vector<std::size_t> labels;  // B entries
  std::vector<double> weights;      // per-example loss weights; empty means 1
};

/// Synthetic task: labels are the argmax of a fixed random linear teacher.
class TeacherTask {
 public:
  TeacherTask(const ModelDims& dims, std::uint64_t seed) : dims_(dims), seed_(seed) {
    DistSpec d;
    d.seed = derive_seed(seed, 0x7EAC);
    teacher_ = sample(d, {dims.inputs, dims.classes});
  }

  /// Batch number `index`; noise replaces that fraction of labels.
  Batch batch(std::uint64_t index, std::size_t size, double label_noise, double weight_tail = 0.0) const {
    DistSpec d;
    d.seed = derive_seed(seed_, 3 * index + 1);
    Batch b{sample(d, {size, dims_.inputs}), {}, {}};
    if (weight_tail > 0.0) {
      DistSpec w;
      w.family = DistFamily::kLogNormal;
      w.location = -0.5 * weight_tail * weight_tail;
      w.scale = weight_tail;
      w.seed = derive_seed(seed_, 3 * index + 3);
      const Tensor weights = sample(w, {size});
      b.weights.assign(weights.data().begin(), weights.data().end());
    }
    RandomStream noise(derive_seed(seed_, 3 * index + 2));
    b.labels.resize(size);
    for (std::size_t i = 0; i < size; ++i) {
      std::size_t best = 0;
      double best_score = -INFINITY;
      for (std::size_t c = 0; c < dims_.classes; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < dims_.inputs; ++k) s += b.inputs[i * dims_.inputs + k] * teacher_[k * dims_.classes + c];
        if (s > best_score) {
          best_score = s;
          best = c;
        }
      }
      RandomStream s = noise.substream(i);
      if (s.next_unit() < label_noise) best = static_cast<std::size_t>(s.next_u64() % dims_.classes);
      b.labels[i] = best;
    }
    return b;
  }

 private:
  ModelDims dims_;
  std::uint64_t seed_;
  Tensor teacher_;
};

inline void validate(const ModelDims& dims) {
  if (dims.inputs == 0 || dims.classes < 2 || dims.heads == 0 || dims.hidden == 0 || dims.hidden % dims.heads != 0 ||
      dims.hidden > 256) {
    fail(ErrorCode::kInvalidArgument, "model dims need hidden <= 256 divisible by heads and >= 2 classes");
  }
}

/// He-style initialization (normal with variance 2/fan_in), zero biases.
inline Weights init_params(const ModelDims& dims, std::uint64_t seed) {
  validate(dims);
  const std::size_t dh = dims.hidden / dims.heads;
  auto draw = [&](Shape shape, std::size_t fan_in, std::uint64_t tag) {
    DistSpec d;
    d.scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    d.seed = derive_seed(seed, tag);
    return sample(d, std::move(shape));
  };
  Weights p;
  p.w1 = draw({dims.inputs, dims.hidden}, dims.inputs, 1);
  p.b1 = Tensor::zeros({dims.hidden});
  p.w2 = draw({dims.heads, dh, dh}, dh, 2);
  p.b2 = Tensor::zeros({dims.hidden});
  p.w3 = draw({dims.hidden, dims.classes}, dims.hidden, 3);
  p.b3 = Tensor::zeros({dims.classes});
  return p;
}

struct ForwardState {
  Tensor z1, h1, z2, h2, logits;
};

/// Stochastic-rounding streams are keyed by matmul position, so a step's
/// randomness does not depend on the others.
inline ForwardState forward(const Weights& p, const Tensor& x, const CategoryConfig& cfg, const RandomStream& rng,
                            std::size_t heads) {
  const MatmulPlan plan{cfg.lhs, cfg.rhs, Accumulate::kWide};
  ForwardState s;
  s.z1 = qmatmul(x, p.w1, plan, rng.substream(0));
  detail::add_row_bias(s.z1, p.b1);
  s.h1 = detail::apply_gelu(s.z1);
  s.z2 = detail::merge_heads(qmatmul(detail::split_heads(s.h1, heads), p.w2, plan, rng.substream(1)));
  detail::add_row_bias(s.z2, p.b2);
  s.h2 = detail::apply_gelu(s.z2);
  s.logits = qmatmul(s.h2, p.w3, plan, rng.substream(2));
  detail::add_row_bias(s.logits, p.b3);
  return s;
}

/// Weighted-mean softmax cross-entropy and, optionally,
/// d(loss)/d(logits).
inline double cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels, Tensor* grad,
                            const std::vector<double>& weights = {}) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  double total_weight = static_cast<double>(b);
  if (!weights.empty()) {
    total_weight = 0.0;
    for (double w : weights) total_weight += w;
  }
  double loss = 0.0;
  if (grad) *grad = Tensor::zeros({b, c});
  for (std::size_t i = 0; i < b; ++i) {
    double top = -INFINITY;
    for (std::size_t k = 0; k < c; ++k) top = std::max(top, logits[i * c + k]);
    double denom = 0.0;
    for (std::size_t k = 0; k < c; ++k) denom += std::exp(logits[i * c + k] - top);
    const double w = weights.empty() ? 1.0 : weights[i];
    loss += w * (std::log(denom) + top - logits[i * c + labels[i]]);
    if (grad) {
      for (std::size_t k = 0; k < c; ++k) {
        const double prob = std::exp(logits[i * c + k] - top) / denom;
        (*grad)[i * c + k] = w * (prob - (k == labels[i] ? 1.0 : 0.0)) / total_weight;
      }
    }
  }
  return loss / total_weight;
}

struct LossAndGrad {
  double loss = 0.0;
  Weights grad;
};

inline LossAndGrad loss_and_gradients(const Weights& p, const Batch& batch, const CategoryConfig& cfg,
                                      const RandomStream& rng, std::size_t heads) {
  const ForwardState s = forward(p, batch.inputs, cfg, rng, heads);
  LossAndGrad out;
  Tensor d_logits;
  out.loss = cross_entropy(s.logits, batch.labels, &d_logits, batch.weights);
  if (!std::isfinite(out.loss)) return out;

  // Backward matmuls: the upstream gradient is always one operand.
  const MatmulPlan weight_grad{cfg.lhs, cfg.gradient, Accumulate::kWide};
  const MatmulPlan input_grad{cfg.gradient, cfg.rhs, Accumulate::kWide};

  out.grad.w3 = qmatmul(detail::transpose2d(s.h2), d_logits, weight_grad, rng.substream(3));
  out.grad.b3 = detail::column_sums(d_logits);
  Tensor dz2 = qmatmul(d_logits, detail::transpose2d(p.w3), input_grad, rng.substream(4));
  for (std::size_t i = 0; i < dz2.size(); ++i) dz2[i] *= detail::gelu_grad(s.z2[i]);
  out.grad.b2 = detail::column_sums(dz2);

  const Tensor h1_heads = detail::split_heads(s.h1, heads);
  const Tensor dz2_heads = detail::split_heads(dz2, heads);
  out.grad.w2 = qmatmul(detail::transpose_last2(h1_heads), dz2_heads, weight_grad, rng.substream(5));
  Tensor dz1 = detail::merge_heads(qmatmul(dz2_heads, detail::transpose_last2(p.w2), input_grad, rng.substream(6)));
  for (std::size_t i = 0; i < dz1.size(); ++i) dz1[i] *= detail::gelu_grad(s.z1[i]);
  out.grad.b1 = detail::column_sums(dz1);
  out.grad.w1 = qmatmul(detail::transpose2d(batch.inputs), dz1, weight_grad, rng.substream(7));
  return out;
}

inline double accuracy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (logits[i * c + k] > logits[i * c + best]) best = k;
    }
    correct += best == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(b);
}

namespace detail {

inline bool all_finite(const Weights& p) {
  for (const Tensor* t : p.all()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

}  // namespace detail

/// Runs SGD and records (loss, eval accuracy) on the held-out set at step 0
/// and every eval_every steps. A run that produces non-finite values stops
/// early, is flagged diverged, and scores 0 accuracy for the remaining
/// evaluation points.
inline TrainResult train(const TrainRun& run) {
  validate(run.dims);
  if (run.steps == 0 || run.eval_every == 0 || run.batch == 0 || run.eval_size == 0 || !(run.learning_rate > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "train run needs positive steps, eval_every, batch, eval_size and learning rate");
  }
  const TeacherTask task(run.dims, run.seed);
  const Batch eval_set = task.batch(0xE7A1, run.eval_size, 0.0);
  Weights p = init_params(run.dims, run.seed);
  const RandomStream root(derive_seed(run.seed, 0x5EED));
  const std::size_t heads = run.dims.heads;

  TrainResult result;
  auto evaluate = [&](std::size_t step) {
    const ForwardState s = forward(p, eval_set.inputs, run.categories, root.substream(2 * step + 1), heads);
    const double loss = cross_entropy(s.logits, eval_set.labels, nullptr);
    result.steps.push_back(step);
    result.loss.push_back(loss);
    result.eval.push_back(std::isfinite(loss) ? accuracy(s.logits, eval_set.labels) : 0.0);
    return std::isfinite(loss);
  };

  // Non-finite values surface as domain errors from the quantizer.
  auto guarded = [](auto&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDomain) throw;
      return false;
    }
  };
  bool ok = guarded([&] { return evaluate(0); });
  for (std::size_t step = 1; ok && step <= run.steps; ++step) {
    const Batch batch = task.batch(step, run.batch, run.label_noise, run.gradient_tail);
    LossAndGrad lg;
    ok = guarded([&] {
      lg = loss_and_gradients(p, batch, run.categories, root.substream(2 * step), heads);
      return std::isfinite(lg.loss) && detail::all_finite(lg.grad);
    });
    if (!ok) break;
    auto params = p.all();
    auto grads = lg.grad.all();
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto w = params[t]->data();
      const auto g = grads[t]->data();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= run.learning_rate * g[i];
    }
    if (step % run.eval_every == 0) ok = guarded([&] { return evaluate(step); });
  }
  if (!ok) {
    result.diverged = true;
    const std::size_t next = result.steps.empty() ? 0 : result.steps.back() + run.eval_every;
    for (std::size_t step = next; step <= run.steps; step += run.eval_every) {
      result.steps.push_back(step);
      result.loss.push_back(NAN);
      result.eval.push_back(0.0);
    }
  }
  result.auc = auc(result.eval);
  return result;
}

}  // namespace q8lab

#endif  // Q8LAB_TRAINBENCH_HPP_
