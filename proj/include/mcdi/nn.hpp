#pragma once

// Dense feedforward networks over a flat parameter vector, with exact
// layerwise reverse-mode gradients, Adam, and the SAM ascent perturbation.
//
// Parameter layout: for each affine layer l (in -> out), an out x in weight
// block stored column-major, followed by the out-dimensional bias.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mcdi/errors.hpp"
#include "mcdi/rng.hpp"

namespace mcdi {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using WeightVector = Vector<double>;
using Index = Eigen::Index;

enum class Activation : std::uint8_t { Tanh = 0, Relu = 1 };

enum class OutputHead : std::uint8_t {
  Linear = 0,
  SoftmaxCrossEntropy = 1,
  MeanSquaredError = 2,
};

struct NetworkSpec {
  std::vector<int> layer_sizes;
  Activation activation = Activation::Tanh;
  OutputHead output_head = OutputHead::Linear;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int num_affine() const { return static_cast<int>(layer_sizes.size()) - 1; }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

inline void validate(const NetworkSpec& spec) {
  if (spec.layer_sizes.size() < 2) {
    throw SpecError("network spec needs at least two layer sizes");
  }
  for (int s : spec.layer_sizes) {
    if (s < 1) throw SpecError("layer sizes must be >= 1, got " + std::to_string(s));
  }
}

inline Index parameter_count(const NetworkSpec& spec) {
  validate(spec);
  Index n = 0;
  for (int l = 0; l < spec.num_affine(); ++l) {
    const Index in = spec.layer_sizes[l];
    const Index out = spec.layer_sizes[l + 1];
    n += in * out + out;
  }
  return n;
}

/// Inputs (one sample per row) plus either class labels or regression targets.
template <typename Scalar>
struct LabeledBatch {
  Matrix<Scalar> inputs;
  Matrix<Scalar> targets;   // regression heads, one row per sample
  std::vector<int> labels;  // classification heads

  Index size() const { return inputs.rows(); }
};

using Batch = LabeledBatch<double>;

template <typename Scalar>
struct GradResult {
  Scalar loss{};
  Vector<Scalar> grad;
};

namespace detail {

inline Index layer_offset(const NetworkSpec& spec, int layer) {
  Index off = 0;
  for (int l = 0; l < layer; ++l) {
    off += static_cast<Index>(spec.layer_sizes[l]) * spec.layer_sizes[l + 1] +
           spec.layer_sizes[l + 1];
  }
  return off;
}

template <typename Scalar>
void check_weights(const NetworkSpec& spec, const Vector<Scalar>& w) {
  const Index expected = parameter_count(spec);
  if (w.size() != expected) {
    throw DimensionError("weight vector has " + std::to_string(w.size()) +
                         " entries, spec needs " + std::to_string(expected));
  }
}

template <typename Derived>
void activate(Activation act, Eigen::MatrixBase<Derived>& z) {
  if (act == Activation::Tanh) {
    z = z.array().tanh().matrix();
  } else {
    z = z.cwiseMax(typename Derived::Scalar(0));
  }
}

}  // namespace detail

/// Activations recorded by a forward pass. `layers[0]` is the input and
/// `layers.back()` the raw output of the last affine map.
template <typename Scalar>
struct ForwardCache {
  std::vector<Matrix<Scalar>> layers;

  const Matrix<Scalar>& output() const { return layers.back(); }
};

template <typename Scalar>
ForwardCache<Scalar> forward_cached(const NetworkSpec& spec, const Vector<Scalar>& w,
                                    const Matrix<Scalar>& inputs) {
  detail::check_weights(spec, w);
  if (inputs.cols() != spec.input_dim()) {
    throw DimensionError("input width " + std::to_string(inputs.cols()) +
                         " does not match layer_sizes[0] = " +
                         std::to_string(spec.input_dim()));
  }
  ForwardCache<Scalar> cache;
  cache.layers.reserve(spec.layer_sizes.size());
  cache.layers.push_back(inputs);
  Index off = 0;
  for (int l = 0; l < spec.num_affine(); ++l) {
    const Index in = spec.layer_sizes[l];
    const Index out = spec.layer_sizes[l + 1];
    Eigen::Map<const Matrix<Scalar>> weight(w.data() + off, out, in);
    Eigen::Map<const Vector<Scalar>> bias(w.data() + off + in * out, out);
    off += in * out + out;

    Matrix<Scalar> z = cache.layers.back() * weight.transpose();
    z.rowwise() += bias.transpose();
    if (l + 1 < spec.num_affine()) detail::activate(spec.activation, z);
    if (!z.allFinite()) {
      throw NumericError("non-finite activation in layer " + std::to_string(l));
    }
    cache.layers.push_back(std::move(z));
  }
  return cache;
}

/// Raw network outputs (logits for classification heads).
template <typename Scalar>
Matrix<Scalar> forward(const NetworkSpec& spec, const Vector<Scalar>& w,
                       const Matrix<Scalar>& inputs) {
  return std::move(forward_cached(spec, w, inputs).layers.back());
}

/// Vector-Jacobian product: gradient of a scalar loss with respect to the
/// weights, given dL/d(output) for the cached forward pass.
template <typename Scalar>
Vector<Scalar> backward(const NetworkSpec& spec, const Vector<Scalar>& w,
                        const ForwardCache<Scalar>& cache, Matrix<Scalar> upstream) {
  detail::check_weights(spec, w);
  if (upstream.rows() != cache.output().rows() ||
      upstream.cols() != cache.output().cols()) {
    throw DimensionError("upstream gradient shape does not match network output");
  }
  Vector<Scalar> grad(w.size());
  for (int l = spec.num_affine() - 1; l >= 0; --l) {
    const Index in = spec.layer_sizes[l];
    const Index out = spec.layer_sizes[l + 1];
    const Index off = detail::layer_offset(spec, l);
    const Matrix<Scalar>& a_in = cache.layers[l];

    Eigen::Map<Matrix<Scalar>> gw(grad.data() + off, out, in);
    Eigen::Map<Vector<Scalar>> gb(grad.data() + off + in * out, out);
    gw.noalias() = upstream.transpose() * a_in;
    gb = upstream.colwise().sum().transpose();

    if (l == 0) break;
    Eigen::Map<const Matrix<Scalar>> weight(w.data() + off, out, in);
    Matrix<Scalar> down = upstream * weight;
    if (spec.activation == Activation::Tanh) {
      down.array() *= (Scalar(1) - a_in.array().square());
    } else {
      down.array() *= (a_in.array() > Scalar(0)).template cast<Scalar>();
    }
    upstream = std::move(down);
  }
  return grad;
}

namespace detail {

template <typename Scalar>
std::pair<Scalar, Matrix<Scalar>> head_loss(const NetworkSpec& spec,
                                             const Matrix<Scalar>& out,
                                             const LabeledBatch<Scalar>& batch) {
  const Index n = out.rows();
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
  switch (spec.output_head) {
    case OutputHead::SoftmaxCrossEntropy: {
      if (static_cast<Index>(batch.labels.size()) != n) {
        throw DimensionError("label count does not match batch size");
      }
      Matrix<Scalar> dout(out.rows(), out.cols());
      Scalar loss = 0;
      for (Index r = 0; r < n; ++r) {
        const int y = batch.labels[r];
        if (y < 0 || y >= out.cols()) {
          throw DimensionError("label " + std::to_string(y) + " outside [0, " +
                               std::to_string(out.cols()) + ")");
        }
        const Scalar mx = out.row(r).maxCoeff();
        const auto shifted = (out.row(r).array() - mx).eval();
        const Scalar lse = std::log(shifted.exp().sum());
        loss += lse - shifted(y);
        dout.row(r) = (shifted - lse).exp().matrix();
        dout(r, y) -= Scalar(1);
      }
      return {loss * inv_n, dout * inv_n};
    }
    case OutputHead::MeanSquaredError: {
      if (batch.targets.rows() != n || batch.targets.cols() != out.cols()) {
        throw DimensionError("regression targets shape does not match network output");
      }
      const Matrix<Scalar> diff = out - batch.targets;
      const Scalar inv = Scalar(1) / static_cast<Scalar>(diff.size());
      return {diff.squaredNorm() * inv, diff * (Scalar(2) * inv)};
    }
    case OutputHead::Linear:
      break;
  }
  throw SpecError("linear output head has no task loss");
}

}  // namespace detail

/// Downstream task loss: mean cross-entropy (softmax head) or mean squared
/// error over all output entries (MSE head), with its exact gradient.
template <typename Scalar>
GradResult<Scalar> task_loss_grad(const NetworkSpec& spec, const Vector<Scalar>& w,
                                  const LabeledBatch<Scalar>& batch) {
  if (batch.size() == 0) throw DimensionError("task loss on an empty batch");
  const auto cache = forward_cached(spec, w, batch.inputs);
  auto [loss, dout] = detail::head_loss(spec, cache.output(), batch);
  if (!std::isfinite(loss)) throw NumericError("non-finite task loss at output head");
  return {loss, backward(spec, w, cache, std::move(dout))};
}

template <typename Scalar>
Scalar task_loss(const NetworkSpec& spec, const Vector<Scalar>& w,
                 const LabeledBatch<Scalar>& batch) {
  if (batch.size() == 0) throw DimensionError("task loss on an empty batch");
  return detail::head_loss(spec, forward(spec, w, batch.inputs), batch).first;
}

/// Fraction of rows whose argmax logit equals the label.
template <typename Scalar>
double accuracy(const NetworkSpec& spec, const Vector<Scalar>& w,
                const LabeledBatch<Scalar>& batch) {
  const Matrix<Scalar> out = forward(spec, w, batch.inputs);
  Index hits = 0;
  for (Index r = 0; r < out.rows(); ++r) {
    Index arg = 0;
    out.row(r).maxCoeff(&arg);
    hits += (arg == batch.labels[r]);
  }
  return out.rows() ? static_cast<double>(hits) / static_cast<double>(out.rows()) : 0.0;
}

/// Central differences of an arbitrary scalar function, one coordinate at a time.
template <typename Scalar, typename Fn>
Vector<Scalar> central_difference(Fn&& f, const Vector<Scalar>& w, Scalar h) {
  if (!(h > Scalar(0))) throw SpecError("finite-difference step must be positive");
  Vector<Scalar> grad(w.size());
  Vector<Scalar> probe = w;
  for (Index i = 0; i < w.size(); ++i) {
    const Scalar orig = probe[i];
    probe[i] = orig + h;
    const Scalar fp = f(probe);
    probe[i] = orig - h;
    const Scalar fm = f(probe);
    probe[i] = orig;
    grad[i] = (fp - fm) / (Scalar(2) * h);
  }
  return grad;
}

template <typename Scalar>
Vector<Scalar> finite_diff_grad(const NetworkSpec& spec, const Vector<Scalar>& w,
                                const LabeledBatch<Scalar>& batch, Scalar h) {
  return central_difference<Scalar>(
      [&](const Vector<Scalar>& p) { return task_loss(spec, p, batch); }, w, h);
}

/// Max over coordinates of |a-b| / max(|a|, |b|, floor).
template <typename Scalar>
Scalar max_relative_error(const Vector<Scalar>& a, const Vector<Scalar>& b,
                          Scalar floor = Scalar(1e-8)) {
  if (a.size() != b.size()) throw DimensionError("relative error of mismatched vectors");
  Scalar worst = 0;
  for (Index i = 0; i < a.size(); ++i) {
    const Scalar denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

/// ||a - b|| / max(||a||, ||b||, floor).
template <typename Scalar>
Scalar relative_error(const Vector<Scalar>& a, const Vector<Scalar>& b,
                      Scalar floor = Scalar(1e-12)) {
  if (a.size() != b.size()) throw DimensionError("relative error of mismatched vectors");
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

template <typename Scalar = double>
Vector<Scalar> init_network(const NetworkSpec& spec, double init_std, Rng& rng) {
  if (!(init_std > 0)) throw SpecError("init_std must be positive");
  return (standard_normal<Scalar>(parameter_count(spec), rng) *
          static_cast<Scalar>(init_std))
      .eval();
}

template <typename Scalar>
struct AdamState {
  Vector<Scalar> m;
  Vector<Scalar> v;
  std::int64_t step = 0;
  Scalar lr = Scalar(0.005);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps_stab = Scalar(1e-8);
};

template <typename Scalar = double>
AdamState<Scalar> make_adam(Index dim, Scalar lr) {
  AdamState<Scalar> s;
  s.m = Vector<Scalar>::Zero(dim);
  s.v = Vector<Scalar>::Zero(dim);
  s.lr = lr;
  return s;
}

template <typename Scalar>
struct AdamResult {
  Vector<Scalar> weights;
  AdamState<Scalar> state;
};

template <typename Scalar>
AdamResult<Scalar> adam_step(const AdamState<Scalar>& state, const Vector<Scalar>& w,
                             const Vector<Scalar>& grad) {
  if (w.size() != grad.size() || state.m.size() != w.size() ||
      state.v.size() != w.size()) {
    throw DimensionError("adam_step dimension mismatch");
  }
  if (!grad.allFinite()) throw NumericError("adam_step received a non-finite gradient");
  AdamResult<Scalar> r{w, state};
  AdamState<Scalar>& s = r.state;
  s.step += 1;
  s.m = s.beta1 * s.m + (Scalar(1) - s.beta1) * grad;
  s.v = s.beta2 * s.v + (Scalar(1) - s.beta2) * grad.cwiseAbs2();
  const Scalar c1 = Scalar(1) - std::pow(s.beta1, static_cast<Scalar>(s.step));
  const Scalar c2 = Scalar(1) - std::pow(s.beta2, static_cast<Scalar>(s.step));
  r.weights.array() -=
      s.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps_stab);
  return r;
}

/// SAM ascent direction rho * g / ||g||; zero when ||g|| < 1e-12.
template <typename Scalar>
Vector<Scalar> sam_perturb(const Vector<Scalar>& grad, Scalar rho) {
  if (rho < Scalar(0)) throw SpecError("SAM radius must be nonnegative");
  const Scalar norm = grad.norm();
  if (norm < Scalar(1e-12) || rho == Scalar(0)) return Vector<Scalar>::Zero(grad.size());
  return (rho / norm) * grad;
}

}  // namespace mcdi
