#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ulb/rng.hpp"

namespace ulb {

enum class Activation { kRelu, kTanh };

// Fully connected softmax classifier. layer_widths holds the input dimension,
// any hidden widths, and the class count; no hidden entries means plain
// softmax regression.
struct ModelSpec {
  std::vector<int> layer_widths;
  Activation activation = Activation::kRelu;
};

// Flat parameter storage in canonical order: for each linear layer, the
// (out x in) weight matrix row-major, then the bias vector. Checkpoints,
// barriers and permutation alignment all rely on this layout.
using ParamVector = std::vector<double>;

struct Dataset {
  int n = 0;
  int d = 0;
  std::vector<double> features;       // n x d, row-major
  std::vector<int> labels;            // class ids
  std::vector<std::int64_t> ids;      // stable example identifiers

  const double* row(int i) const { return features.data() + static_cast<std::size_t>(i) * d; }
};

inline void validate(const ModelSpec& spec) {
  if (spec.layer_widths.size() < 2) {
    throw std::invalid_argument("model spec needs at least input and output widths");
  }
  for (int w : spec.layer_widths) {
    if (w <= 0) throw std::invalid_argument("model spec widths must be positive");
  }
  if (spec.layer_widths.back() < 2) {
    throw std::invalid_argument("model spec needs at least 2 classes");
  }
}

inline void validate(const Dataset& ds) {
  if (ds.n < 0 || ds.d <= 0) throw std::invalid_argument("dataset: bad shape");
  if (ds.features.size() != static_cast<std::size_t>(ds.n) * ds.d ||
      ds.labels.size() != static_cast<std::size_t>(ds.n) ||
      ds.ids.size() != static_cast<std::size_t>(ds.n)) {
    throw std::invalid_argument("dataset: inconsistent field sizes");
  }
  for (double v : ds.features) {
    if (!std::isfinite(v)) throw std::invalid_argument("dataset: non-finite feature");
  }
  for (int y : ds.labels) {
    if (y < 0) throw std::invalid_argument("dataset: negative label");
  }
  std::vector<std::int64_t> sorted_ids = ds.ids;
  std::sort(sorted_ids.begin(), sorted_ids.end());
  if (std::adjacent_find(sorted_ids.begin(), sorted_ids.end()) != sorted_ids.end()) {
    throw std::invalid_argument("dataset: duplicate ids");
  }
}

inline int input_dim(const ModelSpec& spec) { return spec.layer_widths.front(); }
inline int class_count(const ModelSpec& spec) { return spec.layer_widths.back(); }
inline int layer_count(const ModelSpec& spec) {
  return static_cast<int>(spec.layer_widths.size()) - 1;
}

inline std::size_t param_count(const ModelSpec& spec) {
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
    total += static_cast<std::size_t>(spec.layer_widths[l]) * spec.layer_widths[l + 1] +
             spec.layer_widths[l + 1];
  }
  return total;
}

// Offset of layer l's weight block; the bias block follows it.
inline std::size_t layer_offset(const ModelSpec& spec, int layer) {
  std::size_t off = 0;
  for (int l = 0; l < layer; ++l) {
    off += static_cast<std::size_t>(spec.layer_widths[l]) * spec.layer_widths[l + 1] +
           spec.layer_widths[l + 1];
  }
  return off;
}

// Weights ~ N(0, 1/fan_in), biases zero.
inline ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  ParamVector params(param_count(spec));
  std::size_t off = 0;
  for (int l = 0; l + 1 < static_cast<int>(spec.layer_widths.size()); ++l) {
    const int in = spec.layer_widths[l];
    const int out = spec.layer_widths[l + 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (int i = 0; i < in * out; ++i) params[off + i] = scale * rng.normal();
    off += static_cast<std::size_t>(in) * out;
    for (int o = 0; o < out; ++o) params[off + o] = 0.0;
    off += out;
  }
  return params;
}

namespace detail {

// Reusable per-example forward/backward buffers. Keeping these out of the
// hot loops avoids reallocation when sweeping whole datasets.
struct ModelScratch {
  std::vector<std::vector<double>> acts;   // acts[0] = input, acts[l] post-activation
  std::vector<double> logits;
  std::vector<double> probs;
  std::vector<double> delta;
  std::vector<double> delta_next;

  void resize(const ModelSpec& spec) {
    const int layers = layer_count(spec);
    acts.assign(layers, {});
    for (int l = 0; l < layers; ++l) acts[l].resize(spec.layer_widths[l]);
    logits.resize(spec.layer_widths.back());
    probs.resize(spec.layer_widths.back());
    int widest = 0;
    for (int w : spec.layer_widths) widest = std::max(widest, w);
    delta.resize(widest);
    delta_next.resize(widest);
  }
};

inline void softmax_from_logits(const std::vector<double>& logits, std::vector<double>& probs) {
  const double zmax = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    probs[c] = std::exp(logits[c] - zmax);
    sum += probs[c];
  }
  for (double& p : probs) p /= sum;
}

// Runs the net on one example, filling scratch.acts and scratch.logits.
inline void forward_scratch(const ModelSpec& spec, const ParamVector& params, const double* x,
                            ModelScratch& s) {
  const int layers = layer_count(spec);
  std::copy(x, x + spec.layer_widths[0], s.acts[0].begin());
  std::size_t off = 0;
  for (int l = 0; l < layers; ++l) {
    const int in = spec.layer_widths[l];
    const int out = spec.layer_widths[l + 1];
    const double* w = params.data() + off;
    const double* b = params.data() + off + static_cast<std::size_t>(in) * out;
    std::vector<double>& dst = (l == layers - 1) ? s.logits : s.acts[l + 1];
    const std::vector<double>& src = s.acts[l];
    for (int o = 0; o < out; ++o) {
      const double* wrow = w + static_cast<std::size_t>(o) * in;
      double z = b[o];
      for (int i = 0; i < in; ++i) z += wrow[i] * src[i];
      if (l == layers - 1) {
        dst[o] = z;
      } else {
        dst[o] = (spec.activation == Activation::kRelu) ? (z > 0.0 ? z : 0.0) : std::tanh(z);
      }
    }
    off += static_cast<std::size_t>(in) * out + out;
  }
}

// Backward pass from d(loss)/d(logits) already stored in s.delta[0..C).
// Accumulates the parameter gradient into grad_out (if non-null, scaled by
// `weight`), optionally accumulates the squared gradient norm, and leaves
// d(loss)/d(input) in s.delta_next when requested.
inline void backward_scratch(const ModelSpec& spec, const ParamVector& params, ModelScratch& s,
                             double* grad_out, double weight, double* grad_sq_norm,
                             bool want_input_grad) {
  const int layers = layer_count(spec);
  for (int l = layers - 1; l >= 0; --l) {
    const int in = spec.layer_widths[l];
    const int out = spec.layer_widths[l + 1];
    const std::size_t off = layer_offset(spec, l);
    const double* w = params.data() + off;
    const std::vector<double>& a = s.acts[l];

    if (grad_sq_norm != nullptr) {
      // grad W_l = delta (x) a_l is rank one, so its squared Frobenius norm
      // factors as |delta|^2 * |a|^2; the bias block adds |delta|^2.
      double dsq = 0.0;
      for (int o = 0; o < out; ++o) dsq += s.delta[o] * s.delta[o];
      double asq = 0.0;
      for (int i = 0; i < in; ++i) asq += a[i] * a[i];
      *grad_sq_norm += dsq * (asq + 1.0);
    }
    if (grad_out != nullptr) {
      double* gw = grad_out + off;
      double* gb = grad_out + off + static_cast<std::size_t>(in) * out;
      for (int o = 0; o < out; ++o) {
        const double dw = weight * s.delta[o];
        double* grow = gw + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) grow[i] += dw * a[i];
        gb[o] += dw;
      }
    }

    const bool need_prev = (l > 0) || want_input_grad;
    if (!need_prev) return;
    for (int i = 0; i < in; ++i) {
      double acc = 0.0;
      for (int o = 0; o < out; ++o) acc += w[static_cast<std::size_t>(o) * in + i] * s.delta[o];
      s.delta_next[i] = acc;
    }
    if (l > 0) {
      // chain through the activation of layer l's input units
      for (int i = 0; i < in; ++i) {
        const double ai = a[i];
        const double dact =
            (spec.activation == Activation::kRelu) ? (ai > 0.0 ? 1.0 : 0.0) : (1.0 - ai * ai);
        s.delta[i] = s.delta_next[i] * dact;
      }
    } else {
      std::copy(s.delta_next.begin(), s.delta_next.begin() + in, s.delta.begin());
    }
  }
}

inline void check_input_dim(const ModelSpec& spec, int d) {
  if (d != input_dim(spec)) {
    throw std::invalid_argument("input dimension " + std::to_string(d) +
                                " does not match model input width " +
                                std::to_string(input_dim(spec)));
  }
}

}  // namespace detail

// Softmax class probabilities for every row; returns an n x C row-major array.
inline std::vector<double> forward(const ModelSpec& spec, const ParamVector& params,
                                   const double* inputs, int n, int d) {
  detail::check_input_dim(spec, d);
  const int C = class_count(spec);
  detail::ModelScratch s;
  s.resize(spec);
  std::vector<double> out(static_cast<std::size_t>(n) * C);
  for (int i = 0; i < n; ++i) {
    detail::forward_scratch(spec, params, inputs + static_cast<std::size_t>(i) * d, s);
    detail::softmax_from_logits(s.logits, s.probs);
    std::copy(s.probs.begin(), s.probs.end(), out.begin() + static_cast<std::size_t>(i) * C);
  }
  return out;
}

inline std::vector<double> forward(const ModelSpec& spec, const ParamVector& params,
                                   const Dataset& ds) {
  return forward(spec, params, ds.features.data(), ds.n, ds.d);
}

// Mean cross-entropy over the indexed examples plus l1_coeff * |params|_1.
inline double loss(const ModelSpec& spec, const ParamVector& params, const Dataset& ds,
                   std::span<const int> idx, double l1_coeff) {
  detail::check_input_dim(spec, ds.d);
  if (idx.empty()) throw std::invalid_argument("loss: empty batch");
  detail::ModelScratch s;
  s.resize(spec);
  double total = 0.0;
  for (int i : idx) {
    detail::forward_scratch(spec, params, ds.row(i), s);
    const double zmax = *std::max_element(s.logits.begin(), s.logits.end());
    double sum = 0.0;
    for (double z : s.logits) sum += std::exp(z - zmax);
    total += zmax + std::log(sum) - s.logits[ds.labels[i]];
  }
  double value = total / static_cast<double>(idx.size());
  if (l1_coeff != 0.0) {
    double l1 = 0.0;
    for (double p : params) l1 += std::abs(p);
    value += l1_coeff * l1;
  }
  return value;
}

inline double loss(const ModelSpec& spec, const ParamVector& params, const Dataset& ds,
                   double l1_coeff = 0.0) {
  std::vector<int> all(ds.n);
  for (int i = 0; i < ds.n; ++i) all[i] = i;
  return loss(spec, params, ds, all, l1_coeff);
}

// Mean of the per-example cross-entropy gradients, accumulated in index order.
inline ParamVector grad_params(const ModelSpec& spec, const ParamVector& params,
                               const Dataset& ds, std::span<const int> idx) {
  detail::check_input_dim(spec, ds.d);
  if (idx.empty()) throw std::invalid_argument("grad_params: empty batch");
  detail::ModelScratch s;
  s.resize(spec);
  ParamVector grad(params.size(), 0.0);
  const double w = 1.0 / static_cast<double>(idx.size());
  const int C = class_count(spec);
  for (int i : idx) {
    detail::forward_scratch(spec, params, ds.row(i), s);
    detail::softmax_from_logits(s.logits, s.probs);
    for (int c = 0; c < C; ++c) s.delta[c] = s.probs[c];
    s.delta[ds.labels[i]] -= 1.0;
    detail::backward_scratch(spec, params, s, grad.data(), w, nullptr, false);
  }
  for (double g : grad) {
    if (!std::isfinite(g)) throw std::runtime_error("grad_params: non-finite gradient");
  }
  return grad;
}

inline ParamVector grad_params(const ModelSpec& spec, const ParamVector& params,
                               const Dataset& ds) {
  std::vector<int> all(ds.n);
  for (int i = 0; i < ds.n; ++i) all[i] = i;
  return grad_params(spec, params, ds, all);
}

struct ExampleStats {
  std::vector<double> grad_norms;    // |grad_w CE(x_i)|_2 per example
  std::vector<double> confidences;   // softmax entry of the true class
};

// One fused sweep computing both checkpoint logs.
inline ExampleStats per_example_stats(const ModelSpec& spec, const ParamVector& params,
                                      const Dataset& ds) {
  detail::check_input_dim(spec, ds.d);
  if (ds.n == 0) throw std::invalid_argument("per_example_stats: empty dataset");
  detail::ModelScratch s;
  s.resize(spec);
  ExampleStats stats;
  stats.grad_norms.resize(ds.n);
  stats.confidences.resize(ds.n);
  const int C = class_count(spec);
  for (int i = 0; i < ds.n; ++i) {
    detail::forward_scratch(spec, params, ds.row(i), s);
    detail::softmax_from_logits(s.logits, s.probs);
    stats.confidences[i] = s.probs[ds.labels[i]];
    for (int c = 0; c < C; ++c) s.delta[c] = s.probs[c];
    s.delta[ds.labels[i]] -= 1.0;
    double sq = 0.0;
    detail::backward_scratch(spec, params, s, nullptr, 0.0, &sq, false);
    if (!std::isfinite(sq)) throw std::runtime_error("per_example_stats: non-finite gradient");
    stats.grad_norms[i] = std::sqrt(sq);
  }
  return stats;
}

inline std::vector<double> per_example_grad_norms(const ModelSpec& spec,
                                                  const ParamVector& params,
                                                  const Dataset& ds) {
  return per_example_stats(spec, params, ds).grad_norms;
}

// d(cross-entropy)/d(input) for a single example.
inline std::vector<double> grad_input(const ModelSpec& spec, const ParamVector& params,
                                      const double* x, int label) {
  detail::ModelScratch s;
  s.resize(spec);
  detail::forward_scratch(spec, params, x, s);
  detail::softmax_from_logits(s.logits, s.probs);
  const int C = class_count(spec);
  for (int c = 0; c < C; ++c) s.delta[c] = s.probs[c];
  s.delta[label] -= 1.0;
  detail::backward_scratch(spec, params, s, nullptr, 0.0, nullptr, true);
  return std::vector<double>(s.delta_next.begin(), s.delta_next.begin() + input_dim(spec));
}

// Fraction of argmax-correct predictions; argmax ties go to the lowest class id.
inline double accuracy(const ModelSpec& spec, const ParamVector& params, const Dataset& ds) {
  detail::check_input_dim(spec, ds.d);
  if (ds.n == 0) throw std::invalid_argument("accuracy: empty dataset");
  detail::ModelScratch s;
  s.resize(spec);
  const int C = class_count(spec);
  int correct = 0;
  for (int i = 0; i < ds.n; ++i) {
    detail::forward_scratch(spec, params, ds.row(i), s);
    int best = 0;
    for (int c = 1; c < C; ++c) {
      if (s.logits[c] > s.logits[best]) best = c;
    }
    if (best == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / ds.n;
}

inline double confidence(const ModelSpec& spec, const ParamVector& params, const double* x,
                         int label) {
  detail::ModelScratch s;
  s.resize(spec);
  detail::forward_scratch(spec, params, x, s);
  detail::softmax_from_logits(s.logits, s.probs);
  return s.probs[label];
}

}  // namespace ulb
