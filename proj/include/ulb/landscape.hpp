#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ulb/model.hpp"

namespace ulb {

enum class BarrierMetric { kCrossEntropy, kErrorRate };

struct BarrierProfile {
  std::vector<double> alphas;      // grid over [0,1], endpoints included
  std::vector<double> losses;      // loss along the path; alpha=1 is w, alpha=0 is w_prime
  double loss_w = 0.0;
  double loss_w_prime = 0.0;
  double barrier = 0.0;            // max deviation above the linear interpolation
  bool aligned = false;
  BarrierMetric metric = BarrierMetric::kCrossEntropy;
};

struct LayerPermutation {
  std::vector<std::vector<int>> perms;   // per hidden layer: slot i takes original unit perms[h][i]
};

namespace detail {

inline double path_loss(const ModelSpec& spec, const ParamVector& params, const Dataset& ds,
                        BarrierMetric metric) {
  return metric == BarrierMetric::kCrossEntropy ? loss(spec, params, ds, 0.0)
                                                : 1.0 - accuracy(spec, params, ds);
}

}  // namespace detail

// Loss profile along the linear path alpha * w + (1 - alpha) * w_prime,
// with barrier = max_alpha [ L(path) - alpha L(w) - (1-alpha) L(w_prime) ].
// Endpoints are evaluated on the exact parameter vectors so the deviation
// there is zero and the barrier is never negative.
inline BarrierProfile barrier(const ModelSpec& spec, const ParamVector& w,
                              const ParamVector& w_prime, const Dataset& ds, int grid_n = 24,
                              BarrierMetric metric = BarrierMetric::kCrossEntropy) {
  if (w.size() != w_prime.size() || w.size() != param_count(spec)) {
    throw std::invalid_argument("barrier: parameter size mismatch");
  }
  if (grid_n < 2) throw std::invalid_argument("barrier: grid_n must be >= 2");

  BarrierProfile prof;
  prof.metric = metric;
  prof.loss_w = detail::path_loss(spec, w, ds, metric);
  prof.loss_w_prime = detail::path_loss(spec, w_prime, ds, metric);
  prof.alphas.reserve(grid_n + 1);
  prof.losses.reserve(grid_n + 1);

  ParamVector mix(w.size());
  double max_dev = 0.0;
  for (int i = 0; i <= grid_n; ++i) {
    const double alpha = static_cast<double>(i) / grid_n;
    double value;
    if (i == 0) {
      value = prof.loss_w_prime;
    } else if (i == grid_n) {
      value = prof.loss_w;
    } else {
      for (std::size_t j = 0; j < w.size(); ++j) {
        mix[j] = w_prime[j] + alpha * (w[j] - w_prime[j]);
      }
      value = detail::path_loss(spec, mix, ds, metric);
    }
    prof.alphas.push_back(alpha);
    prof.losses.push_back(value);
    const double dev = value - (prof.loss_w_prime + alpha * (prof.loss_w - prof.loss_w_prime));
    max_dev = std::max(max_dev, dev);
  }
  prof.barrier = max_dev;
  return prof;
}

// Optimal square assignment via shortest augmenting paths (Jonker-Volgenant
// style, O(k^3)). cost is k x k row-major; returns row -> column. Among
// cost-equal solutions, pairwise swaps settle on the lexicographically
// smaller assignment vector.
inline std::vector<int> solve_assignment(const std::vector<double>& cost, int k, bool maximize) {
  if (k < 1 || cost.size() != static_cast<std::size_t>(k) * k) {
    throw std::invalid_argument("assignment: cost must be k x k");
  }
  for (double c : cost) {
    if (!std::isfinite(c)) throw std::invalid_argument("assignment: non-finite cost");
  }
  std::vector<double> a(cost);
  if (maximize) {
    for (double& c : a) c = -c;
  }

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(k + 1, 0.0), v(k + 1, 0.0), minv(k + 1);
  std::vector<int> p(k + 1, 0), way(k + 1, 0);
  for (int i = 1; i <= k; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::vector<bool> used(k + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= k; ++j) {
        if (used[j]) continue;
        const double cur = a[static_cast<std::size_t>(i0 - 1) * k + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= k; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_to_col(k, -1);
  for (int j = 1; j <= k; ++j) row_to_col[p[j] - 1] = j - 1;

  // deterministic tie resolution: cost-neutral pair swaps toward the
  // lexicographically smallest assignment vector
  bool changed = true;
  while (changed) {
    changed = false;
    for (int i = 0; i < k; ++i) {
      for (int j = i + 1; j < k; ++j) {
        if (row_to_col[j] >= row_to_col[i]) continue;
        const double before = a[static_cast<std::size_t>(i) * k + row_to_col[i]] +
                              a[static_cast<std::size_t>(j) * k + row_to_col[j]];
        const double after = a[static_cast<std::size_t>(i) * k + row_to_col[j]] +
                             a[static_cast<std::size_t>(j) * k + row_to_col[i]];
        if (after == before) {
          std::swap(row_to_col[i], row_to_col[j]);
          changed = true;
        }
      }
    }
  }
  return row_to_col;
}

namespace detail {

struct LayerRef {
  const double* w;
  const double* b;
  int in;
  int out;
};

inline LayerRef layer_ref(const ModelSpec& spec, const ParamVector& params, int l) {
  const std::size_t off = layer_offset(spec, l);
  const int in = spec.layer_widths[l];
  const int out = spec.layer_widths[l + 1];
  return {params.data() + off, params.data() + off + static_cast<std::size_t>(in) * out, in, out};
}

// Applies hidden-unit permutations to a parameter vector; perms[h][i] names
// the original unit placed into slot i of hidden layer h. Boundary layers
// (input, classes) are never permuted.
inline ParamVector apply_permutation(const ModelSpec& spec, const ParamVector& params,
                                     const LayerPermutation& lp) {
  const int layers = layer_count(spec);
  ParamVector out(params.size());
  for (int l = 0; l < layers; ++l) {
    const LayerRef src = layer_ref(spec, params, l);
    const std::size_t off = layer_offset(spec, l);
    double* w_dst = out.data() + off;
    double* b_dst = out.data() + off + static_cast<std::size_t>(src.in) * src.out;
    const std::vector<int>* out_perm = (l < layers - 1) ? &lp.perms[l] : nullptr;
    const std::vector<int>* in_perm = (l > 0) ? &lp.perms[l - 1] : nullptr;
    for (int o = 0; o < src.out; ++o) {
      const int src_o = out_perm ? (*out_perm)[o] : o;
      const double* w_row = src.w + static_cast<std::size_t>(src_o) * src.in;
      double* dst_row = w_dst + static_cast<std::size_t>(o) * src.in;
      for (int c = 0; c < src.in; ++c) {
        dst_row[c] = w_row[in_perm ? (*in_perm)[c] : c];
      }
      b_dst[o] = src.b[src_o];
    }
  }
  return out;
}

inline double matching_objective(const ParamVector& ref, const ParamVector& permuted) {
  double total = 0.0;
  for (std::size_t j = 0; j < ref.size(); ++j) total += ref[j] * permuted[j];
  return total;
}

}  // namespace detail

struct AlignResult {
  ParamVector params;                      // w with hidden units re-ordered to match w_ref
  LayerPermutation permutation;
  std::vector<double> objective_per_pass;  // matching objective after each coordinate pass
};

// Weight matching: coordinate descent over hidden layers, each step solving
// the linear assignment that maximizes the Frobenius inner product between
// the re-ordered incoming + outgoing weights (and biases) of w and those of
// w_ref. Passes repeat until no layer changes, capped at 100.
inline AlignResult align_permutations(const ModelSpec& spec, const ParamVector& w_ref,
                                      const ParamVector& w) {
  if (w_ref.size() != param_count(spec) || w.size() != param_count(spec)) {
    throw std::invalid_argument("align: parameter size mismatch");
  }
  const int layers = layer_count(spec);
  const int hidden = layers - 1;

  AlignResult result;
  result.permutation.perms.resize(std::max(hidden, 0));
  for (int h = 0; h < hidden; ++h) {
    result.permutation.perms[h].resize(spec.layer_widths[h + 1]);
    for (int i = 0; i < spec.layer_widths[h + 1]; ++i) result.permutation.perms[h][i] = i;
  }
  if (hidden <= 0) {
    result.params = w;
    return result;
  }

  auto& perms = result.permutation.perms;
  std::vector<double> cost;
  for (int pass = 0; pass < 100; ++pass) {
    bool changed = false;
    for (int h = 0; h < hidden; ++h) {
      const int k = spec.layer_widths[h + 1];
      const detail::LayerRef ref_in = detail::layer_ref(spec, w_ref, h);
      const detail::LayerRef cur_in = detail::layer_ref(spec, w, h);
      const detail::LayerRef ref_out = detail::layer_ref(spec, w_ref, h + 1);
      const detail::LayerRef cur_out = detail::layer_ref(spec, w, h + 1);
      const std::vector<int>* in_perm = (h > 0) ? &perms[h - 1] : nullptr;
      const std::vector<int>* out_perm = (h + 1 < hidden) ? &perms[h + 1] : nullptr;

      cost.assign(static_cast<std::size_t>(k) * k, 0.0);
      for (int i = 0; i < k; ++i) {
        const double* ref_row = ref_in.w + static_cast<std::size_t>(i) * ref_in.in;
        for (int j = 0; j < k; ++j) {
          const double* cur_row = cur_in.w + static_cast<std::size_t>(j) * cur_in.in;
          double c = ref_in.b[i] * cur_in.b[j];
          for (int s = 0; s < ref_in.in; ++s) {
            c += ref_row[s] * cur_row[in_perm ? (*in_perm)[s] : s];
          }
          for (int r = 0; r < ref_out.out; ++r) {
            const int cur_r = out_perm ? (*out_perm)[r] : r;
            c += ref_out.w[static_cast<std::size_t>(r) * ref_out.in + i] *
                 cur_out.w[static_cast<std::size_t>(cur_r) * cur_out.in + j];
          }
          cost[static_cast<std::size_t>(i) * k + j] = c;
        }
      }
      std::vector<int> assignment = solve_assignment(cost, k, /*maximize=*/true);
      if (assignment != perms[h]) {
        perms[h] = std::move(assignment);
        changed = true;
      }
    }
    result.objective_per_pass.push_back(detail::matching_objective(
        w_ref, detail::apply_permutation(spec, w, result.permutation)));
    if (!changed) break;
  }
  result.params = detail::apply_permutation(spec, w, result.permutation);
  return result;
}

}  // namespace ulb
