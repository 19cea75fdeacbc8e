#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ulb/model.hpp"
#include "ulb/trainer.hpp"

namespace ulb {

// A named per-example score. higher_is_harder records the orientation so
// confidence-style metrics (low = hard) sort the same way as the rest.
struct ScoreVector {
  std::vector<std::int64_t> ids;
  std::vector<double> scores;
  std::string metric;
  bool higher_is_harder = true;
};

struct ForgetSplit {
  std::vector<std::int64_t> forget_ids;
  std::vector<std::int64_t> retain_ids;
  std::string label;
  double mean_score = 0.0;
};

enum class GradNormProxy { kMid, kEnd, kAverage };

inline ScoreVector proxy_grad_norm(const Trajectory& traj, GradNormProxy which) {
  const int N = traj.checkpoint_count();
  if (N < 1) throw std::invalid_argument("proxy: trajectory has no checkpoints");
  ScoreVector sv;
  sv.ids = traj.example_ids;
  sv.higher_is_harder = true;
  sv.scores.resize(traj.n_examples);
  switch (which) {
    case GradNormProxy::kMid: {
      const int mid = N / 2;
      for (int e = 0; e < traj.n_examples; ++e) sv.scores[e] = traj.grad_norm(mid, e);
      sv.metric = "mid_grad_norm";
      break;
    }
    case GradNormProxy::kEnd: {
      for (int e = 0; e < traj.n_examples; ++e) sv.scores[e] = traj.grad_norm(N - 1, e);
      sv.metric = "end_grad_norm";
      break;
    }
    case GradNormProxy::kAverage: {
      for (int e = 0; e < traj.n_examples; ++e) {
        double sum = 0.0;
        for (int i = 0; i < N; ++i) sum += traj.grad_norm(i, e);
        sv.scores[e] = sum / N;
      }
      sv.metric = "avg_grad_norm";
      break;
    }
  }
  return sv;
}

// Trajectory-averaged true-class confidence; low confidence marks hard data.
inline ScoreVector proxy_c(const Trajectory& traj) {
  const int N = traj.checkpoint_count();
  if (N < 1 || traj.confidence_log.empty()) {
    throw std::invalid_argument("proxy_c: trajectory has no confidence log");
  }
  ScoreVector sv;
  sv.ids = traj.example_ids;
  sv.metric = "c_proxy";
  sv.higher_is_harder = false;
  sv.scores.resize(traj.n_examples);
  for (int e = 0; e < traj.n_examples; ++e) {
    double sum = 0.0;
    for (int i = 0; i < N; ++i) sum += traj.confidence_at(i, e);
    sv.scores[e] = sum / N;
  }
  return sv;
}

// |softmax(logits) - onehot(y)|_2 at a single checkpoint.
inline ScoreVector proxy_el2n(const ModelSpec& spec, const ParamVector& mid_checkpoint_params,
                              const Dataset& ds) {
  const std::vector<double> probs = forward(spec, mid_checkpoint_params, ds);
  const int C = class_count(spec);
  ScoreVector sv;
  sv.ids = ds.ids;
  sv.metric = "el2n";
  sv.higher_is_harder = true;
  sv.scores.resize(ds.n);
  for (int e = 0; e < ds.n; ++e) {
    const double* p = probs.data() + static_cast<std::size_t>(e) * C;
    double sq = 0.0;
    for (int c = 0; c < C; ++c) {
      const double diff = p[c] - (c == ds.labels[e] ? 1.0 : 0.0);
      sq += diff * diff;
    }
    sv.scores[e] = std::sqrt(sq);
  }
  return sv;
}

namespace detail {

// Positions sorted easy -> hard under the score's orientation, ties by id.
inline std::vector<int> difficulty_order(const ScoreVector& sv) {
  std::vector<int> order(sv.ids.size());
  std::iota(order.begin(), order.end(), 0);
  const double sign = sv.higher_is_harder ? 1.0 : -1.0;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ka = sign * sv.scores[a];
    const double kb = sign * sv.scores[b];
    if (ka != kb) return ka < kb;
    return sv.ids[a] < sv.ids[b];
  });
  return order;
}

inline ForgetSplit make_split(const ScoreVector& sv, const std::vector<int>& order, int begin,
                              int end, std::string label) {
  ForgetSplit split;
  split.label = std::move(label);
  std::vector<bool> in_forget(sv.ids.size(), false);
  double sum = 0.0;
  for (int i = begin; i < end; ++i) {
    in_forget[order[i]] = true;
    sum += sv.scores[order[i]];
  }
  split.mean_score = sum / static_cast<double>(end - begin);
  for (std::size_t e = 0; e < sv.ids.size(); ++e) {
    (in_forget[e] ? split.forget_ids : split.retain_ids).push_back(sv.ids[e]);
  }
  return split;
}

}  // namespace detail

// Five difficulty strata: the easiest block, windows centered on the three
// quartile positions, and the hardest block. Windows are half-open index
// ranges over the easy->hard ordering.
inline std::vector<ForgetSplit> stratified_forget_sets(const ScoreVector& sv, int set_size) {
  const int n = static_cast<int>(sv.ids.size());
  if (set_size < 2 || set_size % 2 != 0) {
    throw std::invalid_argument("stratify: set_size must be even and >= 2");
  }
  if (5 * set_size > n) throw std::invalid_argument("stratify: 5 * set_size exceeds n");

  const int half = set_size / 2;
  const std::vector<std::pair<int, std::string>> anchors = {
      {half, "bottom"}, {n / 4, "q1"}, {n / 2, "q2"}, {3 * n / 4, "q3"}, {n - half, "top"}};
  std::vector<std::pair<int, int>> windows;
  for (const auto& [center, label] : anchors) {
    windows.emplace_back(center - half, center + half);
  }
  windows.front() = {0, set_size};
  windows.back() = {n - set_size, n};
  for (std::size_t i = 1; i < windows.size(); ++i) {
    if (windows[i].first < windows[i - 1].second) {
      throw std::invalid_argument("stratify: windows overlap; n too small for set_size");
    }
  }

  const std::vector<int> order = detail::difficulty_order(sv);
  std::vector<ForgetSplit> splits;
  splits.reserve(5);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    splits.push_back(
        detail::make_split(sv, order, windows[i].first, windows[i].second, anchors[i].second));
  }
  return splits;
}

// The k hardest examples under the metric's orientation, ties broken by id.
inline ForgetSplit top_k_forget_set(const ScoreVector& sv, int k) {
  const int n = static_cast<int>(sv.ids.size());
  if (k < 0 || k > n) throw std::invalid_argument("top_k: k out of range");
  const std::vector<int> order = detail::difficulty_order(sv);
  return detail::make_split(sv, order, n - k, n, "top-k:" + sv.metric);
}

// Tie-averaged ranks (1-based).
inline std::vector<double> ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2) throw std::invalid_argument("pearson: need matching n >= 2");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw std::invalid_argument("correlation undefined: zero variance");
  }
  return sxy / std::sqrt(sxx * syy);
}

// Spearman rank correlation: Pearson on tie-averaged ranks.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(ranks(x), ranks(y));
}

// ScoreVector overload; aligns the two score lists by id first.
inline double spearman(const ScoreVector& x, const ScoreVector& y) {
  if (x.ids.size() != y.ids.size()) throw std::invalid_argument("spearman: id sets differ");
  std::unordered_map<std::int64_t, double> by_id;
  by_id.reserve(y.ids.size());
  for (std::size_t i = 0; i < y.ids.size(); ++i) by_id[y.ids[i]] = y.scores[i];
  std::vector<double> yy(x.ids.size());
  for (std::size_t i = 0; i < x.ids.size(); ++i) {
    auto it = by_id.find(x.ids[i]);
    if (it == by_id.end()) throw std::invalid_argument("spearman: id sets differ");
    yy[i] = it->second;
  }
  return spearman(x.scores, yy);
}

// Equal-count bins by x order; returns (mean x, mean y) per bin.
inline std::vector<std::pair<double, double>> bin_means(const std::vector<double>& x,
                                                        const std::vector<double>& y, int n_bins) {
  const int n = static_cast<int>(x.size());
  if (x.size() != y.size()) throw std::invalid_argument("bin_means: size mismatch");
  if (n_bins < 1 || n_bins > n) throw std::invalid_argument("bin_means: bad bin count");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return x[a] < x[b]; });
  std::vector<std::pair<double, double>> out;
  out.reserve(n_bins);
  for (int b = 0; b < n_bins; ++b) {
    const int lo = static_cast<int>(static_cast<long>(b) * n / n_bins);
    const int hi = static_cast<int>(static_cast<long>(b + 1) * n / n_bins);
    double sx = 0.0, sy = 0.0;
    for (int i = lo; i < hi; ++i) {
      sx += x[order[i]];
      sy += y[order[i]];
    }
    out.emplace_back(sx / (hi - lo), sy / (hi - lo));
  }
  return out;
}

}  // namespace ulb
