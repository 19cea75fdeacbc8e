#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ulb/data.hpp"
#include "ulb/model.hpp"
#include "ulb/rng.hpp"

namespace ulb {

struct AccuracyMetrics {
  double ua = 0.0;       // 1 - forget accuracy
  double ra = 0.0;       // retain accuracy
  double utility = 0.0;  // test accuracy
};

inline AccuracyMetrics accuracy_metrics(const ModelSpec& spec, const ParamVector& params,
                                        const Dataset& forget, const Dataset& retain,
                                        const Dataset& test) {
  AccuracyMetrics m;
  m.ua = 1.0 - accuracy(spec, params, forget);
  m.ra = accuracy(spec, params, retain);
  m.utility = accuracy(spec, params, test);
  return m;
}

struct MiaResult {
  double score = 0.0;
  bool degenerate = false;
};

namespace detail {

inline std::vector<double> true_class_confidences(const ModelSpec& spec, const ParamVector& params,
                                                  const Dataset& ds) {
  std::vector<double> out(ds.n);
  for (int i = 0; i < ds.n; ++i) out[i] = confidence(spec, params, ds.row(i), ds.labels[i]);
  return out;
}

}  // namespace detail

// Confidence-thresholding membership attack: a one-feature logistic
// regression (feature = true-class confidence, label 1 = member) fit by
// full-batch gradient descent, then applied to the forget set. The returned
// score is the fraction of forget examples classified as non-members.
// Classes are balanced by seeded subsampling of the larger side.
inline MiaResult mia_score(const ModelSpec& spec, const ParamVector& params,
                           const Dataset& members, const Dataset& nonmembers,
                           const Dataset& forget, std::uint64_t seed = 0) {
  if (members.n == 0 || nonmembers.n == 0) {
    throw std::invalid_argument("mia: member and non-member samples must be non-empty");
  }
  std::vector<double> conf_m = detail::true_class_confidences(spec, params, members);
  std::vector<double> conf_n = detail::true_class_confidences(spec, params, nonmembers);

  Rng rng(mix_seed(seed, 0x6d696173));
  const std::size_t keep = std::min(conf_m.size(), conf_n.size());
  auto subsample = [&](std::vector<double>& v) {
    if (v.size() == keep) return;
    rng.shuffle(v);
    v.resize(keep);
  };
  subsample(conf_m);
  subsample(conf_n);

  std::vector<double> x;
  std::vector<double> t;
  x.reserve(2 * keep);
  for (double c : conf_m) {
    x.push_back(c);
    t.push_back(1.0);
  }
  for (double c : conf_n) {
    x.push_back(c);
    t.push_back(0.0);
  }

  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  if (*mx - *mn == 0.0) return {0.5, true};

  // standardize the feature so a fixed step size behaves
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= x.size();
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= x.size();
  const double scale = 1.0 / std::sqrt(var);
  for (double& v : x) v = (v - mean) * scale;

  double a = 0.0, b = 0.0;
  const double lr = 2.0;
  const double inv_n = 1.0 / static_cast<double>(x.size());
  for (int it = 0; it < 10000; ++it) {
    double ga = 0.0, gb = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-(a * x[i] + b)));
      const double err = p - t[i];
      ga += err * x[i];
      gb += err;
    }
    ga *= inv_n;
    gb *= inv_n;
    a -= lr * ga;
    b -= lr * gb;
    if (std::max(std::abs(ga), std::abs(gb)) <= 1e-8) break;
  }

  const std::vector<double> conf_f = detail::true_class_confidences(spec, params, forget);
  int as_test = 0;
  for (double c : conf_f) {
    const double z = a * (c - mean) * scale + b;
    if (1.0 / (1.0 + std::exp(-z)) < 0.5) ++as_test;
  }
  return {static_cast<double>(as_test) / forget.n, false};
}

// The Gaussian noise added to each poisoned forget example, kept so the
// unlearning score can be recomputed later.
struct PoisonRecord {
  std::vector<std::int64_t> ids;
  std::vector<double> noise;   // |ids| x d row-major
  int d = 0;
  double sigma_sq = 0.0;

  const double* row(std::size_t i) const { return noise.data() + i * d; }
};

inline std::pair<Dataset, PoisonRecord> gus_poison(const Dataset& ds,
                                                   const std::vector<std::int64_t>& forget_ids,
                                                   double sigma_sq, std::uint64_t seed) {
  if (sigma_sq < 0.0) throw std::invalid_argument("gus: sigma_sq must be >= 0");
  std::unordered_map<std::int64_t, int> row_of;
  row_of.reserve(ds.n);
  for (int i = 0; i < ds.n; ++i) row_of[ds.ids[i]] = i;

  PoisonRecord record;
  record.d = ds.d;
  record.sigma_sq = sigma_sq;
  record.ids = forget_ids;
  record.noise.resize(forget_ids.size() * static_cast<std::size_t>(ds.d));

  Dataset poisoned = ds;
  Rng rng(mix_seed(seed, 0x677573));
  const double sigma = std::sqrt(sigma_sq);
  for (std::size_t k = 0; k < forget_ids.size(); ++k) {
    auto it = row_of.find(forget_ids[k]);
    if (it == row_of.end()) throw std::invalid_argument("gus: unknown forget id");
    double* eps = record.noise.data() + k * ds.d;
    double* x = poisoned.features.data() + static_cast<std::size_t>(it->second) * ds.d;
    for (int j = 0; j < ds.d; ++j) {
      eps[j] = sigma * rng.normal();
      x[j] += eps[j];
    }
  }
  return {std::move(poisoned), std::move(record)};
}

// Mean over the forget set of <grad_x loss(w, x_clean), eps> / |grad_x loss|.
// Near-zero gradients (norm < 1e-12) contribute 0.
inline double gus_score(const ModelSpec& spec, const ParamVector& params,
                        const Dataset& clean_forget, const PoisonRecord& record) {
  if (clean_forget.d != record.d) throw std::invalid_argument("gus: dimension mismatch");
  std::unordered_map<std::int64_t, std::size_t> noise_row;
  noise_row.reserve(record.ids.size());
  for (std::size_t k = 0; k < record.ids.size(); ++k) noise_row[record.ids[k]] = k;

  double total = 0.0;
  for (int i = 0; i < clean_forget.n; ++i) {
    auto it = noise_row.find(clean_forget.ids[i]);
    if (it == noise_row.end()) {
      throw std::invalid_argument("gus: record does not cover every forget id");
    }
    const std::vector<double> g = grad_input(spec, params, clean_forget.row(i),
                                             clean_forget.labels[i]);
    double dot = 0.0, norm_sq = 0.0;
    const double* eps = record.row(it->second);
    for (int j = 0; j < clean_forget.d; ++j) {
      dot += g[j] * eps[j];
      norm_sq += g[j] * g[j];
    }
    const double norm = std::sqrt(norm_sq);
    if (norm >= 1e-12) total += dot / norm;
  }
  return total / clean_forget.n;
}

}  // namespace ulb
