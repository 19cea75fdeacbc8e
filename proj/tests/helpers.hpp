#pragma once

#include <cmath>
#include <vector>

#include "ulb/data.hpp"
#include "ulb/model.hpp"
#include "ulb/rng.hpp"

namespace test_helpers {

// A labelled random dataset with no structure beyond seeded determinism.
inline ulb::Dataset random_dataset(int n, int d, int classes, std::uint64_t seed) {
  ulb::Rng rng(seed);
  ulb::Dataset ds;
  ds.n = n;
  ds.d = d;
  ds.features.resize(static_cast<std::size_t>(n) * d);
  for (double& v : ds.features) v = rng.normal();
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(rng.below(classes));
  ds.ids.resize(n);
  for (int i = 0; i < n; ++i) ds.ids[i] = i;
  return ds;
}

// Central finite differences of the mean cross-entropy w.r.t. parameters.
inline std::vector<double> fd_grad_params(const ulb::ModelSpec& spec, ulb::ParamVector params,
                                          const ulb::Dataset& ds, double h = 1e-5) {
  std::vector<double> grad(params.size());
  for (std::size_t j = 0; j < params.size(); ++j) {
    const double orig = params[j];
    params[j] = orig + h;
    const double up = ulb::loss(spec, params, ds, 0.0);
    params[j] = orig - h;
    const double down = ulb::loss(spec, params, ds, 0.0);
    params[j] = orig;
    grad[j] = (up - down) / (2.0 * h);
  }
  return grad;
}

// Central finite differences w.r.t. a single example's inputs.
inline std::vector<double> fd_grad_input(const ulb::ModelSpec& spec,
                                         const ulb::ParamVector& params, std::vector<double> x,
                                         int label, double h = 1e-5) {
  ulb::Dataset one;
  one.n = 1;
  one.d = static_cast<int>(x.size());
  one.labels = {label};
  one.ids = {0};
  std::vector<double> grad(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    x[j] = orig + h;
    one.features = x;
    const double up = ulb::loss(spec, params, one, 0.0);
    x[j] = orig - h;
    one.features = x;
    const double down = ulb::loss(spec, params, one, 0.0);
    x[j] = orig;
    grad[j] = (up - down) / (2.0 * h);
  }
  return grad;
}

inline double rel_vector_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff_sq = 0.0, ref_sq = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    diff_sq += (a[j] - b[j]) * (a[j] - b[j]);
    ref_sq += b[j] * b[j];
  }
  return std::sqrt(diff_sq) / std::max(std::sqrt(ref_sq), 1e-12);
}

// Smallest |pre-activation| across hidden units; finite differences are only
// meaningful for relu nets when this is comfortably above the FD step.
inline double min_abs_preactivation(const ulb::ModelSpec& spec, const ulb::ParamVector& params,
                                    const ulb::Dataset& ds) {
  double min_abs = 1e300;
  for (int e = 0; e < ds.n; ++e) {
    std::vector<double> act(ds.row(e), ds.row(e) + ds.d);
    for (int l = 0; l + 1 < static_cast<int>(spec.layer_widths.size()); ++l) {
      const int in = spec.layer_widths[l];
      const int out = spec.layer_widths[l + 1];
      const std::size_t off = ulb::layer_offset(spec, l);
      std::vector<double> next(out);
      for (int o = 0; o < out; ++o) {
        double z = params[off + static_cast<std::size_t>(in) * out + o];
        for (int i = 0; i < in; ++i) z += params[off + static_cast<std::size_t>(o) * in + i] * act[i];
        next[o] = z;
      }
      const bool last = l + 2 == static_cast<int>(spec.layer_widths.size());
      if (!last) {
        for (double z : next) min_abs = std::min(min_abs, std::abs(z));
        for (double& z : next) {
          z = (spec.activation == ulb::Activation::kRelu) ? std::max(z, 0.0) : std::tanh(z);
        }
      }
      act = std::move(next);
    }
  }
  return min_abs;
}

}  // namespace test_helpers
