#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ulb/model.hpp"
#include "ulb/rng.hpp"
#include "ulb/trainer.hpp"

namespace ulb {

// Parameters of the per-instance privacy loss. `q` is the per-step sampling
// probability of a data point (batch size over dataset size); `p` is the free
// composition parameter, with p <= 0 meaning the default 3 * total_steps.
struct AccountantConfig {
  double alpha = 2.0;       // Renyi order, > 1
  double sigma = 0.1;       // gradient noise scale (imputed for plain SGD runs)
  double q = 0.0;
  long p = 0;
  long total_steps = 0;

  long resolved_p() const { return p > 0 ? p : 3 * total_steps; }
};

inline void validate(const AccountantConfig& cfg) {
  if (!(cfg.alpha > 1.0)) throw std::invalid_argument("accountant: alpha must be > 1");
  if (!(cfg.sigma > 0.0)) throw std::invalid_argument("accountant: sigma must be positive");
  if (!(cfg.q > 0.0 && cfg.q <= 1.0)) throw std::invalid_argument("accountant: q must be in (0,1]");
  if (cfg.resolved_p() < 2) throw std::invalid_argument("accountant: p must be >= 2");
}

struct PrivacyLossTable {
  std::vector<std::int64_t> ids;
  std::vector<double> losses;
  AccountantConfig config;
  std::vector<long> checkpoint_steps;
};

// User-supplied constants for the unlearning-time bound. The stationarity
// gaps eps_* and the contraction constant are not estimable from data and
// must be provided by the caller.
struct BoundInputs {
  double eps_prime_4a = 0.0;    // bound on the divergence between the two trained laws
  double eps_4am1 = 0.0;        // distance to stationarity at order 4*alpha - 1
  double eps_2am1 = 0.0;        // distance to stationarity at order 2*alpha - 1
  double contraction_c = 1.0;   // exponential contraction rate constant
  double alpha = 2.0;
  double k = 0.0;               // unlearning steps
};

// One application of the order recursion: o_p(a) = p/(p-1) * a - 1/p.
inline double op_alpha(long p, double alpha) {
  const double pd = static_cast<double>(p);
  return pd / (pd - 1.0) * alpha - 1.0 / pd;
}

// t-fold composition of o_p, computed by iteration.
inline double op_iter(long p, double alpha, long t) {
  double a = alpha;
  for (long i = 0; i < t; ++i) a = op_alpha(p, a);
  return a;
}

// Closed form of the same composition: r^t * a - (p-1)(r^t - 1)/p with
// r = p/(p-1). Used as the cross-check for op_iter.
inline double op_iter_closed(long p, double alpha, long t) {
  const double pd = static_cast<double>(p);
  const double rt = std::exp(static_cast<double>(t) * (std::log(pd) - std::log(pd - 1.0)));
  return rt * alpha - (pd - 1.0) * (rt - 1.0) / pd;
}

// C_{t,alpha} = ((p-1)/p)^(t+1) / (alpha-1), evaluated in the log domain so
// large t does not underflow prematurely.
inline double coeff_c(long t, double alpha, long p) {
  const double pd = static_cast<double>(p);
  const double log_ratio = std::log(pd - 1.0) - std::log(pd);
  return std::exp(static_cast<double>(t + 1) * log_ratio) / (alpha - 1.0);
}

namespace detail {

inline double log_binom(long m, long k) {
  return std::lgamma(static_cast<double>(m) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(m - k) + 1.0);
}

inline double logsumexp(const std::vector<double>& terms) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double t : terms) mx = std::max(mx, t);
  if (!std::isfinite(mx)) return mx;  // all -inf
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - mx);
  return mx + std::log(sum);
}

}  // namespace detail

// The binomial moment sum at an explicit integer order m:
//   p * ln sum_{k=0..m} C(m,k) q^k (1-q)^(m-k) exp(g^2 (k^2-k) / (2 sigma^2)).
// Every exponent is >= 0, so the value is >= 0; for g = 0 or m <= 1 the sum
// collapses to 1 and the result is exactly 0.
inline double ln_f_binomial(long m, double q, double g, double sigma, long p) {
  if (m < 0) throw std::invalid_argument("ln_f: negative binomial order");
  if (g == 0.0 || m <= 1) return 0.0;
  const double gsq = g * g / (2.0 * sigma * sigma);
  std::vector<double> terms(m + 1);
  const double log_q = std::log(q);
  const double log_1mq = (q < 1.0) ? std::log1p(-q) : -std::numeric_limits<double>::infinity();
  for (long k = 0; k <= m; ++k) {
    const double tail = (m == k) ? 0.0 : static_cast<double>(m - k) * log_1mq;
    terms[k] = detail::log_binom(m, k) + static_cast<double>(k) * log_q + tail +
               gsq * static_cast<double>(k * k - k);
  }
  return static_cast<double>(p) * detail::logsumexp(terms);
}

// ln f_{t,alpha}(g) with the binomial order m = ceil(o_p^t(alpha)); rounding
// up is the conservative choice for non-integer orders.
inline double ln_f(long t, double alpha, double g, const AccountantConfig& cfg) {
  validate(cfg);
  if (g < 0.0) throw std::invalid_argument("ln_f: gradient norm must be >= 0");
  const long p = cfg.resolved_p();
  const long m = static_cast<long>(std::ceil(op_iter(p, alpha, t)));
  return ln_f_binomial(m, cfg.q, g, cfg.sigma, p);
}

// Right-hand-rule sum: sum_i values[i] * (steps[i] - steps[i-1]), steps[-1]=0.
inline double integrate_right_hand(const std::vector<double>& values,
                                   const std::vector<long>& steps) {
  if (values.size() != steps.size()) {
    throw std::invalid_argument("right-hand rule: length mismatch");
  }
  double total = 0.0;
  long prev = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (steps[i] <= prev) throw std::invalid_argument("right-hand rule: steps must increase");
    total += values[i] * static_cast<double>(steps[i] - prev);
    prev = steps[i];
  }
  return total;
}

// Single-trajectory estimate of the per-instance privacy loss P(x, alpha):
// each checkpoint contributes C_{s_i,alpha} * ln f_{s_i,alpha}(g_i), held
// constant over the preceding checkpoint interval.
inline double per_instance_loss(const std::vector<double>& grad_norm_series,
                                const std::vector<long>& checkpoint_steps,
                                const AccountantConfig& cfg) {
  validate(cfg);
  if (grad_norm_series.size() != checkpoint_steps.size()) {
    throw std::invalid_argument("per_instance_loss: series/steps length mismatch");
  }
  const long p = cfg.resolved_p();
  std::vector<double> values(grad_norm_series.size());
  for (std::size_t i = 0; i < grad_norm_series.size(); ++i) {
    const long s = checkpoint_steps[i];
    values[i] = coeff_c(s, cfg.alpha, p) * ln_f(s, cfg.alpha, grad_norm_series[i], cfg);
  }
  return integrate_right_hand(values, checkpoint_steps);
}

// Scores every example logged in the trajectory.
inline PrivacyLossTable score_trajectory(const Trajectory& traj, const AccountantConfig& cfg) {
  validate(cfg);
  const int N = traj.checkpoint_count();
  const int n = traj.n_examples;
  const long p = cfg.resolved_p();

  // the binomial order and coefficient depend only on the checkpoint step
  std::vector<long> orders(N);
  std::vector<double> coeffs(N);
  for (int i = 0; i < N; ++i) {
    const long s = traj.checkpoint_steps[i];
    orders[i] = static_cast<long>(std::ceil(op_iter(p, cfg.alpha, s)));
    coeffs[i] = coeff_c(s, cfg.alpha, p);
  }

  PrivacyLossTable table;
  table.ids = traj.example_ids;
  table.config = cfg;
  table.checkpoint_steps = traj.checkpoint_steps;
  table.losses.resize(n);
  std::vector<double> values(N);
  for (int e = 0; e < n; ++e) {
    for (int i = 0; i < N; ++i) {
      values[i] = coeffs[i] * ln_f_binomial(orders[i], cfg.q, traj.grad_norm(i, e), cfg.sigma, p);
    }
    table.losses[e] = integrate_right_hand(values, traj.checkpoint_steps);
  }
  return table;
}

// Delta_alpha of the group-privacy theorem, exactly as written:
//   sum_i |U_i|^2 - (alpha-1) |V|^2 - |sum_i U_i - (alpha-1) V|^2.
inline double group_delta(const std::vector<ParamVector>& sampled_batch_grads,
                          const ParamVector& retain_batch_grad, int alpha_int) {
  if (alpha_int < 1) throw std::invalid_argument("group_delta: alpha must be >= 1");
  if (static_cast<int>(sampled_batch_grads.size()) != alpha_int) {
    throw std::invalid_argument("group_delta: need exactly alpha sampled batch gradients");
  }
  const std::size_t dim = retain_batch_grad.size();
  double sum_sq = 0.0;
  ParamVector combo(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    combo[j] = -(static_cast<double>(alpha_int) - 1.0) * retain_batch_grad[j];
  }
  for (const ParamVector& u : sampled_batch_grads) {
    if (u.size() != dim) throw std::invalid_argument("group_delta: dimension mismatch");
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      sq += u[j] * u[j];
      combo[j] += u[j];
    }
    sum_sq += sq;
  }
  double v_sq = 0.0;
  for (double v : retain_batch_grad) v_sq += v * v;
  double combo_sq = 0.0;
  for (double c : combo) combo_sq += c * c;
  return sum_sq - (static_cast<double>(alpha_int) - 1.0) * v_sq - combo_sq;
}

struct GroupEstimate {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> samples;   // one full right-hand-rule estimate per repeat
};

// Monte-Carlo estimate of the group privacy bound for forgetting
// full \ retain. Per checkpoint, the inner expectation is sampled with
// `n_inner` bundles of ceil(o_p^{s_i}(alpha)) minibatches from the full set
// against one minibatch from the retain set; the whole trajectory sum is
// repeated `n_outer` times to report a mean and standard deviation.
inline GroupEstimate group_loss_estimate(const Trajectory& traj, const ModelSpec& spec,
                                         const Dataset& full, const Dataset& retain,
                                         const AccountantConfig& cfg, int n_outer, int n_inner,
                                         std::uint64_t seed) {
  validate(cfg);
  if (retain.n == 0) throw std::invalid_argument("group_loss_estimate: retain set empty");
  if (n_outer < 1 || n_inner < 1) {
    throw std::invalid_argument("group_loss_estimate: sample counts must be >= 1");
  }
  const long p = cfg.resolved_p();
  const int N = traj.checkpoint_count();
  const int batch = std::min(traj.batch_size, retain.n);
  const double inv_two_sigma_sq = 1.0 / (2.0 * cfg.sigma * cfg.sigma);

  Rng rng(seed);
  GroupEstimate est;
  est.samples.resize(n_outer);

  for (int rep = 0; rep < n_outer; ++rep) {
    std::vector<double> values(N);
    for (int i = 0; i < N; ++i) {
      const long s = traj.checkpoint_steps[i];
      const int m = static_cast<int>(std::ceil(op_iter(p, cfg.alpha, s)));
      const ParamVector& w = traj.checkpoints[i];
      std::vector<int> retain_idx = rng.sample_without_replacement(retain.n, batch);
      const ParamVector v = grad_params(spec, w, retain, retain_idx);
      std::vector<double> inner_terms(n_inner);
      for (int j = 0; j < n_inner; ++j) {
        std::vector<ParamVector> bundle;
        bundle.reserve(m);
        for (int l = 0; l < m; ++l) {
          std::vector<int> idx =
              rng.sample_without_replacement(full.n, std::min(traj.batch_size, full.n));
          bundle.push_back(grad_params(spec, w, full, idx));
        }
        inner_terms[j] = -group_delta(bundle, v, m) * inv_two_sigma_sq;
      }
      const double ln_g = static_cast<double>(p) *
                          (detail::logsumexp(inner_terms) - std::log(static_cast<double>(n_inner)));
      values[i] = coeff_c(s, cfg.alpha, p) * ln_g;
    }
    est.samples[rep] = integrate_right_hand(values, traj.checkpoint_steps);
  }

  double mean = 0.0;
  for (double s : est.samples) mean += s;
  mean /= n_outer;
  double var = 0.0;
  for (double s : est.samples) var += (s - mean) * (s - mean);
  est.mean = mean;
  est.stddev = (n_outer > 1) ? std::sqrt(var / (n_outer - 1)) : 0.0;
  return est;
}

// eps* after k unlearning steps:
//   ((2a - 1/2)/(2a - 2) eps'_{4a} + (2a - 1)/(2a - 2) eps_{4a-1}) e^{-Ck/(2a)}
//   + eps_{2a-1}.
inline double eval_unlearning_bound(const BoundInputs& in) {
  if (!(in.alpha > 1.0)) throw std::invalid_argument("bound: alpha must be > 1");
  const double a = in.alpha;
  const double bracket = (2.0 * a - 0.5) / (2.0 * a - 2.0) * in.eps_prime_4a +
                         (2.0 * a - 1.0) / (2.0 * a - 2.0) * in.eps_4am1;
  return bracket * std::exp(-in.contraction_c * in.k / (2.0 * a)) + in.eps_2am1;
}

// Steps sufficient for (alpha, delta)-unlearning:
//   k = A ln((B P(x,4a) + C eps_{4a-1}) / (delta - eps_{2a-1})).
// The numerator hitting zero sends this to -inf; tabulators clamp and flag.
inline double min_steps_bound(double delta, double a_const, double b_const, double c_const,
                              double privacy_loss_4a, double eps_4am1, double eps_2am1) {
  if (!(delta > eps_2am1)) {
    throw std::invalid_argument("min_steps_bound: delta must exceed eps_{2a-1}");
  }
  const double numerator = b_const * privacy_loss_4a + c_const * eps_4am1;
  return a_const * std::log(numerator / (delta - eps_2am1));
}

inline std::vector<std::pair<double, double>> tabulate_epsilon_star(
    const BoundInputs& base, const std::vector<double>& k_values) {
  std::vector<std::pair<double, double>> table;
  table.reserve(k_values.size());
  BoundInputs in = base;
  for (double k : k_values) {
    in.k = k;
    table.emplace_back(k, eval_unlearning_bound(in));
  }
  return table;
}

struct MinStepsConstants {
  double a_const = 1.0;
  double b_const = 1.0;
  double c_const = 1.0;
  double eps_4am1 = 0.0;
  double eps_2am1 = 0.0;
};

struct MinStepsRow {
  double delta = 0.0;
  double privacy_loss = 0.0;
  double k = 0.0;
  bool infeasible = false;   // delta does not exceed the stationarity floor
  bool degenerate = false;   // formula gave a non-positive count; clamped to 0
};

// One row per (delta, privacy loss) pair; the bound is advisory, so negative
// step counts are clamped to 0 and flagged rather than rejected.
inline std::vector<MinStepsRow> tabulate_min_steps(const std::vector<double>& deltas,
                                                   const MinStepsConstants& c,
                                                   const std::vector<double>& privacy_losses) {
  std::vector<MinStepsRow> rows;
  rows.reserve(deltas.size() * privacy_losses.size());
  for (double delta : deltas) {
    for (double p4a : privacy_losses) {
      MinStepsRow row;
      row.delta = delta;
      row.privacy_loss = p4a;
      if (!(delta > c.eps_2am1)) {
        row.infeasible = true;
        row.k = std::numeric_limits<double>::quiet_NaN();
      } else {
        const double k =
            min_steps_bound(delta, c.a_const, c.b_const, c.c_const, p4a, c.eps_4am1, c.eps_2am1);
        if (!(k > 0.0)) {
          row.degenerate = true;
          row.k = 0.0;
        } else {
          row.k = k;
        }
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace ulb
