#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ulb/model.hpp"
#include "ulb/rng.hpp"

namespace ulb {

struct TrainConfig {
  int epochs = 1;
  int batch_size = 64;
  double lr0 = 0.01;
  std::vector<int> milestones;        // epochs at which the lr decays
  double decay_factor = 0.1;
  double weight_decay = 0.0;
  double noise_sigma = 0.0;           // SGLD noise; 0 = plain SGD
  int checkpoint_count = 35;
  std::uint64_t seed = 0;
};

// One full training run: evenly spaced parameter checkpoints plus, at every
// checkpoint, the per-example gradient norms and true-class confidences over
// the whole dataset.
struct Trajectory {
  std::vector<long> checkpoint_steps;      // s_1 < ... < s_N, global step indices
  std::vector<ParamVector> checkpoints;
  std::vector<double> grad_norm_log;       // N x n row-major
  std::vector<double> confidence_log;      // N x n row-major
  ParamVector final_params;
  long total_steps = 0;
  int n_examples = 0;
  int batch_size = 0;
  std::vector<std::int64_t> example_ids;

  double grad_norm(int checkpoint, int example) const {
    return grad_norm_log[static_cast<std::size_t>(checkpoint) * n_examples + example];
  }
  double confidence_at(int checkpoint, int example) const {
    return confidence_log[static_cast<std::size_t>(checkpoint) * n_examples + example];
  }
  int checkpoint_count() const { return static_cast<int>(checkpoint_steps.size()); }
};

inline void validate(const TrainConfig& cfg, int n_examples) {
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (cfg.batch_size < 1 || cfg.batch_size > n_examples) {
    throw std::invalid_argument("train: batch_size must be in [1, n]");
  }
  if (cfg.lr0 <= 0.0) throw std::invalid_argument("train: lr0 must be positive");
  if (cfg.weight_decay < 0.0 || cfg.noise_sigma < 0.0) {
    throw std::invalid_argument("train: weight_decay and noise_sigma must be >= 0");
  }
  for (std::size_t i = 0; i < cfg.milestones.size(); ++i) {
    if (cfg.milestones[i] >= cfg.epochs) {
      throw std::invalid_argument("train: milestone past the last epoch");
    }
    if (i > 0 && cfg.milestones[i] <= cfg.milestones[i - 1]) {
      throw std::invalid_argument("train: milestones must be strictly increasing");
    }
  }
  const long steps_per_epoch = (n_examples + cfg.batch_size - 1) / cfg.batch_size;
  const long total = static_cast<long>(cfg.epochs) * steps_per_epoch;
  if (cfg.checkpoint_count < 1 || cfg.checkpoint_count > total) {
    throw std::invalid_argument("train: checkpoint_count must be in [1, total steps]");
  }
}

inline double lr_at(const TrainConfig& cfg, int epoch) {
  int decays = 0;
  for (int m : cfg.milestones) {
    if (m <= epoch) ++decays;
  }
  return cfg.lr0 * std::pow(cfg.decay_factor, decays);
}

// w <- w - lr * (mean_grad + weight_decay * w + xi), xi ~ N(0, sigma^2 I).
inline ParamVector sgld_step(const ParamVector& params, const ParamVector& mean_grad, double lr,
                             double sigma, double weight_decay, Rng& rng) {
  if (params.size() != mean_grad.size()) throw std::invalid_argument("sgld_step: size mismatch");
  ParamVector next(params.size());
  for (std::size_t j = 0; j < params.size(); ++j) {
    double g = mean_grad[j] + weight_decay * params[j];
    if (sigma > 0.0) g += sigma * rng.normal();
    next[j] = params[j] - lr * g;
  }
  return next;
}

// Evenly spaced checkpoint step indices: s_i = round(i * T / N), i = 1..N.
inline std::vector<long> checkpoint_steps_for(long total_steps, int count) {
  std::vector<long> steps(count);
  for (int i = 1; i <= count; ++i) {
    steps[i - 1] = std::llround(static_cast<double>(i) * total_steps / count);
  }
  for (int i = 1; i < count; ++i) {
    if (steps[i] <= steps[i - 1]) throw std::logic_error("checkpoint steps not increasing");
  }
  return steps;
}

inline Trajectory train(const ModelSpec& spec, const Dataset& ds, const TrainConfig& cfg,
                        const ParamVector& init) {
  validate(spec);
  validate(cfg, ds.n);
  detail::check_input_dim(spec, ds.d);

  const long steps_per_epoch = (ds.n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = static_cast<long>(cfg.epochs) * steps_per_epoch;

  Trajectory traj;
  traj.total_steps = total_steps;
  traj.n_examples = ds.n;
  traj.batch_size = cfg.batch_size;
  traj.example_ids = ds.ids;
  traj.checkpoint_steps = checkpoint_steps_for(total_steps, cfg.checkpoint_count);
  traj.checkpoints.reserve(cfg.checkpoint_count);
  traj.grad_norm_log.reserve(static_cast<std::size_t>(cfg.checkpoint_count) * ds.n);
  traj.confidence_log.reserve(static_cast<std::size_t>(cfg.checkpoint_count) * ds.n);

  ParamVector params = init;
  Rng rng(mix_seed(cfg.seed, 0x74726169));  // training stream, decoupled from init
  std::vector<int> order(ds.n);
  for (int i = 0; i < ds.n; ++i) order[i] = i;

  long step = 0;
  std::size_t next_ckpt = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    const double lr = lr_at(cfg, epoch);
    for (long b = 0; b < steps_per_epoch; ++b) {
      const int lo = static_cast<int>(b) * cfg.batch_size;
      const int hi = std::min(ds.n, lo + cfg.batch_size);
      const std::span<const int> batch(order.data() + lo, static_cast<std::size_t>(hi - lo));
      ParamVector grad;
      try {
        grad = grad_params(spec, params, ds, batch);
      } catch (const std::runtime_error&) {
        throw std::runtime_error("train: diverged (non-finite gradient) at step " +
                                 std::to_string(step) + ", epoch " + std::to_string(epoch));
      }
      params = sgld_step(params, grad, lr, cfg.noise_sigma, cfg.weight_decay, rng);
      ++step;
      if (next_ckpt < traj.checkpoint_steps.size() && step == traj.checkpoint_steps[next_ckpt]) {
        ExampleStats stats = per_example_stats(spec, params, ds);
        traj.checkpoints.push_back(params);
        traj.grad_norm_log.insert(traj.grad_norm_log.end(), stats.grad_norms.begin(),
                                  stats.grad_norms.end());
        traj.confidence_log.insert(traj.confidence_log.end(), stats.confidences.begin(),
                                   stats.confidences.end());
        ++next_ckpt;
      }
    }
  }
  traj.final_params = params;
  return traj;
}

inline Trajectory train(const ModelSpec& spec, const Dataset& ds, const TrainConfig& cfg) {
  return train(spec, ds, cfg, init_params(spec, cfg.seed));
}

}  // namespace ulb
