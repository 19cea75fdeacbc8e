#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ulb/model.hpp"
#include "ulb/rng.hpp"
#include "ulb/trainer.hpp"

namespace ulb {

enum class UnlearnMethod { kFinetune, kL1Sparse };

struct UnlearnConfig {
  UnlearnMethod method = UnlearnMethod::kFinetune;
  double lr = 0.01;
  double l1_coeff = 0.0;          // must be > 0 exactly when method is l1sparse
  int epochs = 25;
  int batch_size = 64;
  long eval_every = 1;            // steps between metric evaluations
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  double noise_sigma = 0.0;       // matches the training noise when unlearning SGLD runs
};

inline void validate(const UnlearnConfig& cfg) {
  if (cfg.lr < 0.0) throw std::invalid_argument("unlearn: lr must be >= 0");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.eval_every < 1) {
    throw std::invalid_argument("unlearn: epochs, batch_size and eval_every must be >= 1");
  }
  const bool sparse = cfg.method == UnlearnMethod::kL1Sparse;
  if (sparse != (cfg.l1_coeff > 0.0)) {
    throw std::invalid_argument("unlearn: l1_coeff must be > 0 exactly for the l1sparse method");
  }
}

struct MetricEvaluator {
  std::string name;
  std::function<double(const ParamVector&)> fn;
};

struct UnlearnRun {
  std::vector<long> eval_steps;
  std::vector<std::string> metric_names;
  std::vector<std::vector<double>> series;   // series[m][i] at eval_steps[i]
  ParamVector final_params;
  UnlearnConfig config;
  long total_steps = 0;
  std::vector<std::int64_t> sampled_ids;     // audit: every id that appeared in a minibatch

  const std::vector<double>& metric(const std::string& name) const {
    for (std::size_t m = 0; m < metric_names.size(); ++m) {
      if (metric_names[m] == name) return series[m];
    }
    throw std::invalid_argument("unlearn run: no metric named " + name);
  }
};

// Gradient step followed by soft-thresholding at lr * l1_coeff; the proximal
// form keeps exact zeros well-defined.
inline ParamVector l1_sparse_step(const ParamVector& params, const ParamVector& mean_grad,
                                  double lr, double l1_coeff, double weight_decay) {
  if (params.size() != mean_grad.size()) {
    throw std::invalid_argument("l1_sparse_step: size mismatch");
  }
  const double tau = lr * l1_coeff;
  ParamVector next(params.size());
  for (std::size_t j = 0; j < params.size(); ++j) {
    const double v = params[j] - lr * (mean_grad[j] + weight_decay * params[j]);
    const double mag = std::abs(v) - tau;
    next[j] = mag > 0.0 ? (v > 0.0 ? mag : -mag) : 0.0;
  }
  return next;
}

// Minibatch fine-tuning on the retain set only, with metrics evaluated at
// step 0, every eval_every steps, and the final step. The l1sparse method
// shares the loop and swaps in the proximal step.
inline UnlearnRun run_unlearning(const ModelSpec& spec, const ParamVector& start_params,
                                 const Dataset& retain, const UnlearnConfig& cfg,
                                 const std::vector<MetricEvaluator>& evaluators) {
  if (retain.n == 0) throw std::invalid_argument("unlearn: retain set empty");
  if (cfg.batch_size > retain.n) throw std::invalid_argument("unlearn: batch_size > retain size");
  detail::check_input_dim(spec, retain.d);

  const long steps_per_epoch = (retain.n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = static_cast<long>(cfg.epochs) * steps_per_epoch;

  UnlearnRun run;
  run.config = cfg;
  run.total_steps = total_steps;
  for (const MetricEvaluator& ev : evaluators) run.metric_names.push_back(ev.name);
  run.series.resize(evaluators.size());

  ParamVector params = start_params;
  auto evaluate = [&](long step) {
    run.eval_steps.push_back(step);
    for (std::size_t m = 0; m < evaluators.size(); ++m) {
      const double v = evaluators[m].fn(params);
      if (!std::isfinite(v)) {
        throw std::runtime_error("unlearn: metric " + evaluators[m].name + " non-finite at step " +
                                 std::to_string(step));
      }
      run.series[m].push_back(v);
    }
  };
  evaluate(0);

  Rng rng(mix_seed(cfg.seed, 0x756e6c72));
  std::vector<int> order(retain.n);
  for (int i = 0; i < retain.n; ++i) order[i] = i;
  std::vector<bool> touched(retain.n, false);

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (long b = 0; b < steps_per_epoch; ++b) {
      const int lo = static_cast<int>(b) * cfg.batch_size;
      const int hi = std::min(retain.n, lo + cfg.batch_size);
      const std::span<const int> batch(order.data() + lo, static_cast<std::size_t>(hi - lo));
      for (int i : batch) touched[i] = true;
      ParamVector grad;
      try {
        grad = grad_params(spec, params, retain, batch);
      } catch (const std::runtime_error&) {
        throw std::runtime_error("unlearn: diverged (non-finite gradient) at step " +
                                 std::to_string(step));
      }
      if (cfg.method == UnlearnMethod::kL1Sparse) {
        if (cfg.noise_sigma > 0.0) {
          for (double& g : grad) g += cfg.noise_sigma * rng.normal();
        }
        params = l1_sparse_step(params, grad, cfg.lr, cfg.l1_coeff, cfg.weight_decay);
      } else {
        params = sgld_step(params, grad, cfg.lr, cfg.noise_sigma, cfg.weight_decay, rng);
      }
      ++step;
      if (step % cfg.eval_every == 0 || step == total_steps) evaluate(step);
    }
  }
  run.final_params = params;
  for (int i = 0; i < retain.n; ++i) {
    if (touched[i]) run.sampled_ids.push_back(retain.ids[i]);
  }
  std::sort(run.sampled_ids.begin(), run.sampled_ids.end());
  return run;
}

inline UnlearnRun finetune_unlearn(const ModelSpec& spec, const ParamVector& start_params,
                                   const Dataset& retain, const UnlearnConfig& cfg,
                                   const std::vector<MetricEvaluator>& evaluators) {
  if (cfg.method != UnlearnMethod::kFinetune) {
    throw std::invalid_argument("finetune_unlearn: config selects a different method");
  }
  return run_unlearning(spec, start_params, retain, cfg, evaluators);
}

// Retraining-from-scratch reference: fresh initialization from the config
// seed, full schedule, retain set only.
inline ParamVector train_oracle(const ModelSpec& spec, const Dataset& retain,
                                const TrainConfig& cfg) {
  return train(spec, retain, cfg).final_params;
}

// First evaluation step at which the metric is within `margin` of the oracle
// value (absolute difference in metric units).
inline std::optional<long> time_to_unlearn(const UnlearnRun& run, const std::string& metric_name,
                                           double oracle_value, double margin = 0.05) {
  const std::vector<double>& series = run.metric(metric_name);
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (std::abs(series[i] - oracle_value) <= margin) return run.eval_steps[i];
  }
  return std::nullopt;
}

struct GridSearchInputs {
  std::vector<double> lrs;
  std::vector<double> l1_coeffs;   // ignored (treated as {0}) for finetune
  UnlearnConfig base;
  std::string target_metric = "ua";
  double oracle_value = 0.0;
  double margin = 0.05;
  int budget_epochs = 0;           // 0 keeps base.epochs
};

// Deterministic grid search over (lr, l1_coeff): among candidates that reach
// the margin on the pilot split, pick the fastest; ties go to the smaller lr;
// if none qualify, pick the smallest final error.
inline UnlearnConfig grid_search_hparams(const ModelSpec& spec, const ParamVector& start_params,
                                         const Dataset& retain,
                                         const std::vector<MetricEvaluator>& evaluators,
                                         const GridSearchInputs& in) {
  if (in.lrs.empty()) throw std::invalid_argument("grid search: empty lr grid");
  std::vector<double> coeffs = in.l1_coeffs;
  if (in.base.method == UnlearnMethod::kFinetune || coeffs.empty()) coeffs = {in.base.l1_coeff};

  struct Outcome {
    UnlearnConfig cfg;
    std::optional<long> steps;
    double final_err;
  };
  std::vector<Outcome> outcomes;
  for (double lr : in.lrs) {
    for (double coeff : coeffs) {
      UnlearnConfig cfg = in.base;
      cfg.lr = lr;
      cfg.l1_coeff = coeff;
      if (in.budget_epochs > 0) cfg.epochs = in.budget_epochs;
      UnlearnRun run = run_unlearning(spec, start_params, retain, cfg, evaluators);
      const std::vector<double>& series = run.metric(in.target_metric);
      outcomes.push_back({cfg, time_to_unlearn(run, in.target_metric, in.oracle_value, in.margin),
                          std::abs(series.back() - in.oracle_value)});
    }
  }

  const Outcome* best = nullptr;
  for (const Outcome& o : outcomes) {
    if (!o.steps) continue;
    if (best == nullptr || *o.steps < *best->steps ||
        (*o.steps == *best->steps && o.cfg.lr < best->cfg.lr)) {
      best = &o;
    }
  }
  if (best == nullptr) {
    for (const Outcome& o : outcomes) {
      if (best == nullptr || o.final_err < best->final_err ||
          (o.final_err == best->final_err && o.cfg.lr < best->cfg.lr)) {
        best = &o;
      }
    }
  }
  return best->cfg;
}

}  // namespace ulb
