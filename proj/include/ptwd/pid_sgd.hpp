#pragma once

// PID-controlled SGD for tensor wheel decomposition.
//
// Per observation x at (i, j, k) with residual e = x - x_hat, the raw residual
// is replaced by the controller output
//
//   e~ = cp * e + ci * (sum of this entry's residuals so far, e included)
//               + cd * (e - this entry's residual on its previous visit)
//
// and every parameter p touched by (i, j, k) moves by
//
//   p <- p + eta * (e~ * d x_hat / d p - lambda * p).
//
// The step uses half the gradient of the squared residual (eta absorbs the
// factor 2), and the L2 decay applies per observation to g and to the a, b, c
// slices that the observation touches. All partials are taken at the
// pre-step parameters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ptwd/error.hpp"
#include "ptwd/metrics.hpp"
#include "ptwd/tensor_store.hpp"
#include "ptwd/twd.hpp"

namespace ptwd {

struct HyperParams {
  double eta = 0.01;
  double lambda = 0.01;
  double cp = 1.0;
  double ci = 0.0;
  double cd = 0.001;
  std::size_t max_epochs = 1000;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  double init_scale = 0.1;
  /// Stop once validation RMSE has not improved for `patience` epochs.
  bool early_stopping = true;

  void validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ParameterError("eta must be > 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ParameterError("lambda must be >= 0");
    if (!std::isfinite(cp) || !std::isfinite(ci) || !std::isfinite(cd)) {
      throw ParameterError("PID coefficients must be finite");
    }
    if (max_epochs < 1) throw ParameterError("max_epochs must be >= 1");
    if (patience < 1) throw ParameterError("patience must be >= 1");
    if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) throw ParameterError("init_scale must be >= 0");
  }
};

/// Per-training-entry controller memory.
class PidState {
 public:
  PidState() = default;
  explicit PidState(std::size_t n) : integral_(n, 0.0), prev_error_(n, 0.0), visits_(n, 0) {}

  std::size_t size() const noexcept { return integral_.size(); }
  std::span<const double> integral() const noexcept { return integral_; }
  std::span<const double> prev_error() const noexcept { return prev_error_; }
  std::span<const std::size_t> visit_count() const noexcept { return visits_; }

  /// Folds e_n into entry `id`'s history and returns the controller output.
  double update(std::size_t id, double e_n, double cp, double ci, double cd) {
    if (id >= integral_.size()) {
      throw BoundsError("PID entry id " + std::to_string(id) + " >= " + std::to_string(integral_.size()));
    }
    integral_[id] += e_n;
    const double delta = e_n - prev_error_[id];
    prev_error_[id] = e_n;
    ++visits_[id];
    return cp * e_n + ci * integral_[id] + cd * delta;
  }

  friend bool operator==(const PidState&, const PidState&) = default;

 private:
  std::vector<double> integral_;
  std::vector<double> prev_error_;
  std::vector<std::size_t> visits_;
};

inline double pid_error(PidState& state, std::size_t entry_id, double e_n, const HyperParams& hp) {
  return state.update(entry_id, e_n, hp.cp, hp.ci, hp.cd);
}

/// Regularized objective over `obs`: squared residuals plus, per
/// observation, lambda * (|g|^2 + |a_i|^2 + |b_j|^2 + |c_k|^2).
inline double compute_loss(const TwdFactors& f, const SparseTensor& obs, double lambda) {
  if (obs.empty()) return 0.0;
  const Dims& d = f.dims();
  const auto [R1, R2, R3] = f.ranks().r;
  const auto [H1, H2, H3] = f.ranks().h;

  std::vector<double> a_norm, b_norm, c_norm;
  double g_norm = 0.0;
  if (lambda != 0.0) {
    for (double v : f.g()) g_norm += v * v;
    a_norm.assign(d.i, 0.0);
    b_norm.assign(d.j, 0.0);
    c_norm.assign(d.k, 0.0);
    for (std::size_t r3 = 0; r3 < R3; ++r3)
      for (std::size_t i = 0; i < d.i; ++i)
        for (std::size_t q = 0; q < R1 * H1; ++q) {
          const double v = f.a()[f.a_index(r3, i, 0, 0) + q];
          a_norm[i] += v * v;
        }
    for (std::size_t r1 = 0; r1 < R1; ++r1)
      for (std::size_t j = 0; j < d.j; ++j)
        for (std::size_t q = 0; q < R2 * H2; ++q) {
          const double v = f.b()[f.b_index(r1, j, 0, 0) + q];
          b_norm[j] += v * v;
        }
    for (std::size_t r2 = 0; r2 < R2; ++r2)
      for (std::size_t k = 0; k < d.k; ++k)
        for (std::size_t q = 0; q < R3 * H3; ++q) {
          const double v = f.c()[f.c_index(r2, k, 0, 0) + q];
          c_norm[k] += v * v;
        }
  }

  Contraction work(f.ranks());
  double fit = 0.0;
  double reg = 0.0;
  for (const Entry& e : obs.entries()) {
    check_index(f, e.i, e.j, e.k);
    const double r = e.value - work.value(f, e.i, e.j, e.k);
    fit += r * r;
    if (lambda != 0.0) reg += g_norm + a_norm[e.i] + b_norm[e.j] + c_norm[e.k];
  }
  return fit + lambda * reg;
}

struct StepResult {
  double error = 0.0;         // e = x - x_hat before the step
  double shaped_error = 0.0;  // e~ actually applied
};

/// One SGD update at `entry`. `shape` maps the raw residual to the error
/// that drives the update. `epoch` and `entry_id` only label diagnostics.
template <class ErrorShaper>
StepResult sgd_step_with(TwdFactors& f, const Entry& entry, double eta, double lambda, Contraction& work,
                         ErrorShaper&& shape, std::size_t epoch = 0, std::size_t entry_id = 0) {
  const std::size_t i = entry.i, j = entry.j, k = entry.k;
  check_index(f, i, j, k);
  const double e = entry.value - work.value(f, i, j, k);
  const double es = shape(e);
  if (!std::isfinite(es)) throw DivergenceError(epoch, entry_id);
  work.slice_partials(f, i, j, k);

  const auto [R1, R2, R3] = f.ranks().r;
  const auto [H1, H2, H3] = f.ranks().h;
  bool finite = true;
  auto apply = [&](double& p, double partial) {
    p += eta * (es * partial - lambda * p);
    finite = finite && std::isfinite(p);
  };

  auto g = f.g();
  auto dg = work.d_core();
  for (std::size_t n = 0; n < g.size(); ++n) apply(g[n], dg[n]);

  auto a = f.a();
  auto da = work.d_a();
  for (std::size_t r3 = 0; r3 < R3; ++r3) {
    double* blk = &a[f.a_index(r3, i, 0, 0)];
    const double* dblk = &da[r3 * R1 * H1];
    for (std::size_t q = 0; q < R1 * H1; ++q) apply(blk[q], dblk[q]);
  }
  auto b = f.b();
  auto db = work.d_b();
  for (std::size_t r1 = 0; r1 < R1; ++r1) {
    double* blk = &b[f.b_index(r1, j, 0, 0)];
    const double* dblk = &db[r1 * R2 * H2];
    for (std::size_t q = 0; q < R2 * H2; ++q) apply(blk[q], dblk[q]);
  }
  auto c = f.c();
  auto dc = work.d_c();
  for (std::size_t r2 = 0; r2 < R2; ++r2) {
    double* blk = &c[f.c_index(r2, k, 0, 0)];
    const double* dblk = &dc[r2 * R3 * H3];
    for (std::size_t q = 0; q < R3 * H3; ++q) apply(blk[q], dblk[q]);
  }
  if (!finite) throw DivergenceError(epoch, entry_id);
  return {e, es};
}

/// PID-shaped step; updates `state` for `entry_id`.
inline StepResult sgd_step(TwdFactors& f, const Entry& entry, std::size_t entry_id, PidState& state,
                           const HyperParams& hp, Contraction& work, std::size_t epoch = 0) {
  return sgd_step_with(
      f, entry, hp.eta, hp.lambda, work, [&](double e) { return pid_error(state, entry_id, e, hp); }, epoch,
      entry_id);
}

inline StepResult sgd_step(TwdFactors& f, const Entry& entry, std::size_t entry_id, PidState& state,
                           const HyperParams& hp) {
  Contraction work(f.ranks());
  return sgd_step(f, entry, entry_id, state, hp, work);
}

/// Step driven by the raw residual, no controller.
inline StepResult plain_sgd_step(TwdFactors& f, const Entry& entry, const HyperParams& hp, Contraction& work,
                                 std::size_t epoch = 0, std::size_t entry_id = 0) {
  return sgd_step_with(f, entry, hp.eta, hp.lambda, work, [](double e) { return e; }, epoch, entry_id);
}

enum class ErrorMode { pid, plain };

/// Sequential SGD over a training set, one pass per run_epoch(). Each epoch
/// visits every entry once in an order reshuffled from a generator seeded by
/// hp.seed, so identical inputs give identical trajectories.
class Trainer {
 public:
  Trainer(const SparseTensor& train_set, const Ranks& ranks, const HyperParams& hp,
          ErrorMode mode = ErrorMode::pid)
      : train_(&train_set),
        hp_(hp),
        mode_(mode),
        factors_((hp.validate(), init_factors(train_set.dims(), ranks, hp.seed, hp.init_scale))),
        state_(train_set.size()),
        work_(ranks),
        order_(train_set.size()),
        rng_(order_seed(hp.seed)) {
    if (train_set.empty()) throw ParameterError("training set is empty");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  /// Seed of the visit-order generator for a given training seed; kept apart
  /// from the factor-initialization stream.
  static std::uint64_t order_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

  void run_epoch() {
    ++epoch_;
    std::shuffle(order_.begin(), order_.end(), rng_);
    for (std::size_t id : order_) {
      const Entry& e = (*train_)[id];
      if (mode_ == ErrorMode::pid) {
        sgd_step(factors_, e, id, state_, hp_, work_, epoch_);
      } else {
        plain_sgd_step(factors_, e, hp_, work_, epoch_, id);
      }
    }
  }

  std::size_t epoch() const noexcept { return epoch_; }
  const TwdFactors& factors() const noexcept { return factors_; }
  const PidState& state() const noexcept { return state_; }
  /// Visit order of the most recent epoch (training-entry ids).
  std::span<const std::size_t> last_order() const noexcept { return order_; }
  const HyperParams& hyper_params() const noexcept { return hp_; }

 private:
  const SparseTensor* train_;
  HyperParams hp_;
  ErrorMode mode_;
  TwdFactors factors_;
  PidState state_;
  Contraction work_;
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t epoch_ = 0;
};

struct TrainReport {
  std::vector<double> loss_history;        // regularized training loss after each epoch
  std::vector<double> valid_rmse_history;  // NaN entries when there is no validation set
  std::size_t epochs_run = 0;
  std::size_t converged_at = 0;  // 1-based epoch of best validation RMSE
  std::uint64_t init_fingerprint = 0;
};

struct TrainResult {
  TwdFactors factors;
  TrainReport report;
};

/// Trains from init_factors(hp.seed). With a validation set, returns the
/// factors of the best-validation epoch; without one, the final factors.
inline TrainResult train(const SparseTensor& train_set, const SparseTensor& valid_set, const Ranks& ranks,
                         const HyperParams& hp, ErrorMode mode = ErrorMode::pid,
                         const std::function<void(const Trainer&)>& on_epoch = {}) {
  hp.validate();
  if (train_set.empty()) throw ParameterError("training set is empty");
  if (!valid_set.empty() && !(valid_set.dims() == train_set.dims())) {
    throw ParameterError("validation dims differ from training dims");
  }
  Trainer trainer(train_set, ranks, hp, mode);
  TrainReport report;
  report.init_fingerprint = fingerprint(trainer.factors());

  const bool has_valid = !valid_set.empty();
  double best_rmse = std::numeric_limits<double>::infinity();
  std::optional<TwdFactors> best;

  while (trainer.epoch() < hp.max_epochs) {
    trainer.run_epoch();
    const std::size_t ep = trainer.epoch();
    report.loss_history.push_back(compute_loss(trainer.factors(), train_set, hp.lambda));
    double rmse = std::numeric_limits<double>::quiet_NaN();
    if (has_valid) rmse = evaluate(trainer.factors(), valid_set).rmse;
    report.valid_rmse_history.push_back(rmse);
    if (on_epoch) on_epoch(trainer);

    if (has_valid && rmse < best_rmse) {
      best_rmse = rmse;
      report.converged_at = ep;
      best = trainer.factors();
    } else if (has_valid && hp.early_stopping && ep - report.converged_at >= hp.patience) {
      break;
    }
  }
  report.epochs_run = trainer.epoch();
  if (!has_valid || !best) {
    report.converged_at = report.epochs_run;
    return {trainer.factors(), std::move(report)};
  }
  return {std::move(*best), std::move(report)};
}

}  // namespace ptwd
