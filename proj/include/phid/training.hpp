#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "phid/model.hpp"
#include "phid/msd.hpp"

namespace phid {

struct TrainConfig {
  int truncation = 100;  // T, samples per window
  int batch = 64;
  double lr = 1e-3;
  int iterations = 1000;
  int pretrain_iterations = 10000;
  int val_period = 25;
  int rk4_steps_per_sample = 1;
  std::uint64_t seed = 1;
};

struct AdamState {
  std::vector<Eigen::MatrixXd> m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct LogEntry {
  int iter = 0;
  double train_loss = 0.0;
  double val_nrmse = 0.0;  // NaN on iterations without a validation pass
};

struct TrainState {
  PhnnParams params;
  PhnnParams best;
  double best_val_nrmse = 0.0;
  AdamState adam;
  std::vector<LogEntry> log;
  int skipped_steps = 0;
  double pretrain_seconds = 0.0;
  double train_seconds = 0.0;
};

// sqrt(mean_k ||y_k - yhat_k||^2) / sigma_y with sigma_y pooled across
// channels; errors out on constant y.
double nrmse(const Eigen::MatrixXd& y, const Eigen::MatrixXd& yhat);

// Classical RK4 with u held zero-order over the step, recorded on the tape.
int rk4_step(TapedModel& m, int x, int u, double h);

struct WindowRef {
  int record = 0;
  int start = 0;  // t, start of the simulated section
};

// Builds the batch loss graph on a fresh tape region and returns the scalar
// node: mean over windows of mean-over-k squared output error.
int truncated_loss(TapedModel& m, std::span<const Dataset> datasets,
                   std::span<const WindowRef> windows, const TrainConfig& cfg);

// Plain-number convenience wrapper around truncated_loss.
double truncated_loss_value(const PhnnParams& params,
                            std::span<const Dataset> datasets,
                            std::span<const WindowRef> windows,
                            const TrainConfig& cfg);

// One Adam update over the listed parameter indices (all when empty).
// Non-finite gradients skip the update and report false.
bool adam_step(std::vector<Eigen::MatrixXd>& theta,
               const std::vector<Eigen::MatrixXd>& grads, AdamState& state,
               double lr, std::span<const int> indices = {});

// Free-run simulation: encoder on the first full lag window, RK4 onward.
// Returns rows [t0, N) of the simulated output; t0 = max(n_a, n_b).
Eigen::MatrixXd simulate_model(const PhnnParams& params, const Dataset& ds,
                               const TrainConfig& cfg);

// Pooled free-run NRMSE over several records (validation / test metric).
double simulation_nrmse(const PhnnParams& params,
                        std::span<const Dataset> records,
                        const TrainConfig& cfg);

// RK4 reference states of the linear PH estimate over each record (zero
// initial state); used as encoder pretraining targets.
std::vector<Eigen::MatrixXd> linear_reference_states(const LinearPH& lin,
                                                     std::span<const Dataset> records,
                                                     const TrainConfig& cfg);

// Supervised regression of the encoder onto once-computed linear-model
// states; the first wash-in samples of each record are excluded from the
// targets. Touches only the encoder parameters.
void pretrain_encoder(PhnnParams& params, const LinearPH& lin,
                      std::span<const Dataset> train_sets,
                      const TrainConfig& cfg, TrainState* state = nullptr,
                      int washout_samples = 100);

// Full training loop with periodic free-run validation and best-checkpoint
// selection.
TrainState train(PhnnParams params, const TrainConfig& cfg,
                 std::span<const Dataset> train_sets,
                 std::span<const Dataset> val_sets);

// Max relative gradient error of the truncated loss over all parameters
// (finite differences vs the tape), for correctness checks.
double loss_grad_check(const PhnnParams& params,
                       std::span<const Dataset> datasets,
                       std::span<const WindowRef> windows,
                       const TrainConfig& cfg, double h);

}  // namespace phid
