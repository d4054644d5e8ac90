#include "phid/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace phid {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Port-padded input column (u_k, 0, ..., 0) for a sample row.
Eigen::MatrixXd padded_input(const Dataset& ds, int k, int n_p) {
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(n_p, 1);
  u.topRows(ds.u.cols()) = ds.u.row(k).transpose();
  return u;
}

Eigen::MatrixXd lag_window_y(const Dataset& ds, int t, int n_a) {
  const int n_y = static_cast<int>(ds.y.cols());
  Eigen::MatrixXd w(n_a * n_y, 1);
  for (int i = 0; i < n_a; ++i)
    w.block(i * n_y, 0, n_y, 1) = ds.y.row(t - n_a + i).transpose();
  return w;
}

Eigen::MatrixXd lag_window_u(const Dataset& ds, int t, int n_b) {
  const int n_u = static_cast<int>(ds.u.cols());
  Eigen::MatrixXd w(n_b * n_u, 1);
  for (int i = 0; i < n_b; ++i)
    w.block(i * n_u, 0, n_u, 1) = ds.u.row(t - n_b + i).transpose();
  return w;
}

std::vector<WindowRef> sample_windows(std::span<const Dataset> datasets,
                                      const PhnnParams& p,
                                      const TrainConfig& cfg,
                                      std::mt19937_64& rng) {
  const int t_min = std::max(p.n_a, p.n_b);
  std::vector<WindowRef> out(static_cast<std::size_t>(cfg.batch));
  std::uniform_int_distribution<int> rec_dist(
      0, static_cast<int>(datasets.size()) - 1);
  for (WindowRef& w : out) {
    w.record = rec_dist(rng);
    const int t_max = datasets[static_cast<std::size_t>(w.record)].n_samples() -
                      cfg.truncation;
    if (t_max < t_min)
      throw std::invalid_argument("training: record shorter than lags + T");
    std::uniform_int_distribution<int> t_dist(t_min, t_max);
    w.start = t_dist(rng);
  }
  return out;
}

std::vector<Eigen::MatrixXd> collect_grads(const ad::Tape& tape,
                                           const TapedModel& m) {
  std::vector<Eigen::MatrixXd> grads;
  grads.reserve(m.leaf.size());
  for (int id : m.leaf) grads.push_back(tape.grad(id));
  return grads;
}

}  // namespace

double nrmse(const Eigen::MatrixXd& y, const Eigen::MatrixXd& yhat) {
  if (y.rows() != yhat.rows() || y.cols() != yhat.cols())
    throw std::invalid_argument("nrmse: size mismatch");
  const Eigen::RowVectorXd mean = y.colwise().mean();
  const double sigma =
      std::sqrt((y.rowwise() - mean).squaredNorm() / y.rows());
  if (sigma == 0.0) throw std::invalid_argument("nrmse: constant signal");
  return std::sqrt((y - yhat).squaredNorm() / y.rows()) / sigma;
}

int rk4_step(TapedModel& m, int x, int u, double h) {
  ad::Tape& t = *m.tape;
  const int k1 = f_theta(m, x, u);
  const int k2 = f_theta(m, t.add(x, t.scale(k1, 0.5 * h)), u);
  const int k3 = f_theta(m, t.add(x, t.scale(k2, 0.5 * h)), u);
  const int k4 = f_theta(m, t.add(x, t.scale(k3, h)), u);
  const int sum = t.add(t.add(k1, t.scale(k2, 2.0)),
                        t.add(t.scale(k3, 2.0), k4));
  const int x_next = t.add(x, t.scale(sum, h / 6.0));
  if (!t.val(x_next).allFinite())
    throw std::runtime_error("rk4_step: non-finite stage");
  return x_next;
}

int truncated_loss(TapedModel& m, std::span<const Dataset> datasets,
                   std::span<const WindowRef> windows, const TrainConfig& cfg) {
  ad::Tape& t = *m.tape;
  const PhnnParams& p = *m.params;
  const int T = cfg.truncation;
  if (T < 2) throw std::invalid_argument("truncated_loss: T must be >= 2");

  int acc = -1;
  for (const WindowRef& w : windows) {
    const Dataset& ds = datasets[static_cast<std::size_t>(w.record)];
    if (w.start < std::max(p.n_a, p.n_b) || w.start + T > ds.n_samples())
      throw std::invalid_argument("truncated_loss: window out of range");

    const int y_past = t.constant(lag_window_y(ds, w.start, p.n_a));
    const int u_past = t.constant(lag_window_u(ds, w.start, p.n_b));
    int x = encoder_forward(m, y_past, u_past);

    const double h = ds.ts / cfg.rk4_steps_per_sample;
    for (int k = 0; k < T; ++k) {
      const int u = t.constant(padded_input(ds, w.start + k, p.n_p));
      const FlowNodes fh = f_and_h(m, x, u);
      const int y_meas = t.constant(ds.y.row(w.start + k).transpose());
      const int err = t.sum_sq(t.sub(fh.y, y_meas));
      acc = acc < 0 ? err : t.add(acc, err);
      if (k + 1 < T) {
        if (cfg.rk4_steps_per_sample == 1) {
          // fh.dx is already the first RK4 stage at x
          const int k2 = f_theta(m, t.add(x, t.scale(fh.dx, 0.5 * h)), u);
          const int k3 = f_theta(m, t.add(x, t.scale(k2, 0.5 * h)), u);
          const int k4 = f_theta(m, t.add(x, t.scale(k3, h)), u);
          const int sum = t.add(t.add(fh.dx, t.scale(k2, 2.0)),
                                t.add(t.scale(k3, 2.0), k4));
          x = t.add(x, t.scale(sum, h / 6.0));
          if (!t.val(x).allFinite())
            throw std::runtime_error("truncated_loss: non-finite state");
        } else {
          for (int s = 0; s < cfg.rk4_steps_per_sample; ++s)
            x = rk4_step(m, x, u, h);
        }
      }
    }
  }
  return t.scale(acc, 1.0 / (static_cast<double>(windows.size()) * T));
}

double truncated_loss_value(const PhnnParams& params,
                            std::span<const Dataset> datasets,
                            std::span<const WindowRef> windows,
                            const TrainConfig& cfg) {
  ad::Tape tape;
  TapedModel m = stage(tape, params);
  const int loss = truncated_loss(m, datasets, windows, cfg);
  return tape.val(loss)(0, 0);
}

bool adam_step(std::vector<Eigen::MatrixXd>& theta,
               const std::vector<Eigen::MatrixXd>& grads, AdamState& state,
               double lr, std::span<const int> indices) {
  if (grads.size() != theta.size())
    throw std::invalid_argument("adam_step: gradient count mismatch");
  if (state.m.empty()) {
    state.m.resize(theta.size());
    state.v.resize(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
      state.m[i] = Eigen::MatrixXd::Zero(theta[i].rows(), theta[i].cols());
      state.v[i] = Eigen::MatrixXd::Zero(theta[i].rows(), theta[i].cols());
    }
  }

  std::vector<int> all;
  if (indices.empty()) {
    all.resize(theta.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    indices = all;
  }

  for (int i : indices)
    if (!grads[static_cast<std::size_t>(i)].allFinite()) return false;

  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, state.step);
  const double bc2 = 1.0 - std::pow(state.beta2, state.step);
  for (int idx : indices) {
    const std::size_t i = static_cast<std::size_t>(idx);
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i].array().matrix() +
                 (1.0 - state.beta2) * grads[i].cwiseProduct(grads[i]);
    theta[i].array() -= lr * (state.m[i].array() / bc1) /
                        ((state.v[i].array() / bc2).sqrt() + state.eps);
  }
  return true;
}

Eigen::MatrixXd simulate_model(const PhnnParams& params, const Dataset& ds,
                               const TrainConfig& cfg) {
  ad::Tape tape;
  TapedModel m = stage(tape, params);
  const int t0 = std::max(params.n_a, params.n_b);
  const int n = ds.n_samples();
  Eigen::MatrixXd yhat(n - t0, params.n_p);

  const int y_past = tape.constant(lag_window_y(ds, t0, params.n_a));
  const int u_past = tape.constant(lag_window_u(ds, t0, params.n_b));
  int x = encoder_forward(m, y_past, u_past);
  const double h = ds.ts / cfg.rk4_steps_per_sample;

  for (int k = t0; k < n; ++k) {
    const int u = tape.constant(padded_input(ds, k, params.n_p));
    yhat.row(k - t0) = tape.val(h_theta(m, x)).col(0).transpose();
    if (!yhat.row(k - t0).allFinite()) {
      yhat.bottomRows(n - 1 - k).setConstant(
          std::numeric_limits<double>::quiet_NaN());
      yhat.row(k - t0).setConstant(std::numeric_limits<double>::quiet_NaN());
      break;
    }
    if (k + 1 < n) {
      try {
        for (int s = 0; s < cfg.rk4_steps_per_sample; ++s)
          x = rk4_step(m, x, u, h);
      } catch (const std::runtime_error&) {
        yhat.bottomRows(n - 1 - k).setConstant(
            std::numeric_limits<double>::quiet_NaN());
        break;
      }
    }
  }
  return yhat;
}

double simulation_nrmse(const PhnnParams& params,
                        std::span<const Dataset> records,
                        const TrainConfig& cfg) {
  const int t0 = std::max(params.n_a, params.n_b);
  std::vector<Eigen::MatrixXd> ys, yhats;
  Eigen::Index total = 0;
  for (const Dataset& ds : records) {
    Eigen::MatrixXd yhat = simulate_model(params, ds, cfg);
    if (!yhat.allFinite()) return std::numeric_limits<double>::infinity();
    ys.push_back(ds.y.bottomRows(ds.n_samples() - t0));
    yhats.push_back(std::move(yhat));
    total += ys.back().rows();
  }
  Eigen::MatrixXd y(total, records[0].y.cols());
  Eigen::MatrixXd yhat(total, records[0].y.cols());
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    y.middleRows(row, ys[i].rows()) = ys[i];
    yhat.middleRows(row, ys[i].rows()) = yhats[i];
    row += ys[i].rows();
  }
  return nrmse(y, yhat);
}

std::vector<Eigen::MatrixXd> linear_reference_states(
    const LinearPH& lin, std::span<const Dataset> records,
    const TrainConfig& cfg) {
  const CtStateSpace ct = to_state_space(lin);
  const int n_x = static_cast<int>(ct.A.rows());
  const int n_p = static_cast<int>(ct.B.cols());
  std::vector<Eigen::MatrixXd> out;
  for (const Dataset& ds : records) {
    const int n = ds.n_samples();
    const double h = ds.ts / cfg.rk4_steps_per_sample;
    Eigen::MatrixXd xs(n, n_x);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n_x);
    for (int k = 0; k < n; ++k) {
      xs.row(k) = x.transpose();
      Eigen::VectorXd u = Eigen::VectorXd::Zero(n_p);
      u.topRows(ds.u.cols()) = ds.u.row(k).transpose();
      for (int s = 0; s < cfg.rk4_steps_per_sample; ++s) {
        const Eigen::VectorXd k1 = ct.A * x + ct.B * u;
        const Eigen::VectorXd k2 = ct.A * (x + 0.5 * h * k1) + ct.B * u;
        const Eigen::VectorXd k3 = ct.A * (x + 0.5 * h * k2) + ct.B * u;
        const Eigen::VectorXd k4 = ct.A * (x + h * k3) + ct.B * u;
        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      if (!x.allFinite())
        throw std::runtime_error(
            "pretrain_encoder: linear PH simulation diverged at sample " +
            std::to_string(k));
    }
    out.push_back(std::move(xs));
  }
  return out;
}

void pretrain_encoder(PhnnParams& params, const LinearPH& lin,
                      std::span<const Dataset> train_sets,
                      const TrainConfig& cfg, TrainState* state,
                      int washout_samples) {
  const auto t_start = Clock::now();
  if (cfg.pretrain_iterations <= 0) return;
  const std::vector<Eigen::MatrixXd> refs =
      linear_reference_states(lin, train_sets, cfg);
  const std::vector<int> enc = params.encoder_indices();
  const int t_min = std::max({params.n_a, params.n_b, washout_samples});

  std::mt19937_64 rng(cfg.seed ^ 0x70726574ULL);  // distinct pretrain stream
  std::uniform_int_distribution<int> rec_dist(
      0, static_cast<int>(train_sets.size()) - 1);

  AdamState adam;
  ad::Tape tape;
  for (int iter = 0; iter < cfg.pretrain_iterations; ++iter) {
    tape.reset();
    TapedModel m = stage(tape, params);
    int acc = -1;
    for (int b = 0; b < cfg.batch; ++b) {
      const int r = rec_dist(rng);
      const Dataset& ds = train_sets[static_cast<std::size_t>(r)];
      std::uniform_int_distribution<int> t_dist(t_min, ds.n_samples() - 1);
      const int t = t_dist(rng);
      const int y_past = tape.constant(lag_window_y(ds, t, params.n_a));
      const int u_past = tape.constant(lag_window_u(ds, t, params.n_b));
      const int xhat = encoder_forward(m, y_past, u_past);
      const int target = tape.constant(
          refs[static_cast<std::size_t>(r)].row(t).transpose());
      const int err = tape.sum_sq(tape.sub(xhat, target));
      acc = acc < 0 ? err : tape.add(acc, err);
    }
    const int loss = tape.scale(acc, 1.0 / cfg.batch);
    tape.backward(loss);
    adam_step(params.theta, collect_grads(tape, m), adam, cfg.lr, enc);
  }
  if (state) state->pretrain_seconds = seconds_since(t_start);
}

TrainState train(PhnnParams params, const TrainConfig& cfg,
                 std::span<const Dataset> train_sets,
                 std::span<const Dataset> val_sets) {
  const auto t_start = Clock::now();
  TrainState st;
  st.best_val_nrmse = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(cfg.seed);

  ad::Tape tape;
  int consecutive_skips = 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto validate = [&](int iter, double loss_value) {
    const double v = simulation_nrmse(params, val_sets, cfg);
    if (v < st.best_val_nrmse) {
      st.best_val_nrmse = v;
      st.best = params;
    }
    st.log.push_back({iter, loss_value, v});
  };

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const std::vector<WindowRef> windows =
        sample_windows(train_sets, params, cfg, rng);
    tape.reset();
    TapedModel m = stage(tape, params);
    double loss_value = nan;
    bool ok = true;
    try {
      const int loss = truncated_loss(m, train_sets, windows, cfg);
      loss_value = tape.val(loss)(0, 0);
      tape.backward(loss);
    } catch (const std::runtime_error&) {
      ok = false;
    }

    if (iter % cfg.val_period == 0) {
      validate(iter, loss_value);
    } else {
      st.log.push_back({iter, loss_value, nan});
    }

    if (ok && std::isfinite(loss_value))
      ok = adam_step(params.theta, collect_grads(tape, m), st.adam, cfg.lr);
    if (!ok) {
      ++st.skipped_steps;
      if (++consecutive_skips > 10)
        throw std::runtime_error(
            "train: more than 10 consecutive non-finite steps");
    } else {
      consecutive_skips = 0;
    }
  }
  validate(cfg.iterations, st.log.empty() ? nan : st.log.back().train_loss);
  st.params = std::move(params);
  st.train_seconds = seconds_since(t_start);
  return st;
}

double loss_grad_check(const PhnnParams& params,
                       std::span<const Dataset> datasets,
                       std::span<const WindowRef> windows,
                       const TrainConfig& cfg, double h) {
  PhnnParams work = params;
  auto eval = [&](std::span<const Eigen::MatrixXd> theta) {
    work.theta.assign(theta.begin(), theta.end());
    return truncated_loss_value(work, datasets, windows, cfg);
  };
  auto gradient = [&](std::span<const Eigen::MatrixXd> theta) {
    work.theta.assign(theta.begin(), theta.end());
    ad::Tape tape;
    TapedModel m = stage(tape, work);
    const int loss = truncated_loss(m, datasets, windows, cfg);
    tape.backward(loss);
    return collect_grads(tape, m);
  };
  return ad::grad_check(eval, gradient, params.theta, h);
}

}  // namespace phid
