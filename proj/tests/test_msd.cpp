#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "phid/msd.hpp"

using namespace phid;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MsdConfig default_config() { return MsdConfig{}; }

// Potential energy by summing over the physical spring elements, independent
// of the assembled K matrix: element i stretches by q_i - q_{i-1} (q_{-1}=0).
double element_potential(const MsdConfig& cfg, const VectorXd& q) {
  double e = 0.0;
  for (int i = 0; i < cfg.n_masses; ++i) {
    const double stretch = i == 0 ? q(0) : q(i) - q(i - 1);
    e += 0.5 * cfg.stiffness(i) * stretch * stretch;
  }
  return e;
}

}  // namespace

TEST_CASE("stiffness assembly matches element-wise potential energy") {
  const MsdConfig cfg = default_config();
  const MsdMatrices mats = assemble_matrices(cfg);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    VectorXd q(cfg.n_masses);
    for (int i = 0; i < cfg.n_masses; ++i) q(i) = dist(rng);
    const double quad = 0.5 * q.dot(mats.K * q);
    CHECK(quad == doctest::Approx(element_potential(cfg, q)).epsilon(1e-12));
  }
  CHECK((mats.K - mats.K.transpose()).norm() == doctest::Approx(0.0));
  // Chain with equal parameters: classic tridiagonal with 2k on interior.
  CHECK(mats.K(0, 0) == doctest::Approx(2.0));
  CHECK(mats.K(2, 2) == doctest::Approx(1.0));
  CHECK(mats.K(0, 1) == doctest::Approx(-1.0));
  CHECK(mats.K(0, 2) == doctest::Approx(0.0));
}

TEST_CASE("multisine is periodic with the fundamental period and has RMS sqrt(n_lines/2)") {
  const MsdConfig cfg = default_config();
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> phase(0.0, std::numbers::pi);
  VectorXd phases(cfg.n_lines);
  for (int i = 0; i < cfg.n_lines; ++i) phases(i) = phase(rng);

  const double period = 1.0 / cfg.f0_hz;
  for (double t : {0.0, 0.31, 2.7, 6.93}) {
    CHECK(multisine(cfg, phases, t) ==
          doctest::Approx(multisine(cfg, phases, t + period)).epsilon(1e-9));
  }

  // Orthogonality of the sine lines makes the mean square over one period
  // equal n_lines/2 regardless of the phases.
  const int n_grid = 40000;
  double acc = 0.0;
  for (int k = 0; k < n_grid; ++k) {
    const double v = multisine(cfg, phases, period * k / n_grid);
    acc += v * v;
  }
  const double rms = std::sqrt(acc / n_grid);
  CHECK(rms == doctest::Approx(std::sqrt(cfg.n_lines / 2.0)).epsilon(1e-6));
}

TEST_CASE("forced response satisfies the passivity balance") {
  MsdConfig cfg = default_config();
  cfg.duration_s = 20.0;
  cfg.sample_rate_hz = 200.0;  // dense grid so the supply quadrature is tight
  cfg.substeps = 10;
  const MsdMatrices mats = assemble_matrices(cfg);

  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> phase(0.0, std::numbers::pi);
  VectorXd phases(cfg.n_lines);
  for (int i = 0; i < cfg.n_lines; ++i) phases(i) = phase(rng);
  VectorXd x0(6);
  x0 << 0.4, -0.2, 0.1, 0.3, 0.0, -0.1;
  const MsdTrajectory traj = simulate(cfg, x0, phases);

  // Passivity balance: E(t_k+1) - E(t_k) <= integral of u * v1 over the
  // interval (trapezoid on the sampled grid, with slack for quadrature).
  const double ts = 1.0 / cfg.sample_rate_hz;
  double worst = -1e9;
  for (int k = 0; k + 1 < traj.state.rows(); ++k) {
    const double e0 = mechanical_energy(mats, traj.state.row(k).transpose());
    const double e1 =
        mechanical_energy(mats, traj.state.row(k + 1).transpose());
    // The force is held at u_k across the interval, so only v1 is
    // integrated by trapezoid.
    const double supply =
        traj.u(k, 0) * 0.5 * ts *
        (traj.velocity(k, 0) + traj.velocity(k + 1, 0));
    worst = std::max(worst, e1 - e0 - supply);
  }
  // Allow small quadrature error from the trapezoid rule on a 5 ms grid.
  CHECK(worst < 1e-5);
}

TEST_CASE("undamped chain conserves energy and RK4 converges at high order") {
  MsdConfig cfg = default_config();
  cfg.damping.setZero();
  cfg.duration_s = 20.0;
  const MsdMatrices mats = assemble_matrices(cfg);
  VectorXd x0(6);
  x0 << 0.3, 0.0, -0.2, 0.1, 0.2, 0.0;

  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> phase(0.0, std::numbers::pi);
  VectorXd phases(cfg.n_lines);
  for (int i = 0; i < cfg.n_lines; ++i) phases(i) = phase(rng);

  MsdConfig coarse = cfg;
  coarse.substeps = 20;
  MsdConfig fine = cfg;
  fine.substeps = 40;
  MsdConfig finest = cfg;
  finest.substeps = 80;
  const MsdTrajectory tc = simulate(coarse, x0, phases);
  const MsdTrajectory tf = simulate(fine, x0, phases);
  const MsdTrajectory tff = simulate(finest, x0, phases);

  const double err_c = (tc.state - tff.state).norm();
  const double err_f = (tf.state - tff.state).norm();
  // Fourth-order method: halving the step shrinks error by about 16; ask for
  // at least 12 to leave slack for the finest-grid reference bias.
  CHECK(err_c / std::max(err_f, 1e-300) > 12.0);

  // Energy balance: dE = u * v1 when D = 0. The force is held constant over
  // each sample interval, so the supplied energy is exactly
  // sum_k u_k * int v1 dt; only v1 needs quadrature (trapezoid on a dense
  // sampling grid).
  MsdConfig dense = cfg;
  dense.sample_rate_hz = 200.0;
  dense.substeps = 10;
  const MsdTrajectory td = simulate(dense, x0, phases);
  const double ts = 1.0 / dense.sample_rate_hz;
  double supplied = 0.0;
  for (int k = 0; k + 1 < td.state.rows(); ++k)
    supplied += td.u(k, 0) * 0.5 * ts *
                (td.velocity(k, 0) + td.velocity(k + 1, 0));
  const double e0 = mechanical_energy(mats, td.state.row(0).transpose());
  const double e1 =
      mechanical_energy(mats, td.state.row(td.state.rows() - 1).transpose());
  CHECK(e1 - e0 == doctest::Approx(supplied).epsilon(1e-4));
}

TEST_CASE("experiment set layout, determinism, and record independence") {
  MsdConfig cfg = default_config();
  cfg.seed = 42;
  const auto records = make_experiment_set(cfg);
  REQUIRE(records.size() == 8);
  int trains = 0, vals = 0, tests = 0;
  for (const auto& r : records) {
    CHECK(r.n_samples() == 1000);
    CHECK(r.u.cols() == 1);
    CHECK(r.y.cols() == 3);
    CHECK(r.y_clean.cols() == 3);
    if (r.role == "train") ++trains;
    if (r.role == "val") ++vals;
    if (r.role == "test") ++tests;
  }
  CHECK(trains == 5);
  CHECK(vals == 2);
  CHECK(tests == 1);

  // Same seed reproduces bit-identical data; different records differ.
  const auto again = make_experiment_set(cfg);
  CHECK((records[3].y - again[3].y).norm() == 0.0);
  CHECK((records[0].u - records[1].u).norm() > 1.0);

  MsdConfig other = cfg;
  other.seed = 43;
  const auto different = make_experiment_set(other);
  CHECK((records[0].u - different[0].u).norm() > 1.0);
}

TEST_CASE("measurement noise matches the requested SNR per channel") {
  for (double snr : {10.0, 30.0}) {
    MsdConfig cfg = default_config();
    cfg.snr_db = snr;
    cfg.seed = 7;
    const auto records = make_experiment_set(cfg);
    for (int ch = 0; ch < 3; ++ch) {
      const VectorXd clean = records[0].y_clean.col(ch);
      const VectorXd noise = records[0].y.col(ch) - clean;
      const double sig_std =
          std::sqrt((clean.array() - clean.mean()).square().mean());
      const double noise_std = std::sqrt(noise.array().square().mean());
      const double measured_snr = 20.0 * std::log10(sig_std / noise_std);
      // 1000 samples: the realized noise variance wobbles by a few percent.
      CHECK(measured_snr == doctest::Approx(snr).epsilon(0.05));
    }
  }
}

TEST_CASE("noise realizations are uncorrelated with the clean signal") {
  MsdConfig cfg = default_config();
  cfg.snr_db = 10.0;
  cfg.seed = 99;
  const auto records = make_experiment_set(cfg);
  for (int ch = 0; ch < 3; ++ch) {
    const VectorXd clean = records[0].y_clean.col(ch);
    const VectorXd noise = records[0].y.col(ch) - clean;
    const VectorXd cc = clean.array() - clean.mean();
    const VectorXd nc = noise.array() - noise.mean();
    const double corr =
        cc.dot(nc) / std::max(1e-300, cc.norm() * nc.norm());
    CHECK(std::abs(corr) < 0.05);
  }
}

TEST_CASE("invalid configurations are rejected") {
  MsdConfig cfg = default_config();
  cfg.mass(1) = -1.0;
  CHECK_THROWS_AS(assemble_matrices(cfg), std::invalid_argument);

  MsdConfig cfg2 = default_config();
  cfg2.substeps = 1;
  CHECK_THROWS_AS(simulate(cfg2, Eigen::VectorXd::Zero(6),
                           Eigen::VectorXd::Zero(cfg2.n_lines)),
                  std::invalid_argument);

  MsdConfig cfg3 = default_config();
  CHECK_THROWS_AS(simulate(cfg3, Eigen::VectorXd::Zero(4),
                           Eigen::VectorXd::Zero(cfg3.n_lines)),
                  std::invalid_argument);
}
