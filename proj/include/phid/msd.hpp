#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace phid {

// Chain of mass-spring-dampers with cubic damping, driven by a multisine
// force on the first mass. Outputs are the mass velocities.
struct MsdConfig {
  int n_masses = 3;
  Eigen::VectorXd mass = Eigen::VectorXd::Constant(3, 2.0);       // kg
  Eigen::VectorXd stiffness = Eigen::VectorXd::Constant(3, 1.0);  // N/m
  Eigen::VectorXd damping = Eigen::VectorXd::Constant(3, 0.5);    // N s/m
  double f0_hz = 0.1;
  int n_lines = 40;
  double duration_s = 100.0;
  double sample_rate_hz = 10.0;
  int substeps = 20;  // fine RK4 steps per sample interval
  double snr_db = 30.0;
  std::uint64_t seed = 1;
};

struct Dataset {
  Eigen::MatrixXd u;        // N x n_u
  Eigen::MatrixXd y;        // N x n_y (noisy)
  Eigen::MatrixXd y_clean;  // N x n_y, empty if not kept
  double ts = 0.1;
  std::string role;  // train / val / test
  std::uint64_t seed = 0;

  int n_samples() const { return static_cast<int>(u.rows()); }
};

struct MsdMatrices {
  Eigen::MatrixXd M;  // diagonal mass matrix
  Eigen::MatrixXd D;  // chain damping assembly
  Eigen::MatrixXd K;  // chain stiffness assembly
};

MsdMatrices assemble_matrices(const MsdConfig& cfg);

// u(t) = sum_i sin(2 pi i f0 t + phi_i); periodic with period 1/f0.
double multisine(const MsdConfig& cfg, const Eigen::VectorXd& phases,
                 double t);

struct MsdTrajectory {
  Eigen::MatrixXd u;          // N x 1, force sampled at Ts
  Eigen::MatrixXd velocity;   // N x n_masses, sampled at Ts
  Eigen::MatrixXd state;      // N x 2*n_masses, (q, p) sampled at Ts
};

// Fine-step RK4 integration of M q'' + D(qdot^3 + qdot) + K q = u e1,
// sampled every cfg.substeps fine steps. Aborts on non-finite state.
MsdTrajectory simulate(const MsdConfig& cfg, const Eigen::VectorXd& x0,
                       const Eigen::VectorXd& phases);

// Total mechanical energy 1/2 p^T M^-1 p + 1/2 q^T K q of a sampled state.
double mechanical_energy(const MsdMatrices& mats, const Eigen::VectorXd& x);

// Eight records (5 train / 2 val / 1 test), each with its own phase
// realization, initial state, and noise realization derived from cfg.seed.
std::vector<Dataset> make_experiment_set(const MsdConfig& cfg);

}  // namespace phid
