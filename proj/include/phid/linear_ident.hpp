#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "phid/msd.hpp"

namespace phid {

struct DtStateSpace {
  Eigen::MatrixXd Ad, Bd, Cd, Dd;
  double ts = 0.0;
  std::vector<std::string> warnings;
};

struct CtStateSpace {
  Eigen::MatrixXd A, B, C, D;
};

// Per-channel affine standardization fitted on the training records.
struct Standardizer {
  Eigen::VectorXd u_mean, u_std;
  Eigen::VectorXd y_mean, y_std;

  Dataset apply(const Dataset& ds) const;
};

Standardizer fit_standardizer(std::span<const Dataset> train_sets);

// MOESP-style subspace identification on (already standardized) records.
// D is forced to zero; B and per-record initial states come from a joint
// least-squares fit on simulated regressors.
DtStateSpace subspace_id(std::span<const Dataset> datasets, int n_x,
                         int horizon);

// Zero-order-hold conversions. d2c uses the principal matrix logarithm and
// fails if Ad has eigenvalues on the closed negative real axis.
CtStateSpace d2c(const DtStateSpace& dt);
DtStateSpace c2d(const CtStateSpace& ct, double ts);

// H(jw) = C (jwI - A)^{-1} B + D.
Eigen::MatrixXcd freq_response(const CtStateSpace& ct, double omega);

// Max relative deviation of two frequency responses over a log grid.
double freq_response_gap(const CtStateSpace& a, const CtStateSpace& b,
                         std::span<const double> omegas);

// Default comparison grid (logarithmic, 50 points).
std::vector<double> default_omega_grid(double lo = 1e-2, double hi = 1e2,
                                       int n = 50);

// Free-run simulation of a DT model: x_{k+1} = Ad x + Bd u_k.
Eigen::MatrixXd simulate_dt(const DtStateSpace& dt, const Eigen::MatrixXd& u,
                            const Eigen::VectorXd& x0);

}  // namespace phid
