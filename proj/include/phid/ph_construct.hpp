#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "phid/linear_ident.hpp"

namespace phid {

struct KypOptions {
  int max_sweeps = 5000;
  double tol = 1e-9;       // stop when projection displacement falls below
  double eps_q = 1e-8;     // lower bound Q >= eps_q * I in the solve
};

struct KypResult {
  Eigen::MatrixXd Q;       // symmetric solve result (pre projection)
  bool feasible = false;
  bool converged = false;
  int sweeps = 0;
  double lmi_neg_mass = 0.0;  // sum of |negative eigenvalues| of the LMI block
  double q_min_eig = 0.0;
};

// Solve the KYP inequality
//   [[-A^T Q - Q A, C^T - Q B], [C - B^T Q, D + D^T]] >= 0,  Q >= eps I
// approximately, by Dykstra alternating projections between the PSD cone
// and the affine image of symmetric Q. D = 0 path.
KypResult solve_kyp(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                    const Eigen::MatrixXd& C, const KypOptions& opts = {});

// Symmetrize, clamp eigenvalues below eps_floor = 1e-8 * max(1, lambda_max)
// up to eps_floor, reassemble. Keeps the result invertible.
Eigen::MatrixXd nearest_psd(const Eigen::MatrixXd& m);

struct PhMatrices {
  Eigen::MatrixXd J, R, G, P, S, N;
};

// J = (A Q^-1 - Q^-T A^T)/2, R = -(A Q^-1 + Q^-T A^T)/2 (sign chosen so
// (J - R) Q = A holds and R is PSD under the KYP Lyapunov condition),
// G = (Q^-T C^T + B)/2, P = (Q^-T C^T - B)/2, S/N from D.
PhMatrices build_ph_from_ss(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                            const Eigen::MatrixXd& C, const Eigen::MatrixXd& D,
                            const Eigen::MatrixXd& Q);

struct PhDiagnostics {
  bool kyp_feasible = false;
  bool kyp_converged = false;
  int kyp_sweeps = 0;
  double kyp_neg_mass = 0.0;
  double q_projection_dist = 0.0;  // Frobenius ||Q - Q_tilde||
  double r_projection_dist = 0.0;  // Frobenius shift applied to R_lin
  double io_discrepancy = 0.0;     // omega-grid gap caused by R projection
};

struct LinearPH {
  Eigen::MatrixXd J, R, G, P;      // normalized, Q_lin = I
  Eigen::MatrixXd S, N;            // feedthrough split, zero when D = 0
  Eigen::MatrixXd V;               // Cholesky factor of pre-normalization Q
  PhDiagnostics diag;

  int n_x() const { return static_cast<int>(J.rows()); }
  int n_p() const { return static_cast<int>(G.cols()); }
};

// State change z = V^T x with Q = V V^T; preserves the transfer function
// and leaves Q_lin = I.
LinearPH cholesky_normalize(const PhMatrices& ph, const Eigen::MatrixXd& Q);

// The normalized system read back as an ordinary state space.
CtStateSpace to_state_space(const LinearPH& ph);

// Full pipeline from a continuous-time estimate: KYP solve, PSD repair,
// construction, normalization, and (if R_lin is indefinite) an R projection
// whose IO effect is measured on the omega grid.
LinearPH ph_from_estimate(const CtStateSpace& ct, const KypOptions& opts = {});

struct PassivityReport {
  double r_min_eig = 0.0;
  double j_skew_defect = 0.0;      // ||J + J^T||
  double p_norm = 0.0;             // collocation defect
  double q_projection_dist = 0.0;
  double r_projection_dist = 0.0;
  std::string summary;
};

PassivityReport passivity_report(const LinearPH& ph);

}  // namespace phid
