#include "phid/ph_construct.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace phid {

namespace {

Eigen::MatrixXd psd_project(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0);
  return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

double negative_mass(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
      0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return -eig.eigenvalues().cwiseMin(0.0).sum();
}

double min_eig(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
      0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

// Bartels-Stewart solve of A^T Q + Q A = -W for Hurwitz A (unique solution).
Eigen::MatrixXd lyapunov_metric(const Eigen::MatrixXd& A,
                                const Eigen::MatrixXd& W) {
  const Eigen::Index n = A.rows();
  const Eigen::ComplexSchur<Eigen::MatrixXd> schur(A.transpose());
  const Eigen::MatrixXcd t = schur.matrixT();  // upper triangular
  const Eigen::MatrixXcd u = schur.matrixU();
  // T Y + Y T^H = C with C = -U^H W U; then Q = U Y U^H.
  const Eigen::MatrixXcd c = -u.adjoint() * W * u;
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  // (Y T^H) column j couples to columns k >= j of Y, so sweep backwards.
  for (Eigen::Index j = n - 1; j >= 0; --j) {
    Eigen::VectorXcd rhs = c.col(j);
    for (Eigen::Index k = j + 1; k < n; ++k)
      rhs -= std::conj(t(j, k)) * y.col(k);
    Eigen::MatrixXcd lhs = t;
    lhs.diagonal().array() += std::conj(t(j, j));
    y.col(j) = lhs.triangularView<Eigen::Upper>().solve(rhs);
  }
  const Eigen::MatrixXd q = (u * y * u.adjoint()).real();
  return 0.5 * (q + q.transpose());
}

}  // namespace

KypResult solve_kyp(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                    const Eigen::MatrixXd& C, const KypOptions& opts) {
  const int n = static_cast<int>(A.rows());
  const int p = static_cast<int>(B.cols());
  if (A.cols() != n || B.rows() != n || C.cols() != n || C.rows() != p)
    throw std::invalid_argument("solve_kyp: inconsistent dimensions");

  // Symmetric basis of Q.
  std::vector<Eigen::MatrixXd> basis;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, n);
      e(i, j) = e(j, i) = 1.0;
      basis.push_back(e);
    }
  const int nq = static_cast<int>(basis.size());

  // Extended block-diagonal image: the KYP matrix W(Q), the bound Q - eps I,
  // and a standalone copy of the Lyapunov block -A^T Q - Q A (which is what
  // keeps R PSD when the full LMI is infeasible).
  const int mw = n + p;
  const int mz = mw + n + n;
  auto assemble = [&](const Eigen::MatrixXd& q) {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(mz, mz);
    const Eigen::MatrixXd lyap = -A.transpose() * q - q * A;
    z.topLeftCorner(n, n) = lyap;
    z.block(0, n, n, p) = C.transpose() - q * B;
    z.block(n, 0, p, n) = C - B.transpose() * q;
    z.block(mw, mw, n, n) = q - opts.eps_q * Eigen::MatrixXd::Identity(n, n);
    z.block(mw + n, mw + n, n, n) = lyap;
    return z;
  };

  const Eigen::MatrixXd z0 = assemble(Eigen::MatrixXd::Zero(n, n));
  Eigen::MatrixXd map(mz * mz, nq);
  for (int k = 0; k < nq; ++k) {
    Eigen::MatrixXd zk = assemble(basis[static_cast<std::size_t>(k)]) - z0;
    map.col(k) = Eigen::Map<Eigen::VectorXd>(zk.data(), zk.size());
  }
  const Eigen::VectorXd vz0 =
      Eigen::Map<const Eigen::VectorXd>(z0.data(), z0.size());
  const Eigen::LDLT<Eigen::MatrixXd> gram((map.transpose() * map).eval());

  auto affine_project = [&](const Eigen::MatrixXd& z, Eigen::VectorXd& coef) {
    const Eigen::VectorXd vz =
        Eigen::Map<const Eigen::VectorXd>(z.data(), z.size());
    coef = gram.solve(map.transpose() * (vz - vz0));
    Eigen::VectorXd v = vz0 + map * coef;
    return Eigen::MatrixXd(Eigen::Map<Eigen::MatrixXd>(v.data(), mz, mz));
  };

  auto coef_to_q = [&](const Eigen::VectorXd& coef) {
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
    for (int k = 0; k < nq; ++k) q += coef(k) * basis[static_cast<std::size_t>(k)];
    return q;
  };

  // Dykstra between the PSD cone and the affine image, starting at Q = I.
  Eigen::VectorXd coef;
  Eigen::MatrixXd x = assemble(Eigen::MatrixXd::Identity(n, n));
  Eigen::MatrixXd corr = Eigen::MatrixXd::Zero(mz, mz);
  affine_project(x, coef);  // initialize coefficients

  KypResult best;
  best.Q = Eigen::MatrixXd::Identity(n, n);
  double best_score = std::numeric_limits<double>::infinity();
  double prev_disp = std::numeric_limits<double>::infinity();
  int growing = 0;

  KypResult res;
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    const Eigen::MatrixXd y = psd_project(x + corr);
    corr = x + corr - y;
    const Eigen::MatrixXd x_new = affine_project(y, coef);
    const double disp = (x_new - x).norm();
    x = x_new;
    res.sweeps = sweep + 1;

    const Eigen::MatrixXd q = coef_to_q(coef);
    const Eigen::MatrixXd w = assemble(q).topLeftCorner(mw, mw);
    const double score = negative_mass(w) - std::min(min_eig(q), 0.0) * n;
    if (score < best_score) {
      best_score = score;
      best.Q = q;
    }

    if (disp < opts.tol) {
      res.converged = true;
      break;
    }
    growing = disp > prev_disp ? growing + 1 : 0;
    prev_disp = disp;
    if (growing >= 100) break;  // diverging; fall back to the best iterate
  }

  res.Q = res.converged ? coef_to_q(coef) : best.Q;
  res.Q = 0.5 * (res.Q + res.Q.transpose());
  Eigen::MatrixXd w(mw, mw);
  {
    const Eigen::MatrixXd z = assemble(res.Q);
    w = z.topLeftCorner(mw, mw);
  }
  res.lmi_neg_mass = negative_mass(w);
  res.q_min_eig = min_eig(res.Q);
  res.feasible = res.converged &&
                 res.lmi_neg_mass <= 1e-6 * std::max(1.0, w.norm()) &&
                 res.q_min_eig >= -1e-8;
  return res;
}

Eigen::MatrixXd nearest_psd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols())
    throw std::invalid_argument("nearest_psd: matrix must be square");
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const double lam_max = eig.eigenvalues().maxCoeff();
  const double floor = 1e-8 * std::max(1.0, lam_max);
  const Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(floor);
  return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

PhMatrices build_ph_from_ss(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                            const Eigen::MatrixXd& C, const Eigen::MatrixXd& D,
                            const Eigen::MatrixXd& Q) {
  const int n = static_cast<int>(A.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (Q + Q.transpose()));
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(
        "build_ph_from_ss: Q is not positive definite; run nearest_psd first");
  const Eigen::MatrixXd qi = llt.solve(Eigen::MatrixXd::Identity(n, n));

  PhMatrices ph;
  const Eigen::MatrixXd aqi = A * qi;
  ph.J = 0.5 * (aqi - aqi.transpose());
  ph.R = -0.5 * (aqi + aqi.transpose());
  const Eigen::MatrixXd qict = qi * C.transpose();
  ph.G = 0.5 * (qict + B);
  ph.P = 0.5 * (qict - B);
  ph.S = 0.5 * (D + D.transpose());
  ph.N = 0.5 * (D - D.transpose());

  const double kappa = Q.norm() * qi.norm();
  const double tol = 1e-10 * std::max(1.0, kappa) *
                     std::max({1.0, A.norm(), B.norm(), C.norm()});
  const double res_a = ((ph.J - ph.R) * Q - A).norm();
  const double res_b = (ph.G - ph.P - B).norm();
  const double res_c = ((ph.G + ph.P).transpose() * Q - C).norm();
  const double res_d = (ph.S + ph.N - D).norm();
  if (res_a > tol || res_b > tol || res_c > tol || res_d > tol) {
    std::ostringstream os;
    os << "build_ph_from_ss: construction identities violated (residuals "
       << res_a << ", " << res_b << ", " << res_c << ", " << res_d << ")";
    throw std::runtime_error(os.str());
  }
  return ph;
}

LinearPH cholesky_normalize(const PhMatrices& ph, const Eigen::MatrixXd& Q) {
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (Q + Q.transpose()));
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("cholesky_normalize: Cholesky failed");
  const Eigen::MatrixXd v = llt.matrixL();

  LinearPH out;
  out.V = v;
  out.J = v.transpose() * ph.J * v;
  out.R = v.transpose() * ph.R * v;
  out.G = v.transpose() * ph.G;
  out.P = v.transpose() * ph.P;
  out.S = ph.S;
  out.N = ph.N;
  // Exact skew/symmetry is restored after the congruence.
  out.J = 0.5 * (out.J - out.J.transpose().eval());
  out.R = 0.5 * (out.R + out.R.transpose().eval());
  return out;
}

CtStateSpace to_state_space(const LinearPH& ph) {
  CtStateSpace ct;
  ct.A = ph.J - ph.R;
  ct.B = ph.G - ph.P;
  ct.C = (ph.G + ph.P).transpose();
  ct.D = ph.S + ph.N;
  return ct;
}

LinearPH ph_from_estimate(const CtStateSpace& ct, const KypOptions& opts) {
  const KypResult kyp = solve_kyp(ct.A, ct.B, ct.C, opts);
  Eigen::MatrixXd q = nearest_psd(kyp.Q);

  // When the full LMI is infeasible (padded ports), the returned metric can
  // violate the Lyapunov block, which would make R_lin indefinite and force a
  // transfer-distorting repair below. The construction identities hold for
  // any positive definite metric, so restore the Lyapunov property instead:
  // clamp L = -A^T Q - Q A onto the PSD cone and re-solve the Lyapunov
  // equation for the nearest metric realizing the clamped block exactly.
  {
    const Eigen::MatrixXd lyap = -ct.A.transpose() * q - q * ct.A;
    const bool hurwitz = ct.A.eigenvalues().real().maxCoeff() < -1e-8;
    if (hurwitz && min_eig(lyap) < -1e-10 * std::max(1.0, lyap.norm())) {
      const Eigen::MatrixXd repaired =
          lyapunov_metric(ct.A, nearest_psd(lyap));
      if (min_eig(repaired) > 0.0) q = repaired;
    }
  }

  const PhMatrices ph = build_ph_from_ss(ct.A, ct.B, ct.C, ct.D, q);
  LinearPH lph = cholesky_normalize(ph, q);

  lph.diag.kyp_feasible = kyp.feasible;
  lph.diag.kyp_converged = kyp.converged;
  lph.diag.kyp_sweeps = kyp.sweeps;
  lph.diag.kyp_neg_mass = kyp.lmi_neg_mass;
  lph.diag.q_projection_dist = (q - kyp.Q).norm();

  // If the Lyapunov condition did not hold, R_lin may be indefinite; repair
  // it and measure the IO deviation the repair induces.
  if (min_eig(lph.R) < -1e-10) {
    const CtStateSpace before = to_state_space(lph);
    const Eigen::MatrixXd r_fixed = nearest_psd(lph.R);
    lph.diag.r_projection_dist = (r_fixed - lph.R).norm();
    lph.R = r_fixed;
    const CtStateSpace after = to_state_space(lph);
    const std::vector<double> grid = default_omega_grid();
    lph.diag.io_discrepancy = freq_response_gap(before, after, grid);
  }
  return lph;
}

PassivityReport passivity_report(const LinearPH& ph) {
  PassivityReport rep;
  rep.r_min_eig = min_eig(ph.R);
  rep.j_skew_defect = (ph.J + ph.J.transpose()).norm();
  rep.p_norm = ph.P.norm();
  rep.q_projection_dist = ph.diag.q_projection_dist;
  rep.r_projection_dist = ph.diag.r_projection_dist;
  std::ostringstream os;
  os << "min eig(R_lin) = " << rep.r_min_eig
     << ", ||J_lin + J_lin^T|| = " << rep.j_skew_defect
     << ", ||P_lin|| = " << rep.p_norm
     << ", Q projection distance = " << rep.q_projection_dist
     << ", R projection distance = " << rep.r_projection_dist
     << ", KYP " << (ph.diag.kyp_feasible ? "feasible" : "infeasible")
     << " (neg mass " << ph.diag.kyp_neg_mass << ", "
     << ph.diag.kyp_sweeps << " sweeps)";
  rep.summary = os.str();
  return rep;
}

}  // namespace phid
