#include "phid/linear_ident.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <complex>
#include <sstream>
#include <stdexcept>

namespace phid {

namespace {

Eigen::MatrixXd block_hankel(const Eigen::MatrixXd& signal, int first_row,
                             int block_rows, int cols) {
  const int n_ch = static_cast<int>(signal.cols());
  Eigen::MatrixXd h(block_rows * n_ch, cols);
  for (int q = 0; q < block_rows; ++q)
    for (int c = 0; c < cols; ++c)
      h.block(q * n_ch, c, n_ch, 1) = signal.row(first_row + q + c).transpose();
  return h;
}

}  // namespace

Dataset Standardizer::apply(const Dataset& ds) const {
  Dataset out = ds;
  for (Eigen::Index ch = 0; ch < out.u.cols(); ++ch)
    out.u.col(ch) = (out.u.col(ch).array() - u_mean(ch)) / u_std(ch);
  for (Eigen::Index ch = 0; ch < out.y.cols(); ++ch) {
    out.y.col(ch) = (out.y.col(ch).array() - y_mean(ch)) / y_std(ch);
    if (out.y_clean.size() > 0)
      out.y_clean.col(ch) = (out.y_clean.col(ch).array() - y_mean(ch)) / y_std(ch);
  }
  return out;
}

Standardizer fit_standardizer(std::span<const Dataset> train_sets) {
  if (train_sets.empty())
    throw std::invalid_argument("standardizer: no training sets");
  const Eigen::Index n_u = train_sets[0].u.cols();
  const Eigen::Index n_y = train_sets[0].y.cols();
  Standardizer s;
  s.u_mean = Eigen::VectorXd::Zero(n_u);
  s.u_std = Eigen::VectorXd::Zero(n_u);
  s.y_mean = Eigen::VectorXd::Zero(n_y);
  s.y_std = Eigen::VectorXd::Zero(n_y);
  double total = 0.0;
  for (const Dataset& ds : train_sets) {
    s.u_mean += ds.u.colwise().sum().transpose();
    s.y_mean += ds.y.colwise().sum().transpose();
    total += static_cast<double>(ds.u.rows());
  }
  s.u_mean /= total;
  s.y_mean /= total;
  for (const Dataset& ds : train_sets) {
    s.u_std += (ds.u.rowwise() - s.u_mean.transpose()).array().square()
                   .colwise().sum().matrix().transpose();
    s.y_std += (ds.y.rowwise() - s.y_mean.transpose()).array().square()
                   .colwise().sum().matrix().transpose();
  }
  s.u_std = (s.u_std / total).cwiseSqrt();
  s.y_std = (s.y_std / total).cwiseSqrt();
  if ((s.u_std.array() <= 0).any() || (s.y_std.array() <= 0).any())
    throw std::invalid_argument("standardizer: zero-variance channel");
  return s;
}

DtStateSpace subspace_id(std::span<const Dataset> datasets, int n_x,
                         int horizon) {
  if (datasets.empty()) throw std::invalid_argument("subspace_id: no data");
  const int n_u = static_cast<int>(datasets[0].u.cols());
  const int n_y = static_cast<int>(datasets[0].y.cols());
  const int i = horizon;
  if (n_x > i * std::min(n_u, n_y))
    throw std::invalid_argument("subspace_id: horizon too small for n_x");

  // Row layout of the stacked data matrix: U_f, W_p = [U_p; Y_p], Y_f.
  const int r_uf = i * n_u;
  const int r_wp = i * (n_u + n_y);
  const int r_yf = i * n_y;

  int total_cols = 0;
  for (const Dataset& ds : datasets) {
    const int j = ds.n_samples() - 2 * i + 1;
    if (j < 1) throw std::invalid_argument("subspace_id: record shorter than 2*horizon");
    total_cols += j;
  }

  Eigen::MatrixXd data(r_uf + r_wp + r_yf, total_cols);
  int col = 0;
  for (const Dataset& ds : datasets) {
    const int j = ds.n_samples() - 2 * i + 1;
    data.block(0, col, r_uf, j) = block_hankel(ds.u, i, i, j);        // U_f
    data.block(r_uf, col, i * n_u, j) = block_hankel(ds.u, 0, i, j);  // U_p
    data.block(r_uf + i * n_u, col, i * n_y, j) =
        block_hankel(ds.y, 0, i, j);                                  // Y_p
    data.block(r_uf + r_wp, col, r_yf, j) = block_hankel(ds.y, i, i, j);
    col += j;
  }

  // LQ factorization via QR of the transpose.
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(data.transpose());
  const int m = static_cast<int>(data.rows());
  Eigen::MatrixXd l =
      qr.matrixQR().topRows(m).triangularView<Eigen::Upper>().toDenseMatrix()
          .transpose();

  const Eigen::MatrixXd l32 = l.block(r_uf + r_wp, r_uf, r_yf, r_wp);
  const Eigen::MatrixXd l31 = l.block(r_uf + r_wp, 0, r_yf, r_uf);
  const Eigen::MatrixXd yf_rows = l.bottomRows(r_yf);

  DtStateSpace out;
  out.ts = datasets[0].ts;

  const double explained =
      (l31.squaredNorm() + l32.squaredNorm()) /
      std::max(yf_rows.squaredNorm(), 1e-300);
  if (explained < 0.5) {
    std::ostringstream os;
    os << "subspace_id: only " << explained
       << " of the future-output energy is predictable from past data and "
          "input; no coherent linear dynamics";
    out.warnings.push_back(os.str());
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(l32,
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  if (sv(n_x - 1) < 1e-10 * std::max(sv(0), 1e-300)) {
    std::ostringstream os;
    os << "subspace_id: oblique projection is rank deficient (sigma_" << n_x
       << " = " << sv(n_x - 1) << " vs sigma_1 = " << sv(0) << ")";
    throw std::runtime_error(os.str());
  }

  const Eigen::MatrixXd gamma =
      svd.matrixU().leftCols(n_x) *
      sv.head(n_x).cwiseSqrt().asDiagonal().toDenseMatrix();

  out.Cd = gamma.topRows(n_y);
  const Eigen::MatrixXd gamma_up = gamma.topRows((i - 1) * n_y);
  const Eigen::MatrixXd gamma_down = gamma.bottomRows((i - 1) * n_y);
  out.Ad = gamma_up.colPivHouseholderQr().solve(gamma_down);

  const double rho =
      out.Ad.eigenvalues().cwiseAbs().maxCoeff();
  if (rho >= 1.0) {
    std::ostringstream os;
    os << "subspace_id: estimated Ad has spectral radius " << rho
       << " >= 1 on dissipative data";
    out.warnings.push_back(os.str());
  }

  // B and per-record initial states by least squares on simulated unit
  // responses; D is forced to zero.
  const int n_rec = static_cast<int>(datasets.size());
  const int n_b = n_x * n_u;
  const int n_unknown = n_b + n_rec * n_x;
  int total_rows = 0;
  for (const Dataset& ds : datasets) total_rows += ds.n_samples() * n_y;

  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(total_rows, n_unknown);
  Eigen::VectorXd rhs(total_rows);
  int row0 = 0;
  for (int r = 0; r < n_rec; ++r) {
    const Dataset& ds = datasets[static_cast<std::size_t>(r)];
    const int nk = ds.n_samples();
    // Unit-B responses.
    for (int a = 0; a < n_x; ++a) {
      for (int bu = 0; bu < n_u; ++bu) {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(n_x);
        for (int k = 0; k < nk; ++k) {
          phi.block(row0 + k * n_y, a * n_u + bu, n_y, 1) = out.Cd * x;
          x = out.Ad * x;
          x(a) += ds.u(k, bu);
        }
      }
    }
    // Unit initial-state responses.
    for (int a = 0; a < n_x; ++a) {
      Eigen::VectorXd x = Eigen::VectorXd::Unit(n_x, a);
      for (int k = 0; k < nk; ++k) {
        phi.block(row0 + k * n_y, n_b + r * n_x + a, n_y, 1) = out.Cd * x;
        x = out.Ad * x;
      }
    }
    for (int k = 0; k < nk; ++k)
      rhs.segment(row0 + k * n_y, n_y) = ds.y.row(k).transpose();
    row0 += nk * n_y;
  }

  const Eigen::VectorXd z = phi.colPivHouseholderQr().solve(rhs);
  out.Bd.resize(n_x, n_u);
  for (int a = 0; a < n_x; ++a)
    for (int bu = 0; bu < n_u; ++bu) out.Bd(a, bu) = z(a * n_u + bu);
  out.Dd = Eigen::MatrixXd::Zero(n_y, n_u);
  return out;
}

CtStateSpace d2c(const DtStateSpace& dt) {
  const Eigen::VectorXcd eig = dt.Ad.eigenvalues();
  for (Eigen::Index k = 0; k < eig.size(); ++k) {
    if (std::abs(eig(k).imag()) < 1e-12 && eig(k).real() <= 0.0) {
      std::ostringstream os;
      os << "d2c: Ad eigenvalue " << eig(k).real()
         << " lies on the closed negative real axis; the principal matrix "
            "logarithm is undefined, consider a higher sample rate";
      throw std::runtime_error(os.str());
    }
  }
  CtStateSpace ct;
  ct.A = dt.Ad.log() / dt.ts;
  // Bd = Phi B with Phi = int_0^Ts exp(A tau) dtau, computed from the block
  // exponential of [[A, I], [0, 0]].
  const int n = static_cast<int>(ct.A.rows());
  Eigen::MatrixXd blk = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  blk.topLeftCorner(n, n) = ct.A * dt.ts;
  blk.topRightCorner(n, n) = Eigen::MatrixXd::Identity(n, n) * dt.ts;
  const Eigen::MatrixXd phi = blk.exp().topRightCorner(n, n);
  ct.B = phi.colPivHouseholderQr().solve(dt.Bd);
  ct.C = dt.Cd;
  ct.D = dt.Dd;
  return ct;
}

DtStateSpace c2d(const CtStateSpace& ct, double ts) {
  const int n = static_cast<int>(ct.A.rows());
  const int m = static_cast<int>(ct.B.cols());
  Eigen::MatrixXd blk = Eigen::MatrixXd::Zero(n + m, n + m);
  blk.topLeftCorner(n, n) = ct.A * ts;
  blk.topRightCorner(n, m) = ct.B * ts;
  const Eigen::MatrixXd e = blk.exp();
  DtStateSpace dt;
  dt.Ad = e.topLeftCorner(n, n);
  dt.Bd = e.topRightCorner(n, m);
  dt.Cd = ct.C;
  dt.Dd = ct.D;
  dt.ts = ts;
  return dt;
}

Eigen::MatrixXcd freq_response(const CtStateSpace& ct, double omega) {
  const int n = static_cast<int>(ct.A.rows());
  Eigen::MatrixXcd m =
      std::complex<double>(0.0, omega) *
          Eigen::MatrixXcd::Identity(n, n) -
      ct.A.cast<std::complex<double>>();
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(m);
  if (!lu.isInvertible())
    throw std::runtime_error("freq_response: jwI - A is singular");
  return ct.C.cast<std::complex<double>>() *
             lu.solve(ct.B.cast<std::complex<double>>()) +
         ct.D.cast<std::complex<double>>();
}

double freq_response_gap(const CtStateSpace& a, const CtStateSpace& b,
                         std::span<const double> omegas) {
  double max_dev = 0.0;
  double max_mag = 0.0;
  for (double w : omegas) {
    const Eigen::MatrixXcd ha = freq_response(a, w);
    const Eigen::MatrixXcd hb = freq_response(b, w);
    max_dev = std::max(max_dev, (ha - hb).norm());
    max_mag = std::max(max_mag, ha.norm());
  }
  return max_dev / std::max(max_mag, 1e-300);
}

std::vector<double> default_omega_grid(double lo, double hi, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  const double step = std::log(hi / lo) / (n - 1);
  for (int k = 0; k < n; ++k) out[static_cast<std::size_t>(k)] = lo * std::exp(step * k);
  return out;
}

Eigen::MatrixXd simulate_dt(const DtStateSpace& dt, const Eigen::MatrixXd& u,
                            const Eigen::VectorXd& x0) {
  const int nk = static_cast<int>(u.rows());
  Eigen::MatrixXd y(nk, dt.Cd.rows());
  Eigen::VectorXd x = x0;
  for (int k = 0; k < nk; ++k) {
    y.row(k) = (dt.Cd * x + dt.Dd * u.row(k).transpose()).transpose();
    x = dt.Ad * x + dt.Bd * u.row(k).transpose();
  }
  return y;
}

}  // namespace phid
