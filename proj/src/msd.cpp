#include "phid/msd.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace phid {

namespace {

// splitmix64, used to derive independent sub-seeds from one base seed.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + salt * 0x9e3779b97f4a7c15ULL + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void validate(const MsdConfig& cfg) {
  if (cfg.n_masses < 1) throw std::invalid_argument("msd: n_masses < 1");
  if (cfg.mass.size() != cfg.n_masses || cfg.stiffness.size() != cfg.n_masses ||
      cfg.damping.size() != cfg.n_masses)
    throw std::invalid_argument("msd: parameter vectors must have n_masses entries");
  if ((cfg.mass.array() <= 0).any() || (cfg.stiffness.array() <= 0).any())
    throw std::invalid_argument("msd: masses and stiffnesses must be positive");
  if ((cfg.damping.array() < 0).any())
    throw std::invalid_argument("msd: damping must be nonnegative");
  if (cfg.n_lines < 1) throw std::invalid_argument("msd: n_lines < 1");
}

}  // namespace

MsdMatrices assemble_matrices(const MsdConfig& cfg) {
  validate(cfg);
  const int n = cfg.n_masses;
  MsdMatrices out;
  out.M = cfg.mass.asDiagonal();
  out.K = Eigen::MatrixXd::Zero(n, n);
  out.D = Eigen::MatrixXd::Zero(n, n);
  // Element i couples mass i to mass i-1 (element 0 couples to the wall);
  // the last mass has no element on its free side.
  for (int i = 0; i < n; ++i) {
    out.K(i, i) += cfg.stiffness(i);
    out.D(i, i) += cfg.damping(i);
    if (i > 0) {
      out.K(i - 1, i - 1) += cfg.stiffness(i);
      out.K(i - 1, i) -= cfg.stiffness(i);
      out.K(i, i - 1) -= cfg.stiffness(i);
      out.D(i - 1, i - 1) += cfg.damping(i);
      out.D(i - 1, i) -= cfg.damping(i);
      out.D(i, i - 1) -= cfg.damping(i);
    }
  }
  return out;
}

double multisine(const MsdConfig& cfg, const Eigen::VectorXd& phases,
                 double t) {
  if (phases.size() != cfg.n_lines)
    throw std::invalid_argument("msd: phases must have n_lines entries");
  double u = 0.0;
  for (int i = 1; i <= cfg.n_lines; ++i)
    u += std::sin(2.0 * std::numbers::pi * i * cfg.f0_hz * t + phases(i - 1));
  return u;
}

MsdTrajectory simulate(const MsdConfig& cfg, const Eigen::VectorXd& x0,
                       const Eigen::VectorXd& phases) {
  validate(cfg);
  const int n = cfg.n_masses;
  if (x0.size() != 2 * n)
    throw std::invalid_argument("msd: x0 must have 2*n_masses entries");
  if (cfg.substeps < 10)
    throw std::invalid_argument("msd: need at least 10 substeps per sample");

  const MsdMatrices mats = assemble_matrices(cfg);
  const Eigen::VectorXd minv = cfg.mass.cwiseInverse();
  const double ts = 1.0 / cfg.sample_rate_hz;
  const double h = ts / cfg.substeps;
  const int n_samples = static_cast<int>(std::llround(cfg.duration_s / ts));

  // State x = (q, p) with p = M qdot. The exciting force is held at its
  // sampled value between output samples, matching the sampled-data setting
  // the identification pipeline assumes.
  auto deriv = [&](const Eigen::VectorXd& x, double u_held) {
    Eigen::VectorXd dx(2 * n);
    const Eigen::VectorXd q = x.head(n);
    const Eigen::VectorXd qdot = minv.cwiseProduct(x.tail(n));
    dx.head(n) = qdot;
    Eigen::VectorXd force = Eigen::VectorXd::Zero(n);
    force(0) = u_held;
    dx.tail(n) =
        force - mats.D * (qdot.array().cube().matrix() + qdot) - mats.K * q;
    return dx;
  };

  MsdTrajectory out;
  out.u.resize(n_samples, 1);
  out.velocity.resize(n_samples, n);
  out.state.resize(n_samples, 2 * n);

  Eigen::VectorXd x = x0;
  double t = 0.0;
  for (int k = 0; k < n_samples; ++k) {
    const double u_held = multisine(cfg, phases, t);
    out.u(k, 0) = u_held;
    out.velocity.row(k) = minv.cwiseProduct(x.tail(n)).transpose();
    out.state.row(k) = x.transpose();
    for (int s = 0; s < cfg.substeps; ++s) {
      const Eigen::VectorXd k1 = deriv(x, u_held);
      const Eigen::VectorXd k2 = deriv(x + 0.5 * h * k1, u_held);
      const Eigen::VectorXd k3 = deriv(x + 0.5 * h * k2, u_held);
      const Eigen::VectorXd k4 = deriv(x + h * k3, u_held);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t += h;
      if (!x.allFinite()) {
        std::ostringstream os;
        os << "msd: non-finite state at sample " << k << ", substep " << s;
        throw std::runtime_error(os.str());
      }
    }
  }
  return out;
}

double mechanical_energy(const MsdMatrices& mats, const Eigen::VectorXd& x) {
  const int n = static_cast<int>(mats.M.rows());
  const Eigen::VectorXd q = x.head(n);
  const Eigen::VectorXd p = x.tail(n);
  return 0.5 * p.dot(mats.M.diagonal().cwiseInverse().cwiseProduct(p)) +
         0.5 * q.dot(mats.K * q);
}

std::vector<Dataset> make_experiment_set(const MsdConfig& cfg) {
  validate(cfg);
  const int n = cfg.n_masses;
  std::vector<Dataset> out;
  out.reserve(8);
  for (int rec = 0; rec < 8; ++rec) {
    const std::uint64_t rec_seed = mix_seed(cfg.seed, 1000 + rec);
    std::mt19937_64 rng(rec_seed);
    std::uniform_real_distribution<double> phase_dist(0.0, std::numbers::pi);
    std::uniform_real_distribution<double> state_dist(-0.5, 0.5);

    Eigen::VectorXd phases(cfg.n_lines);
    for (int i = 0; i < cfg.n_lines; ++i) phases(i) = phase_dist(rng);
    Eigen::VectorXd x0(2 * n);
    for (int i = 0; i < 2 * n; ++i) x0(i) = state_dist(rng);

    const MsdTrajectory traj = simulate(cfg, x0, phases);

    Dataset ds;
    ds.u = traj.u;
    ds.y_clean = traj.velocity;
    ds.ts = 1.0 / cfg.sample_rate_hz;
    ds.seed = rec_seed;
    ds.role = rec < 5 ? "train" : (rec < 7 ? "val" : "test");

    // Per-channel noise scaled to the clean signal's standard deviation.
    std::mt19937_64 noise_rng(mix_seed(cfg.seed, 2000 + rec));
    std::normal_distribution<double> gauss(0.0, 1.0);
    ds.y = ds.y_clean;
    const double gain = std::pow(10.0, -cfg.snr_db / 20.0);
    for (int ch = 0; ch < n; ++ch) {
      const Eigen::VectorXd col = ds.y_clean.col(ch);
      const double sigma =
          std::sqrt((col.array() - col.mean()).square().mean());
      for (Eigen::Index k = 0; k < ds.y.rows(); ++k)
        ds.y(k, ch) += gain * sigma * gauss(noise_rng);
    }
    out.push_back(std::move(ds));
  }
  return out;
}

}  // namespace phid
