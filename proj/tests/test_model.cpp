#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "phid/model.hpp"

using namespace phid;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd random_vector(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = dist(rng);
  return v;
}

// A well-formed normalized linear PH model to embed in nn-linear-init.
LinearPH make_linear_ph(std::mt19937_64& rng) {
  const int n = 6, p = 3;
  LinearPH lin;
  MatrixXd a(n, n);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = dist(rng);
  lin.J = 0.5 * (a - a.transpose());
  MatrixXd b(n, n);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = dist(rng);
  lin.R = b * b.transpose() + 0.1 * MatrixXd::Identity(n, n);
  lin.G = MatrixXd::Zero(n, p);
  lin.P = MatrixXd::Zero(n, p);
  for (Eigen::Index i = 0; i < lin.G.size(); ++i) lin.G.data()[i] = dist(rng);
  lin.S = MatrixXd::Zero(p, p);
  lin.N = MatrixXd::Zero(p, p);
  lin.V = MatrixXd::Identity(n, n);
  return lin;
}

double min_eig(const MatrixXd& s) {
  return Eigen::SelfAdjointEigenSolver<MatrixXd>(0.5 * (s + s.transpose()))
      .eigenvalues()
      .minCoeff();
}

}  // namespace

TEST_CASE("nn-linear-init starts exactly at the embedded linear model") {
  std::mt19937_64 rng(9);
  const LinearPH lin = make_linear_ph(rng);
  const PhnnParams p = init_params(Mode::NnLinearInit, 123, ModelDims{}, lin);

  std::mt19937_64 xr(1);
  for (int trial = 0; trial < 5; ++trial) {
    const VectorXd x = random_vector(6, xr);
    CHECK((eval_j(p, x) - lin.J).norm() == 0.0);
    // R is rebuilt from its PSD square root (so the dissipation network has
    // a nonzero gradient path), exact only to factorization roundoff.
    CHECK((eval_r(p, x) - lin.R).norm() < 1e-12 * std::max(1.0, lin.R.norm()));
    const auto [h, grad] = eval_hamiltonian(p, x);
    CHECK(h == 0.5 * x.squaredNorm());
    CHECK((grad - x).norm() == 0.0);
  }
}

TEST_CASE("J is skew and R is positive semidefinite by construction") {
  for (Mode mode : {Mode::NnRandom, Mode::LinearDirect}) {
    const PhnnParams p = init_params(mode, 77, ModelDims{});
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
      const VectorXd x = random_vector(6, rng, 2.0);
      const MatrixXd j = eval_j(p, x);
      const MatrixXd r = eval_r(p, x);
      CHECK((j + j.transpose()).norm() < 1e-12 * std::max(1.0, j.norm()));
      CHECK(min_eig(r) > -1e-12);
    }
  }
}

TEST_CASE("Hamiltonian input-gradient matches finite differences") {
  std::mt19937_64 lin_rng(3);
  const LinearPH lin = make_linear_ph(lin_rng);
  for (Mode mode : {Mode::NnRandom, Mode::NnLinearInit, Mode::LinearDirect}) {
    PhnnParams p = mode == Mode::NnLinearInit
                       ? init_params(mode, 11, ModelDims{}, lin)
                       : init_params(mode, 11, ModelDims{});
    if (mode == Mode::NnLinearInit) {
      // Perturb the heads so the NN contribution is active.
      std::mt19937_64 rng(5);
      for (int idx : {p.net_h.w[2], p.net_a.w[2], p.net_b.w[2]}) {
        std::uniform_real_distribution<double> dist(-0.2, 0.2);
        for (Eigen::Index i = 0; i < p.theta[idx].size(); ++i)
          p.theta[idx].data()[i] = dist(rng);
      }
    }
    std::mt19937_64 rng(13);
    const double h = 1e-6;
    for (int trial = 0; trial < 50; ++trial) {
      const VectorXd x = random_vector(6, rng, 1.5);
      const auto [val, grad] = eval_hamiltonian(p, x);
      (void)val;
      for (int i = 0; i < 6; ++i) {
        VectorXd xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        const double fd =
            (eval_hamiltonian(p, xp).first - eval_hamiltonian(p, xm).first) /
            (2.0 * h);
        CHECK(std::abs(grad(i) - fd) /
                  std::max({std::abs(grad(i)), std::abs(fd), 1.0}) < 1e-6);
      }
    }
  }
}

TEST_CASE("Hamiltonian through the ELU head is bounded below by -1") {
  const PhnnParams p = init_params(Mode::NnRandom, 5, ModelDims{});
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const VectorXd x = random_vector(6, rng, 5.0);
    CHECK(eval_hamiltonian(p, x).first >= -1.0);
  }
}

TEST_CASE("linear-direct Hamiltonian is the quadratic form of L L^T") {
  const PhnnParams p = init_params(Mode::LinearDirect, 21, ModelDims{});
  const MatrixXd l = p.theta[static_cast<std::size_t>(p.idx_lc)];
  const MatrixXd q = l * l.transpose();
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const VectorXd x = random_vector(6, rng);
    const auto [h, grad] = eval_hamiltonian(p, x);
    CHECK(h == doctest::Approx(0.5 * x.dot(q * x)).epsilon(1e-12));
    CHECK((grad - q * x).norm() < 1e-12 * std::max(1.0, grad.norm()));
    CHECK(h >= 0.0);
  }
}

TEST_CASE("flow and output agree with a plain-Eigen reassembly") {
  std::mt19937_64 lin_rng(31);
  const LinearPH lin = make_linear_ph(lin_rng);
  const PhnnParams p = init_params(Mode::NnLinearInit, 37, ModelDims{}, lin);
  std::mt19937_64 rng(41);
  const VectorXd x = random_vector(6, rng);
  const VectorXd u = random_vector(3, rng);

  ad::Tape t;
  TapedModel m = stage(t, p);
  const FlowNodes fh = f_and_h(m, t.constant(x), t.constant(u));

  const MatrixXd j = eval_j(p, x);
  const MatrixXd r = eval_r(p, x);
  const auto [hval, grad] = eval_hamiltonian(p, x);
  (void)hval;
  // G = lin.G, P = 0 at the zero-initialized heads.
  const VectorXd dx_ref = (j - r) * grad + (lin.G - lin.P) * u;
  const VectorXd y_ref = (lin.G + lin.P).transpose() * grad;
  CHECK((t.val(fh.dx).col(0) - dx_ref).norm() < 1e-12);
  CHECK((t.val(fh.y).col(0) - y_ref).norm() < 1e-12);
}

TEST_CASE("encoder responds to its inputs and is seed-deterministic") {
  const PhnnParams p = init_params(Mode::NnRandom, 101, ModelDims{});
  std::mt19937_64 rng(43);
  const VectorXd y_past = random_vector(30, rng);
  const VectorXd u_past = random_vector(10, rng);
  const VectorXd x = eval_encoder(p, y_past, u_past);
  CHECK(x.size() == 6);
  CHECK(x.allFinite());

  VectorXd y2 = y_past;
  y2(7) += 0.5;
  CHECK((eval_encoder(p, y2, u_past) - x).norm() > 1e-8);
  VectorXd u2 = u_past;
  u2(3) -= 0.5;
  CHECK((eval_encoder(p, y_past, u2) - x).norm() > 1e-8);

  const PhnnParams same = init_params(Mode::NnRandom, 101, ModelDims{});
  CHECK((eval_encoder(same, y_past, u_past) - x).norm() == 0.0);
  const PhnnParams other = init_params(Mode::NnRandom, 102, ModelDims{});
  CHECK((eval_encoder(other, y_past, u_past) - x).norm() > 1e-8);
}

TEST_CASE("parameter layout matches the mode") {
  const PhnnParams direct = init_params(Mode::LinearDirect, 1, ModelDims{});
  CHECK(direct.idx_ac >= 0);
  CHECK(direct.net_a.w.empty());

  const PhnnParams random = init_params(Mode::NnRandom, 1, ModelDims{});
  CHECK(random.idx_ac == -1);
  CHECK(random.net_a.w.size() == 3);
  CHECK(random.net_h.w.size() == 3);
  // Glorot heads are nonzero in nn-random mode.
  CHECK(random.theta[static_cast<std::size_t>(random.net_h.w[2])].norm() > 0.0);

  std::mt19937_64 rng(3);
  const PhnnParams init =
      init_params(Mode::NnLinearInit, 1, ModelDims{}, make_linear_ph(rng));
  CHECK(init.theta[static_cast<std::size_t>(init.net_h.w[2])].norm() == 0.0);
  CHECK(init.theta[static_cast<std::size_t>(init.net_a.w[2])].norm() == 0.0);

  // The encoder index list covers exactly the encoder parameters.
  const auto enc = init.encoder_indices();
  CHECK(enc.size() == 8);  // 1 linear + 3 MLP layers, weight and bias each

  CHECK_THROWS_AS(init_params(Mode::NnLinearInit, 1, ModelDims{}),
                  std::invalid_argument);
}

TEST_CASE("mode names round trip") {
  for (Mode m : {Mode::LinearDirect, Mode::NnRandom, Mode::NnLinearInit})
    CHECK(mode_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(mode_from_string("bogus"), std::invalid_argument);
}
