#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "phid/autodiff.hpp"
#include "phid/ph_construct.hpp"

namespace phid {

enum class Mode { LinearDirect, NnRandom, NnLinearInit };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

// All trainable parameters of the structured model: the encoder (residual:
// a linear readout of the flattened lag window plus an MLP correction),
// the five matrix/Hamiltonian MLPs, and in linear-direct mode the constant
// matrix factors. Matrices live in one flat list so the optimizer and the
// tape can treat them uniformly.
struct PhnnParams {
  Mode mode = Mode::NnLinearInit;
  int n_x = 6, n_p = 3, n_y = 3, n_u = 1;
  int n_a = 10, n_b = 10;
  LinearPH lin;  // embedded linear estimate (NnLinearInit); empty otherwise

  std::vector<Eigen::MatrixXd> theta;

  struct Net {
    std::vector<int> w;  // indices into theta, one per layer
    std::vector<int> b;
  };
  Net enc_lin;                              // single linear layer
  Net enc_mlp;                              // two tanh hidden layers
  Net net_a, net_b, net_g, net_p, net_h;    // state-dependent matrices / H
  int idx_ac = -1, idx_bc = -1, idx_gc = -1, idx_pc = -1, idx_lc = -1;

  std::vector<int> encoder_indices() const;
  int window_size() const { return n_a * n_y + n_b * n_u; }
};

struct ModelDims {
  int n_x = 6, n_p = 3, n_y = 3, n_u = 1, n_a = 10, n_b = 10;
  int enc_hidden = 64;
  int mat_hidden = 16;
};

// Glorot-uniform hidden layers; final layers zeroed in nn-linear-init mode.
// The LinearPH argument is embedded only in nn-linear-init mode.
PhnnParams init_params(Mode mode, std::uint64_t seed, const ModelDims& dims,
                       const LinearPH& lin = {});

// One staging of the parameters onto a tape; node ids are parallel to
// params.theta. Constants for the embedded linear estimate are staged once.
struct TapedModel {
  ad::Tape* tape = nullptr;
  const PhnnParams* params = nullptr;
  std::vector<int> leaf;
  int lin_j = -1, lin_rfac = -1, lin_g = -1, lin_p = -1;
};

TapedModel stage(ad::Tape& tape, const PhnnParams& params);

// Symmetric PSD square root (eigenvalues clamped at zero). Used to embed the
// linear dissipation inside the R factor so its network stays trainable.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& r);

struct MatrixNodes {
  int J = -1, R = -1, G = -1, P = -1;
};

MatrixNodes eval_matrices(TapedModel& m, int x);

struct HamiltonianNodes {
  int value = -1;  // 1x1
  int grad = -1;   // n_x x 1
};

// H through the ELU head; the input-gradient is built compositionally from
// first-derivative activation primitives so a single reverse pass suffices.
HamiltonianNodes hamiltonian_and_grad(TapedModel& m, int x);

int f_theta(TapedModel& m, int x, int u);
int h_theta(TapedModel& m, int x);

struct FlowNodes {
  int dx = -1, y = -1;
};
// f and h sharing one matrix/Hamiltonian evaluation at x.
FlowNodes f_and_h(TapedModel& m, int x, int u);

// psi_eta applied to flattened lag windows (y window stacked over u window).
int encoder_forward(TapedModel& m, int y_past, int u_past);

// Convenience plain-Eigen evaluations (build a scratch tape internally).
Eigen::MatrixXd eval_j(const PhnnParams& p, const Eigen::VectorXd& x);
Eigen::MatrixXd eval_r(const PhnnParams& p, const Eigen::VectorXd& x);
std::pair<double, Eigen::VectorXd> eval_hamiltonian(const PhnnParams& p,
                                                    const Eigen::VectorXd& x);
Eigen::VectorXd eval_encoder(const PhnnParams& p, const Eigen::VectorXd& y_past,
                             const Eigen::VectorXd& u_past);

}  // namespace phid
