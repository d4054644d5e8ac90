#include "phid/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace phid {

namespace {

// Appends a dense layer's weight and bias to the flat parameter list.
void add_layer(PhnnParams& p, PhnnParams::Net& net, int fan_in, int fan_out,
               std::mt19937_64& rng, bool zero) {
  Eigen::MatrixXd w(fan_out, fan_in);
  if (zero) {
    w.setZero();
  } else {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  }
  net.w.push_back(static_cast<int>(p.theta.size()));
  p.theta.push_back(std::move(w));
  net.b.push_back(static_cast<int>(p.theta.size()));
  p.theta.push_back(Eigen::MatrixXd::Zero(fan_out, 1));
}

void add_mlp(PhnnParams& p, PhnnParams::Net& net, int in, int hidden, int out,
             std::mt19937_64& rng, bool zero_head) {
  add_layer(p, net, in, hidden, rng, false);
  add_layer(p, net, hidden, hidden, rng, false);
  add_layer(p, net, hidden, out, rng, zero_head);
}

int add_const_matrix(PhnnParams& p, int rows, int cols, std::mt19937_64& rng,
                     double scale) {
  Eigen::MatrixXd m(rows, cols);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  p.theta.push_back(std::move(m));
  return static_cast<int>(p.theta.size()) - 1;
}

// z = W h + b per layer, tanh between layers, linear final layer. Stores
// pre-activation node ids when requested.
int mlp_forward(TapedModel& m, const PhnnParams::Net& net, int x,
                std::vector<int>* pre_acts) {
  ad::Tape& t = *m.tape;
  int h = x;
  const std::size_t n_layers = net.w.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int z = t.add(t.matmul(m.leaf[static_cast<std::size_t>(net.w[l])], h),
                        m.leaf[static_cast<std::size_t>(net.b[l])]);
    if (pre_acts) pre_acts->push_back(z);
    h = (l + 1 < n_layers) ? t.tanh(z) : z;
  }
  return h;
}

}  // namespace

std::string to_string(Mode m) {
  switch (m) {
    case Mode::LinearDirect: return "linear-direct";
    case Mode::NnRandom: return "nn-random";
    case Mode::NnLinearInit: return "nn-linear-init";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  if (s == "linear-direct") return Mode::LinearDirect;
  if (s == "nn-random") return Mode::NnRandom;
  if (s == "nn-linear-init") return Mode::NnLinearInit;
  throw std::invalid_argument("unknown mode: " + s);
}

std::vector<int> PhnnParams::encoder_indices() const {
  std::vector<int> out;
  for (const Net* net : {&enc_lin, &enc_mlp}) {
    out.insert(out.end(), net->w.begin(), net->w.end());
    out.insert(out.end(), net->b.begin(), net->b.end());
  }
  return out;
}

PhnnParams init_params(Mode mode, std::uint64_t seed, const ModelDims& dims,
                       const LinearPH& lin) {
  PhnnParams p;
  p.mode = mode;
  p.n_x = dims.n_x;
  p.n_p = dims.n_p;
  p.n_y = dims.n_y;
  p.n_u = dims.n_u;
  p.n_a = dims.n_a;
  p.n_b = dims.n_b;
  std::mt19937_64 rng(seed);

  const int win = p.window_size();
  add_layer(p, p.enc_lin, win, p.n_x, rng, false);
  add_mlp(p, p.enc_mlp, win, dims.enc_hidden, p.n_x, rng, false);

  if (mode == Mode::LinearDirect) {
    p.idx_ac = add_const_matrix(p, p.n_x, p.n_x, rng, 0.3);
    p.idx_bc = add_const_matrix(p, p.n_x, p.n_x, rng, 0.3);
    p.idx_gc = add_const_matrix(p, p.n_x, p.n_p, rng, 0.3);
    p.idx_pc = add_const_matrix(p, p.n_x, p.n_p, rng, 0.3);
    p.idx_lc = add_const_matrix(p, p.n_x, p.n_x, rng, 0.3);
    return p;
  }

  const bool zero_head = mode == Mode::NnLinearInit;
  add_mlp(p, p.net_a, p.n_x, dims.mat_hidden, p.n_x * p.n_x, rng, zero_head);
  add_mlp(p, p.net_b, p.n_x, dims.mat_hidden, p.n_x * p.n_x, rng, zero_head);
  add_mlp(p, p.net_g, p.n_x, dims.mat_hidden, p.n_x * p.n_p, rng, zero_head);
  add_mlp(p, p.net_p, p.n_x, dims.mat_hidden, p.n_x * p.n_p, rng, zero_head);
  add_mlp(p, p.net_h, p.n_x, dims.mat_hidden, 1, rng, zero_head);

  if (mode == Mode::NnLinearInit) {
    if (lin.J.rows() != p.n_x || lin.G.cols() != p.n_p)
      throw std::invalid_argument(
          "init_params: nn-linear-init requires a LinearPH of matching size");
    p.lin = lin;
  }
  return p;
}

Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& r) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      0.5 * (r + r.transpose()));
  return es.eigenvectors() *
         es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

TapedModel stage(ad::Tape& tape, const PhnnParams& params) {
  TapedModel m;
  m.tape = &tape;
  m.params = &params;
  m.leaf.reserve(params.theta.size());
  for (const Eigen::MatrixXd& v : params.theta) m.leaf.push_back(tape.leaf(v));
  if (params.mode == Mode::NnLinearInit) {
    m.lin_j = tape.constant(params.lin.J);
    m.lin_rfac = tape.constant(psd_factor(params.lin.R));
    m.lin_g = tape.constant(params.lin.G);
    m.lin_p = tape.constant(params.lin.P);
  }
  return m;
}

MatrixNodes eval_matrices(TapedModel& m, int x) {
  ad::Tape& t = *m.tape;
  const PhnnParams& p = *m.params;
  MatrixNodes out;

  if (p.mode == Mode::LinearDirect) {
    const int ac = m.leaf[static_cast<std::size_t>(p.idx_ac)];
    const int bc = m.leaf[static_cast<std::size_t>(p.idx_bc)];
    out.J = t.sub(ac, t.transpose(ac));
    out.R = t.matmul(bc, t.transpose(bc));
    out.G = m.leaf[static_cast<std::size_t>(p.idx_gc)];
    out.P = m.leaf[static_cast<std::size_t>(p.idx_pc)];
    return out;
  }

  const int a_vec = mlp_forward(m, p.net_a, x, nullptr);
  const int b_vec = mlp_forward(m, p.net_b, x, nullptr);
  const int g_vec = mlp_forward(m, p.net_g, x, nullptr);
  const int p_vec = mlp_forward(m, p.net_p, x, nullptr);

  const int a_mat = t.reshape_rowmajor(a_vec, p.n_x, p.n_x);
  int b_mat = t.reshape_rowmajor(b_vec, p.n_x, p.n_x);
  out.J = t.sub(a_mat, t.transpose(a_mat));
  if (p.mode == Mode::NnLinearInit) {
    // Combine the linear dissipation inside the factor, not after the
    // product: R = (B_c + B_NN)(B_c + B_NN)^T with B_c B_c^T = R_lin. A sum
    // R_lin + B_NN B_NN^T would have an exactly zero gradient at the
    // zero-initialized output layer (both product terms vanish), leaving the
    // dissipation network permanently stuck; the factor form is PSD for any
    // output and still equals R_lin exactly at initialization.
    b_mat = t.add(m.lin_rfac, b_mat);
  }
  out.R = t.matmul(b_mat, t.transpose(b_mat));
  out.G = t.reshape_rowmajor(g_vec, p.n_x, p.n_p);
  out.P = t.reshape_rowmajor(p_vec, p.n_x, p.n_p);

  if (p.mode == Mode::NnLinearInit) {
    out.J = t.add(m.lin_j, out.J);
    out.G = t.add(m.lin_g, out.G);
    out.P = t.add(m.lin_p, out.P);
  }
  return out;
}

HamiltonianNodes hamiltonian_and_grad(TapedModel& m, int x) {
  ad::Tape& t = *m.tape;
  const PhnnParams& p = *m.params;
  HamiltonianNodes out;

  if (p.mode == Mode::LinearDirect) {
    const int lc = m.leaf[static_cast<std::size_t>(p.idx_lc)];
    const int qc = t.matmul(lc, t.transpose(lc));
    out.grad = t.matmul(qc, x);
    out.value = t.scale(t.matmul(t.transpose(x), out.grad), 0.5);
    return out;
  }

  std::vector<int> z;
  mlp_forward(m, p.net_h, x, &z);  // z = {z1, z2, z3}, z3 is 1x1
  const int h_nn = t.elu(z[2]);

  // Input-gradient of elu(mlp(x)) by layerwise Jacobian products.
  const std::size_t w1 = static_cast<std::size_t>(p.net_h.w[0]);
  const std::size_t w2 = static_cast<std::size_t>(p.net_h.w[1]);
  const std::size_t w3 = static_cast<std::size_t>(p.net_h.w[2]);
  const int g3 = t.elu_p(z[2]);
  const int v2 = t.cwise_mul(t.tanh_p(z[1]),
                             t.matmul(t.transpose(m.leaf[w3]), g3));
  const int v1 = t.cwise_mul(t.tanh_p(z[0]),
                             t.matmul(t.transpose(m.leaf[w2]), v2));
  const int grad_nn = t.matmul(t.transpose(m.leaf[w1]), v1);

  if (p.mode == Mode::NnLinearInit) {
    // Q_lin = I after normalization: H = x^T x / 2 + H_NN.
    out.value = t.add(t.scale(t.sum_sq(x), 0.5), h_nn);
    out.grad = t.add(x, grad_nn);
  } else {
    out.value = h_nn;
    out.grad = grad_nn;
  }
  return out;
}

FlowNodes f_and_h(TapedModel& m, int x, int u) {
  ad::Tape& t = *m.tape;
  const MatrixNodes mats = eval_matrices(m, x);
  const HamiltonianNodes ham = hamiltonian_and_grad(m, x);
  FlowNodes out;
  out.dx = t.add(t.matmul(t.sub(mats.J, mats.R), ham.grad),
                 t.matmul(t.sub(mats.G, mats.P), u));
  out.y = t.matmul(t.transpose(t.add(mats.G, mats.P)), ham.grad);
  return out;
}

int f_theta(TapedModel& m, int x, int u) {
  ad::Tape& t = *m.tape;
  const MatrixNodes mats = eval_matrices(m, x);
  const HamiltonianNodes ham = hamiltonian_and_grad(m, x);
  return t.add(t.matmul(t.sub(mats.J, mats.R), ham.grad),
               t.matmul(t.sub(mats.G, mats.P), u));
}

int h_theta(TapedModel& m, int x) {
  ad::Tape& t = *m.tape;
  const MatrixNodes mats = eval_matrices(m, x);
  const HamiltonianNodes ham = hamiltonian_and_grad(m, x);
  return t.matmul(t.transpose(t.add(mats.G, mats.P)), ham.grad);
}

int encoder_forward(TapedModel& m, int y_past, int u_past) {
  ad::Tape& t = *m.tape;
  const PhnnParams& p = *m.params;
  const int win = t.concat_rows(y_past, u_past);
  const int linear = t.add(
      t.matmul(m.leaf[static_cast<std::size_t>(p.enc_lin.w[0])], win),
      m.leaf[static_cast<std::size_t>(p.enc_lin.b[0])]);
  const int corr = mlp_forward(m, p.enc_mlp, win, nullptr);
  return t.add(linear, corr);
}

Eigen::MatrixXd eval_j(const PhnnParams& p, const Eigen::VectorXd& x) {
  ad::Tape t;
  TapedModel m = stage(t, p);
  const MatrixNodes mats = eval_matrices(m, t.constant(x));
  return t.val(mats.J);
}

Eigen::MatrixXd eval_r(const PhnnParams& p, const Eigen::VectorXd& x) {
  ad::Tape t;
  TapedModel m = stage(t, p);
  const MatrixNodes mats = eval_matrices(m, t.constant(x));
  return t.val(mats.R);
}

std::pair<double, Eigen::VectorXd> eval_hamiltonian(const PhnnParams& p,
                                                    const Eigen::VectorXd& x) {
  ad::Tape t;
  TapedModel m = stage(t, p);
  const HamiltonianNodes ham = hamiltonian_and_grad(m, t.constant(x));
  return {t.val(ham.value)(0, 0), t.val(ham.grad).col(0)};
}

Eigen::VectorXd eval_encoder(const PhnnParams& p, const Eigen::VectorXd& y_past,
                             const Eigen::VectorXd& u_past) {
  ad::Tape t;
  TapedModel m = stage(t, p);
  const int node = encoder_forward(m, t.constant(y_past), t.constant(u_past));
  return t.val(node).col(0);
}

}  // namespace phid
