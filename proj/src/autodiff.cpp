#include "phid/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace phid::ad {

namespace {

[[noreturn]] void shape_error(const char* what, const Eigen::MatrixXd& a,
                              const Eigen::MatrixXd& b) {
  std::ostringstream os;
  os << "autodiff shape mismatch in " << what << ": (" << a.rows() << "x"
     << a.cols() << ") vs (" << b.rows() << "x" << b.cols() << ")";
  throw std::invalid_argument(os.str());
}

double elu_val(double x) { return x >= 0.0 ? x : std::expm1(x); }
double elu_d1(double x) { return x >= 0.0 ? 1.0 : std::exp(x); }
double elu_d2(double x) { return x >= 0.0 ? 0.0 : std::exp(x); }
// d/dx tanh'(x) = -2 t (1 - t^2)
double tanh_d2(double x) {
  const double t = std::tanh(x);
  return -2.0 * t * (1.0 - t * t);
}
// d/dx tanh''(x) = -2 (1 - t^2)(1 - 3 t^2)
double tanh_d3(double x) {
  const double t = std::tanh(x);
  return -2.0 * (1.0 - t * t) * (1.0 - 3.0 * t * t);
}

}  // namespace

Tape::Node& Tape::push(Op op, int a, int b) {
  if (used_ == nodes_.size()) nodes_.emplace_back();
  Node& n = nodes_[used_++];
  n.op = op;
  n.a = a;
  n.b = b;
  n.scalar = 0.0;
  n.aux = 0;
  return n;
}

int Tape::push_value(Op op, const Eigen::MatrixXd& v) {
  Node& n = push(op, -1, -1);
  n.value = v;
  return static_cast<int>(used_) - 1;
}

void Tape::check_index(int i) const {
  if (i < 0 || static_cast<std::size_t>(i) >= used_)
    throw std::invalid_argument("autodiff: operand index out of range");
}

int Tape::matmul(int a, int b) {
  check_index(a);
  check_index(b);
  if (nodes_[a].value.cols() != nodes_[b].value.rows())
    shape_error("matmul", nodes_[a].value, nodes_[b].value);
  Node& n = push(Op::MatMul, a, b);
  n.value.noalias() = nodes_[a].value * nodes_[b].value;
  return static_cast<int>(used_) - 1;
}

int Tape::add(int a, int b) {
  check_index(a);
  check_index(b);
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols())
    shape_error("add", nodes_[a].value, nodes_[b].value);
  Node& n = push(Op::Add, a, b);
  n.value = nodes_[a].value + nodes_[b].value;
  return static_cast<int>(used_) - 1;
}

int Tape::sub(int a, int b) {
  check_index(a);
  check_index(b);
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols())
    shape_error("sub", nodes_[a].value, nodes_[b].value);
  Node& n = push(Op::Sub, a, b);
  n.value = nodes_[a].value - nodes_[b].value;
  return static_cast<int>(used_) - 1;
}

int Tape::scale(int a, double s) {
  check_index(a);
  Node& n = push(Op::Scale, a, -1);
  n.scalar = s;
  n.value = s * nodes_[a].value;
  return static_cast<int>(used_) - 1;
}

int Tape::cwise_mul(int a, int b) {
  check_index(a);
  check_index(b);
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols())
    shape_error("cwise_mul", nodes_[a].value, nodes_[b].value);
  Node& n = push(Op::CwiseMul, a, b);
  n.value = nodes_[a].value.cwiseProduct(nodes_[b].value);
  return static_cast<int>(used_) - 1;
}

int Tape::transpose(int a) {
  check_index(a);
  Node& n = push(Op::Transpose, a, -1);
  n.value = nodes_[a].value.transpose();
  return static_cast<int>(used_) - 1;
}

int Tape::concat_rows(int a, int b) {
  check_index(a);
  check_index(b);
  if (nodes_[a].value.cols() != nodes_[b].value.cols())
    shape_error("concat_rows", nodes_[a].value, nodes_[b].value);
  Node& n = push(Op::ConcatRows, a, b);
  const Eigen::Index ra = nodes_[a].value.rows();
  const Eigen::Index rb = nodes_[b].value.rows();
  n.value.resize(ra + rb, nodes_[a].value.cols());
  n.value.topRows(ra) = nodes_[a].value;
  n.value.bottomRows(rb) = nodes_[b].value;
  return static_cast<int>(used_) - 1;
}

int Tape::slice_rows(int a, int start, int len) {
  check_index(a);
  if (start < 0 || len < 0 || start + len > nodes_[a].value.rows())
    throw std::invalid_argument("autodiff: slice_rows out of range");
  Node& n = push(Op::SliceRows, a, -1);
  n.scalar = static_cast<double>(start);
  n.aux = len;
  n.value = nodes_[a].value.middleRows(start, len);
  return static_cast<int>(used_) - 1;
}

int Tape::reshape_rowmajor(int a, int rows, int cols) {
  check_index(a);
  if (nodes_[a].value.size() != static_cast<Eigen::Index>(rows) * cols)
    throw std::invalid_argument("autodiff: reshape size mismatch");
  Node& n = push(Op::Reshape, a, -1);
  n.aux = rows;
  n.value.resize(rows, cols);
  // Row-major fill from the operand's row-major traversal.
  const Eigen::MatrixXd& A = nodes_[a].value;
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j, ++k)
      n.value(k / cols, k % cols) = A(i, j);
  return static_cast<int>(used_) - 1;
}

int Tape::sum_sq(int a) {
  check_index(a);
  Node& n = push(Op::SumSq, a, -1);
  n.value.resize(1, 1);
  n.value(0, 0) = nodes_[a].value.squaredNorm();
  return static_cast<int>(used_) - 1;
}

int Tape::tanh(int a) {
  check_index(a);
  Node& n = push(Op::Tanh, a, -1);
  n.value = nodes_[a].value.array().tanh();
  return static_cast<int>(used_) - 1;
}

int Tape::tanh_p(int a) {
  check_index(a);
  Node& n = push(Op::TanhP, a, -1);
  n.value = 1.0 - nodes_[a].value.array().tanh().square();
  return static_cast<int>(used_) - 1;
}

int Tape::tanh_pp(int a) {
  check_index(a);
  Node& n = push(Op::TanhPP, a, -1);
  n.value = nodes_[a].value.unaryExpr(&tanh_d2);
  return static_cast<int>(used_) - 1;
}

int Tape::elu(int a) {
  check_index(a);
  Node& n = push(Op::Elu, a, -1);
  n.value = nodes_[a].value.unaryExpr(&elu_val);
  return static_cast<int>(used_) - 1;
}

int Tape::elu_p(int a) {
  check_index(a);
  Node& n = push(Op::EluP, a, -1);
  n.value = nodes_[a].value.unaryExpr(&elu_d1);
  return static_cast<int>(used_) - 1;
}

int Tape::elu_pp(int a) {
  check_index(a);
  Node& n = push(Op::EluPP, a, -1);
  n.value = nodes_[a].value.unaryExpr(&elu_d2);
  return static_cast<int>(used_) - 1;
}

void Tape::backward(int loss) {
  check_index(loss);
  if (nodes_[loss].value.rows() != 1 || nodes_[loss].value.cols() != 1)
    throw std::invalid_argument("autodiff: backward seed must be scalar");

  for (std::size_t i = 0; i <= static_cast<std::size_t>(loss); ++i) {
    Node& n = nodes_[i];
    if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols())
      n.grad.resize(n.value.rows(), n.value.cols());
    n.grad.setZero();
  }
  nodes_[loss].grad(0, 0) = 1.0;
  backward_visits_ = 0;

  for (int i = loss; i >= 0; --i) {
    Node& n = nodes_[i];
    ++backward_visits_;
    const Eigen::MatrixXd& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
      case Op::Const:
        break;
      case Op::MatMul:
        nodes_[n.a].grad.noalias() += g * nodes_[n.b].value.transpose();
        nodes_[n.b].grad.noalias() += nodes_[n.a].value.transpose() * g;
        break;
      case Op::Add:
        nodes_[n.a].grad += g;
        nodes_[n.b].grad += g;
        break;
      case Op::Sub:
        nodes_[n.a].grad += g;
        nodes_[n.b].grad -= g;
        break;
      case Op::Scale:
        nodes_[n.a].grad += n.scalar * g;
        break;
      case Op::CwiseMul:
        nodes_[n.a].grad += g.cwiseProduct(nodes_[n.b].value);
        nodes_[n.b].grad += g.cwiseProduct(nodes_[n.a].value);
        break;
      case Op::Transpose:
        nodes_[n.a].grad += g.transpose();
        break;
      case Op::ConcatRows: {
        const Eigen::Index ra = nodes_[n.a].value.rows();
        nodes_[n.a].grad += g.topRows(ra);
        nodes_[n.b].grad += g.bottomRows(g.rows() - ra);
        break;
      }
      case Op::SliceRows:
        nodes_[n.a].grad.middleRows(static_cast<int>(n.scalar), n.aux) += g;
        break;
      case Op::Reshape: {
        Eigen::MatrixXd& ga = nodes_[n.a].grad;
        const Eigen::Index cols = n.value.cols();
        Eigen::Index k = 0;
        for (Eigen::Index r = 0; r < ga.rows(); ++r)
          for (Eigen::Index c = 0; c < ga.cols(); ++c, ++k)
            ga(r, c) += g(k / cols, k % cols);
        break;
      }
      case Op::SumSq:
        nodes_[n.a].grad += 2.0 * g(0, 0) * nodes_[n.a].value;
        break;
      case Op::Tanh:
        nodes_[n.a].grad.array() += g.array() * (1.0 - n.value.array().square());
        break;
      case Op::TanhP:
        nodes_[n.a].grad +=
            g.cwiseProduct(nodes_[n.a].value.unaryExpr(&tanh_d2));
        break;
      case Op::TanhPP:
        nodes_[n.a].grad +=
            g.cwiseProduct(nodes_[n.a].value.unaryExpr(&tanh_d3));
        break;
      case Op::Elu:
        nodes_[n.a].grad +=
            g.cwiseProduct(nodes_[n.a].value.unaryExpr(&elu_d1));
        break;
      case Op::EluP:
      case Op::EluPP:
        nodes_[n.a].grad +=
            g.cwiseProduct(nodes_[n.a].value.unaryExpr(&elu_d2));
        break;
    }
  }
}

double grad_check(
    const std::function<double(std::span<const Eigen::MatrixXd>)>& eval,
    const std::function<std::vector<Eigen::MatrixXd>(
        std::span<const Eigen::MatrixXd>)>& gradient,
    std::vector<Eigen::MatrixXd> params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: h must be > 0");
  const std::vector<Eigen::MatrixXd> analytic = gradient(params);
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (Eigen::Index i = 0; i < params[p].size(); ++i) {
      double& theta = params[p].data()[i];
      const double orig = theta;
      const double step = h * std::max(1.0, std::abs(orig));
      theta = orig + step;
      const double fp = eval(params);
      theta = orig - step;
      const double fm = eval(params);
      theta = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double an = analytic[p].data()[i];
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-12});
      worst = std::max(worst, std::abs(an - fd) / denom);
    }
  }
  return worst;
}

}  // namespace phid::ad
