#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace phid::ad {

// Primitive operations recorded on the tape. The first-derivative
// activations (TanhP, EluP) are primitives in their own right so that a
// single reverse pass can differentiate expressions that already contain
// activation derivatives (their VJPs use the second derivatives).
enum class Op : std::uint8_t {
  Leaf,
  Const,
  MatMul,
  Add,
  Sub,
  Scale,
  CwiseMul,
  Transpose,
  ConcatRows,
  SliceRows,
  Reshape,
  SumSq,
  Tanh,
  TanhP,
  TanhPP,
  Elu,
  EluP,
  EluPP,
};

// Define-by-run reverse-mode tape over dense double matrices. Nodes are
// stored in topological order by construction; reset() rewinds the tape
// without releasing node storage so repeated graphs of identical shape
// run allocation-free.
class Tape {
 public:
  int leaf(const Eigen::MatrixXd& v) { return push_value(Op::Leaf, v); }
  int constant(const Eigen::MatrixXd& v) { return push_value(Op::Const, v); }

  int matmul(int a, int b);
  int add(int a, int b);
  int sub(int a, int b);
  int scale(int a, double s);
  int cwise_mul(int a, int b);
  int transpose(int a);
  int concat_rows(int a, int b);
  int slice_rows(int a, int start, int len);
  int reshape_rowmajor(int a, int rows, int cols);
  int sum_sq(int a);  // 1x1 result
  int tanh(int a);
  int tanh_p(int a);
  int tanh_pp(int a);
  int elu(int a);
  int elu_p(int a);
  int elu_pp(int a);

  const Eigen::MatrixXd& val(int i) const { return nodes_[i].value; }
  const Eigen::MatrixXd& grad(int i) const { return nodes_[i].grad; }

  // Reverse pass seeded at a scalar node; gradients accumulate additively
  // at shared nodes. Throws if the seed is not 1x1.
  void backward(int loss);

  void reset() { used_ = 0; }
  std::size_t size() const { return used_; }
  std::size_t backward_visits() const { return backward_visits_; }

 private:
  struct Node {
    Op op = Op::Leaf;
    int a = -1;
    int b = -1;
    double scalar = 0.0;  // scale factor / slice start
    int aux = 0;          // slice length / reshape rows
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
  };

  Node& push(Op op, int a, int b);
  int push_value(Op op, const Eigen::MatrixXd& v);
  void check_index(int i) const;

  std::vector<Node> nodes_;
  std::size_t used_ = 0;
  std::size_t backward_visits_ = 0;
};

// Max over all parameter entries of the relative disagreement between the
// analytic gradient and a central finite difference with step h (scaled by
// max(1, |theta|) per entry). `eval` must be deterministic.
double grad_check(
    const std::function<double(std::span<const Eigen::MatrixXd>)>& eval,
    const std::function<std::vector<Eigen::MatrixXd>(
        std::span<const Eigen::MatrixXd>)>& gradient,
    std::vector<Eigen::MatrixXd> params, double h);

}  // namespace phid::ad
