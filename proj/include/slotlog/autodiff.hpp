#pragma once

// Reverse-mode differentiation over dense 2-D double matrices.

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace slotlog {

using Mat = Eigen::MatrixXd;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A trainable matrix that outlives tapes. Gradients accumulate into `grad`
/// across backward passes until cleared.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node on a tape.
class Tensor {
 public:
  Tensor() = default;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  const Mat& value() const;
  /// Gradient after backward; zeros if nothing reached this node.
  Mat grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double item() const;

 private:
  friend class Tape;
  Tensor(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// Receives the output gradient and accumulates into the input gradients,
  /// passed in the order the inputs were recorded.
  using BackwardFn = std::function<void(const Mat& out_grad, std::vector<Mat*>& in_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Constant input; receives a gradient but feeds no parameter.
  Tensor constant(Mat value);
  /// Leaf bound to a parameter; backward adds its gradient into p.grad.
  Tensor param(Parameter& p);
  /// Records a custom primitive.
  Tensor record(Mat value, std::vector<Tensor> inputs, BackwardFn backward);

  /// Adds `grad` to the seed of `t`. Throws ShapeError on a shape mismatch and
  /// std::invalid_argument if `t` belongs to another tape.
  void inject_gradient(Tensor t, const Mat& grad);
  /// Seeds d(root)/d(root) = 1 (plus injected seeds) and propagates.
  void backward(Tensor root);
  /// Propagates injected seeds only.
  void backward();

  const Mat& value(int id) const { return nodes_[id].value; }
  Mat grad(int id) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;  // empty until something flows in
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };
  void check_owned(Tensor t) const;
  void propagate();
  std::vector<Node> nodes_;
};

// Primitives. All inputs must live on the same tape.
Tensor matmul(Tensor a, Tensor b);
Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
/// a (r x c) plus a 1 x c row broadcast over rows.
Tensor add_row(Tensor a, Tensor row);
/// Each row i of a (r x c) scaled by col(i) of an r x 1 column.
Tensor mul_col(Tensor a, Tensor col);
Tensor scale(Tensor a, double s);
Tensor transpose(Tensor a);
Tensor relu(Tensor a);
Tensor sigmoid(Tensor a);
Tensor reciprocal(Tensor a);
/// axis 0 normalizes each column, axis 1 each row; shifted by the max.
Tensor softmax(Tensor a, int axis);
/// axis 0 gives 1 x c, axis 1 gives r x 1.
Tensor sum(Tensor a, int axis);
Tensor sum(Tensor a);
Tensor mean(Tensor a);
/// axis 0 stacks rows, axis 1 stacks columns.
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(Tensor a, Eigen::Index row, Eigen::Index rows, Eigen::Index col, Eigen::Index cols);
Tensor l2_norm_sq(Tensor a);

Tensor operator+(Tensor a, Tensor b);
Tensor operator-(Tensor a, Tensor b);
Tensor operator*(Tensor a, Tensor b);

/// Decoupled weight decay Adam.
class AdamW {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };
  explicit AdamW(Options o) : opt_(o) {}

  /// One update from each parameter's accumulated grad, scaled by grad_scale.
  void step(std::vector<Parameter*>& params, double grad_scale = 1.0);
  long steps() const { return t_; }
  const Options& options() const { return opt_; }

 private:
  Options opt_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

}  // namespace slotlog
