#include "slotlog/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace slotlog {

namespace {

std::string shape(const Mat& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_same_shape(const char* op, Tensor a, Tensor b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": " + shape(a.value()) + " vs " + shape(b.value()));
}

void require_axis(const char* op, int axis) {
  if (axis != 0 && axis != 1) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range");
}

// Row by row, so permuting the rows of `a` permutes the result bit for bit.
Mat row_product(const Mat& a, const Mat& b) {
  Mat v(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) v.row(i).noalias() = a.row(i) * b;
  return v;
}

Tape& tape_of(Tensor a, Tensor b) {
  if (!a.tape() || a.tape() != b.tape()) throw std::invalid_argument("tensors live on different tapes");
  return *a.tape();
}

}  // namespace

const Mat& Tensor::value() const { return tape_->value(id_); }
Mat Tensor::grad() const { return tape_->grad(id_); }

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item: tensor is " + shape(value()));
  return value()(0, 0);
}

Tensor Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, nullptr});
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, nullptr, &p});
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::record(Mat value, std::vector<Tensor> inputs, BackwardFn backward) {
  Node n{std::move(value), {}, {}, std::move(backward), nullptr};
  for (const auto& t : inputs) {
    check_owned(t);
    n.inputs.push_back(t.id());
  }
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Mat Tape::grad(int id) const {
  const auto& n = nodes_.at(id);
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::check_owned(Tensor t) const {
  if (t.tape() != this || t.id() < 0 || t.id() >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("tensor is not on this tape");
}

void Tape::inject_gradient(Tensor t, const Mat& grad) {
  check_owned(t);
  auto& n = nodes_[t.id()];
  if (grad.rows() != n.value.rows() || grad.cols() != n.value.cols())
    throw ShapeError("inject_gradient: " + shape(grad) + " into " + shape(n.value));
  if (n.grad.size() == 0)
    n.grad = grad;
  else
    n.grad += grad;
}

void Tape::backward(Tensor root) {
  check_owned(root);
  if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward: root is " + shape(root.value()) + ", not scalar");
  inject_gradient(root, Mat::Ones(1, 1));
  propagate();
}

void Tape::backward() { propagate(); }

void Tape::propagate() {
  std::vector<Mat*> in_grads;
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    auto& n = nodes_[id];
    if (n.grad.size() == 0) continue;
    if (n.param) {
      n.param->grad += n.grad;
      continue;
    }
    if (!n.backward) continue;
    in_grads.clear();
    for (int in : n.inputs) {
      auto& g = nodes_[in].grad;
      if (g.size() == 0) g = Mat::Zero(nodes_[in].value.rows(), nodes_[in].value.cols());
      in_grads.push_back(&g);
    }
    n.backward(n.grad, in_grads);
  }
}

Tensor matmul(Tensor a, Tensor b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + shape(a.value()) + " * " + shape(b.value()));
  const int ia = a.id(), ib = b.id();
  return t.record(row_product(a.value(), b.value()), {a, b}, [&t, ia, ib](const Mat& g, std::vector<Mat*>& d) {
    d[0]->noalias() += g * t.value(ib).transpose();
    d[1]->noalias() += t.value(ia).transpose() * g;
  });
}

Tensor add(Tensor a, Tensor b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a, b);
  return t.record(a.value() + b.value(), {a, b}, [](const Mat& g, std::vector<Mat*>& d) {
    *d[0] += g;
    *d[1] += g;
  });
}

Tensor sub(Tensor a, Tensor b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a, b);
  return t.record(a.value() - b.value(), {a, b}, [](const Mat& g, std::vector<Mat*>& d) {
    *d[0] += g;
    *d[1] -= g;
  });
}

Tensor mul(Tensor a, Tensor b) {
  Tape& t = tape_of(a, b);
  require_same_shape("mul", a, b);
  const int ia = a.id(), ib = b.id();
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [&t, ia, ib](const Mat& g, std::vector<Mat*>& d) {
    *d[0] += g.cwiseProduct(t.value(ib));
    *d[1] += g.cwiseProduct(t.value(ia));
  });
}

Tensor add_row(Tensor a, Tensor row) {
  Tape& t = tape_of(a, row);
  if (row.rows() != 1 || row.cols() != a.cols())
    throw ShapeError("add_row: " + shape(a.value()) + " + " + shape(row.value()));
  Mat v = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(v), {a, row}, [](const Mat& g, std::vector<Mat*>& d) {
    *d[0] += g;
    *d[1] += g.colwise().sum();
  });
}

Tensor mul_col(Tensor a, Tensor col) {
  Tape& t = tape_of(a, col);
  if (col.cols() != 1 || col.rows() != a.rows())
    throw ShapeError("mul_col: " + shape(a.value()) + " by " + shape(col.value()));
  const int ia = a.id(), ic = col.id();
  Mat v = col.value().col(0).asDiagonal() * a.value();
  return t.record(std::move(v), {a, col}, [&t, ia, ic](const Mat& g, std::vector<Mat*>& d) {
    *d[0] += t.value(ic).col(0).asDiagonal() * g;
    *d[1] += g.cwiseProduct(t.value(ia)).rowwise().sum();
  });
}

Tensor scale(Tensor a, double s) {
  return a.tape()->record(a.value() * s, {a}, [s](const Mat& g, std::vector<Mat*>& d) { *d[0] += s * g; });
}

Tensor transpose(Tensor a) {
  return a.tape()->record(a.value().transpose(), {a},
                          [](const Mat& g, std::vector<Mat*>& d) { *d[0] += g.transpose(); });
}

Tensor relu(Tensor a) {
  Mat v = a.value().cwiseMax(0.0);
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(std::move(v), {a}, [&t, ia](const Mat& g, std::vector<Mat*>& d) {
    *d[0] += (t.value(ia).array() > 0.0).select(g, 0.0);
  });
}

Tensor sigmoid(Tensor a) {
  Mat v = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  Tape& t = *a.tape();
  const int out = static_cast<int>(t.size());
  return t.record(std::move(v), {a}, [&t, out](const Mat& g, std::vector<Mat*>& d) {
    const auto& s = t.value(out).array();
    *d[0] += (g.array() * s * (1.0 - s)).matrix();
  });
}

Tensor reciprocal(Tensor a) {
  Tape& t = *a.tape();
  const int out = static_cast<int>(t.size());
  return t.record(a.value().cwiseInverse(), {a}, [&t, out](const Mat& g, std::vector<Mat*>& d) {
    const auto& r = t.value(out).array();
    *d[0] -= (g.array() * r * r).matrix();
  });
}

Tensor softmax(Tensor a, int axis) {
  require_axis("softmax", axis);
  // Transposed for axis 0 so every normalized vector is a row.
  Mat v = axis == 1 ? a.value() : Mat(a.value().transpose());
  std::vector<double> terms;
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    v.row(i).array() = (v.row(i).array() - v.row(i).maxCoeff()).exp();
    // Summing in sorted order makes the result independent of input order.
    terms.clear();
    for (Eigen::Index j = 0; j < v.cols(); ++j) terms.push_back(v(i, j));
    std::sort(terms.begin(), terms.end());
    double total = 0;
    for (double x : terms) total += x;
    v.row(i) /= total;
  }
  if (axis == 0) v.transposeInPlace();
  Tape& t = *a.tape();
  const int out = static_cast<int>(t.size());
  return t.record(std::move(v), {a}, [&t, out, axis](const Mat& g, std::vector<Mat*>& d) {
    const Mat& s = t.value(out);
    Mat gs = g.cwiseProduct(s);
    if (axis == 1)
      *d[0] += gs - s.cwiseProduct((gs.rowwise().sum()).replicate(1, s.cols()));
    else
      *d[0] += gs - s.cwiseProduct((gs.colwise().sum()).replicate(s.rows(), 1));
  });
}

Tensor sum(Tensor a, int axis) {
  require_axis("sum", axis);
  const Eigen::Index r = a.rows(), c = a.cols();
  if (axis == 0)
    return a.tape()->record(a.value().colwise().sum(), {a},
                            [r](const Mat& g, std::vector<Mat*>& d) { *d[0] += g.replicate(r, 1); });
  Mat v(r, 1);
  for (Eigen::Index i = 0; i < r; ++i) {
    double s = 0;
    for (Eigen::Index j = 0; j < c; ++j) s += a.value()(i, j);
    v(i, 0) = s;
  }
  return a.tape()->record(std::move(v), {a}, [c](const Mat& g, std::vector<Mat*>& d) { *d[0] += g.replicate(1, c); });
}

Tensor sum(Tensor a) {
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape()->record(std::move(v), {a}, [](const Mat& g, std::vector<Mat*>& d) { d[0]->array() += g(0, 0); });
}

Tensor mean(Tensor a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / n);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  require_axis("concat", axis);
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape& t = *parts[0].tape();
  Eigen::Index rows = 0, cols = 0;
  for (const auto& p : parts) {
    tape_of(parts[0], p);
    if (axis == 0) {
      if (p.cols() != parts[0].cols()) throw ShapeError("concat: column counts differ");
      rows += p.rows();
      cols = p.cols();
    } else {
      if (p.rows() != parts[0].rows()) throw ShapeError("concat: row counts differ");
      cols += p.cols();
      rows = p.rows();
    }
  }
  Mat v(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    if (axis == 0) {
      v.middleRows(off, p.rows()) = p.value();
      off += p.rows();
    } else {
      v.middleCols(off, p.cols()) = p.value();
      off += p.cols();
    }
  }
  return t.record(std::move(v), parts, [offsets, axis](const Mat& g, std::vector<Mat*>& d) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (axis == 0)
        *d[i] += g.middleRows(offsets[i], d[i]->rows());
      else
        *d[i] += g.middleCols(offsets[i], d[i]->cols());
    }
  });
}

Tensor slice(Tensor a, Eigen::Index row, Eigen::Index rows, Eigen::Index col, Eigen::Index cols) {
  if (row < 0 || col < 0 || rows < 0 || cols < 0 || row + rows > a.rows() || col + cols > a.cols())
    throw ShapeError("slice out of range for " + shape(a.value()));
  return a.tape()->record(a.value().block(row, col, rows, cols), {a},
                          [=](const Mat& g, std::vector<Mat*>& d) { d[0]->block(row, col, rows, cols) += g; });
}

Tensor l2_norm_sq(Tensor a) {
  Mat v(1, 1);
  v(0, 0) = a.value().squaredNorm();
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(std::move(v), {a},
                  [&t, ia](const Mat& g, std::vector<Mat*>& d) { *d[0] += 2.0 * g(0, 0) * t.value(ia); });
}

Tensor operator+(Tensor a, Tensor b) { return add(a, b); }
Tensor operator-(Tensor a, Tensor b) { return sub(a, b); }
Tensor operator*(Tensor a, Tensor b) { return matmul(a, b); }

void AdamW::step(std::vector<Parameter*>& params, double grad_scale) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("AdamW: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const Mat g = p.grad * grad_scale;
    m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
    v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g.cwiseProduct(g);
    p.value *= 1.0 - opt_.lr * opt_.weight_decay;
    p.value.array() -= opt_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + opt_.eps);
  }
}

}  // namespace slotlog
