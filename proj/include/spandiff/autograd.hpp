#pragma once

// Minimal reverse-mode automatic differentiation over dense fp64 matrices.
//
// A Graph records every operation applied to its Vars. Calling backward() on
// a 1x1 Var propagates gradients to every Parameter that entered the graph
// through Graph::param(). Graphs built with record = false skip the tape and
// are used for inference.

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace spandiff::autograd {

using Matrix = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(); }
};

/// Owns the parameters of a model in creation order. Addresses are stable
/// for the lifetime of the store.
class ParameterStore {
 public:
  Parameter& create(std::string name, Matrix init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::deque<Parameter> params_;
};

class Graph;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, const Matrix& out_grad)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  Var param(Parameter& p);

  /// Registers the result of an operation. `inputs` decide whether the node
  /// needs a gradient; `backward` is dropped when it does not.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);

  const Matrix& value(const Var& v) const { return nodes_[static_cast<std::size_t>(v.id_)].value; }
  bool needs_grad(const Var& v) const { return nodes_[static_cast<std::size_t>(v.id_)].needs_grad; }

  /// Adds `g` into the gradient buffer of `v` if it participates.
  void accumulate(const Var& v, const Matrix& g);

  /// Seeds d(output)/d(output) = 1 and runs the tape in reverse.
  void backward(const Var& scalar_output);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  bool record_;
  std::deque<Node> nodes_;
};

// Shape-preserving and linear algebra ops.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var transpose(const Var& a);
/// a (r x c) + row (1 x c) broadcast over rows.
Var add_row(const Var& a, const Var& row);
/// a (r x c) * row (1 x c) broadcast over rows.
Var mul_row(const Var& a, const Var& row);
/// a (r x c) + col (r x 1) broadcast over columns.
Var add_col(const Var& a, const Var& col);
Var sum(const Var& a);

// Elementwise nonlinearities.
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);

// Row-wise normalizations.
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
/// Softmax restricted to entries where mask is nonzero; masked entries are
/// exactly zero. Every row needs at least one unmasked entry.
Var masked_softmax_rows(const Var& a, const Eigen::MatrixXi& mask);
Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5);

// Indexing.
Var gather_rows(const Var& table, const std::vector<int>& ids);
/// Repeats each row `times` consecutively: row r lands at r*times .. r*times+times-1.
Var repeat_rows(const Var& a, int times);
/// Stacks `times` copies of the whole matrix vertically.
Var tile_rows(const Var& a, int times);
/// Row-major reshape.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
/// out(i, j) = table(labels(i, j), 0) where labels(i, j) != 0, else 0.
Var gather_pairs(const Var& table, const Eigen::MatrixXi& labels);
/// out(i, l) = sum over j with labels(i, j) == l of a(i, j); out has `num_labels` columns.
Var scatter_pairs(const Var& a, const Eigen::MatrixXi& labels, int num_labels);

// Losses. Both return a 1x1 sum over rows.
/// sum_r -log_softmax(logits)(r, targets[r])
Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets);
/// sum_{r,c} BCE(sigmoid(logits(r,c)), [c == targets[r]])
Var binary_cross_entropy_rows(const Var& logits, const std::vector<int>& targets);

Matrix softmax_rows(const Matrix& a);

}  // namespace spandiff::autograd
