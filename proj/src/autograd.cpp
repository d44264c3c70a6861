#include "spandiff/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace spandiff::autograd {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(std::string("autograd: ") + what);
}

Graph& graph_of(const Var& a) {
  require(a.valid(), "operation on an empty Var");
  return a.graph();
}

}  // namespace

Parameter& ParameterStore::create(std::string name, Matrix init) {
  require(!contains(name), "duplicate parameter name");
  params_.emplace_back(std::move(name), std::move(init));
  return params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named " + name);
}

const Parameter& ParameterStore::get(const std::string& name) const {
  return const_cast<ParameterStore*>(this)->get(name);
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return true;
  return false;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

const Matrix& Var::value() const { return graph_->value(*this); }

Var Graph::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, &p, record_});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  if (record_) {
    for (const auto& in : inputs) needs = needs || needs_grad(in);
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Graph::accumulate(const Var& v, const Matrix& g) {
  auto& n = nodes_[static_cast<std::size_t>(v.id_)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Graph::backward(const Var& out) {
  require(record_, "backward on a non-recording graph");
  require(out.rows() == 1 && out.cols() == 1, "backward needs a scalar output");
  accumulate(out, Matrix::Ones(1, 1));
  for (auto i = static_cast<std::ptrdiff_t>(out.id_); i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
    } else if (n.param != nullptr) {
      n.param->grad += n.grad;
    }
  }
}

Var matmul(const Var& a, const Var& b) {
  auto& g = graph_of(a);
  require(a.cols() == b.rows(), "matmul shape mismatch");
  Matrix out = a.value() * b.value();
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& go) {
    if (g.needs_grad(a)) g.accumulate(a, go * b.value().transpose());
    if (g.needs_grad(b)) g.accumulate(b, a.value().transpose() * go);
  });
}

Var add(const Var& a, const Var& b) {
  auto& g = graph_of(a);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add shape mismatch");
  return g.record(a.value() + b.value(), {a, b}, [a, b](Graph& g, const Matrix& go) {
    g.accumulate(a, go);
    g.accumulate(b, go);
  });
}

Var sub(const Var& a, const Var& b) {
  auto& g = graph_of(a);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub shape mismatch");
  return g.record(a.value() - b.value(), {a, b}, [a, b](Graph& g, const Matrix& go) {
    g.accumulate(a, go);
    g.accumulate(b, -go);
  });
}

Var hadamard(const Var& a, const Var& b) {
  auto& g = graph_of(a);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard shape mismatch");
  return g.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Graph& g, const Matrix& go) {
    if (g.needs_grad(a)) g.accumulate(a, go.cwiseProduct(b.value()));
    if (g.needs_grad(b)) g.accumulate(b, go.cwiseProduct(a.value()));
  });
}

Var scale(const Var& a, double s) {
  auto& g = graph_of(a);
  return g.record(a.value() * s, {a}, [a, s](Graph& g, const Matrix& go) { g.accumulate(a, go * s); });
}

Var transpose(const Var& a) {
  auto& g = graph_of(a);
  return g.record(a.value().transpose(), {a}, [a](Graph& g, const Matrix& go) { g.accumulate(a, go.transpose()); });
}

Var add_row(const Var& a, const Var& row) {
  auto& g = graph_of(a);
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return g.record(std::move(out), {a, row}, [a, row](Graph& g, const Matrix& go) {
    g.accumulate(a, go);
    if (g.needs_grad(row)) g.accumulate(row, go.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  auto& g = graph_of(a);
  require(row.rows() == 1 && row.cols() == a.cols(), "mul_row shape mismatch");
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return g.record(std::move(out), {a, row}, [a, row](Graph& g, const Matrix& go) {
    if (g.needs_grad(a)) {
      Matrix ga = go.array().rowwise() * row.value().row(0).array();
      g.accumulate(a, ga);
    }
    if (g.needs_grad(row)) g.accumulate(row, go.cwiseProduct(a.value()).colwise().sum());
  });
}

Var add_col(const Var& a, const Var& col) {
  auto& g = graph_of(a);
  require(col.cols() == 1 && col.rows() == a.rows(), "add_col shape mismatch");
  Matrix out = a.value().colwise() + col.value().col(0);
  return g.record(std::move(out), {a, col}, [a, col](Graph& g, const Matrix& go) {
    g.accumulate(a, go);
    if (g.needs_grad(col)) g.accumulate(col, go.rowwise().sum());
  });
}

Var sum(const Var& a) {
  auto& g = graph_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return g.record(std::move(out), {a}, [a](Graph& g, const Matrix& go) {
    g.accumulate(a, Matrix::Constant(a.rows(), a.cols(), go(0, 0)));
  });
}

Var relu(const Var& a) {
  auto& g = graph_of(a);
  return g.record(a.value().cwiseMax(0.0), {a}, [a](Graph& g, const Matrix& go) {
    g.accumulate(a, (a.value().array() > 0.0).cast<double>().matrix().cwiseProduct(go));
  });
}

Var sigmoid(const Var& a) {
  auto& g = graph_of(a);
  Matrix out = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  Matrix y = out;
  return g.record(std::move(out), {a}, [a, y = std::move(y)](Graph& g, const Matrix& go) {
    g.accumulate(a, go.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var tanh(const Var& a) {
  auto& g = graph_of(a);
  Matrix out = a.value().array().tanh().matrix();
  Matrix y = out;
  return g.record(std::move(out), {a}, [a, y = std::move(y)](Graph& g, const Matrix& go) {
    g.accumulate(a, go.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Matrix softmax_rows(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    out.row(r) = (a.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

namespace {

Matrix softmax_backward(const Matrix& y, const Matrix& go) {
  Matrix gi(y.rows(), y.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double dot = go.row(r).dot(y.row(r));
    gi.row(r) = y.row(r).array() * (go.row(r).array() - dot);
  }
  return gi;
}

}  // namespace

Var softmax_rows(const Var& a) {
  auto& g = graph_of(a);
  Matrix y = softmax_rows(a.value());
  Matrix out = y;
  return g.record(std::move(out), {a}, [a, y = std::move(y)](Graph& g, const Matrix& go) {
    g.accumulate(a, softmax_backward(y, go));
  });
}

Var log_softmax_rows(const Var& a) {
  auto& g = graph_of(a);
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  Matrix p = out.array().exp().matrix();
  return g.record(std::move(out), {a}, [a, p = std::move(p)](Graph& g, const Matrix& go) {
    Matrix gi = go;
    for (Eigen::Index r = 0; r < p.rows(); ++r) gi.row(r) -= p.row(r) * go.row(r).sum();
    g.accumulate(a, gi);
  });
}

Var masked_softmax_rows(const Var& a, const Eigen::MatrixXi& mask) {
  auto& g = graph_of(a);
  require(mask.rows() == a.rows() && mask.cols() == a.cols(), "mask shape mismatch");
  const Matrix& x = a.value();
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (mask(r, c) != 0) m = std::max(m, x(r, c));
    require(std::isfinite(m), "masked softmax row has no unmasked entry");
    double z = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask(r, c) != 0) {
        y(r, c) = std::exp(x(r, c) - m);
        z += y(r, c);
      }
    }
    y.row(r) /= z;
  }
  Matrix out = y;
  return g.record(std::move(out), {a}, [a, y = std::move(y)](Graph& g, const Matrix& go) {
    // Masked entries have y == 0, so the dense softmax Jacobian applies.
    g.accumulate(a, softmax_backward(y, go));
  });
}

Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps) {
  auto& g = graph_of(a);
  const Matrix& x = a.value();
  const auto n = static_cast<double>(x.cols());
  require(gain.cols() == x.cols() && bias.cols() == x.cols(), "layer_norm shape mismatch");
  Matrix xhat(x.rows(), x.cols());
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().sum() / n;
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return g.record(std::move(out), {a, gain, bias},
                  [a, gain, bias, xhat = std::move(xhat), inv_std](Graph& g, const Matrix& go) {
                    const auto n = static_cast<double>(xhat.cols());
                    if (g.needs_grad(gain)) g.accumulate(gain, go.cwiseProduct(xhat).colwise().sum());
                    if (g.needs_grad(bias)) g.accumulate(bias, go.colwise().sum());
                    if (g.needs_grad(a)) {
                      Matrix dxhat = go.array().rowwise() * gain.value().row(0).array();
                      Matrix gi(xhat.rows(), xhat.cols());
                      for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                        const double s1 = dxhat.row(r).sum();
                        const double s2 = dxhat.row(r).dot(xhat.row(r));
                        gi.row(r) = (inv_std(r) / n) * (n * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2);
                      }
                      g.accumulate(a, gi);
                    }
                  });
}

Var gather_rows(const Var& table, const std::vector<int>& ids) {
  auto& g = graph_of(table);
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < table.rows(), "gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  return g.record(std::move(out), {table}, [table, ids](Graph& g, const Matrix& go) {
    Matrix gt = Matrix::Zero(table.rows(), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) gt.row(ids[i]) += go.row(static_cast<Eigen::Index>(i));
    g.accumulate(table, gt);
  });
}

Var repeat_rows(const Var& a, int times) {
  auto& g = graph_of(a);
  const Matrix& x = a.value();
  Matrix out(x.rows() * times, x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (int k = 0; k < times; ++k) out.row(r * times + k) = x.row(r);
  return g.record(std::move(out), {a}, [a, times](Graph& g, const Matrix& go) {
    Matrix gi = Matrix::Zero(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < gi.rows(); ++r)
      for (int k = 0; k < times; ++k) gi.row(r) += go.row(r * times + k);
    g.accumulate(a, gi);
  });
}

Var tile_rows(const Var& a, int times) {
  auto& g = graph_of(a);
  const Matrix& x = a.value();
  Matrix out(x.rows() * times, x.cols());
  for (int k = 0; k < times; ++k) out.middleRows(k * x.rows(), x.rows()) = x;
  return g.record(std::move(out), {a}, [a, times](Graph& g, const Matrix& go) {
    Matrix gi = Matrix::Zero(a.rows(), a.cols());
    for (int k = 0; k < times; ++k) gi += go.middleRows(k * a.rows(), a.rows());
    g.accumulate(a, gi);
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  auto& g = graph_of(a);
  require(rows * cols == a.rows() * a.cols(), "reshape size mismatch");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor src = a.value();
  Matrix out = Eigen::Map<RowMajor>(src.data(), rows, cols);
  return g.record(std::move(out), {a}, [a](Graph& g, const Matrix& go) {
    RowMajor gsrc = go;
    Matrix gi = Eigen::Map<RowMajor>(gsrc.data(), a.rows(), a.cols());
    g.accumulate(a, gi);
  });
}

Var gather_pairs(const Var& table, const Eigen::MatrixXi& labels) {
  auto& g = graph_of(table);
  require(table.cols() == 1, "gather_pairs expects a column table");
  Matrix out = Matrix::Zero(labels.rows(), labels.cols());
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    for (Eigen::Index j = 0; j < labels.cols(); ++j) {
      const int l = labels(i, j);
      if (l == 0) continue;
      require(l < table.rows(), "gather_pairs label out of range");
      out(i, j) = table.value()(l, 0);
    }
  }
  return g.record(std::move(out), {table}, [table, labels](Graph& g, const Matrix& go) {
    Matrix gt = Matrix::Zero(table.rows(), 1);
    for (Eigen::Index i = 0; i < labels.rows(); ++i)
      for (Eigen::Index j = 0; j < labels.cols(); ++j)
        if (labels(i, j) != 0) gt(labels(i, j), 0) += go(i, j);
    g.accumulate(table, gt);
  });
}

Var scatter_pairs(const Var& a, const Eigen::MatrixXi& labels, int num_labels) {
  auto& g = graph_of(a);
  require(labels.rows() == a.rows() && labels.cols() == a.cols(), "scatter_pairs shape mismatch");
  Matrix out = Matrix::Zero(a.rows(), num_labels);
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    for (Eigen::Index j = 0; j < labels.cols(); ++j) {
      const int l = labels(i, j);
      if (l == 0) continue;
      require(l < num_labels, "scatter_pairs label out of range");
      out(i, l) += a.value()(i, j);
    }
  }
  return g.record(std::move(out), {a}, [a, labels](Graph& g, const Matrix& go) {
    Matrix gi = Matrix::Zero(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < labels.rows(); ++i)
      for (Eigen::Index j = 0; j < labels.cols(); ++j)
        if (labels(i, j) != 0) gi(i, j) = go(i, labels(i, j));
    g.accumulate(a, gi);
  });
}

Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets) {
  auto& g = graph_of(logits);
  require(static_cast<Eigen::Index>(targets.size()) == logits.rows(), "cross_entropy target count mismatch");
  const Matrix& x = logits.value();
  Matrix p = softmax_rows(x);
  double loss = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    require(t >= 0 && t < x.cols(), "cross_entropy target out of range");
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    loss += lse - x(r, t);
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  return g.record(std::move(out), {logits}, [logits, targets, p = std::move(p)](Graph& g, const Matrix& go) {
    Matrix gi = p;
    for (Eigen::Index r = 0; r < gi.rows(); ++r) gi(r, targets[static_cast<std::size_t>(r)]) -= 1.0;
    g.accumulate(logits, gi * go(0, 0));
  });
}

Var binary_cross_entropy_rows(const Var& logits, const std::vector<int>& targets) {
  auto& g = graph_of(logits);
  require(static_cast<Eigen::Index>(targets.size()) == logits.rows(), "bce target count mismatch");
  const Matrix& x = logits.value();
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    require(t >= 0 && t < x.cols(), "bce target out of range");
    y(r, t) = 1.0;
  }
  double loss = 0.0;
  Matrix sig(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double v = x(r, c);
      // Stable form of -[y log s(v) + (1-y) log(1 - s(v))].
      loss += std::max(v, 0.0) - v * y(r, c) + std::log1p(std::exp(-std::abs(v)));
      sig(r, c) = 1.0 / (1.0 + std::exp(-v));
    }
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  return g.record(std::move(out), {logits}, [logits, gi = Matrix(sig - y)](Graph& g, const Matrix& go) {
    g.accumulate(logits, gi * go(0, 0));
  });
}

}  // namespace spandiff::autograd
