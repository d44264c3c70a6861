#include <doctest.h>

#include <random>

#include "spandiff/autograd.hpp"
#include "support.hpp"

using namespace spandiff;
using namespace spandiff::autograd;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

// Checks every parameter of `store` against central differences of
// loss = sum(op(params) .* probe).
void check_op(ParameterStore& store, const std::function<Var(Graph&)>& op, double tol = 1e-6) {
  std::mt19937_64 rng(99);
  Matrix probe;
  {
    Graph g(false);
    const Var out = op(g);
    probe = random_matrix(out.rows(), out.cols(), rng);
  }
  auto forward = [&] {
    Graph g(false);
    return (op(g).value().array() * probe.array()).sum();
  };
  store.zero_grad();
  Graph g;
  Var loss = sum(hadamard(op(g), g.constant(probe)));
  g.backward(loss);
  for (auto& p : store.all()) {
    const Matrix analytic = p.grad;
    CHECK_MESSAGE(testing::gradient_check(p, forward, analytic) < tol, p.name);
  }
}

}  // namespace

TEST_CASE("elementwise and linear ops match central differences") {
  std::mt19937_64 rng(1);
  ParameterStore s;
  auto& a = s.create("a", random_matrix(3, 4, rng));
  auto& b = s.create("b", random_matrix(4, 2, rng));
  auto& c = s.create("c", random_matrix(3, 4, rng));
  auto& row = s.create("row", random_matrix(1, 4, rng));
  auto& col = s.create("col", random_matrix(3, 1, rng));

  check_op(s, [&](Graph& g) { return matmul(g.param(a), g.param(b)); });
  check_op(s, [&](Graph& g) { return add(g.param(a), g.param(c)); });
  check_op(s, [&](Graph& g) { return sub(g.param(a), g.param(c)); });
  check_op(s, [&](Graph& g) { return hadamard(g.param(a), g.param(c)); });
  check_op(s, [&](Graph& g) { return scale(g.param(a), -2.5); });
  check_op(s, [&](Graph& g) { return transpose(g.param(a)); });
  check_op(s, [&](Graph& g) { return add_row(g.param(a), g.param(row)); });
  check_op(s, [&](Graph& g) { return mul_row(g.param(a), g.param(row)); });
  check_op(s, [&](Graph& g) { return add_col(g.param(a), g.param(col)); });
  check_op(s, [&](Graph& g) { return sum(g.param(a)); });
  check_op(s, [&](Graph& g) { return sigmoid(g.param(a)); });
  check_op(s, [&](Graph& g) { return tanh(g.param(a)); });
  check_op(s, [&](Graph& g) { return relu(add(g.param(a), g.constant(Matrix::Constant(3, 4, 0.05)))); });
}

TEST_CASE("normalisations match central differences") {
  std::mt19937_64 rng(2);
  ParameterStore s;
  auto& a = s.create("a", random_matrix(3, 5, rng));
  auto& gain = s.create("gain", random_matrix(1, 5, rng));
  auto& bias = s.create("bias", random_matrix(1, 5, rng));
  Eigen::MatrixXi mask(3, 5);
  mask << 1, 0, 1, 0, 0, 0, 0, 0, 2, 0, 1, 1, 1, 1, 1;

  check_op(s, [&](Graph& g) { return softmax_rows(g.param(a)); });
  check_op(s, [&](Graph& g) { return log_softmax_rows(g.param(a)); });
  check_op(s, [&](Graph& g) { return masked_softmax_rows(g.param(a), mask); });
  check_op(s, [&](Graph& g) { return layer_norm_rows(g.param(a), g.param(gain), g.param(bias)); }, 1e-5);
}

TEST_CASE("indexing ops match central differences") {
  std::mt19937_64 rng(3);
  ParameterStore s;
  auto& table = s.create("table", random_matrix(4, 3, rng));
  auto& col = s.create("col", random_matrix(5, 1, rng));
  auto& a = s.create("a", random_matrix(3, 3, rng));
  Eigen::MatrixXi labels(3, 3);
  labels << 2, 1, 0, 1, 2, 4, 0, 4, 3;

  check_op(s, [&](Graph& g) { return gather_rows(g.param(table), {3, 0, 3, 1}); }, 1e-5);
  check_op(s, [&](Graph& g) { return repeat_rows(g.param(table), 3); }, 1e-5);
  check_op(s, [&](Graph& g) { return tile_rows(g.param(table), 2); }, 1e-5);
  check_op(s, [&](Graph& g) { return reshape(g.param(table), 2, 6); }, 1e-5);
  check_op(s, [&](Graph& g) { return gather_pairs(g.param(col), labels); }, 1e-5);
  check_op(s, [&](Graph& g) { return scatter_pairs(g.param(a), labels, 5); }, 1e-5);
}

TEST_CASE("losses match central differences and brute force") {
  std::mt19937_64 rng(4);
  ParameterStore s;
  auto& logits = s.create("logits", random_matrix(3, 4, rng, 2.0));
  const std::vector<int> targets = {2, 0, 3};
  check_op(s, [&](Graph& g) { return cross_entropy_rows(g.param(logits), targets); });
  check_op(s, [&](Graph& g) { return binary_cross_entropy_rows(g.param(logits), targets); });

  double ce = 0.0;
  double bce = 0.0;
  for (int r = 0; r < 3; ++r) {
    double z = 0.0;
    for (int c = 0; c < 4; ++c) z += std::exp(logits.value(r, c));
    ce -= std::log(std::exp(logits.value(r, targets[r])) / z);
    for (int c = 0; c < 4; ++c) {
      const double p = 1.0 / (1.0 + std::exp(-logits.value(r, c)));
      bce -= c == targets[r] ? std::log(p) : std::log(1.0 - p);
    }
  }
  Graph g(false);
  CHECK(cross_entropy_rows(g.param(logits), targets).value()(0, 0) == doctest::Approx(ce).epsilon(1e-12));
  CHECK(binary_cross_entropy_rows(g.param(logits), targets).value()(0, 0) == doctest::Approx(bce).epsilon(1e-12));
}

TEST_CASE("masked softmax puts exact zeros on masked cells") {
  Graph g(false);
  Matrix a = Matrix::Random(2, 3) * 50.0;
  Eigen::MatrixXi mask(2, 3);
  mask << 1, 0, 0, 0, 3, 1;
  const Matrix y = masked_softmax_rows(g.constant(a), mask).value();
  CHECK(y(0, 0) == 1.0);
  CHECK(y(0, 1) == 0.0);
  CHECK(y(0, 2) == 0.0);
  CHECK(y(1, 0) == 0.0);
  CHECK(y.row(1).sum() == doctest::Approx(1.0));
}

TEST_CASE("gradients accumulate over repeated use of one parameter") {
  ParameterStore s;
  auto& w = s.create("w", Matrix::Constant(1, 1, 3.0));
  Graph g;
  Var x = g.param(w);
  Var y = add(hadamard(x, x), scale(x, 2.0));  // w^2 + 2w
  g.backward(sum(y));
  CHECK(w.grad(0, 0) == doctest::Approx(8.0));
}

TEST_CASE("a graph without a tape records no gradients") {
  ParameterStore s;
  auto& w = s.create("w", Matrix::Ones(2, 2));
  Graph g(false);
  Var y = sum(g.param(w));
  CHECK_FALSE(g.needs_grad(y));
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);
  CHECK(w.grad.isZero());
}

TEST_CASE("parameter store rejects duplicate names") {
  ParameterStore s;
  s.create("x", Matrix::Zero(1, 1));
  CHECK_THROWS_AS(s.create("x", Matrix::Zero(1, 1)), std::invalid_argument);
  CHECK(s.scalar_count() == 1);
}
