#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sfkit/checkpoint.hpp"
#include "sfkit/grad.hpp"
#include "sfkit/rng.hpp"

using namespace sfk;
using namespace sfk::grad;

namespace {

ParameterStore random_params(const std::vector<std::tuple<std::string, int, int>>& shapes,
                             uint64_t seed) {
  Rng rng(seed);
  ParameterStore store;
  for (const auto& [name, r, c] : shapes)
    store.add(name, init_matrix(r, c, 0.5, &rng));
  return store;
}

// Finite-difference pass for a scalar function of a single parameter "x".
double check_unary(const std::function<Value(Graph&, Value)>& op, int rows,
                   int cols, uint64_t seed, double shift = 0.0) {
  ParameterStore store = random_params({{"x", rows, cols}}, seed);
  if (shift != 0.0) store.at("x").tensor.m.array() += shift;
  const auto f = [&](ParameterStore& p, std::map<std::string, Matd>* grads) {
    Graph g;
    Value x = g.param(p, "x");
    Value y = op(g, x);
    Value loss = sum_all(y);
    if (grads) {
      g.backward(loss);
      *grads = g.param_grads();
    }
    return loss.val()(0, 0);
  };
  return finite_diff_check(f, store, 1e-5).max_rel_error;
}

}  // namespace

TEST_CASE("forward values: sigmoid, softmax, depthwise identity kernel") {
  Graph g;
  Value z = sigmoid(g.input(Matd::Zero(1, 1)));
  CHECK(z.val()(0, 0) == doctest::Approx(0.5));

  // softmax of a constant vector is uniform and sums to one
  Value s = softmax(g.input(Matd::Constant(1, 7, 3.25)), 1);
  for (int c = 0; c < 7; ++c)
    CHECK(s.val()(0, c) == doctest::Approx(1.0 / 7.0));
  CHECK(s.val().sum() == doctest::Approx(1.0).epsilon(1e-12));

  // depthwise conv with kernel [0,1,0] is the identity on every channel
  Rng rng(5);
  Matd x(6, 3);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 3; ++c) x(r, c) = rng.normal();
  Matd k = Matd::Zero(3, 3);
  k.row(1).setOnes();
  Value y = depthwise_conv1d(g.input(x), g.input(k), g.input(Matd::Zero(1, 3)));
  CHECK((y.val() - x).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("softmax outputs are a distribution along the reduced axis") {
  Rng rng(17);
  Matd x(4, 6);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 6; ++c) x(r, c) = rng.normal(0, 5);
  Graph g;
  Value s1 = softmax(g.input(x), 1);
  for (int r = 0; r < 4; ++r) {
    CHECK(s1.val().row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s1.val().row(r).minCoeff() >= 0.0);
  }
  Value s0 = softmax(g.input(x), 0);
  for (int c = 0; c < 6; ++c)
    CHECK(s0.val().col(c).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("l2_normalize_rows produces unit rows") {
  Rng rng(23);
  Matd x(5, 8);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 8; ++c) x(r, c) = rng.normal();
  Graph g;
  Value y = l2_normalize_rows(g.input(x));
  for (int r = 0; r < 5; ++r)
    CHECK(y.val().row(r).norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("backward before forward output is rejected") {
  Graph g;
  Value x = g.input(Matd::Zero(2, 2));
  CHECK_THROWS_AS(g.grad_of(x), DataError);
  CHECK_THROWS_AS(g.backward(x), DataError);  // not 1x1
}

TEST_CASE("sigmoid derivative at zero is exactly 0.25") {
  ParameterStore store;
  store.add("x", init_matrix(1, 1, 0.0, nullptr));
  Graph g;
  Value y = sum_all(sigmoid(g.param(store, "x")));
  g.backward(y);
  CHECK(g.param_grads().at("x")(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("every primitive passes the finite-difference check") {
  const double tol = 1e-6;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng shapes(seed * 77);
    const int r = 2 + int(shapes.next_below(3));
    const int c = 2 + int(shapes.next_below(4));

    CHECK(check_unary([](Graph&, Value x) { return exp(x); }, r, c, seed) < tol);
    CHECK(check_unary([](Graph&, Value x) { return log(x); }, r, c, seed, 4.0) < tol);
    CHECK(check_unary([](Graph&, Value x) { return sigmoid(x); }, r, c, seed) < tol);
    CHECK(check_unary([](Graph&, Value x) { return tanh(x); }, r, c, seed) < tol);
    CHECK(check_unary([](Graph&, Value x) { return relu(x); }, r, c, seed, 0.37) < tol);
    CHECK(check_unary([](Graph&, Value x) { return swish(x); }, r, c, seed) < tol);
    CHECK(check_unary([](Graph&, Value x) { return affine(x, -1.7, 0.4); }, r, c, seed) < tol);
    CHECK(check_unary([](Graph&, Value x) { return clamp(x, -0.5, 0.5); }, r, c, seed, 0.13) < tol);
    CHECK(check_unary([](Graph&, Value x) { return softmax(x, 1); }, r, c, seed) < tol);
    CHECK(check_unary([](Graph&, Value x) { return softmax(x, 0); }, r, c, seed) < tol);
    CHECK(check_unary([](Graph&, Value x) { return l2_normalize_rows(x); }, r, c, seed) < tol);
    CHECK(check_unary([](Graph&, Value x) { return transpose(x); }, r, c, seed) < tol);
    CHECK(check_unary([](Graph&, Value x) { return sum_axis(x, 0); }, r, c, seed) < tol);
    CHECK(check_unary([](Graph&, Value x) { return mean_axis(x, 1); }, r, c, seed) < tol);
    CHECK(check_unary(
              [](Graph&, Value x) {
                return slice(x, 0, x.rows() - 1, 1, x.cols() - 1);
              },
              r + 1, c + 1, seed) < tol);
  }
}

TEST_CASE("binary and shaped primitives pass the finite-difference check") {
  const double tol = 1e-6;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng shapes(seed * 131);
    const int n = 2 + int(shapes.next_below(3));
    const int m = 2 + int(shapes.next_below(3));
    const int k = 2 + int(shapes.next_below(3));

    // matmul + add + mul + sub chain
    {
      ParameterStore store =
          random_params({{"a", n, m}, {"b", m, k}, {"c", n, k}}, seed);
      const auto f = [&](ParameterStore& p, std::map<std::string, Matd>* grads) {
        Graph g;
        Value a = g.param(p, "a");
        Value b = g.param(p, "b");
        Value c = g.param(p, "c");
        Value y = sub(mul(matmul(a, b), c), c);
        Value loss = sum_all(mul(y, y));
        if (grads) {
          g.backward(loss);
          *grads = g.param_grads();
        }
        return loss.val()(0, 0);
      };
      CHECK(finite_diff_check(f, store, 1e-5).max_rel_error < tol);
    }

    // rowwise broadcast ops and concat/slice
    {
      ParameterStore store =
          random_params({{"x", n, m}, {"w", 1, m}, {"v", 1, m}}, seed + 1);
      const auto f = [&](ParameterStore& p, std::map<std::string, Matd>* grads) {
        Graph g;
        Value x = g.param(p, "x");
        Value w = g.param(p, "w");
        Value v = g.param(p, "v");
        Value y = rowwise_mul(rowwise_add(x, w), v);
        Value z = concat_rows({y, y});
        Value zz = concat_cols({z, z});
        Value loss = sum_all(mul(zz, zz));
        if (grads) {
          g.backward(loss);
          *grads = g.param_grads();
        }
        return loss.val()(0, 0);
      };
      CHECK(finite_diff_check(f, store, 1e-5).max_rel_error < tol);
    }

    // depthwise convolution
    {
      ParameterStore store =
          random_params({{"x", n + 3, m}, {"k", 3, m}, {"b", 1, m}}, seed + 2);
      const auto f = [&](ParameterStore& p, std::map<std::string, Matd>* grads) {
        Graph g;
        Value y = depthwise_conv1d(g.param(p, "x"), g.param(p, "k"),
                                   g.param(p, "b"));
        Value loss = sum_all(mul(y, y));
        if (grads) {
          g.backward(loss);
          *grads = g.param_grads();
        }
        return loss.val()(0, 0);
      };
      CHECK(finite_diff_check(f, store, 1e-5).max_rel_error < tol);
    }

    // layer norm
    {
      ParameterStore store =
          random_params({{"x", n + 1, m + 2}, {"g", 1, m + 2}, {"b", 1, m + 2}},
                        seed + 3);
      const auto f = [&](ParameterStore& p, std::map<std::string, Matd>* grads) {
        Graph g;
        Value y = layer_norm(g.param(p, "x"), g.param(p, "g"), g.param(p, "b"));
        Value loss = sum_all(mul(y, y));
        if (grads) {
          g.backward(loss);
          *grads = g.param_grads();
        }
        return loss.val()(0, 0);
      };
      CHECK(finite_diff_check(f, store, 1e-5).max_rel_error < tol);
    }
  }
}

TEST_CASE("batch norm: train and eval modes pass finite differences") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    ParameterStore store =
        random_params({{"x", 6, 4}, {"gamma", 1, 4}, {"beta", 1, 4}}, seed);
    store.at("gamma").tensor.m.array() += 1.0;
    store.add("bn.mean", init_vector(4, 0.1), false);
    store.add("bn.var", init_vector(4, 0.9), false);
    const BatchNormStats stats{"bn.mean", "bn.var"};

    for (const bool training : {true, false}) {
      // Stats mutate during train-mode forwards; keep f pure by restoring.
      const Matd mean0 = store.at("bn.mean").tensor.m;
      const Matd var0 = store.at("bn.var").tensor.m;
      const auto f = [&](ParameterStore& p, std::map<std::string, Matd>* grads) {
        p.at("bn.mean").tensor.m = mean0;
        p.at("bn.var").tensor.m = var0;
        Graph g(training);
        Value y = batch_norm(g.param(p, "x"), g.param(p, "gamma"),
                             g.param(p, "beta"), p, stats);
        Value loss = sum_all(mul(y, y));
        if (grads) {
          g.backward(loss);
          *grads = g.param_grads();
        }
        return loss.val()(0, 0);
      };
      CHECK(finite_diff_check(f, store, 1e-5).max_rel_error < 1e-6);
      store.at("bn.mean").tensor.m = mean0;
      store.at("bn.var").tensor.m = var0;
    }
  }
}

TEST_CASE("dropout: eval identity, train-mode mean preservation and gradient") {
  Rng rng(99);
  Matd x(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) x(r, c) = 1.0 + 0.1 * rng.normal();

  // eval mode: identity
  Graph geval(false);
  Value ye = dropout(geval.input(x), 0.4);
  CHECK((ye.val() - x).cwiseAbs().maxCoeff() == doctest::Approx(0.0));

  // train mode: inverted scaling keeps the expected value within 1%
  double acc = 0.0;
  const int trials = 12000;
  for (int t = 0; t < trials; ++t) {
    Graph g(true, uint64_t(t) + 1);
    acc += dropout(g.input(x), 0.4).val().mean();
  }
  CHECK(acc / trials == doctest::Approx(x.mean()).epsilon(0.01));

  // gradients flow through the fixed mask
  ParameterStore store = random_params({{"x", 4, 4}}, 3);
  const auto f = [&](ParameterStore& p, std::map<std::string, Matd>* grads) {
    Graph g(true, 42);  // same mask per evaluation
    Value y = dropout(g.param(p, "x"), 0.3);
    Value loss = sum_all(mul(y, y));
    if (grads) {
      g.backward(loss);
      *grads = g.param_grads();
    }
    return loss.val()(0, 0);
  };
  CHECK(finite_diff_check(f, store, 1e-5).max_rel_error < 1e-6);
}

TEST_CASE("matmul gradient equals the transpose rule") {
  // d/dA sum(A·B) = ones · Bᵀ
  Rng rng(7);
  ParameterStore store = random_params({{"a", 3, 4}, {"b", 4, 2}}, 7);
  Graph g;
  Value a = g.param(store, "a");
  Value b = g.param(store, "b");
  g.backward(sum_all(matmul(a, b)));
  const Matd expect = Matd::Ones(3, 2) * store.at("b").tensor.m.transpose();
  CHECK((g.param_grads().at("a") - expect).cwiseAbs().maxCoeff() <
        1e-12);
  (void)rng;
}

TEST_CASE("l2-normalize gradient at a unit vector is the tangent projector") {
  // y = x/|x|; at |x|=1, dL/dx = (I - yyᵀ)·dL/dy.
  Matd x(1, 3);
  x << 1.0, 0.0, 0.0;
  Matd upstream(1, 3);
  upstream << 0.3, -0.7, 0.2;
  ParameterStore store;
  store.add("x", Tensor::from(x));
  Graph g;
  Value xv = g.param(store, "x");
  Value y = l2_normalize_rows(xv);
  // loss = sum(upstream ⊙ y) so dL/dy = upstream
  g.backward(sum_all(mul(y, g.input(upstream))));
  const Matd grad = g.param_grads().at("x");
  const Matd yv = x;  // already unit
  const Matd expect = upstream - (upstream * yv.transpose())(0, 0) * yv;
  CHECK((grad - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("finite_diff_check on linear and constant functions") {
  ParameterStore store = random_params({{"x", 2, 3}}, 21);
  const auto linear = [](ParameterStore& p, std::map<std::string, Matd>* grads) {
    Graph g;
    Value loss = sum_all(scale(g.param(p, "x"), 3.0));
    if (grads) {
      g.backward(loss);
      *grads = g.param_grads();
    }
    return loss.val()(0, 0);
  };
  CHECK(finite_diff_check(linear, store, 1e-5).max_rel_error <= 1e-9);

  const auto constant = [](ParameterStore& p, std::map<std::string, Matd>* grads) {
    Graph g;
    Value loss = g.constant(4.2);
    if (grads) {
      g.backward(loss);
      for (auto& [name, param] : p.entries())
        (*grads)[name] = Matd::Zero(param.tensor.m.rows(), param.tensor.m.cols());
    }
    return loss.val()(0, 0);
  };
  CHECK(finite_diff_check(constant, store, 1e-5).max_rel_error == 0.0);

  CHECK_THROWS_AS(finite_diff_check(linear, store, 1e-2), ConfigError);
}

TEST_CASE("adamw: zero gradient leaves parameters, pure decay scales them") {
  ParameterStore store = random_params({{"p", 2, 2}}, 4);
  const Matd before = store.at("p").tensor.m;
  AdamWState state;
  std::map<std::string, Matd> grads{{"p", Matd::Zero(2, 2)}};

  adamw_step(store, grads, state, 0.01, 0.9, 0.999, 1e-8, 0.0);
  CHECK((store.at("p").tensor.m - before).cwiseAbs().maxCoeff() == 0.0);

  adamw_step(store, grads, state, 0.01, 0.9, 0.999, 1e-8, 0.1);
  CHECK((store.at("p").tensor.m - before * (1.0 - 0.001)).cwiseAbs().maxCoeff() <
        1e-15);
}

TEST_CASE("adamw single-step closed form") {
  // p=1, g=1, lr=0.1: m̂=v̂=1 → p ← 1 − 0.1/(1+1e-8), no decay.
  ParameterStore store;
  store.add("p", Tensor::from(Matd::Constant(1, 1, 1.0)));
  AdamWState state;
  std::map<std::string, Matd> grads{{"p", Matd::Constant(1, 1, 1.0)}};
  adamw_step(store, grads, state, 0.1);
  const double expect = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
  CHECK(store.at("p").tensor.m(0, 0) == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("adamw skips frozen parameters and rejects non-finite gradients") {
  ParameterStore store;
  store.add("frozen", Tensor::from(Matd::Constant(1, 1, 2.0)), false);
  AdamWState state;
  std::map<std::string, Matd> grads{{"frozen", Matd::Constant(1, 1, 1.0)}};
  adamw_step(store, grads, state, 0.1, 0.9, 0.999, 1e-8, 0.5);
  CHECK(store.at("frozen").tensor.m(0, 0) == doctest::Approx(2.0));

  ParameterStore store2;
  store2.add("p", Tensor::from(Matd::Constant(1, 1, 1.0)));
  std::map<std::string, Matd> bad{
      {"p", Matd::Constant(1, 1, std::numeric_limits<double>::quiet_NaN())}};
  AdamWState state2;
  CHECK_THROWS_AS(adamw_step(store2, bad, state2, 0.1), NumericError);
}

TEST_CASE("non-finite forward values raise immediately") {
  Graph g;
  Value x = g.input(Matd::Constant(1, 1, -1.0));
  CHECK_THROWS_AS(log(x), NumericError);
}

TEST_CASE("checkpoint round-trip preserves names, flags, dims and f32 values") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "sfkit_test_ckpt";
  fs::create_directories(dir);
  const std::string path = (dir / "model.sfkc").string();

  Rng rng(31);
  ParameterStore store;
  store.add("layer.w", init_matrix(3, 5, 1.0, &rng), true);
  store.add("layer.b", init_vector(5, 0.25), true);
  store.add("bn.mean", init_vector(5, -0.5), false);

  save_checkpoint(store, path);
  const ParameterStore loaded = load_checkpoint(path);
  CHECK(loaded.entries().size() == 3);
  CHECK(loaded.at("layer.w").trainable);
  CHECK(!loaded.at("bn.mean").trainable);
  CHECK(loaded.at("layer.b").tensor.dims == std::vector<int>{5});
  CHECK(loaded.at("layer.w").tensor.dims == std::vector<int>{3, 5});
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < 5; ++c)
      CHECK(loaded.at("layer.w").tensor.m(r, c) ==
            doctest::Approx(double(float(store.at("layer.w").tensor.m(r, c)))));

  SUBCASE("bad magic is reported") {
    std::ofstream bad(path, std::ios::binary);
    bad << "NOPE";
    bad.close();
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
  }
  fs::remove_all(dir);
}

TEST_CASE("parameter store counts by prefix and trainability") {
  ParameterStore store;
  store.add("enc.w", Tensor::matrix(4, 4));
  store.add("enc.b", Tensor::vector(4));
  store.add("head.w", Tensor::matrix(4, 2), false);
  CHECK(store.count() == 28);
  CHECK(store.count("enc.") == 20);
  CHECK(store.count_trainable() == 20);
  store.set_trainable("enc.", false);
  CHECK(store.count_trainable() == 0);
}
