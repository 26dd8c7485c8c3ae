#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>

#include "grad_cases.hpp"
#include "helpers.hpp"
#include "structssl/ops.hpp"
#include "structssl/optim.hpp"
#include "structssl/serialize.hpp"
#include "structssl/tensor.hpp"

using namespace structssl;
using testutil::random_tensor;
using testutil::weighted_sum;
using testutil::op_cases;

namespace {

std::vector<double> triple_loop(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * n + j] += a[i * k + t] * b[t * n + j];
  return c;
}

std::vector<double> grads_of(const std::function<Tensor(const Tensor&)>& f, const Tensor& point) {
  Tensor x(point.shape(), std::vector<double>(point.values().begin(), point.values().end()), true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = f(x);
  tape.backward(y);
  return x.grad();
}

}  // namespace

TEST_CASE("forward values of elementary ops") {
  Rng rng(1);
  Tensor A = random_tensor({3, 3}, rng);
  Tensor I({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor IA = ops::matmul(I, A);
  for (std::size_t i = 0; i < 9; ++i) CHECK(IA[i] == A[i]);
  CHECK(ops::sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(ops::relu(Tensor::scalar(-1.0)).item() == 0.0);
  CHECK(std::isnan(ops::relu(Tensor::scalar(std::nan(""))).item()));
  CHECK(ops::sigmoid(Tensor::scalar(-800.0)).item() >= 0.0);
  CHECK(ops::logsumexp(Tensor({2}, {1000.0, 1000.0})).item() == doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("matmul matches a triple loop") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng);
    Tensor c = ops::matmul(a, b);
    const auto ref = triple_loop(a, b);
    REQUIRE(c.shape() == Shape{4, 3});
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(c[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("conv2d matches a direct convolution") {
  Rng rng(3);
  Tensor x = random_tensor({2, 3, 5, 5}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
  Tensor y = ops::conv2d(x, w, b);
  REQUIRE(y.shape() == Shape{2, 4, 5, 5});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (int yy = 0; yy < 5; ++yy)
        for (int xx = 0; xx < 5; ++xx) {
          double acc = b[o];
          for (std::size_t c = 0; c < 3; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int sy = yy + ky - 1, sx = xx + kx - 1;
                if (sy < 0 || sy >= 5 || sx < 0 || sx >= 5) continue;
                acc += w[((o * 3 + c) * 3 + ky) * 3 + kx] * x[((n * 3 + c) * 5 + sy) * 5 + sx];
              }
          CHECK(std::abs(y[((n * 4 + o) * 5 + yy) * 5 + xx] - acc) < 1e-12);
        }
}

TEST_CASE("shape and domain errors") {
  Tensor a = Tensor::zeros({4, 5}), b = Tensor::zeros({4, 3});
  try {
    ops::matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("5") != std::string::npos);
    CHECK(msg.find("4") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::add(Tensor::zeros({2, 3}), Tensor::zeros({4})), ShapeError);
  CHECK_THROWS_AS(ops::log(Tensor({2}, {1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(ops::log(Tensor({1}, {-3.0})), DomainError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), ShapeError);
  CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1})), ShapeError);
  CHECK_THROWS_AS(ops::avg_pool2x2(Tensor::zeros({1, 1, 3, 4})), ShapeError);
}

TEST_CASE("backward basics") {
  SUBCASE("x squared at 3") {
    Tensor x = Tensor::scalar(3.0, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = ops::mul(x, x);
    tape.backward(loss);
    CHECK(x.grad()[0] == 6.0);
  }
  SUBCASE("disconnected leaf gets zero") {
    Tensor x = Tensor::scalar(2.0, true), p = Tensor::full({3}, 1.5, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor unused = ops::scale(p, 2.0);
    Tensor loss = ops::mul(x, x);
    const Tensor wrt[] = {x, p};
    auto g = gradients(loss, tape, wrt);
    CHECK(g[0][0] == 4.0);
    for (double v : g[1]) CHECK(v == 0.0);
    for (double v : p.grad()) CHECK(v == 0.0);
  }
  SUBCASE("mean(sigmoid(Wx)) matches finite differences") {
    Rng rng(4);
    Tensor xin = random_tensor({3, 1}, rng);
    auto f = [&](const Tensor& W) { return ops::mean(ops::sigmoid(ops::matmul(W, xin))); };
    for (int trial = 0; trial < 5; ++trial) CHECK(grad_check(f, random_tensor({4, 3}, rng), 1e-5) < 1e-4);
  }
  SUBCASE("non-scalar loss and foreign tape are rejected") {
    Tensor x = Tensor::full({3}, 1.0, true);
    Tape t1, t2;
    Tensor y;
    {
      TapeScope scope(t1);
      y = ops::scale(x, 2.0);
    }
    CHECK_THROWS_AS(t1.backward(y), ShapeError);
    Tensor s;
    {
      TapeScope scope(t1);
      s = ops::sum(y);
    }
    CHECK_THROWS_AS(t2.backward(s), std::invalid_argument);
    CHECK_NOTHROW(t1.backward(s));
  }
  SUBCASE("no-grad scope records nothing") {
    Tensor x = Tensor::full({3}, 1.0, true);
    Tape tape;
    TapeScope scope(tape);
    {
      NoGradScope off;
      Tensor y = ops::scale(x, 2.0);
      CHECK_FALSE(y.requires_grad());
    }
    CHECK(tape.num_ops() == 0);
  }
  SUBCASE("shared subexpressions accumulate") {
    Tensor x = Tensor::scalar(1.5, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = ops::exp(x);
    Tensor loss = ops::add(ops::mul(y, y), y);
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2 * std::exp(3.0) + std::exp(1.5)).epsilon(1e-14));
  }
}

TEST_CASE("tensors on a live tape are frozen") {
  Tensor x = Tensor::full({2}, 1.0, true);
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = ops::sum(x);
    CHECK_THROWS_AS(x.mutable_values(), std::logic_error);
  }
  CHECK_NOTHROW(x.mutable_values()[0] = 2.0);
  Tensor c = x.clone();
  c.mutable_values()[0] = 7.0;
  CHECK(x[0] == 2.0);
}

TEST_CASE("every differentiable op passes grad checks at 10 random points") {
  for (const auto& op : op_cases()) {
    Rng rng(mix_seed(1234, std::hash<std::string>{}(op.name)));
    double worst = 0.0;
    for (int p = 0; p < 10; ++p) worst = std::max(worst, grad_check(op.f, random_tensor(op.input, rng, op.lo, op.hi)));
    INFO(op.name << " worst discrepancy " << worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("grad_check contract") {
  Rng rng(5);
  auto f = [](const Tensor& x) { return ops::sum(x); };
  CHECK(grad_check(f, random_tensor({7}, rng)) < 1e-10);
  CHECK_THROWS(grad_check([](const Tensor& x) { return ops::scale(x, 1.0); }, random_tensor({3}, rng)));
  CHECK_THROWS(grad_check(f, random_tensor({3}, rng), 0.0));
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(6);
  auto base = [](const Tensor& x) { return ops::mean(ops::sigmoid(ops::mul(x, ops::exp(x)))); };
  for (const auto& op : op_cases()) {
    const Tensor point = random_tensor(op.input, rng, op.lo, op.hi);
    const auto g = grads_of(op.f, point);
    for (double a : {-1.0, 0.5, 3.0}) {
      const auto ga = grads_of([&](const Tensor& x) { return ops::scale(op.f(x), a); }, point);
      for (std::size_t i = 0; i < g.size(); ++i) {
        INFO(op.name << " a=" << a);
        CHECK(std::abs(ga[i] - a * g[i]) <= 1e-12 * std::max(1.0, std::abs(a * g[i])));
      }
    }
  }
  const Tensor point = random_tensor({6}, rng);
  const auto g = grads_of(base, point);
  const auto g3 = grads_of([&](const Tensor& x) { return ops::scale(base(x), 3.0); }, point);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(g3[i] - 3.0 * g[i]) <= 1e-12 * std::abs(3.0 * g[i]));
}

TEST_CASE("deterministic replay is bitwise identical") {
  for (const auto& op : op_cases()) {
    Rng r1(77), r2(77);
    const Tensor p1 = random_tensor(op.input, r1, op.lo, op.hi), p2 = random_tensor(op.input, r2, op.lo, op.hi);
    CHECK(op.f(p1).item() == op.f(p2).item());
    const auto g1 = grads_of(op.f, p1), g2 = grads_of(op.f, p2);
    CHECK(g1 == g2);
  }
}

TEST_CASE("clamp_max counts clamped entries and blocks their gradient") {
  std::size_t n = 0;
  Tensor x({4}, {10.0, 50.0, 39.0, 41.0}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = ops::clamp_max(x, 40.0, &n);
  CHECK(n == 2);
  CHECK(y[1] == 40.0);
  tape.backward(ops::sum(y));
  CHECK(x.grad() == std::vector<double>{1.0, 0.0, 1.0, 0.0});
}

TEST_CASE("adam") {
  const AdamHyper h;
  SUBCASE("zero gradient at t=0 leaves the parameter unchanged") {
    Tensor p({3}, {0.5, -1.0, 2.0});
    AdamState s(3, h);
    adam_step(p, std::vector<double>(3, 0.0), s);
    CHECK(p.values()[0] == 0.5);
    CHECK(p.values()[1] == -1.0);
    CHECK(p.values()[2] == 2.0);
    CHECK(s.t == 1);
  }
  SUBCASE("first step matches the closed form") {
    for (double g : {0.3, -2.0, 1e-3, 50.0}) {
      Tensor p = Tensor::scalar(1.0);
      AdamState s(1, h);
      adam_step(p, std::vector<double>{g}, s);
      // m1 = (1-b1) g, v1 = (1-b2) g^2; bias correction recovers g and g^2.
      const double m_hat = ((1 - h.b1) * g) / (1 - h.b1);
      const double v_hat = ((1 - h.b2) * g * g) / (1 - h.b2);
      const double expected = 1.0 - h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
      CHECK(p.item() == doctest::Approx(expected).epsilon(1e-14));
      CHECK(std::abs((1.0 - p.item()) - h.lr * g / (std::abs(g) + h.eps)) < 1e-15);
    }
  }
  SUBCASE("constant gradient moves the parameter monotonically") {
    for (double g : {0.7, -0.7}) {
      Tensor p = Tensor::scalar(0.0);
      AdamState s(1, h);
      double prev = 0.0;
      for (int i = 0; i < 2; ++i) {
        adam_step(p, std::vector<double>{g}, s);
        if (g > 0) CHECK(p.item() < prev);
        else CHECK(p.item() > prev);
        prev = p.item();
      }
      CHECK(s.t == 2);
    }
  }
  SUBCASE("shape mismatch") {
    Tensor p({3}, {0, 0, 0});
    AdamState s(3, h);
    CHECK_THROWS_AS(adam_step(p, std::vector<double>(2, 1.0), s), ShapeError);
    AdamState wrong(2, h);
    CHECK_THROWS_AS(adam_step(p, std::vector<double>(3, 1.0), wrong), ShapeError);
  }
  SUBCASE("Adam minimizes a quadratic") {
    Tensor p({2}, {3.0, -2.0}, true);
    Adam opt({p}, AdamHyper{0.05});
    for (int i = 0; i < 500; ++i) {
      {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(ops::sum(ops::mul(p, p)));
      }
      opt.step();
    }
    CHECK(std::abs(p[0]) < 0.05);
    CHECK(std::abs(p[1]) < 0.05);
    CHECK(opt.steps() == 500);
  }
}

TEST_CASE("weight serialization") {
  Rng rng(8);
  NamedArrays arrays{{"theta.a", random_tensor({2, 3}, rng)}, {"w.b", random_tensor({4}, rng)},
                     {"s", Tensor::scalar(-0.0)}};
  const std::string bytes = encode_weights(arrays);
  REQUIRE(bytes.substr(0, 4) == "SSLW");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  auto back = decode_weights(bytes);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].first == arrays[i].first);
    CHECK(back[i].second.shape() == arrays[i].second.shape());
    for (std::size_t k = 0; k < back[i].second.numel(); ++k) CHECK(back[i].second[k] == arrays[i].second[k]);
  }
  // Little-endian count right after the version byte.
  CHECK(static_cast<unsigned char>(bytes[5]) == 3);

  SUBCASE("corruptions are rejected cleanly") {
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_weights(bad), std::runtime_error);
    bad = bytes;
    bad[4] = 2;
    CHECK_THROWS_AS(decode_weights(bad), std::runtime_error);
    CHECK_THROWS_AS(decode_weights(bytes + "x"), std::runtime_error);
    for (std::size_t cut = 0; cut < bytes.size(); cut += 7) CHECK_THROWS_AS(decode_weights(bytes.substr(0, cut)), std::runtime_error);
  }
  SUBCASE("file round trip") {
    const auto path = (std::filesystem::temp_directory_path() / "structssl_weights_test.sslw").string();
    save_weights(path, arrays);
    auto loaded = load_weights(path);
    CHECK(encode_weights(loaded) == bytes);
    std::filesystem::remove(path);
    CHECK_THROWS(load_weights(path));
  }
}
