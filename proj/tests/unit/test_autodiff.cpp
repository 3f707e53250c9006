#include <cmath>
#include <random>

#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace somforge;
using namespace somforge::ad;

namespace {

Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

class Doubler final : public LinearMap {
 public:
  std::string name() const override { return "doubler-with-shift"; }
  Shape output_shape(const Shape& s) const override { return s; }
  // y_i = 2 x_i + x_{i+1 mod n}
  Tensor apply(const Tensor& x) const override {
    auto v = x.values<double>();
    std::vector<double> y(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) y[i] = 2 * v[i] + v[(i + 1) % v.size()];
    return Tensor(x.shape(), std::move(y));
  }
  Tensor adjoint(const Tensor& y) const override {
    auto v = y.values<double>();
    const std::size_t n = v.size();
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = 2 * v[i] + v[(i + n - 1) % n];
    return Tensor(y.shape(), std::move(x));
  }
};

}  // namespace

TEST_CASE("leaky_relu applies the negative slope") {
  Tensor x = vec({-1.0, 2.0});
  const Tensor* in[] = {&x};
  Tensor y = forward_primitive(Primitive::leaky_relu, in, Attrs{0.2, {}, nullptr});
  CHECK(y.at(0) == doctest::Approx(-0.2));
  CHECK(y.at(1) == 2.0);
}

TEST_CASE("upsample replicates and avgpool inverts it exactly") {
  Tensor one(Shape{1, 1, 1, 1}, std::vector<float>{3.0f});
  Tape tape;
  Var u = upsample_nearest_2x(tape.constant(one));
  CHECK(u.shape() == Shape{1, 1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(u.value().at(i) == 3.0);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> dist(-1e3f, 1e3f);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> v(2 * 3 * 4 * 4);
    for (auto& x : v) x = dist(rng) * std::pow(10.0f, static_cast<float>(trial % 7 - 3));
    Tensor x(Shape{2, 3, 4, 4}, v);
    Tape t;
    Var back = avgpool_2x(upsample_nearest_2x(t.constant(x)));
    CHECK(back.value().bit_equal(x));
  }
}

TEST_CASE("shape mismatch names the primitive and both shapes") {
  Tensor a = Tensor::zeros(Shape{2, 3}, DType::f32);
  Tensor b = Tensor::zeros(Shape{3, 2}, DType::f32);
  const Tensor* in[] = {&a, &b};
  try {
    forward_primitive(Primitive::add, in, {});
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
  Tensor x = Tensor::zeros(Shape{1, 4, 5, 5}, DType::f32);
  Tensor w = Tensor::zeros(Shape{2, 3, 3, 3}, DType::f32);
  const Tensor* conv_in[] = {&x, &w};
  CHECK_THROWS_AS(forward_primitive(Primitive::conv2d, conv_in, {}), ShapeError);
}

TEST_CASE("mixed dtypes are rejected") {
  Tensor a = Tensor::zeros(Shape{2}, DType::f32);
  Tensor b = Tensor::zeros(Shape{2}, DType::f64);
  const Tensor* in[] = {&a, &b};
  CHECK_THROWS_AS(forward_primitive(Primitive::add, in, {}), DTypeError);
}

TEST_CASE("reduce_mean gradient is 1/N") {
  Tape tape;
  Var x = tape.variable(Tensor(Shape{4}, std::vector<double>{1, 2, 3, 4}));
  Var loss = reduce_mean(x);
  CHECK(loss.value().item() == doctest::Approx(2.5));
  Tensor g = tape.backward(loss).of(x);
  for (std::size_t i = 0; i < 4; ++i) CHECK(g.at(i) == 0.25);
}

TEST_CASE("zero scaling gives zero gradients; unused nodes get zeros") {
  Tape tape;
  Var x = tape.variable(Tensor(Shape{3}, std::vector<double>{1, -2, 3}));
  Var unused = tape.variable(Tensor(Shape{2}, std::vector<double>{5, 6}));
  Var loss = reduce_mean(scale(x, 0.0));
  Gradients g = tape.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g.of(x).at(i) == 0.0);
  CHECK_FALSE(g.has(unused));
  CHECK(g.of(unused).shape() == Shape{2});
  CHECK(g.of(unused).at(1) == 0.0);
}

TEST_CASE("backward requires a scalar loss") {
  Tape tape;
  Var x = tape.variable(Tensor(Shape{3}, std::vector<double>{1, 2, 3}));
  CHECK_THROWS_AS(tape.backward(tanh(x)), ShapeError);
}

TEST_CASE("backward is linear in the loss combination") {
  std::mt19937_64 rng(11);
  const double a = 1.7, b = -0.3;
  Tape tape;
  Var x = tape.variable(testing::random_tensor(Shape{2, 5}, rng));
  Var y = tape.variable(testing::random_tensor(Shape{2, 5}, rng));
  Gradients g = tape.backward(reduce_mean(add(scale(x, a), scale(y, b))));
  Tape tape2;
  Var x2 = tape2.variable(x.value());
  Tensor id = tape2.backward(reduce_mean(x2)).of(x2);
  for (std::size_t i = 0; i < 10; ++i) CHECK(g.of(x).at(i) == doctest::Approx(a * id.at(i)).epsilon(1e-15));
}

TEST_CASE("fan-out accumulates gradients") {
  Tape tape;
  Var x = tape.variable(Tensor(Shape{2}, std::vector<double>{0.5, -1.0}));
  Var loss = reduce_mean(add(tanh(x), scale(x, 3.0)));
  Tensor g = tape.backward(loss).of(x);
  for (std::size_t i = 0; i < 2; ++i) {
    const double t = std::tanh(x.value().at(i));
    CHECK(g.at(i) == doctest::Approx(0.5 * ((1 - t * t) + 3.0)));
  }
}

TEST_CASE("central finite differences agree with every primitive's backward") {
  std::mt19937_64 rng(2024);
  const double tol = 1e-4;
  auto check = [&](Primitive op, std::vector<Tensor> in, Attrs attrs = {}) {
    const double err = testing::gradcheck(op, std::move(in), attrs, rng);
    INFO(name(op));
    CHECK(err <= tol);
  };
  auto r = [&](Shape s) { return testing::random_tensor(s, rng); };

  check(Primitive::conv2d, {r({2, 3, 5, 4}), r({4, 3, 3, 3})});
  check(Primitive::conv2d, {r({3, 2, 4, 4}), r({1, 2, 1, 1})});
  check(Primitive::conv2d, {r({1, 1, 6, 6}), r({2, 1, 5, 5})});
  check(Primitive::dense, {r({3, 7}), r({5, 7})});
  check(Primitive::leaky_relu, {r({2, 3, 4, 4})}, Attrs{0.2, {}, nullptr});
  check(Primitive::upsample_nearest_2x, {r({2, 2, 3, 3})});
  check(Primitive::avgpool_2x, {r({2, 2, 4, 6})});
  check(Primitive::add, {r({3, 4}), r({3, 4})});
  check(Primitive::scale_by_constant, {r({5})}, Attrs{-2.5, {}, nullptr});
  check(Primitive::pixel_norm, {r({2, 5, 3, 3})});
  check(Primitive::pixel_norm, {r({4, 6})});
  check(Primitive::reduce_mean, {r({3, 3})});
  check(Primitive::tanh, {r({10})});
  check(Primitive::bias_add, {r({2, 3, 2, 2}), r({3})});
  check(Primitive::bias_add, {r({4, 3}), r({3})});
  check(Primitive::softplus, {r({12})});
  check(Primitive::reshape, {r({2, 6})}, Attrs{0.0, Shape{3, 2, 2}, nullptr});
  check(Primitive::minibatch_stddev, {r({4, 2, 3, 3})});
  check(Primitive::linear_map, {r({7})}, Attrs{0.0, {}, std::make_shared<Doubler>()});
}

TEST_CASE("gradient check through a composed network") {
  std::mt19937_64 rng(5);
  Tensor x = testing::random_tensor(Shape{2, 2, 4, 4}, rng);
  Tensor w1 = testing::random_tensor(Shape{3, 2, 3, 3}, rng);
  Tensor b1 = testing::random_tensor(Shape{3}, rng);
  Tensor w2 = testing::random_tensor(Shape{1, 12}, rng);
  auto loss_of = [&](const Tensor& wv) {
    Tape tape;
    Var h = leaky_relu(bias_add(conv2d(tape.constant(x), tape.variable(wv)), tape.constant(b1)), 0.2);
    h = avgpool_2x(pixel_norm(h));
    Var s = dense(reshape(h, Shape{2, 12}), tape.constant(w2));
    return reduce_mean(softplus(s)).value().item();
  };
  Tape tape;
  Var wv = tape.variable(w1);
  Var h = leaky_relu(bias_add(conv2d(tape.constant(x), wv), tape.constant(b1)), 0.2);
  h = avgpool_2x(pixel_norm(h));
  Var s = dense(reshape(h, Shape{2, 12}), tape.constant(w2));
  Tensor g = tape.backward(reduce_mean(softplus(s))).of(wv);
  const double step = 1e-5;
  for (std::size_t i = 0; i < w1.numel(); ++i) {
    const double fd = (loss_of(testing::with_value(w1, i, w1.at(i) + step)) -
                       loss_of(testing::with_value(w1, i, w1.at(i) - step))) /
                      (2 * step);
    CHECK(std::abs(g.at(i) - fd) / std::max(1.0, std::abs(fd)) <= 1e-4);
  }
}

TEST_CASE("forward and backward are bit-reproducible") {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tape tape;
    Var x = tape.variable(testing::random_tensor(Shape{8, 4, 8, 8}, rng).to(DType::f32));
    Var w = tape.variable(testing::random_tensor(Shape{6, 4, 3, 3}, rng).to(DType::f32));
    Var y = reduce_mean(pixel_norm(leaky_relu(conv2d(x, w), 0.2)));
    Gradients g = tape.backward(y);
    return std::pair{g.of(x), g.of(w)};
  };
  auto [a1, b1] = run();
  auto [a2, b2] = run();
  CHECK(a1.bit_equal(a2));
  CHECK(b1.bit_equal(b2));
}
