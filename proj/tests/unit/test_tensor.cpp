#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "common/errors.hpp"
#include "gradcheck.hpp"
#include "tensor/ops.hpp"
#include "tensor/params.hpp"

using namespace fds;
using fds::test::max_grad_error;
using fds::test::random_tensor;

namespace {
constexpr double kGradTol = 1e-4;
constexpr int kSeeds = 10;
}  // namespace

TEST_CASE("matmul: identity and hand arithmetic") {
  auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  auto y = matmul(eye, x);
  for (std::size_t i = 0; i < 6; ++i) CHECK(y.at(i) == x.at(i));

  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from({2, 1}, {1, 1});
  auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.at(0) == 3.0);
  CHECK(c.at(1) == 7.0);

  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 1})), ShapeError);
}

TEST_CASE("matmul: d sum / d a equals ones * b^T") {
  Rng rng(7);
  auto a = random_tensor({5, 7}, rng);
  auto b = random_tensor({7, 3}, rng);
  sum(matmul(a, b)).backward();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 7; ++k) {
      double row = 0.0;
      for (std::size_t j = 0; j < 3; ++j) row += b.at(k * 3 + j);
      CHECK(a.grad()[i * 7 + k] == doctest::Approx(row).epsilon(1e-12));
    }
  for (int s = 0; s < kSeeds; ++s) {
    Rng r(100 + s);
    auto f = [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); };
    CHECK(max_grad_error(f, {random_tensor({5, 7}, r), random_tensor({7, 3}, r)}, s) <= 1e-6);
  }
}

TEST_CASE("elementwise: closed values and domain errors") {
  CHECK(exp(Tensor::scalar(0.0)).item() == 1.0);
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(relu(Tensor::from({2}, {-1.0, 2.0})).at(0) == 0.0);
  CHECK(silu(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(softplus(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), NumericError);
  CHECK_THROWS_AS(log(Tensor::scalar(-2.0)), NumericError);
  CHECK_THROWS_AS(exp(Tensor::scalar(1000.0)), NumericError);
}

TEST_CASE("elementwise: broadcasting over trailing and leading axes") {
  auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor::from({3}, {10, 20, 30});
  auto c = add(a, b);
  CHECK(c.at(4) == 25.0);
  auto d = mul(a, Tensor::from({2, 1}, {2, 3}));
  CHECK(d.at(0) == 2.0);
  CHECK(d.at(5) == 18.0);
  auto e = sub(a, Tensor::scalar(1.0));
  CHECK(e.at(0) == 0.0);
}

TEST_CASE("elementwise: gradients vs central differences") {
  for (int s = 0; s < kSeeds; ++s) {
    Rng r(200 + s);
    auto x = random_tensor({3, 4}, r, -2.0, 2.0);
    auto pos = random_tensor({3, 4}, r, 0.5, 2.0);
    auto row = random_tensor({4}, r);
    auto col = random_tensor({3, 1}, r);
    CHECK(max_grad_error([](auto& in) { return silu(in[0]); }, {x}, s) <= 1e-6);
    CHECK(max_grad_error([](auto& in) { return sigmoid(in[0]); }, {x}, s) <= kGradTol);
    CHECK(max_grad_error([](auto& in) { return exp(in[0]); }, {x}, s) <= kGradTol);
    CHECK(max_grad_error([](auto& in) { return log(in[0]); }, {pos}, s) <= kGradTol);
    CHECK(max_grad_error([](auto& in) { return softplus(in[0]); }, {x}, s) <= kGradTol);
    CHECK(max_grad_error([](auto& in) { return relu(add_scalar(in[0], 0.0)); }, {pos}, s) <= kGradTol);
    CHECK(max_grad_error([](auto& in) { return add(in[0], in[1]); }, {x, row}, s) <= kGradTol);
    CHECK(max_grad_error([](auto& in) { return sub(in[0], in[1]); }, {x, col}, s) <= kGradTol);
    CHECK(max_grad_error([](auto& in) { return mul(in[0], in[1]); }, {x, row}, s) <= kGradTol);
    CHECK(max_grad_error([](auto& in) { return mul(in[1], in[0]); }, {x, col}, s) <= kGradTol);
    CHECK(max_grad_error([](auto& in) { return mean(scale(in[0], 3.0)); }, {x}, s) <= kGradTol);
    CHECK(max_grad_error([](auto& in) { return sum_leading(in[0]); }, {x}, s) <= kGradTol);
  }
}

TEST_CASE("layer_norm: closed values and gradient") {
  auto ones = Tensor::full({2}, 1.0);
  auto zeros = Tensor::zeros({2});
  auto c = layer_norm(Tensor::from({1, 2}, {5.0, 5.0}), ones, zeros);
  CHECK(c.at(0) == 0.0);
  CHECK(c.at(1) == 0.0);
  auto y = layer_norm(Tensor::from({1, 2}, {1.0, 3.0}), ones, zeros);
  CHECK(y.at(0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y.at(1) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(y.at(1) == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-14));
  for (int s = 0; s < kSeeds; ++s) {
    Rng r(300 + s);
    auto f = [](auto& in) { return layer_norm(in[0], in[1], in[2]); };
    CHECK(max_grad_error(f, {random_tensor({4, 5}, r), random_tensor({5}, r), random_tensor({5}, r)}, s) <= kGradTol);
  }
}

TEST_CASE("depthwise_conv2d: identity, averaging, even kernel, gradient") {
  Rng rng(11);
  auto x = random_tensor({1, 5, 6, 3}, rng, -1, 1, false);
  auto id = depthwise_conv2d(x, Tensor::full({1, 1, 3}, 1.0));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(id.at(i) == x.at(i));

  auto cst = Tensor::full({1, 6, 6, 2}, 4.0);
  auto avg = depthwise_conv2d(cst, Tensor::full({3, 3, 2}, 1.0 / 9.0));
  for (std::size_t yy = 1; yy < 5; ++yy)
    for (std::size_t xx = 1; xx < 5; ++xx)
      CHECK(avg.at(((yy * 6) + xx) * 2 + 1) == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(avg.at(0) == doctest::Approx(4.0 * 4.0 / 9.0).epsilon(1e-14));

  CHECK_THROWS_AS(depthwise_conv2d(cst, Tensor::full({2, 2, 2}, 1.0)), ShapeError);
  for (int s = 0; s < kSeeds; ++s) {
    Rng r(400 + s);
    auto f = [](auto& in) { return depthwise_conv2d(in[0], in[1]); };
    CHECK(max_grad_error(f, {random_tensor({2, 4, 5, 3}, r), random_tensor({3, 3, 3}, r)}, s) <= kGradTol);
  }
}

TEST_CASE("conv2d_embed: identity 1x1, patch partition shape, gradient") {
  Rng rng(12);
  auto x = random_tensor({1, 4, 4, 3}, rng, -1, 1, false);
  auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto y = conv2d_embed(x, eye, {}, 1);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));

  auto img = Tensor::zeros({1, 8, 8, 2});
  auto p = conv2d_embed(img, Tensor::zeros({4 * 4 * 2, 5}), {}, 4);
  CHECK(p.shape() == Shape{1, 2, 2, 5});
  CHECK_THROWS_AS(conv2d_embed(Tensor::zeros({1, 6, 8, 2}), Tensor::zeros({32, 5}), {}, 4), ShapeError);

  for (int s = 0; s < kSeeds; ++s) {
    Rng r(500 + s);
    auto f = [](auto& in) { return conv2d_embed(in[0], in[1], in[2], 1); };
    CHECK(max_grad_error(f, {random_tensor({1, 3, 3, 2}, r), random_tensor({2, 4}, r), random_tensor({4}, r)}, s) <= kGradTol);
    auto g = [](auto& in) { return conv2d_embed(in[0], in[1], {}, 2); };
    CHECK(max_grad_error(g, {random_tensor({1, 4, 4, 2}, r), random_tensor({8, 3}, r)}, s) <= kGradTol);
  }
}

TEST_CASE("upsample2x / downsample2x_merge: shapes, round trip, gradient") {
  Rng rng(13);
  auto x = random_tensor({1, 3, 4, 2}, rng, -1, 1, false);
  auto up = upsample2x(x);
  CHECK(up.shape() == Shape{1, 6, 8, 2});
  // 2x2 block average of the upsampled image returns the original.
  auto avg = conv2d_embed(up, [] {
    std::vector<Real> w(4 * 2 * 2, 0.0);
    for (std::size_t blk = 0; blk < 4; ++blk)
      for (std::size_t c = 0; c < 2; ++c) w[(blk * 2 + c) * 2 + c] = 0.25;
    return Tensor::from({8, 2}, w);
  }(), {}, 2);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(avg.at(i) == doctest::Approx(x.at(i)).epsilon(1e-15));

  auto down = downsample2x_merge(random_tensor({1, 4, 6, 3}, rng), random_tensor({12, 6}, rng));
  CHECK(down.shape() == Shape{1, 2, 3, 6});
  CHECK_THROWS_AS(downsample2x_merge(Tensor::zeros({1, 3, 4, 3}), Tensor::zeros({12, 6})), ShapeError);

  for (int s = 0; s < kSeeds; ++s) {
    Rng r(600 + s);
    CHECK(max_grad_error([](auto& in) { return upsample2x(in[0]); }, {random_tensor({2, 2, 3, 2}, r)}, s) <= kGradTol);
    auto f = [](auto& in) { return downsample2x_merge(in[0], in[1], in[2]); };
    CHECK(max_grad_error(f, {random_tensor({1, 4, 4, 2}, r), random_tensor({8, 4}, r), random_tensor({4}, r)}, s) <= kGradTol);
  }
}

TEST_CASE("softmax: sums, closed form, stability, gradient") {
  auto u = softmax(Tensor::from({1, 4}, {2, 2, 2, 2}));
  for (std::size_t i = 0; i < 4; ++i) CHECK(u.at(i) == doctest::Approx(0.25).epsilon(1e-15));
  auto p = softmax(Tensor::from({2}, {0.0, std::log(3.0)}));
  CHECK(p.at(0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(p.at(1) == doctest::Approx(0.75).epsilon(1e-14));
  auto big = softmax(Tensor::from({2}, {1000.0, 1000.0}));
  CHECK(big.at(0) == 0.5);

  Rng rng(14);
  auto x = random_tensor({6, 5}, rng, -20, 20, false);
  auto sx = softmax(x, -1);
  for (std::size_t t = 0; t < 6; ++t) {
    double s = 0.0;
    for (std::size_t k = 0; k < 5; ++k) s += sx.at(t * 5 + k);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  auto s0 = softmax(x, 0);
  for (std::size_t k = 0; k < 5; ++k) {
    double s = 0.0;
    for (std::size_t t = 0; t < 6; ++t) s += s0.at(t * 5 + k);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  for (int s = 0; s < kSeeds; ++s) {
    Rng r(700 + s);
    CHECK(max_grad_error([](auto& in) { return softmax(in[0], -1); }, {random_tensor({3, 4}, r)}, s) <= kGradTol);
    CHECK(max_grad_error([](auto& in) { return softmax(in[0], 1); }, {random_tensor({2, 3, 4}, r)}, s) <= kGradTol);
  }
}

TEST_CASE("layout ops: gather, concat, slice, reshape gradients") {
  for (int s = 0; s < kSeeds; ++s) {
    Rng r(800 + s);
    auto g = [](auto& in) { return gather_tokens(in[0], {3, 0, 0, 2, 1}, {5}); };
    CHECK(max_grad_error(g, {random_tensor({2, 2, 3}, r)}, s) <= kGradTol);
    auto c = [](auto& in) { return concat({in[0], in[1]}, 1); };
    CHECK(max_grad_error(c, {random_tensor({2, 3, 2}, r), random_tensor({2, 1, 2}, r)}, s) <= kGradTol);
    auto sl = [](auto& in) { return slice(in[0], 2, 1, 3); };
    CHECK(max_grad_error(sl, {random_tensor({2, 3, 4}, r)}, s) <= kGradTol);
    auto rs = [](auto& in) { return mul(reshape(in[0], {6, 2}), in[1]); };
    CHECK(max_grad_error(rs, {random_tensor({3, 4}, r), random_tensor({6, 2}, r)}, s) <= kGradTol);
  }
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from({2, 1}, {9, 8});
  auto c = concat({a, b}, 1);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c.at(2) == 9.0);
  CHECK(c.at(5) == 8.0);
  CHECK_THROWS_AS(concat({a, Tensor::zeros({3, 1})}, 1), ShapeError);
  CHECK_THROWS_AS(reshape(a, {3}), ShapeError);
}

TEST_CASE("backward: identity chain of a sum loss yields exactly ones") {
  Rng rng(15);
  auto x = random_tensor({3, 4}, rng);
  auto y = reshape(scale(add_scalar(x, 0.0), 1.0), {12});
  y = slice(concat({y}, 0), 0, 0, 12);
  sum(y).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: 3-layer toy network full-graph gradient") {
  for (int s = 0; s < kSeeds; ++s) {
    Rng r(900 + s);
    auto net = [](const std::vector<Tensor>& in) {
      auto h1 = silu(linear(in[0], in[1], in[2]));
      auto h2 = layer_norm(linear(h1, in[3]), in[4], in[5]);
      auto logits = linear(sigmoid(h2), in[6]);
      return softmax(logits, -1);
    };
    std::vector<Tensor> in{random_tensor({4, 3}, r), random_tensor({3, 6}, r), random_tensor({6}, r),
                           random_tensor({6, 5}, r), random_tensor({5}, r), random_tensor({5}, r),
                           random_tensor({5, 4}, r)};
    CHECK(max_grad_error(net, in, s) <= kGradTol);
  }
}

TEST_CASE("tensor invariants: shape/value agreement and finiteness") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  auto t = Tensor::from({2, 3}, std::vector<Real>(6, 1.0), true);
  sum(scale(t, 2.0)).backward();
  CHECK(t.grad().size() == t.numel());
  CHECK_THROWS_AS(mul(Tensor::scalar(1e200), Tensor::scalar(1e200)), NumericError);
  auto nograd = [&] {
    NoGradGuard guard;
    return scale(t, 2.0);
  }();
  CHECK_FALSE(nograd.requires_grad());
}

TEST_CASE("parameters: seeded init, binding gradients, checkpoint round trip") {
  ParameterSet a, b;
  Rng ra(42), rb(42);
  auto wa = a.add_uniform("w", {4, 3}, 4, ra);
  a.add_constant("bias", {3}, 0.5);
  b.add_uniform("w", {4, 3}, 4, rb);
  b.add_constant("bias", {3}, 0.0);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(a.values(wa)[i] == b.values(wa)[i]);
    CHECK(std::abs(a.values(wa)[i]) <= 0.5);
  }

  ParamBinding bind(a);
  sum(linear(Tensor::full({2, 4}, 1.0), bind[wa])).backward();
  for (double g : bind.grad(wa)) CHECK(g == 2.0);
  for (double g : bind.grad(*a.find("bias"))) CHECK(g == 0.0);

  auto path = std::filesystem::temp_directory_path() / "fds_params_roundtrip.fdsw";
  save_checkpoint(a, path);
  load_checkpoint(b, path);
  a.round_to_float();
  for (auto id : a.ids())
    for (std::size_t i = 0; i < a.values(id).size(); ++i) CHECK(a.values(id)[i] == b.values(id)[i]);

  ParameterSet wrong;
  wrong.add_constant("w", {3, 4}, 0.0);
  wrong.add_constant("bias", {3}, 0.0);
  CHECK_THROWS_AS(load_checkpoint(wrong, path), DataError);
  ParameterSet extra;
  extra.add_constant("w", {4, 3}, 0.0);
  extra.add_constant("bias", {3}, 0.0);
  extra.add_constant("gamma", {3}, 0.0);
  CHECK_THROWS_AS(load_checkpoint(extra, path), DataError);
  std::filesystem::remove(path);
}
