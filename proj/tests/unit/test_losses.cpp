#include <doctest.h>

#include <cmath>

#include "common/errors.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "loss/losses.hpp"

using namespace fds;
using namespace fds::loss;
using fds::model::Task;
using fds::test::max_grad_error;
using fds::test::random_tensor;
using fds::test::ce_oracle;
using fds::test::random_labels;
using fds::test::weighted_one_minus_iou;

TEST_CASE("class weights: inverse frequency") {
  const std::vector<std::size_t> even{5, 5}, skew{8, 2}, absent{10, 0}, none{0, 0};
  CHECK(class_weights(even) == std::vector<double>{2, 2});
  CHECK(class_weights(skew) == std::vector<double>{1.25, 5});
  CHECK(class_weights(absent) == std::vector<double>{1, 0});
  CHECK_THROWS_AS(class_weights(none), DataError);
}

TEST_CASE("weighted cross-entropy: closed forms and missing labels") {
  const auto uniform2 = Tensor::zeros({1, 1, 3, 2});
  const std::vector<std::uint8_t> y{0, 1, 1};
  CHECK(weighted_cross_entropy(uniform2, y, {})->item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  const auto sure = Tensor::from({1, 1, 2, 3}, {60, 0, 0, 0, 0, 60});
  const std::vector<std::uint8_t> ys{0, 2};
  CHECK(weighted_cross_entropy(sure, ys, {})->item() < 1e-20);

  const std::vector<std::uint8_t> ignored(3, kIgnore);
  CHECK(!weighted_cross_entropy(uniform2, ignored, {}));

  const std::vector<std::uint8_t> bad{0, 2, 1};
  CHECK_THROWS_AS(weighted_cross_entropy(uniform2, bad, {}), DataError);
}

TEST_CASE("weighted cross-entropy: hand formula and shift invariance") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t K = 2 + trial % 3;
    const auto logits = random_tensor({1, 4, 5, K}, rng, -4, 4, false);
    auto y = random_labels(20, K, rng, 0.2);
    y[0] = 0;
    std::vector<double> w(K);
    for (auto& v : w) v = uniform(rng, 0.2, 3.0);
    const double ce = weighted_cross_entropy(logits, y, w)->item();
    CHECK(std::abs(ce - ce_oracle(logits, y, w)) <= 1e-12);

    std::vector<Real> shifted(logits.values().begin(), logits.values().end());
    for (std::size_t j = 0; j < 20; ++j) {
      const double c = uniform(rng, -10, 10);
      for (std::size_t k = 0; k < K; ++k) shifted[j * K + k] += c;
    }
    const double ce2 = weighted_cross_entropy(Tensor::from(logits.shape(), shifted), y, w)->item();
    CHECK(std::abs(ce - ce2) <= 1e-12);
    CHECK(ce >= 0.0);
  }
}

TEST_CASE("lovasz: single pixel and perfect predictions") {
  const std::vector<double> p1{0.7}, p0{0.3};
  const std::vector<std::uint8_t> y{1};
  CHECK(lovasz_class_term(p1, y, 1) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(lovasz_class_term(p0, y, 0) == doctest::Approx(0.3).epsilon(1e-15));
  const auto probs = Tensor::from({1, 1, 1, 2}, {0.3, 0.7});
  CHECK(lovasz_softmax(probs, y, {})->item() == doctest::Approx(0.3).epsilon(1e-15));

  const auto hard = Tensor::from({1, 1, 3, 3}, {1, 0, 0, 0, 0, 1, 0, 1, 0});
  const std::vector<std::uint8_t> yh{0, 2, 1};
  CHECK(lovasz_softmax(hard, yh, {})->item() == 0.0);
  CHECK(weighted_cross_entropy(Tensor::from({1, 1, 3, 3}, {80, 0, 0, 0, 0, 80, 0, 80, 0}), yh, {})->item() < 1e-30);
  const std::vector<std::uint8_t> none(3, kIgnore);
  CHECK(!lovasz_softmax(hard, none, {}));
}

TEST_CASE("lovasz: hard predictions give the weighted mean of 1 - IoU") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 2 + trial % 3, H = 1 + uniform_index(rng, 16), W = 1 + uniform_index(rng, 16);
    const std::size_t P = H * W;
    auto y = random_labels(P, K, rng, 0.15);
    y[0] = static_cast<std::uint8_t>(uniform_index(rng, K));
    std::vector<std::uint8_t> pred(P);
    std::vector<Real> probs(P * K, 0.0);
    for (std::size_t j = 0; j < P; ++j) {
      pred[j] = static_cast<std::uint8_t>(uniform_index(rng, K));
      probs[j * K + pred[j]] = 1.0;
    }
    std::vector<double> w(K);
    for (auto& v : w) v = uniform(rng, 0.5, 2.0);

    const double lov = lovasz_softmax(Tensor::from({1, H, W, K}, probs), y, w)->item();
    CHECK(std::abs(lov - weighted_one_minus_iou(y, pred, w)) <= 1e-9);
  }
}

TEST_CASE("task and composite losses") {
  Rng rng(3);
  const auto logits = random_tensor({1, 3, 3, 4}, rng, -2, 2, false);
  const auto y = random_labels(9, 4, rng, 0.0);
  const auto ce = weighted_cross_entropy(logits, y, {})->item();
  const auto lov = lovasz_softmax(softmax(logits), y, {})->item();
  CHECK(lov >= 0.0);

  CHECK(task_loss(logits, y, {1.0, 0.0, {}})->item() == ce);
  const LossConfig defaults;
  CHECK(defaults[Task::Bda].lambda_lov == 0.75);
  CHECK(defaults[Task::Fm].lambda_lov == 0.5);
  CHECK(defaults[Task::Loc].lambda_lov == 0.5);
  CHECK(task_loss(logits, y, defaults[Task::Bda])->item() == doctest::Approx(ce + 0.75 * lov).epsilon(1e-14));
  const std::vector<std::uint8_t> none(9, kIgnore);
  CHECK(!task_loss(logits, none, defaults[Task::Bda]));

  model::TaskOutputs out;
  out.bda = logits;
  out.fm = random_tensor({1, 3, 3, 3}, rng, -2, 2, false);
  out.loc = random_tensor({1, 3, 3, 2}, rng, -2, 2, false);
  TaskLabels labels;
  labels[Task::Bda] = none;
  labels[Task::Fm] = none;
  labels[Task::Loc] = none;
  CHECK(composite_loss(out, labels, defaults).item() == 0.0);

  labels[Task::Fm] = random_labels(9, 3, rng, 0.0);
  CHECK(composite_loss(out, labels, defaults).item() == task_loss(*out.fm, labels[Task::Fm], defaults[Task::Fm])->item());

  labels[Task::Bda] = y;
  labels[Task::Loc] = random_labels(9, 2, rng, 0.0);
  double manual = 0.0;
  for (auto t : model::kTasks) manual += task_loss(*out.get(t), labels[t], defaults[t])->item();
  CHECK(composite_loss(out, labels, defaults).item() == doctest::Approx(manual).epsilon(1e-14));

  // A task without a head or without labels is skipped.
  out.fm.reset();
  labels[Task::Loc].clear();
  CHECK(composite_loss(out, labels, defaults).item() ==
        doctest::Approx(task_loss(*out.bda, y, defaults[Task::Bda])->item()).epsilon(1e-14));
}

TEST_CASE("composite loss: gradient check through the logits") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(50 + seed);
    LossConfig cfg;
    cfg[Task::Bda].weights = {0.5, 1.5, 2.0, 3.0};
    TaskLabels labels;
    labels[Task::Bda] = random_labels(2 * 16, 4, rng);
    labels[Task::Fm] = random_labels(2 * 16, 3, rng);
    labels[Task::Loc] = random_labels(2 * 16, 2, rng);
    std::vector<Tensor> inputs{random_tensor({2, 4, 4, 4}, rng, -2, 2), random_tensor({2, 4, 4, 3}, rng, -2, 2),
                               random_tensor({2, 4, 4, 2}, rng, -2, 2)};
    auto f = [&](const std::vector<Tensor>& in) {
      model::TaskOutputs out;
      out.bda = in[0];
      out.fm = in[1];
      out.loc = in[2];
      return composite_loss(out, labels, cfg);
    };
    CHECK(max_grad_error(f, inputs, seed) <= 1e-4);
  }
}

TEST_CASE("losses: batch reduction averages per-sample means") {
  Rng rng(4);
  const auto a = random_tensor({1, 2, 3, 3}, rng, -2, 2, false), b = random_tensor({1, 2, 3, 3}, rng, -2, 2, false);
  const auto ya = random_labels(6, 3, rng, 0.0);
  auto yb = random_labels(6, 3, rng, 0.5);
  yb[1] = 2;
  std::vector<std::uint8_t> both(ya);
  both.insert(both.end(), yb.begin(), yb.end());
  const auto ab = concat({a, b}, 0);
  const TaskLossConfig cfg{1.0, 0.5, {}};
  const double joint = task_loss(ab, both, cfg)->item();
  const double split = 0.5 * (task_loss(a, ya, cfg)->item() + task_loss(b, yb, cfg)->item());
  CHECK(joint == doctest::Approx(split).epsilon(1e-14));

  // A sample without labels still counts in the batch mean, as zero.
  const std::vector<std::uint8_t> none(6, kIgnore);
  std::vector<std::uint8_t> half(ya);
  half.insert(half.end(), none.begin(), none.end());
  CHECK(task_loss(ab, half, cfg)->item() == doctest::Approx(0.5 * task_loss(a, ya, cfg)->item()).epsilon(1e-14));
}

TEST_CASE("loss config JSON") {
  LossConfig c;
  c[Task::Fm].weights = {1, 2, 3};
  const auto back = loss_config_from_json(loss_config_to_json(c));
  CHECK(back[Task::Fm].weights == c[Task::Fm].weights);
  CHECK(back[Task::Bda].lambda_lov == 0.75);
  CHECK(loss_config_from_json({{"loc", {{"lambda_lov", 0.0}}}})[Task::Loc].lambda_lov == 0.0);
  CHECK_THROWS_AS(loss_config_from_json({{"bda", {{"lambda_ce", -1.0}}}}), UsageError);
  CHECK_THROWS_AS(loss_config_from_json({{"damage", nlohmann::json::object()}}), UsageError);
}
