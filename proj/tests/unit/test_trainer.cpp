#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "common/errors.hpp"
#include "common/rng.hpp"
#include "data/prep.hpp"
#include "data/synth.hpp"
#include "train/trainer.hpp"

using namespace fds;
using namespace fds::train;

namespace {

// 16 normalized 32x32 tiles cut from four 64x64 chips, about half with VHR.
std::vector<data::ChipSample> tiles(std::uint64_t seed) {
  data::SynthConfig sc;
  sc.size = 64;
  sc.vhr_fraction = 0.5;
  const auto ev = data::synth_event(seed, 4, sc);
  std::vector<data::ChipSample> out;
  for (const auto& c : ev.chips)
    for (auto& t : data::grid_partition(c, 32)) out.push_back(std::move(t));
  const auto stats = data::compute_stats(out);
  for (auto& t : out) t = data::normalize(t, stats);
  return out;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.preset = "toy";
  c.seed = 5;
  return c;
}

double max_abs_diff(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].size(); ++k) d = std::max(d, std::abs(a[i][k] - b[i][k]));
  return d;
}

std::vector<std::vector<double>> snapshot(const ParameterSet& ps) {
  std::vector<std::vector<double>> out;
  for (auto id : ps.ids()) out.emplace_back(ps.values(id).begin(), ps.values(id).end());
  return out;
}

}  // namespace

TEST_CASE("AdamW: fixed points and descent") {
  ParameterSet ps;
  const auto id = ps.add("w", {3}, {1.0, -2.0, 0.5});
  AdamWState st;
  AdamWConfig cfg{1e-2, 0.0};
  const std::vector<std::vector<double>> zero{{0, 0, 0}};
  adamw_step(ps, zero, st, cfg);
  CHECK(snapshot(ps) == std::vector<std::vector<double>>{{1.0, -2.0, 0.5}});

  ParameterSet q;
  const auto w = q.add("w", {1}, {1.0});
  AdamWState s2;
  adamw_step(q, std::vector<std::vector<double>>{{2.0}}, s2, {1e-2, 5e-3});
  CHECK(std::abs(q.values(w)[0]) < 1.0);
  CHECK_THROWS_AS(adamw_step(q, zero, s2, cfg), ShapeError);
  (void)id;
}

TEST_CASE("AdamW matches a reference on a 10-parameter quadratic") {
  // f(w) = sum a_i (w_i - c_i)^2. The reference folds bias correction into
  // a step size and the decay into a multiplicative shrink.
  Rng rng(3);
  std::vector<double> a(10), c(10), w0(10);
  for (std::size_t i = 0; i < 10; ++i) {
    a[i] = uniform(rng, 0.1, 3.0);
    c[i] = uniform(rng, -2, 2);
    w0[i] = uniform(rng, -2, 2);
  }
  const double lr = 3e-2, wd = 5e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  ParameterSet ps;
  const auto id = ps.add("w", {10}, w0);
  AdamWState st;
  std::vector<double> ref = w0, m(10, 0), v(10, 0);
  double b1t = 1, b2t = 1;
  for (int step = 1; step <= 100; ++step) {
    std::vector<std::vector<double>> g(1, std::vector<double>(10));
    for (std::size_t i = 0; i < 10; ++i) g[0][i] = 2 * a[i] * (ps.values(id)[i] - c[i]);
    adamw_step(ps, g, st, {lr, wd, b1, b2, eps});

    b1t *= b1;
    b2t *= b2;
    for (std::size_t i = 0; i < 10; ++i) {
      const double gi = 2 * a[i] * (ref[i] - c[i]);
      ref[i] *= 1 - lr * wd;
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      const double step_size = lr / (1 - b1t);
      const double denom = std::sqrt(v[i]) / std::sqrt(1 - b2t) + eps;
      ref[i] -= step_size * m[i] / denom;
    }
  }
  double diff = 0;
  for (std::size_t i = 0; i < 10; ++i) diff = std::max(diff, std::abs(ps.values(id)[i] - ref[i]));
  CHECK(diff <= 1e-12);
  CHECK(st.step == 100);
}

TEST_CASE("gradient accumulation reproduces the direct batch of 16") {
  const auto data = tiles(11);
  REQUIRE(data.size() == 16);
  REQUIRE(std::any_of(data.begin(), data.end(), [](auto& s) { return s.vhr_present(); }));
  REQUIRE_FALSE(std::all_of(data.begin(), data.end(), [](auto& s) { return s.vhr_present(); }));
  const auto cfg = toy_config();
  const model::FloodDamageNet base(cfg.model_config());

  auto run = [&](std::size_t batch, unsigned threads) {
    model::FloodDamageNet net(cfg.model_config());
    const auto r = accumulate_gradients(net, data, batch, cfg.loss, threads);
    AdamWState st;
    adamw_step(net.params(), r.grads, st, {cfg.lr, cfg.weight_decay});
    return std::make_tuple(r.loss, r.grads, snapshot(net.params()));
  };
  const auto [l16, g16, p16] = run(16, 1);
  for (std::size_t batch : {2, 8}) {
    CAPTURE(batch);
    const auto [l, g, p] = run(batch, 1);
    CHECK(std::abs(l - l16) <= 1e-10);
    CHECK(max_abs_diff(g, g16) <= 1e-10);
    CHECK(max_abs_diff(p, p16) <= 1e-10);
  }
  // Worker count never changes the reduction.
  const auto [lt, gt, pt] = run(2, 3);
  const auto [l1, g1, p1] = run(2, 1);
  CHECK(lt == l1);
  CHECK(gt == g1);
  CHECK(pt == p1);
  CHECK_THROWS_AS(accumulate_gradients(base, data, 3, cfg.loss), UsageError);
}

TEST_CASE("an all-255 FM batch leaves the FM decoder without gradient") {
  auto data = tiles(12);
  data.resize(2);
  for (auto& s : data) std::fill(s.fm.data.begin(), s.fm.data.end(), geo::kNoData);
  const auto cfg = toy_config();
  const model::FloodDamageNet net(cfg.model_config());
  const auto r = accumulate_gradients(net, data, 2, cfg.loss);
  const auto ids = net.params().ids();
  bool fm_zero = true, bda_nonzero = false;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& name = net.params().name(ids[i]);
    for (double g : r.grads[i]) {
      if (name.rfind("decoder.fm", 0) == 0 && g != 0.0) fm_zero = false;
      if (name.rfind("decoder.bda", 0) == 0 && g != 0.0) bda_nonzero = true;
    }
  }
  CHECK(fm_zero);
  CHECK(bda_nonzero);

  // Same as switching the FM term off on the original labels.
  auto labelled = tiles(12);
  labelled.resize(2);
  auto off = cfg.loss;
  off[model::Task::Fm].lambda_ce = 0;
  off[model::Task::Fm].lambda_lov = 0;
  const auto r_off = accumulate_gradients(net, labelled, 2, off);
  CHECK(r_off.loss == r.loss);
  CHECK(r_off.grads == r.grads);
}

TEST_CASE("non-finite values abort training with NumericError") {
  auto data = tiles(13);
  data.resize(2);
  const auto cfg = toy_config();
  model::FloodDamageNet net(cfg.model_config());
  const auto id = net.params().ids().front();
  net.params().mutable_values(id)[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(accumulate_gradients(net, data, 2, cfg.loss), NumericError);
}

TEST_CASE("building counts match the generator's footprint classes") {
  data::SynthConfig sc;
  sc.size = 64;
  const auto ev = data::synth_event(21, 6, sc);
  std::vector<std::size_t> expect(4, 0);
  for (auto c : ev.true_class) ++expect[c];
  CHECK(building_counts(ev.chips) == expect);
}

TEST_CASE("train config JSON") {
  auto c = toy_config();
  c.max_steps = 7;
  c.loss[model::Task::Bda].weights = {0, 1, 2, 3};
  const auto j = train_config_to_json(c);
  CHECK(j["effective_batch"] == 16);
  const auto back = train_config_from_json(j);
  CHECK(train_config_to_json(back) == j);
  CHECK_THROWS_AS(train_config_from_json({{"learning_rate", 1}}), UsageError);
  CHECK_THROWS_AS(train_config_from_json({{"lr", 0.0}}), UsageError);
  CHECK_THROWS_AS(train_config_from_json({{"batch_size", 0}}), UsageError);
  CHECK_THROWS_AS(train_config_from_json({{"wiring", 5}}), UsageError);
  CHECK_THROWS_AS(train_config_from_json({{"preset", "huge"}}), UsageError);
}

TEST_CASE("training is deterministic and the trace is written in step order") {
  const auto data = tiles(14);
  auto cfg = toy_config();
  cfg.batch_size = 2;
  cfg.accumulation_steps = 2;
  cfg.epochs = 1;
  cfg.lr = 1e-3;
  auto run = [&](unsigned threads) {
    auto c = cfg;
    c.threads = threads;
    model::FloodDamageNet net(c.model_config());
    Trainer t(net, c);
    const auto trace = t.fit(data);
    return std::make_pair(trace, snapshot(net.params()));
  };
  const auto [trace, params] = run(1);
  const auto [trace2, params2] = run(2);
  REQUIRE(trace.size() == 4);
  CHECK(params == params2);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    CHECK(trace[i].step == i + 1);
    CHECK(trace[i].loss == trace2[i].loss);
    CHECK(std::isfinite(trace[i].loss));
  }

  auto capped = cfg;
  capped.epochs = 5;
  capped.max_steps = 3;
  model::FloodDamageNet net(capped.model_config());
  Trainer t(net, capped);
  CHECK(t.fit(data).size() == 3);
  CHECK(t.finished());
  // BDA weights were frozen from the training buildings.
  CHECK(t.loss_config()[model::Task::Bda].weights == loss::class_weights(building_counts(data)));

  auto big = cfg;
  big.batch_size = 4;
  big.accumulation_steps = 8;
  model::FloodDamageNet net2(big.model_config());
  Trainer t2(net2, big);
  CHECK_THROWS_AS(t2.train_epoch(data), UsageError);

  const auto path = std::filesystem::temp_directory_path() / "fds_trace.csv";
  write_trace_csv(path, trace);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,epoch,loss");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string step, epoch, loss;
    std::getline(ss, step, ',');
    std::getline(ss, epoch, ',');
    std::getline(ss, loss);
    CHECK(std::stoul(step) == rows + 1);
    CHECK(std::stod(loss) == trace[rows].loss);
    ++rows;
  }
  CHECK(rows == trace.size());
}

TEST_CASE("evaluation: pure, schema, and near chance when untrained") {
  data::SynthConfig sc;
  sc.size = 64;
  const auto ev = data::synth_event(31, 4, sc);
  auto chips = ev.chips;
  const auto stats = data::compute_stats(chips);
  for (auto& c : chips) c = data::normalize(c, stats);
  BuildingTruth truth{ev.footprints, {}};
  for (std::size_t i = 0; i < ev.footprints.size(); ++i) truth.classes[ev.footprints[i].id] = ev.true_class[i];

  const auto cfg = toy_config();
  const model::FloodDamageNet net(cfg.model_config());
  const auto before = snapshot(net.params());
  const auto a = report_to_json(evaluate(net, chips, cfg.loss, &truth));
  const auto b = report_to_json(evaluate(net, chips, cfg.loss, &truth, damage::Stat::Median, 3));
  CHECK(a == b);
  CHECK(snapshot(net.params()) == before);

  for (const char* key : {"chips", "loss", "pixel", "building", "buildings_without_prediction"}) CHECK(a.contains(key));
  for (const char* task : {"bda", "fm", "loc"}) CHECK(a["pixel"].contains(task));
  CHECK(a["chips"] == 4);
  CHECK(a["building"]["instances"].get<std::size_t>() + a["buildings_without_prediction"].get<std::size_t>() ==
        ev.footprints.size());
  CHECK(a["loss"].get<double>() == doctest::Approx(dataset_loss(net, chips, cfg.loss)).epsilon(1e-12));

  // Any predictor independent of the labels scores at most 2p/(1+p) on a
  // class of prior p; the harmonic mean inherits the bound.
  std::vector<double> prior(4, 0);
  double valid = 0;
  for (const auto& c : chips)
    for (auto v : c.bda.data)
      if (v != geo::kNoData) {
        ++prior[v];
        ++valid;
      }
  double inv_sum = 0;
  for (std::size_t k = 1; k < 4; ++k) inv_sum += (1 + prior[k] / valid) / (2 * prior[k] / valid);
  const double chance = 3.0 / inv_sum;
  const auto h = a["pixel"]["bda"]["f1"]["harmonic_mean_f1"].get<double>();
  CAPTURE(chance);
  CHECK(h <= chance + 0.05);
}

TEST_CASE("checkpoint save, load, evaluate is bit-exact") {
  const auto data = tiles(15);
  auto cfg = toy_config();
  cfg.batch_size = 2;
  cfg.accumulation_steps = 2;
  cfg.max_steps = 2;
  cfg.lr = 1e-3;
  model::FloodDamageNet net(cfg.model_config());
  Trainer(net, cfg).fit(data);
  net.params().round_to_float();
  const auto path = std::filesystem::temp_directory_path() / "fds_trainer.fdsw";
  save_checkpoint(net.params(), path);

  auto other = cfg;
  other.seed = 99;
  model::FloodDamageNet loaded(other.model_config());
  load_checkpoint(loaded.params(), path);
  CHECK(snapshot(loaded.params()) == snapshot(net.params()));
  CHECK(report_to_json(evaluate(loaded, data, cfg.loss)).dump() == report_to_json(evaluate(net, data, cfg.loss)).dump());
}

TEST_CASE("block-constant floor is attained by the per-cell optimum and never beaten") {
  const auto data = tiles(16);
  loss::LossConfig cfg;
  cfg[model::Task::Bda].weights = {0.5, 2.0, 3.0, 0.0};
  cfg[model::Task::Fm].lambda_ce = 0.7;
  const std::size_t block = 4;
  const std::span<const data::ChipSample> few(data.data(), 3);
  const double floor = block_constant_floor(few, cfg, block);

  // Cross-entropy of logits that are constant per cell: log(w_k n_k + jitter).
  auto ce_with = [&](double jitter, std::uint64_t seed) {
    Rng rng(seed);
    double total = 0;
    for (const auto& s : few) {
      for (auto t : model::kTasks) {
        const auto& layer = t == model::Task::Bda ? s.bda : t == model::Task::Fm ? s.fm : s.loc;
        const std::size_t K = model::task_classes(t), H = s.grid.height, W = s.grid.width;
        const auto& w = cfg[t].weights;
        std::vector<double> logits(H * W * K);
        for (std::size_t r0 = 0; r0 < H; r0 += block)
          for (std::size_t c0 = 0; c0 < W; c0 += block) {
            std::vector<double> n(K, 0.0);
            for (std::size_t r = r0; r < r0 + block; ++r)
              for (std::size_t c = c0; c < c0 + block; ++c)
                if (layer.at(0, r, c) != geo::kNoData) n[layer.at(0, r, c)] += w.empty() ? 1.0 : w[layer.at(0, r, c)];
            std::vector<double> cell(K);
            for (std::size_t k = 0; k < K; ++k) cell[k] = std::log(n[k] + 1e-300) + jitter * uniform(rng, -1, 1);
            for (std::size_t r = r0; r < r0 + block; ++r)
              for (std::size_t c = c0; c < c0 + block; ++c)
                for (std::size_t k = 0; k < K; ++k) logits[(r * W + c) * K + k] = cell[k];
          }
        const std::vector<double> uniform_w(K, 1.0);
        const auto ce = loss::weighted_cross_entropy(Tensor::from({1, H, W, K}, logits), layer.data,
                                                     w.empty() ? std::span<const double>(uniform_w) : std::span<const double>(w));
        if (ce) total += cfg[t].lambda_ce * ce->item();
      }
    }
    return total / static_cast<double>(few.size());
  };
  CHECK(ce_with(0.0, 0) == doctest::Approx(floor).epsilon(1e-12));
  for (std::uint64_t seed = 1; seed <= 5; ++seed) CHECK(ce_with(0.5, seed) >= floor);
  CHECK(floor > 0);
  CHECK_THROWS_AS(block_constant_floor({}, cfg, 4), UsageError);
}
