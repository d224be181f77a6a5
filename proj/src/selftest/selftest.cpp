#include "selftest/selftest.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>

#include "common/rng.hpp"
#include "damage/damage_map.hpp"
#include "data/prep.hpp"
#include "data/synth.hpp"
#include "gt/groundtruth.hpp"
#include "loss/losses.hpp"
#include "metrics/metrics.hpp"
#include "model/ffss.hpp"
#include "ssm/ssm.hpp"
#include "train/trainer.hpp"
#include "vss/vss.hpp"

namespace fds::selftest {

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, lo, hi);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

Check zoh_closed_form() {
  ssm::ContinuousSsm m;
  m.A = Eigen::MatrixXd::Constant(1, 1, -1.0);
  m.B = Eigen::VectorXd::Constant(1, 1.0);
  m.C = Eigen::RowVectorXd::Constant(1, 1.0);
  const auto d = ssm::discretize_zoh(m, std::log(2.0));
  const auto tiny = ssm::discretize_zoh(m, 1e-12);
  const double err = std::max(std::abs(d.A_bar(0, 0) - 0.5), std::abs(d.B_bar(0) - 0.5));
  const bool ok = err <= 1e-12 && std::abs(tiny.A_bar(0, 0) - 1.0) <= 1e-9;
  return {"zoh closed form", ok, "max error " + num(err)};
}

Check lti_equivalence() {
  double worst = 0;
  for (int s = 0; s < 20; ++s) {
    Rng rng(derive_seed(1, static_cast<std::uint64_t>(s)));
    const std::size_t n = 1 + s % 8, k = 1 + (s * 37) % 128;
    ssm::ContinuousSsm m;
    m.A = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < n; ++i) m.A(i, i) = -uniform(rng, 0.1, 2.0);
    m.B = Eigen::VectorXd::Map(random_vec(rng, n).data(), n);
    m.C = Eigen::RowVectorXd::Map(random_vec(rng, n).data(), n);
    const auto d = ssm::discretize_zoh(m, uniform(rng, 0.05, 1.0));
    const auto x = random_vec(rng, k);
    worst = std::max(worst, max_abs_diff(ssm::scan_recurrent(d, x), ssm::apply_kernel(x, ssm::kernel_conv(d, k))));
  }
  return {"recurrent scan equals kernel convolution", worst <= 1e-10, "max error " + num(worst)};
}

Check selective_equivalence() {
  double worst = 0;
  for (int s = 0; s < 20; ++s) {
    Rng rng(derive_seed(2, static_cast<std::uint64_t>(s)));
    const std::size_t n = 1 + s % 8, k = 1 + (s * 53) % 256;
    ssm::SelectiveScanInputs in;
    for (std::size_t i = 0; i < n; ++i) in.a.push_back(-static_cast<double>(i + 1) * uniform(rng, 0.5, 1.5));
    in.delta = random_vec(rng, k, 0.01, 0.5);
    in.B = random_vec(rng, k * n);
    in.C = random_vec(rng, k * n);
    in.x = random_vec(rng, k);
    worst = std::max(worst, max_abs_diff(ssm::selective_scan_sequential(in), ssm::selective_scan_parallel(in, 2)));
  }
  return {"sequential selective scan equals parallel scan", worst <= 1e-10, "max error " + num(worst)};
}

Tensor random_grid(Rng& rng, Shape shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return Tensor::from(std::move(shape), random_vec(rng, n));
}

Check cross_scan_algebra() {
  Rng rng(3);
  const auto g = random_grid(rng, {2, 3, 5, 4});
  const auto merged = vss::cross_merge(vss::cross_scan(g), 3, 5);
  bool ok = true;
  for (std::size_t i = 0; i < g.numel(); ++i) ok = ok && merged.at(i) == 4.0 * g.at(i);
  const model::StreamSet s{random_grid(rng, {1, 2, 3, 4}), random_grid(rng, {1, 2, 3, 4}), random_grid(rng, {1, 2, 3, 4})};
  for (const auto& back : {model::unrearrange_sequential(model::rearrange_sequential(s), 3),
                           model::unrearrange_cross(model::rearrange_cross(s), 3),
                           model::unrearrange_parallel(model::rearrange_parallel(s), 3)})
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t i = 0; i < s[k].numel(); ++i) ok = ok && back[k].at(i) == s[k].at(i);
  return {"cross-scan and stream rearrangements round-trip", ok, ok ? "exact" : "mismatch"};
}

Check ffss_scan_count() {
  Rng rng(4);
  ParameterSet ps;
  const auto blk = model::FfssBlock::create(ps, "ffss", vss::VssConfig{.dim = 4, .state = 2}, rng);
  const ParamBinding p(ps, false);
  const model::StreamSet s{random_grid(rng, {1, 4, 4, 4}), random_grid(rng, {1, 4, 4, 4})};
  ssm::reset_scan_invocations();
  (void)blk(p, s);
  const auto n = ssm::scan_invocations();
  return {"ffss block runs twelve scans", n == 12, std::to_string(n) + " scans"};
}

Check loss_identities() {
  Rng rng(5);
  const std::size_t H = 4, W = 4, K = 3, P = H * W;
  std::vector<std::uint8_t> y(P), pred(P);
  for (auto& v : y) v = static_cast<std::uint8_t>(uniform_index(rng, K));
  std::vector<double> hard(P * K, 0.0), logits = random_vec(rng, P * K, -3, 3), shifted = logits;
  for (std::size_t j = 0; j < P; ++j) {
    pred[j] = static_cast<std::uint8_t>(uniform_index(rng, K));
    hard[j * K + pred[j]] = 1.0;
    const double c = uniform(rng, -5, 5);
    for (std::size_t k = 0; k < K; ++k) shifted[j * K + k] += c;
  }
  const std::vector<double> w{0.5, 1.0, 2.0};
  double num_ = 0, den = 0;
  for (std::size_t c = 0; c < K; ++c) {
    std::size_t inter = 0, uni = 0, gt = 0;
    for (std::size_t j = 0; j < P; ++j) {
      inter += y[j] == c && pred[j] == c;
      uni += y[j] == c || pred[j] == c;
      gt += y[j] == c;
    }
    if (gt == 0) continue;
    num_ += w[c] * (1.0 - static_cast<double>(inter) / static_cast<double>(uni));
    den += w[c];
  }
  const double lov = loss::lovasz_softmax(Tensor::from({1, H, W, K}, hard), y, w)->item();
  const double ce = loss::weighted_cross_entropy(Tensor::from({1, H, W, K}, logits), y, w)->item();
  const double ce_shift = loss::weighted_cross_entropy(Tensor::from({1, H, W, K}, shifted), y, w)->item();
  const std::vector<std::uint8_t> none(P, loss::kIgnore);
  const bool missing = !loss::weighted_cross_entropy(Tensor::from({1, H, W, K}, logits), none, w);
  const bool ok = std::abs(lov - num_ / den) <= 1e-9 && std::abs(ce - ce_shift) <= 1e-12 && missing;
  return {"lovasz hard value, CE shift invariance, missing labels", ok,
          "lovasz error " + num(std::abs(lov - num_ / den)) + ", shift error " + num(std::abs(ce - ce_shift))};
}

Check metric_dominance() {
  Rng rng(6);
  bool ok = true;
  for (int t = 0; t < 100; ++t) {
    const std::size_t K = 2 + t % 3, n = 1 + uniform_index(rng, 60);
    std::vector<std::uint8_t> gt(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      gt[i] = static_cast<std::uint8_t>(uniform_index(rng, K));
      pred[i] = static_cast<std::uint8_t>(uniform_index(rng, K));
    }
    const auto cm = metrics::ConfusionMatrix::from(gt, pred, K);
    const auto f = metrics::f1_per_class(cm), up = metrics::upper_adjacent_f1(cm), adj = metrics::adjacent_f1(cm);
    for (std::size_t k = 0; k < K; ++k) ok = ok && f[k].f1 <= up[k].f1 + 1e-15 && up[k].f1 <= adj[k].f1 + 1e-15;
  }
  return {"F1 <= upper-adjacent F1 <= adjacent F1", ok, "100 random cases"};
}

Check knn_example() {
  using geo::rectangle;
  const std::vector<geo::Footprint> fps{rectangle(0, -5, -5, 5, 5), rectangle(1, 45, -5, 55, 5),
                                        rectangle(2, 95, -5, 105, 5)};
  std::vector<gt::DamageAssignment> a{{0, {}, gt::Source::None, 0},
                                      {1, 1.0, gt::Source::Direct, 0},
                                      {2, 2.0, gt::Source::Nearest, 0}};
  gt::knn_impute(a, fps, 2, 100.0, 2);
  const bool ok = a[0].source == gt::Source::Imputed && std::abs(*a[0].pde - 4.0 / 3.0) <= 1e-15;
  return {"inverse-distance kNN worked example", ok, "pde " + num(a[0].pde.value_or(NAN))};
}

Check aggregation_example() {
  const std::vector<std::uint8_t> labels{0, 3, 0, 3};
  geo::LabelRaster r{{2, 2, 0.0, 2.0, 1.0}, labels};
  const std::vector<geo::Footprint> fps{geo::rectangle(7, 0, 0, 2, 2)};
  const auto rec = damage::aggregate(r, fps);
  const bool ok = damage::summarize(labels, damage::Stat::Median) == 3 &&
                  damage::summarize(labels, damage::Stat::Mean) == 2 &&
                  damage::summarize(labels, damage::Stat::Mode) == 3 && rec[0].damage_class == 3 &&
                  rec[0].label_variance == 2.25 && rec[0].flags.high_disagreement && !rec[0].flags.low_coverage;
  return {"footprint aggregation worked example", ok, "variance " + num(rec[0].label_variance)};
}

std::vector<data::ChipSample> small_tiles() {
  data::SynthConfig sc;
  sc.size = 64;
  sc.vhr_fraction = 0.5;
  auto tiles = data::grid_partition(data::synth_event(8, 1, sc).chips[0], 32);
  const auto stats = data::compute_stats(tiles);
  for (auto& t : tiles) t = data::normalize(t, stats);
  return tiles;
}

Check accumulation() {
  const auto tiles = small_tiles();
  train::TrainConfig cfg;
  cfg.preset = "toy";
  const model::FloodDamageNet net(cfg.model_config());
  const auto direct = train::accumulate_gradients(net, tiles, 4, cfg.loss);
  const auto acc = train::accumulate_gradients(net, tiles, 1, cfg.loss);
  double worst = std::abs(direct.loss - acc.loss);
  for (std::size_t i = 0; i < direct.grads.size(); ++i) worst = std::max(worst, max_abs_diff(direct.grads[i], acc.grads[i]));
  return {"gradient accumulation equals the direct batch", worst <= 1e-10, "max difference " + num(worst)};
}

Check checkpoint() {
  train::TrainConfig cfg;
  cfg.preset = "toy";
  model::FloodDamageNet net(cfg.model_config());
  net.params().round_to_float();
  std::random_device rd;
  const auto path = std::filesystem::temp_directory_path() / ("fds_selftest_" + std::to_string(rd()) + ".fdsw");
  save_checkpoint(net.params(), path);
  cfg.seed = 1;
  model::FloodDamageNet other(cfg.model_config());
  load_checkpoint(other.params(), path);
  std::filesystem::remove(path);
  bool ok = true;
  for (auto id : net.params().ids()) {
    const auto a = net.params().values(id), b = other.params().values(id);
    ok = ok && std::equal(a.begin(), a.end(), b.begin(), b.end());
  }
  return {"checkpoint round trip", ok, ok ? "bit-exact" : "mismatch"};
}

}  // namespace

std::vector<Check> run() {
  const std::vector<std::pair<const char*, std::function<Check()>>> checks{
      {"zoh closed form", zoh_closed_form},
      {"recurrent scan equals kernel convolution", lti_equivalence},
      {"sequential selective scan equals parallel scan", selective_equivalence},
      {"cross-scan and stream rearrangements round-trip", cross_scan_algebra},
      {"ffss block runs twelve scans", ffss_scan_count},
      {"lovasz hard value, CE shift invariance, missing labels", loss_identities},
      {"F1 <= upper-adjacent F1 <= adjacent F1", metric_dominance},
      {"inverse-distance kNN worked example", knn_example},
      {"footprint aggregation worked example", aggregation_example},
      {"gradient accumulation equals the direct batch", accumulation},
      {"checkpoint round trip", checkpoint}};
  std::vector<Check> out;
  for (const auto& [name, fn] : checks) {
    try {
      out.push_back(fn());
    } catch (const std::exception& e) {
      out.push_back({name, false, std::string("threw: ") + e.what()});
    }
  }
  return out;
}

bool all_passed(const std::vector<Check>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

nlohmann::json to_json(const std::vector<Check>& checks) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& c : checks) list.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return {{"passed", all_passed(checks)}, {"checks", list}};
}

}  // namespace fds::selftest
