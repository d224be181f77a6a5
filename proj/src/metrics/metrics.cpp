#include "metrics/metrics.hpp"

#include <numeric>
#include <string>

#include "common/errors.hpp"

namespace fds::metrics {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {
  if (classes == 0 || classes >= 255) throw UsageError("confusion matrix needs 1..254 classes");
}

ConfusionMatrix ConfusionMatrix::from(std::span<const std::uint8_t> gt, std::span<const std::uint8_t> pred,
                                      std::size_t classes) {
  if (gt.size() != pred.size())
    throw ShapeError("confusion matrix: " + std::to_string(gt.size()) + " labels vs " + std::to_string(pred.size()) +
                     " predictions");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < gt.size(); ++i) cm.add(gt[i], pred[i]);
  return cm;
}

void ConfusionMatrix::add(std::uint8_t gt, std::uint8_t pred) {
  if (gt == 255 || pred == 255) return;
  if (gt >= k_ || pred >= k_)
    throw DataError("class id " + std::to_string(std::max(gt, pred)) + " outside 0.." + std::to_string(k_ - 1));
  ++counts_[gt * k_ + pred];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("confusion matrix: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::row_sum(std::size_t gt) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < k_; ++p) s += at(gt, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::uint64_t s = 0;
  for (std::size_t g = 0; g < k_; ++g) s += at(g, pred);
  return s;
}

double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
double f1_of(double precision, double recall) { return safe_ratio(2.0 * precision * recall, precision + recall); }

namespace {

// Scores where precision counts ground truth in [k - p_lo, k + p_hi] and
// recall counts predictions in [k - r_lo, k + r_hi].
std::vector<ClassScores> banded(const ConfusionMatrix& cm, std::size_t p_lo, std::size_t p_hi, std::size_t r_lo,
                                std::size_t r_hi) {
  const std::size_t K = cm.classes();
  std::vector<ClassScores> out(K);
  for (std::size_t k = 0; k < K; ++k) {
    double p_num = 0, r_num = 0;
    for (std::size_t g = k >= p_lo ? k - p_lo : 0; g <= std::min(K - 1, k + p_hi); ++g) p_num += cm.at(g, k);
    for (std::size_t p = k >= r_lo ? k - r_lo : 0; p <= std::min(K - 1, k + r_hi); ++p) r_num += cm.at(k, p);
    auto& s = out[k];
    s.precision = safe_ratio(p_num, static_cast<double>(cm.col_sum(k)));
    s.recall = safe_ratio(r_num, static_cast<double>(cm.row_sum(k)));
    s.f1 = f1_of(s.precision, s.recall);
  }
  return out;
}

std::vector<double> f1s(const std::vector<ClassScores>& s) {
  std::vector<double> out;
  for (const auto& c : s) out.push_back(c.f1);
  return out;
}

nlohmann::json family_json(const Family& f) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : f.per_class) classes.push_back({{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}});
  return {{"per_class", classes}, {"harmonic_mean_f1", f.harmonic_mean}};
}

}  // namespace

std::vector<ClassScores> f1_per_class(const ConfusionMatrix& cm) { return banded(cm, 0, 0, 0, 0); }
std::vector<ClassScores> adjacent_f1(const ConfusionMatrix& cm) { return banded(cm, 1, 1, 1, 1); }
std::vector<ClassScores> upper_adjacent_f1(const ConfusionMatrix& cm) { return banded(cm, 1, 0, 0, 1); }

double harmonic_mean_f1(std::span<const double> f1s, const std::set<std::size_t>& exclude) {
  double inv = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < f1s.size(); ++k) {
    if (exclude.count(k)) continue;
    if (f1s[k] <= 0.0) return 0.0;
    inv += 1.0 / f1s[k];
    ++n;
  }
  return n == 0 ? 0.0 : static_cast<double>(n) / inv;
}

MetricSet evaluate(const ConfusionMatrix& cm, const std::set<std::size_t>& exclude) {
  MetricSet m;
  m.instances = cm.total();
  auto fill = [&](Family& f, std::vector<ClassScores> s) {
    f.per_class = std::move(s);
    f.harmonic_mean = harmonic_mean_f1(f1s(f.per_class), exclude);
  };
  fill(m.standard, f1_per_class(cm));
  fill(m.adjacent, adjacent_f1(cm));
  fill(m.upper_adjacent, upper_adjacent_f1(cm));
  return m;
}

MetricSet building_level_metrics(std::span<const std::uint8_t> gt, std::span<const std::uint8_t> pred,
                                 std::size_t classes, const std::set<std::size_t>& exclude) {
  if (gt.empty()) throw DataError("building-level metrics: no buildings");
  return evaluate(ConfusionMatrix::from(gt, pred, classes), exclude);
}

nlohmann::json to_json(const MetricSet& m) {
  return {{"instances", m.instances},
          {"f1", family_json(m.standard)},
          {"adjacent_f1", family_json(m.adjacent)},
          {"upper_adjacent_f1", family_json(m.upper_adjacent)}};
}

}  // namespace fds::metrics
