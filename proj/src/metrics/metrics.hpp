#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include <json.hpp>

namespace fds::metrics {

/// Rows are ground truth, columns prediction. Instances whose ground truth
/// or prediction is 255 are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);
  static ConfusionMatrix from(std::span<const std::uint8_t> gt, std::span<const std::uint8_t> pred,
                              std::size_t classes);

  void add(std::uint8_t gt, std::uint8_t pred);
  void merge(const ConfusionMatrix& other);

  std::size_t classes() const { return k_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * k_ + pred]; }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t gt) const;
  std::uint64_t col_sum(std::size_t pred) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

struct ClassScores {
  double precision = 0, recall = 0, f1 = 0;
};

/// 0/0 is 0 throughout.
double safe_ratio(double num, double den);
double f1_of(double precision, double recall);

std::vector<ClassScores> f1_per_class(const ConfusionMatrix& cm);
/// Precision credits ground truth in {k-1, k, k+1}; recall credits
/// predictions in {k-1, k, k+1}.
std::vector<ClassScores> adjacent_f1(const ConfusionMatrix& cm);
/// Precision credits ground truth in {k-1, k}; recall credits predictions in
/// {k, k+1}, so only overestimation by one class is forgiven.
std::vector<ClassScores> upper_adjacent_f1(const ConfusionMatrix& cm);

/// K' / sum(1 / F1_k) over classes not in `exclude`; 0 if any included F1 is 0.
double harmonic_mean_f1(std::span<const double> f1s, const std::set<std::size_t>& exclude);

struct Family {
  std::vector<ClassScores> per_class;
  double harmonic_mean = 0;
};

struct MetricSet {
  std::size_t instances = 0;
  Family standard, adjacent, upper_adjacent;
};

MetricSet evaluate(const ConfusionMatrix& cm, const std::set<std::size_t>& exclude);

/// One instance per building; throws DataError on an empty list.
MetricSet building_level_metrics(std::span<const std::uint8_t> gt, std::span<const std::uint8_t> pred,
                                 std::size_t classes, const std::set<std::size_t>& exclude);

nlohmann::json to_json(const MetricSet& m);

}  // namespace fds::metrics
