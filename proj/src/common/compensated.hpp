#pragma once

#include <cmath>

namespace fds {

/// Neumaier-compensated running sum. Loss reductions run over tens of
/// thousands of pixels, and naive accumulation there leaves enough roundoff
/// to swamp central differences on small gradients.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) carry_ += (sum_ - t) + x;
    else carry_ += (x - t) + sum_;
    sum_ = t;
  }
  CompensatedSum& operator+=(double x) {
    add(x);
    return *this;
  }
  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

}  // namespace fds
