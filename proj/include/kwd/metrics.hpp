#pragma once

#include <optional>
#include <string>
#include <vector>

namespace kwd {

// Binary classification metrics; foreground (label 1) is the positive class.
// precision/recall are absent when their denominator is zero.
struct Metrics {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
};

Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels);

std::string format_metrics(const Metrics& m);

}  // namespace kwd
