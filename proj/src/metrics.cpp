#include "kwd/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace kwd {

Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.empty()) throw std::invalid_argument("compute_metrics: empty input");
  if (predictions.size() != labels.size())
    throw std::invalid_argument("compute_metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(labels.size()) + " labels");
  Metrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if ((labels[i] != 0 && labels[i] != 1) || (predictions[i] != 0 && predictions[i] != 1))
      throw std::invalid_argument("compute_metrics: labels and predictions must be binary");
    if (labels[i] == 1)
      (predictions[i] == 1 ? m.tp : m.fn)++;
    else
      (predictions[i] == 1 ? m.fp : m.tn)++;
  }
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(labels.size());
  if (m.tp + m.fp > 0) m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  if (m.tp + m.fn > 0) m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  return m;
}

std::string format_metrics(const Metrics& m) {
  char buf[192];
  const std::string prec = m.precision ? std::to_string(*m.precision) : "undefined";
  const std::string rec = m.recall ? std::to_string(*m.recall) : "undefined";
  std::snprintf(buf, sizeof(buf), "acc=%.4f prec=%s rec=%s tp=%zu fp=%zu fn=%zu tn=%zu", m.accuracy, prec.c_str(),
                rec.c_str(), m.tp, m.fp, m.fn, m.tn);
  return buf;
}

}  // namespace kwd
