#include "mfvit/metrics.hpp"

#include "mfvit/error.hpp"

namespace mfvit::pipeline {

void ConfusionMatrix::add(int truth, int predicted) {
  const auto c = static_cast<int>(classes_);
  if (truth < 0 || truth >= c || predicted < 0 || predicted >= c) {
    throw IndexError("confusion entry (" + std::to_string(truth) + "," + std::to_string(predicted) +
                     ") outside " + std::to_string(c) + " classes");
  }
  ++counts_[truth * classes_ + predicted];
}

long ConfusionMatrix::total() const {
  long t = 0;
  for (long v : counts_) t += v;
  return t;
}

long ConfusionMatrix::row_sum(std::size_t r) const {
  long s = 0;
  for (std::size_t c = 0; c < classes_; ++c) s += at(r, c);
  return s;
}

long ConfusionMatrix::col_sum(std::size_t c) const {
  long s = 0;
  for (std::size_t r = 0; r < classes_; ++r) s += at(r, c);
  return s;
}

EvalReport report_from_confusion(const ConfusionMatrix& cm) {
  EvalReport r{cm, 0.0, {}, 0.0, 0.0, 0.0};
  const long total = cm.total();
  long diag = 0;
  for (std::size_t k = 0; k < cm.classes(); ++k) diag += cm.at(k, k);
  r.accuracy = total > 0 ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
  for (std::size_t k = 0; k < cm.classes(); ++k) {
    ClassMetrics m;
    const long tp = cm.at(k, k);
    const long predicted = cm.col_sum(k);
    const long actual = cm.row_sum(k);
    if (predicted > 0) {
      m.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    } else {
      m.degenerate = true;
    }
    if (actual > 0) {
      m.recall = static_cast<double>(tp) / static_cast<double>(actual);
    } else {
      m.degenerate = true;
    }
    if (m.precision + m.recall > 0.0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    r.per_class.push_back(m);
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
  }
  const auto n = static_cast<double>(cm.classes());
  r.macro_precision /= n;
  r.macro_recall /= n;
  r.macro_f1 /= n;
  return r;
}

EvalReport evaluate_predictions(std::span<const int> truth, std::span<const int> predicted, std::size_t classes) {
  if (truth.size() != predicted.size()) throw DimensionError("evaluate: truth and prediction counts differ");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return report_from_confusion(cm);
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json cm = nlohmann::json::array();
  for (std::size_t t = 0; t < r.confusion.classes(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < r.confusion.classes(); ++p) row.push_back(r.confusion.at(t, p));
    cm.push_back(row);
  }
  nlohmann::json pc = nlohmann::json::array();
  for (const auto& m : r.per_class) {
    pc.push_back({{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"degenerate", m.degenerate}});
  }
  return {{"accuracy", r.accuracy},
          {"confusion", cm},
          {"per_class", pc},
          {"macro_precision", r.macro_precision},
          {"macro_recall", r.macro_recall},
          {"macro_f1", r.macro_f1}};
}

}  // namespace mfvit::pipeline
