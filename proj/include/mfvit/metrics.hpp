#pragma once

#include <span>
#include <vector>

#include "json.hpp"

namespace mfvit::pipeline {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 3) : classes_(classes), counts_(classes * classes, 0) {}

  void add(int truth, int predicted);
  long at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
  long& at(std::size_t truth, std::size_t predicted) { return counts_[truth * classes_ + predicted]; }
  std::size_t classes() const { return classes_; }
  long total() const;
  long row_sum(std::size_t r) const;
  long col_sum(std::size_t c) const;

 private:
  std::size_t classes_;
  std::vector<long> counts_;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;  // some ratio had a zero denominator
};

struct EvalReport {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
};

EvalReport report_from_confusion(const ConfusionMatrix& cm);
EvalReport evaluate_predictions(std::span<const int> truth, std::span<const int> predicted, std::size_t classes = 3);

nlohmann::json to_json(const EvalReport& r);

}  // namespace mfvit::pipeline
