#pragma once

#include <span>

namespace mfvit::pipeline {

// I_x(a, b) by Lentz's continued fraction.
double regularized_incomplete_beta(double a, double b, double x);
// P(T <= t) for Student's t with `df` degrees of freedom.
double student_t_cdf(double t, double df);

double mean(std::span<const double> v);
// Sample standard deviation (n - 1 denominator); 0 for n < 2.
double sample_stddev(std::span<const double> v);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;  // two-sided
  double df = 0.0;
  bool degenerate = false;  // zero variance of the differences
};

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace mfvit::pipeline
