#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "convo/eval.hpp"

namespace convo {

struct PairedSample {
    std::vector<std::string> labels;  // aligned qids
    std::vector<double> a;
    std::vector<double> b;
};

struct TTestResult {
    double t = 0.0;
    std::size_t df = 0;
    double p = 1.0;  // two-sided
    bool degenerate_variance = false;
};

// Two-sided paired t-test with sample standard deviation (n-1 denominator).
// Zero-variance differences give t=0, p=1 when the mean difference is zero
// and p=0 with the degenerate flag otherwise.
TTestResult paired_t(const PairedSample& sample);

// Regularized incomplete beta I_x(a, b) via the Lentz continued fraction.
double incomplete_beta(double x, double a, double b);

// P(|T| > |t|) for Student's t with df degrees of freedom.
double student_t_two_sided_p(double t, std::size_t df);

double bonferroni_threshold(double alpha, std::size_t m);

// One flag per p-value: significant iff p < alpha/m.
std::vector<bool> bonferroni_decide(const std::vector<double>& p_values, double alpha,
                                    std::size_t m);

enum class Decision { SigGain, SigLoss, NotSig };
const char* decision_name(Decision decision);

struct MetricComparison {
    double mean_a = 0.0;
    double mean_b = 0.0;
    double relative_gain = 0.0;  // (mean_a - mean_b) / mean_b
    double t = 0.0;
    std::size_t df = 0;
    double p = 1.0;
    double corrected_alpha = 0.0;
    Decision decision = Decision::NotSig;
    bool degenerate_variance = false;
    std::size_t n = 0;
};

struct SignificanceReport {
    std::string tag_a;
    std::string tag_b;
    double alpha = 0.05;
    std::size_t m = 1;
    std::vector<std::string> metric_names;
    std::map<std::string, MetricComparison> per_metric;
};

// One paired test per metric over the two reports' per-topic vectors.
// Topic sets must match exactly; a mismatch error lists the symmetric
// difference.
SignificanceReport compare_systems(const MetricReport& report_a,
                                   const MetricReport& report_b, double alpha,
                                   std::size_t m);

std::string significance_to_text(const SignificanceReport& report,
                                 const std::vector<std::string>& header = {});
std::string significance_to_json(const SignificanceReport& report,
                                 const std::vector<std::string>& header = {});

}  // namespace convo
