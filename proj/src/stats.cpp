#include "convo/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "convo/errors.hpp"
#include "convo/util.hpp"

namespace convo {

namespace {

// Continued fraction for the incomplete beta function (modified Lentz).
double beta_continued_fraction(double x, double a, double b) {
    constexpr double kTiny = 1e-300;
    constexpr double kEps = 1e-15;
    constexpr int kMaxIter = 300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw DataError("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double x, double a, double b) {
    if (!(x >= 0.0 && x <= 1.0) || a <= 0.0 || b <= 0.0)
        throw DataError("incomplete_beta requires x in [0,1] and a, b > 0");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * beta_continued_fraction(x, a, b) / a;
    return 1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b;
}

double student_t_two_sided_p(double t, std::size_t df) {
    if (df == 0) throw DataError("student t needs at least one degree of freedom");
    if (!std::isfinite(t)) return 0.0;
    if (t == 0.0) return 1.0;
    const double v = static_cast<double>(df);
    const double x = v / (v + t * t);
    return incomplete_beta(x, v / 2.0, 0.5);
}

TTestResult paired_t(const PairedSample& sample) {
    const std::size_t n = sample.a.size();
    if (n != sample.b.size() || (!sample.labels.empty() && sample.labels.size() != n))
        throw DataError("paired sample vectors are not aligned");
    if (n < 2) throw DataError("paired t-test needs at least two pairs");

    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += sample.a[i] - sample.b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = sample.a[i] - sample.b[i] - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    TTestResult result;
    result.df = n - 1;
    if (sd == 0.0) {
        if (mean == 0.0) {
            result.t = 0.0;
            result.p = 1.0;
        } else {
            result.t = mean > 0 ? std::numeric_limits<double>::infinity()
                                : -std::numeric_limits<double>::infinity();
            result.p = 0.0;
            result.degenerate_variance = true;
        }
        return result;
    }
    result.t = mean * std::sqrt(static_cast<double>(n)) / sd;
    result.p = student_t_two_sided_p(result.t, result.df);
    return result;
}

double bonferroni_threshold(double alpha, std::size_t m) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DataError("alpha must lie in (0, 1)");
    if (m < 1) throw DataError("comparison count m must be at least 1");
    return alpha / static_cast<double>(m);
}

std::vector<bool> bonferroni_decide(const std::vector<double>& p_values, double alpha,
                                    std::size_t m) {
    if (p_values.empty()) throw DataError("no p-values to decide on");
    if (m < p_values.size())
        throw DataError("comparison count m must cover all p-values");
    const double threshold = bonferroni_threshold(alpha, m);
    std::vector<bool> decisions;
    decisions.reserve(p_values.size());
    for (double p : p_values) decisions.push_back(p < threshold);
    return decisions;
}

const char* decision_name(Decision decision) {
    switch (decision) {
        case Decision::SigGain: return "sig_gain";
        case Decision::SigLoss: return "sig_loss";
        case Decision::NotSig: return "not_sig";
    }
    return "not_sig";
}

SignificanceReport compare_systems(const MetricReport& report_a,
                                   const MetricReport& report_b, double alpha,
                                   std::size_t m) {
    const double threshold = bonferroni_threshold(alpha, m);

    std::set<std::string> topics_a, topics_b;
    for (const auto& [qid, metrics] : report_a.per_topic) topics_a.insert(qid);
    for (const auto& [qid, metrics] : report_b.per_topic) topics_b.insert(qid);
    if (topics_a != topics_b) {
        std::vector<std::string> diff;
        std::set_symmetric_difference(topics_a.begin(), topics_a.end(), topics_b.begin(),
                                      topics_b.end(), std::back_inserter(diff));
        std::string joined;
        for (const std::string& qid : diff) {
            if (!joined.empty()) joined += ", ";
            joined += qid;
        }
        throw DataError("topic sets differ between reports: " + joined);
    }

    SignificanceReport report;
    report.tag_a = report_a.tag;
    report.tag_b = report_b.tag;
    report.alpha = alpha;
    report.m = m;
    report.metric_names = report_a.metric_names;

    for (const std::string& metric : report.metric_names) {
        PairedSample sample;
        for (const auto& [qid, metrics] : report_a.per_topic) {
            auto ia = metrics.find(metric);
            auto itb = report_b.per_topic.at(qid).find(metric);
            if (ia == metrics.end() || itb == report_b.per_topic.at(qid).end()) continue;
            sample.labels.push_back(qid);
            sample.a.push_back(ia->second);
            sample.b.push_back(itb->second);
        }
        MetricComparison comparison;
        comparison.n = sample.a.size();
        comparison.corrected_alpha = threshold;
        double sum_a = 0.0, sum_b = 0.0;
        for (double v : sample.a) sum_a += v;
        for (double v : sample.b) sum_b += v;
        comparison.mean_a = comparison.n ? sum_a / comparison.n : 0.0;
        comparison.mean_b = comparison.n ? sum_b / comparison.n : 0.0;
        comparison.relative_gain =
            comparison.mean_b != 0.0
                ? (comparison.mean_a - comparison.mean_b) / comparison.mean_b
                : 0.0;
        if (comparison.n >= 2) {
            TTestResult tt = paired_t(sample);
            comparison.t = tt.t;
            comparison.df = tt.df;
            comparison.p = tt.p;
            comparison.degenerate_variance = tt.degenerate_variance;
            if (tt.p < threshold)
                comparison.decision = tt.t > 0 ? Decision::SigGain : Decision::SigLoss;
        }
        report.per_metric[metric] = comparison;
    }
    return report;
}

std::string significance_to_text(const SignificanceReport& report,
                                 const std::vector<std::string>& header) {
    std::ostringstream out;
    for (const std::string& line : header) out << "# " << line << "\n";
    out << "comparison: " << report.tag_a << " vs " << report.tag_b << "\n";
    out << "alpha: " << format_fixed(report.alpha, 4) << "  m: " << report.m
        << "  corrected alpha: " << format_fixed(bonferroni_threshold(report.alpha, report.m), 6)
        << "\n\n";
    out << "metric      mean_a    mean_b    gain%        t         p  decision\n";
    for (const std::string& metric : report.metric_names) {
        const MetricComparison& c = report.per_metric.at(metric);
        const char* marker = c.decision == Decision::SigGain   ? "▲"
                             : c.decision == Decision::SigLoss ? "▼"
                                                               : " ";
        char row[160];
        std::snprintf(row, sizeof(row), "%-10s  %.4f    %.4f   %+6.1f   %+7.3f  %8.5f  %s %s\n",
                      metric.c_str(), c.mean_a, c.mean_b, c.relative_gain * 100.0, c.t, c.p,
                      decision_name(c.decision), marker);
        out << row;
    }
    return out.str();
}

std::string significance_to_json(const SignificanceReport& report,
                                 const std::vector<std::string>& header) {
    nlohmann::json doc;
    doc["kind"] = "significance_report";
    doc["tag_a"] = report.tag_a;
    doc["tag_b"] = report.tag_b;
    doc["alpha"] = report.alpha;
    doc["m"] = report.m;
    doc["corrected_alpha"] = bonferroni_threshold(report.alpha, report.m);
    if (!header.empty()) doc["header"] = header;
    doc["metric_names"] = report.metric_names;
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& [metric, c] : report.per_metric) {
        nlohmann::json entry;
        entry["mean_a"] = c.mean_a;
        entry["mean_b"] = c.mean_b;
        entry["relative_gain"] = c.relative_gain;
        entry["t"] = std::isfinite(c.t) ? nlohmann::json(c.t)
                                        : nlohmann::json(c.t > 0 ? "inf" : "-inf");
        entry["df"] = c.df;
        entry["p"] = c.p;
        entry["corrected_alpha"] = c.corrected_alpha;
        entry["decision"] = decision_name(c.decision);
        entry["degenerate_variance"] = c.degenerate_variance;
        entry["n"] = c.n;
        metrics[metric] = std::move(entry);
    }
    doc["per_metric"] = std::move(metrics);
    return doc.dump(2) + "\n";
}

}  // namespace convo
