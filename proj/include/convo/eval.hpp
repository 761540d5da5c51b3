#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace convo {

// Orders qids numerically when both parse as "<conv>_<turn>" keys, falling
// back to byte order, so 31_2 sorts before 31_10.
struct QidOrder {
    bool operator()(const std::string& a, const std::string& b) const;
};

struct RunEntry {
    std::string docno;
    std::uint32_t rank = 0;
    double score = 0.0;
};

struct Run {
    std::map<std::string, std::vector<RunEntry>, QidOrder> entries;
    std::string tag = "run";
    std::vector<std::string> header;  // '#' comment lines, preserved verbatim
};

// Six whitespace-separated columns: qid Q0 docno rank score tag.
// Per qid the ranks must be 1..n with non-increasing scores and unique
// docnos. Scores are printed with six decimals on write.
Run read_run(const std::string& path);
void write_run(const Run& run, const std::string& path);

struct Qrels {
    // qid -> docno -> grade
    std::map<std::string, std::map<std::string, int>, QidOrder> judgments;
};

// Four whitespace-separated columns: qid 0 docno grade. Grades above the
// declared three-point scale load with a warning.
Qrels read_qrels(const std::string& path);

struct EvalConfig {
    int rel_threshold = 1;  // grade >= threshold counts as relevant
    int p_cutoff = 1;
    int ndcg_cutoff = 3;
    int r_cutoff = 500;
    bool exponential_gain = false;  // NDCG gain (2^g - 1) instead of g
    bool lenient_missing = false;   // default strict: missing topics score 0
};

// Per-topic metric fragments. Topics evaluated are those with at least one
// positive judgment (nonzero grade for NDCG); in strict mode topics missing
// from the run score 0, in lenient mode they are skipped.
std::map<std::string, double, QidOrder> mrr(const Run& run, const Qrels& qrels,
                                            const EvalConfig& config);
std::map<std::string, double, QidOrder> precision_at(const Run& run, const Qrels& qrels,
                                                     int k, const EvalConfig& config);
std::map<std::string, double, QidOrder> ndcg_at(const Run& run, const Qrels& qrels, int k,
                                                const EvalConfig& config);
std::map<std::string, double, QidOrder> recall_at(const Run& run, const Qrels& qrels, int k,
                                                  const EvalConfig& config);

struct MetricReport {
    std::string tag;
    EvalConfig config;
    std::vector<std::string> metric_names;  // display order
    std::map<std::string, std::map<std::string, double>, QidOrder> per_topic;
    std::map<std::string, double> means;
    std::map<std::string, std::size_t> metric_topic_counts;
    std::size_t topic_count = 0;
};

// The paper's four metrics at the configured cutoffs.
MetricReport evaluate(const Run& run, const Qrels& qrels, const EvalConfig& config);

std::string report_to_json(const MetricReport& report,
                           const std::vector<std::string>& header = {});
MetricReport report_from_json(const std::string& text);
std::string report_to_text(const MetricReport& report,
                           const std::vector<std::string>& header = {});

}  // namespace convo
