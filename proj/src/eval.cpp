#include "convo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "convo/conversation.hpp"
#include "convo/errors.hpp"
#include "convo/util.hpp"

namespace convo {

namespace {

bool try_parse_qid(const std::string& qid, std::uint64_t& conv, std::uint64_t& turn) {
    auto sep = qid.find('_');
    if (sep == std::string::npos || sep == 0 || sep + 1 >= qid.size()) return false;
    auto digits = [](const std::string& s) {
        return !s.empty() && std::all_of(s.begin(), s.end(),
                                         [](char c) { return c >= '0' && c <= '9'; });
    };
    std::string left = qid.substr(0, sep);
    std::string right = qid.substr(sep + 1);
    if (!digits(left) || !digits(right) || left.size() > 18 || right.size() > 18)
        return false;
    conv = std::strtoull(left.c_str(), nullptr, 10);
    turn = std::strtoull(right.c_str(), nullptr, 10);
    return true;
}

}  // namespace

bool QidOrder::operator()(const std::string& a, const std::string& b) const {
    std::uint64_t ac = 0, at = 0, bc = 0, bt = 0;
    bool pa = try_parse_qid(a, ac, at);
    bool pb = try_parse_qid(b, bc, bt);
    if (pa && pb) {
        if (ac != bc) return ac < bc;
        if (at != bt) return at < bt;
        return a < b;
    }
    if (pa != pb) return pa;  // numeric keys sort first
    return a < b;
}

// ---------------------------------------------------------------------------
// Run and qrels I/O
// ---------------------------------------------------------------------------

Run read_run(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open run file: " + path);
    Run run;
    run.tag.clear();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            run.header.push_back(line);
            continue;
        }
        auto cols = split_ws(line);
        if (cols.size() != 6)
            throw ParseError("run file " + path + " line " + std::to_string(lineno) +
                             ": expected 6 columns, got " + std::to_string(cols.size()));
        RunEntry entry;
        entry.docno = cols[2];
        char* end = nullptr;
        entry.rank = static_cast<std::uint32_t>(std::strtoul(cols[3].c_str(), &end, 10));
        if (end == cols[3].c_str() || *end != '\0')
            throw ParseError("run file " + path + " line " + std::to_string(lineno) +
                             ": non-numeric rank \"" + cols[3] + "\"");
        entry.score = std::strtod(cols[4].c_str(), &end);
        if (end == cols[4].c_str() || *end != '\0')
            throw ParseError("run file " + path + " line " + std::to_string(lineno) +
                             ": non-numeric score \"" + cols[4] + "\"");
        if (run.tag.empty()) run.tag = cols[5];
        run.entries[cols[0]].push_back(std::move(entry));
    }
    if (run.tag.empty()) run.tag = "run";

    for (auto& [qid, entries] : run.entries) {
        std::sort(entries.begin(), entries.end(),
                  [](const RunEntry& a, const RunEntry& b) { return a.rank < b.rank; });
        std::map<std::string, bool> seen;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].rank != i + 1)
                throw DataError("run file " + path + ", topic " + qid +
                                ": ranks are not consecutive from 1");
            if (i > 0 && entries[i].score > entries[i - 1].score)
                throw DataError("run file " + path + ", topic " + qid +
                                ": scores increase with rank at rank " +
                                std::to_string(i + 1));
            if (seen.count(entries[i].docno))
                throw DataError("run file " + path + ", topic " + qid +
                                ": duplicate docno " + entries[i].docno);
            seen[entries[i].docno] = true;
        }
    }
    return run;
}

void write_run(const Run& run, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write run file: " + path);
    for (const std::string& line : run.header) out << line << "\n";
    for (const auto& [qid, entries] : run.entries)
        for (const RunEntry& entry : entries)
            out << qid << " Q0 " << entry.docno << " " << entry.rank << " "
                << format_fixed(entry.score) << " " << run.tag << "\n";
}

Qrels read_qrels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open qrels file: " + path);
    Qrels qrels;
    std::string line;
    std::size_t lineno = 0;
    std::size_t out_of_scale = 0;
    std::string first_out_of_scale;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto cols = split_ws(line);
        if (cols.size() != 4)
            throw ParseError("qrels file " + path + " line " + std::to_string(lineno) +
                             ": expected 4 columns, got " + std::to_string(cols.size()));
        char* end = nullptr;
        long grade = std::strtol(cols[3].c_str(), &end, 10);
        if (end == cols[3].c_str() || *end != '\0')
            throw ParseError("qrels file " + path + " line " + std::to_string(lineno) +
                             ": non-numeric grade \"" + cols[3] + "\"");
        if (grade < 0)
            throw DataError("qrels file " + path + " line " + std::to_string(lineno) +
                            ": negative grade");
        if (grade > 2) {
            ++out_of_scale;
            if (first_out_of_scale.empty())
                first_out_of_scale = cols[0] + " " + cols[2] + " -> " + cols[3];
        }
        qrels.judgments[cols[0]][cols[2]] = static_cast<int>(grade);
    }
    if (out_of_scale > 0)
        warn("qrels file " + path + ": " + std::to_string(out_of_scale) +
             " grade(s) above the three-point scale (first: " + first_out_of_scale + ")");
    return qrels;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

namespace {

using Fragment = std::map<std::string, double, QidOrder>;

bool has_positive(const std::map<std::string, int>& judgments, int threshold) {
    for (const auto& [docno, grade] : judgments)
        if (grade >= threshold) return true;
    return false;
}

const std::vector<RunEntry>* topic_entries(const Run& run, const std::string& qid) {
    auto it = run.entries.find(qid);
    return it == run.entries.end() ? nullptr : &it->second;
}

double gain_of(int grade, bool exponential) {
    return exponential ? std::pow(2.0, grade) - 1.0 : static_cast<double>(grade);
}

}  // namespace

Fragment mrr(const Run& run, const Qrels& qrels, const EvalConfig& config) {
    Fragment out;
    for (const auto& [qid, judgments] : qrels.judgments) {
        if (!has_positive(judgments, config.rel_threshold)) continue;
        const auto* entries = topic_entries(run, qid);
        if (!entries) {
            if (!config.lenient_missing) out[qid] = 0.0;
            continue;
        }
        double value = 0.0;
        for (const RunEntry& entry : *entries) {
            auto it = judgments.find(entry.docno);
            if (it != judgments.end() && it->second >= config.rel_threshold) {
                value = 1.0 / entry.rank;
                break;
            }
        }
        out[qid] = value;
    }
    return out;
}

Fragment precision_at(const Run& run, const Qrels& qrels, int k, const EvalConfig& config) {
    if (k < 1) throw DataError("precision cutoff must be positive");
    Fragment out;
    for (const auto& [qid, judgments] : qrels.judgments) {
        if (!has_positive(judgments, config.rel_threshold)) continue;
        const auto* entries = topic_entries(run, qid);
        if (!entries) {
            if (!config.lenient_missing) out[qid] = 0.0;
            continue;
        }
        std::size_t relevant = 0;
        for (const RunEntry& entry : *entries) {
            if (entry.rank > static_cast<std::uint32_t>(k)) break;
            auto it = judgments.find(entry.docno);
            if (it != judgments.end() && it->second >= config.rel_threshold) ++relevant;
        }
        // fixed-k denominator; missing ranks count as non-relevant
        out[qid] = static_cast<double>(relevant) / static_cast<double>(k);
    }
    return out;
}

Fragment ndcg_at(const Run& run, const Qrels& qrels, int k, const EvalConfig& config) {
    if (k < 1) throw DataError("ndcg cutoff must be positive");
    Fragment out;
    std::size_t excluded = 0;
    for (const auto& [qid, judgments] : qrels.judgments) {
        std::vector<double> ideal;
        for (const auto& [docno, grade] : judgments)
            ideal.push_back(gain_of(grade, config.exponential_gain));
        std::sort(ideal.begin(), ideal.end(), std::greater<>());
        double idcg = 0.0;
        for (std::size_t i = 0; i < ideal.size() && i < static_cast<std::size_t>(k); ++i)
            idcg += ideal[i] / std::log2(static_cast<double>(i) + 2.0);
        if (idcg <= 0.0) {
            ++excluded;
            continue;
        }
        const auto* entries = topic_entries(run, qid);
        if (!entries) {
            if (!config.lenient_missing) out[qid] = 0.0;
            continue;
        }
        double dcg = 0.0;
        for (const RunEntry& entry : *entries) {
            if (entry.rank > static_cast<std::uint32_t>(k)) break;
            auto it = judgments.find(entry.docno);
            int grade = it == judgments.end() ? 0 : it->second;
            dcg += gain_of(grade, config.exponential_gain) /
                   std::log2(static_cast<double>(entry.rank) + 1.0);
        }
        out[qid] = dcg / idcg;
    }
    if (excluded > 0)
        warn("ndcg: " + std::to_string(excluded) +
             " topic(s) excluded (no judged document with a positive gain)");
    return out;
}

Fragment recall_at(const Run& run, const Qrels& qrels, int k, const EvalConfig& config) {
    if (k < 1) throw DataError("recall cutoff must be positive");
    Fragment out;
    for (const auto& [qid, judgments] : qrels.judgments) {
        std::size_t total_relevant = 0;
        for (const auto& [docno, grade] : judgments)
            if (grade >= config.rel_threshold) ++total_relevant;
        if (total_relevant == 0) continue;
        const auto* entries = topic_entries(run, qid);
        if (!entries) {
            if (!config.lenient_missing) out[qid] = 0.0;
            continue;
        }
        std::size_t found = 0;
        for (const RunEntry& entry : *entries) {
            if (entry.rank > static_cast<std::uint32_t>(k)) break;
            auto it = judgments.find(entry.docno);
            if (it != judgments.end() && it->second >= config.rel_threshold) ++found;
        }
        out[qid] = static_cast<double>(found) / static_cast<double>(total_relevant);
    }
    return out;
}

MetricReport evaluate(const Run& run, const Qrels& qrels, const EvalConfig& config) {
    std::size_t unjudged = 0;
    std::string first_unjudged;
    for (const auto& [qid, entries] : run.entries) {
        if (!qrels.judgments.count(qid)) {
            ++unjudged;
            if (first_unjudged.empty()) first_unjudged = qid;
        }
    }
    if (unjudged > 0)
        warn("run topics absent from qrels are excluded: " + std::to_string(unjudged) +
             " topic(s), first " + first_unjudged);

    MetricReport report;
    report.tag = run.tag;
    report.config = config;
    const std::string p_name = "P@" + std::to_string(config.p_cutoff);
    const std::string ndcg_name = "NDCG@" + std::to_string(config.ndcg_cutoff);
    const std::string r_name = "R@" + std::to_string(config.r_cutoff);
    report.metric_names = {"MRR", p_name, ndcg_name, r_name};

    std::map<std::string, Fragment> fragments;
    fragments["MRR"] = mrr(run, qrels, config);
    fragments[p_name] = precision_at(run, qrels, config.p_cutoff, config);
    fragments[ndcg_name] = ndcg_at(run, qrels, config.ndcg_cutoff, config);
    fragments[r_name] = recall_at(run, qrels, config.r_cutoff, config);

    for (const std::string& metric : report.metric_names) {
        const Fragment& fragment = fragments[metric];
        double sum = 0.0;
        for (const auto& [qid, value] : fragment) {
            report.per_topic[qid][metric] = value;
            sum += value;
        }
        report.metric_topic_counts[metric] = fragment.size();
        report.means[metric] = fragment.empty() ? 0.0 : sum / fragment.size();
    }
    report.topic_count = fragments["MRR"].size();
    return report;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

namespace {

nlohmann::json config_to_json(const EvalConfig& config) {
    nlohmann::json out;
    out["rel_threshold"] = config.rel_threshold;
    out["p_cutoff"] = config.p_cutoff;
    out["ndcg_cutoff"] = config.ndcg_cutoff;
    out["r_cutoff"] = config.r_cutoff;
    out["ndcg_gain"] = config.exponential_gain ? "exponential" : "linear";
    out["missing_topics"] = config.lenient_missing ? "lenient" : "strict";
    return out;
}

}  // namespace

std::string report_to_json(const MetricReport& report,
                           const std::vector<std::string>& header) {
    nlohmann::json doc;
    doc["kind"] = "metric_report";
    doc["tag"] = report.tag;
    doc["config"] = config_to_json(report.config);
    if (!header.empty()) doc["header"] = header;
    doc["topic_count"] = report.topic_count;
    doc["metric_names"] = report.metric_names;
    doc["means"] = report.means;
    doc["metric_topic_counts"] = report.metric_topic_counts;
    nlohmann::json topics = nlohmann::json::object();
    for (const auto& [qid, metrics] : report.per_topic) topics[qid] = metrics;
    doc["per_topic"] = std::move(topics);
    return doc.dump(2) + "\n";
}

MetricReport report_from_json(const std::string& text) {
    MetricReport report;
    try {
        auto doc = nlohmann::json::parse(text);
        if (doc.at("kind") != "metric_report")
            throw DataError("not a metric report JSON document");
        report.tag = doc.at("tag").get<std::string>();
        const auto& config = doc.at("config");
        report.config.rel_threshold = config.at("rel_threshold").get<int>();
        report.config.p_cutoff = config.at("p_cutoff").get<int>();
        report.config.ndcg_cutoff = config.at("ndcg_cutoff").get<int>();
        report.config.r_cutoff = config.at("r_cutoff").get<int>();
        report.config.exponential_gain = config.at("ndcg_gain") == "exponential";
        report.config.lenient_missing = config.at("missing_topics") == "lenient";
        report.topic_count = doc.at("topic_count").get<std::size_t>();
        report.metric_names = doc.at("metric_names").get<std::vector<std::string>>();
        report.means = doc.at("means").get<std::map<std::string, double>>();
        report.metric_topic_counts =
            doc.at("metric_topic_counts").get<std::map<std::string, std::size_t>>();
        for (const auto& [qid, metrics] : doc.at("per_topic").items())
            report.per_topic[qid] = metrics.get<std::map<std::string, double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed metric report: ") + e.what());
    }
    return report;
}

std::string report_to_text(const MetricReport& report,
                           const std::vector<std::string>& header) {
    std::ostringstream out;
    for (const std::string& line : header) out << "# " << line << "\n";
    out << "tag: " << report.tag << "\n";
    out << "topics: " << report.topic_count
        << "  rel_threshold: " << report.config.rel_threshold
        << "  ndcg_gain: " << (report.config.exponential_gain ? "exponential" : "linear")
        << "  missing_topics: " << (report.config.lenient_missing ? "lenient" : "strict")
        << "\n\n";

    out << "metric      mean      topics\n";
    for (const std::string& metric : report.metric_names) {
        char row[64];
        std::snprintf(row, sizeof(row), "%-10s  %.4f  %6zu\n", metric.c_str(),
                      report.means.at(metric), report.metric_topic_counts.at(metric));
        out << row;
    }

    out << "\nper-topic:\nqid";
    for (const std::string& metric : report.metric_names) out << "\t" << metric;
    out << "\n";
    for (const auto& [qid, metrics] : report.per_topic) {
        out << qid;
        for (const std::string& metric : report.metric_names) {
            auto it = metrics.find(metric);
            if (it == metrics.end())
                out << "\t-";
            else
                out << "\t" << format_fixed(it->second, 4);
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace convo
