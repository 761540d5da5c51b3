#include "convo/rerank.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <limits>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "convo/errors.hpp"
#include "convo/util.hpp"

namespace convo {

double overlap_score(const std::string& query_text, const std::string& passage_text,
                     const Analyzer& analyzer) {
    std::vector<std::string> query_tokens = analyzer.tokenize(query_text);
    if (query_tokens.empty())
        throw DataError("overlap score needs a query with at least one surviving token");
    std::unordered_set<std::string> query_terms(query_tokens.begin(), query_tokens.end());
    std::unordered_set<std::string> passage_terms;
    for (std::string& token : analyzer.tokenize(passage_text))
        passage_terms.insert(std::move(token));
    std::size_t present = 0;
    for (const std::string& term : query_terms)
        if (passage_terms.count(term)) ++present;
    return static_cast<double>(present) / static_cast<double>(query_terms.size());
}

double OverlapReranker::score(const std::string& query_text, const Candidate& candidate) {
    return overlap_score(query_text, candidate.text, analyzer_);
}

namespace {

std::vector<ScoredDoc> order_by_scores(const RerankInput& input,
                                       const std::vector<double>& scores) {
    struct Row {
        std::size_t first_stage_rank;
        double score;
    };
    std::vector<Row> rows;
    rows.reserve(input.candidates.size());
    for (std::size_t i = 0; i < input.candidates.size(); ++i)
        rows.push_back({i, scores[i]});
    std::sort(rows.begin(), rows.end(), [&](const Row& a, const Row& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.first_stage_rank != b.first_stage_rank)
            return a.first_stage_rank < b.first_stage_rank;
        return input.candidates[a.first_stage_rank].docno <
               input.candidates[b.first_stage_rank].docno;
    });
    std::vector<ScoredDoc> out;
    out.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.push_back({input.candidates[rows[i].first_stage_rank].docno, rows[i].score,
                       static_cast<std::uint32_t>(i + 1)});
    return out;
}

void check_input(const RerankInput& input) {
    if (input.candidates.empty()) throw DataError("rerank input has no candidates");
    if (input.candidates.size() > kMaxRerankCandidates)
        throw DataError("rerank input exceeds " + std::to_string(kMaxRerankCandidates) +
                        " candidates");
}

}  // namespace

std::vector<ScoredDoc> rerank(const RerankInput& input, Reranker& reranker) {
    check_input(input);
    std::vector<double> scores(input.candidates.size());
    for (std::size_t i = 0; i < input.candidates.size(); ++i) {
        try {
            scores[i] = reranker.score(input.query_text, input.candidates[i]);
        } catch (const std::exception& e) {
            warn("reranker failed on " + input.candidates[i].docno + ": " + e.what() +
                 " (candidate sinks)");
            scores[i] = -std::numeric_limits<double>::infinity();
        }
    }
    return order_by_scores(input, scores);
}

// ---------------------------------------------------------------------------
// External reranker subprocess
// ---------------------------------------------------------------------------

namespace {

struct Pipe {
    int fds[2] = {-1, -1};
    Pipe() {
        if (pipe(fds) != 0) throw DataError(std::string("pipe failed: ") + std::strerror(errno));
    }
    ~Pipe() {
        close_read();
        close_write();
    }
    void close_read() {
        if (fds[0] != -1) { ::close(fds[0]); fds[0] = -1; }
    }
    void close_write() {
        if (fds[1] != -1) { ::close(fds[1]); fds[1] = -1; }
    }
};

void write_all(int fd, const std::string& data) {
    std::size_t written = 0;
    while (written < data.size()) {
        ssize_t n = ::write(fd, data.data() + written, data.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            return;  // child closed its stdin early; coverage check reports it
        }
        written += static_cast<std::size_t>(n);
    }
}

std::string read_all(int fd) {
    std::string out;
    char buf[4096];
    while (true) {
        ssize_t n = ::read(fd, buf, sizeof(buf));
        if (n < 0) {
            if (errno == EINTR) continue;
            throw DataError(std::string("read from reranker failed: ") + std::strerror(errno));
        }
        if (n == 0) return out;
        out.append(buf, static_cast<std::size_t>(n));
    }
}

}  // namespace

std::vector<double> external_reranker_exchange(const RerankInput& input,
                                               const ExternalRerankerConfig& config) {
    check_input(input);
    if (config.command.empty()) throw DataError("no external reranker command configured");

    std::string payload;
    for (const Candidate& candidate : input.candidates) {
        nlohmann::ordered_json line;
        line["qid"] = input.qid;
        line["docno"] = candidate.docno;
        line["query"] = input.query_text;
        line["text"] = candidate.text;
        line["first_stage_score"] = candidate.first_stage_score;
        payload += line.dump();
        payload += '\n';
    }

    Pipe to_child;
    Pipe from_child;
    pid_t pid = fork();
    if (pid < 0) throw DataError(std::string("fork failed: ") + std::strerror(errno));
    if (pid == 0) {
        dup2(to_child.fds[0], STDIN_FILENO);
        dup2(from_child.fds[1], STDOUT_FILENO);
        ::close(to_child.fds[0]);
        ::close(to_child.fds[1]);
        ::close(from_child.fds[0]);
        ::close(from_child.fds[1]);
        execl("/bin/sh", "sh", "-c", config.command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    to_child.close_read();
    from_child.close_write();

    // Writer thread: a child that streams line-by-line would otherwise
    // deadlock against a full output pipe.
    std::thread writer([&] {
        write_all(to_child.fds[1], payload);
        to_child.close_write();
    });
    std::string output = read_all(from_child.fds[0]);
    writer.join();

    int status = 0;
    if (waitpid(pid, &status, 0) < 0)
        throw DataError(std::string("waitpid failed: ") + std::strerror(errno));
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
        throw DataError("external reranker \"" + config.command + "\" exited with status " +
                        std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));

    std::unordered_map<std::string, double> by_docno;
    for (const std::string& line : split(output, '\n')) {
        if (trim(line).empty()) continue;
        try {
            auto doc = nlohmann::json::parse(line);
            std::string qid = doc.at("qid").get<std::string>();
            if (qid != input.qid)
                throw DataError("external reranker answered for unknown qid " + qid);
            by_docno[doc.at("docno").get<std::string>()] = doc.at("score").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed reranker output line \"" + trim(line) +
                            "\": " + e.what());
        }
    }

    std::vector<double> scores;
    scores.reserve(input.candidates.size());
    for (const Candidate& candidate : input.candidates) {
        auto it = by_docno.find(candidate.docno);
        if (it == by_docno.end())
            throw DataError("external reranker returned no score for docno " +
                            candidate.docno);
        scores.push_back(it->second);
    }
    return scores;
}

std::vector<ScoredDoc> rerank_external(const RerankInput& input,
                                       const ExternalRerankerConfig& config) {
    return order_by_scores(input, external_reranker_exchange(input, config));
}

}  // namespace convo
