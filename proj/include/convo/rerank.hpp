#pragma once

#include <string>
#include <vector>

#include "convo/index.hpp"
#include "convo/tokenizer.hpp"

namespace convo {

inline constexpr std::size_t kMaxRerankCandidates = 1000;

struct Candidate {
    std::string docno;
    double first_stage_score = 0.0;
    std::string text;
};

struct RerankInput {
    std::string qid;
    std::string query_text;
    std::vector<Candidate> candidates;  // first-stage order, at most 1000
};

// Fraction of the unique stemmed query terms present in the passage.
// Presence-based, so duplicating passage text never changes the score.
// Throws DataError when the query has no surviving tokens.
double overlap_score(const std::string& query_text, const std::string& passage_text,
                     const Analyzer& analyzer);

class Reranker {
public:
    virtual ~Reranker() = default;
    // A throwing candidate sinks with a -inf sentinel instead of aborting
    // the query.
    virtual double score(const std::string& query_text, const Candidate& candidate) = 0;
    virtual const char* name() const = 0;
};

class OverlapReranker : public Reranker {
public:
    explicit OverlapReranker(const Analyzer& analyzer) : analyzer_(analyzer) {}
    double score(const std::string& query_text, const Candidate& candidate) override;
    const char* name() const override { return "overlap"; }

private:
    const Analyzer& analyzer_;
};

// Keeps first-stage scores; reranking with it is the identity permutation.
class FirstStageReranker : public Reranker {
public:
    double score(const std::string&, const Candidate& candidate) override {
        return candidate.first_stage_score;
    }
    const char* name() const override { return "first-stage"; }
};

// Re-orders the candidates by reranker score, ties broken by original
// first-stage rank then docno. Output is always a permutation of the input.
std::vector<ScoredDoc> rerank(const RerankInput& input, Reranker& reranker);

struct ExternalRerankerConfig {
    std::string command;  // run through /bin/sh -c
};

// Subprocess exchange: writes one JSON object per candidate
// ({qid, docno, query, text, first_stage_score}) to the program's stdin and
// reads {qid, docno, score} lines back. Every input docno must be covered.
std::vector<double> external_reranker_exchange(const RerankInput& input,
                                               const ExternalRerankerConfig& config);

std::vector<ScoredDoc> rerank_external(const RerankInput& input,
                                       const ExternalRerankerConfig& config);

}  // namespace convo
