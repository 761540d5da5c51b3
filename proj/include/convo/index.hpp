#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "convo/tokenizer.hpp"

namespace convo {

struct Passage {
    std::string docno;
    std::string text;
};

struct Posting {
    std::uint32_t doc = 0;  // ordinal
    std::uint32_t tf = 0;
    auto operator<=>(const Posting&) const = default;
};

struct PostingList {
    std::uint64_t collection_tf = 0;
    std::vector<Posting> postings;  // sorted by doc ordinal
};

class InvertedIndex {
public:
    std::map<std::string, PostingList> postings;
    std::vector<std::uint32_t> doc_lengths;  // token counts, zero-length docs kept
    std::vector<std::string> docnos;         // ordinal -> docno
    std::string meta;                        // free-form build info, persisted

    std::uint64_t doc_count() const { return doc_lengths.size(); }
    std::uint64_t total_tokens() const;
    double avg_doc_length() const;

    void validate() const;  // throws DataError on a broken invariant
};

// Streaming build: `next` fills a passage and returns false at end of input.
InvertedIndex build_index(const std::function<bool(Passage&)>& next,
                          const Analyzer& analyzer);
InvertedIndex build_index(const std::vector<Passage>& passages, const Analyzer& analyzer);

// "docno\ttext" per line; `path` may also be a directory of such files
// (visited in name order).
std::vector<Passage> read_collection_tsv(const std::string& path);
InvertedIndex build_index_from_collection(const std::string& path, const Analyzer& analyzer,
                                          std::string meta = "");

// Versioned little-endian binary format, documented in docs/index-format.md.
void save_index(const InvertedIndex& index, const std::string& path);
InvertedIndex load_index(const std::string& path);
void dump_index_text(const InvertedIndex& index, std::ostream& out);

// Hypergeometric DPH term score. qtf scales the contribution linearly. When
// tf equals doclen the frequency ratio is clamped to (doclen-0.5)/doclen so
// the log term stays finite.
double score_dph(double tf, double doclen, double coll_tf, double n_docs, double avgdl,
                 double qtf);

// BM25 with Robertson idf = ln((N-df+0.5)/(df+0.5)+1).
double score_bm25(double tf, double doclen, double df, double n_docs, double avgdl,
                  double k1 = 1.2, double b = 0.75);

enum class RankModel { Dph, Bm25 };
RankModel rank_model_from_name(const std::string& name);
const char* rank_model_name(RankModel model);

struct ScoredDoc {
    std::string docno;
    double score = 0.0;
    std::uint32_t rank = 0;
};

// Scores every document matching at least one query term and returns the
// top k ordered by score, ties broken by ascending docno. A query with no
// surviving tokens yields an empty result with a warning.
std::vector<ScoredDoc> search(const InvertedIndex& index, const std::string& query,
                              std::size_t k, RankModel model, const Analyzer& analyzer);

}  // namespace convo
