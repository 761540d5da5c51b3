#include "convo/index.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include "convo/errors.hpp"
#include "convo/util.hpp"

namespace convo {

std::uint64_t InvertedIndex::total_tokens() const {
    std::uint64_t total = 0;
    for (std::uint32_t len : doc_lengths) total += len;
    return total;
}

double InvertedIndex::avg_doc_length() const {
    if (doc_lengths.empty()) return 0.0;
    return static_cast<double>(total_tokens()) / static_cast<double>(doc_lengths.size());
}

void InvertedIndex::validate() const {
    if (doc_lengths.size() != docnos.size())
        throw DataError("index corrupt: doc_lengths/docnos size mismatch");
    for (const auto& [term, list] : postings) {
        std::uint64_t sum = 0;
        std::uint32_t prev_doc = 0;
        bool first = true;
        for (const Posting& p : list.postings) {
            if (!first && p.doc <= prev_doc)
                throw DataError("index corrupt: postings for \"" + term +
                                "\" not strictly increasing");
            first = false;
            prev_doc = p.doc;
            if (p.doc >= doc_lengths.size())
                throw DataError("index corrupt: posting for \"" + term +
                                "\" references unknown document");
            if (p.tf < 1 || p.tf > doc_lengths[p.doc])
                throw DataError("index corrupt: tf out of range for \"" + term + "\"");
            sum += p.tf;
        }
        if (sum != list.collection_tf)
            throw DataError("index corrupt: collection tf mismatch for \"" + term + "\"");
    }
}

InvertedIndex build_index(const std::function<bool(Passage&)>& next,
                          const Analyzer& analyzer) {
    InvertedIndex index;
    std::unordered_set<std::string> seen;
    Passage passage;
    while (next(passage)) {
        if (passage.docno.empty()) throw DataError("empty docno in collection");
        if (!seen.insert(passage.docno).second)
            throw DataError("duplicate docno in collection: " + passage.docno);
        const auto ordinal = static_cast<std::uint32_t>(index.docnos.size());
        index.docnos.push_back(passage.docno);

        std::vector<std::string> tokens = analyzer.tokenize(passage.text);
        index.doc_lengths.push_back(static_cast<std::uint32_t>(tokens.size()));

        std::map<std::string, std::uint32_t> tf;
        for (std::string& token : tokens) ++tf[std::move(token)];
        for (auto& [term, count] : tf) {
            PostingList& list = index.postings[term];
            list.collection_tf += count;
            list.postings.push_back({ordinal, count});
        }
    }
    return index;
}

InvertedIndex build_index(const std::vector<Passage>& passages, const Analyzer& analyzer) {
    std::size_t i = 0;
    return build_index(
        [&](Passage& out) {
            if (i >= passages.size()) return false;
            out = passages[i++];
            return true;
        },
        analyzer);
}

std::vector<Passage> read_collection_tsv(const std::string& path) {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    if (fs::is_directory(path)) {
        for (const auto& entry : fs::directory_iterator(path))
            if (entry.is_regular_file()) files.push_back(entry.path().string());
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(path);
    }
    std::vector<Passage> passages;
    for (const std::string& file : files) {
        std::ifstream in(file);
        if (!in) throw DataError("cannot open collection file: " + file);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            auto sep = line.find('\t');
            if (sep == std::string::npos)
                throw ParseError("collection file " + file + " line " +
                                 std::to_string(lineno) + ": expected \"docno\\ttext\"");
            passages.push_back({line.substr(0, sep), line.substr(sep + 1)});
        }
    }
    return passages;
}

InvertedIndex build_index_from_collection(const std::string& path, const Analyzer& analyzer,
                                          std::string meta) {
    std::vector<Passage> passages = read_collection_tsv(path);
    InvertedIndex index = build_index(passages, analyzer);
    index.meta = std::move(meta);
    return index;
}

// ---------------------------------------------------------------------------
// Persistence (format documented in docs/index-format.md)
// ---------------------------------------------------------------------------

namespace {

constexpr char kIndexMagic[8] = {'c', 'o', 'n', 'v', 'o', 'i', 'd', 'x'};
constexpr std::uint32_t kIndexVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
        return v;
    }

    std::string str() {
        std::uint32_t n = u32();
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) throw DataError("index file truncated");
    }
    std::string data_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_index(const InvertedIndex& index, const std::string& path) {
    std::string out;
    out.append(kIndexMagic, sizeof(kIndexMagic));
    put_u32(out, kIndexVersion);
    put_str(out, index.meta);
    put_u64(out, index.doc_count());
    for (std::size_t i = 0; i < index.docnos.size(); ++i) {
        put_str(out, index.docnos[i]);
        put_u32(out, index.doc_lengths[i]);
    }
    put_u64(out, index.postings.size());
    for (const auto& [term, list] : index.postings) {
        put_str(out, term);
        put_u64(out, list.collection_tf);
        put_u64(out, list.postings.size());
        for (const Posting& p : list.postings) {
            put_u32(out, p.doc);
            put_u32(out, p.tf);
        }
    }
    write_file(path, out);
}

InvertedIndex load_index(const std::string& path) {
    Reader reader(read_file(path));
    if (reader.bytes(sizeof(kIndexMagic)) != std::string(kIndexMagic, sizeof(kIndexMagic)))
        throw DataError("not an index file: " + path);
    std::uint32_t version = reader.u32();
    if (version != kIndexVersion)
        throw DataError("unsupported index version " + std::to_string(version) + " in " + path);
    InvertedIndex index;
    index.meta = reader.str();
    std::uint64_t docs = reader.u64();
    index.docnos.reserve(docs);
    index.doc_lengths.reserve(docs);
    for (std::uint64_t i = 0; i < docs; ++i) {
        index.docnos.push_back(reader.str());
        index.doc_lengths.push_back(reader.u32());
    }
    std::uint64_t terms = reader.u64();
    for (std::uint64_t t = 0; t < terms; ++t) {
        std::string term = reader.str();
        PostingList list;
        list.collection_tf = reader.u64();
        std::uint64_t count = reader.u64();
        list.postings.reserve(count);
        for (std::uint64_t p = 0; p < count; ++p) {
            Posting posting;
            posting.doc = reader.u32();
            posting.tf = reader.u32();
            list.postings.push_back(posting);
        }
        index.postings.emplace(std::move(term), std::move(list));
    }
    if (!reader.done()) throw DataError("trailing bytes in index file: " + path);
    index.validate();
    return index;
}

void dump_index_text(const InvertedIndex& index, std::ostream& out) {
    out << "# index dump\n";
    out << "meta\t" << index.meta << "\n";
    out << "docs\t" << index.doc_count() << "\n";
    out << "avgdl\t" << format_fixed(index.avg_doc_length()) << "\n";
    for (std::size_t i = 0; i < index.docnos.size(); ++i)
        out << "doc\t" << index.docnos[i] << "\t" << index.doc_lengths[i] << "\n";
    for (const auto& [term, list] : index.postings) {
        out << "term\t" << term << "\t" << list.collection_tf;
        for (const Posting& p : list.postings) out << "\t" << p.doc << ":" << p.tf;
        out << "\n";
    }
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

double score_dph(double tf, double doclen, double coll_tf, double n_docs, double avgdl,
                 double qtf) {
    double f = tf / doclen;
    if (tf >= doclen) f = (doclen - 0.5) / doclen;
    const double norm = (1.0 - f) * (1.0 - f) / (tf + 1.0);
    return qtf * norm *
           (tf * std::log2((tf * avgdl / doclen) * (n_docs / coll_tf)) +
            0.5 * std::log2(2.0 * std::numbers::pi * tf * (1.0 - f)));
}

double score_bm25(double tf, double doclen, double df, double n_docs, double avgdl,
                  double k1, double b) {
    if (tf <= 0.0) return 0.0;
    const double idf = std::log((n_docs - df + 0.5) / (df + 0.5) + 1.0);
    const double sat = tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doclen / avgdl));
    return idf * sat;
}

RankModel rank_model_from_name(const std::string& name) {
    if (name == "dph") return RankModel::Dph;
    if (name == "bm25") return RankModel::Bm25;
    throw DataError("unknown ranking model: " + name);
}

const char* rank_model_name(RankModel model) {
    return model == RankModel::Dph ? "dph" : "bm25";
}

std::vector<ScoredDoc> search(const InvertedIndex& index, const std::string& query,
                              std::size_t k, RankModel model, const Analyzer& analyzer) {
    if (k < 1) throw DataError("search depth k must be at least 1");
    std::map<std::string, std::uint32_t> qtf;
    for (std::string& token : analyzer.tokenize(query)) ++qtf[std::move(token)];
    if (qtf.empty()) {
        warn("query has no terms after stopword removal and stemming: \"" + query + "\"");
        return {};
    }

    const double n_docs = static_cast<double>(index.doc_count());
    const double avgdl = index.avg_doc_length();
    std::unordered_map<std::uint32_t, double> accumulator;
    for (const auto& [term, weight] : qtf) {
        auto it = index.postings.find(term);
        if (it == index.postings.end()) continue;
        const PostingList& list = it->second;
        for (const Posting& p : list.postings) {
            const double doclen = index.doc_lengths[p.doc];
            double contribution;
            if (model == RankModel::Dph) {
                contribution = score_dph(p.tf, doclen, static_cast<double>(list.collection_tf),
                                         n_docs, avgdl, weight);
            } else {
                contribution = weight * score_bm25(p.tf, doclen,
                                                   static_cast<double>(list.postings.size()),
                                                   n_docs, avgdl);
            }
            accumulator[p.doc] += contribution;
        }
    }

    std::vector<std::pair<std::uint32_t, double>> scored(accumulator.begin(),
                                                         accumulator.end());
    std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return index.docnos[a.first] < index.docnos[b.first];
    });
    if (scored.size() > k) scored.resize(k);

    std::vector<ScoredDoc> results;
    results.reserve(scored.size());
    for (std::size_t i = 0; i < scored.size(); ++i)
        results.push_back({index.docnos[scored[i].first], scored[i].second,
                           static_cast<std::uint32_t>(i + 1)});
    return results;
}

}  // namespace convo
