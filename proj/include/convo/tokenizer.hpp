#pragma once

#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace convo {

// Classic Porter stemmer (1980 algorithm, steps 1a-5b). Expects a lowercase
// word; strings of length <= 2 are returned unchanged.
std::string porter_stem(std::string_view word);

// Bundled English stopword list (the classic ~420-word list) and its version
// label. The same words ship as tests/data/stopwords_classic_en.txt.
const std::vector<std::string>& classic_stopwords();
extern const char* const kStopwordsVersion;

// One word per line; '#' lines and blank lines are skipped.
std::unordered_set<std::string> load_stopword_file(const std::string& path);

// Lowercases, splits on any non-alphanumeric byte, drops stopwords, then
// Porter-stems each surviving token. Queries and documents go through the
// same analyzer.
class Analyzer {
public:
    Analyzer();  // bundled stopword list
    explicit Analyzer(std::unordered_set<std::string> stopwords);
    static Analyzer with_stopword_file(const std::string& path);

    std::vector<std::string> tokenize(std::string_view text) const;

    const std::unordered_set<std::string>& stopwords() const { return stopwords_; }

private:
    std::unordered_set<std::string> stopwords_;
};

}  // namespace convo
