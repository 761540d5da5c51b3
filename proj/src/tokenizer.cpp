#include "convo/tokenizer.hpp"

#include <cctype>
#include <fstream>

#include "convo/errors.hpp"

namespace convo {

std::unordered_set<std::string> load_stopword_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open stopword file: " + path);
    std::unordered_set<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        words.insert(line);
    }
    return words;
}

Analyzer::Analyzer()
    : stopwords_(classic_stopwords().begin(), classic_stopwords().end()) {}

Analyzer::Analyzer(std::unordered_set<std::string> stopwords)
    : stopwords_(std::move(stopwords)) {}

Analyzer Analyzer::with_stopword_file(const std::string& path) {
    return Analyzer(load_stopword_file(path));
}

std::vector<std::string> Analyzer::tokenize(std::string_view text) const {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (current.empty()) return;
        if (!stopwords_.count(current)) tokens.push_back(porter_stem(current));
        current.clear();
    };
    for (char c : text) {
        unsigned char uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc) && uc < 0x80) {
            current.push_back(static_cast<char>(std::tolower(uc)));
        } else {
            flush();
        }
    }
    flush();
    return tokens;
}

}  // namespace convo
