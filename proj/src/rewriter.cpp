#include "convo/rewriter.hpp"

#include <fstream>

#include "convo/errors.hpp"
#include "convo/util.hpp"

namespace convo {

Turn rewrite_turn(const PromptTemplate& tmpl, const Conversation& example,
                  std::vector<Turn>& state, Turn current, ChatBackend& backend,
                  const CompletionParams& params, const EngineOptions& opts,
                  std::vector<std::string>* transcript) {
    if (current.turn_no == 1) {
        current.rewritten = current.raw;
        state.push_back(current);
        return current;
    }
    RewriteRequest request = build_request(tmpl, example, state, current, opts);
    if (transcript) transcript->push_back(request_to_json(request));
    std::string raw_output;
    try {
        raw_output = backend.complete(request.messages, params);
    } catch (const BackendError& e) {
        throw BackendError("turn " + current.key().str() + ": " + e.what());
    }
    Postprocessed processed = postprocess(raw_output, tmpl.id);
    current.rewritten = std::move(processed.rewrite);
    current.answer = std::move(processed.answer);
    state.push_back(current);
    return current;
}

std::vector<Turn> rewrite_conversation(const PromptTemplate& tmpl,
                                       const Conversation& example,
                                       const Conversation& conversation,
                                       ChatBackend& backend,
                                       const CompletionParams& params,
                                       const EngineOptions& opts,
                                       std::vector<std::string>* transcript) {
    validate_conversation(conversation);
    std::vector<Turn> state;
    state.reserve(conversation.turns.size());
    for (const Turn& turn : conversation.turns)
        rewrite_turn(tmpl, example, state, turn, backend, params, opts, transcript);
    return state;
}

namespace {

void write_turn_file(const std::vector<Turn>& turns, const std::string& path,
                     const std::vector<std::string>& header, bool answers) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    for (const std::string& line : header) out << "# " << line << "\n";
    for (const Turn& turn : turns) {
        if (answers) {
            if (!turn.answer) continue;
            out << turn.key().str() << '\t' << *turn.answer << '\n';
        } else {
            if (!turn.rewritten) continue;
            out << turn.key().str() << '\t' << *turn.rewritten << '\n';
        }
    }
}

}  // namespace

void write_rewrites_file(const std::vector<Turn>& turns, const std::string& path,
                         const std::vector<std::string>& header) {
    write_turn_file(turns, path, header, false);
}

void write_answers_file(const std::vector<Turn>& turns, const std::string& path,
                        const std::vector<std::string>& header) {
    write_turn_file(turns, path, header, true);
}

std::vector<std::pair<std::string, std::string>> read_queries_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open query file: " + path);
    std::vector<std::pair<std::string, std::string>> queries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto sep = line.find('\t');
        if (sep == std::string::npos)
            throw ParseError("query file " + path + " line " + std::to_string(lineno) +
                             ": expected \"<qid>\\t<text>\"");
        queries.emplace_back(line.substr(0, sep), trim(line.substr(sep + 1)));
    }
    return queries;
}

}  // namespace convo
