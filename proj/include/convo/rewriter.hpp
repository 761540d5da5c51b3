#pragma once

#include <string>
#include <vector>

#include "convo/backend.hpp"
#include "convo/prompts.hpp"

namespace convo {

// Completes one turn. The first turn of a conversation passes through
// verbatim with no backend call; every later turn is rewritten from the
// post-processed backend output. The completed turn is appended to state.
Turn rewrite_turn(const PromptTemplate& tmpl, const Conversation& example,
                  std::vector<Turn>& state, Turn current, ChatBackend& backend,
                  const CompletionParams& params, const EngineOptions& opts = {},
                  std::vector<std::string>* transcript = nullptr);

std::vector<Turn> rewrite_conversation(const PromptTemplate& tmpl,
                                       const Conversation& example,
                                       const Conversation& conversation,
                                       ChatBackend& backend,
                                       const CompletionParams& params,
                                       const EngineOptions& opts = {},
                                       std::vector<std::string>* transcript = nullptr);

// "<turn_key>\t<text>" per line, optional '#' header lines first.
void write_rewrites_file(const std::vector<Turn>& turns, const std::string& path,
                         const std::vector<std::string>& header = {});
void write_answers_file(const std::vector<Turn>& turns, const std::string& path,
                        const std::vector<std::string>& header = {});

// Rewrites files double as query files: qid is the turn key.
std::vector<std::pair<std::string, std::string>> read_queries_file(const std::string& path);

}  // namespace convo
