#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convo/conversation.hpp"

namespace convo {

enum class Role { System, User, Assistant };
const char* role_name(Role role);

struct ChatMessage {
    Role role = Role::User;
    std::string content;
};

enum class TemplateId { P1, P2, P3, P4, P5, E };

TemplateId template_from_name(const std::string& name);
const char* template_name(TemplateId id);
const std::vector<TemplateId>& all_templates();

// A rewriting template: the system scope, the per-turn instruction, and the
// flags that change how context and the final user message are assembled.
struct PromptTemplate {
    TemplateId id = TemplateId::P5;
    std::string scope_text;
    std::string instruction_text;
    bool uses_answers = false;     // P1 and E: context carries generated answers
    bool inline_examples = false;  // P4: eight example pairs inside the prompt
};

const PromptTemplate& prompt_template(TemplateId id);

// Sentence prepended to every scope text.
extern const char* const kScopeFraming;
// Output-format directive appended to the final user message of templates
// that request an answer; pins the extraction delimiter.
extern const char* const kAnswerDirective;
// Line prefix separating the rewrite from the generated answer.
extern const char* const kAnswerMarker;
// Number of inline example pairs embedded by P4.
inline constexpr std::size_t kInlineExamplePairs = 8;

struct RewriteRequest {
    std::vector<ChatMessage> messages;
    TemplateId template_id = TemplateId::P5;
    TurnKey turn_key;
};

struct EngineOptions {
    std::uint32_t example_seed = 13;
    bool e_answers_in_context = true;  // feed E's generated answers back like P1
};

// Picks a few-shot example conversation: any conversation other than the
// current one whose turns all carry manual rewrites. Deterministic for a
// fixed dataset order and seed.
const Conversation& select_example(const std::vector<Conversation>& dataset,
                                   std::uint32_t current_conv, std::uint32_t seed);

// Assembles the ordered message list: system scope, example block (raw ->
// manual), context block (raw -> model rewrite, plus answers where the
// template uses them), then the final user message with the instruction and
// the current utterance.
RewriteRequest build_request(const PromptTemplate& tmpl, const Conversation& example,
                             const std::vector<Turn>& history, const Turn& current,
                             const EngineOptions& opts = {});

// One transcript line: the request as a JSON object with ordered messages.
std::string request_to_json(const RewriteRequest& request);

}  // namespace convo
