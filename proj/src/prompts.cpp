#include "convo/prompts.hpp"

#include <array>
#include <random>

#include <json.hpp>

#include "convo/errors.hpp"

namespace convo {

const char* role_name(Role role) {
    switch (role) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

TemplateId template_from_name(const std::string& name) {
    if (name == "P1") return TemplateId::P1;
    if (name == "P2") return TemplateId::P2;
    if (name == "P3") return TemplateId::P3;
    if (name == "P4") return TemplateId::P4;
    if (name == "P5") return TemplateId::P5;
    if (name == "E") return TemplateId::E;
    throw DataError("unknown prompt template: " + name);
}

const char* template_name(TemplateId id) {
    switch (id) {
        case TemplateId::P1: return "P1";
        case TemplateId::P2: return "P2";
        case TemplateId::P3: return "P3";
        case TemplateId::P4: return "P4";
        case TemplateId::P5: return "P5";
        case TemplateId::E: return "E";
    }
    return "P5";
}

const std::vector<TemplateId>& all_templates() {
    static const std::vector<TemplateId> ids = {TemplateId::P1, TemplateId::P2,
                                                TemplateId::P3, TemplateId::P4,
                                                TemplateId::P5, TemplateId::E};
    return ids;
}

const char* const kScopeFraming =
    "You are an assistant that rewrites conversational questions.";

const char* const kAnswerDirective =
    "Return the rewritten question on a single line, then the answer on the "
    "following lines after a line starting with \"Answer:\".";

const char* const kAnswerMarker = "Answer:";

namespace {

constexpr const char* kInstructionP1 =
    "Rewrite the following question to be clear and complete and then provide an "
    "answer. Use the previous questions and answers to rewrite the question.";

constexpr const char* kInstructionP2 =
    "Rewrite the following question adding keywords for a retrieval system. Use the "
    "information from the previous questions. Return only the rewritten question.";

constexpr const char* kInstructionP3 =
    "Rephrase the current question into a more concise and context-free form that is "
    "suitable for a multi-turn information search dialog using the context of the "
    "previous question. Do not add any extra sentences or notes.";

constexpr const char* kInstructionP4 =
    "Reformulate the current question following the examples.";

constexpr const char* kInstructionP5 =
    "In a multi-turn dialog system, rewrite the given sentence to be self-explanatory "
    "following the pattern of the previous interactions.";

constexpr const char* kInstructionE =
    "Reformulate the current question into a de-contextualized rewrite under the "
    "multi-turn information-seeking dialog context. Then generate a correct response. "
    "Print also the reformulated question.";

PromptTemplate make_template(TemplateId id, const char* instruction, bool uses_answers,
                             bool inline_examples) {
    PromptTemplate tmpl;
    tmpl.id = id;
    tmpl.instruction_text = instruction;
    tmpl.scope_text = std::string(kScopeFraming) + " " + instruction;
    tmpl.uses_answers = uses_answers;
    tmpl.inline_examples = inline_examples;
    return tmpl;
}

}  // namespace

const PromptTemplate& prompt_template(TemplateId id) {
    static const std::array<PromptTemplate, 6> templates = {
        make_template(TemplateId::P1, kInstructionP1, true, false),
        make_template(TemplateId::P2, kInstructionP2, false, false),
        make_template(TemplateId::P3, kInstructionP3, false, false),
        make_template(TemplateId::P4, kInstructionP4, false, true),
        make_template(TemplateId::P5, kInstructionP5, false, false),
        make_template(TemplateId::E, kInstructionE, true, false),
    };
    return templates[static_cast<std::size_t>(id)];
}

const Conversation& select_example(const std::vector<Conversation>& dataset,
                                   std::uint32_t current_conv, std::uint32_t seed) {
    std::vector<const Conversation*> eligible;
    for (const Conversation& conv : dataset)
        if (conv.conv_id != current_conv && conv.has_all_manuals())
            eligible.push_back(&conv);
    if (eligible.empty())
        throw DataError("no eligible example conversation for conversation " +
                        std::to_string(current_conv));
    std::seed_seq seq{seed, current_conv};
    std::mt19937 rng(seq);
    return *eligible[rng() % eligible.size()];
}

RewriteRequest build_request(const PromptTemplate& tmpl, const Conversation& example,
                             const std::vector<Turn>& history, const Turn& current,
                             const EngineOptions& opts) {
    for (const Turn& t : example.turns)
        if (!t.manual)
            throw DataError("example turn " + t.key().str() + " has no manual rewrite");
    if (current.turn_no != history.size() + 1)
        throw DataError("turn " + current.key().str() + " does not follow a history of " +
                        std::to_string(history.size()) + " turns");

    bool answers_in_context =
        tmpl.uses_answers && (tmpl.id != TemplateId::E || opts.e_answers_in_context);

    RewriteRequest request;
    request.template_id = tmpl.id;
    request.turn_key = current.key();
    request.messages.push_back({Role::System, tmpl.scope_text});

    for (const Turn& t : example.turns) {
        request.messages.push_back({Role::User, t.raw});
        request.messages.push_back({Role::Assistant, *t.manual});
    }

    for (const Turn& t : history) {
        if (!t.rewritten)
            throw DataError("history turn " + t.key().str() + " has no rewrite");
        if (tmpl.uses_answers && !t.answer && t.turn_no > 1)
            throw DataError("history turn " + t.key().str() + " has no answer");
        request.messages.push_back({Role::User, t.raw});
        std::string content = *t.rewritten;
        if (answers_in_context && t.answer) content += "\n" + *t.answer;
        request.messages.push_back({Role::Assistant, std::move(content)});
    }

    std::string prompt = tmpl.instruction_text;
    if (tmpl.inline_examples) {
        for (std::size_t i = 0; i < kInlineExamplePairs; ++i) {
            const Turn& t = example.turns[i % example.turns.size()];
            prompt += "\nQuestion: " + t.raw;
            prompt += "\nRewritten: " + *t.manual;
        }
    }
    if (tmpl.uses_answers) prompt += std::string("\n") + kAnswerDirective;
    prompt += "\n" + current.raw;
    request.messages.push_back({Role::User, std::move(prompt)});
    return request;
}

std::string request_to_json(const RewriteRequest& request) {
    nlohmann::ordered_json doc;
    doc["turn_key"] = request.turn_key.str();
    doc["template"] = template_name(request.template_id);
    doc["messages"] = nlohmann::ordered_json::array();
    for (const ChatMessage& message : request.messages) {
        nlohmann::ordered_json entry;
        entry["role"] = role_name(message.role);
        entry["content"] = message.content;
        doc["messages"].push_back(std::move(entry));
    }
    return doc.dump();
}

}  // namespace convo
