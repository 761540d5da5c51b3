#include <doctest.h>

#include <map>

#include <json.hpp>

#include "convo/errors.hpp"
#include "convo/prompts.hpp"
#include "convo/rewriter.hpp"
#include "prompt_fixtures.hpp"
#include "test_util.hpp"

using namespace convo;

namespace {

Conversation make_conv(std::uint32_t id, std::size_t turns, bool with_manual = true) {
    Conversation conv;
    conv.conv_id = id;
    for (std::size_t i = 1; i <= turns; ++i) {
        Turn turn;
        turn.conv_id = id;
        turn.turn_no = static_cast<std::uint32_t>(i);
        turn.raw = "raw " + std::to_string(id) + " " + std::to_string(i);
        if (with_manual) turn.manual = "manual " + std::to_string(id) + " " + std::to_string(i);
        conv.turns.push_back(std::move(turn));
    }
    return conv;
}

Turn completed(std::uint32_t conv, std::uint32_t no, const std::string& raw,
               const std::string& rewritten, const std::string& answer = "") {
    Turn turn;
    turn.conv_id = conv;
    turn.turn_no = no;
    turn.raw = raw;
    turn.rewritten = rewritten;
    if (!answer.empty()) turn.answer = answer;
    return turn;
}

class CountingMock : public ChatBackend {
public:
    explicit CountingMock(std::map<std::string, std::string> fixture = {})
        : inner_(std::move(fixture)) {}
    std::string complete(const std::vector<ChatMessage>& messages,
                         const CompletionParams& params) override {
        ++calls;
        last_messages = messages;
        return inner_.complete(messages, params);
    }
    const char* name() const override { return "counting-mock"; }

    std::size_t calls = 0;
    std::vector<ChatMessage> last_messages;

private:
    MockBackend inner_;
};

}  // namespace

TEST_SUITE("prompts") {

TEST_CASE("instruction fixtures match byte for byte") {
    CHECK(prompt_template(TemplateId::P1).instruction_text == prompt_fixtures::kP1);
    CHECK(prompt_template(TemplateId::P2).instruction_text == prompt_fixtures::kP2);
    CHECK(prompt_template(TemplateId::P3).instruction_text == prompt_fixtures::kP3);
    CHECK(prompt_template(TemplateId::P4).instruction_text == prompt_fixtures::kP4);
    CHECK(prompt_template(TemplateId::P5).instruction_text == prompt_fixtures::kP5);
    CHECK(prompt_template(TemplateId::E).instruction_text == prompt_fixtures::kE);
    CHECK(std::string(kScopeFraming) == prompt_fixtures::kFraming);
    CHECK(std::string(kAnswerDirective) == prompt_fixtures::kDirective);
}

TEST_CASE("template flags") {
    for (TemplateId id : all_templates()) {
        const PromptTemplate& tmpl = prompt_template(id);
        CHECK(tmpl.id == id);
        CHECK(tmpl.uses_answers == (id == TemplateId::P1 || id == TemplateId::E));
        CHECK(tmpl.inline_examples == (id == TemplateId::P4));
        // scope carries the framing sentence and the instruction
        CHECK(tmpl.scope_text.find(prompt_fixtures::kFraming) != std::string::npos);
        CHECK(tmpl.scope_text.find(tmpl.instruction_text) != std::string::npos);
    }
    CHECK(template_from_name("P3") == TemplateId::P3);
    CHECK(template_from_name("E") == TemplateId::E);
    CHECK_THROWS_AS(template_from_name("P9"), DataError);
}

TEST_CASE("select_example picks the only eligible conversation") {
    std::vector<Conversation> dataset{make_conv(31, 3), make_conv(32, 2)};
    for (std::uint32_t seed : {0u, 1u, 13u, 999u})
        CHECK(select_example(dataset, 31, seed).conv_id == 32);
}

TEST_CASE("select_example is deterministic per seed") {
    std::vector<Conversation> dataset;
    for (std::uint32_t id = 1; id <= 5; ++id) dataset.push_back(make_conv(id, 2));
    for (std::uint32_t seed : {0u, 7u, 42u})
        CHECK(select_example(dataset, 1, seed).conv_id ==
              select_example(dataset, 1, seed).conv_id);
}

TEST_CASE("select_example skips conversations without complete manual rewrites") {
    std::vector<Conversation> dataset{make_conv(1, 2), make_conv(2, 2, false),
                                      make_conv(3, 2)};
    for (std::uint32_t seed = 0; seed < 50; ++seed)
        CHECK(select_example(dataset, 1, seed).conv_id == 3);
}

TEST_CASE("select_example errors when nothing is eligible") {
    std::vector<Conversation> dataset{make_conv(1, 2), make_conv(2, 2, false)};
    CHECK_THROWS_AS(select_example(dataset, 1, 13), DataError);
}

TEST_CASE("select_example draws roughly uniformly across seeds") {
    std::vector<Conversation> dataset;
    for (std::uint32_t id = 1; id <= 5; ++id) dataset.push_back(make_conv(id, 2));
    std::map<std::uint32_t, int> counts;
    const int draws = 1000;
    for (int seed = 0; seed < draws; ++seed) {
        const Conversation& pick = select_example(dataset, 1, static_cast<std::uint32_t>(seed));
        CHECK(pick.conv_id != 1);
        ++counts[pick.conv_id];
    }
    REQUIRE(counts.size() == 4);
    for (const auto& [id, n] : counts) {
        CAPTURE(id);
        CHECK(n >= 200);  // 250 per conversation +/- 20%
        CHECK(n <= 300);
    }
}

TEST_CASE("build_request produces the documented P5 layout") {
    Conversation example = make_conv(90, 2);
    std::vector<Turn> history{
        completed(31, 1, "What is throat cancer?", "What is throat cancer?"),
        completed(31, 2, "Is it treatable?", "Is throat cancer treatable?")};
    Turn current;
    current.conv_id = 31;
    current.turn_no = 3;
    current.raw = "Tell me about lung cancer.";

    RewriteRequest request =
        build_request(prompt_template(TemplateId::P5), example, history, current);

    REQUIRE(request.messages.size() == 10);
    CHECK(request.turn_key.str() == "31_3");
    CHECK(request.messages[0].role == Role::System);
    CHECK(request.messages[0].content.find(prompt_template(TemplateId::P5).scope_text) !=
          std::string::npos);
    // example block: raw as user, manual as assistant
    CHECK(request.messages[1].role == Role::User);
    CHECK(request.messages[1].content == "raw 90 1");
    CHECK(request.messages[2].role == Role::Assistant);
    CHECK(request.messages[2].content == "manual 90 1");
    // context block: raw as user, model rewrite as assistant
    CHECK(request.messages[5].content == "What is throat cancer?");
    CHECK(request.messages[8].content == "Is throat cancer treatable?");
    // final user message carries the instruction and the current utterance
    const ChatMessage& last = request.messages.back();
    CHECK(last.role == Role::User);
    CHECK(last.content.find(prompt_fixtures::kP5) != std::string::npos);
    CHECK(last.content.find("Tell me about lung cancer.") != std::string::npos);
}

TEST_CASE("P1 context carries rewrites together with answers") {
    Conversation example = make_conv(90, 1);
    std::vector<Turn> history{completed(31, 1, "What is throat cancer?",
                                        "What is throat cancer?",
                                        "It is a cancer of the pharynx or larynx.")};
    Turn current;
    current.conv_id = 31;
    current.turn_no = 2;
    current.raw = "Is it treatable?";

    RewriteRequest request =
        build_request(prompt_template(TemplateId::P1), example, history, current);
    // system + 2 example + 2 context + final
    REQUIRE(request.messages.size() == 6);
    const ChatMessage& assistant_context = request.messages[4];
    CHECK(assistant_context.role == Role::Assistant);
    CHECK(assistant_context.content.find("What is throat cancer?") != std::string::npos);
    CHECK(assistant_context.content.find("It is a cancer of the pharynx or larynx.") !=
          std::string::npos);
    // the final user message pins the answer delimiter
    CHECK(request.messages.back().content.find(kAnswerDirective) != std::string::npos);
}

TEST_CASE("P3 final user message quotes the current utterance") {
    Conversation example = make_conv(90, 1);
    std::vector<Turn> history{
        completed(31, 1, "What is throat cancer?", "What is throat cancer?")};
    Turn current;
    current.conv_id = 31;
    current.turn_no = 2;
    current.raw = "Is it treatable?";
    RewriteRequest request =
        build_request(prompt_template(TemplateId::P3), example, history, current);
    const std::string& content = request.messages.back().content;
    CHECK(content.find("more concise and context-free form") != std::string::npos);
    CHECK(content.find("Is it treatable?") != std::string::npos);
}

TEST_CASE("P4 embeds eight inline example pairs, wrapping short examples") {
    Conversation example = make_conv(90, 3);
    std::vector<Turn> history;
    Turn current;
    current.conv_id = 31;
    current.turn_no = 1;
    current.raw = "What is throat cancer?";
    RewriteRequest request =
        build_request(prompt_template(TemplateId::P4), example, history, current);
    const std::string& content = request.messages.back().content;
    std::size_t questions = 0, rewrittens = 0;
    for (std::size_t pos = 0; (pos = content.find("Question: ", pos)) != std::string::npos;
         pos += 10)
        ++questions;
    for (std::size_t pos = 0; (pos = content.find("Rewritten: ", pos)) != std::string::npos;
         pos += 11)
        ++rewrittens;
    CHECK(questions == kInlineExamplePairs);
    CHECK(rewrittens == kInlineExamplePairs);
    // wraps: the first example turn appears three times (ceil(8/3) cycles)
    std::size_t first_raw = 0;
    for (std::size_t pos = 0; (pos = content.find("raw 90 1", pos)) != std::string::npos;
         pos += 8)
        ++first_raw;
    CHECK(first_raw == 3);
}

TEST_CASE("build_request errors name the offending turn") {
    Conversation example = make_conv(90, 1);
    Turn current;
    current.conv_id = 31;
    current.turn_no = 3;
    current.raw = "Tell me about lung cancer.";

    SUBCASE("missing rewrite") {
        std::vector<Turn> history{
            completed(31, 1, "a", "a"),
            [] {
                Turn t;
                t.conv_id = 31;
                t.turn_no = 2;
                t.raw = "b";
                return t;  // no rewritten
            }()};
        try {
            build_request(prompt_template(TemplateId::P5), example, history, current);
            FAIL("expected an error");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("31_2") != std::string::npos);
        }
    }
    SUBCASE("missing answer under an answer template") {
        std::vector<Turn> history{completed(31, 1, "a", "a"),
                                  completed(31, 2, "b", "b rewritten")};
        try {
            build_request(prompt_template(TemplateId::P1), example, history, current);
            FAIL("expected an error");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("31_2") != std::string::npos);
        }
    }
    SUBCASE("example without manual rewrites") {
        Conversation bad_example = make_conv(90, 1, false);
        std::vector<Turn> history{completed(31, 1, "a", "a"),
                                  completed(31, 2, "b", "b")};
        CHECK_THROWS_AS(
            build_request(prompt_template(TemplateId::P5), bad_example, history, current),
            DataError);
    }
    SUBCASE("history length mismatch") {
        std::vector<Turn> history{completed(31, 1, "a", "a")};
        CHECK_THROWS_AS(
            build_request(prompt_template(TemplateId::P5), example, history, current),
            DataError);
    }
}

TEST_CASE("message-count law for templates without answers or inline examples") {
    for (TemplateId id : {TemplateId::P2, TemplateId::P3, TemplateId::P5}) {
        for (std::size_t m = 1; m <= 6; ++m) {
            for (std::size_t k = 0; k <= 6; ++k) {
                Conversation example = make_conv(90, m);
                std::vector<Turn> history;
                for (std::size_t i = 1; i <= k; ++i)
                    history.push_back(completed(31, static_cast<std::uint32_t>(i),
                                                 "q" + std::to_string(i),
                                                 "r" + std::to_string(i)));
                Turn current;
                current.conv_id = 31;
                current.turn_no = static_cast<std::uint32_t>(k + 1);
                current.raw = "current";
                RewriteRequest request =
                    build_request(prompt_template(id), example, history, current);
                CHECK(request.messages.size() == 2 * (m + k) + 2);
            }
        }
    }
}

TEST_CASE("role alternation and growing-prefix stability") {
    Conversation example = make_conv(90, 3);
    Conversation conv = make_conv(31, 5);
    CountingMock backend;
    CompletionParams params;
    std::vector<Turn> state;
    std::vector<std::vector<ChatMessage>> requests;
    for (const Turn& turn : conv.turns) {
        if (turn.turn_no > 1) {
            RewriteRequest request =
                build_request(prompt_template(TemplateId::P5), example, state, turn);
            requests.push_back(request.messages);
        }
        rewrite_turn(prompt_template(TemplateId::P5), example, state, turn, backend, params);
    }
    for (const auto& messages : requests) {
        CHECK(messages.front().role == Role::System);
        for (std::size_t i = 2; i < messages.size(); ++i)
            CHECK(messages[i].role != messages[i - 1].role);
    }
    for (std::size_t r = 1; r < requests.size(); ++r) {
        const auto& prev = requests[r - 1];
        const auto& next = requests[r];
        REQUIRE(next.size() >= prev.size());
        for (std::size_t i = 0; i + 1 < prev.size(); ++i) {
            CHECK(next[i].role == prev[i].role);
            CHECK(next[i].content == prev[i].content);
        }
    }
}

TEST_CASE("rewrite_turn passes the first turn through with no backend call") {
    Conversation example = make_conv(90, 1);
    CountingMock backend;
    CompletionParams params;
    std::vector<Turn> state;
    Turn first;
    first.conv_id = 31;
    first.turn_no = 1;
    first.raw = "What is throat cancer?";
    Turn done = rewrite_turn(prompt_template(TemplateId::P5), example, state, first,
                             backend, params);
    CHECK(done.rewritten == "What is throat cancer?");
    CHECK(backend.calls == 0);
    CHECK(state.size() == 1);
}

TEST_CASE("rewrite_turn maps later turns through the backend") {
    Conversation example = make_conv(90, 1);
    CountingMock backend({{"Is it treatable?", "Is throat cancer treatable?"}});
    CompletionParams params;
    std::vector<Turn> state{
        completed(31, 1, "What is throat cancer?", "What is throat cancer?")};
    Turn second;
    second.conv_id = 31;
    second.turn_no = 2;
    second.raw = "Is it treatable?";
    Turn done = rewrite_turn(prompt_template(TemplateId::P5), example, state, second,
                             backend, params);
    CHECK(done.rewritten == "Is throat cancer treatable?");
    CHECK(backend.calls == 1);
}

TEST_CASE("an n-turn conversation makes exactly n-1 backend calls") {
    Conversation example = make_conv(90, 2);
    for (std::size_t turns : {1u, 2u, 5u, 9u}) {
        Conversation conv = make_conv(31, turns);
        CountingMock backend;
        CompletionParams params;
        auto result = rewrite_conversation(prompt_template(TemplateId::P3), example, conv,
                                           backend, params);
        CHECK(backend.calls == turns - 1);
        CHECK(result.size() == turns);
        CHECK(result[0].rewritten == result[0].raw);
    }
}

TEST_CASE("backend failures are tagged with the turn key") {
    struct FailingBackend : ChatBackend {
        std::string complete(const std::vector<ChatMessage>&,
                             const CompletionParams&) override {
            throw BackendError("boom");
        }
        const char* name() const override { return "failing"; }
    } backend;
    Conversation example = make_conv(90, 1);
    Conversation conv = make_conv(31, 2);
    CompletionParams params;
    try {
        rewrite_conversation(prompt_template(TemplateId::P5), example, conv, backend,
                             params);
        FAIL("expected a backend error");
    } catch (const BackendError& e) {
        CHECK(std::string(e.what()).find("31_2") != std::string::npos);
    }
}

TEST_CASE("request transcripts are valid JSON with ordered messages") {
    Conversation example = make_conv(90, 1);
    std::vector<Turn> history{completed(31, 1, "a", "a")};
    Turn current;
    current.conv_id = 31;
    current.turn_no = 2;
    current.raw = "b";
    RewriteRequest request =
        build_request(prompt_template(TemplateId::P5), example, history, current);
    auto doc = nlohmann::json::parse(request_to_json(request));
    CHECK(doc.at("turn_key") == "31_2");
    CHECK(doc.at("template") == "P5");
    REQUIRE(doc.at("messages").size() == request.messages.size());
    CHECK(doc.at("messages")[0].at("role") == "system");
    CHECK(doc.at("messages")[doc.at("messages").size() - 1].at("role") == "user");
}

}  // TEST_SUITE
