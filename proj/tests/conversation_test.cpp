#include <doctest.h>

#include "convo/conversation.hpp"
#include "convo/errors.hpp"
#include "test_util.hpp"

using namespace convo;

namespace {

bool structurally_equal(const std::vector<Conversation>& a,
                        const std::vector<Conversation>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].conv_id != b[i].conv_id) return false;
        if (a[i].turns.size() != b[i].turns.size()) return false;
        for (std::size_t t = 0; t < a[i].turns.size(); ++t) {
            const Turn& x = a[i].turns[t];
            const Turn& y = b[i].turns[t];
            if (x.conv_id != y.conv_id || x.turn_no != y.turn_no || x.raw != y.raw ||
                x.manual != y.manual)
                return false;
        }
    }
    return true;
}

}  // namespace

TEST_SUITE("conversation") {

TEST_CASE("parse_turn_key accepts well-formed keys") {
    CHECK(parse_turn_key("31_4") == TurnKey{31, 4});
    CHECK(parse_turn_key("1_1") == TurnKey{1, 1});
    CHECK(parse_turn_key("104_12") == TurnKey{104, 12});
}

TEST_CASE("parse_turn_key rejects malformed keys") {
    for (const char* bad : {"31-4", "a_1", "1_", "_1", "", "1__2", "0_1", "1_0",
                            "1.5_2", "99999999999999999999_1"}) {
        CAPTURE(bad);
        CHECK_THROWS_AS(parse_turn_key(bad), ParseError);
    }
    // the error names the offending string
    try {
        parse_turn_key("31-4");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("31-4") != std::string::npos);
    }
}

TEST_CASE("turn keys round-trip through formatting") {
    for (std::uint32_t conv : {1u, 31u, 12345u})
        for (std::uint32_t turn : {1u, 9u, 400u}) {
            TurnKey key{conv, turn};
            CHECK(parse_turn_key(key.str()) == key);
        }
}

TEST_CASE("load_topics reads the CAsT-style JSON fixture") {
    auto convs = load_topics(testutil::data("topics_cast31.json"), TopicFormat::CastJson);
    REQUIRE(convs.size() == 2);
    CHECK(convs[0].conv_id == 31);
    CHECK(convs[0].turns.size() == 9);
    CHECK(convs[0].turns[0].raw == "What is throat cancer?");
    CHECK(convs[0].turns[0].manual == "What is throat cancer?");
    CHECK(convs[0].turns[1].raw == "Is it treatable?");
    CHECK(convs[0].turns[1].manual == "Is throat cancer treatable?");
    CHECK(convs[1].conv_id == 32);  // file order preserved
    CHECK(convs[0].has_all_manuals());
}

TEST_CASE("load_topics on an empty array yields an empty list") {
    testutil::TempDir tmp;
    testutil::spit(tmp.file("empty.json"), "[]\n");
    CHECK(load_topics(tmp.file("empty.json"), TopicFormat::CastJson).empty());
}

TEST_CASE("topics round-trip through both formats") {
    auto convs = load_topics(testutil::data("topics_cast31.json"), TopicFormat::CastJson);
    testutil::TempDir tmp;

    save_topics(convs, tmp.file("out.json"), TopicFormat::CastJson);
    auto reloaded = load_topics(tmp.file("out.json"), TopicFormat::CastJson);
    CHECK(structurally_equal(convs, reloaded));

    save_topics(convs, tmp.file("out.tsv"), TopicFormat::Tsv);
    auto reloaded_tsv = load_topics(tmp.file("out.tsv"), TopicFormat::Tsv);
    CHECK(structurally_equal(convs, reloaded_tsv));
}

TEST_CASE("load_topics errors carry the conversation id") {
    testutil::TempDir tmp;

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_topics(tmp.file("nope.json"), TopicFormat::CastJson),
                        DataError);
    }
    SUBCASE("duplicate turn number") {
        testutil::spit(tmp.file("dup.json"),
                       R"([{"number": 7, "turns": [
                            {"number": 1, "raw_utterance": "a"},
                            {"number": 1, "raw_utterance": "b"}]}])");
        try {
            load_topics(tmp.file("dup.json"), TopicFormat::CastJson);
            FAIL("expected an error");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("7") != std::string::npos);
        }
    }
    SUBCASE("gap in turn numbering") {
        testutil::spit(tmp.file("gap.json"),
                       R"([{"number": 9, "turns": [
                            {"number": 1, "raw_utterance": "a"},
                            {"number": 3, "raw_utterance": "b"}]}])");
        try {
            load_topics(tmp.file("gap.json"), TopicFormat::CastJson);
            FAIL("expected an error");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("9") != std::string::npos);
        }
    }
    SUBCASE("duplicate conversation") {
        testutil::spit(tmp.file("dupconv.json"),
                       R"([{"number": 4, "turns": [{"number": 1, "raw_utterance": "a"}]},
                           {"number": 4, "turns": [{"number": 1, "raw_utterance": "b"}]}])");
        CHECK_THROWS_AS(load_topics(tmp.file("dupconv.json"), TopicFormat::CastJson),
                        DataError);
    }
    SUBCASE("empty raw utterance") {
        testutil::spit(tmp.file("blank.json"),
                       R"([{"number": 5, "turns": [{"number": 1, "raw_utterance": "  "}]}])");
        CHECK_THROWS_AS(load_topics(tmp.file("blank.json"), TopicFormat::CastJson),
                        DataError);
    }
}

TEST_CASE("raw text is trimmed but otherwise preserved") {
    testutil::TempDir tmp;
    testutil::spit(tmp.file("trim.json"),
                   R"([{"number": 2, "turns": [
                        {"number": 1, "raw_utterance": "  What IS it?!  "}]}])");
    auto convs = load_topics(tmp.file("trim.json"), TopicFormat::CastJson);
    CHECK(convs[0].turns[0].raw == "What IS it?!");
}

TEST_CASE("first-turn rewrite must equal the raw utterance") {
    Conversation conv;
    conv.conv_id = 3;
    Turn turn;
    turn.conv_id = 3;
    turn.turn_no = 1;
    turn.raw = "What is throat cancer?";
    turn.rewritten = "Something else";
    conv.turns.push_back(turn);
    CHECK_THROWS_AS(validate_conversation(conv), DataError);
    conv.turns[0].rewritten = conv.turns[0].raw;
    CHECK_NOTHROW(validate_conversation(conv));
}

TEST_CASE("load_manual_rewrites") {
    testutil::TempDir tmp;

    SUBCASE("single entry") {
        testutil::spit(tmp.file("m.tsv"), "31_2\tIs throat cancer treatable?\n");
        auto rewrites = load_manual_rewrites(tmp.file("m.tsv"));
        REQUIRE(rewrites.size() == 1);
        CHECK(rewrites.at("31_2") == "Is throat cancer treatable?");
    }
    SUBCASE("empty file") {
        testutil::spit(tmp.file("m.tsv"), "");
        CHECK(load_manual_rewrites(tmp.file("m.tsv")).empty());
    }
    SUBCASE("duplicate key") {
        testutil::spit(tmp.file("m.tsv"), "31_2\ta\n31_2\tb\n");
        CHECK_THROWS_AS(load_manual_rewrites(tmp.file("m.tsv")), DataError);
    }
    SUBCASE("malformed line") {
        testutil::spit(tmp.file("m.tsv"), "31_2 no tab here\n");
        CHECK_THROWS_AS(load_manual_rewrites(tmp.file("m.tsv")), ParseError);
    }
    SUBCASE("malformed key") {
        testutil::spit(tmp.file("m.tsv"), "31-2\ttext\n");
        CHECK_THROWS_AS(load_manual_rewrites(tmp.file("m.tsv")), ParseError);
    }
}

TEST_CASE("sidecar rewrites win over inline manual utterances") {
    auto convs = load_topics(testutil::data("topics_cast31.json"), TopicFormat::CastJson);
    std::map<std::string, std::string> sidecar{{"31_2", "Override rewrite"}};
    apply_manual_rewrites(convs, sidecar);
    CHECK(convs[0].turns[1].manual == "Override rewrite");
    CHECK(convs[0].turns[2].manual == "Tell me about lung cancer.");  // untouched
}

}  // TEST_SUITE
