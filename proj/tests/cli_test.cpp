#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>

#include <json.hpp>

#include "convo/util.hpp"
#include "test_util.hpp"

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
    std::string command = std::string(CONVO_CLI_BIN) + " " + args + " 2>&1";
    FILE* pipe = popen(command.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult result;
    char buffer[4096];
    std::size_t n;
    while ((n = fread(buffer, 1, sizeof(buffer), pipe)) > 0)
        result.output.append(buffer, n);
    int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::map<std::string, std::string> tsv_map(const std::string& path) {
    std::map<std::string, std::string> entries;
    for (const std::string& line : testutil::data_lines(path)) {
        auto tab = line.find('\t');
        REQUIRE(tab != std::string::npos);
        entries[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return entries;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("--help exits zero and documents defaults") {
    CliResult help = run_cli("--help");
    CHECK(help.exit_code == 0);
    CliResult search_help = run_cli("search --help");
    CHECK(search_help.exit_code == 0);
    CHECK(search_help.output.find("[default: 1000]") != std::string::npos);
    CHECK(search_help.output.find("[default: dph]") != std::string::npos);
}

TEST_CASE("unknown ranking model is a usage error") {
    CliResult result = run_cli("search --rank-model tfidf --queries q.tsv");
    CHECK(result.exit_code == 1);
}

TEST_CASE("missing input files are data errors") {
    CliResult result = run_cli("rewrite --topics /nonexistent/topics.json");
    CHECK(result.exit_code == 2);
}

TEST_CASE("http backend without the env key fails before any work") {
    unsetenv("CONVO_REWRITE_API_KEY");
    CliResult result = run_cli("rewrite --backend http --topics " +
                               testutil::data("topics_cast31.json"));
    CHECK(result.exit_code == 3);
    CHECK(result.output.find("CONVO_REWRITE_API_KEY") != std::string::npos);
}

TEST_CASE("rewrite with the mock fixture reproduces the manual column") {
    testutil::TempDir tmp;
    CliResult result = run_cli(
        "rewrite --topics " + testutil::data("topics_cast31.json") +
        " --backend mock --mock-fixture " + testutil::data("mock_rewrites_cast31.tsv") +
        " --template P5 --out " + tmp.file("rewrites"));
    CHECK(result.exit_code == 0);

    auto convs_rewrites = tsv_map(tmp.file("rewrites.tsv"));
    // first turns pass through, later turns equal the manual rewrites
    CHECK(convs_rewrites.at("31_1") == "What is throat cancer?");
    CHECK(convs_rewrites.at("31_2") == "Is throat cancer treatable?");
    CHECK(convs_rewrites.at("31_4") == "What are lung cancer's symptoms?");
    CHECK(convs_rewrites.at("31_9") ==
          "What's the difference in throat cancer and esophageal cancer's symptoms?");
    CHECK(convs_rewrites.at("32_2") == "How often do solar eclipses happen?");
    CHECK(convs_rewrites.size() == 11);
    // the artifact header echoes the resolved config
    std::string raw = testutil::slurp(tmp.file("rewrites.tsv"));
    CHECK(raw.find("# config_hash = ") != std::string::npos);
    CHECK(raw.find("# template = P5") != std::string::npos);
}

TEST_CASE("warm cache reruns are identical and hit zero backend calls") {
    testutil::TempDir tmp;
    std::string args =
        "rewrite --topics " + testutil::data("topics_cast31.json") +
        " --backend mock --mock-fixture " + testutil::data("mock_rewrites_cast31.tsv") +
        " --cache-dir " + tmp.file("cache") + " --out " + tmp.file("rewrites");
    CliResult first = run_cli(args);
    CHECK(first.exit_code == 0);
    // 9 + 2 turns, minus one first-turn passthrough per conversation
    CHECK(first.output.find("backend calls: 9") != std::string::npos);
    std::string first_bytes = testutil::slurp(tmp.file("rewrites.tsv"));

    CliResult second = run_cli(args);
    CHECK(second.exit_code == 0);
    CHECK(second.output.find("backend calls: 0") != std::string::npos);
    CHECK(testutil::slurp(tmp.file("rewrites.tsv")) == first_bytes);
}

TEST_CASE("P4 transcripts show the eight inline pairs") {
    testutil::TempDir tmp;
    CliResult result = run_cli(
        "rewrite --topics " + testutil::data("topics_cast31.json") +
        " --template P4 --dump-requests true --out " + tmp.file("p4"));
    CHECK(result.exit_code == 0);
    auto lines = testutil::data_lines(tmp.file("p4.requests.jsonl"));
    REQUIRE(!lines.empty());
    auto request = nlohmann::json::parse(lines[0]);
    std::string final_user = request.at("messages").back().at("content");
    std::size_t pairs = 0;
    for (std::size_t pos = 0; (pos = final_user.find("Question: ", pos)) != std::string::npos;
         pos += 10)
        ++pairs;
    CHECK(pairs == 8);
}

TEST_CASE("index and search reproduce the committed golden run") {
    testutil::TempDir tmp;
    CliResult indexed = run_cli("index --collection-path " +
                                testutil::data("collection_toy.tsv") + " --out " +
                                tmp.file("toy.bin"));
    CHECK(indexed.exit_code == 0);

    CliResult searched = run_cli(
        "search --index-path " + tmp.file("toy.bin") + " --queries " +
        testutil::data("golden/queries_toy.tsv") + " --k 10 --rank-model dph --tag dph" +
        " --out " + tmp.file("run.txt"));
    CHECK(searched.exit_code == 0);

    auto got = testutil::data_lines(tmp.file("run.txt"));
    auto want = testutil::data_lines(testutil::data("golden/run_toy_dph.txt"));
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        CAPTURE(i);
        CHECK(got[i] == want[i]);
    }
}

TEST_CASE("rerank with the external echo scorer preserves the golden order") {
    testutil::TempDir tmp;
    run_cli("index --collection-path " + testutil::data("collection_toy.tsv") + " --out " +
            tmp.file("toy.bin"));
    run_cli("search --index-path " + tmp.file("toy.bin") + " --queries " +
            testutil::data("golden/queries_toy.tsv") + " --out " + tmp.file("run.txt"));
    CliResult reranked = run_cli(
        "rerank --run " + tmp.file("run.txt") + " --collection " +
        testutil::data("collection_toy.tsv") + " --queries " +
        testutil::data("golden/queries_toy.tsv") +
        " --reranker external --external-command \"python3 " CONVO_ECHO_SCORER "\"" +
        " --out " + tmp.file("run_rr.txt"));
    CHECK(reranked.exit_code == 0);
    auto first = testutil::data_lines(tmp.file("run.txt"));
    auto second = testutil::data_lines(tmp.file("run_rr.txt"));
    REQUIRE(first.size() == second.size());
    // echoed scores keep the ordering and values; only the tag column changes
    auto drop_tag = [](const std::string& line) {
        return line.substr(0, line.rfind(' '));
    };
    for (std::size_t i = 0; i < first.size(); ++i) {
        CAPTURE(i);
        CHECK(drop_tag(first[i]) == drop_tag(second[i]));
    }
}

TEST_CASE("eval of a perfect run reports 1.0 everywhere") {
    testutil::TempDir tmp;
    testutil::spit(tmp.file("run.txt"), "1_1 Q0 A 1 2.000000 t\n1_1 Q0 B 2 1.000000 t\n");
    testutil::spit(tmp.file("qrels.txt"), "1_1 0 A 2\n1_1 0 B 1\n");
    CliResult result = run_cli("eval --run " + tmp.file("run.txt") + " --qrels " +
                               tmp.file("qrels.txt") + " --out " + tmp.file("eval"));
    CHECK(result.exit_code == 0);
    auto report = nlohmann::json::parse(testutil::slurp(tmp.file("eval.json")));
    for (const auto& [metric, mean] : report.at("means").items()) {
        CAPTURE(metric);
        CHECK(mean.get<double>() == 1.0);
    }
}

TEST_CASE("comparing a report with itself is never significant") {
    testutil::TempDir tmp;
    testutil::spit(tmp.file("run.txt"),
                   "1_1 Q0 A 1 2.000000 t\n2_1 Q0 B 1 2.000000 t\n3_1 Q0 C 1 2.000000 t\n");
    testutil::spit(tmp.file("qrels.txt"), "1_1 0 A 2\n2_1 0 B 1\n3_1 0 X 1\n");
    run_cli("eval --run " + tmp.file("run.txt") + " --qrels " + tmp.file("qrels.txt") +
            " --out " + tmp.file("eval"));
    CliResult result = run_cli("compare --report-a " + tmp.file("eval.json") +
                               " --report-b " + tmp.file("eval.json") + " --out " +
                               tmp.file("cmp"));
    CHECK(result.exit_code == 0);
    auto comparison = nlohmann::json::parse(testutil::slurp(tmp.file("cmp.json")));
    for (const auto& [metric, entry] : comparison.at("per_metric").items()) {
        CHECK(entry.at("decision") == "not_sig");
        CHECK(entry.at("relative_gain").get<double>() == 0.0);
    }
}

TEST_CASE("pipeline runs end to end, improves, and is bit-identical on rerun") {
    testutil::TempDir tmp;
    std::string args =
        "pipeline --topics " + testutil::data("topics_toy.json") +
        " --collection " + testutil::data("collection_toy.tsv") +
        " --qrels " + testutil::data("qrels_toy.txt") +
        " --mock-fixture " + testutil::data("mock_rewrites_toy.tsv") +
        " --backend mock --template P5 --out-dir " + tmp.file("out");
    CliResult first = run_cli(args);
    CHECK(first.exit_code == 0);

    namespace fs = std::filesystem;
    std::string dir;
    for (const auto& entry : fs::directory_iterator(tmp.file("out")))
        dir = entry.path().string();
    REQUIRE(!dir.empty());

    auto raw_report = nlohmann::json::parse(testutil::slurp(dir + "/eval_raw.json"));
    auto rewritten_report =
        nlohmann::json::parse(testutil::slurp(dir + "/eval_rewritten.json"));
    CHECK(rewritten_report.at("means").at("MRR").get<double>() >
          raw_report.at("means").at("MRR").get<double>());
    CHECK(rewritten_report.at("means").at("NDCG@3").get<double>() >
          raw_report.at("means").at("NDCG@3").get<double>());

    std::map<std::string, std::string> snapshot;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file())
            snapshot[entry.path().string()] = testutil::slurp(entry.path().string());

    CliResult second = run_cli(args);
    CHECK(second.exit_code == 0);
    std::size_t seen = 0;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) {
            ++seen;
            CAPTURE(entry.path().string());
            CHECK(testutil::slurp(entry.path().string()) ==
                  snapshot.at(entry.path().string()));
        }
    CHECK(seen == snapshot.size());
}

}  // TEST_SUITE
