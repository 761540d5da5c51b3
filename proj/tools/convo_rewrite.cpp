#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "convo/backend.hpp"
#include "convo/errors.hpp"
#include "convo/pipeline.hpp"
#include "convo/util.hpp"

namespace {

using convo::PipelineConfig;

struct CommonArgs {
    std::string config_file;
    std::map<std::string, std::string> overrides;  // config key -> CLI value
};

std::string with_default(const std::string& desc, const std::string& def) {
    if (def.empty()) return desc;
    return desc + " [default: " + def + "]";
}

// Registers one CLI flag per config key; flags override config-file entries,
// which override built-in defaults.
void add_config_options(CLI::App* cmd, CommonArgs& args) {
    static const PipelineConfig defaults;
    const auto def = convo::config_key_values(defaults);
    auto default_of = [&](const std::string& key) {
        for (const auto& [k, v] : def)
            if (k == key) return v;
        return std::string();
    };
    auto opt = [&](const std::string& flag, const std::string& key,
                   const std::string& desc) {
        return cmd->add_option_function<std::string>(
            flag,
            [&args, key](const std::string& value) { args.overrides[key] = value; },
            with_default(desc, default_of(key)));
    };

    cmd->add_option("--config", args.config_file, "config file of key = value lines");
    opt("--topics", "topics", "topic file");
    opt("--topics-format", "topics_format", "topic file format")
        ->check(CLI::IsMember({"cast-json", "tsv"}));
    opt("--manual-rewrites", "manual_rewrites", "sidecar manual rewrite file");
    opt("--collection", "collection", "passage collection (TSV file or directory)");
    opt("--index", "index_path", "prebuilt index file");
    opt("--template", "template", "prompt template")
        ->check(CLI::IsMember({"P1", "P2", "P3", "P4", "P5", "E"}));
    opt("--backend", "backend", "completion backend")
        ->check(CLI::IsMember({"mock", "http"}));
    opt("--mock-fixture", "mock_fixture", "mock raw->rewrite fixture file");
    opt("--endpoint", "endpoint", "chat-completions endpoint URL");
    opt("--model", "model", "model name");
    opt("--temperature", "temperature", "sampling temperature");
    opt("--max-output-tokens", "max_output_tokens", "completion token limit");
    opt("--timeout-seconds", "timeout_seconds", "per-request timeout");
    opt("--cache-dir", "cache_dir", "on-disk response cache directory");
    opt("--seed", "seed", "seed for example selection");
    opt("--workers", "workers", "parallel workers");
    opt("--e-answers-in-context", "e_answers_in_context",
        "feed template E answers back into context (true/false)");
    opt("--dump-requests", "dump_requests", "write a request transcript (true/false)");
    opt("--rank-model", "rank_model", "first-stage weighting model")
        ->check(CLI::IsMember({"dph", "bm25"}));
    opt("--k", "k_first", "first-stage depth");
    opt("--rerank", "rerank", "enable the second stage (true/false)");
    opt("--reranker", "reranker", "second-stage reranker")
        ->check(CLI::IsMember({"overlap", "first-stage", "external"}));
    opt("--external-command", "external_command", "external reranker command");
    opt("--stopwords", "stopwords", "stopword list override file");
    opt("--rel-threshold", "rel_threshold", "relevance grade threshold");
    opt("--p-cutoff", "p_cutoff", "precision cutoff");
    opt("--ndcg-cutoff", "ndcg_cutoff", "NDCG cutoff");
    opt("--r-cutoff", "r_cutoff", "recall cutoff");
    opt("--ndcg-gain", "ndcg_gain", "NDCG gain function")
        ->check(CLI::IsMember({"linear", "exponential"}));
    opt("--missing-topics", "missing_topics", "judged topics missing from the run")
        ->check(CLI::IsMember({"strict", "lenient"}));
    opt("--alpha", "alpha", "significance level");
    opt("-m,--m-comparisons", "m_comparisons", "Bonferroni comparison count");
    opt("--out-dir", "out_dir", "pipeline output directory");
}

PipelineConfig resolve_config(const CommonArgs& args) {
    PipelineConfig config;
    if (!args.config_file.empty()) config = convo::load_config_file(args.config_file);
    for (const auto& [key, value] : args.overrides)
        convo::apply_config_entry(config, key, value);
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "conversational utterance rewriting and two-stage retrieval evaluation\n"
        "HTTP backend credentials come from the " +
        std::string(convo::kApiKeyEnvVar) + " environment variable."};
    app.require_subcommand(1);

    CommonArgs rewrite_args, index_args, search_args, rerank_args, eval_args,
        compare_args, pipeline_args;

    auto* rewrite = app.add_subcommand("rewrite", "rewrite conversation utterances");
    add_config_options(rewrite, rewrite_args);
    std::string rewrite_out = "rewrites";
    rewrite->add_option("--out", rewrite_out, "output prefix [default: rewrites]");

    auto* index_cmd = app.add_subcommand("index", "build an inverted index");
    add_config_options(index_cmd, index_args);
    std::string index_collection, index_out = "index.bin";
    index_cmd->add_option("--collection-path", index_collection,
                          "collection to index (falls back to --collection)");
    index_cmd->add_option("--out", index_out, "index output file [default: index.bin]");

    auto* search_cmd = app.add_subcommand("search", "first-stage retrieval");
    add_config_options(search_cmd, search_args);
    std::string search_index, search_queries, search_out = "run.txt", search_tag;
    search_cmd->add_option("--index-path", search_index,
                           "index file (falls back to --index)");
    search_cmd->add_option("--queries", search_queries, "qid\\tquery file")->required();
    search_cmd->add_option("--out", search_out, "run output file [default: run.txt]");
    search_cmd->add_option("--tag", search_tag, "run tag [default: the ranking model]");

    auto* rerank_cmd = app.add_subcommand("rerank", "second-stage reranking");
    add_config_options(rerank_cmd, rerank_args);
    std::string rerank_run, rerank_queries, rerank_out = "run_rr.txt";
    rerank_cmd->add_option("--run", rerank_run, "first-stage run file")->required();
    rerank_cmd->add_option("--queries", rerank_queries, "qid\\tquery file")->required();
    rerank_cmd->add_option("--out", rerank_out, "run output file [default: run_rr.txt]");

    auto* eval_cmd = app.add_subcommand("eval", "score a run against qrels");
    add_config_options(eval_cmd, eval_args);
    std::string eval_run, eval_qrels, eval_out = "eval";
    eval_cmd->add_option("--run", eval_run, "run file")->required();
    eval_cmd->add_option("--qrels", eval_qrels, "qrels file")->required();
    eval_cmd->add_option("--out", eval_out, "report output prefix [default: eval]");

    auto* compare_cmd = app.add_subcommand("compare", "significance-test two reports");
    add_config_options(compare_cmd, compare_args);
    std::string compare_a, compare_b, compare_out = "compare";
    compare_cmd->add_option("--report-a", compare_a, "metric report JSON (system A)")
        ->required();
    compare_cmd->add_option("--report-b", compare_b, "metric report JSON (system B)")
        ->required();
    compare_cmd->add_option("--out", compare_out, "output prefix [default: compare]");

    auto* pipeline_cmd = app.add_subcommand("pipeline", "run the whole pipeline");
    add_config_options(pipeline_cmd, pipeline_args);
    std::string pipeline_qrels;
    pipeline_cmd->add_option("--qrels", pipeline_qrels, "qrels file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(rewrite)) {
            auto config = resolve_config(rewrite_args);
            auto artifacts = convo::cmd_rewrite(config, rewrite_out);
            std::cout << "rewrites: " << artifacts.rewrites_path << "\n";
            if (!artifacts.answers_path.empty())
                std::cout << "answers: " << artifacts.answers_path << "\n";
            if (!artifacts.transcript_path.empty())
                std::cout << "requests: " << artifacts.transcript_path << "\n";
            std::cout << "backend calls: " << artifacts.backend_calls << "\n";
        } else if (app.got_subcommand(index_cmd)) {
            auto config = resolve_config(index_args);
            if (index_collection.empty()) index_collection = config.collection;
            if (index_collection.empty())
                throw convo::DataError("no collection given (--collection-path)");
            convo::cmd_index(config, index_collection, index_out);
            std::cout << "index: " << index_out << "\n";
        } else if (app.got_subcommand(search_cmd)) {
            auto config = resolve_config(search_args);
            if (search_index.empty()) search_index = config.index_path;
            if (search_index.empty())
                throw convo::DataError("no index given (--index-path)");
            if (search_tag.empty()) search_tag = config.rank_model;
            convo::cmd_search(config, search_index, search_queries, search_out, search_tag);
            std::cout << "run: " << search_out << "\n";
        } else if (app.got_subcommand(rerank_cmd)) {
            auto config = resolve_config(rerank_args);
            if (config.collection.empty())
                throw convo::DataError("no collection configured (--collection)");
            convo::cmd_rerank(config, rerank_run, config.collection, rerank_queries,
                              rerank_out);
            std::cout << "run: " << rerank_out << "\n";
        } else if (app.got_subcommand(eval_cmd)) {
            auto config = resolve_config(eval_args);
            convo::cmd_eval(config, eval_run, eval_qrels, eval_out);
            std::cout << convo::read_file(eval_out + ".txt");
        } else if (app.got_subcommand(compare_cmd)) {
            auto config = resolve_config(compare_args);
            convo::cmd_compare(config, compare_a, compare_b, compare_out);
            std::cout << convo::read_file(compare_out + ".txt");
        } else if (app.got_subcommand(pipeline_cmd)) {
            auto config = resolve_config(pipeline_args);
            auto artifacts = convo::cmd_pipeline(config, pipeline_qrels);
            std::cout << "artifacts: " << artifacts.dir << "\n";
            std::cout << "backend calls: " << artifacts.backend_calls << "\n";
            std::cout << convo::read_file(artifacts.dir + "/compare.txt");
        }
    } catch (const convo::BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return 3;
    } catch (const convo::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
