#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "convo/eval.hpp"
#include "convo/stats.hpp"

namespace convo {

// Every knob of the toolkit, file-loadable as "key = value" lines with
// CLI-flag override precedence. The resolved listing is echoed into the
// header of every artifact and hashed to name pipeline output directories.
struct PipelineConfig {
    // data
    std::string topics;
    std::string topics_format = "cast-json";  // cast-json | tsv
    std::string manual_rewrites;              // optional sidecar
    std::string collection;
    std::string index_path;  // reuse a prebuilt index instead of building
    // rewriting
    std::string template_id = "P5";
    std::string backend = "mock";  // mock | http
    std::string mock_fixture;
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-3.5-turbo";
    double temperature = 0.0;
    int max_output_tokens = 256;
    double timeout_seconds = 30.0;
    std::string cache_dir;  // empty disables the on-disk response cache
    std::uint32_t seed = 13;
    int workers = 4;
    bool e_answers_in_context = true;
    bool dump_requests = false;
    // retrieval
    std::string rank_model = "dph";  // dph | bm25
    int k_first = 1000;
    bool rerank = true;
    std::string reranker = "overlap";  // overlap | first-stage | external
    std::string external_command;
    std::string stopwords;  // custom stopword file, empty = bundled list
    // evaluation
    int rel_threshold = 1;
    int p_cutoff = 1;
    int ndcg_cutoff = 3;
    int r_cutoff = 500;
    std::string ndcg_gain = "linear";       // linear | exponential
    std::string missing_topics = "strict";  // strict | lenient
    // statistics
    double alpha = 0.05;
    int m_comparisons = 1;
    // output
    std::string out_dir = "out";
};

std::vector<std::pair<std::string, std::string>> config_key_values(const PipelineConfig& config);
std::string config_echo(const PipelineConfig& config);
std::string config_hash(const PipelineConfig& config);  // first 12 hex of sha256

void apply_config_entry(PipelineConfig& config, const std::string& key,
                        const std::string& value);
PipelineConfig load_config_file(const std::string& path, PipelineConfig base = {});

EvalConfig eval_config_of(const PipelineConfig& config);

struct RewriteArtifacts {
    std::string rewrites_path;
    std::string answers_path;     // set only for templates that produce answers
    std::string transcript_path;  // set only with dump_requests
    std::size_t backend_calls = 0;
};

// out_prefix names the artifacts: <prefix>.tsv, <prefix>.answers.tsv,
// <prefix>.requests.jsonl.
RewriteArtifacts cmd_rewrite(const PipelineConfig& config, const std::string& out_prefix);

void cmd_index(const PipelineConfig& config, const std::string& collection,
               const std::string& out_path);

void cmd_search(const PipelineConfig& config, const std::string& index_path,
                const std::string& queries_path, const std::string& out_path,
                const std::string& tag);

void cmd_rerank(const PipelineConfig& config, const std::string& run_path,
                const std::string& collection, const std::string& queries_path,
                const std::string& out_path);

MetricReport cmd_eval(const PipelineConfig& config, const std::string& run_path,
                      const std::string& qrels_path, const std::string& out_prefix);

SignificanceReport cmd_compare(const PipelineConfig& config, const std::string& report_a,
                               const std::string& report_b, const std::string& out_prefix);

struct PipelineArtifacts {
    std::string dir;  // <out_dir>/<config hash>
    std::string run_raw;
    std::string run_rewritten;
    std::string eval_raw_json;
    std::string eval_rewritten_json;
    std::string compare_json;
    MetricReport report_raw;
    MetricReport report_rewritten;
    std::size_t backend_calls = 0;
};

// End to end: rewrite, index, search raw and rewritten queries, optionally
// rerank, evaluate both runs against qrels, compare. Deterministic under the
// mock backend and a fixed seed.
PipelineArtifacts cmd_pipeline(const PipelineConfig& config, const std::string& qrels_path);

}  // namespace convo
