#include "convo/pipeline.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "convo/backend.hpp"
#include "convo/conversation.hpp"
#include "convo/errors.hpp"
#include "convo/index.hpp"
#include "convo/rerank.hpp"
#include "convo/rewriter.hpp"
#include "convo/util.hpp"

namespace convo {

namespace {

std::string format_double(double value) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", value);
    return buf;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> config_key_values(
    const PipelineConfig& c) {
    auto b = [](bool v) { return v ? std::string("true") : std::string("false"); };
    return {
        {"topics", c.topics},
        {"topics_format", c.topics_format},
        {"manual_rewrites", c.manual_rewrites},
        {"collection", c.collection},
        {"index_path", c.index_path},
        {"template", c.template_id},
        {"backend", c.backend},
        {"mock_fixture", c.mock_fixture},
        {"endpoint", c.endpoint},
        {"model", c.model},
        {"temperature", format_double(c.temperature)},
        {"max_output_tokens", std::to_string(c.max_output_tokens)},
        {"timeout_seconds", format_double(c.timeout_seconds)},
        {"cache_dir", c.cache_dir},
        {"seed", std::to_string(c.seed)},
        {"workers", std::to_string(c.workers)},
        {"e_answers_in_context", b(c.e_answers_in_context)},
        {"dump_requests", b(c.dump_requests)},
        {"rank_model", c.rank_model},
        {"k_first", std::to_string(c.k_first)},
        {"rerank", b(c.rerank)},
        {"reranker", c.reranker},
        {"external_command", c.external_command},
        {"stopwords", c.stopwords},
        {"rel_threshold", std::to_string(c.rel_threshold)},
        {"p_cutoff", std::to_string(c.p_cutoff)},
        {"ndcg_cutoff", std::to_string(c.ndcg_cutoff)},
        {"r_cutoff", std::to_string(c.r_cutoff)},
        {"ndcg_gain", c.ndcg_gain},
        {"missing_topics", c.missing_topics},
        {"alpha", format_double(c.alpha)},
        {"m_comparisons", std::to_string(c.m_comparisons)},
        {"out_dir", c.out_dir},
    };
}

std::string config_echo(const PipelineConfig& config) {
    std::string out;
    for (const auto& [key, value] : config_key_values(config))
        out += key + " = " + value + "\n";
    return out;
}

std::string config_hash(const PipelineConfig& config) {
    return sha256_hex(config_echo(config)).substr(0, 12);
}

void apply_config_entry(PipelineConfig& c, const std::string& key,
                        const std::string& value) {
    auto to_bool = [&](const std::string& v) {
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw DataError("config key " + key + ": expected a boolean, got \"" + v + "\"");
    };
    auto to_int = [&](const std::string& v) {
        try {
            return std::stoi(v);
        } catch (const std::exception&) {
            throw DataError("config key " + key + ": expected an integer, got \"" + v + "\"");
        }
    };
    auto to_double = [&](const std::string& v) {
        try {
            return std::stod(v);
        } catch (const std::exception&) {
            throw DataError("config key " + key + ": expected a number, got \"" + v + "\"");
        }
    };

    if (key == "topics") c.topics = value;
    else if (key == "topics_format") c.topics_format = value;
    else if (key == "manual_rewrites") c.manual_rewrites = value;
    else if (key == "collection") c.collection = value;
    else if (key == "index_path") c.index_path = value;
    else if (key == "template") c.template_id = value;
    else if (key == "backend") c.backend = value;
    else if (key == "mock_fixture") c.mock_fixture = value;
    else if (key == "endpoint") c.endpoint = value;
    else if (key == "model") c.model = value;
    else if (key == "temperature") c.temperature = to_double(value);
    else if (key == "max_output_tokens") c.max_output_tokens = to_int(value);
    else if (key == "timeout_seconds") c.timeout_seconds = to_double(value);
    else if (key == "cache_dir") c.cache_dir = value;
    else if (key == "seed") c.seed = static_cast<std::uint32_t>(to_int(value));
    else if (key == "workers") c.workers = to_int(value);
    else if (key == "e_answers_in_context") c.e_answers_in_context = to_bool(value);
    else if (key == "dump_requests") c.dump_requests = to_bool(value);
    else if (key == "rank_model") c.rank_model = value;
    else if (key == "k_first") c.k_first = to_int(value);
    else if (key == "rerank") c.rerank = to_bool(value);
    else if (key == "reranker") c.reranker = value;
    else if (key == "external_command") c.external_command = value;
    else if (key == "stopwords") c.stopwords = value;
    else if (key == "rel_threshold") c.rel_threshold = to_int(value);
    else if (key == "p_cutoff") c.p_cutoff = to_int(value);
    else if (key == "ndcg_cutoff") c.ndcg_cutoff = to_int(value);
    else if (key == "r_cutoff") c.r_cutoff = to_int(value);
    else if (key == "ndcg_gain") c.ndcg_gain = value;
    else if (key == "missing_topics") c.missing_topics = value;
    else if (key == "alpha") c.alpha = to_double(value);
    else if (key == "m_comparisons") c.m_comparisons = to_int(value);
    else if (key == "out_dir") c.out_dir = value;
    else throw DataError("unknown config key: " + key);
}

PipelineConfig load_config_file(const std::string& path, PipelineConfig base) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ParseError("config file " + path + " line " + std::to_string(lineno) +
                             ": expected \"key = value\"");
        apply_config_entry(base, trim(stripped.substr(0, eq)),
                           trim(stripped.substr(eq + 1)));
    }
    return base;
}

EvalConfig eval_config_of(const PipelineConfig& config) {
    EvalConfig out;
    out.rel_threshold = config.rel_threshold;
    out.p_cutoff = config.p_cutoff;
    out.ndcg_cutoff = config.ndcg_cutoff;
    out.r_cutoff = config.r_cutoff;
    if (config.ndcg_gain != "linear" && config.ndcg_gain != "exponential")
        throw DataError("ndcg_gain must be linear or exponential");
    out.exponential_gain = config.ndcg_gain == "exponential";
    if (config.missing_topics != "strict" && config.missing_topics != "lenient")
        throw DataError("missing_topics must be strict or lenient");
    out.lenient_missing = config.missing_topics == "lenient";
    return out;
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> artifact_header(const PipelineConfig& config,
                                         std::vector<std::pair<std::string, std::string>>
                                             extras = {}) {
    std::vector<std::string> lines;
    lines.push_back("config_hash = " + config_hash(config));
    for (const auto& [key, value] : extras) lines.push_back(key + " = " + value);
    for (const auto& [key, value] : config_key_values(config))
        lines.push_back(key + " = " + value);
    return lines;
}

Analyzer make_analyzer(const PipelineConfig& config) {
    if (config.stopwords.empty()) return Analyzer();
    return Analyzer::with_stopword_file(config.stopwords);
}

class CountingBackend : public ChatBackend {
public:
    explicit CountingBackend(ChatBackend& inner) : inner_(inner) {}
    std::string complete(const std::vector<ChatMessage>& messages,
                         const CompletionParams& params) override {
        calls_.fetch_add(1, std::memory_order_relaxed);
        return inner_.complete(messages, params);
    }
    const char* name() const override { return inner_.name(); }
    std::size_t calls() const { return calls_.load(); }

private:
    ChatBackend& inner_;
    std::atomic<std::size_t> calls_{0};
};

struct BackendStack {
    std::unique_ptr<ChatBackend> base;
    std::unique_ptr<CountingBackend> counter;
    std::unique_ptr<ChatBackend> cached;

    ChatBackend& top() { return cached ? *cached : *counter; }
    std::size_t calls() const { return counter->calls(); }
};

BackendStack make_backend(const PipelineConfig& config) {
    BackendStack stack;
    if (config.backend == "mock") {
        stack.base = std::make_unique<MockBackend>(
            config.mock_fixture.empty() ? MockBackend()
                                        : MockBackend::from_file(config.mock_fixture));
    } else if (config.backend == "http") {
        stack.base = std::make_unique<HttpBackend>(HttpBackend::from_env(config.endpoint));
    } else {
        throw DataError("unknown backend: " + config.backend);
    }
    stack.counter = std::make_unique<CountingBackend>(*stack.base);
    if (!config.cache_dir.empty())
        stack.cached = std::make_unique<CachedBackend>(*stack.counter,
                                                       ResponseCache(config.cache_dir));
    return stack;
}

CompletionParams completion_params(const PipelineConfig& config) {
    CompletionParams params;
    params.model_name = config.model;
    params.temperature = config.temperature;
    params.max_output_tokens = config.max_output_tokens;
    params.timeout = std::chrono::milliseconds(
        static_cast<std::int64_t>(config.timeout_seconds * 1000.0));
    validate_params(params);
    return params;
}

// Runs fn(i) for i in [0, n) on up to `workers` threads; the first exception
// wins and is rethrown on the caller.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t thread_count =
        std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (thread_count == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    std::vector<std::thread> pool;
    pool.reserve(thread_count);
    for (std::size_t t = 0; t < thread_count; ++t) {
        pool.emplace_back([&] {
            while (true) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (error) return;
                }
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

std::vector<Conversation> load_dataset(const PipelineConfig& config) {
    if (config.topics.empty()) throw DataError("no topics file configured");
    std::vector<Conversation> dataset =
        load_topics(config.topics, topic_format_from_name(config.topics_format));
    if (!config.manual_rewrites.empty())
        apply_manual_rewrites(dataset, load_manual_rewrites(config.manual_rewrites));
    return dataset;
}

InvertedIndex obtain_index(const PipelineConfig& config, const Analyzer& analyzer) {
    if (!config.index_path.empty()) return load_index(config.index_path);
    if (config.collection.empty())
        throw DataError("neither index_path nor collection configured");
    return build_index_from_collection(config.collection, analyzer,
                                       "stopwords=" + std::string(kStopwordsVersion));
}

Run search_queries(const PipelineConfig& config, const InvertedIndex& index,
                   const Analyzer& analyzer,
                   const std::vector<std::pair<std::string, std::string>>& queries,
                   const std::string& tag) {
    if (config.k_first < 1) throw DataError("k_first must be at least 1");
    const RankModel model = rank_model_from_name(config.rank_model);
    std::vector<std::vector<ScoredDoc>> results(queries.size());
    parallel_for(queries.size(), config.workers, [&](std::size_t i) {
        results[i] = search(index, queries[i].second,
                            static_cast<std::size_t>(config.k_first), model, analyzer);
    });
    Run run;
    run.tag = tag;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (results[i].empty()) continue;
        auto& entries = run.entries[queries[i].first];
        for (const ScoredDoc& doc : results[i])
            entries.push_back({doc.docno, doc.rank, doc.score});
    }
    return run;
}

std::unique_ptr<Reranker> make_candidate_reranker(const PipelineConfig& config,
                                                  const Analyzer& analyzer) {
    if (config.reranker == "overlap") return std::make_unique<OverlapReranker>(analyzer);
    if (config.reranker == "first-stage") return std::make_unique<FirstStageReranker>();
    if (config.reranker == "external") return nullptr;  // batch path
    throw DataError("unknown reranker: " + config.reranker);
}

Run rerank_run(const PipelineConfig& config, const Run& first_stage,
               const std::unordered_map<std::string, std::string>& texts,
               const std::unordered_map<std::string, std::string>& queries,
               const Analyzer& analyzer) {
    std::unique_ptr<Reranker> reranker = make_candidate_reranker(config, analyzer);
    if (!reranker && config.external_command.empty())
        throw DataError("external reranker selected but no external_command configured");

    std::vector<const std::string*> qids;
    std::vector<const std::vector<RunEntry>*> entry_lists;
    for (const auto& [qid, entries] : first_stage.entries) {
        qids.push_back(&qid);
        entry_lists.push_back(&entries);
    }
    std::vector<std::vector<ScoredDoc>> reranked(qids.size());
    parallel_for(qids.size(), config.workers, [&](std::size_t i) {
        const std::string& qid = *qids[i];
        auto qit = queries.find(qid);
        if (qit == queries.end())
            throw DataError("no query text for run topic " + qid);
        RerankInput input;
        input.qid = qid;
        input.query_text = qit->second;
        const auto& entries = *entry_lists[i];
        std::size_t depth = std::min(entries.size(), kMaxRerankCandidates);
        if (entries.size() > kMaxRerankCandidates)
            warn("topic " + qid + ": truncating rerank candidates to " +
                 std::to_string(kMaxRerankCandidates));
        input.candidates.reserve(depth);
        for (std::size_t e = 0; e < depth; ++e) {
            auto tit = texts.find(entries[e].docno);
            if (tit == texts.end())
                throw DataError("docno " + entries[e].docno +
                                " from the run is missing from the collection");
            input.candidates.push_back({entries[e].docno, entries[e].score, tit->second});
        }
        reranked[i] = reranker
                          ? rerank(input, *reranker)
                          : rerank_external(input, {config.external_command});
    });

    Run out;
    out.tag = first_stage.tag + "-rr";
    for (std::size_t i = 0; i < qids.size(); ++i) {
        auto& entries = out.entries[*qids[i]];
        for (const ScoredDoc& doc : reranked[i])
            entries.push_back({doc.docno, doc.rank, doc.score});
    }
    return out;
}

std::unordered_map<std::string, std::string> collection_texts(const std::string& path) {
    std::unordered_map<std::string, std::string> texts;
    for (Passage& passage : read_collection_tsv(path))
        texts.emplace(std::move(passage.docno), std::move(passage.text));
    return texts;
}

struct RewriteOutput {
    std::vector<Turn> turns;       // all conversations, input order
    std::vector<std::string> transcript;
    bool has_answers = false;
};

RewriteOutput rewrite_dataset(const PipelineConfig& config,
                              const std::vector<Conversation>& dataset,
                              ChatBackend& backend) {
    const PromptTemplate& tmpl = prompt_template(template_from_name(config.template_id));
    const CompletionParams params = completion_params(config);
    EngineOptions opts;
    opts.example_seed = config.seed;
    opts.e_answers_in_context = config.e_answers_in_context;

    std::vector<std::vector<Turn>> turns(dataset.size());
    std::vector<std::vector<std::string>> transcripts(dataset.size());
    parallel_for(dataset.size(), config.workers, [&](std::size_t i) {
        const Conversation& example =
            select_example(dataset, dataset[i].conv_id, config.seed);
        turns[i] = rewrite_conversation(tmpl, example, dataset[i], backend, params, opts,
                                        config.dump_requests ? &transcripts[i] : nullptr);
    });

    RewriteOutput out;
    out.has_answers = tmpl.uses_answers;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        out.turns.insert(out.turns.end(), turns[i].begin(), turns[i].end());
        out.transcript.insert(out.transcript.end(), transcripts[i].begin(),
                              transcripts[i].end());
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

RewriteArtifacts cmd_rewrite(const PipelineConfig& config, const std::string& out_prefix) {
    BackendStack backend = make_backend(config);  // fail fast on a missing API key
    std::vector<Conversation> dataset = load_dataset(config);
    RewriteOutput output = rewrite_dataset(config, dataset, backend.top());

    RewriteArtifacts artifacts;
    artifacts.backend_calls = backend.calls();
    const std::vector<std::string> header = artifact_header(config);

    artifacts.rewrites_path = out_prefix + ".tsv";
    write_rewrites_file(output.turns, artifacts.rewrites_path, header);
    if (output.has_answers) {
        artifacts.answers_path = out_prefix + ".answers.tsv";
        write_answers_file(output.turns, artifacts.answers_path, header);
    }
    if (config.dump_requests) {
        artifacts.transcript_path = out_prefix + ".requests.jsonl";
        std::string dump;
        for (const std::string& line : output.transcript) dump += line + "\n";
        write_file(artifacts.transcript_path, dump);
    }
    return artifacts;
}

void cmd_index(const PipelineConfig& config, const std::string& collection,
               const std::string& out_path) {
    Analyzer analyzer = make_analyzer(config);
    InvertedIndex index = build_index_from_collection(
        collection, analyzer,
        "config_hash=" + config_hash(config) + " stopwords=" + kStopwordsVersion);
    save_index(index, out_path);
}

void cmd_search(const PipelineConfig& config, const std::string& index_path,
                const std::string& queries_path, const std::string& out_path,
                const std::string& tag) {
    Analyzer analyzer = make_analyzer(config);
    InvertedIndex index = load_index(index_path);
    auto queries = read_queries_file(queries_path);
    Run run = search_queries(config, index, analyzer, queries, tag);
    for (const std::string& line :
         artifact_header(config, {{"queries", queries_path}, {"index", index_path}}))
        run.header.push_back("# " + line);
    write_run(run, out_path);
}

void cmd_rerank(const PipelineConfig& config, const std::string& run_path,
                const std::string& collection, const std::string& queries_path,
                const std::string& out_path) {
    Analyzer analyzer = make_analyzer(config);
    Run first_stage = read_run(run_path);
    auto texts = collection_texts(collection);
    std::unordered_map<std::string, std::string> queries;
    for (auto& [qid, text] : read_queries_file(queries_path)) queries[qid] = text;
    Run out = rerank_run(config, first_stage, texts, queries, analyzer);
    for (const std::string& line :
         artifact_header(config, {{"run", run_path}, {"queries", queries_path}}))
        out.header.push_back("# " + line);
    write_run(out, out_path);
}

MetricReport cmd_eval(const PipelineConfig& config, const std::string& run_path,
                      const std::string& qrels_path, const std::string& out_prefix) {
    Run run = read_run(run_path);
    Qrels qrels = read_qrels(qrels_path);
    MetricReport report = evaluate(run, qrels, eval_config_of(config));
    const std::vector<std::string> header =
        artifact_header(config, {{"run", run_path}, {"qrels", qrels_path}});
    write_file(out_prefix + ".json", report_to_json(report, header));
    write_file(out_prefix + ".txt", report_to_text(report, header));
    return report;
}

SignificanceReport cmd_compare(const PipelineConfig& config, const std::string& report_a,
                               const std::string& report_b, const std::string& out_prefix) {
    MetricReport a = report_from_json(read_file(report_a));
    MetricReport b = report_from_json(read_file(report_b));
    SignificanceReport report = compare_systems(
        a, b, config.alpha, static_cast<std::size_t>(std::max(1, config.m_comparisons)));
    const std::vector<std::string> header =
        artifact_header(config, {{"report_a", report_a}, {"report_b", report_b}});
    write_file(out_prefix + ".json", significance_to_json(report, header));
    write_file(out_prefix + ".txt", significance_to_text(report, header));
    return report;
}

PipelineArtifacts cmd_pipeline(const PipelineConfig& config, const std::string& qrels_path) {
    namespace fs = std::filesystem;
    BackendStack backend = make_backend(config);  // fail fast on a missing API key

    PipelineArtifacts artifacts;
    artifacts.dir = config.out_dir + "/" + config_hash(config);
    fs::create_directories(artifacts.dir);
    const std::string dir = artifacts.dir + "/";
    write_file(dir + "config.txt",
               "config_hash = " + config_hash(config) + "\n" + config_echo(config));

    // rewrite
    std::vector<Conversation> dataset = load_dataset(config);
    RewriteOutput rewritten = rewrite_dataset(config, dataset, backend.top());
    artifacts.backend_calls = backend.calls();
    const std::vector<std::string> header = artifact_header(config);
    write_rewrites_file(rewritten.turns, dir + "rewrites.tsv", header);
    if (rewritten.has_answers)
        write_answers_file(rewritten.turns, dir + "answers.tsv", header);
    if (config.dump_requests) {
        std::string dump;
        for (const std::string& line : rewritten.transcript) dump += line + "\n";
        write_file(dir + "requests.jsonl", dump);
    }

    // queries: raw utterances vs model rewrites, qid = turn key
    std::vector<std::pair<std::string, std::string>> raw_queries;
    std::vector<std::pair<std::string, std::string>> rewritten_queries;
    for (const Turn& turn : rewritten.turns) {
        raw_queries.emplace_back(turn.key().str(), turn.raw);
        rewritten_queries.emplace_back(turn.key().str(),
                                       turn.rewritten ? *turn.rewritten : turn.raw);
    }
    {
        std::string raw_file;
        for (const std::string& line : header) raw_file += "# " + line + "\n";
        for (const auto& [qid, text] : raw_queries) raw_file += qid + "\t" + text + "\n";
        write_file(dir + "queries_raw.tsv", raw_file);
    }

    // first stage
    Analyzer analyzer = make_analyzer(config);
    InvertedIndex index = obtain_index(config, analyzer);
    if (config.index_path.empty()) save_index(index, dir + "index.bin");
    Run run_raw = search_queries(config, index, analyzer, raw_queries, "raw");
    Run run_rewritten =
        search_queries(config, index, analyzer, rewritten_queries, "rewritten");
    for (const std::string& line : header) {
        run_raw.header.push_back("# " + line);
        run_rewritten.header.push_back("# " + line);
    }
    write_run(run_raw, dir + "run_raw.txt");
    write_run(run_rewritten, dir + "run_rewritten.txt");
    artifacts.run_raw = dir + "run_raw.txt";
    artifacts.run_rewritten = dir + "run_rewritten.txt";

    // second stage
    if (config.rerank) {
        auto texts = collection_texts(config.collection);
        std::unordered_map<std::string, std::string> raw_map(raw_queries.begin(),
                                                             raw_queries.end());
        std::unordered_map<std::string, std::string> rewritten_map(
            rewritten_queries.begin(), rewritten_queries.end());
        Run rr_raw = rerank_run(config, run_raw, texts, raw_map, analyzer);
        Run rr_rewritten = rerank_run(config, run_rewritten, texts, rewritten_map, analyzer);
        for (const std::string& line : header) {
            rr_raw.header.push_back("# " + line);
            rr_rewritten.header.push_back("# " + line);
        }
        write_run(rr_raw, dir + "run_raw_rr.txt");
        write_run(rr_rewritten, dir + "run_rewritten_rr.txt");
        artifacts.run_raw = dir + "run_raw_rr.txt";
        artifacts.run_rewritten = dir + "run_rewritten_rr.txt";
    }

    // evaluation + comparison on the final-stage runs
    artifacts.report_raw =
        cmd_eval(config, artifacts.run_raw, qrels_path, dir + "eval_raw");
    artifacts.report_rewritten =
        cmd_eval(config, artifacts.run_rewritten, qrels_path, dir + "eval_rewritten");
    artifacts.eval_raw_json = dir + "eval_raw.json";
    artifacts.eval_rewritten_json = dir + "eval_rewritten.json";
    cmd_compare(config, artifacts.eval_rewritten_json, artifacts.eval_raw_json,
                dir + "compare");
    artifacts.compare_json = dir + "compare.json";
    return artifacts;
}

}  // namespace convo
