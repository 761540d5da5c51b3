#include "convo/backend.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <semaphore>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "convo/errors.hpp"
#include "convo/util.hpp"

namespace convo {

const char* const kApiKeyEnvVar = "CONVO_REWRITE_API_KEY";

void validate_params(const CompletionParams& params) {
    if (params.model_name.empty()) throw DataError("model name must be non-empty");
    if (params.temperature < 0.0 || params.temperature > 2.0)
        throw DataError("temperature must lie in [0, 2]");
    if (params.max_output_tokens < 16)
        throw DataError("max_output_tokens must be at least 16");
}

// ---------------------------------------------------------------------------
// Mock backend
// ---------------------------------------------------------------------------

MockBackend::MockBackend(std::map<std::string, std::string> fixture)
    : fixture_(std::move(fixture)) {}

MockBackend MockBackend::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open mock fixture file: " + path);
    std::map<std::string, std::string> fixture;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto sep = line.find('\t');
        if (sep == std::string::npos)
            throw ParseError("mock fixture " + path + " line " + std::to_string(lineno) +
                             ": expected \"<raw>\\t<rewrite>\"");
        fixture[line.substr(0, sep)] = line.substr(sep + 1);
    }
    return MockBackend(std::move(fixture));
}

namespace {

std::string last_line(const std::string& content) {
    auto pos = content.find_last_of('\n');
    std::string tail = pos == std::string::npos ? content : content.substr(pos + 1);
    return trim(tail);
}

}  // namespace

std::string MockBackend::complete(const std::vector<ChatMessage>& messages,
                                  const CompletionParams& params) {
    validate_params(params);
    if (messages.empty() || messages.back().role != Role::User)
        throw BackendError("mock backend expects a final user message");
    const std::string& content = messages.back().content;

    const std::string* rewrite = nullptr;
    std::size_t best_len = 0;
    for (const auto& [raw, mapped] : fixture_) {
        if (raw.size() > best_len && content.find(raw) != std::string::npos) {
            rewrite = &mapped;
            best_len = raw.size();
        }
    }
    std::string result = rewrite ? *rewrite : last_line(content);
    if (result.empty()) result = trim(content);
    if (content.find(kAnswerDirective) != std::string::npos)
        result += std::string("\n") + kAnswerMarker + " This is a mock answer to: " + result;
    return result;
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

struct HttpBackend::Limiter {
    explicit Limiter(int slots) : semaphore(slots) {}
    std::counting_semaphore<1 << 20> semaphore;
    std::mutex rng_mutex;
    std::mt19937 rng;
};

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.api_key.empty())
        throw BackendError(std::string("no API key: set ") + kApiKeyEnvVar);
    if (config_.endpoint.find("://") == std::string::npos)
        throw BackendError("endpoint must be an http(s) URL: " + config_.endpoint);
    if (config_.max_in_flight < 1) config_.max_in_flight = 1;
    limiter_ = std::make_shared<Limiter>(config_.max_in_flight);
    limiter_->rng.seed(config_.retry.jitter_seed ? config_.retry.jitter_seed
                                                 : std::random_device{}());
}

HttpBackend HttpBackend::from_env(std::string endpoint) {
    HttpBackendConfig config;
    config.endpoint = std::move(endpoint);
    const char* key = std::getenv(kApiKeyEnvVar);
    config.api_key = key ? key : "";
    return HttpBackend(std::move(config));
}

namespace {

std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
    auto scheme = endpoint.find("://");
    auto path_pos = endpoint.find('/', scheme + 3);
    if (path_pos == std::string::npos) return {endpoint, "/"};
    return {endpoint.substr(0, path_pos), endpoint.substr(path_pos)};
}

std::string request_body(const std::vector<ChatMessage>& messages,
                         const CompletionParams& params) {
    nlohmann::ordered_json body;
    body["model"] = params.model_name;
    body["temperature"] = params.temperature;
    body["max_tokens"] = params.max_output_tokens;
    body["messages"] = nlohmann::ordered_json::array();
    for (const ChatMessage& message : messages) {
        nlohmann::ordered_json entry;
        entry["role"] = role_name(message.role);
        entry["content"] = message.content;
        body["messages"].push_back(std::move(entry));
    }
    return body.dump();
}

std::string extract_completion(const std::string& body) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
        const auto& content = doc.at("choices").at(0).at("message").at("content");
        std::string text = content.get<std::string>();
        if (text.empty()) throw BackendError("backend returned an empty completion");
        return text;
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed completion response: ") + e.what());
    }
}

}  // namespace

std::string HttpBackend::complete(const std::vector<ChatMessage>& messages,
                                  const CompletionParams& params) {
    validate_params(params);
    auto [base, path] = split_endpoint(config_.endpoint);

    limiter_->semaphore.acquire();
    struct Release {
        Limiter* limiter;
        ~Release() { limiter->semaphore.release(); }
    } release{limiter_.get()};

    const std::string body = request_body(messages, params);
    httplib::Headers headers = {{"Authorization", "Bearer " + config_.api_key}};
    std::string last_failure;

    for (int attempt = 1;; ++attempt) {
        httplib::Client client(base);
        auto timeout = params.timeout;
        client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);

        auto res = client.Post(path, headers, body, "application/json");
        if (res && res->status >= 200 && res->status < 300)
            return extract_completion(res->body);

        bool retryable;
        if (!res) {
            last_failure = "transport error: " + httplib::to_string(res.error());
            retryable = true;
        } else {
            last_failure = "HTTP status " + std::to_string(res->status);
            retryable = res->status == 429 || res->status >= 500;
        }
        if (!retryable || attempt >= config_.retry.max_attempts)
            throw BackendError("chat completion failed after " + std::to_string(attempt) +
                               " attempt(s): " + last_failure);

        auto delay = config_.retry.base_delay * (1LL << (attempt - 1));
        std::chrono::milliseconds jitter{0};
        {
            std::lock_guard<std::mutex> lock(limiter_->rng_mutex);
            auto span = static_cast<std::uint64_t>(delay.count() / 2 + 1);
            jitter = std::chrono::milliseconds(limiter_->rng() % span);
        }
        std::this_thread::sleep_for(delay + jitter);
    }
}

// ---------------------------------------------------------------------------
// Response cache
// ---------------------------------------------------------------------------

std::string cache_key_digest(const std::vector<ChatMessage>& messages,
                             const CompletionParams& params) {
    std::string canonical;
    for (const ChatMessage& message : messages) {
        canonical += role_name(message.role);
        canonical += '\x1f';
        canonical += message.content;
        canonical += '\x1e';
    }
    char temp[32];
    std::snprintf(temp, sizeof(temp), "%.6g", params.temperature);
    canonical += "model=" + params.model_name;
    canonical += '\x1e';
    canonical += std::string("temperature=") + temp;
    canonical += '\x1e';
    canonical += "max_output_tokens=" + std::to_string(params.max_output_tokens);
    return sha256_hex(canonical);
}

namespace {
constexpr const char* kCacheMagic = "convo-rewrite-cache v1";
}

ResponseCache::ResponseCache(std::string dir) : dir_(std::move(dir)) {
    if (dir_.empty()) throw DataError("cache directory must be non-empty");
}

std::string ResponseCache::path_for(const std::string& digest) const {
    return dir_ + "/" + digest.substr(0, 2) + "/" + digest.substr(2, 2) + "/" + digest +
           ".txt";
}

std::optional<std::string> ResponseCache::get(const std::string& digest) const {
    const std::string path = path_for(digest);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::string line;
    if (!std::getline(in, line) || line != kCacheMagic) {
        warn("corrupt cache entry (bad magic), treating as miss: " + path);
        return std::nullopt;
    }
    bool header_done = false;
    while (std::getline(in, line)) {
        if (line.empty()) {
            header_done = true;
            break;
        }
    }
    if (!header_done) {
        warn("corrupt cache entry (truncated header), treating as miss: " + path);
        return std::nullopt;
    }
    std::ostringstream rest;
    rest << in.rdbuf();
    return rest.str();
}

void ResponseCache::put(const std::string& digest, const std::string& response,
                        const CompletionParams& params) const {
    namespace fs = std::filesystem;
    const std::string path = path_for(digest);
    fs::create_directories(fs::path(path).parent_path());

    char temp[32];
    std::snprintf(temp, sizeof(temp), "%.6g", params.temperature);
    std::ostringstream content;
    content << kCacheMagic << "\n"
            << "model: " << params.model_name << "\n"
            << "temperature: " << temp << "\n"
            << "max_output_tokens: " << params.max_output_tokens << "\n\n"
            << response;

    // Concurrent writers of the same key write identical bytes; the rename
    // keeps readers from ever seeing a partial entry.
    const std::string tmp_path = path + ".tmp" + std::to_string(
        std::hash<std::thread::id>{}(std::this_thread::get_id()) & 0xffff);
    write_file(tmp_path, content.str());
    fs::rename(tmp_path, path);
}

std::string CachedBackend::complete(const std::vector<ChatMessage>& messages,
                                    const CompletionParams& params) {
    const std::string digest = cache_key_digest(messages, params);
    if (auto hit = cache_.get(digest)) return *hit;
    std::string response = inner_.complete(messages, params);
    cache_.put(digest, response, params);
    return response;
}

// ---------------------------------------------------------------------------
// Post-processing
// ---------------------------------------------------------------------------

namespace {

bool iequals_prefix(const std::string& text, std::size_t offset, std::string_view prefix) {
    if (offset + prefix.size() > text.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        char a = static_cast<char>(std::tolower(static_cast<unsigned char>(text[offset + i])));
        if (a != prefix[i]) return false;
    }
    return true;
}

// Strips one leading "<label>:" where <label> is Rewritten question,
// Reformulated, Rewritten or Question (case-insensitive).
std::string strip_label(const std::string& text) {
    static const std::string_view labels[] = {"rewritten question", "reformulated",
                                              "rewritten", "question"};
    for (std::string_view label : labels) {
        if (!iequals_prefix(text, 0, label)) continue;
        std::size_t pos = label.size();
        while (pos < text.size() &&
               std::isspace(static_cast<unsigned char>(text[pos])))
            ++pos;
        if (pos < text.size() && text[pos] == ':') return text.substr(pos + 1);
    }
    return text;
}

std::string strip_outer_quotes(const std::string& text) {
    if (text.size() >= 2) {
        char front = text.front();
        char back = text.back();
        if (front == back && (front == '"' || front == '\''))
            return text.substr(1, text.size() - 2);
    }
    return text;
}

std::string collapse_whitespace(const std::string& text) {
    std::string out;
    bool in_space = false;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_space = true;
        } else {
            if (in_space && !out.empty()) out.push_back(' ');
            in_space = false;
            out.push_back(c);
        }
    }
    return out;
}

}  // namespace

Postprocessed postprocess(const std::string& raw_output, TemplateId template_id) {
    const PromptTemplate& tmpl = prompt_template(template_id);
    if (trim(raw_output).empty())
        throw BackendError("backend output is empty");

    std::string rewrite_source = raw_output;
    std::optional<std::string> answer;
    if (tmpl.uses_answers) {
        // Split at the first line equal to or starting with the answer marker.
        std::size_t line_start = 0;
        while (line_start <= rewrite_source.size()) {
            auto line_end = rewrite_source.find('\n', line_start);
            std::string line = rewrite_source.substr(
                line_start, line_end == std::string::npos ? std::string::npos
                                                          : line_end - line_start);
            std::string trimmed = trim(line);
            if (trimmed.rfind(kAnswerMarker, 0) == 0) {
                std::string tail = trimmed.substr(std::string(kAnswerMarker).size());
                if (line_end != std::string::npos)
                    tail += "\n" + rewrite_source.substr(line_end + 1);
                answer = trim(collapse_whitespace(tail));
                if (answer->empty()) answer.reset();
                rewrite_source = rewrite_source.substr(0, line_start);
                break;
            }
            if (line_end == std::string::npos) break;
            line_start = line_end + 1;
        }
    }

    // Labels and quote layers can nest ("Rewritten: \"...\""); iterate until
    // stable so reprocessing an output is a no-op.
    std::string rewrite = trim(rewrite_source);
    while (true) {
        std::string before = rewrite;
        rewrite = trim(strip_label(rewrite));
        rewrite = trim(strip_outer_quotes(rewrite));
        if (rewrite == before) break;
    }
    rewrite = collapse_whitespace(rewrite);
    if (rewrite.empty())
        throw BackendError("post-processing left an empty rewrite; raw output was: " +
                           raw_output);
    return {std::move(rewrite), std::move(answer)};
}

}  // namespace convo
