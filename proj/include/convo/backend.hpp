#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "convo/prompts.hpp"

namespace convo {

struct CompletionParams {
    std::string model_name = "gpt-3.5-turbo";
    double temperature = 0.0;     // [0, 2]
    int max_output_tokens = 256;  // >= 16
    std::chrono::milliseconds timeout{30000};
};

void validate_params(const CompletionParams& params);  // throws DataError

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string complete(const std::vector<ChatMessage>& messages,
                                 const CompletionParams& params) = 0;
    virtual const char* name() const = 0;
};

// Deterministic stand-in for the remote model: a pure function of the final
// user message. The contained raw utterance is looked up in a raw->rewrite
// fixture map (longest match wins); unknown utterances are echoed back. When
// the message carries the answer directive, a canned answer block follows.
class MockBackend : public ChatBackend {
public:
    MockBackend() = default;
    explicit MockBackend(std::map<std::string, std::string> fixture);
    static MockBackend from_file(const std::string& path);  // "<raw>\t<rewrite>" lines

    std::string complete(const std::vector<ChatMessage>& messages,
                         const CompletionParams& params) override;
    const char* name() const override { return "mock"; }

private:
    std::map<std::string, std::string> fixture_;
};

struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds base_delay{1000};  // doubled per attempt, jittered
    std::uint32_t jitter_seed = 0;               // nonzero pins the jitter (tests)
};

extern const char* const kApiKeyEnvVar;  // CONVO_REWRITE_API_KEY

struct HttpBackendConfig {
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string api_key;
    RetryPolicy retry;
    int max_in_flight = 4;
};

// POSTs {model, temperature, max_tokens, messages} with a bearer token and
// reads the first choice's message content. Retries transport errors and
// 429/5xx responses with exponential backoff.
class HttpBackend : public ChatBackend {
public:
    explicit HttpBackend(HttpBackendConfig config);  // throws BackendError on empty key
    static HttpBackend from_env(std::string endpoint);

    std::string complete(const std::vector<ChatMessage>& messages,
                         const CompletionParams& params) override;
    const char* name() const override { return "http"; }

private:
    HttpBackendConfig config_;
    struct Limiter;
    std::shared_ptr<Limiter> limiter_;
};

// 256-bit digest of the canonical serialized request; any change to the
// message list, model name, temperature or token limit changes the key.
std::string cache_key_digest(const std::vector<ChatMessage>& messages,
                             const CompletionParams& params);

// One file per key under a two-level hex fan-out, raw response preceded by a
// small metadata header. Corrupt entries read as misses with a warning.
class ResponseCache {
public:
    explicit ResponseCache(std::string dir);

    std::optional<std::string> get(const std::string& digest) const;
    void put(const std::string& digest, const std::string& response,
             const CompletionParams& params) const;
    std::string path_for(const std::string& digest) const;

private:
    std::string dir_;
};

class CachedBackend : public ChatBackend {
public:
    CachedBackend(ChatBackend& inner, ResponseCache cache)
        : inner_(inner), cache_(std::move(cache)) {}

    std::string complete(const std::vector<ChatMessage>& messages,
                         const CompletionParams& params) override;
    const char* name() const override { return inner_.name(); }

private:
    ChatBackend& inner_;
    ResponseCache cache_;
};

struct Postprocessed {
    std::string rewrite;
    std::optional<std::string> answer;
};

// Extracts the rewrite (and the answer, for templates that request one) from
// raw model output: answer split at the first "Answer:" line, leading labels
// and matching outer quotes stripped, newlines collapsed, whitespace trimmed.
// Throws BackendError when nothing survives.
Postprocessed postprocess(const std::string& raw_output, TemplateId template_id);

}  // namespace convo
