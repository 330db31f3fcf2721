#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabpot/prompt.hpp"

namespace tabpot {

struct LlmConfig {
    std::string base_url = "http://127.0.0.1:8000";  // POSTs go to {base_url}/v1/chat/completions
    std::string model = "default";
    std::string api_key;  // sent as a bearer token when set
    double temperature = 0.0;
    int max_tokens = 1024;
    double timeout_s = 120.0;
    int retries = 2;
    double backoff_s = 0.5;  // doubled after each failed attempt
};

// Throws PreconditionError on a negative temperature, non-positive token
// limit or timeout, or negative retry settings.
void validate(const LlmConfig& config);

// Applies TABPOT_LLM_BASE_URL, TABPOT_LLM_MODEL and TABPOT_LLM_API_KEY.
LlmConfig apply_env_overrides(LlmConfig config);

enum class BackendKind { http, mock };

std::string_view to_string(BackendKind kind);

struct CompletionResult {
    std::string text;
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
    double latency_s = 0.0;
    BackendKind backend = BackendKind::mock;
    int retries = 0;
    bool usage_reported = false;  // token counts came from the endpoint
};

class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    virtual CompletionResult complete(const Prompt& prompt) = 0;
    virtual BackendKind kind() const = 0;
    // Cheap reachability check.
    virtual bool probe() = 0;
};

class HttpBackend : public LlmBackend {
public:
    explicit HttpBackend(LlmConfig config);

    CompletionResult complete(const Prompt& prompt) override;
    BackendKind kind() const override { return BackendKind::http; }
    bool probe() override;

    const LlmConfig& config() const noexcept { return config_; }

private:
    LlmConfig config_;
    std::string host_;  // scheme://host:port
    std::string path_prefix_;
};

// Request body sent to the chat completions endpoint.
nlohmann::ordered_json make_chat_request(const LlmConfig& config, const Prompt& prompt);

struct MockRule {
    std::string match;
    std::string completion;
    bool once = false;
    bool regex = false;  // `match` is an ECMAScript pattern instead of a substring
};

// Scripted completions. Rules are tried in order against the final user turn,
// then in order against the full flattened prompt. A rule marked `once` is
// consumed by its first hit. No match raises ScriptMiss.
class MockBackend : public LlmBackend {
public:
    explicit MockBackend(std::vector<MockRule> rules);

    // [{"match": str, "completion": str, "once": bool?, "regex": bool?} ...]
    static std::unique_ptr<MockBackend> from_json(const nlohmann::json& doc);
    static std::unique_ptr<MockBackend> from_file(const std::string& path);

    CompletionResult complete(const Prompt& prompt) override;
    BackendKind kind() const override { return BackendKind::mock; }
    bool probe() override { return true; }

    std::size_t calls() const;

private:
    struct Rule;
    mutable std::mutex mutex_;
    std::vector<std::shared_ptr<Rule>> rules_;
    std::size_t calls_ = 0;
};

// Shared entry point for every LLM call. Counts calls and bounds the number
// of requests in flight.
class LlmClient {
public:
    explicit LlmClient(std::unique_ptr<LlmBackend> backend, std::size_t max_in_flight = 8);

    CompletionResult complete(const Prompt& prompt);

    std::size_t calls() const noexcept { return calls_.load(); }
    std::size_t in_flight() const;
    BackendKind kind() const { return backend_->kind(); }
    bool probe() { return backend_->probe(); }
    LlmBackend& backend() { return *backend_; }

private:
    std::unique_ptr<LlmBackend> backend_;
    std::size_t max_in_flight_;
    mutable std::mutex mutex_;
    std::condition_variable slot_free_;
    std::size_t in_flight_ = 0;
    std::atomic<std::size_t> calls_{0};
};

struct UsageSummary {
    std::size_t questions = 0;
    std::size_t calls = 0;
    std::size_t total_prompt_tokens = 0;
    std::size_t total_completion_tokens = 0;
    double avg_prompt_tokens = 0.0;      // per question
    double avg_completion_tokens = 0.0;  // per question
    double total_latency_s = 0.0;
    double prompt_throughput = 0.0;      // tokens per second of LLM latency
    double completion_throughput = 0.0;
};

// One inner vector per question; stage results are summed before averaging.
UsageSummary usage_totals(const std::vector<std::vector<CompletionResult>>& per_question);

nlohmann::ordered_json to_json(const UsageSummary& usage, bool include_timing = true);

// "http" or "mock:<script path>".
std::unique_ptr<LlmBackend> make_llm_backend(std::string_view spec, const LlmConfig& config);

}  // namespace tabpot
