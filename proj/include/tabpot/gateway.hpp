#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include <nlohmann/json.hpp>

#include "tabpot/execution.hpp"
#include "tabpot/llm_client.hpp"
#include "tabpot/pipeline.hpp"
#include "tabpot/prompts_db.hpp"

namespace tabpot {

struct ServiceConfig {
    std::string host = "0.0.0.0";
    int port = 8080;
    std::string prompts_root;           // defaults to the shipped database
    std::string llm_backend = "http";   // "http" or "mock:<script>"
    LlmConfig llm;
    std::size_t llm_max_in_flight = 8;
    std::string executor = "sandbox";   // "sandbox" or "stub:<table>"
    std::vector<std::string> sandbox_command;
    std::size_t pool_size = 2;
    MethodConfig method;
    std::size_t max_body_bytes = 1 << 20;
    std::size_t max_concurrent_requests = 8;
    double health_probe_ttl_s = 10.0;
};

// Keys: host, port, prompts_root, llm {backend, base_url, model, api_key,
// temperature, max_tokens, timeout_s, retries, backoff_s, max_in_flight},
// executor {kind, command, pool_size, timeout_s}, method {name, ablate,
// routing_threshold, max_corrections}, max_body_bytes,
// max_concurrent_requests, health_probe_ttl_s. Unknown keys are rejected.
ServiceConfig service_config_from_json(const nlohmann::json& doc, const std::string& base_dir = ".");
ServiceConfig load_service_config(const std::string& path);

// Env overrides (TABPOT_LLM_*) on top of the file, then fail-fast checks:
// paths exist, caps positive, method settings valid.
ServiceConfig finalize(ServiceConfig config);

struct HttpResponse {
    int status = 200;
    std::string body;  // JSON
};

class Gateway {
public:
    Gateway(ServiceConfig config, const PromptsDatabase& db, LlmClient& llm, Executor& executor);

    HttpResponse handle_task(std::string_view body);
    HttpResponse handle_health();

    const ServiceConfig& config() const noexcept { return config_; }

private:
    ServiceConfig config_;
    const PromptsDatabase& db_;
    LlmClient& llm_;
    Executor& executor_;

    std::mutex probe_mutex_;
    std::optional<std::chrono::steady_clock::time_point> probed_at_;
    bool llm_reachable_ = false;
};

// Owns the database and backends named by a ServiceConfig.
struct ServiceRuntime {
    PromptsDatabase db;
    std::unique_ptr<LlmClient> llm;
    std::unique_ptr<Executor> executor;
};

ServiceRuntime build_runtime(const ServiceConfig& config);

// HTTP front end: POST /v1/tasks and GET /healthz.
class GatewayServer {
public:
    explicit GatewayServer(Gateway& gateway);
    ~GatewayServer();

    GatewayServer(const GatewayServer&) = delete;
    GatewayServer& operator=(const GatewayServer&) = delete;

    // Binds and serves on a background thread. Port 0 picks a free port.
    // Returns the bound port; throws Error when binding fails.
    int start(const std::string& host, int port);
    // Serves on the calling thread until stop().
    void run(const std::string& host, int port);
    // Stops accepting, waits for in-flight requests.
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace tabpot
