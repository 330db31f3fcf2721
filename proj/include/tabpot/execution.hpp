#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabpot/postprocess.hpp"
#include "tabpot/table.hpp"

namespace tabpot {

enum class ExecutionStatus { ok, error, timeout };

std::string_view to_string(ExecutionStatus status);

struct ExecutionOutcome {
    ExecutionStatus status = ExecutionStatus::error;
    std::optional<std::string> value;
    std::optional<std::string> error_type;
    std::optional<std::string> error_message;
    std::optional<std::string> traceback;
    double wall_time = 0.0;  // seconds

    bool ok() const noexcept { return status == ExecutionStatus::ok; }

    static ExecutionOutcome success(std::string value);
    static ExecutionOutcome failure(std::string type, std::string message, std::optional<std::string> traceback = {});
};

// Keys mirror the worker reply; `wall_time` is optional on input.
nlohmann::ordered_json to_json(const ExecutionOutcome& outcome, bool include_timing = true);
ExecutionOutcome outcome_from_json(const nlohmann::json& doc);

struct ExecutionRequest {
    CodeArtifact reasoning_code;
    std::optional<CodeArtifact> normalizer_code;
    TableDict table;
    double timeout_s = 30.0;
};

inline constexpr double kMinTimeoutSeconds = 1.0;
inline constexpr double kMaxTimeoutSeconds = 120.0;

// Throws PreconditionError when the timeout is outside [1, 120] seconds.
void validate_request(const ExecutionRequest& request);

// "normalizer:" prefix marks failures raised while normalizing the table.
inline constexpr std::string_view kNormalizerErrorPrefix = "normalizer:";

struct ExecutorStatus {
    std::string kind;  // "stub" or "subprocess"
    std::size_t pool_size = 0;
    std::size_t idle = 0;
    std::size_t busy = 0;
    std::size_t queue_depth = 0;
    bool exhausted = false;
};

class Executor {
public:
    virtual ~Executor() = default;
    virtual ExecutionOutcome execute(const ExecutionRequest& request) = 0;
    virtual ExecutorStatus status() const = 0;
};

// Stable identity of the code in a request.
std::string code_fingerprint(const CodeArtifact& reasoning, const std::optional<CodeArtifact>& normalizer);
std::string code_fingerprint(const ExecutionRequest& request);

// Deterministic outcome lookup for tests and dry runs. Entries are tried in
// insertion order; each holds a sequence of outcomes consumed one per call,
// with the last one repeating.
class StubExecutor : public Executor {
public:
    enum class NormalizerFilter { any, absent, present };

    struct Entry {
        std::optional<std::string> fingerprint;
        std::optional<std::string> reasoning_contains;
        std::optional<std::string> normalizer_contains;
        NormalizerFilter normalizer = NormalizerFilter::any;
        std::vector<ExecutionOutcome> outcomes;
        std::size_t next = 0;
    };

    StubExecutor();

    StubExecutor& add(Entry entry);
    StubExecutor& on_fingerprint(std::string fingerprint, std::vector<ExecutionOutcome> outcomes);
    StubExecutor& set_default(ExecutionOutcome outcome);

    // {"default": outcome?, "entries": [{"fingerprint"?, "reasoning_contains"?,
    //   "normalizer_contains"?, "normalizer": "any"|"absent"|"present",
    //   "outcomes": [outcome...]} ...]}
    static std::unique_ptr<StubExecutor> from_json(const nlohmann::json& doc);
    static std::unique_ptr<StubExecutor> from_file(const std::string& path);

    ExecutionOutcome execute(const ExecutionRequest& request) override;
    ExecutorStatus status() const override;

    std::size_t calls() const;
    // The first kRequestLogLimit requests, in call order.
    std::vector<ExecutionRequest> requests() const;

    static constexpr std::size_t kRequestLogLimit = 256;

private:
    mutable std::mutex mutex_;
    std::vector<Entry> entries_;
    ExecutionOutcome default_;
    std::vector<ExecutionRequest> requests_;
    std::size_t calls_ = 0;
};

// --- worker protocol -------------------------------------------------------

nlohmann::ordered_json make_wire_request(const std::string& id, const ExecutionRequest& request);

// Parses one reply line. Throws ProtocolError on malformed JSON, a schema
// violation, or an id mismatch.
ExecutionOutcome parse_wire_reply(std::string_view line, const std::string& expected_id);

struct WorkerPoolConfig {
    std::vector<std::string> command;  // argv of the sandbox worker
    std::size_t pool_size = 2;
    bool prespawn = true;              // keep idle workers started ahead of requests
};

// Runs each request in a fresh worker process. Idle workers are started ahead
// of time; a worker serves exactly one request and is then reaped.
class SubprocessExecutor : public Executor {
public:
    explicit SubprocessExecutor(WorkerPoolConfig config);
    ~SubprocessExecutor() override;

    SubprocessExecutor(const SubprocessExecutor&) = delete;
    SubprocessExecutor& operator=(const SubprocessExecutor&) = delete;

    ExecutionOutcome execute(const ExecutionRequest& request) override;
    ExecutorStatus status() const override;

    // Kills idle workers and rejects new requests.
    void shutdown();

private:
    struct Worker;

    std::unique_ptr<Worker> acquire();
    void release_slot();
    std::unique_ptr<Worker> spawn() const;
    void replenish();

    WorkerPoolConfig config_;
    mutable std::mutex mutex_;
    std::condition_variable available_;
    std::deque<std::unique_ptr<Worker>> idle_;
    std::size_t busy_ = 0;
    std::size_t waiting_ = 0;
    bool stopped_ = false;
    std::atomic<std::uint64_t> next_id_{0};
};

// TABPOT_SANDBOX_CMD split on spaces, else "python3 -m tabpot_sandbox".
std::vector<std::string> default_sandbox_command();

// "sandbox" or "stub:<table path>".
std::unique_ptr<Executor> make_executor(std::string_view spec, WorkerPoolConfig pool);

}  // namespace tabpot
