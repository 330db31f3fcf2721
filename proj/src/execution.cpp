#include "tabpot/execution.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tabpot/digest.hpp"
#include "tabpot/errors.hpp"

extern char** environ;

namespace tabpot {

namespace {

using Clock = std::chrono::steady_clock;

std::optional<std::string> optional_string(const nlohmann::json& doc, const char* key) {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return std::nullopt;
    if (it->is_string()) return it->get<std::string>();
    return it->dump();
}

std::string stringify_value(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_array()) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i > 0) out += ", ";
            out += stringify_value(v[i]);
        }
        return out;
    }
    return v.dump();
}

bool matches(const StubExecutor::Entry& entry, const ExecutionRequest& request, const std::string& fingerprint) {
    if (entry.fingerprint && *entry.fingerprint != fingerprint) return false;
    if (entry.reasoning_contains && request.reasoning_code.source.find(*entry.reasoning_contains) == std::string::npos)
        return false;
    const bool has_normalizer = request.normalizer_code.has_value();
    if (entry.normalizer == StubExecutor::NormalizerFilter::absent && has_normalizer) return false;
    if (entry.normalizer == StubExecutor::NormalizerFilter::present && !has_normalizer) return false;
    if (entry.normalizer_contains &&
        (!has_normalizer || request.normalizer_code->source.find(*entry.normalizer_contains) == std::string::npos))
        return false;
    return true;
}

void set_nonblocking(int fd) {
    int flags = fcntl(fd, F_GETFL, 0);
    if (flags >= 0) fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

void ignore_sigpipe_once() {
    static const bool done = [] {
        std::signal(SIGPIPE, SIG_IGN);
        return true;
    }();
    (void)done;
}

}  // namespace

std::string_view to_string(ExecutionStatus status) {
    switch (status) {
        case ExecutionStatus::ok: return "ok";
        case ExecutionStatus::error: return "error";
        case ExecutionStatus::timeout: return "timeout";
    }
    return "error";
}

ExecutionOutcome ExecutionOutcome::success(std::string value) {
    ExecutionOutcome o;
    o.status = ExecutionStatus::ok;
    o.value = std::move(value);
    return o;
}

ExecutionOutcome ExecutionOutcome::failure(std::string type, std::string message, std::optional<std::string> traceback) {
    ExecutionOutcome o;
    o.status = ExecutionStatus::error;
    o.error_type = std::move(type);
    o.error_message = std::move(message);
    o.traceback = std::move(traceback);
    return o;
}

nlohmann::ordered_json to_json(const ExecutionOutcome& outcome, bool include_timing) {
    nlohmann::ordered_json out;
    out["status"] = to_string(outcome.status);
    if (outcome.value) out["value"] = *outcome.value;
    if (outcome.error_type) out["error_type"] = *outcome.error_type;
    if (outcome.error_message) out["error_message"] = *outcome.error_message;
    if (outcome.traceback) out["traceback"] = *outcome.traceback;
    if (include_timing) out["wall_time"] = outcome.wall_time;
    return out;
}

ExecutionOutcome outcome_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ProtocolError("execution outcome must be a JSON object");
    ExecutionOutcome o;
    const std::string status = doc.value("status", "");
    if (status == "ok") {
        o.status = ExecutionStatus::ok;
    } else if (status == "error") {
        o.status = ExecutionStatus::error;
    } else if (status == "timeout") {
        o.status = ExecutionStatus::timeout;
    } else {
        throw ProtocolError("unknown outcome status '" + status + "'");
    }
    if (doc.contains("value") && !doc.at("value").is_null()) o.value = stringify_value(doc.at("value"));
    o.error_type = optional_string(doc, "error_type");
    o.error_message = optional_string(doc, "error_message");
    o.traceback = optional_string(doc, "traceback");
    if (doc.contains("wall_time") && doc.at("wall_time").is_number()) o.wall_time = doc.at("wall_time").get<double>();
    if (o.status == ExecutionStatus::ok && !o.value) throw ProtocolError("ok outcome without a value");
    if (o.status == ExecutionStatus::error && !o.error_type) throw ProtocolError("error outcome without error_type");
    return o;
}

void validate_request(const ExecutionRequest& request) {
    if (!(request.timeout_s >= kMinTimeoutSeconds && request.timeout_s <= kMaxTimeoutSeconds))
        throw PreconditionError("execution timeout must be within [1, 120] seconds, got " +
                                std::to_string(request.timeout_s));
    if (request.reasoning_code.source.empty()) throw PreconditionError("reasoning code is empty");
}

std::string code_fingerprint(const CodeArtifact& reasoning, const std::optional<CodeArtifact>& normalizer) {
    std::string material = reasoning.entry_name + '\0' + reasoning.source;
    if (normalizer) material += std::string("\0normalizer\0", 12) + normalizer->entry_name + '\0' + normalizer->source;
    return sha256_hex(material);
}

std::string code_fingerprint(const ExecutionRequest& request) {
    return code_fingerprint(request.reasoning_code, request.normalizer_code);
}

// --- StubExecutor -----------------------------------------------------------

StubExecutor::StubExecutor() : default_(ExecutionOutcome::failure("StubMiss", "no stub outcome registered for this code")) {}

StubExecutor& StubExecutor::add(Entry entry) {
    if (entry.outcomes.empty()) throw PreconditionError("stub entry needs at least one outcome");
    std::lock_guard lock(mutex_);
    entries_.push_back(std::move(entry));
    return *this;
}

StubExecutor& StubExecutor::on_fingerprint(std::string fingerprint, std::vector<ExecutionOutcome> outcomes) {
    Entry e;
    e.fingerprint = std::move(fingerprint);
    e.outcomes = std::move(outcomes);
    return add(std::move(e));
}

StubExecutor& StubExecutor::set_default(ExecutionOutcome outcome) {
    std::lock_guard lock(mutex_);
    default_ = std::move(outcome);
    return *this;
}

std::unique_ptr<StubExecutor> StubExecutor::from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw PreconditionError("stub table must be a JSON object");
    auto stub = std::make_unique<StubExecutor>();
    if (doc.contains("default")) stub->set_default(outcome_from_json(doc.at("default")));
    for (const auto& e : doc.value("entries", nlohmann::json::array())) {
        Entry entry;
        if (e.contains("fingerprint")) entry.fingerprint = e.at("fingerprint").get<std::string>();
        if (e.contains("reasoning_contains")) entry.reasoning_contains = e.at("reasoning_contains").get<std::string>();
        if (e.contains("normalizer_contains")) entry.normalizer_contains = e.at("normalizer_contains").get<std::string>();
        const std::string filter = e.value("normalizer", "any");
        if (filter == "absent") {
            entry.normalizer = NormalizerFilter::absent;
        } else if (filter == "present") {
            entry.normalizer = NormalizerFilter::present;
        } else if (filter != "any") {
            throw PreconditionError("stub entry 'normalizer' must be any, absent or present");
        }
        for (const auto& o : e.value("outcomes", nlohmann::json::array())) entry.outcomes.push_back(outcome_from_json(o));
        stub->add(std::move(entry));
    }
    return stub;
}

std::unique_ptr<StubExecutor> StubExecutor::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFiles("cannot open stub table: " + path);
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw PreconditionError("invalid stub table " + path + ": " + e.what());
    }
}

ExecutionOutcome StubExecutor::execute(const ExecutionRequest& request) {
    validate_request(request);
    const std::string fingerprint = code_fingerprint(request);
    std::lock_guard lock(mutex_);
    ++calls_;
    if (requests_.size() < kRequestLogLimit) requests_.push_back(request);
    for (auto& entry : entries_) {
        if (!matches(entry, request, fingerprint)) continue;
        ExecutionOutcome out = entry.outcomes[std::min(entry.next, entry.outcomes.size() - 1)];
        if (entry.next < entry.outcomes.size()) ++entry.next;
        return out;
    }
    return default_;
}

ExecutorStatus StubExecutor::status() const {
    ExecutorStatus s;
    s.kind = "stub";
    s.pool_size = 1;
    s.idle = 1;
    return s;
}

std::size_t StubExecutor::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::vector<ExecutionRequest> StubExecutor::requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
}

// --- wire protocol ------------------------------------------------------------

nlohmann::ordered_json make_wire_request(const std::string& id, const ExecutionRequest& request) {
    nlohmann::ordered_json out;
    out["id"] = id;
    out["reasoning_code"] = request.reasoning_code.source;
    out["entry"] = request.reasoning_code.entry_name;
    if (request.normalizer_code) {
        out["normalizer_code"] = request.normalizer_code->source;
        out["normalizer_entry"] = request.normalizer_code->entry_name;
    }
    out["table"] = column_dict_to_json(request.table);
    out["time_budget_s"] = request.timeout_s;
    return out;
}

ExecutionOutcome parse_wire_reply(std::string_view line, const std::string& expected_id) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
        std::string head(line.substr(0, 200));
        throw ProtocolError("worker reply is not JSON: " + head);
    }
    if (!doc.is_object()) throw ProtocolError("worker reply is not a JSON object");
    if (!doc.contains("id") || !doc.at("id").is_string()) throw ProtocolError("worker reply has no id");
    if (doc.at("id").get<std::string>() != expected_id)
        throw ProtocolError("worker reply id '" + doc.at("id").get<std::string>() + "' does not match '" + expected_id +
                            "'");
    const std::string status = doc.value("status", "");
    if (status != "ok" && status != "error") throw ProtocolError("worker reply status must be ok or error");
    ExecutionOutcome out = outcome_from_json(doc);
    out.wall_time = 0.0;
    return out;
}

// --- SubprocessExecutor -------------------------------------------------------

struct SubprocessExecutor::Worker {
    pid_t pid = -1;
    int in_fd = -1;
    int out_fd = -1;
    int err_fd = -1;

    Worker() = default;
    Worker(const Worker&) = delete;
    Worker& operator=(const Worker&) = delete;

    ~Worker() {
        close_input();
        for (int* fd : {&out_fd, &err_fd}) {
            if (*fd >= 0) ::close(*fd);
            *fd = -1;
        }
        if (pid > 0) {
            ::kill(-pid, SIGKILL);
            ::kill(pid, SIGKILL);
            int status = 0;
            while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
            }
        }
    }

    void close_input() {
        if (in_fd >= 0) ::close(in_fd);
        in_fd = -1;
    }

    bool alive() const {
        int status = 0;
        return pid > 0 && ::waitpid(pid, &status, WNOHANG) == 0;
    }
};

SubprocessExecutor::SubprocessExecutor(WorkerPoolConfig config) : config_(std::move(config)) {
    if (config_.command.empty()) throw WorkerSpawnFailure("sandbox worker command is empty");
    if (config_.pool_size == 0) throw PreconditionError("worker pool size must be positive");
    ignore_sigpipe_once();
    if (config_.prespawn) {
        for (std::size_t i = 0; i < config_.pool_size; ++i) idle_.push_back(spawn());
    }
}

SubprocessExecutor::~SubprocessExecutor() { shutdown(); }

void SubprocessExecutor::shutdown() {
    std::deque<std::unique_ptr<Worker>> doomed;
    {
        std::lock_guard lock(mutex_);
        stopped_ = true;
        doomed.swap(idle_);
    }
    available_.notify_all();
}

std::unique_ptr<SubprocessExecutor::Worker> SubprocessExecutor::spawn() const {
    int in_pipe[2];
    int out_pipe[2];
    int err_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw WorkerSpawnFailure(std::string("pipe: ") + std::strerror(errno));
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        throw WorkerSpawnFailure(std::string("pipe: ") + std::strerror(errno));
    }
    if (::pipe2(err_pipe, O_CLOEXEC) != 0) {
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
        throw WorkerSpawnFailure(std::string("pipe: ") + std::strerror(errno));
    }

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
    posix_spawn_file_actions_adddup2(&actions, err_pipe[1], STDERR_FILENO);
    posix_spawnattr_t attr;
    posix_spawnattr_init(&attr);
    posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
    posix_spawnattr_setpgroup(&attr, 0);

    std::vector<char*> argv;
    for (const auto& arg : config_.command) argv.push_back(const_cast<char*>(arg.c_str()));
    argv.push_back(nullptr);

    pid_t pid = -1;
    const int rc = ::posix_spawnp(&pid, argv[0], &actions, &attr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    posix_spawnattr_destroy(&attr);
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    if (rc != 0) {
        ::close(in_pipe[1]);
        ::close(out_pipe[0]);
        ::close(err_pipe[0]);
        throw WorkerSpawnFailure("cannot start sandbox worker '" + config_.command.front() + "': " + std::strerror(rc));
    }
    auto worker = std::make_unique<Worker>();
    worker->pid = pid;
    worker->in_fd = in_pipe[1];
    worker->out_fd = out_pipe[0];
    worker->err_fd = err_pipe[0];
    set_nonblocking(worker->in_fd);
    set_nonblocking(worker->out_fd);
    set_nonblocking(worker->err_fd);
    return worker;
}

std::unique_ptr<SubprocessExecutor::Worker> SubprocessExecutor::acquire() {
    std::unique_ptr<Worker> worker;
    {
        std::unique_lock lock(mutex_);
        if (stopped_) throw WorkerSpawnFailure("executor is shut down");
        ++waiting_;
        available_.wait(lock, [this] { return stopped_ || busy_ < config_.pool_size; });
        --waiting_;
        if (stopped_) throw WorkerSpawnFailure("executor is shut down");
        ++busy_;
        while (!idle_.empty() && !worker) {
            worker = std::move(idle_.front());
            idle_.pop_front();
            if (!worker->alive()) worker.reset();
        }
    }
    if (!worker) {
        try {
            worker = spawn();
        } catch (...) {
            release_slot();
            throw;
        }
    }
    return worker;
}

void SubprocessExecutor::release_slot() {
    {
        std::lock_guard lock(mutex_);
        --busy_;
    }
    available_.notify_one();
}

void SubprocessExecutor::replenish() {
    if (!config_.prespawn) return;
    {
        std::lock_guard lock(mutex_);
        if (stopped_ || idle_.size() + busy_ >= config_.pool_size) return;
    }
    std::unique_ptr<Worker> fresh;
    try {
        fresh = spawn();
    } catch (const WorkerSpawnFailure&) {
        return;  // the next acquire() retries and reports the failure
    }
    std::lock_guard lock(mutex_);
    if (!stopped_ && idle_.size() + busy_ < config_.pool_size) idle_.push_back(std::move(fresh));
}

ExecutionOutcome SubprocessExecutor::execute(const ExecutionRequest& request) {
    validate_request(request);
    const std::string id = "req-" + std::to_string(next_id_.fetch_add(1) + 1);
    const std::string line = make_wire_request(id, request).dump() + "\n";

    std::unique_ptr<Worker> worker = acquire();
    struct SlotGuard {
        SubprocessExecutor* self;
        ~SlotGuard() {
            self->release_slot();
            self->replenish();
        }
    } guard{this};

    const auto start = Clock::now();
    const auto deadline = start + std::chrono::duration_cast<Clock::duration>(
                                      std::chrono::duration<double>(request.timeout_s));
    std::size_t written = 0;
    std::string out;
    std::string err_tail;
    std::optional<std::string> reply;
    bool out_open = true;

    while (!reply) {
        const auto now = Clock::now();
        if (now >= deadline) {
            ExecutionOutcome t;
            t.status = ExecutionStatus::timeout;
            t.error_type = "Timeout";
            t.error_message = "execution exceeded " + std::to_string(request.timeout_s) + " s";
            worker.reset();  // kill and reap
            t.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
            return t;
        }
        const int wait_ms = static_cast<int>(
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count() + 1);
        pollfd fds[3];
        nfds_t n = 0;
        int in_idx = -1, out_idx = -1, err_idx = -1;
        if (worker->in_fd >= 0) {
            fds[n] = {worker->in_fd, POLLOUT, 0};
            in_idx = static_cast<int>(n++);
        }
        if (out_open) {
            fds[n] = {worker->out_fd, POLLIN, 0};
            out_idx = static_cast<int>(n++);
        }
        if (worker->err_fd >= 0) {
            fds[n] = {worker->err_fd, POLLIN, 0};
            err_idx = static_cast<int>(n++);
        }
        const int rc = ::poll(fds, n, wait_ms);
        if (rc < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
        }
        if (in_idx >= 0 && (fds[in_idx].revents & (POLLOUT | POLLERR | POLLHUP))) {
            const ssize_t w = ::write(worker->in_fd, line.data() + written, line.size() - written);
            if (w > 0) written += static_cast<std::size_t>(w);
            if (w < 0 && errno != EAGAIN && errno != EINTR) worker->close_input();
            if (written == line.size()) worker->close_input();
        }
        if (err_idx >= 0 && (fds[err_idx].revents & (POLLIN | POLLHUP | POLLERR))) {
            char buf[4096];
            const ssize_t r = ::read(worker->err_fd, buf, sizeof buf);
            if (r > 0) {
                err_tail.append(buf, static_cast<std::size_t>(r));
                if (err_tail.size() > 4096) err_tail.erase(0, err_tail.size() - 4096);
            } else if (r == 0 || (errno != EAGAIN && errno != EINTR)) {
                ::close(worker->err_fd);
                worker->err_fd = -1;
            }
        }
        if (out_idx >= 0 && (fds[out_idx].revents & (POLLIN | POLLHUP | POLLERR))) {
            char buf[65536];
            const ssize_t r = ::read(worker->out_fd, buf, sizeof buf);
            if (r > 0) {
                out.append(buf, static_cast<std::size_t>(r));
                const std::size_t nl = out.find('\n');
                if (nl != std::string::npos) reply = out.substr(0, nl);
            } else if (r == 0 || (errno != EAGAIN && errno != EINTR)) {
                out_open = false;
                if (!out.empty()) {
                    reply = out;
                } else {
                    throw ProtocolError("sandbox worker exited without a reply" +
                                        (err_tail.empty() ? std::string{} : ": " + err_tail));
                }
            }
        }
    }
    const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
    worker.reset();
    ExecutionOutcome outcome = parse_wire_reply(*reply, id);
    outcome.wall_time = elapsed;
    return outcome;
}

ExecutorStatus SubprocessExecutor::status() const {
    std::lock_guard lock(mutex_);
    ExecutorStatus s;
    s.kind = "subprocess";
    s.pool_size = config_.pool_size;
    s.idle = idle_.size();
    s.busy = busy_;
    s.queue_depth = waiting_;
    s.exhausted = busy_ >= config_.pool_size;
    return s;
}

std::vector<std::string> default_sandbox_command() {
    std::vector<std::string> out;
    if (const char* env = std::getenv("TABPOT_SANDBOX_CMD"); env && *env) {
        std::istringstream in(env);
        for (std::string part; in >> part;) out.push_back(part);
    }
    if (out.empty()) out = {"python3", "-m", "tabpot_sandbox"};
    return out;
}

std::unique_ptr<Executor> make_executor(std::string_view spec, WorkerPoolConfig pool) {
    if (spec == "sandbox") {
        if (pool.command.empty()) pool.command = default_sandbox_command();
        return std::make_unique<SubprocessExecutor>(std::move(pool));
    }
    if (spec.rfind("stub:", 0) == 0) return StubExecutor::from_file(std::string(spec.substr(5)));
    if (spec == "stub") return std::make_unique<StubExecutor>();
    throw PreconditionError("unknown executor '" + std::string(spec) + "' (expected sandbox or stub:<table>)");
}

}  // namespace tabpot
