#include "tabpot/gateway.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include <httplib.h>

#include "tabpot/errors.hpp"

namespace fs = std::filesystem;

namespace tabpot {

namespace {

using Clock = std::chrono::steady_clock;

std::string error_body(std::string_view kind, std::string_view message) {
    nlohmann::ordered_json j;
    j["error"] = message;
    j["kind"] = kind;
    return j.dump();
}

void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key)) throw PreconditionError("unknown config key '" + where + key + "'");
}

std::string resolve(const std::string& base_dir, const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(base_dir) / path).lexically_normal().string();
}

// "mock:<path>" and "stub:<path>" carry a path relative to the config file.
std::string resolve_spec(const std::string& base_dir, const std::string& spec) {
    for (const char* prefix : {"mock:", "stub:"}) {
        const std::string p(prefix);
        if (spec.rfind(p, 0) == 0) return p + resolve(base_dir, spec.substr(p.size()));
    }
    return spec;
}

}  // namespace

// --- configuration ---------------------------------------------------------------

ServiceConfig service_config_from_json(const nlohmann::json& doc, const std::string& base_dir) {
    if (!doc.is_object()) throw PreconditionError("service config must be a JSON object");
    reject_unknown_keys(doc,
                        {"host", "port", "prompts_root", "llm", "executor", "method", "max_body_bytes",
                         "max_concurrent_requests", "health_probe_ttl_s"},
                        "");
    ServiceConfig c;
    try {
        c.host = doc.value("host", c.host);
        c.port = doc.value("port", c.port);
        if (doc.contains("prompts_root")) c.prompts_root = resolve(base_dir, doc.at("prompts_root").get<std::string>());
        if (doc.contains("llm")) {
            const auto& l = doc.at("llm");
            reject_unknown_keys(l,
                                {"backend", "base_url", "model", "api_key", "temperature", "max_tokens", "timeout_s",
                                 "retries", "backoff_s", "max_in_flight"},
                                "llm.");
            c.llm_backend = resolve_spec(base_dir, l.value("backend", c.llm_backend));
            c.llm.base_url = l.value("base_url", c.llm.base_url);
            c.llm.model = l.value("model", c.llm.model);
            c.llm.api_key = l.value("api_key", c.llm.api_key);
            c.llm.temperature = l.value("temperature", c.llm.temperature);
            c.llm.max_tokens = l.value("max_tokens", c.llm.max_tokens);
            c.llm.timeout_s = l.value("timeout_s", c.llm.timeout_s);
            c.llm.retries = l.value("retries", c.llm.retries);
            c.llm.backoff_s = l.value("backoff_s", c.llm.backoff_s);
            c.llm_max_in_flight = l.value("max_in_flight", c.llm_max_in_flight);
        }
        if (doc.contains("executor")) {
            const auto& e = doc.at("executor");
            reject_unknown_keys(e, {"kind", "command", "pool_size", "timeout_s"}, "executor.");
            c.executor = resolve_spec(base_dir, e.value("kind", c.executor));
            if (e.contains("command")) c.sandbox_command = e.at("command").get<std::vector<std::string>>();
            c.pool_size = e.value("pool_size", c.pool_size);
            c.method.execution_timeout_s = e.value("timeout_s", c.method.execution_timeout_s);
        }
        if (doc.contains("method")) {
            const auto& m = doc.at("method");
            reject_unknown_keys(m, {"name", "ablate", "routing_threshold", "max_corrections"}, "method.");
            const double timeout = c.method.execution_timeout_s;
            c.method = parse_method(m.value("name", std::string("tabpot")));
            c.method.execution_timeout_s = timeout;
            if (m.contains("ablate")) apply_ablation(c.method, m.at("ablate").get<std::string>());
            if (m.contains("routing_threshold") && !m.at("routing_threshold").is_null())
                c.method.routing_threshold = m.at("routing_threshold").get<std::size_t>();
            c.method.max_corrections = m.value("max_corrections", c.method.max_corrections);
        }
        c.max_body_bytes = doc.value("max_body_bytes", c.max_body_bytes);
        c.max_concurrent_requests = doc.value("max_concurrent_requests", c.max_concurrent_requests);
        c.health_probe_ttl_s = doc.value("health_probe_ttl_s", c.health_probe_ttl_s);
    } catch (const nlohmann::json::exception& e) {
        throw PreconditionError(std::string("invalid service config: ") + e.what());
    }
    return c;
}

ServiceConfig load_service_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFiles("cannot open service config: " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw PreconditionError("service config " + path + " is not valid JSON: " + e.what());
    }
    return service_config_from_json(doc, fs::path(path).parent_path().string());
}

ServiceConfig finalize(ServiceConfig c) {
    c.llm = apply_env_overrides(std::move(c.llm));
    if (c.prompts_root.empty()) c.prompts_root = TABPOT_DEFAULT_PROMPTS_DIR;
    if (!fs::is_directory(c.prompts_root)) throw MissingFiles("prompts root not found: " + c.prompts_root);
    for (const std::string* spec : {&c.llm_backend, &c.executor}) {
        const auto colon = spec->find(':');
        if (colon != std::string::npos && !fs::exists(spec->substr(colon + 1)))
            throw MissingFiles("file not found: " + spec->substr(colon + 1));
    }
    if (c.port < 0 || c.port > 65535) throw PreconditionError("port out of range");
    if (c.max_body_bytes == 0 || c.max_concurrent_requests == 0 || c.pool_size == 0 || c.llm_max_in_flight == 0)
        throw PreconditionError("size caps and pool sizes must be positive");
    if (c.llm_backend == "http") validate(c.llm);
    validate(c.method);
    return c;
}

ServiceRuntime build_runtime(const ServiceConfig& config) {
    ServiceRuntime rt;
    rt.db = load_db(config.prompts_root);
    rt.llm = std::make_unique<LlmClient>(make_llm_backend(config.llm_backend, config.llm), config.llm_max_in_flight);
    WorkerPoolConfig pool;
    pool.command = config.sandbox_command;
    pool.pool_size = config.pool_size;
    rt.executor = make_executor(config.executor, std::move(pool));
    return rt;
}

// --- handlers --------------------------------------------------------------------

Gateway::Gateway(ServiceConfig config, const PromptsDatabase& db, LlmClient& llm, Executor& executor)
    : config_(std::move(config)), db_(db), llm_(llm), executor_(executor) {}

HttpResponse Gateway::handle_task(std::string_view body) {
    const auto start = Clock::now();
    if (body.size() > config_.max_body_bytes)
        return {413, error_body("PayloadTooLarge",
                                "request body exceeds " + std::to_string(config_.max_body_bytes) + " bytes")};
    TaskRequest req;
    try {
        req = parse_request(body, db_);
    } catch (const UnknownTask& e) {
        return {404, error_body("UnknownTask", e.what())};
    } catch (const MalformedPayload& e) {
        return {400, error_body("MalformedPayload", e.what())};
    } catch (const Error& e) {
        return {400, error_body("MalformedPayload", e.what())};
    }

    const TaskDescriptor& task = db_.task(req.task_id);
    FinalResult result;
    if (task.kind == TaskKind::table_qa) {
        result = run_method(*req.table, req.question, config_.method, Backends{db_, llm_, executor_});
    } else {
        result = run_text_task(task, req.data, db_, llm_);
    }

    const double latency_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    if (result.state.llm_unavailable)
        return {503, error_body("BackendUnavailable", result.state.error.value_or("LLM backend unavailable"))};

    nlohmann::ordered_json out;
    out["task"] = req.task_id;
    if (req.task_step) out["step"] = *req.task_step;
    out["answer"] = result.answer.value;
    out["provenance"] = to_string(result.answer.provenance);
    out["method"] = result.state.method;
    out["stages"] = result.state.stages();
    out["usage"] = to_json(result.usage(), true);
    out["latency_ms"] = latency_ms;
    out["llm_ms"] = result.llm_s * 1000.0;
    out["execution_ms"] = result.execution_s * 1000.0;
    if (result.state.error) out["error"] = *result.state.error;
    if (!result.state.warnings.empty()) out["warnings"] = result.state.warnings;
    return {200, out.dump()};
}

HttpResponse Gateway::handle_health() {
    bool reachable;
    {
        std::lock_guard lock(probe_mutex_);
        const auto now = Clock::now();
        if (!probed_at_ ||
            std::chrono::duration<double>(now - *probed_at_).count() >= config_.health_probe_ttl_s) {
            llm_reachable_ = llm_.probe();
            probed_at_ = now;
        }
        reachable = llm_reachable_;
    }
    const ExecutorStatus ex = executor_.status();
    const bool degraded = !reachable || ex.exhausted;

    nlohmann::ordered_json out;
    out["status"] = degraded ? "degraded" : "ok";
    out["db_digest"] = db_.digest();
    out["llm"] = reachable ? "reachable" : "unreachable";
    out["llm_backend"] = to_string(llm_.kind());
    out["executor"] = {{"kind", ex.kind},       {"pool_size", ex.pool_size},     {"idle", ex.idle},
                       {"busy", ex.busy},       {"queue_depth", ex.queue_depth}, {"exhausted", ex.exhausted}};
    return {200, out.dump()};
}

// --- server ----------------------------------------------------------------------

struct GatewayServer::Impl {
    Gateway& gateway;
    httplib::Server server;
    std::thread thread;

    explicit Impl(Gateway& g) : gateway(g) {
        const auto& cfg = gateway.config();
        const std::size_t threads = cfg.max_concurrent_requests;
        server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
        server.set_payload_max_length(cfg.max_body_bytes);
        server.Post("/v1/tasks", [this](const httplib::Request& req, httplib::Response& res) {
            HttpResponse r = gateway.handle_task(req.body);
            res.status = r.status;
            res.set_content(r.body, "application/json");
        });
        server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
            HttpResponse r = gateway.handle_health();
            res.status = r.status;
            res.set_content(r.body, "application/json");
        });
        server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (res.body.empty()) {
                const std::string kind = res.status == 413 ? "PayloadTooLarge" : "HttpError";
                res.set_content(error_body(kind, "HTTP " + std::to_string(res.status)), "application/json");
            }
        });
    }
};

GatewayServer::GatewayServer(Gateway& gateway) : impl_(std::make_unique<Impl>(gateway)) {}

GatewayServer::~GatewayServer() { stop(); }

int GatewayServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void GatewayServer::run(const std::string& host, int port) {
    if (!impl_->server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void GatewayServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace tabpot
