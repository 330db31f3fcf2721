#include "tabpot/llm_client.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <thread>

#include <httplib.h>

#include "tabpot/errors.hpp"

namespace tabpot {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void set_timeouts(httplib::Client& client, double seconds) {
    const auto whole = static_cast<time_t>(seconds);
    const auto micros = static_cast<time_t>((seconds - static_cast<double>(whole)) * 1e6);
    client.set_connection_timeout(whole, micros);
    client.set_read_timeout(whole, micros);
    client.set_write_timeout(whole, micros);
}

}  // namespace

void validate(const LlmConfig& config) {
    if (!(config.temperature >= 0.0)) throw PreconditionError("temperature must be >= 0");
    if (config.max_tokens <= 0) throw PreconditionError("max_tokens must be positive");
    if (!(config.timeout_s > 0.0)) throw PreconditionError("request timeout must be positive");
    if (config.retries < 0) throw PreconditionError("retry count must be >= 0");
    if (!(config.backoff_s >= 0.0)) throw PreconditionError("retry backoff must be >= 0");
    if (config.base_url.rfind("http://", 0) != 0)
        throw PreconditionError("base URL must start with http:// (got '" + config.base_url + "')");
}

LlmConfig apply_env_overrides(LlmConfig config) {
    if (const char* v = std::getenv("TABPOT_LLM_BASE_URL"); v && *v) config.base_url = v;
    if (const char* v = std::getenv("TABPOT_LLM_MODEL"); v && *v) config.model = v;
    if (const char* v = std::getenv("TABPOT_LLM_API_KEY"); v && *v) config.api_key = v;
    return config;
}

std::string_view to_string(BackendKind kind) { return kind == BackendKind::http ? "http" : "mock"; }

// --- HTTP -----------------------------------------------------------------------

nlohmann::ordered_json make_chat_request(const LlmConfig& config, const Prompt& prompt) {
    nlohmann::ordered_json body;
    body["model"] = config.model;
    body["messages"] = nlohmann::ordered_json::array();
    for (const auto& m : prompt.messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    body["temperature"] = config.temperature;
    body["max_tokens"] = config.max_tokens;
    return body;
}

HttpBackend::HttpBackend(LlmConfig config) : config_(std::move(config)) {
    validate(config_);
    const std::string rest = config_.base_url.substr(7);
    const auto slash = rest.find('/');
    host_ = "http://" + rest.substr(0, slash);
    if (slash != std::string::npos) path_prefix_ = rest.substr(slash);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

CompletionResult HttpBackend::complete(const Prompt& prompt) {
    const std::string body = make_chat_request(config_, prompt).dump();
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
    const std::string path = path_prefix_ + "/v1/chat/completions";

    const auto start = Clock::now();
    double backoff = config_.backoff_s;
    for (int attempt = 0;; ++attempt) {
        httplib::Client client(host_);
        set_timeouts(client, config_.timeout_s);
        const auto attempt_start = Clock::now();
        auto res = client.Post(path, headers, body, "application/json");
        const bool last = attempt >= config_.retries;
        if (!res) {
            const auto err = res.error();
            const double took = seconds_since(attempt_start);
            if (err == httplib::Error::ConnectionTimeout ||
                (err == httplib::Error::Read && took >= 0.95 * config_.timeout_s))
                throw LlmTimeout("LLM request timed out after " + std::to_string(took) + " s");
            if (last) throw TransportError("LLM transport failure: " + httplib::to_string(err));
        } else if (res->status >= 500 && !last) {
            // retried below
        } else if (res->status < 200 || res->status >= 300) {
            throw EndpointError(res->status, res->body);
        } else {
            nlohmann::json doc;
            try {
                doc = nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::parse_error&) {
                throw EndpointError(res->status, res->body);
            }
            CompletionResult out;
            out.backend = BackendKind::http;
            out.retries = attempt;
            try {
                const auto& content = doc.at("choices").at(0).at("message").at("content");
                out.text = content.is_string() ? content.get<std::string>() : std::string{};
            } catch (const nlohmann::json::exception&) {
                throw EndpointError(res->status, res->body);
            }
            out.prompt_tokens = estimate_tokens(prompt.flatten());
            out.completion_tokens = estimate_tokens(out.text);
            if (auto u = doc.find("usage"); u != doc.end() && u->is_object()) {
                if (u->contains("prompt_tokens") && u->at("prompt_tokens").is_number_unsigned()) {
                    out.prompt_tokens = u->at("prompt_tokens").get<std::size_t>();
                    out.usage_reported = true;
                }
                if (u->contains("completion_tokens") && u->at("completion_tokens").is_number_unsigned())
                    out.completion_tokens = u->at("completion_tokens").get<std::size_t>();
            }
            out.latency_s = seconds_since(start);
            return out;
        }
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
        backoff *= 2.0;
    }
}

bool HttpBackend::probe() {
    httplib::Client client(host_);
    set_timeouts(client, std::min(2.0, config_.timeout_s));
    auto res = client.Get(path_prefix_ + "/v1/models");
    return static_cast<bool>(res);
}

// --- mock -------------------------------------------------------------------------

struct MockBackend::Rule {
    MockRule spec;
    std::optional<std::regex> pattern;
    bool consumed = false;

    bool hits(const std::string& text) const {
        if (pattern) return std::regex_search(text, *pattern);
        return text.find(spec.match) != std::string::npos;
    }
};

MockBackend::MockBackend(std::vector<MockRule> rules) {
    for (auto& r : rules) {
        auto rule = std::make_shared<Rule>();
        if (r.regex) {
            try {
                rule->pattern.emplace(r.match, std::regex::ECMAScript);
            } catch (const std::regex_error& e) {
                throw PreconditionError("invalid mock pattern '" + r.match + "': " + e.what());
            }
        }
        rule->spec = std::move(r);
        rules_.push_back(std::move(rule));
    }
}

std::unique_ptr<MockBackend> MockBackend::from_json(const nlohmann::json& doc) {
    if (!doc.is_array()) throw PreconditionError("mock script must be a JSON list of rules");
    std::vector<MockRule> rules;
    for (const auto& item : doc) {
        if (!item.is_object() || !item.contains("match") || !item.contains("completion"))
            throw PreconditionError("mock rule needs \"match\" and \"completion\"");
        MockRule r;
        r.match = item.at("match").get<std::string>();
        r.completion = item.at("completion").get<std::string>();
        r.once = item.value("once", false);
        r.regex = item.value("regex", false);
        rules.push_back(std::move(r));
    }
    return std::make_unique<MockBackend>(std::move(rules));
}

std::unique_ptr<MockBackend> MockBackend::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFiles("cannot open mock script: " + path);
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw PreconditionError("invalid mock script " + path + ": " + e.what());
    }
}

CompletionResult MockBackend::complete(const Prompt& prompt) {
    const auto start = Clock::now();
    const std::string& final_turn = prompt.final_user_turn();
    const std::string full = prompt.flatten();
    std::lock_guard lock(mutex_);
    ++calls_;
    for (const std::string* text : {&final_turn, &full}) {
        for (auto& rule : rules_) {
            if (rule->consumed || !rule->hits(*text)) continue;
            if (rule->spec.once) rule->consumed = true;
            CompletionResult out;
            out.text = rule->spec.completion;
            out.backend = BackendKind::mock;
            out.prompt_tokens = estimate_tokens(full);
            out.completion_tokens = estimate_tokens(out.text);
            out.latency_s = seconds_since(start);
            return out;
        }
    }
    std::string head = final_turn.substr(0, 160);
    throw ScriptMiss("no mock rule matches the " + prompt.stage + " prompt; final turn starts: " + head);
}

std::size_t MockBackend::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

// --- client -------------------------------------------------------------------------

LlmClient::LlmClient(std::unique_ptr<LlmBackend> backend, std::size_t max_in_flight)
    : backend_(std::move(backend)), max_in_flight_(max_in_flight == 0 ? 1 : max_in_flight) {
    if (!backend_) throw PreconditionError("LLM client needs a backend");
}

CompletionResult LlmClient::complete(const Prompt& prompt) {
    {
        std::unique_lock lock(mutex_);
        slot_free_.wait(lock, [this] { return in_flight_ < max_in_flight_; });
        ++in_flight_;
    }
    struct Release {
        LlmClient* self;
        ~Release() {
            {
                std::lock_guard lock(self->mutex_);
                --self->in_flight_;
            }
            self->slot_free_.notify_one();
        }
    } release{this};
    ++calls_;
    return backend_->complete(prompt);
}

std::size_t LlmClient::in_flight() const {
    std::lock_guard lock(mutex_);
    return in_flight_;
}

// --- usage ---------------------------------------------------------------------------

UsageSummary usage_totals(const std::vector<std::vector<CompletionResult>>& per_question) {
    UsageSummary s;
    s.questions = per_question.size();
    for (const auto& question : per_question) {
        for (const auto& r : question) {
            ++s.calls;
            s.total_prompt_tokens += r.prompt_tokens;
            s.total_completion_tokens += r.completion_tokens;
            s.total_latency_s += r.latency_s;
        }
    }
    if (s.questions > 0) {
        s.avg_prompt_tokens = static_cast<double>(s.total_prompt_tokens) / static_cast<double>(s.questions);
        s.avg_completion_tokens = static_cast<double>(s.total_completion_tokens) / static_cast<double>(s.questions);
    }
    if (s.total_latency_s > 0.0) {
        s.prompt_throughput = static_cast<double>(s.total_prompt_tokens) / s.total_latency_s;
        s.completion_throughput = static_cast<double>(s.total_completion_tokens) / s.total_latency_s;
    }
    return s;
}

nlohmann::ordered_json to_json(const UsageSummary& usage, bool include_timing) {
    nlohmann::ordered_json out;
    out["questions"] = usage.questions;
    out["calls"] = usage.calls;
    out["total_prompt_tokens"] = usage.total_prompt_tokens;
    out["total_completion_tokens"] = usage.total_completion_tokens;
    out["avg_prompt_tokens"] = usage.avg_prompt_tokens;
    out["avg_completion_tokens"] = usage.avg_completion_tokens;
    if (include_timing) {
        out["total_latency_s"] = usage.total_latency_s;
        out["prompt_throughput"] = usage.prompt_throughput;
        out["completion_throughput"] = usage.completion_throughput;
    }
    return out;
}

std::unique_ptr<LlmBackend> make_llm_backend(std::string_view spec, const LlmConfig& config) {
    if (spec == "http") return std::make_unique<HttpBackend>(config);
    if (spec.rfind("mock:", 0) == 0) return MockBackend::from_file(std::string(spec.substr(5)));
    throw PreconditionError("unknown LLM backend '" + std::string(spec) + "' (expected http or mock:<script>)");
}

}  // namespace tabpot
