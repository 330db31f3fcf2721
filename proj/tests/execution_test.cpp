#include <gtest/gtest.h>

#include <chrono>
#include <future>
#include <thread>

#include "support.hpp"
#include "tabpot/errors.hpp"
#include "tabpot/execution.hpp"

using namespace tabpot;
namespace tt = tabpot::testing;

namespace {

ExecutionRequest request_for(const std::string& body, std::optional<std::string> normalizer = {},
                             double timeout = 5.0) {
    ExecutionRequest r;
    r.reasoning_code = {"def solution(table):\n    " + body + "\n    return 0", "solution", CodeRole::reasoning};
    if (normalizer) r.normalizer_code = CodeArtifact{"def normalize(table):\n    " + *normalizer + "\n    return table",
                                                     "normalize", CodeRole::normalization};
    r.table = {{"Result", {"W 21-14", "L 23-24"}}};
    r.timeout_s = timeout;
    return r;
}

WorkerPoolConfig fake_pool(std::size_t size = 2) {
    WorkerPoolConfig c;
    c.command = {tt::fake_worker_path()};
    c.pool_size = size;
    return c;
}

}  // namespace

TEST(Outcome, JsonRoundTrip) {
    auto o = ExecutionOutcome::failure("TypeError", "bad", "tb");
    o.wall_time = 0.25;
    const auto back = outcome_from_json(to_json(o));
    EXPECT_EQ(back.status, ExecutionStatus::error);
    EXPECT_EQ(back.error_type, "TypeError");
    EXPECT_EQ(back.traceback, "tb");
    EXPECT_DOUBLE_EQ(back.wall_time, 0.25);
    EXPECT_FALSE(to_json(o, false).contains("wall_time"));
    EXPECT_THROW(outcome_from_json(nlohmann::json::parse(R"({"status":"ok"})")), ProtocolError);
    EXPECT_THROW(outcome_from_json(nlohmann::json::parse(R"({"status":"maybe"})")), ProtocolError);
}

TEST(Request, TimeoutBounds) {
    EXPECT_THROW(validate_request(request_for("pass", {}, 0.5)), PreconditionError);
    EXPECT_THROW(validate_request(request_for("pass", {}, 121)), PreconditionError);
    EXPECT_NO_THROW(validate_request(request_for("pass", {}, 1)));
    EXPECT_NO_THROW(validate_request(request_for("pass", {}, 120)));
}

TEST(Wire, RequestShape) {
    const auto j = make_wire_request("req-1", request_for("pass", std::string("pass")));
    EXPECT_EQ(j["id"], "req-1");
    EXPECT_EQ(j["entry"], "solution");
    EXPECT_EQ(j["normalizer_entry"], "normalize");
    EXPECT_EQ(j["table"]["Result"][1], "L 23-24");
    EXPECT_EQ(j["time_budget_s"], 5.0);
    EXPECT_FALSE(make_wire_request("x", request_for("pass")).contains("normalizer_code"));
}

TEST(Wire, ReplyValidation) {
    EXPECT_EQ(parse_wire_reply(R"({"id":"a","status":"ok","value":"68"})", "a").value, "68");
    EXPECT_THROW(parse_wire_reply("oops", "a"), ProtocolError);
    EXPECT_THROW(parse_wire_reply(R"({"status":"ok","value":"1"})", "a"), ProtocolError);
    EXPECT_THROW(parse_wire_reply(R"({"id":"b","status":"ok","value":"1"})", "a"), ProtocolError);
    EXPECT_THROW(parse_wire_reply(R"({"id":"a","status":"timeout"})", "a"), ProtocolError);
    EXPECT_THROW(parse_wire_reply(R"({"id":"a","status":"error"})", "a"), ProtocolError);
}

TEST(Stub, SequencesRepeatLastOutcome) {
    StubExecutor stub;
    stub.on_fingerprint(code_fingerprint(request_for("a")),
                        {ExecutionOutcome::failure("E", "m"), ExecutionOutcome::success("1")});
    EXPECT_FALSE(stub.execute(request_for("a")).ok());
    EXPECT_EQ(stub.execute(request_for("a")).value, "1");
    EXPECT_EQ(stub.execute(request_for("a")).value, "1");
    EXPECT_EQ(stub.execute(request_for("b")).error_type, "StubMiss");
    EXPECT_EQ(stub.calls(), 4u);
    EXPECT_EQ(stub.requests().size(), 4u);
}

TEST(Stub, NormalizerFilters) {
    auto stub = tt::tide_executor();
    ExecutionRequest r = request_for("return sum(table['Result'])");
    EXPECT_EQ(stub->execute(r).error_type, "TypeError");
    r.normalizer_code = CodeArtifact{"def normalize(t):\n    return t", "normalize", CodeRole::normalization};
    EXPECT_EQ(stub->execute(r).value, "68");
}

TEST(Stub, FromJson) {
    auto stub = StubExecutor::from_json(nlohmann::json::parse(R"({
        "default": {"status": "ok", "value": "fallback"},
        "entries": [{"reasoning_contains": "max(", "outcomes": [{"status": "ok", "value": "9"}]}]})"));
    EXPECT_EQ(stub->execute(request_for("x = max(1, 9)")).value, "9");
    EXPECT_EQ(stub->execute(request_for("pass")).value, "fallback");
    EXPECT_THROW(StubExecutor::from_json(nlohmann::json::parse(R"({"entries":[{"outcomes":[]}]})")),
                 PreconditionError);
    EXPECT_EQ(stub->status().kind, "stub");
}

TEST(Fingerprint, DependsOnNormalizer) {
    EXPECT_NE(code_fingerprint(request_for("a")), code_fingerprint(request_for("a", std::string("b"))));
    EXPECT_EQ(code_fingerprint(request_for("a")), code_fingerprint(request_for("a")));
}

TEST(Subprocess, OkAndErrorReplies) {
    SubprocessExecutor ex(fake_pool());
    auto ok = ex.execute(request_for("#fake:value=68"));
    EXPECT_TRUE(ok.ok());
    EXPECT_EQ(ok.value, "68");
    EXPECT_GT(ok.wall_time, 0.0);
    auto err = ex.execute(request_for("#fake:error=KeyError:'Total'"));
    EXPECT_EQ(err.status, ExecutionStatus::error);
    EXPECT_EQ(err.error_type, "KeyError");
    EXPECT_EQ(err.error_message, "'Total'");
}

TEST(Subprocess, TableAndNormalizerReachWorker) {
    SubprocessExecutor ex(fake_pool());
    auto echo = ex.execute(request_for("#fake:echo_table"));
    EXPECT_EQ(nlohmann::json::parse(*echo.value)["Result"][0], "W 21-14");
    EXPECT_EQ(ex.execute(request_for("#fake:needs_normalizer\n#fake:value=68")).error_type, "TypeError");
    EXPECT_EQ(ex.execute(request_for("#fake:needs_normalizer\n#fake:value=68", std::string("#fake:normalize"))).value,
              "68");
    const auto n = ex.execute(request_for("#fake:value=1", std::string("#fake:normalizer_error")));
    EXPECT_EQ(n.error_type->rfind(kNormalizerErrorPrefix, 0), 0u);
}

TEST(Subprocess, HangIsKilledAtDeadline) {
    SubprocessExecutor ex(fake_pool(1));
    const auto t0 = std::chrono::steady_clock::now();
    auto out = ex.execute(request_for("#fake:hang", {}, 1.0));
    const double took = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_EQ(out.status, ExecutionStatus::timeout);
    EXPECT_EQ(out.error_type, "Timeout");
    EXPECT_GE(out.wall_time, 1.0);
    EXPECT_LT(took, 3.0);
    // The pool recovers with a fresh worker.
    EXPECT_EQ(ex.execute(request_for("#fake:value=2")).value, "2");
}

TEST(Subprocess, MalformedRepliesAreProtocolErrors) {
    SubprocessExecutor ex(fake_pool());
    EXPECT_THROW(ex.execute(request_for("#fake:garbage")), ProtocolError);
    EXPECT_THROW(ex.execute(request_for("#fake:wrongid")), ProtocolError);
    EXPECT_THROW(ex.execute(request_for("#fake:silent")), ProtocolError);
    EXPECT_EQ(ex.execute(request_for("#fake:value=ok")).value, "ok");
}

TEST(Subprocess, StderrNoiseDoesNotBlock) {
    SubprocessExecutor ex(fake_pool(1));
    EXPECT_EQ(ex.execute(request_for("#fake:stderr\n#fake:value=3")).value, "3");
}

TEST(Subprocess, PoolBoundsConcurrency) {
    SubprocessExecutor ex(fake_pool(2));
    std::vector<std::future<ExecutionOutcome>> futures;
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 4; ++i)
        futures.push_back(std::async(std::launch::async, [&ex, i] {
            return ex.execute(request_for("#fake:sleep=0.4\n#fake:value=" + std::to_string(i)));
        }));
    std::this_thread::sleep_for(std::chrono::milliseconds(150));
    const auto mid = ex.status();
    EXPECT_EQ(mid.busy, 2u);
    EXPECT_TRUE(mid.exhausted);
    EXPECT_EQ(mid.queue_depth, 2u);
    for (int i = 0; i < 4; ++i) EXPECT_EQ(futures[i].get().value, std::to_string(i));
    const double took = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_GE(took, 0.8);
    EXPECT_FALSE(ex.status().exhausted);
}

TEST(Subprocess, ShutdownReapsIdleWorkers) {
    auto ex = std::make_unique<SubprocessExecutor>(fake_pool(2));
    EXPECT_EQ(ex->status().idle, 2u);
    ex->shutdown();
    EXPECT_EQ(ex->status().idle, 0u);
    EXPECT_THROW(ex->execute(request_for("#fake:value=1")), WorkerSpawnFailure);
}

TEST(Subprocess, WorkersAreSingleUse) {
    SubprocessExecutor ex(fake_pool(1));
    // Each request gets a new process, so the echoing worker never sees two ids.
    for (int i = 0; i < 5; ++i) EXPECT_EQ(ex.execute(request_for("#fake:value=" + std::to_string(i))).value,
                                          std::to_string(i));
}

TEST(Subprocess, MissingBinaryFailsToSpawn) {
    WorkerPoolConfig c;
    c.command = {"/nonexistent/sandbox-worker"};
    EXPECT_THROW(SubprocessExecutor ex(c), WorkerSpawnFailure);
    c.command.clear();
    EXPECT_THROW(SubprocessExecutor ex(c), WorkerSpawnFailure);
}

TEST(Factory, Specs) {
    EXPECT_EQ(make_executor("stub", {})->status().kind, "stub");
    EXPECT_EQ(make_executor("sandbox", fake_pool())->status().kind, "subprocess");
    EXPECT_THROW(make_executor("docker", {}), PreconditionError);
    setenv("TABPOT_SANDBOX_CMD", "python3 -m sandbox --strict", 1);
    EXPECT_EQ(default_sandbox_command(), (std::vector<std::string>{"python3", "-m", "sandbox", "--strict"}));
    unsetenv("TABPOT_SANDBOX_CMD");
    EXPECT_EQ(default_sandbox_command().back(), "tabpot_sandbox");
}
