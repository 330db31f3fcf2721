// Command-line front end: eval, serve, validate-db.

#include <csignal>
#include <fstream>
#include <iostream>

#include <unistd.h>

#include <CLI11.hpp>

#include "tabpot/errors.hpp"
#include "tabpot/eval.hpp"
#include "tabpot/gateway.hpp"

namespace {

struct EvalArgs {
    std::string dataset;
    std::string root = ".";
    std::string method = "tabpot";
    std::string ablate;
    std::string llm = "http";
    std::string executor = "sandbox";
    std::string prompts = TABPOT_DEFAULT_PROMPTS_DIR;
    std::optional<std::size_t> limit;
    std::optional<std::uint64_t> seed;
    std::size_t workers = 1;
    std::string out;
    std::string crossover;
    std::string compare;
    std::string checkpoint;
    bool resume = false;
    bool allow_count_mismatch = false;
    bool no_timing = false;
    std::optional<std::size_t> routing_threshold;
    double timeout_s = 30.0;
    std::size_t pool_size = 2;
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw tabpot::MissingFiles("cannot write " + path);
    out << content;
}

tabpot::MethodConfig method_from(const EvalArgs& a, const std::string& name, bool with_options) {
    auto m = tabpot::parse_method(name);
    m.execution_timeout_s = a.timeout_s;
    if (with_options) {
        if (!a.ablate.empty()) tabpot::apply_ablation(m, a.ablate);
        m.routing_threshold = a.routing_threshold;
    }
    tabpot::validate(m);
    return m;
}

int run_eval_command(const EvalArgs& a) {
    using namespace tabpot;
    LoadOptions lo;
    lo.allow_count_mismatch = a.allow_count_mismatch;
    DatasetSplit split = load_split(a.dataset, a.root, lo);
    for (const auto& w : split.warnings) std::cerr << "warning: " << w << "\n";

    const PromptsDatabase db = load_db(a.prompts);
    LlmClient llm(make_llm_backend(a.llm, apply_env_overrides(LlmConfig{})));
    WorkerPoolConfig pool;
    pool.pool_size = a.pool_size;
    auto executor = make_executor(a.executor, pool);
    const Backends backends{db, llm, *executor};

    EvalOptions opts;
    opts.limit = a.limit;
    opts.seed = a.seed;
    opts.workers = a.workers;
    opts.checkpoint_path = a.checkpoint;
    opts.resume = a.resume;

    const MethodConfig method = method_from(a, a.method, true);
    const EvalReport report = run_eval(split, method, backends, opts);
    const std::string json = to_json(report, !a.no_timing).dump(2) + "\n";
    if (a.out.empty()) {
        std::cout << json;
    } else {
        write_file(a.out, json);
    }
    std::cerr << report.method << " on " << report.split << ": " << report.overall.matches << "/"
              << report.overall.items << " correct (EM " << report.overall.accuracy * 100.0 << "%)\n";

    if (!a.crossover.empty()) {
        std::string other = a.compare;
        if (other.empty()) other = method.kind == MethodKind::tabpot ? "pot:pandas" : "tabpot";
        EvalOptions second = opts;
        second.checkpoint_path.clear();
        second.resume = false;
        const EvalReport cmp = run_eval(split, method_from(a, other, false), backends, second);
        const CrossoverReport cr = crossover_report(report.records, cmp.records, report.method, cmp.method);
        for (const auto& w : cr.warnings) std::cerr << "warning: " << w << "\n";
        write_file(a.crossover, to_csv(cr));
    }
    return 0;
}

volatile std::sig_atomic_t g_stop = 0;

void handle_signal(int) { g_stop = 1; }

int run_serve_command(const std::string& config_path, const std::string& host, int port) {
    using namespace tabpot;
    ServiceConfig cfg = config_path.empty() ? ServiceConfig{} : load_service_config(config_path);
    if (!host.empty()) cfg.host = host;
    if (port >= 0) cfg.port = port;
    cfg = finalize(std::move(cfg));
    ServiceRuntime rt = build_runtime(cfg);
    if (!rt.db.validation().passed)
        for (const auto& f : rt.db.validation().failures) std::cerr << "prompts db: " << f << "\n";
    Gateway gateway(cfg, rt.db, *rt.llm, *rt.executor);
    GatewayServer server(gateway);
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    const int bound = server.start(cfg.host, cfg.port);
    std::cerr << "listening on " << cfg.host << ":" << bound << " (db " << rt.db.digest().substr(0, 12) << ")\n";
    while (!g_stop) pause();
    server.stop();
    if (auto* sub = dynamic_cast<SubprocessExecutor*>(rt.executor.get())) sub->shutdown();
    return 0;
}

int run_validate_command(const std::string& root) {
    using namespace tabpot;
    const PromptsDatabase db = load_db(root);
    const ValidationReport& r = db.validation();
    std::cout << "digest: " << db.digest() << "\n";
    for (const auto& [op, n] : r.planning_counts) std::cout << "planning " << op << ": " << n << "\n";
    for (const auto& [op, n] : r.conducting_counts) std::cout << "conducting " << op << ": " << n << "\n";
    for (const auto& w : r.warnings) std::cout << "warning: " << w << "\n";
    for (const auto& f : r.failures) std::cout << "FAIL " << f << "\n";
    std::cout << (r.passed ? "pass" : "fail") << "\n";
    return r.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Table question answering gateway and evaluation harness"};
    app.require_subcommand(1);

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Run a method over a dataset split and report EM accuracy");
    eval->add_option("--dataset", ea.dataset, "wikitableqa_test | tabfact_full | tabfact_small | fixture:<path>")
        ->required();
    eval->add_option("--root", ea.root, "Dataset root directory");
    eval->add_option("--method", ea.method, "direct | cot | pot:stdlib | pot:stdlib_para | pot:pandas | tabpot");
    eval->add_option("--ablate", ea.ablate, "Comma-separated stages to disable: plan,correction,default");
    eval->add_option("--llm", ea.llm, "http | mock:<script>");
    eval->add_option("--executor", ea.executor, "sandbox | stub:<table>");
    eval->add_option("--prompts", ea.prompts, "Prompts database root");
    eval->add_option("--limit", ea.limit, "Evaluate at most N items");
    eval->add_option("--seed", ea.seed, "Shuffle items with this seed before --limit");
    eval->add_option("--workers", ea.workers, "Items evaluated concurrently");
    eval->add_option("--out", ea.out, "Report JSON path (stdout when omitted)");
    eval->add_option("--crossover", ea.crossover, "Write the table-size crossover CSV here");
    eval->add_option("--compare", ea.compare, "Second method for --crossover");
    eval->add_option("--checkpoint", ea.checkpoint, "Append one JSON line per finished item");
    eval->add_flag("--resume", ea.resume, "Skip items already in the checkpoint");
    eval->add_flag("--allow-count-mismatch", ea.allow_count_mismatch, "Accept splits of unexpected size");
    eval->add_flag("--no-timing", ea.no_timing, "Leave timings out of the report");
    eval->add_option("--routing-threshold", ea.routing_threshold, "Answer small tables with cot (table tokens)");
    eval->add_option("--timeout", ea.timeout_s, "Code execution timeout in seconds")->check(CLI::Range(1.0, 120.0));
    eval->add_option("--pool-size", ea.pool_size, "Sandbox worker processes");

    std::string config_path;
    std::string host;
    int port = -1;
    auto* serve = app.add_subcommand("serve", "Serve POST /v1/tasks and GET /healthz");
    serve->add_option("--config", config_path, "Service config JSON");
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port");

    std::string db_root = TABPOT_DEFAULT_PROMPTS_DIR;
    auto* validate = app.add_subcommand("validate-db", "Load and validate a prompts database");
    validate->add_option("--prompts", db_root, "Prompts database root");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*eval) return run_eval_command(ea);
        if (*serve) return run_serve_command(config_path, host, port);
        if (*validate) return run_validate_command(db_root);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
