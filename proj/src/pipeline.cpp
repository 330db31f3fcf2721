#include "tabpot/pipeline.hpp"

#include <chrono>

#include "tabpot/errors.hpp"

namespace tabpot {

namespace {

using Clock = std::chrono::steady_clock;

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

Answer error_answer() { return Answer{std::string(kErrorAnswer), Provenance::error}; }

// Holds the state of one request and the bookkeeping shared by all methods.
class Run {
public:
    Run(std::string method, const Backends* backends, LlmClient& llm)
        : backends_(backends), llm_(llm), start_(Clock::now()) {
        result_.state.method = std::move(method);
    }

    PipelineState& state() { return result_.state; }

    const std::string& ask(const Prompt& prompt, std::string stage) {
        const auto t0 = Clock::now();
        CompletionResult r = llm_.complete(prompt);
        const double took = std::chrono::duration<double>(Clock::now() - t0).count();
        TranscriptEntry e;
        e.stage = stage;
        e.prompt_digest = prompt.digest();
        e.completion = r.text;
        e.prompt_tokens = r.prompt_tokens;
        e.completion_tokens = r.completion_tokens;
        e.latency_s = r.latency_s;
        auto& st = result_.state;
        st.transcript.push_back(std::move(e));
        st.calls.push_back(std::move(r));
        ++st.round_index;
        result_.timings.push_back({std::move(stage), took});
        result_.llm_s += took;
        return st.transcript.back().completion;
    }

    ExecutionOutcome execute(ExecutionRequest request) {
        const auto t0 = Clock::now();
        ExecutionOutcome outcome;
        try {
            outcome = backends_->executor.execute(request);
        } catch (const ProtocolError& e) {
            outcome = ExecutionOutcome::failure("ProtocolError", e.what());
        } catch (const WorkerSpawnFailure& e) {
            outcome = ExecutionOutcome::failure("WorkerSpawnFailure", e.what());
        } catch (const PreconditionError& e) {
            outcome = ExecutionOutcome::failure("PreconditionError", e.what());
        }
        const double took = std::chrono::duration<double>(Clock::now() - t0).count();
        result_.timings.push_back({"execute", took});
        result_.execution_s += took;
        result_.state.outcomes.push_back(outcome);
        return outcome;
    }

    FinalResult finish(Answer answer) {
        result_.answer = answer;
        result_.state.final = std::move(answer);
        result_.total_s = std::chrono::duration<double>(Clock::now() - start_).count();
        return std::move(result_);
    }

    FinalResult fail(const std::exception& e, bool unavailable) {
        result_.state.error = e.what();
        result_.state.llm_unavailable = unavailable;
        return finish(error_answer());
    }

private:
    const Backends* backends_;
    LlmClient& llm_;
    FinalResult result_;
    Clock::time_point start_;
};

// Runs `body` and turns backend failures into an error answer.
template <class Body>
FinalResult guarded(Run& run, Body&& body) {
    try {
        return body();
    } catch (const LlmTimeout& e) {
        return run.fail(e, true);
    } catch (const TransportError& e) {
        return run.fail(e, true);
    } catch (const Error& e) {
        return run.fail(e, false);
    } catch (const std::exception& e) {
        return run.fail(e, false);
    }
}

ExecutionRequest make_request(const CodeArtifact& code, const std::optional<CodeArtifact>& normalizer,
                              TableDict table, const MethodConfig& method) {
    ExecutionRequest r;
    r.reasoning_code = code;
    r.normalizer_code = normalizer;
    r.table = std::move(table);
    r.timeout_s = method.execution_timeout_s;
    return r;
}

// Alignment for a completion or default answer that lacks braces. Returns
// nullopt when the alignment completion has no braces either.
std::optional<Answer> align(Run& run, const PromptsDatabase& db, std::string_view question, std::string_view raw,
                            const MethodConfig& method) {
    const Prompt p = build_alignment_prompt(db, question, raw, method.limits);
    const std::string& completion = run.ask(p, "alignment");
    return try_parse_braced_answer(completion, Provenance::aligned);
}

}  // namespace

// --- configuration -------------------------------------------------------------

MethodConfig parse_method(std::string_view name) {
    MethodConfig m;
    if (name == "tabpot") {
        m.kind = MethodKind::tabpot;
    } else if (name == "direct") {
        m.kind = MethodKind::direct;
    } else if (name == "cot") {
        m.kind = MethodKind::cot;
    } else if (name == "pot:stdlib") {
        m.kind = MethodKind::pot;
        m.pot_variant = PotVariant::stdlib;
    } else if (name == "pot:stdlib_para") {
        m.kind = MethodKind::pot;
        m.pot_variant = PotVariant::stdlib_para;
    } else if (name == "pot:pandas" || name == "pot") {
        m.kind = MethodKind::pot;
        m.pot_variant = PotVariant::pandas;
    } else {
        throw PreconditionError("unknown method '" + std::string(name) +
                                "' (expected direct, cot, pot:stdlib, pot:stdlib_para, pot:pandas or tabpot)");
    }
    return m;
}

std::string method_name(const MethodConfig& method) {
    switch (method.kind) {
        case MethodKind::direct: return "direct";
        case MethodKind::cot: return "cot";
        case MethodKind::tabpot: return "tabpot";
        case MethodKind::pot:
            switch (method.pot_variant) {
                case PotVariant::stdlib: return "pot:stdlib";
                case PotVariant::stdlib_para: return "pot:stdlib_para";
                case PotVariant::pandas: return "pot:pandas";
            }
    }
    return "tabpot";
}

void apply_ablation(MethodConfig& method, std::string_view list) {
    std::size_t pos = 0;
    while (pos <= list.size()) {
        const auto comma = list.find(',', pos);
        const std::string item = trim(list.substr(pos, comma == std::string_view::npos ? std::string_view::npos
                                                                                         : comma - pos));
        if (item == "plan") {
            method.use_plan = false;
        } else if (item == "correction") {
            method.use_correction = false;
        } else if (item == "default") {
            method.use_default = false;
        } else if (!item.empty()) {
            throw PreconditionError("unknown ablation '" + item + "' (expected plan, correction or default)");
        }
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
}

void validate(const MethodConfig& method) {
    if (!(method.execution_timeout_s >= kMinTimeoutSeconds && method.execution_timeout_s <= kMaxTimeoutSeconds))
        throw PreconditionError("execution timeout must be within [1, 120] seconds");
    if (method.kind != MethodKind::tabpot &&
        (!method.use_plan || !method.use_correction || !method.use_default || method.routing_threshold))
        throw PreconditionError("ablation and routing options apply to tabpot only");
}

// --- state ---------------------------------------------------------------------

const std::string& PipelineState::output(std::size_t i) const {
    static const std::string empty;
    if (i == 0 || i > transcript.size()) return empty;
    return transcript[i - 1].completion;
}

std::vector<std::string> PipelineState::stages() const {
    std::vector<std::string> out;
    for (const auto& e : transcript) out.push_back(e.stage);
    return out;
}

UsageSummary FinalResult::usage() const { return usage_totals({state.calls}); }

nlohmann::ordered_json to_json(const FinalResult& result, bool include_timing) {
    const auto& st = result.state;
    nlohmann::ordered_json out;
    out["answer"] = result.answer.value;
    out["provenance"] = to_string(result.answer.provenance);
    out["method"] = st.method;
    out["round_index"] = st.round_index;
    out["stages"] = st.stages();
    nlohmann::ordered_json transcript = nlohmann::ordered_json::array();
    for (const auto& e : st.transcript) {
        nlohmann::ordered_json j;
        j["stage"] = e.stage;
        j["prompt_digest"] = e.prompt_digest;
        j["completion"] = e.completion;
        j["prompt_tokens"] = e.prompt_tokens;
        j["completion_tokens"] = e.completion_tokens;
        if (include_timing) j["latency_s"] = e.latency_s;
        transcript.push_back(std::move(j));
    }
    out["transcript"] = std::move(transcript);
    if (st.plan) {
        out["plan"] = {{"relevant_columns", st.plan->relevant_columns},
                       {"operations", nlohmann::ordered_json::array()},
                       {"programming_steps", st.plan->programming_steps}};
        for (auto op : st.plan->operations) out["plan"]["operations"].push_back(operation_name(op));
    }
    auto code_json = [](const CodeArtifact& c) {
        return nlohmann::ordered_json{{"entry", c.entry_name}, {"source", c.source}};
    };
    if (st.reasoning_code) out["reasoning_code"] = code_json(*st.reasoning_code);
    if (st.normalizer_code) out["normalizer_code"] = code_json(*st.normalizer_code);
    if (st.default_answer) out["default_answer"] = st.default_answer->value;
    out["outcomes"] = nlohmann::ordered_json::array();
    for (const auto& o : st.outcomes) out["outcomes"].push_back(to_json(o, include_timing));
    out["usage"] = to_json(result.usage(), include_timing);
    if (!st.warnings.empty()) out["warnings"] = st.warnings;
    if (st.error) out["error"] = *st.error;
    if (include_timing) {
        nlohmann::ordered_json t = nlohmann::ordered_json::array();
        for (const auto& s : result.timings) t.push_back({{"stage", s.stage}, {"seconds", s.seconds}});
        out["timings"] = std::move(t);
        out["total_s"] = result.total_s;
        out["llm_s"] = result.llm_s;
        out["execution_s"] = result.execution_s;
    }
    return out;
}

// --- methods -------------------------------------------------------------------

FinalResult run_tabpot(const SemiStructuredTable& table, std::string_view question, const MethodConfig& method,
                       const Backends& backends) {
    Run run("tabpot", &backends, backends.llm);
    return guarded(run, [&]() -> FinalResult {
        auto& st = run.state();
        const auto& db = backends.db;
        const StatisticsTable stats = build_statistics_table(table);

        Plan plan;
        if (method.use_plan) {
            const Prompt p = build_planning_prompt(db, table.title(), stats, question);
            plan = parse_plan(run.ask(p, "planning"));
            st.plan = plan;
        }

        ColumnSelection selection;
        if (!plan.relevant_columns.empty()) {
            selection = extract_columns(table, plan.relevant_columns);
            for (auto& w : selection.warnings) st.warnings.push_back(w);
        } else {
            selection.table = table;
            selection.fell_back_to_full_table = true;
        }
        const std::string details = render_column_details(selection.table, method.limits.column_details_tokens);

        const Prompt conducting = build_conducting_prompt(db, table.title(), stats, details, plan.programming_steps,
                                                          plan.operations, question);
        const std::string completion = run.ask(conducting, "conducting");
        st.default_answer = extract_default_answer(completion);
        const bool default_braced = default_answer_is_braced(completion);

        std::optional<CodeArtifact> code;
        try {
            code = extract_code(completion, CodeRole::reasoning, &st.warnings);
            st.reasoning_code = code;
        } catch (const NoCodeFound&) {
            st.warnings.push_back("conducting completion contains no code");
        }

        if (code) {
            const TableDict dict = to_column_dict(table);
            ExecutionOutcome outcome = run.execute(make_request(*code, std::nullopt, dict, method));
            if (outcome.ok()) return run.finish({*outcome.value, Provenance::code_execution});

            if (method.use_correction) {
                for (std::size_t attempt = 0; attempt < method.max_corrections; ++attempt) {
                    const Prompt p = build_correction_prompt(db, details, *code, outcome, method.limits);
                    const std::string& fix = run.ask(p, "correction");
                    std::optional<CodeArtifact> normalizer;
                    try {
                        normalizer = extract_code(fix, CodeRole::normalization, &st.warnings);
                    } catch (const NoCodeFound&) {
                        st.warnings.push_back("correction completion contains no code");
                        break;
                    }
                    st.normalizer_code = normalizer;
                    outcome = run.execute(make_request(*code, normalizer, dict, method));
                    if (outcome.ok())
                        return run.finish({*outcome.value, Provenance::code_execution_after_correction});
                }
            }
        }

        if (method.use_default && st.default_answer) {
            if (default_braced) return run.finish(*st.default_answer);
            if (auto aligned = align(run, db, question, st.default_answer->value, method)) return run.finish(*aligned);
            return run.finish(*st.default_answer);
        }
        return run.finish(error_answer());
    });
}

FinalResult run_baseline(const SemiStructuredTable& table, std::string_view question, const MethodConfig& method,
                         const Backends& backends) {
    if (method.kind == MethodKind::tabpot) throw PreconditionError("run_baseline called with the tabpot method");
    Run run(method_name(method), &backends, backends.llm);
    return guarded(run, [&]() -> FinalResult {
        auto& st = run.state();
        const auto& db = backends.db;
        BaselineMethod bm = BaselineMethod::direct;
        if (method.kind == MethodKind::cot) {
            bm = BaselineMethod::cot;
        } else if (method.kind == MethodKind::pot) {
            bm = method.pot_variant == PotVariant::stdlib        ? BaselineMethod::pot_stdlib
                 : method.pot_variant == PotVariant::stdlib_para ? BaselineMethod::pot_stdlib_para
                                                                 : BaselineMethod::pot_pandas;
        }
        const Prompt p = build_baseline_prompt(db, bm, table, question);
        const std::string stage = method.kind == MethodKind::pot ? "pot" : std::string(to_string(stage_for(bm)));
        const std::string completion = run.ask(p, stage);

        if (method.kind != MethodKind::pot) {
            if (auto a = try_parse_braced_answer(completion, Provenance::direct_completion)) return run.finish(*a);
            if (auto aligned = align(run, db, question, completion, method)) return run.finish(*aligned);
            return run.finish(error_answer());
        }

        CodeArtifact code;
        try {
            code = extract_code(completion, CodeRole::reasoning, &st.warnings);
        } catch (const NoCodeFound&) {
            st.warnings.push_back("completion contains no code");
            return run.finish(error_answer());
        }
        st.reasoning_code = code;
        TableDict dict;
        if (method.pot_variant != PotVariant::stdlib) dict = to_column_dict(table);
        const ExecutionOutcome outcome = run.execute(make_request(code, std::nullopt, std::move(dict), method));
        if (outcome.ok()) return run.finish({*outcome.value, Provenance::code_execution});
        return run.finish(error_answer());
    });
}

std::string_view to_string(Route route) { return route == Route::cot ? "cot" : "tabpot"; }

Route route_by_table_size(const SemiStructuredTable& table, std::size_t threshold) {
    return estimate_tokens(render_markdown(table)) <= threshold ? Route::cot : Route::tabpot;
}

FinalResult run_method(const SemiStructuredTable& table, std::string_view question, const MethodConfig& method,
                       const Backends& backends) {
    if (method.kind != MethodKind::tabpot) return run_baseline(table, question, method, backends);
    if (method.routing_threshold && route_by_table_size(table, *method.routing_threshold) == Route::cot) {
        MethodConfig cot = method;
        cot.kind = MethodKind::cot;
        cot.routing_threshold.reset();
        cot.use_plan = cot.use_correction = cot.use_default = true;
        FinalResult r = run_baseline(table, question, cot, backends);
        r.state.warnings.push_back("routed to cot by table size");
        return r;
    }
    return run_tabpot(table, question, method, backends);
}

FinalResult run_text_task(const TaskDescriptor& task, std::string_view data, const PromptsDatabase& db,
                          LlmClient& llm) {
    Run run(task.task_id, nullptr, llm);
    return guarded(run, [&]() -> FinalResult {
        const Prompt p = build_text_task_prompt(db, task, data);
        const std::string& completion = run.ask(p, std::string(to_string(task.stage)));
        if (auto a = try_parse_braced_answer(completion, Provenance::direct_completion)) return run.finish(*a);
        return run.finish({trim(completion), Provenance::direct_completion});
    });
}

}  // namespace tabpot
