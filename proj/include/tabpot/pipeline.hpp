#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabpot/execution.hpp"
#include "tabpot/llm_client.hpp"
#include "tabpot/postprocess.hpp"
#include "tabpot/prompt.hpp"
#include "tabpot/prompts_db.hpp"
#include "tabpot/table.hpp"

namespace tabpot {

enum class MethodKind { direct, cot, pot, tabpot };
enum class PotVariant { stdlib, stdlib_para, pandas };

struct MethodConfig {
    MethodKind kind = MethodKind::tabpot;
    PotVariant pot_variant = PotVariant::pandas;
    // tabpot only
    bool use_plan = true;
    bool use_correction = true;
    bool use_default = true;
    std::size_t max_corrections = 1;
    // tabpot only: tables whose markdown rendering fits within this many
    // tokens are answered with cot instead.
    std::optional<std::size_t> routing_threshold;
    double execution_timeout_s = 30.0;
    PromptLimits limits;
};

// "direct", "cot", "pot:stdlib", "pot:stdlib_para", "pot:pandas", "tabpot".
MethodConfig parse_method(std::string_view name);
std::string method_name(const MethodConfig& method);

// Comma-separated subset of {plan, correction, default}; each listed stage is
// switched off. Throws PreconditionError on unknown names.
void apply_ablation(MethodConfig& method, std::string_view list);

// Throws PreconditionError on inconsistent settings.
void validate(const MethodConfig& method);

struct TranscriptEntry {
    std::string stage;  // planning, conducting, correction, alignment, direct, cot, pot
    std::string prompt_digest;
    std::string completion;
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
    double latency_s = 0.0;
};

struct StageTiming {
    std::string stage;  // an LLM stage name or "execute"
    double seconds = 0.0;
};

struct PipelineState {
    std::string method;             // the method that ran, after routing
    std::size_t round_index = 0;    // number of LLM calls so far
    std::vector<TranscriptEntry> transcript;  // y_1 .. y_n
    std::optional<Plan> plan;
    std::optional<CodeArtifact> reasoning_code;
    std::optional<CodeArtifact> normalizer_code;
    std::optional<Answer> default_answer;
    std::vector<ExecutionOutcome> outcomes;
    std::vector<CompletionResult> calls;
    std::optional<Answer> final;
    std::vector<std::string> warnings;
    std::optional<std::string> error;  // set when a backend failure ended the run
    bool llm_unavailable = false;      // transport failure or timeout talking to the LLM

    // y_i, with y_0 the empty string.
    const std::string& output(std::size_t i) const;
    std::vector<std::string> stages() const;
};

struct FinalResult {
    Answer answer;
    PipelineState state;
    std::vector<StageTiming> timings;
    double total_s = 0.0;
    double llm_s = 0.0;
    double execution_s = 0.0;

    UsageSummary usage() const;
};

// Timings are left out when include_timing is false, which makes the output
// byte-stable under mock backends.
nlohmann::ordered_json to_json(const FinalResult& result, bool include_timing = true);

struct Backends {
    const PromptsDatabase& db;
    LlmClient& llm;
    Executor& executor;
};

FinalResult run_tabpot(const SemiStructuredTable& table, std::string_view question, const MethodConfig& method,
                       const Backends& backends);
FinalResult run_baseline(const SemiStructuredTable& table, std::string_view question, const MethodConfig& method,
                         const Backends& backends);

enum class Route { tabpot, cot };

std::string_view to_string(Route route);

// cot when estimate_tokens(render_markdown(table)) <= threshold.
Route route_by_table_size(const SemiStructuredTable& table, std::size_t threshold);

// Applies routing for tabpot methods, then runs the selected method.
FinalResult run_method(const SemiStructuredTable& table, std::string_view question, const MethodConfig& method,
                       const Backends& backends);

// Single-call text task. The braced part of the completion is the answer;
// without braces the trimmed completion is used.
FinalResult run_text_task(const TaskDescriptor& task, std::string_view data, const PromptsDatabase& db,
                          LlmClient& llm);

}  // namespace tabpot
