#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabpot/execution.hpp"
#include "tabpot/postprocess.hpp"
#include "tabpot/prompts_db.hpp"
#include "tabpot/table.hpp"

namespace tabpot {

struct Message {
    std::string role;  // "system", "user", "assistant"
    std::string content;

    friend bool operator==(const Message&, const Message&) = default;
};

// One system instruction, demonstrations as user/assistant pairs, and the
// live request as the final user turn.
struct Prompt {
    std::string stage;
    std::vector<Message> messages;
    std::size_t estimated_tokens = 0;

    const std::string& final_user_turn() const;
    // Messages joined as "role:\ncontent" blocks; the unit for digests and
    // completion-style endpoints.
    std::string flatten() const;
    std::string digest() const;
};

struct TaskRequest {
    std::string task_id;
    std::optional<std::string> task_step;
    std::string question;                      // table_qa
    std::optional<SemiStructuredTable> table;  // table_qa
    std::string data;                          // text tasks
};

// Parses a request document. The task must exist in `db`; table_qa tasks need
// a non-empty question and a table; text tasks need "data".
TaskRequest parse_request(std::string_view raw, const PromptsDatabase& db);
TaskRequest parse_request_document(const nlohmann::json& doc, const PromptsDatabase& db);

struct PromptLimits {
    std::size_t column_details_tokens = 4000;
    std::size_t traceback_chars = 1000;
    std::size_t raw_answer_chars = 2000;
};

// Column contents as a dictionary-of-lists literal. Over the token cap, keeps
// the first and last rows and marks the gap with "...".
std::string render_column_details(const SemiStructuredTable& columns, std::size_t token_cap = 4000);

Prompt build_planning_prompt(const PromptsDatabase& db, std::string_view title, const StatisticsTable& stats,
                             std::string_view question);

Prompt build_conducting_prompt(const PromptsDatabase& db, std::string_view title, const StatisticsTable& stats,
                               std::string_view column_details, std::span<const std::string> programming_steps,
                               std::span<const AtomicOperation> operations, std::string_view question);

Prompt build_correction_prompt(const PromptsDatabase& db, std::string_view column_details,
                               const CodeArtifact& failing_code, const ExecutionOutcome& error_report,
                               const PromptLimits& limits = {});

enum class BaselineMethod { direct, cot, pot_stdlib, pot_stdlib_para, pot_pandas };

std::string_view to_string(BaselineMethod method);
Stage stage_for(BaselineMethod method);

Prompt build_baseline_prompt(const PromptsDatabase& db, BaselineMethod method, const SemiStructuredTable& table,
                             std::string_view question);

// Throws PreconditionError if `raw_answer` already carries a braced answer.
Prompt build_alignment_prompt(const PromptsDatabase& db, std::string_view question, std::string_view raw_answer,
                              const PromptLimits& limits = {});

// Single-stage prompt for text tasks ({"task", "data"} requests).
Prompt build_text_task_prompt(const PromptsDatabase& db, const TaskDescriptor& task, std::string_view data);

}  // namespace tabpot
