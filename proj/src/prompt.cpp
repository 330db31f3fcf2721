#include "tabpot/prompt.hpp"

#include <algorithm>

#include "tabpot/digest.hpp"
#include "tabpot/errors.hpp"

namespace tabpot {

namespace {

constexpr std::string_view kTableQaTask = "table_qa";

std::string trim_right(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.pop_back();
    return s;
}

std::string demo_user_turn(const Demonstration& demo) {
    if (demo.context.empty()) return demo.question;
    return trim_right(demo.context) + "\nQuestion: " + demo.question;
}

Prompt assemble(Stage stage, std::string system, const std::vector<Demonstration>& demos, std::string final_user) {
    Prompt p;
    p.stage = std::string(to_string(stage));
    p.messages.push_back({"system", trim_right(std::move(system))});
    for (const auto& d : demos) {
        p.messages.push_back({"user", demo_user_turn(d)});
        p.messages.push_back({"assistant", d.body});
    }
    p.messages.push_back({"user", std::move(final_user)});
    p.estimated_tokens = estimate_tokens(p.flatten());
    return p;
}

std::string statistics_block(std::string_view title, const StatisticsTable& stats) {
    return "Title: " + std::string(title) + "\nStatistics Table:\n" + render_statistics(stats);
}

std::string json_literal(const std::string& s) { return nlohmann::json(s).dump(); }

std::string render_list(const std::vector<std::string>& cells, std::size_t keep, bool elide) {
    std::string out = "[";
    auto emit = [&](std::size_t i) {
        if (out.size() > 1) out += ", ";
        out += json_literal(cells[i]);
    };
    if (!elide) {
        for (std::size_t i = 0; i < cells.size(); ++i) emit(i);
    } else {
        for (std::size_t i = 0; i < keep; ++i) emit(i);
        out += out.size() > 1 ? ", ..." : "...";
        for (std::size_t i = cells.size() - keep; i < cells.size(); ++i) emit(i);
    }
    return out + "]";
}

std::string render_dict(const TableDict& dict, std::size_t keep, bool elide) {
    std::string out = "{";
    for (std::size_t c = 0; c < dict.size(); ++c) {
        if (c > 0) out += ", ";
        out += json_literal(dict[c].first) + ": " + render_list(dict[c].second, keep, elide);
    }
    return out + "}";
}

std::string truncate_chars(std::string_view text, std::size_t cap) {
    if (text.size() <= cap) return std::string(text);
    std::size_t cut = cap;
    // Do not split a UTF-8 sequence.
    while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
    return std::string(text.substr(0, cut)) + "... [truncated]";
}

const nlohmann::json& require_field(const nlohmann::json& doc, const char* key) {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) throw MalformedPayload(std::string("request is missing \"") + key + "\"");
    return *it;
}

}  // namespace

// --- Prompt ---------------------------------------------------------------

const std::string& Prompt::final_user_turn() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it)
        if (it->role == "user") return it->content;
    static const std::string empty;
    return empty;
}

std::string Prompt::flatten() const {
    std::string out;
    for (const auto& m : messages) {
        if (!out.empty()) out += "\n\n";
        out += m.role + ":\n" + m.content;
    }
    return out;
}

std::string Prompt::digest() const { return sha256_hex(stage + '\0' + flatten()); }

// --- requests ---------------------------------------------------------------

TaskRequest parse_request(std::string_view raw, const PromptsDatabase& db) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error& e) {
        throw MalformedPayload(std::string("request is not valid JSON: ") + e.what());
    }
    return parse_request_document(doc, db);
}

TaskRequest parse_request_document(const nlohmann::json& doc, const PromptsDatabase& db) {
    if (!doc.is_object()) throw MalformedPayload("request must be a JSON object");
    auto task_it = doc.find("task");
    if (task_it == doc.end() || !task_it->is_string() || task_it->get<std::string>().empty())
        throw UnknownTask("request names no task");
    TaskRequest req;
    req.task_id = task_it->get<std::string>();
    if (!db.has_task(req.task_id)) throw UnknownTask("unknown task '" + req.task_id + "'");
    if (auto it = doc.find("step"); it != doc.end() && !it->is_null()) {
        if (!it->is_string()) throw MalformedPayload("\"step\" must be a string");
        req.task_step = it->get<std::string>();
    }

    const TaskDescriptor& task = db.task(req.task_id);
    if (task.kind == TaskKind::table_qa) {
        const auto& q = require_field(doc, "question");
        if (!q.is_string()) throw MalformedPayload("\"question\" must be a string");
        req.question = q.get<std::string>();
        if (req.question.find_first_not_of(" \t\r\n") == std::string::npos)
            throw MalformedPayload("\"question\" is empty");
        const auto& t = require_field(doc, "table");
        try {
            req.table = parse_table(t);
        } catch (const UnsupportedFormat& e) {
            throw MalformedPayload(std::string("invalid table: ") + e.what());
        } catch (const EmptyTable& e) {
            throw MalformedPayload(std::string("invalid table: ") + e.what());
        }
    } else {
        const auto& d = require_field(doc, "data");
        req.data = d.is_string() ? d.get<std::string>() : d.dump();
    }
    return req;
}

// --- builders -----------------------------------------------------------------

std::string render_column_details(const SemiStructuredTable& columns, std::size_t token_cap) {
    const TableDict dict = to_column_dict(columns);
    std::string full = render_dict(dict, 0, false);
    const std::size_t rows = columns.row_count();
    if (estimate_tokens(full) <= token_cap || rows <= 1) return full;
    // Largest head/tail count that fits.
    std::size_t lo = 0;
    std::size_t hi = (rows - 1) / 2;
    while (lo < hi) {
        const std::size_t mid = (lo + hi + 1) / 2;
        if (estimate_tokens(render_dict(dict, mid, true)) <= token_cap) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    return render_dict(dict, lo, true);
}

Prompt build_planning_prompt(const PromptsDatabase& db, std::string_view title, const StatisticsTable& stats,
                             std::string_view question) {
    if (question.find_first_not_of(" \t\r\n") == std::string_view::npos)
        throw MalformedPayload("question is empty");
    const PromptRecord& rec = db.record(kTableQaTask, Stage::planning);
    auto demos = select_demonstrations(db, kTableQaTask, Stage::planning, std::span<const AtomicOperation>{});
    std::string system = trim_right(rec.instruction) + "\n" + render_operation_menu();
    std::string user = statistics_block(title, stats) + "Question: " + std::string(question);
    return assemble(Stage::planning, std::move(system), demos, std::move(user));
}

Prompt build_conducting_prompt(const PromptsDatabase& db, std::string_view title, const StatisticsTable& stats,
                               std::string_view column_details, std::span<const std::string> programming_steps,
                               std::span<const AtomicOperation> operations, std::string_view question) {
    const PromptRecord& rec = db.record(kTableQaTask, Stage::conducting);
    auto demos = select_demonstrations(db, kTableQaTask, Stage::conducting, operations);
    std::string user = statistics_block(title, stats);
    user += "Column Details:\n" + std::string(column_details) + "\n";
    user += "Programming Steps:\n";
    for (std::size_t i = 0; i < programming_steps.size(); ++i)
        user += std::to_string(i + 1) + ". " + programming_steps[i] + "\n";
    user += "Question: " + std::string(question);
    return assemble(Stage::conducting, rec.instruction, demos, std::move(user));
}

Prompt build_correction_prompt(const PromptsDatabase& db, std::string_view column_details,
                               const CodeArtifact& failing_code, const ExecutionOutcome& error_report,
                               const PromptLimits& limits) {
    if (error_report.ok()) throw PreconditionError("correction needs a failed execution outcome");
    const PromptRecord& rec = db.record(kTableQaTask, Stage::correction);
    std::string user = "Column Details:\n" + std::string(column_details) + "\n";
    user += "Code:\n```python\n" + trim_right(failing_code.source) + "\n```\n";
    user += "Error: " + error_report.error_type.value_or(std::string(to_string(error_report.status)));
    if (error_report.error_message && !error_report.error_message->empty()) user += ": " + *error_report.error_message;
    if (error_report.traceback && !error_report.traceback->empty())
        user += "\nTraceback:\n" + truncate_chars(*error_report.traceback, limits.traceback_chars);
    return assemble(Stage::correction, rec.instruction, rec.demonstrations, std::move(user));
}

std::string_view to_string(BaselineMethod method) {
    switch (method) {
        case BaselineMethod::direct: return "direct";
        case BaselineMethod::cot: return "cot";
        case BaselineMethod::pot_stdlib: return "pot:stdlib";
        case BaselineMethod::pot_stdlib_para: return "pot:stdlib_para";
        case BaselineMethod::pot_pandas: return "pot:pandas";
    }
    return "direct";
}

Stage stage_for(BaselineMethod method) {
    switch (method) {
        case BaselineMethod::direct: return Stage::direct;
        case BaselineMethod::cot: return Stage::cot;
        case BaselineMethod::pot_stdlib: return Stage::pot_stdlib;
        case BaselineMethod::pot_stdlib_para: return Stage::pot_stdlib_para;
        case BaselineMethod::pot_pandas: return Stage::pot_pandas;
    }
    return Stage::direct;
}

Prompt build_baseline_prompt(const PromptsDatabase& db, BaselineMethod method, const SemiStructuredTable& table,
                             std::string_view question) {
    const Stage stage = stage_for(method);
    const PromptRecord& rec = db.record(kTableQaTask, stage);
    std::string user = "Title: " + table.title() + "\n" + render_markdown(table);
    user = trim_right(std::move(user)) + "\nQuestion: " + std::string(question);
    return assemble(stage, rec.instruction, rec.demonstrations, std::move(user));
}

Prompt build_alignment_prompt(const PromptsDatabase& db, std::string_view question, std::string_view raw_answer,
                              const PromptLimits& limits) {
    if (try_parse_braced_answer(raw_answer)) throw PreconditionError("answer is already in braced form");
    const PromptRecord& rec = db.record(kTableQaTask, Stage::alignment);
    std::string raw = truncate_chars(trim_right(std::string(raw_answer)), limits.raw_answer_chars);
    std::string user = "Question: " + std::string(question) + "\nAnswer: " + raw;
    return assemble(Stage::alignment, rec.instruction, rec.demonstrations, std::move(user));
}

Prompt build_text_task_prompt(const PromptsDatabase& db, const TaskDescriptor& task, std::string_view data) {
    const PromptRecord& rec = db.record(task.task_id, task.stage);
    return assemble(task.stage, rec.instruction, rec.demonstrations, std::string(data));
}

}  // namespace tabpot
