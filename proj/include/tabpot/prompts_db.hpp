#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tabpot {

// Reasoning primitives used to tag and select demonstrations.
enum class AtomicOperation { SelectTable, AdditionDiff, TimesDivision, Avg, Count, MaxMin };

inline constexpr std::array<AtomicOperation, 6> kAllOperations = {
    AtomicOperation::SelectTable, AtomicOperation::AdditionDiff, AtomicOperation::TimesDivision,
    AtomicOperation::Avg,         AtomicOperation::Count,        AtomicOperation::MaxMin,
};

// Display name as used in prompts: "SelectTable", "ADDITION/DIFF", ...
std::string_view operation_name(AtomicOperation op);
// Identifier-style name: "SelectTable", "AdditionDiff", ...
std::string_view operation_id(AtomicOperation op);
std::string_view operation_description(AtomicOperation op);
std::size_t operation_index(AtomicOperation op);

// Case-insensitive. Accepts display names, identifier names, and a single
// component of a slashed name ("MAX" -> MaxMin, "diff" -> AdditionDiff).
std::optional<AtomicOperation> parse_operation(std::string_view text);

// The operation menu, one "NAME: description" line per operation.
std::string render_operation_menu();

enum class Stage {
    planning,
    conducting,
    correction,
    alignment,
    direct,
    cot,
    pot_stdlib,
    pot_stdlib_para,
    pot_pandas,
};

inline constexpr std::array<Stage, 9> kTableQaStages = {
    Stage::planning, Stage::conducting,      Stage::correction, Stage::alignment,  Stage::direct,
    Stage::cot,      Stage::pot_stdlib, Stage::pot_stdlib_para, Stage::pot_pandas,
};

std::string_view to_string(Stage stage);
std::optional<Stage> parse_stage(std::string_view text);

enum class DemoKind { planning, conducting, correction, alignment, baseline };

std::string_view to_string(DemoKind kind);
std::optional<DemoKind> parse_demo_kind(std::string_view text);

// Demo kind a stage's demonstrations must have.
DemoKind expected_demo_kind(Stage stage);

struct Demonstration {
    std::string name;  // file stem, e.g. "count_1"
    DemoKind kind = DemoKind::baseline;
    std::optional<AtomicOperation> operation;
    std::string operation_label;  // raw front-matter value, empty when absent
    std::string context;          // table material shown with the question
    std::string question;
    std::string body;             // the assistant turn, in the format parsers expect
};

struct PromptRecord {
    std::string task_id;
    Stage stage = Stage::direct;
    std::string instruction;
    std::vector<Demonstration> demonstrations;  // lexicographic file order
};

enum class TaskKind { table_qa, text };

struct TaskDescriptor {
    std::string task_id;
    TaskKind kind = TaskKind::text;
    Stage stage = Stage::direct;  // the single stage used by text tasks
};

struct ValidationReport {
    bool passed = true;
    std::vector<std::string> failures;
    std::vector<std::string> warnings;
    std::vector<std::string> missing_stages;
    // Keyed by operation_id().
    std::map<std::string, std::size_t> planning_counts;
    std::map<std::string, std::size_t> conducting_counts;
};

// Immutable after load. Copies share nothing mutable.
class PromptsDatabase {
public:
    const PromptRecord& record(std::string_view task_id, Stage stage) const;
    bool has(std::string_view task_id, Stage stage) const;
    bool has_task(std::string_view task_id) const;
    const TaskDescriptor& task(std::string_view task_id) const;
    std::vector<std::string> task_ids() const;

    const std::string& digest() const noexcept { return digest_; }
    const ValidationReport& validation() const noexcept { return validation_; }

private:
    friend PromptsDatabase load_db(const std::string& root);
    friend PromptsDatabase make_db(std::vector<PromptRecord>, std::vector<TaskDescriptor>, std::string);

    std::map<std::pair<std::string, Stage>, PromptRecord> records_;
    std::map<std::string, TaskDescriptor, std::less<>> tasks_;
    std::string digest_;
    ValidationReport validation_;
};

// Layout: <root>/<task_id>/<stage>/instruction.md and
// <root>/<task_id>/<stage>/demos/<name>.md, with an optional
// <root>/<task_id>/task.json descriptor.
PromptsDatabase load_db(const std::string& root);

// Builds a database from in-memory records (tests, embedding).
PromptsDatabase make_db(std::vector<PromptRecord> records, std::vector<TaskDescriptor> tasks,
                        std::string digest_source);

// Parses one demo file. `name` is used in error messages and as the demo name.
Demonstration parse_demo_file(std::string_view content, const std::string& name);

ValidationReport validate_db(const PromptsDatabase& db);

std::vector<Demonstration> select_demonstrations(const PromptsDatabase& db, std::string_view task_id, Stage stage,
                                                 std::span<const AtomicOperation> operations);

// Same, from raw labels; labels that do not parse are ignored.
std::vector<Demonstration> select_demonstrations(const PromptsDatabase& db, std::string_view task_id, Stage stage,
                                                 std::span<const std::string> operation_labels);

}  // namespace tabpot
