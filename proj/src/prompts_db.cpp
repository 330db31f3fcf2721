#include "tabpot/prompts_db.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tabpot/digest.hpp"
#include "tabpot/errors.hpp"

namespace fs = std::filesystem;

namespace tabpot {

namespace {

struct OperationInfo {
    AtomicOperation op;
    std::string_view name;
    std::string_view id;
    std::string_view description;
};

constexpr std::array<OperationInfo, 6> kOperationTable = {{
    {AtomicOperation::SelectTable, "SelectTable", "SelectTable", "select a cell from the table based on a criteria"},
    {AtomicOperation::AdditionDiff, "ADDITION/DIFF", "AdditionDiff", "addition or subtraction"},
    {AtomicOperation::TimesDivision, "TIMES/DIVISION", "TimesDivision", "production or quotient of two numbers"},
    {AtomicOperation::Avg, "AVG", "Avg", "average of several numbers"},
    {AtomicOperation::Count, "COUNT", "Count", "count the number based on a criteria"},
    {AtomicOperation::MaxMin, "MAX/MIN", "MaxMin", "select the maximum/minimum one from given numbers"},
}};

const OperationInfo& info(AtomicOperation op) { return kOperationTable[static_cast<std::size_t>(op)]; }

std::string upper_alnum(std::string_view s) {
    std::string out;
    for (unsigned char c : s)
        if (std::isalnum(c)) out.push_back(static_cast<char>(std::toupper(c)));
    return out;
}

std::string_view trim(std::string_view s) {
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MalformedRecord("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t nl = s.find('\n', start);
        std::string line(s.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    return lines;
}

bool is_marker_line(const std::string& line, std::string* name) {
    if (line.rfind("### ", 0) != 0) return false;
    std::string_view rest = trim(std::string_view(line).substr(4));
    if (rest.empty()) return false;
    for (unsigned char c : rest)
        if (!(std::isupper(c) || c == '_')) return false;
    *name = std::string(rest);
    return true;
}

std::string strip_code_fence(std::string_view code) {
    std::string_view s = trim(code);
    if (s.rfind("```", 0) != 0) return std::string(s);
    std::size_t first_nl = s.find('\n');
    if (first_nl == std::string_view::npos) return {};
    s.remove_prefix(first_nl + 1);
    std::size_t close = s.rfind("```");
    if (close != std::string_view::npos) s = s.substr(0, close);
    return std::string(trim(s));
}

bool contains_ci(std::string_view haystack, std::string_view needle) {
    auto it = std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end(), [](char a, char b) {
        return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b));
    });
    return it != haystack.end();
}

// Table-I order, then file order; untagged demos last.
std::vector<Demonstration> ordered_by_operation(const std::vector<Demonstration>& demos) {
    std::vector<Demonstration> out = demos;
    std::stable_sort(out.begin(), out.end(), [](const Demonstration& a, const Demonstration& b) {
        auto rank = [](const Demonstration& d) { return d.operation ? operation_index(*d.operation) : 6; };
        return rank(a) < rank(b);
    });
    return out;
}

}  // namespace

std::string_view operation_name(AtomicOperation op) { return info(op).name; }
std::string_view operation_id(AtomicOperation op) { return info(op).id; }
std::string_view operation_description(AtomicOperation op) { return info(op).description; }
std::size_t operation_index(AtomicOperation op) { return static_cast<std::size_t>(op); }

std::optional<AtomicOperation> parse_operation(std::string_view text) {
    const std::string key = upper_alnum(text);
    if (key.empty()) return std::nullopt;
    for (const auto& entry : kOperationTable) {
        if (key == upper_alnum(entry.name) || key == upper_alnum(entry.id)) return entry.op;
    }
    // Single component of a slashed name.
    for (const auto& entry : kOperationTable) {
        std::string_view name = entry.name;
        std::size_t slash = name.find('/');
        if (slash == std::string_view::npos) continue;
        if (key == upper_alnum(name.substr(0, slash)) || key == upper_alnum(name.substr(slash + 1))) return entry.op;
    }
    return std::nullopt;
}

std::string render_operation_menu() {
    std::string out;
    for (const auto& entry : kOperationTable) {
        out += entry.name;
        out += ": ";
        out += entry.description;
        out += '\n';
    }
    return out;
}

std::string_view to_string(Stage stage) {
    switch (stage) {
        case Stage::planning: return "planning";
        case Stage::conducting: return "conducting";
        case Stage::correction: return "correction";
        case Stage::alignment: return "alignment";
        case Stage::direct: return "direct";
        case Stage::cot: return "cot";
        case Stage::pot_stdlib: return "pot_stdlib";
        case Stage::pot_stdlib_para: return "pot_stdlib_para";
        case Stage::pot_pandas: return "pot_pandas";
    }
    return "direct";
}

std::optional<Stage> parse_stage(std::string_view text) {
    for (Stage s : kTableQaStages)
        if (to_string(s) == text) return s;
    return std::nullopt;
}

std::string_view to_string(DemoKind kind) {
    switch (kind) {
        case DemoKind::planning: return "planning";
        case DemoKind::conducting: return "conducting";
        case DemoKind::correction: return "correction";
        case DemoKind::alignment: return "alignment";
        case DemoKind::baseline: return "baseline";
    }
    return "baseline";
}

std::optional<DemoKind> parse_demo_kind(std::string_view text) {
    for (DemoKind k : {DemoKind::planning, DemoKind::conducting, DemoKind::correction, DemoKind::alignment,
                       DemoKind::baseline})
        if (to_string(k) == text) return k;
    return std::nullopt;
}

DemoKind expected_demo_kind(Stage stage) {
    switch (stage) {
        case Stage::planning: return DemoKind::planning;
        case Stage::conducting: return DemoKind::conducting;
        case Stage::correction: return DemoKind::correction;
        case Stage::alignment: return DemoKind::alignment;
        default: return DemoKind::baseline;
    }
}

Demonstration parse_demo_file(std::string_view content, const std::string& name) {
    auto malformed = [&name](const std::string& why) { return MalformedRecord(name + ": " + why); };
    const std::vector<std::string> lines = split_lines(content);
    std::size_t i = 0;
    while (i < lines.size() && trim(lines[i]).empty()) ++i;
    if (i == lines.size() || trim(lines[i]) != "---") throw malformed("missing front-matter opening '---'");
    ++i;
    std::map<std::string, std::string> front;
    bool closed = false;
    for (; i < lines.size(); ++i) {
        std::string_view line = trim(lines[i]);
        if (line == "---") {
            closed = true;
            ++i;
            break;
        }
        if (line.empty()) continue;
        std::size_t colon = line.find(':');
        if (colon == std::string_view::npos) throw malformed("front-matter line without ':'");
        std::string key(trim(line.substr(0, colon)));
        std::string value(trim(line.substr(colon + 1)));
        if (key != "kind" && key != "operation") throw malformed("unknown front-matter key '" + key + "'");
        front[key] = value;
    }
    if (!closed) throw malformed("front-matter is not closed with '---'");
    if (front.count("kind") == 0) throw malformed("front-matter lacks 'kind'");

    Demonstration demo;
    demo.name = name;
    auto kind = parse_demo_kind(front["kind"]);
    if (!kind) throw malformed("unknown kind '" + front["kind"] + "'");
    demo.kind = *kind;
    if (front.count("operation") != 0) {
        demo.operation_label = front["operation"];
        demo.operation = parse_operation(demo.operation_label);
    }

    std::map<std::string, std::string> sections;
    std::string current;
    for (; i < lines.size(); ++i) {
        std::string marker;
        if (is_marker_line(lines[i], &marker)) {
            static const std::array<std::string_view, 6> known = {"CONTEXT", "QUESTION", "ANSWER",
                                                                  "CODE",    "DEFAULT_ANSWER", "FORMATTED"};
            if (std::find(known.begin(), known.end(), marker) == known.end())
                throw malformed("unknown section marker '### " + marker + "'");
            if (sections.count(marker) != 0) throw malformed("duplicate section '### " + marker + "'");
            sections[marker];
            current = marker;
            continue;
        }
        if (current.empty()) {
            if (!trim(lines[i]).empty()) throw malformed("text before the first section marker");
            continue;
        }
        sections[current] += lines[i];
        sections[current] += '\n';
    }
    for (auto& [key, text] : sections) text = std::string(trim(text));

    auto require = [&](const char* key) -> const std::string& {
        auto it = sections.find(key);
        if (it == sections.end() || it->second.empty())
            throw malformed(std::string("missing or empty section '### ") + key + "'");
        return it->second;
    };

    demo.question = require("QUESTION");
    if (sections.count("CONTEXT") != 0) demo.context = sections["CONTEXT"];

    switch (demo.kind) {
        case DemoKind::planning: {
            const std::string& answer = require("ANSWER");
            for (const char* label : {"Relevant Columns", "Operations", "Programming Steps"})
                if (!contains_ci(answer, label)) throw malformed(std::string("planning answer lacks '") + label + "'");
            demo.body = answer;
            break;
        }
        case DemoKind::conducting: {
            std::string code = strip_code_fence(require("CODE"));
            if (code.find("def ") == std::string::npos) throw malformed("conducting code defines no function");
            const std::string& def = require("DEFAULT_ANSWER");
            demo.body = "```python\n" + code + "\n```\nDEFAULT_ANSWER: " + def;
            break;
        }
        case DemoKind::correction: {
            std::string code = strip_code_fence(require("CODE"));
            if (code.find("def ") == std::string::npos) throw malformed("correction code defines no function");
            demo.body = "```python\n" + code + "\n```";
            break;
        }
        case DemoKind::alignment: {
            const std::string& raw = require("ANSWER");
            demo.question += "\nAnswer: " + raw;
            demo.body = require("FORMATTED");
            break;
        }
        case DemoKind::baseline: {
            bool has_code = sections.count("CODE") != 0 && !sections["CODE"].empty();
            bool has_answer = sections.count("ANSWER") != 0 && !sections["ANSWER"].empty();
            if (!has_code && !has_answer) throw malformed("baseline demo needs '### ANSWER' or '### CODE'");
            if (has_code) {
                demo.body = "```python\n" + strip_code_fence(sections["CODE"]) + "\n```";
                if (has_answer) demo.body += "\n" + sections["ANSWER"];
            } else {
                demo.body = sections["ANSWER"];
            }
            break;
        }
    }
    return demo;
}

const PromptRecord& PromptsDatabase::record(std::string_view task_id, Stage stage) const {
    auto it = records_.find({std::string(task_id), stage});
    if (it == records_.end())
        throw UnknownTaskStage("no prompt record for task '" + std::string(task_id) + "' stage '" +
                               std::string(to_string(stage)) + "'");
    return it->second;
}

bool PromptsDatabase::has(std::string_view task_id, Stage stage) const {
    return records_.count({std::string(task_id), stage}) != 0;
}

bool PromptsDatabase::has_task(std::string_view task_id) const { return tasks_.find(task_id) != tasks_.end(); }

const TaskDescriptor& PromptsDatabase::task(std::string_view task_id) const {
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) throw UnknownTask("unknown task '" + std::string(task_id) + "'");
    return it->second;
}

std::vector<std::string> PromptsDatabase::task_ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : tasks_) out.push_back(id);
    return out;
}

PromptsDatabase make_db(std::vector<PromptRecord> records, std::vector<TaskDescriptor> tasks,
                        std::string digest_source) {
    PromptsDatabase db;
    for (auto& record : records) {
        if (trim(record.instruction).empty())
            throw MalformedRecord(record.task_id + "/" + std::string(to_string(record.stage)) + ": empty instruction");
        for (const auto& demo : record.demonstrations) {
            if (demo.kind != expected_demo_kind(record.stage))
                throw MalformedRecord(demo.name + ": kind '" + std::string(to_string(demo.kind)) +
                                      "' does not belong in stage '" + std::string(to_string(record.stage)) + "'");
        }
        std::string task_id = record.task_id;
        Stage stage = record.stage;
        db.records_.emplace(std::make_pair(std::move(task_id), stage), std::move(record));
    }
    for (auto& t : tasks) db.tasks_.emplace(t.task_id, std::move(t));
    for (const auto& [key, _] : db.records_) {
        if (db.tasks_.find(key.first) == db.tasks_.end()) {
            TaskDescriptor t;
            t.task_id = key.first;
            t.kind = db.records_.count({key.first, Stage::planning}) != 0 ? TaskKind::table_qa : TaskKind::text;
            t.stage = key.second;
            db.tasks_.emplace(t.task_id, t);
        }
    }
    db.digest_ = sha256_hex(digest_source);
    db.validation_ = validate_db(db);
    return db;
}

PromptsDatabase load_db(const std::string& root) {
    const fs::path base(root);
    if (!fs::is_directory(base)) throw MissingStage("prompts database root is not a directory: " + root);

    std::vector<PromptRecord> records;
    std::vector<TaskDescriptor> tasks;
    // Digest input: every file's relative path and bytes, in sorted path order.
    std::vector<std::pair<std::string, std::string>> files;

    std::vector<fs::path> task_dirs;
    for (const auto& entry : fs::directory_iterator(base))
        if (entry.is_directory()) task_dirs.push_back(entry.path());
    std::sort(task_dirs.begin(), task_dirs.end());

    for (const auto& task_dir : task_dirs) {
        const std::string task_id = task_dir.filename().string();
        std::optional<TaskDescriptor> descriptor;
        if (fs::exists(task_dir / "task.json")) {
            std::string text = read_file(task_dir / "task.json");
            files.emplace_back(fs::relative(task_dir / "task.json", base).generic_string(), text);
            nlohmann::json doc;
            try {
                doc = nlohmann::json::parse(text);
            } catch (const nlohmann::json::exception& e) {
                throw MalformedRecord(task_id + "/task.json: " + e.what());
            }
            TaskDescriptor t;
            t.task_id = task_id;
            const std::string kind = doc.value("kind", "text");
            if (kind == "table_qa") {
                t.kind = TaskKind::table_qa;
            } else if (kind == "text") {
                t.kind = TaskKind::text;
            } else {
                throw MalformedRecord(task_id + "/task.json: unknown kind '" + kind + "'");
            }
            auto stage = parse_stage(doc.value("stage", "direct"));
            if (!stage) throw MalformedRecord(task_id + "/task.json: unknown stage");
            t.stage = *stage;
            descriptor = t;
        }

        std::vector<fs::path> stage_dirs;
        for (const auto& entry : fs::directory_iterator(task_dir))
            if (entry.is_directory()) stage_dirs.push_back(entry.path());
        std::sort(stage_dirs.begin(), stage_dirs.end());

        for (const auto& stage_dir : stage_dirs) {
            const std::string stage_name = stage_dir.filename().string();
            auto stage = parse_stage(stage_name);
            if (!stage) throw MalformedRecord(task_id + "/" + stage_name + ": unknown stage directory");
            const fs::path instruction_path = stage_dir / "instruction.md";
            if (!fs::exists(instruction_path))
                throw MalformedRecord(task_id + "/" + stage_name + ": missing instruction.md");
            PromptRecord record;
            record.task_id = task_id;
            record.stage = *stage;
            record.instruction = read_file(instruction_path);
            files.emplace_back(fs::relative(instruction_path, base).generic_string(), record.instruction);
            record.instruction = std::string(trim(record.instruction));

            const fs::path demo_dir = stage_dir / "demos";
            if (fs::is_directory(demo_dir)) {
                std::vector<fs::path> demo_files;
                for (const auto& entry : fs::directory_iterator(demo_dir))
                    if (entry.is_regular_file() && entry.path().extension() == ".md")
                        demo_files.push_back(entry.path());
                std::sort(demo_files.begin(), demo_files.end());
                for (const auto& path : demo_files) {
                    std::string text = read_file(path);
                    const std::string rel = fs::relative(path, base).generic_string();
                    files.emplace_back(rel, text);
                    Demonstration demo = parse_demo_file(text, rel);
                    demo.name = path.stem().string();
                    if (demo.kind != expected_demo_kind(*stage))
                        throw MalformedRecord(rel + ": kind '" + std::string(to_string(demo.kind)) +
                                              "' does not belong in stage '" + stage_name + "'");
                    record.demonstrations.push_back(std::move(demo));
                }
            }
            records.push_back(std::move(record));
        }
        if (descriptor) tasks.push_back(*descriptor);
    }

    std::vector<std::string> missing;
    for (Stage s : kTableQaStages) {
        bool found = std::any_of(records.begin(), records.end(),
                                 [s](const PromptRecord& r) { return r.task_id == "table_qa" && r.stage == s; });
        if (!found) missing.emplace_back(to_string(s));
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw MissingStage("task 'table_qa' is missing stages: " + list);
    }
    for (const auto& t : tasks) {
        bool found = std::any_of(records.begin(), records.end(), [&t](const PromptRecord& r) {
            return r.task_id == t.task_id && r.stage == t.stage;
        });
        if (!found)
            throw MissingStage("task '" + t.task_id + "' declares stage '" + std::string(to_string(t.stage)) +
                               "' but it is absent");
    }

    std::sort(files.begin(), files.end());
    std::string digest_source;
    for (const auto& [path, bytes] : files) {
        digest_source += path;
        digest_source += '\0';
        digest_source += std::to_string(bytes.size());
        digest_source += '\0';
        digest_source += bytes;
    }
    return make_db(std::move(records), std::move(tasks), std::move(digest_source));
}

ValidationReport validate_db(const PromptsDatabase& db) {
    ValidationReport report;
    for (Stage s : kTableQaStages) {
        if (!db.has("table_qa", s)) report.missing_stages.emplace_back(to_string(s));
    }
    for (const auto& m : report.missing_stages) report.failures.push_back("missing stage: " + m);

    auto count_ops = [&](Stage stage, std::map<std::string, std::size_t>& counts, std::size_t required) {
        if (!db.has("table_qa", stage)) return;
        for (AtomicOperation op : kAllOperations) counts[std::string(operation_id(op))] = 0;
        for (const auto& demo : db.record("table_qa", stage).demonstrations) {
            if (demo.operation) {
                ++counts[std::string(operation_id(*demo.operation))];
            } else if (!demo.operation_label.empty()) {
                report.warnings.push_back(std::string(to_string(stage)) + " demo '" + demo.name +
                                          "' has unused operation tag '" + demo.operation_label + "'");
            } else {
                report.warnings.push_back(std::string(to_string(stage)) + " demo '" + demo.name +
                                          "' has no operation tag");
            }
        }
        for (AtomicOperation op : kAllOperations) {
            const std::size_t n = counts[std::string(operation_id(op))];
            const std::string entry = std::string(to_string(stage)) + " " + std::string(operation_id(op)) + ": " +
                                      std::to_string(n) + " of " + std::to_string(required);
            if (n < required) {
                report.failures.push_back(entry);
            } else if (n > required) {
                report.warnings.push_back(entry);
            }
        }
    };
    count_ops(Stage::planning, report.planning_counts, 1);
    count_ops(Stage::conducting, report.conducting_counts, 2);

    // Stages whose prompts are built from a fixed demo list need at least one.
    for (Stage s : {Stage::correction, Stage::alignment}) {
        if (db.has("table_qa", s) && db.record("table_qa", s).demonstrations.empty())
            report.warnings.push_back(std::string(to_string(s)) + " has no demonstrations");
    }
    report.passed = report.failures.empty();
    return report;
}

std::vector<Demonstration> select_demonstrations(const PromptsDatabase& db, std::string_view task_id, Stage stage,
                                                 std::span<const AtomicOperation> operations) {
    const PromptRecord& record = db.record(task_id, stage);
    if (stage == Stage::planning) return ordered_by_operation(record.demonstrations);
    if (stage != Stage::conducting) return record.demonstrations;

    std::array<bool, 6> wanted{};
    bool any = false;
    for (AtomicOperation op : operations) {
        wanted[operation_index(op)] = true;
        any = true;
    }
    std::vector<Demonstration> ordered = ordered_by_operation(record.demonstrations);
    if (!any) return ordered;
    std::vector<Demonstration> out;
    for (const auto& demo : ordered)
        if (demo.operation && wanted[operation_index(*demo.operation)]) out.push_back(demo);
    // Requested operations with no demos at all degrade to the full set.
    if (out.empty()) return ordered;
    return out;
}

std::vector<Demonstration> select_demonstrations(const PromptsDatabase& db, std::string_view task_id, Stage stage,
                                                 std::span<const std::string> operation_labels) {
    std::vector<AtomicOperation> ops;
    for (const auto& label : operation_labels)
        if (auto op = parse_operation(label)) ops.push_back(*op);
    return select_demonstrations(db, task_id, stage, ops);
}

}  // namespace tabpot
