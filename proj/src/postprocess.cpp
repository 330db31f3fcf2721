#include "tabpot/postprocess.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>

#include "tabpot/errors.hpp"

namespace tabpot {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::vector<std::string_view> split_lines(std::string_view s) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (true) {
        std::size_t nl = s.find('\n', start);
        std::string_view line = s.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    return lines;
}

template <typename T>
void push_unique(std::vector<T>& out, T value) {
    if (std::find(out.begin(), out.end(), value) == out.end()) out.push_back(std::move(value));
}

enum class Section { none, columns, operations, steps };

// Recognizes "Relevant Columns:", "**Operations**:", "## Programming Steps:" and
// similar at the start of a line. On success `rest` holds the text after ':'.
Section match_label(std::string_view line, std::string_view* rest) {
    std::string_view s = line;
    while (!s.empty() && (is_space(s.front()) || s.front() == '*' || s.front() == '#' || s.front() == '-'))
        s.remove_prefix(1);
    struct Label {
        std::string_view text;
        Section section;
    };
    static constexpr Label kLabels[] = {
        {"relevant columns", Section::columns},
        {"relevant column", Section::columns},
        {"operations", Section::operations},
        {"operation", Section::operations},
        {"programming steps", Section::steps},
        {"programming step", Section::steps},
    };
    for (const auto& label : kLabels) {
        if (s.size() < label.text.size()) continue;
        if (lower(s.substr(0, label.text.size())) != label.text) continue;
        std::string_view after = s.substr(label.text.size());
        while (!after.empty() && (after.front() == '*' || after.front() == ' ')) after.remove_prefix(1);
        if (after.empty() || after.front() != ':') continue;
        after.remove_prefix(1);
        while (!after.empty() && after.front() == '*') after.remove_prefix(1);
        *rest = after;
        return label.section;
    }
    return Section::none;
}

std::vector<std::string_view> split_any(std::string_view s, std::string_view delims) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || delims.find(s[i]) != std::string_view::npos) {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

std::string clean_column(std::string_view item) {
    std::string_view s = trim(item);
    constexpr std::string_view kStrip = "\"'`[]*";
    bool changed = true;
    while (changed && !s.empty()) {
        changed = false;
        if (kStrip.find(s.front()) != std::string_view::npos) {
            s.remove_prefix(1);
            changed = true;
        }
        if (!s.empty() && kStrip.find(s.back()) != std::string_view::npos) {
            s.remove_suffix(1);
            changed = true;
        }
        s = trim(s);
    }
    return std::string(s);
}

// Position i starts a step number "12." or "3)" followed by whitespace or end,
// at the start of the text or after whitespace. Sets `number`.
std::size_t step_marker_length(std::string_view s, std::size_t i, unsigned long& number) {
    if (i > 0 && !is_space(s[i - 1])) return 0;
    std::size_t j = i;
    while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
    if (j == i || j - i > 3 || j >= s.size() || (s[j] != '.' && s[j] != ')')) return 0;
    number = std::stoul(std::string(s.substr(i, j - i)));
    ++j;
    if (j < s.size() && !is_space(s[j])) return 0;
    return j - i;
}

std::string strip_bullets(std::string_view piece) {
    std::string_view s = trim(piece);
    while (s.size() >= 2 && (s[0] == '-' || s[0] == '*') && is_space(s[1])) s = trim(s.substr(1));
    return std::string(s);
}

// Splits "1. sort 2. pick" into steps. Past the line start a marker only counts
// when it continues the numbering and text follows, so "Divide by 2." stays whole.
void append_steps(std::string_view line, std::vector<std::string>& steps) {
    std::size_t piece_start = 0;
    std::optional<unsigned long> last;
    for (std::size_t i = 0; i < line.size(); ++i) {
        unsigned long number = 0;
        std::size_t len = step_marker_length(line, i, number);
        if (len == 0) continue;
        if (!trim(line.substr(0, i)).empty() && (!last || number != *last + 1 || trim(line.substr(i + len)).empty()))
            continue;
        last = number;
        std::string piece = strip_bullets(line.substr(piece_start, i - piece_start));
        if (!piece.empty()) push_unique(steps, std::move(piece));
        i += len - 1;
        piece_start = i + 1;
    }
    std::string piece = strip_bullets(line.substr(std::min(piece_start, line.size())));
    if (!piece.empty()) push_unique(steps, std::move(piece));
}

void append_remainder(std::string& remainder, std::string_view text) {
    if (trim(text).empty()) return;
    if (!remainder.empty()) remainder += '\n';
    remainder += trim(text);
}

void append_operations(std::string_view text, Plan& plan) {
    for (std::string_view item : split_any(text, ",;\n")) {
        item = trim(item);
        if (item.empty()) continue;
        if (auto op = parse_operation(item)) {
            push_unique(plan.operations, *op);
            continue;
        }
        std::string unmatched;
        for (std::string_view word : split_any(item, " \t")) {
            if (word.empty()) continue;
            if (auto op = parse_operation(word)) {
                push_unique(plan.operations, *op);
            } else {
                if (!unmatched.empty()) unmatched += ' ';
                unmatched += word;
            }
        }
        append_remainder(plan.raw_remainder, unmatched);
    }
}

bool is_identifier_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

// Function names defined in `source`, top-level definitions first.
std::vector<std::string> defined_functions(std::string_view source) {
    std::vector<std::string> top;
    std::vector<std::string> nested;
    for (std::string_view line : split_lines(source)) {
        std::size_t indent = 0;
        while (indent < line.size() && (line[indent] == ' ' || line[indent] == '\t')) ++indent;
        std::string_view s = line.substr(indent);
        if (s.rfind("async ", 0) == 0) s.remove_prefix(6);
        if (s.rfind("def ", 0) != 0) continue;
        s.remove_prefix(4);
        s = trim(s);
        std::size_t n = 0;
        while (n < s.size() && is_identifier_char(s[n])) ++n;
        if (n == 0 || n >= s.size() || s[n] != '(') continue;
        (indent == 0 ? top : nested).emplace_back(s.substr(0, n));
    }
    top.insert(top.end(), nested.begin(), nested.end());
    return top;
}

struct FencedBlock {
    std::string_view content;
};

std::vector<FencedBlock> fenced_blocks(std::string_view text) {
    std::vector<FencedBlock> blocks;
    std::size_t pos = 0;
    while (true) {
        std::size_t open = text.find("```", pos);
        if (open == std::string_view::npos) break;
        std::size_t line_end = text.find('\n', open);
        if (line_end == std::string_view::npos) break;
        std::size_t close = text.find("```", line_end + 1);
        std::string_view content = text.substr(line_end + 1, close == std::string_view::npos
                                                                 ? std::string_view::npos
                                                                 : close - (line_end + 1));
        blocks.push_back({content});
        if (close == std::string_view::npos) break;
        pos = close + 3;
    }
    return blocks;
}

bool looks_like_code_line(std::string_view line) {
    if (trim(line).empty()) return true;
    if (line.front() == ' ' || line.front() == '\t') return true;
    for (std::string_view prefix : {"def ", "async def ", "import ", "from ", "class ", "@", "#"})
        if (line.rfind(prefix, 0) == 0) return true;
    return false;
}

std::string heuristic_code(std::string_view text) {
    const auto lines = split_lines(text);
    std::size_t first = lines.size();
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].rfind("def ", 0) == 0 || lines[i].rfind("async def ", 0) == 0) {
            first = i;
            break;
        }
    }
    if (first == lines.size()) return {};
    // Pull in imports directly above the definition.
    while (first > 0 && (lines[first - 1].rfind("import ", 0) == 0 || lines[first - 1].rfind("from ", 0) == 0))
        --first;
    std::string out;
    for (std::size_t i = first; i < lines.size(); ++i) {
        const std::string_view line = lines[i];
        if (lower(line).find("default_answer") != std::string::npos) break;
        if (!looks_like_code_line(line)) break;
        out += line;
        out += '\n';
    }
    return std::string(trim(out));
}

// Byte offset just past "DEFAULT_ANSWER <*>:<*>" for the last marker, or npos.
std::size_t last_default_marker(std::string_view text) {
    const std::string low = lower(text);
    constexpr std::string_view kKey = "default_answer";
    std::size_t found = std::string::npos;
    std::size_t pos = 0;
    while ((pos = low.find(kKey, pos)) != std::string::npos) {
        std::size_t j = pos + kKey.size();
        while (j < text.size() && (text[j] == '*' || text[j] == ' ')) ++j;
        if (j < text.size() && text[j] == ':') {
            ++j;
            while (j < text.size() && text[j] == '*') ++j;
            found = j;
        }
        pos += kKey.size();
    }
    return found;
}

std::optional<std::string> default_answer_text(std::string_view completion) {
    std::size_t start = last_default_marker(completion);
    if (start == std::string::npos) return std::nullopt;
    std::string_view rest = completion.substr(start);
    for (std::string_view line : split_lines(rest)) {
        std::string_view v = trim(line);
        if (v.empty()) continue;
        if (v.rfind("```", 0) == 0) return std::nullopt;
        return std::string(v);
    }
    return std::nullopt;
}

std::string strip_wrapping(std::string_view s) {
    s = trim(s);
    bool changed = true;
    while (changed && s.size() >= 2) {
        changed = false;
        const char a = s.front();
        const char b = s.back();
        if ((a == '{' && b == '}') || (a == '"' && b == '"') || (a == '\'' && b == '\'') || (a == '`' && b == '`')) {
            s = trim(s.substr(1, s.size() - 2));
            changed = true;
        }
    }
    return std::string(s);
}

std::optional<double> as_number(const std::string& s) {
    if (s.empty()) return std::nullopt;
    std::string digits;
    digits.reserve(s.size());
    // Thousands separators only in the d,ddd,ddd pattern.
    std::size_t comma_count = std::count(s.begin(), s.end(), ',');
    if (comma_count > 0) {
        std::size_t first_comma = s.find(',');
        std::size_t int_end = s.find('.');
        if (int_end == std::string::npos) int_end = s.size();
        std::size_t lead = first_comma;
        std::size_t sign = (s[0] == '-' || s[0] == '+') ? 1 : 0;
        if (lead <= sign || lead - sign > 3) return std::nullopt;
        for (std::size_t i = first_comma; i < int_end; i += 4) {
            if (s[i] != ',' || i + 4 > int_end) return std::nullopt;
            for (std::size_t k = 1; k <= 3; ++k)
                if (!std::isdigit(static_cast<unsigned char>(s[i + k]))) return std::nullopt;
        }
        for (char c : s)
            if (c != ',') digits.push_back(c);
    } else {
        digits = s;
    }
    for (char c : digits) {
        if (!(std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '+' || c == 'e' ||
              c == 'E'))
            return std::nullopt;
    }
    char* end = nullptr;
    double v = std::strtod(digits.c_str(), &end);
    if (end != digits.c_str() + digits.size()) return std::nullopt;
    if (!std::isfinite(v)) return std::nullopt;
    return v;
}

std::vector<std::string> answer_items(std::string_view text) {
    std::vector<std::string> items;
    const std::string body = strip_wrapping(text);
    for (std::string_view part : split_any(body, "|")) items.push_back(normalize_answer_text(part));
    return items;
}

bool items_equal(const std::string& a, const std::string& b) {
    if (a == b) return true;
    auto x = as_number(a);
    auto y = as_number(b);
    return x && y && std::fabs(*x - *y) <= 1e-6;
}

bool covers(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    return std::all_of(a.begin(), a.end(), [&b](const std::string& x) {
        return std::any_of(b.begin(), b.end(), [&x](const std::string& y) { return items_equal(x, y); });
    });
}

std::vector<std::string> split_commas(const std::string& item) {
    std::vector<std::string> out;
    for (std::string_view part : split_any(item, ",")) out.push_back(normalize_answer_text(part));
    return out;
}

}  // namespace

std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::code_execution: return "code_execution";
        case Provenance::code_execution_after_correction: return "code_execution_after_correction";
        case Provenance::default_answer: return "default_answer";
        case Provenance::direct_completion: return "direct_completion";
        case Provenance::aligned: return "aligned";
        case Provenance::error: return "error";
    }
    return "error";
}

Plan parse_plan(std::string_view completion) {
    Plan plan;
    Section current = Section::none;
    for (std::string_view line : split_lines(completion)) {
        std::string_view rest;
        Section label = match_label(line, &rest);
        std::string_view content = line;
        if (label != Section::none) {
            current = label;
            content = rest;
        }
        switch (current) {
            case Section::none:
                append_remainder(plan.raw_remainder, content);
                break;
            case Section::columns:
                for (std::string_view item : split_any(content, ",")) {
                    std::string name = clean_column(item);
                    if (!name.empty()) push_unique(plan.relevant_columns, std::move(name));
                }
                break;
            case Section::operations:
                append_operations(content, plan);
                break;
            case Section::steps:
                append_steps(content, plan.programming_steps);
                break;
        }
    }
    return plan;
}

std::string render_plan(const Plan& plan) {
    std::string out = "Relevant Columns: ";
    for (std::size_t i = 0; i < plan.relevant_columns.size(); ++i) {
        if (i > 0) out += ", ";
        out += plan.relevant_columns[i];
    }
    out += "\nOperations: ";
    for (std::size_t i = 0; i < plan.operations.size(); ++i) {
        if (i > 0) out += ", ";
        out += operation_name(plan.operations[i]);
    }
    out += "\nProgramming Steps:";
    for (std::size_t i = 0; i < plan.programming_steps.size(); ++i) {
        out += '\n';
        out += std::to_string(i + 1);
        out += ". ";
        out += plan.programming_steps[i];
    }
    out += '\n';
    return out;
}

CodeArtifact extract_code(std::string_view completion, CodeRole role, std::vector<std::string>* warnings) {
    std::string source;
    const auto blocks = fenced_blocks(completion);
    if (blocks.size() > 1 && warnings != nullptr)
        warnings->push_back(std::to_string(blocks.size()) + " fenced code blocks found; using the first with a function");
    for (const auto& block : blocks) {
        if (!defined_functions(block.content).empty()) {
            source = std::string(trim(block.content));
            break;
        }
    }
    if (source.empty()) {
        source = heuristic_code(completion);
        if (!source.empty() && warnings != nullptr) warnings->push_back("code extracted without a fenced block");
    }
    const auto functions = defined_functions(source);
    if (source.empty() || functions.empty()) throw NoCodeFound("completion contains no function definition");

    CodeArtifact code;
    code.source = std::move(source);
    code.role = role;
    const std::string conventional = role == CodeRole::reasoning ? "solution" : "normalize";
    code.entry_name = std::find(functions.begin(), functions.end(), conventional) != functions.end()
                          ? conventional
                          : functions.front();
    return code;
}

std::optional<Answer> extract_default_answer(std::string_view completion) {
    auto text = default_answer_text(completion);
    if (!text) return std::nullopt;
    std::string value;
    if (auto braced = try_parse_braced_answer(*text)) {
        value = braced->value;
    } else {
        value = *text;
    }
    if (trim(value).empty()) return std::nullopt;
    return Answer{std::string(trim(value)), Provenance::default_answer};
}

bool default_answer_is_braced(std::string_view completion) {
    auto text = default_answer_text(completion);
    return text && try_parse_braced_answer(*text).has_value();
}

std::optional<Answer> try_parse_braced_answer(std::string_view completion, Provenance provenance) {
    std::size_t depth = 0;
    std::size_t open = 0;
    std::optional<std::pair<std::size_t, std::size_t>> last;
    for (std::size_t i = 0; i < completion.size(); ++i) {
        const char c = completion[i];
        if (c == '{') {
            if (depth == 0) open = i;
            ++depth;
        } else if (c == '}' && depth > 0) {
            --depth;
            if (depth == 0) last = {open + 1, i};
        }
    }
    if (!last) return std::nullopt;
    return Answer{std::string(trim(completion.substr(last->first, last->second - last->first))), provenance};
}

Answer parse_braced_answer(std::string_view completion, Provenance provenance) {
    auto answer = try_parse_braced_answer(completion, provenance);
    if (!answer) throw FormatError("completion has no {...} answer");
    return *answer;
}

std::string normalize_answer_text(std::string_view text) {
    std::string s = lower(strip_wrapping(text));
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

bool em_match(std::string_view prediction, std::string_view gold) {
    std::vector<std::string> a = answer_items(prediction);
    std::vector<std::string> b = answer_items(gold);
    // A list rendered with ", " against a "|" separated list.
    if (a.size() == 1 && b.size() > 1 && !as_number(a.front())) a = split_commas(a.front());
    if (b.size() == 1 && a.size() > 1 && !as_number(b.front())) b = split_commas(b.front());
    return covers(a, b) && covers(b, a) && a.empty() == b.empty();
}

bool em_match(const Answer& prediction, std::string_view gold) { return em_match(prediction.value, gold); }

}  // namespace tabpot
