#include "tabpot/table.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "tabpot/errors.hpp"

namespace tabpot {

namespace {

std::string_view trim(std::string_view s) {
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::vector<std::string> dedupe_headers(std::vector<std::string> headers) {
    std::unordered_set<std::string> used;
    std::vector<std::string> out;
    out.reserve(headers.size());
    for (std::size_t i = 0; i < headers.size(); ++i) {
        std::string name = std::string(trim(headers[i]));
        if (name.empty()) name = "column_" + std::to_string(i + 1);
        if (used.count(name) != 0) {
            for (std::size_t k = 2;; ++k) {
                std::string candidate = name + "_" + std::to_string(k);
                if (used.count(candidate) == 0) {
                    name = std::move(candidate);
                    break;
                }
            }
        }
        used.insert(name);
        out.push_back(std::move(name));
    }
    return out;
}

bool all_digits(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
}

std::string strip_commas(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s)
        if (c != ',') out.push_back(c);
    return out;
}

bool parses_as_integer(std::string_view cell) {
    std::string s = strip_commas(trim(cell));
    std::string_view v = s;
    if (!v.empty() && (v.front() == '+' || v.front() == '-')) v.remove_prefix(1);
    return all_digits(v);
}

// [+-]? (digits [. digits?] | . digits) ([eE] [+-]? digits)?
bool parses_as_decimal(std::string_view cell) {
    std::string s = strip_commas(trim(cell));
    std::string_view v = s;
    if (!v.empty() && (v.front() == '+' || v.front() == '-')) v.remove_prefix(1);
    std::size_t i = 0;
    std::size_t int_digits = 0;
    while (i < v.size() && std::isdigit(static_cast<unsigned char>(v[i]))) ++i, ++int_digits;
    std::size_t frac_digits = 0;
    if (i < v.size() && v[i] == '.') {
        ++i;
        while (i < v.size() && std::isdigit(static_cast<unsigned char>(v[i]))) ++i, ++frac_digits;
    }
    if (int_digits + frac_digits == 0) return false;
    if (i < v.size() && (v[i] == 'e' || v[i] == 'E')) {
        ++i;
        if (i < v.size() && (v[i] == '+' || v[i] == '-')) ++i;
        std::size_t exp_digits = 0;
        while (i < v.size() && std::isdigit(static_cast<unsigned char>(v[i]))) ++i, ++exp_digits;
        if (exp_digits == 0) return false;
    }
    return i == v.size();
}

std::string escape_markdown_cell(std::string_view cell) {
    std::string out;
    out.reserve(cell.size());
    for (char c : cell) {
        if (c == '|') {
            out += "\\|";
        } else if (c == '\n' || c == '\r') {
            out.push_back(' ');
        } else {
            out.push_back(c);
        }
    }
    return out;
}

std::string unescape_wtq(std::string_view field) {
    std::string out;
    out.reserve(field.size());
    for (std::size_t i = 0; i < field.size(); ++i) {
        if (field[i] == '\\' && i + 1 < field.size()) {
            char next = field[i + 1];
            if (next == 'n') {
                out.push_back('\n');
                ++i;
                continue;
            }
            if (next == 'p') {
                out.push_back('|');
                ++i;
                continue;
            }
            if (next == '\\') {
                out.push_back('\\');
                ++i;
                continue;
            }
        }
        out.push_back(field[i]);
    }
    return out;
}

SemiStructuredTable from_records(std::vector<std::vector<std::string>> records, std::string title) {
    if (records.empty()) throw EmptyTable("table has no header row");
    std::vector<std::string> headers = std::move(records.front());
    records.erase(records.begin());
    return SemiStructuredTable(std::move(title), std::move(headers), std::move(records));
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

SemiStructuredTable::SemiStructuredTable(std::string title,
                                         std::vector<std::string> headers,
                                         std::vector<std::vector<std::string>> rows)
    : title_(std::move(title)) {
    if (headers.empty()) throw EmptyTable("table has no header row");
    headers_ = dedupe_headers(std::move(headers));
    const std::size_t width = headers_.size();
    rows_.reserve(rows.size());
    original_widths_.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto& row = rows[r];
        const std::size_t original = std::min(row.size(), width);
        if (row.size() < width) {
            warnings_.push_back("row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                                " cells, padded to " + std::to_string(width));
            row.resize(width);
        } else if (row.size() > width) {
            // Cells beyond the header width are dropped; warn only if they held text.
            bool extra_content = std::any_of(row.begin() + static_cast<std::ptrdiff_t>(width), row.end(),
                                             [](const std::string& c) { return !trim(c).empty(); });
            if (extra_content) {
                warnings_.push_back("row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                                    " cells, extra cells dropped");
            }
            row.resize(width);
        }
        original_widths_.push_back(original);
        rows_.push_back(std::move(row));
    }
}

std::vector<std::string> SemiStructuredTable::column(std::size_t col) const {
    std::vector<std::string> out;
    out.reserve(rows_.size());
    for (const auto& row : rows_) out.push_back(row.at(col));
    return out;
}

std::size_t SemiStructuredTable::find_column(std::string_view name) const {
    for (std::size_t i = 0; i < headers_.size(); ++i)
        if (headers_[i] == name) return i;
    return npos;
}

SemiStructuredTable project_columns(const SemiStructuredTable& table, const std::vector<std::size_t>& cols) {
    SemiStructuredTable out;
    out.title_ = table.title_;
    for (std::size_t c : cols) out.headers_.push_back(table.headers_.at(c));
    out.rows_.reserve(table.rows_.size());
    for (std::size_t r = 0; r < table.rows_.size(); ++r) {
        std::vector<std::string> row;
        row.reserve(cols.size());
        std::size_t width = 0;
        for (std::size_t i = 0; i < cols.size(); ++i) {
            row.push_back(table.rows_[r][cols[i]]);
            if (table.is_original_cell(r, cols[i])) width = i + 1;
        }
        out.rows_.push_back(std::move(row));
        out.original_widths_.push_back(width);
    }
    return out;
}

std::string_view to_string(InferredType type) {
    switch (type) {
        case InferredType::integer: return "integer";
        case InferredType::real: return "real";
        case InferredType::text: return "text";
    }
    return "text";
}

std::vector<std::vector<std::string>> parse_csv(std::string_view content, char delimiter) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        // A blank line is not a record.
        if (!(record.size() == 1 && record.front().empty())) records.push_back(std::move(record));
        record.clear();
    };
    for (std::size_t i = 0; i < content.size(); ++i) {
        char c = content[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == delimiter) {
            end_field();
        } else if (c == '\r') {
            if (i + 1 < content.size() && content[i + 1] == '\n') ++i;
            end_record();
        } else if (c == '\n') {
            end_record();
        } else {
            field.push_back(c);
            field_started = true;
        }
    }
    if (field_started || !field.empty() || !record.empty()) end_record();
    return records;
}

SemiStructuredTable parse_table(const nlohmann::json& doc) {
    if (!doc.is_object()) throw UnsupportedFormat("native table document must be a JSON object");
    if (!doc.contains("header")) throw EmptyTable("native table document has no \"header\"");
    const auto& header = doc.at("header");
    if (!header.is_array()) throw UnsupportedFormat("\"header\" must be an array of strings");
    auto as_text = [](const nlohmann::json& v) -> std::string {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_null()) return {};
        if (v.is_number() || v.is_boolean()) return v.dump();
        throw UnsupportedFormat("table cells must be scalars");
    };
    std::vector<std::string> headers;
    for (const auto& h : header) headers.push_back(as_text(h));
    std::vector<std::vector<std::string>> rows;
    if (doc.contains("rows")) {
        const auto& rs = doc.at("rows");
        if (!rs.is_array()) throw UnsupportedFormat("\"rows\" must be an array of arrays");
        for (const auto& r : rs) {
            if (!r.is_array()) throw UnsupportedFormat("each row must be an array");
            std::vector<std::string> row;
            for (const auto& c : r) row.push_back(as_text(c));
            rows.push_back(std::move(row));
        }
    }
    std::string title;
    if (doc.contains("title") && !doc.at("title").is_null()) title = as_text(doc.at("title"));
    return SemiStructuredTable(std::move(title), std::move(headers), std::move(rows));
}

SemiStructuredTable parse_table(std::string_view content, TableFormat format, std::string title) {
    switch (format) {
        case TableFormat::native_json: {
            nlohmann::json doc;
            try {
                doc = nlohmann::json::parse(content);
            } catch (const nlohmann::json::parse_error& e) {
                throw UnsupportedFormat(std::string("native table document is not valid JSON: ") + e.what());
            }
            SemiStructuredTable t = parse_table(doc);
            if (!title.empty() && t.title().empty())
                return SemiStructuredTable(std::move(title), t.headers(), t.rows());
            return t;
        }
        case TableFormat::csv:
            return from_records(parse_csv(content, ','), std::move(title));
        case TableFormat::tabfact_csv:
            return from_records(parse_csv(content, '#'), std::move(title));
        case TableFormat::wtq_tsv: {
            std::vector<std::vector<std::string>> records;
            std::istringstream in{std::string(content)};
            std::string line;
            while (std::getline(in, line)) {
                if (!line.empty() && line.back() == '\r') line.pop_back();
                if (line.empty()) continue;
                std::vector<std::string> record;
                std::size_t start = 0;
                while (true) {
                    std::size_t tab = line.find('\t', start);
                    record.push_back(unescape_wtq(std::string_view(line).substr(start, tab - start)));
                    if (tab == std::string::npos) break;
                    start = tab + 1;
                }
                records.push_back(std::move(record));
            }
            return from_records(std::move(records), std::move(title));
        }
    }
    throw UnsupportedFormat("unknown table format");
}

SemiStructuredTable load_table_file(const std::string& path, std::string title) {
    TableFormat format;
    if (ends_with(path, ".json")) {
        format = TableFormat::native_json;
    } else if (ends_with(path, ".html.csv")) {
        format = TableFormat::tabfact_csv;
    } else if (ends_with(path, ".csv")) {
        format = TableFormat::csv;
    } else if (ends_with(path, ".tsv")) {
        format = TableFormat::wtq_tsv;
    } else {
        throw UnsupportedFormat("unsupported table file: " + path);
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFiles("cannot open table file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_table(ss.str(), format, std::move(title));
}

InferredType infer_column_type(const std::vector<std::string>& cells) {
    bool any = false;
    bool all_integer = true;
    for (const auto& cell : cells) {
        if (trim(cell).empty()) continue;
        any = true;
        if (parses_as_integer(cell)) continue;
        if (!parses_as_decimal(cell)) return InferredType::text;
        all_integer = false;
    }
    if (!any) return InferredType::text;
    return all_integer ? InferredType::integer : InferredType::real;
}

StatisticsTable build_statistics_table(const SemiStructuredTable& table) {
    if (table.row_count() == 0) throw EmptyTable("cannot summarize a table without rows");
    StatisticsTable stats;
    stats.title = table.title();
    stats.row_count = table.row_count();
    stats.columns.reserve(table.col_count());
    for (std::size_t c = 0; c < table.col_count(); ++c) {
        ColumnStatistics col;
        col.name = table.headers()[c];
        col.inferred_type = infer_column_type(table.column(c));
        for (std::size_t r = 0; r < table.row_count(); ++r) {
            if (table.is_original_cell(r, c)) {
                col.first_entry = table.cell(r, c);
                break;
            }
        }
        for (std::size_t r = table.row_count(); r-- > 0;) {
            if (table.is_original_cell(r, c)) {
                col.last_entry = table.cell(r, c);
                break;
            }
        }
        stats.columns.push_back(std::move(col));
    }
    return stats;
}

std::string normalize_column_name(std::string_view name) {
    std::string out;
    out.reserve(name.size());
    for (unsigned char c : name)
        if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
    return out;
}

ColumnSelection extract_columns(const SemiStructuredTable& table, const std::vector<std::string>& names) {
    ColumnSelection selection;
    std::vector<std::size_t> picked;
    for (const auto& raw : names) {
        std::string_view name = trim(raw);
        std::size_t idx = table.find_column(name);
        if (idx == SemiStructuredTable::npos) {
            const std::string wanted = normalize_column_name(name);
            if (!wanted.empty()) {
                for (std::size_t c = 0; c < table.col_count(); ++c) {
                    if (normalize_column_name(table.headers()[c]) == wanted) {
                        idx = c;
                        break;
                    }
                }
            }
        }
        if (idx == SemiStructuredTable::npos) {
            selection.unknown_names.emplace_back(name);
            continue;
        }
        if (std::find(picked.begin(), picked.end(), idx) == picked.end()) picked.push_back(idx);
    }
    if (picked.empty()) {
        selection.table = table;
        selection.fell_back_to_full_table = true;
        selection.warnings.push_back("no requested column matched; using the full table");
        return selection;
    }
    selection.table = project_columns(table, picked);
    return selection;
}

TableDict to_column_dict(const SemiStructuredTable& table) {
    TableDict dict;
    dict.reserve(table.col_count());
    for (std::size_t c = 0; c < table.col_count(); ++c) dict.emplace_back(table.headers()[c], table.column(c));
    return dict;
}

SemiStructuredTable from_column_dict(const TableDict& dict, std::string title) {
    std::vector<std::string> headers;
    std::size_t rows = 0;
    for (const auto& [name, cells] : dict) {
        headers.push_back(name);
        rows = std::max(rows, cells.size());
    }
    std::vector<std::vector<std::string>> grid(rows);
    for (std::size_t r = 0; r < rows; ++r)
        for (const auto& [name, cells] : dict) grid[r].push_back(r < cells.size() ? cells[r] : std::string{});
    return SemiStructuredTable(std::move(title), std::move(headers), std::move(grid));
}

nlohmann::ordered_json column_dict_to_json(const TableDict& dict) {
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const auto& [name, cells] : dict) out[name] = cells;
    return out;
}

nlohmann::ordered_json to_native_json(const SemiStructuredTable& table) {
    nlohmann::ordered_json out;
    out["title"] = table.title();
    out["header"] = table.headers();
    out["rows"] = table.rows();
    return out;
}

std::string render_markdown(const SemiStructuredTable& table) {
    std::string out;
    auto emit_row = [&out](const std::vector<std::string>& cells) {
        out += '|';
        for (const auto& cell : cells) {
            out += ' ';
            out += escape_markdown_cell(cell);
            out += " |";
        }
        out += '\n';
    };
    emit_row(table.headers());
    out += '|';
    for (std::size_t c = 0; c < table.col_count(); ++c) out += " --- |";
    out += '\n';
    for (const auto& row : table.rows()) emit_row(row);
    return out;
}

std::string render_statistics(const StatisticsTable& stats) {
    std::string out;
    for (const auto& col : stats.columns) {
        out += escape_markdown_cell(col.name);
        out += " | ";
        out += to_string(col.inferred_type);
        out += " | ";
        out += escape_markdown_cell(col.first_entry);
        out += " | ";
        out += escape_markdown_cell(col.last_entry);
        out += '\n';
    }
    out += "row_count: " + std::to_string(stats.row_count) + '\n';
    return out;
}

std::size_t estimate_tokens(std::string_view text) { return (text.size() + 3) / 4; }

}  // namespace tabpot
