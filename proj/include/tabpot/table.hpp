#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace tabpot {

// A rectangular grid of raw cell texts with a title and unique headers.
//
// Cells are never coerced at ingest. Rows shorter than the header are padded
// with empty cells; the original width of each row is kept so that summaries
// can tell padded cells apart from real ones.
class SemiStructuredTable {
public:
    SemiStructuredTable() = default;

    // Builds a table from headers and rows, padding short rows, truncating
    // nothing, and de-duplicating headers. Throws EmptyTable when `headers`
    // is empty.
    SemiStructuredTable(std::string title,
                        std::vector<std::string> headers,
                        std::vector<std::vector<std::string>> rows);

    const std::string& title() const noexcept { return title_; }
    const std::vector<std::string>& headers() const noexcept { return headers_; }
    const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }
    const std::vector<std::string>& warnings() const noexcept { return warnings_; }

    std::size_t row_count() const noexcept { return rows_.size(); }
    std::size_t col_count() const noexcept { return headers_.size(); }

    const std::string& cell(std::size_t row, std::size_t col) const { return rows_.at(row).at(col); }

    // False when the cell was added by padding a short row.
    bool is_original_cell(std::size_t row, std::size_t col) const {
        return col < original_widths_.at(row);
    }

    std::vector<std::string> column(std::size_t col) const;

    // Returns the index of the column with exactly this name, or npos.
    std::size_t find_column(std::string_view name) const;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    friend bool operator==(const SemiStructuredTable& a, const SemiStructuredTable& b) {
        return a.title_ == b.title_ && a.headers_ == b.headers_ && a.rows_ == b.rows_;
    }

private:
    friend SemiStructuredTable project_columns(const SemiStructuredTable&, const std::vector<std::size_t>&);

    std::string title_;
    std::vector<std::string> headers_;
    std::vector<std::vector<std::string>> rows_;
    std::vector<std::size_t> original_widths_;
    std::vector<std::string> warnings_;
};

enum class InferredType { integer, real, text };

std::string_view to_string(InferredType type);

struct ColumnStatistics {
    std::string name;
    InferredType inferred_type = InferredType::text;
    std::string first_entry;
    std::string last_entry;

    friend bool operator==(const ColumnStatistics&, const ColumnStatistics&) = default;
};

struct StatisticsTable {
    std::string title;
    std::size_t row_count = 0;
    std::vector<ColumnStatistics> columns;

    friend bool operator==(const StatisticsTable&, const StatisticsTable&) = default;
};

// Column-major view, in table column order.
using TableDict = std::vector<std::pair<std::string, std::vector<std::string>>>;

enum class TableFormat {
    native_json,   // {"title", "header", "rows"}
    csv,           // RFC 4180, first line is the header (WikiTableQuestions csv/)
    wtq_tsv,       // tab separated with \n, \p and \\ escapes (WikiTableQuestions tsv)
    tabfact_csv,   // '#' separated, first line is the header (TabFact all_csv/)
};

// --- ingest ---------------------------------------------------------------

SemiStructuredTable parse_table(const nlohmann::json& native_document);
SemiStructuredTable parse_table(std::string_view content, TableFormat format, std::string title = {});

// Picks the format from the file extension (.json, .csv, .tsv, or a TabFact
// "*.html.csv" file under all_csv/). Throws UnsupportedFormat otherwise.
SemiStructuredTable load_table_file(const std::string& path, std::string title = {});

// Splits one CSV document into records. Handles quoted fields, doubled quotes,
// and embedded newlines.
std::vector<std::vector<std::string>> parse_csv(std::string_view content, char delimiter = ',');

// --- typing and summaries -------------------------------------------------

InferredType infer_column_type(const std::vector<std::string>& cells);

// Throws EmptyTable when the table has no rows.
StatisticsTable build_statistics_table(const SemiStructuredTable& table);

struct ColumnSelection {
    SemiStructuredTable table;
    std::vector<std::string> unknown_names;
    bool fell_back_to_full_table = false;
    std::vector<std::string> warnings;
};

// Projects the requested columns. Names are matched exactly first, then by
// normalized form (lower-cased, non-alphanumerics removed). When nothing
// matches, the full table is returned with a warning.
ColumnSelection extract_columns(const SemiStructuredTable& table, const std::vector<std::string>& names);

// Lower-case ASCII with every non-alphanumeric character removed.
std::string normalize_column_name(std::string_view name);

// --- serialization ---------------------------------------------------------

TableDict to_column_dict(const SemiStructuredTable& table);
SemiStructuredTable from_column_dict(const TableDict& dict, std::string title = {});
nlohmann::ordered_json column_dict_to_json(const TableDict& dict);

nlohmann::ordered_json to_native_json(const SemiStructuredTable& table);

std::string render_markdown(const SemiStructuredTable& table);
std::string render_statistics(const StatisticsTable& stats);

// ceil(bytes / 4). Callers replace it with endpoint usage counts when known.
std::size_t estimate_tokens(std::string_view text);

}  // namespace tabpot
