#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabpot/pipeline.hpp"
#include "tabpot/table.hpp"

namespace tabpot {

struct DatasetItem {
    std::string id;
    std::string question;  // question or statement
    std::shared_ptr<const SemiStructuredTable> table;
    std::vector<std::string> gold;  // one or more accepted items, compared as a set
    std::optional<std::string> category;  // "simple" or "complex"
};

struct DatasetSplit {
    std::string name;
    std::vector<DatasetItem> items;
    std::vector<std::string> warnings;
};

struct LoadOptions {
    bool allow_count_mismatch = false;
};

// Released-file sizes of the named splits.
std::optional<std::size_t> expected_split_size(std::string_view name);
std::optional<std::pair<std::size_t, std::size_t>> expected_category_sizes(std::string_view name);

// name is wikitableqa_test, tabfact_full, tabfact_small or fixture:<path>.
// Throws MissingFiles, CountMismatch (unless allowed), or UnsupportedFormat.
DatasetSplit load_split(std::string_view name, const std::string& root, const LoadOptions& options = {});

DatasetSplit load_wikitableqa(const std::string& root, const LoadOptions& options = {});
DatasetSplit load_tabfact(std::string_view name, const std::string& root, const LoadOptions& options = {});
DatasetSplit load_fixture(const std::string& path, const LoadOptions& options = {});

struct StageTokens {
    std::string stage;
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
};

struct ItemRecord {
    std::string id;
    std::string question;
    std::string prediction;
    std::string gold;  // items joined with "|"
    bool match = false;
    std::string provenance;
    std::optional<std::string> category;
    std::size_t table_tokens = 0;
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
    std::vector<StageTokens> stages;
    double wall_time_s = 0.0;
    double llm_time_s = 0.0;
    std::optional<std::string> error;
};

nlohmann::ordered_json to_json(const ItemRecord& record, bool include_timing = true);
ItemRecord item_record_from_json(const nlohmann::json& doc);

struct CategoryScore {
    std::size_t items = 0;
    std::size_t matches = 0;
    double accuracy = 0.0;
};

struct EvalReport {
    static constexpr int kSchemaVersion = 1;
    std::string split;
    std::string method;
    std::vector<std::string> ablations;
    std::string db_digest;
    std::vector<ItemRecord> records;  // sorted by id
    CategoryScore overall;
    std::map<std::string, CategoryScore> categories;
    UsageSummary usage;
    std::vector<std::string> warnings;
};

nlohmann::ordered_json to_json(const EvalReport& report, bool include_timing = true);

// Recomputes the scores from the per-item records.
bool scores_consistent(const EvalReport& report);

struct EvalOptions {
    std::optional<std::size_t> limit;
    std::optional<std::uint64_t> seed;  // shuffle before applying the limit
    std::size_t workers = 1;
    std::string checkpoint_path;        // one JSON line per completed item
    bool resume = false;                // skip ids already in the checkpoint
};

// Items picked by `limit` and `seed`, in evaluation order.
std::vector<const DatasetItem*> select_items(const DatasetSplit& split, const EvalOptions& options);

ItemRecord evaluate_item(const DatasetItem& item, const MethodConfig& method, const Backends& backends);

EvalReport run_eval(const DatasetSplit& split, const MethodConfig& method, const Backends& backends,
                    const EvalOptions& options = {});

struct CrossoverBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t items = 0;
    std::optional<double> mean_a;  // mean prompt tokens per question
    std::optional<double> mean_b;
};

struct CrossoverReport {
    std::string method_a;
    std::string method_b;
    std::vector<CrossoverBin> bins;
    std::vector<std::string> warnings;
};

// Equal-width bins over table tokens. Fewer than `bins` distinct table sizes
// collapses the bin count with a warning; no common items throws
// InsufficientData. Records are paired by id.
CrossoverReport crossover_report(const std::vector<ItemRecord>& a, const std::vector<ItemRecord>& b,
                                 std::string method_a, std::string method_b, std::size_t bins = 15);

std::string to_csv(const CrossoverReport& report);

}  // namespace tabpot
