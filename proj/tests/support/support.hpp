#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "tabpot/execution.hpp"
#include "tabpot/llm_client.hpp"
#include "tabpot/pipeline.hpp"
#include "tabpot/prompts_db.hpp"
#include "tabpot/table.hpp"

namespace tabpot::testing {

std::string prompts_dir();
std::string fixtures_dir();
std::string fake_worker_path();

const PromptsDatabase& shipped_db();

class TempDir {
public:
    TempDir();
    ~TempDir();
    const std::filesystem::path& path() const { return path_; }
    std::string str() const { return path_.string(); }

private:
    std::filesystem::path path_;
};

// A loopback port with nothing listening on it.
int closed_port();

void write_text(const std::filesystem::path& path, const std::string& content);

// --- random data ---------------------------------------------------------------

struct RandomTable {
    std::vector<std::string> headers;
    std::vector<std::vector<std::string>> rows;
};

std::string random_cell(std::mt19937_64& rng, int kind);
std::vector<std::string> random_column(std::mt19937_64& rng, std::size_t rows);
RandomTable random_table(std::mt19937_64& rng, std::size_t cols, std::size_t rows);
std::string random_text(std::mt19937_64& rng, std::size_t max_len);

// --- oracles -------------------------------------------------------------------

// Per-cell regex classification, written from the type rules alone.
InferredType oracle_type(const std::vector<std::string>& cells);

// Column scan over a rectangular grid.
StatisticsTable oracle_statistics(const std::string& title, const std::vector<std::string>& headers,
                                  const std::vector<std::vector<std::string>>& rows);

// Exact-match rules as documented: trim, case-fold, strip wrapping braces and
// quotes, numbers within 1e-6 (thousands separators in d,ddd form), "|" items
// compared as sets, and a single comma list against a multi-item side.
bool oracle_em(const std::string& prediction, const std::string& gold);

// --- scripted scenarios --------------------------------------------------------------

// Records every prompt passed to the wrapped backend.
class RecordingBackend : public LlmBackend {
public:
    explicit RecordingBackend(std::unique_ptr<LlmBackend> inner) : inner_(std::move(inner)) {}
    CompletionResult complete(const Prompt& prompt) override;
    BackendKind kind() const override { return inner_->kind(); }
    bool probe() override { return inner_->probe(); }
    std::vector<Prompt> prompts() const;

private:
    std::unique_ptr<LlmBackend> inner_;
    mutable std::mutex mutex_;
    std::vector<Prompt> prompts_;
};

// The season table of the worked example: last three results are
// "W 21-14", "L 23-24", "W 24-17".
SemiStructuredTable tide_table();
std::string tide_question();

std::string tide_planning_completion();
std::string tide_conducting_completion(const std::string& default_answer_line = "DEFAULT_ANSWER: {68}");
std::string tide_correction_completion();

// Rules keyed on the stage-specific parts of each prompt's final turn.
std::vector<MockRule> tide_rules(const std::string& conducting_completion);

// Fails without a normalizer; returns 68 with one.
std::unique_ptr<StubExecutor> tide_executor();

// --- released dataset layouts ----------------------------------------------------------

// WikiTableQuestions layout with `items` questions.
void write_wtq_release(const std::filesystem::path& root, std::size_t items);

// TabFact layout: `full_simple` + `full_complex` statements in test tables, of
// which `small_simple` + `small_complex` belong to small-test tables.
void write_tabfact_release(const std::filesystem::path& root, std::size_t full_simple, std::size_t full_complex,
                           std::size_t small_simple, std::size_t small_complex);

}  // namespace tabpot::testing
