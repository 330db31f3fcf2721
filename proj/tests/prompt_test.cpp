#include <gtest/gtest.h>

#include "support.hpp"
#include "tabpot/digest.hpp"
#include "tabpot/errors.hpp"
#include "tabpot/prompt.hpp"

using namespace tabpot;
namespace tt = tabpot::testing;

namespace {

SemiStructuredTable rows_table(std::size_t rows) {
    std::vector<std::vector<std::string>> grid;
    for (std::size_t r = 0; r < rows; ++r)
        grid.push_back({std::to_string(1900 + r), "Team " + std::to_string(r % 17), std::to_string(r * 3)});
    return SemiStructuredTable("Season records", {"Year", "Team", "Points"}, std::move(grid));
}

}  // namespace

TEST(Digest, KnownVector) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Request, ParsesTableQa) {
    const auto req = parse_request(
        R"({"task":"table_qa","step":"s1","question":"how many?","table":{"title":"t","header":["a"],"rows":[["1"]]}})",
        tt::shipped_db());
    EXPECT_EQ(req.task_id, "table_qa");
    EXPECT_EQ(req.task_step, "s1");
    EXPECT_EQ(req.table->cell(0, 0), "1");
}

TEST(Request, Errors) {
    const auto& db = tt::shipped_db();
    EXPECT_THROW(parse_request(R"({"task":"nope"})", db), UnknownTask);
    EXPECT_THROW(parse_request(R"({"question":"q"})", db), UnknownTask);
    EXPECT_THROW(parse_request("not json", db), MalformedPayload);
    EXPECT_THROW(parse_request(R"({"task":"table_qa","question":"q"})", db), MalformedPayload);
    EXPECT_THROW(parse_request(R"({"task":"table_qa","question":" ","table":{"header":["a"],"rows":[]}})", db),
                 MalformedPayload);
    EXPECT_THROW(parse_request(R"({"task":"table_qa","question":"q","table":{"rows":[]}})", db), MalformedPayload);
    EXPECT_THROW(parse_request(R"({"task":"table_qa","step":3,"question":"q","table":{"header":["a"]}})", db),
                 MalformedPayload);
    EXPECT_THROW(parse_request(R"({"task":"translation"})", db), MalformedPayload);
    EXPECT_EQ(parse_request(R"({"task":"translation","data":"hola"})", db).data, "hola");
}

TEST(ColumnDetails, DictLiteral) {
    SemiStructuredTable t("", {"A", "B"}, {{"x", "1"}, {"y \"q\"", "2"}});
    EXPECT_EQ(render_column_details(t), R"({"A": ["x", "y \"q\""], "B": ["1", "2"]})");
}

TEST(ColumnDetails, ElidesMiddleRowsOverCap) {
    const auto t = rows_table(2000);
    const std::string d = render_column_details(t, 300);
    EXPECT_LE(estimate_tokens(d), 300u);
    EXPECT_NE(d.find("\"1900\""), std::string::npos);
    EXPECT_NE(d.find("\"3899\""), std::string::npos);
    EXPECT_NE(d.find("..."), std::string::npos);
    EXPECT_EQ(d.find("\"2900\""), std::string::npos);
}

TEST(Planning, LayoutAndDemos) {
    const auto& db = tt::shipped_db();
    const auto t = tt::tide_table();
    const Prompt p = build_planning_prompt(db, t.title(), build_statistics_table(t), tt::tide_question());
    ASSERT_EQ(p.messages.size(), 1u + 2u * 6u + 1u);
    EXPECT_EQ(p.messages.front().role, "system");
    EXPECT_NE(p.messages.front().content.find("MAX/MIN"), std::string::npos);
    const std::string& last = p.final_user_turn();
    EXPECT_EQ(last.rfind("Title: Crimson Tide football season\nStatistics Table:\n", 0), 0u);
    EXPECT_NE(last.find("Result | text | W 34-10 | W 24-17\n"), std::string::npos);
    EXPECT_NE(last.find("row_count: 6\nQuestion: " + tt::tide_question()), std::string::npos);
    EXPECT_EQ(last.find("Column Details:"), std::string::npos);
    EXPECT_EQ(p.estimated_tokens, estimate_tokens(p.flatten()));
    EXPECT_THROW(build_planning_prompt(db, "", build_statistics_table(t), "  "), MalformedPayload);
}

TEST(Planning, SizeDoesNotDependOnRowCount) {
    const auto& db = tt::shipped_db();
    const auto small = rows_table(10);
    const auto a = build_planning_prompt(db, small.title(), build_statistics_table(small), "q?");
    for (std::size_t rows : {5000, 10000}) {
        const auto large = rows_table(rows);
        const auto b = build_planning_prompt(db, large.title(), build_statistics_table(large), "q?");
        const double ratio = static_cast<double>(b.estimated_tokens) / static_cast<double>(a.estimated_tokens);
        EXPECT_LT(ratio, 1.05) << rows;
    }
}

TEST(Conducting, StepsDetailsAndSelectedDemos) {
    const auto& db = tt::shipped_db();
    const auto t = tt::tide_table();
    const std::vector<std::string> steps = {"Take the last 3 cells.", "Add them up."};
    const std::vector<AtomicOperation> ops = {AtomicOperation::Count};
    const Prompt p = build_conducting_prompt(db, t.title(), build_statistics_table(t), R"({"Result": ["W 21-14"]})",
                                             steps, ops, "q?");
    EXPECT_EQ(p.messages.size(), 1u + 2u * 2u + 1u);
    EXPECT_NE(p.final_user_turn().find(
                  "Column Details:\n{\"Result\": [\"W 21-14\"]}\nProgramming Steps:\n1. Take the last 3 cells.\n"
                  "2. Add them up.\nQuestion: q?"),
              std::string::npos);
}

TEST(Correction, IncludesErrorAndTruncatedTraceback) {
    const auto& db = tt::shipped_db();
    CodeArtifact code{"def solution(table):\n    return 1\n", "solution", CodeRole::reasoning};
    auto outcome = ExecutionOutcome::failure("TypeError", "bad operand", std::string(5000, 'x'));
    PromptLimits limits;
    limits.traceback_chars = 100;
    const Prompt p = build_correction_prompt(db, "{}", code, outcome, limits);
    const auto& u = p.final_user_turn();
    EXPECT_NE(u.find("Code:\n```python\ndef solution(table):\n    return 1\n```\nError: TypeError: bad operand\n"),
              std::string::npos);
    EXPECT_NE(u.find(std::string(100, 'x') + "... [truncated]"), std::string::npos);
    EXPECT_EQ(u.find(std::string(101, 'x')), std::string::npos);
    EXPECT_THROW(build_correction_prompt(db, "{}", code, ExecutionOutcome::success("1")), PreconditionError);
}

TEST(Correction, TruncationKeepsUtf8Intact) {
    const auto& db = tt::shipped_db();
    CodeArtifact code{"def solution(t):\n    return 1", "solution", CodeRole::reasoning};
    std::string tb;
    for (int i = 0; i < 100; ++i) tb += "\xc3\xa9";  // é
    PromptLimits limits;
    limits.traceback_chars = 51;
    const auto p = build_correction_prompt(db, "{}", code, ExecutionOutcome::failure("E", "m", tb), limits);
    const auto& u = p.final_user_turn();
    const auto pos = u.find("Traceback:\n") + 11;
    const std::string kept = u.substr(pos, u.find("... [truncated]") - pos);
    EXPECT_EQ(kept.size(), 50u);
}

TEST(Baseline, MarkdownTableAndQuestion) {
    const auto& db = tt::shipped_db();
    SemiStructuredTable t("T", {"a"}, {{"1"}});
    for (auto m : {BaselineMethod::direct, BaselineMethod::cot, BaselineMethod::pot_stdlib,
                   BaselineMethod::pot_stdlib_para, BaselineMethod::pot_pandas}) {
        const Prompt p = build_baseline_prompt(db, m, t, "q?");
        EXPECT_EQ(p.final_user_turn(), "Title: T\n| a |\n| --- |\n| 1 |\nQuestion: q?");
        EXPECT_EQ(p.stage, to_string(stage_for(m)));
    }
}

TEST(Alignment, RejectsBracedInput) {
    const auto& db = tt::shipped_db();
    const Prompt p = build_alignment_prompt(db, "is it true?", "I think it is true");
    EXPECT_EQ(p.final_user_turn(), "Question: is it true?\nAnswer: I think it is true");
    EXPECT_THROW(build_alignment_prompt(db, "q", "so {True}"), PreconditionError);
}

TEST(PromptDigest, DependsOnStageAndContent) {
    const auto& db = tt::shipped_db();
    const auto a = build_alignment_prompt(db, "q", "a");
    auto b = a;
    EXPECT_EQ(a.digest(), b.digest());
    b.stage = "other";
    EXPECT_NE(a.digest(), b.digest());
    EXPECT_NE(a.digest(), build_alignment_prompt(db, "q", "b").digest());
}

TEST(TextTask, UsesDataAsFinalTurn) {
    const auto& db = tt::shipped_db();
    const Prompt p = build_text_task_prompt(db, db.task("translation"), "hola");
    EXPECT_EQ(p.final_user_turn(), "hola");
    EXPECT_EQ(p.messages.front().role, "system");
}
