#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "tabpot/errors.hpp"
#include "tabpot/prompts_db.hpp"

using namespace tabpot;
namespace tt = tabpot::testing;
namespace fs = std::filesystem;

namespace {

fs::path copy_db(const tt::TempDir& dir) {
    const fs::path root = dir.path() / "prompts";
    fs::copy(tt::prompts_dir(), root, fs::copy_options::recursive);
    return root;
}

std::vector<std::string> names(const std::vector<Demonstration>& demos) {
    std::vector<std::string> out;
    for (const auto& d : demos) out.push_back(d.name);
    return out;
}

}  // namespace

TEST(Operations, ParseNamesAndComponents) {
    EXPECT_EQ(parse_operation("ADDITION/DIFF"), AtomicOperation::AdditionDiff);
    EXPECT_EQ(parse_operation("diff"), AtomicOperation::AdditionDiff);
    EXPECT_EQ(parse_operation("MAX"), AtomicOperation::MaxMin);
    EXPECT_EQ(parse_operation("count"), AtomicOperation::Count);
    EXPECT_EQ(parse_operation("SelectTable"), AtomicOperation::SelectTable);
    EXPECT_EQ(parse_operation("think step by step"), std::nullopt);
    for (auto op : kAllOperations) EXPECT_EQ(parse_operation(operation_name(op)), op);
}

TEST(Operations, MenuListsAllSix) {
    const std::string menu = render_operation_menu();
    for (auto op : kAllOperations) EXPECT_NE(menu.find(std::string(operation_name(op)) + ":"), std::string::npos);
}

TEST(PromptsDb, ShippedDatabaseValidates) {
    const auto& db = tt::shipped_db();
    const auto& r = db.validation();
    EXPECT_TRUE(r.passed) << (r.failures.empty() ? "" : r.failures.front());
    for (auto op : kAllOperations) {
        EXPECT_EQ(r.planning_counts.at(std::string(operation_id(op))), 1u);
        EXPECT_EQ(r.conducting_counts.at(std::string(operation_id(op))), 2u);
    }
    EXPECT_EQ(db.digest().size(), 64u);
    EXPECT_TRUE(db.has_task("translation"));
    EXPECT_EQ(db.task("table_qa").kind, TaskKind::table_qa);
    EXPECT_EQ(db.task("translation").kind, TaskKind::text);
}

TEST(PromptsDb, SelectionByOperation) {
    const auto& db = tt::shipped_db();
    const std::vector<AtomicOperation> count = {AtomicOperation::Count};
    const auto demos = select_demonstrations(db, "table_qa", Stage::conducting, count);
    ASSERT_EQ(demos.size(), 2u);
    for (const auto& d : demos) EXPECT_EQ(d.operation, AtomicOperation::Count);

    const std::vector<AtomicOperation> two = {AtomicOperation::MaxMin, AtomicOperation::Avg};
    EXPECT_EQ(select_demonstrations(db, "table_qa", Stage::conducting, two).size(), 4u);

    const std::vector<std::string> junk = {"think step by step"};
    EXPECT_EQ(select_demonstrations(db, "table_qa", Stage::conducting, junk).size(), 12u);
    EXPECT_EQ(select_demonstrations(db, "table_qa", Stage::planning, count).size(), 6u);
}

TEST(PromptsDb, SelectionIsInCanonicalOperationOrder) {
    const auto& db = tt::shipped_db();
    const auto all = select_demonstrations(db, "table_qa", Stage::conducting, std::span<const AtomicOperation>{});
    for (std::size_t i = 1; i < all.size(); ++i)
        EXPECT_LE(operation_index(*all[i - 1].operation), operation_index(*all[i].operation));
    const std::vector<AtomicOperation> rev = {AtomicOperation::MaxMin, AtomicOperation::SelectTable};
    const std::vector<AtomicOperation> fwd = {AtomicOperation::SelectTable, AtomicOperation::MaxMin};
    EXPECT_EQ(names(select_demonstrations(db, "table_qa", Stage::conducting, rev)),
              names(select_demonstrations(db, "table_qa", Stage::conducting, fwd)));
}

TEST(PromptsDb, DigestIsStableAndContentSensitive) {
    tt::TempDir dir;
    const fs::path root = copy_db(dir);
    const std::string a = load_db(root.string()).digest();
    EXPECT_EQ(a, load_db(root.string()).digest());
    EXPECT_EQ(a, tt::shipped_db().digest());
    std::ofstream(root / "table_qa" / "planning" / "instruction.md", std::ios::app) << " ";
    EXPECT_NE(a, load_db(root.string()).digest());
}

TEST(PromptsDb, MissingStageFails) {
    tt::TempDir dir;
    const fs::path root = copy_db(dir);
    fs::remove_all(root / "table_qa" / "correction");
    EXPECT_THROW(load_db(root.string()), MissingStage);
}

TEST(PromptsDb, TooFewConductingDemosFailsValidation) {
    tt::TempDir dir;
    const fs::path root = copy_db(dir);
    fs::remove(root / "table_qa" / "conducting" / "demos" / "10_count_b.md");
    const auto db = load_db(root.string());
    EXPECT_FALSE(db.validation().passed);
    EXPECT_EQ(db.validation().conducting_counts.at("Count"), 1u);
}

TEST(PromptsDb, MalformedDemoFiles) {
    EXPECT_THROW(parse_demo_file("no front matter", "x.md"), MalformedRecord);
    EXPECT_THROW(parse_demo_file("---\nkind: planning\n", "x.md"), MalformedRecord);
    EXPECT_THROW(parse_demo_file("---\nkind: bogus\n---\n", "x.md"), MalformedRecord);
    EXPECT_THROW(parse_demo_file("---\nkind: planning\ncolour: red\n---\n", "x.md"), MalformedRecord);
    EXPECT_THROW(parse_demo_file("---\nkind: planning\n---\n### QUESTION\nq\n### WHAT\nx\n", "x.md"),
                 MalformedRecord);
}

TEST(PromptsDb, WrongKindInStageFails) {
    tt::TempDir dir;
    const fs::path root = copy_db(dir);
    fs::copy(root / "table_qa" / "planning" / "demos" / "05_count.md",
             root / "table_qa" / "conducting" / "demos" / "99_wrong.md");
    EXPECT_THROW(load_db(root.string()), MalformedRecord);
}

TEST(PromptsDb, UnknownRecordLookupThrows) {
    EXPECT_THROW(tt::shipped_db().record("nope", Stage::planning), UnknownTaskStage);
    EXPECT_FALSE(tt::shipped_db().has_task("nope"));
}
