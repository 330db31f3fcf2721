#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace tabpot::testing {

std::string prompts_dir() { return TABPOT_DEFAULT_PROMPTS_DIR; }
std::string fixtures_dir() { return TABPOT_TEST_FIXTURES_DIR; }
std::string fake_worker_path() { return TABPOT_FAKE_WORKER; }

const PromptsDatabase& shipped_db() {
    static const PromptsDatabase db = load_db(prompts_dir());
    return db;
}

TempDir::TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "tabpot-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

int closed_port() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    socklen_t len = sizeof(addr);
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    ::close(fd);
    return ntohs(addr.sin_port);
}

void write_text(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << content;
}

// --- random data -----------------------------------------------------------------

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

std::string digits(std::mt19937_64& rng, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += static_cast<char>('0' + pick(rng, 10));
    return s;
}

std::string with_thousands(const std::string& d) {
    std::string out;
    const std::size_t lead = d.size() % 3 == 0 ? 3 : d.size() % 3;
    out = d.substr(0, lead);
    for (std::size_t i = lead; i < d.size(); i += 3) out += "," + d.substr(i, 3);
    return out;
}

const std::vector<std::string> kWords = {"Toronto", "W 21-14", "L 23-24", "2011-12", "n/a",   "Lions",
                                         "1936/37", "—",       "TBD",     "3rd",     "x",     "Ottawa Rough Riders",
                                         "12 games", "1e",     "-",       ".",       "+",     "1.2.3"};

}  // namespace

std::string random_cell(std::mt19937_64& rng, int kind) {
    std::string core;
    switch (kind) {
        case 0: core = digits(rng, 1 + pick(rng, 4)); break;
        case 1: core = with_thousands(std::to_string(1000 + pick(rng, 900000))); break;
        case 2: core = (pick(rng, 2) ? "-" : "+") + digits(rng, 1 + pick(rng, 3)); break;
        case 3: core = digits(rng, 1 + pick(rng, 3)) + "." + digits(rng, 1 + pick(rng, 3)); break;
        case 4: core = "." + digits(rng, 1 + pick(rng, 2)); break;
        case 5: core = digits(rng, 1 + pick(rng, 2)) + "e" + (pick(rng, 2) ? "-" : "") + digits(rng, 1); break;
        case 6: core = kWords[pick(rng, kWords.size())]; break;
        case 7: core = ""; break;
        default: core = digits(rng, 2) + "."; break;
    }
    if (pick(rng, 6) == 0) core = " " + core;
    if (pick(rng, 6) == 0) core += "\t";
    return core;
}

std::vector<std::string> random_column(std::mt19937_64& rng, std::size_t rows) {
    // Mostly single-kind columns so numeric types occur often; some mixed.
    const int base = static_cast<int>(pick(rng, 9));
    const bool mixed = pick(rng, 4) == 0;
    std::vector<std::string> out;
    for (std::size_t r = 0; r < rows; ++r) {
        int kind = base;
        if (mixed) kind = static_cast<int>(pick(rng, 9));
        else if (pick(rng, 10) == 0) kind = 7;  // sprinkle empty cells
        out.push_back(random_cell(rng, kind));
    }
    return out;
}

RandomTable random_table(std::mt19937_64& rng, std::size_t cols, std::size_t rows) {
    RandomTable t;
    std::vector<std::vector<std::string>> columns;
    for (std::size_t c = 0; c < cols; ++c) {
        t.headers.push_back("col" + std::to_string(c) + "_" + digits(rng, 2));
        columns.push_back(random_column(rng, rows));
    }
    t.rows.assign(rows, std::vector<std::string>(cols));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) t.rows[r][c] = columns[c][r];
    return t;
}

std::string random_text(std::mt19937_64& rng, std::size_t max_len) {
    static const std::string alphabet =
        "abcXYZ019 {}{}[]()\"'`|,.:;-_*#\n\t```DEFAULT_ANSWER:def solution(table):\r\\/<>~!@$%^&=+?";
    static const std::vector<std::string> chunks = {"DEFAULT_ANSWER:", "```python\n", "```", "def ", "Relevant Columns:",
                                                    "Operations:",     "Programming Steps:", "1. ", "{", "}", "\n",
                                                    "MAX/MIN",         "**",  "\xe2\x80\x94", "\xff"};
    const std::size_t len = pick(rng, max_len + 1);
    std::string s;
    while (s.size() < len) {
        if (pick(rng, 4) == 0) {
            s += chunks[pick(rng, chunks.size())];
        } else {
            s += alphabet[pick(rng, alphabet.size())];
        }
    }
    return s;
}

// --- oracles ---------------------------------------------------------------------

namespace {

std::string oracle_trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

InferredType oracle_type(const std::vector<std::string>& cells) {
    static const std::regex integer(R"(^[+-]?[0-9]+$)");
    static const std::regex decimal(R"(^[+-]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][+-]?[0-9]+)?$)");
    std::size_t non_empty = 0, ints = 0, decs = 0;
    for (const auto& raw : cells) {
        std::string s = oracle_trim(raw);
        if (s.empty()) continue;
        ++non_empty;
        s.erase(std::remove(s.begin(), s.end(), ','), s.end());
        if (std::regex_match(s, integer)) ++ints;
        else if (std::regex_match(s, decimal)) ++decs;
    }
    if (non_empty == 0) return InferredType::text;
    if (ints == non_empty) return InferredType::integer;
    if (ints + decs == non_empty) return InferredType::real;
    return InferredType::text;
}

StatisticsTable oracle_statistics(const std::string& title, const std::vector<std::string>& headers,
                                  const std::vector<std::vector<std::string>>& rows) {
    StatisticsTable s;
    s.title = title;
    s.row_count = rows.size();
    for (std::size_t c = 0; c < headers.size(); ++c) {
        // Cells past a short row's end do not exist for first/last entries.
        std::vector<std::string> present;
        for (const auto& row : rows)
            if (c < row.size()) present.push_back(row[c]);
        ColumnStatistics col{headers[c], oracle_type(present), "", ""};
        if (!present.empty()) {
            col.first_entry = present.front();
            col.last_entry = present.back();
        }
        s.columns.push_back(col);
    }
    return s;
}

namespace {

std::string em_unwrap(std::string s) {
    s = oracle_trim(s);
    for (;;) {
        if (s.size() < 2) return s;
        const char a = s.front(), b = s.back();
        const bool pair = (a == '{' && b == '}') || (a == '"' && b == '"') || (a == '\'' && b == '\'') ||
                          (a == '`' && b == '`');
        if (!pair) return s;
        s = oracle_trim(s.substr(1, s.size() - 2));
    }
}

std::string em_norm(const std::string& raw) {
    std::string s = em_unwrap(raw);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    // collapse whitespace runs
    std::string out;
    bool space = false;
    for (char c : s) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            space = true;
            continue;
        }
        if (space && !out.empty()) out += ' ';
        space = false;
        out += c;
    }
    return out;
}

std::optional<double> em_number(const std::string& s) {
    static const std::regex plain(R"(^[+-]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][+-]?[0-9]+)?$)");
    static const std::regex grouped(R"(^[+-]?[0-9]{1,3}(,[0-9]{3})+(\.[0-9]*)?([eE][+-]?[0-9]+)?$)");
    std::string t = s;
    if (std::regex_match(t, grouped)) {
        t.erase(std::remove(t.begin(), t.end(), ','), t.end());
    } else if (!std::regex_match(t, plain)) {
        return std::nullopt;
    }
    return std::stod(t);
}

std::vector<std::string> em_split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(em_norm(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(em_norm(cur));
    return out;
}

bool em_same(const std::string& a, const std::string& b) {
    if (a == b) return true;
    auto x = em_number(a), y = em_number(b);
    return x && y && std::fabs(*x - *y) <= 1e-6;
}

}  // namespace

bool oracle_em(const std::string& prediction, const std::string& gold) {
    auto p = em_split(em_unwrap(prediction), '|');
    auto g = em_split(em_unwrap(gold), '|');
    if (p.size() == 1 && g.size() > 1 && !em_number(p[0])) p = em_split(p[0], ',');
    if (g.size() == 1 && p.size() > 1 && !em_number(g[0])) g = em_split(g[0], ',');
    auto covered = [](const std::vector<std::string>& a, const std::vector<std::string>& b) {
        for (const auto& x : a) {
            bool hit = false;
            for (const auto& y : b) hit = hit || em_same(x, y);
            if (!hit) return false;
        }
        return true;
    };
    return covered(p, g) && covered(g, p);
}

// --- scenarios -------------------------------------------------------------------

CompletionResult RecordingBackend::complete(const Prompt& prompt) {
    {
        std::lock_guard lock(mutex_);
        prompts_.push_back(prompt);
    }
    return inner_->complete(prompt);
}

std::vector<Prompt> RecordingBackend::prompts() const {
    std::lock_guard lock(mutex_);
    return prompts_;
}

SemiStructuredTable tide_table() {
    return SemiStructuredTable("Crimson Tide football season", {"Date", "Opponent", "Result", "Attendance"},
                               {{"September 6", "Clemson", "W 34-10", "70,097"},
                                {"September 13", "Tulane", "W 20-6", "92,138"},
                                {"September 20", "Western Kentucky", "W 41-7", "92,138"},
                                {"October 4", "Kentucky", "W 21-14", "92,138"},
                                {"October 11", "Ole Miss", "L 23-24", "57,523"},
                                {"October 18", "Tennessee", "W 24-17", "92,138"}});
}

std::string tide_question() { return "the total number of points scored by the tide in the last 3 games combined"; }

std::string tide_planning_completion() {
    return "Relevant Columns: Result\n"
           "Operations: ADDITION/DIFF\n"
           "Programming Steps:\n"
           "1. Take the last 3 cells of Result.\n"
           "2. Add up the points scored by the Tide in those games.\n";
}

std::string tide_conducting_completion(const std::string& default_answer_line) {
    return "```python\n"
           "def solution(table):\n"
           "    return sum(table[\"Result\"][-3:])\n"
           "```\n" +
           default_answer_line + "\n";
}

std::string tide_correction_completion() {
    return "```python\n"
           "def normalize(table):\n"
           "    import re\n"
           "    table[\"Result\"] = [int(re.search(r\"(\\d+)\", c).group(1)) for c in table[\"Result\"]]\n"
           "    return table\n"
           "```\n";
}

std::vector<MockRule> tide_rules(const std::string& conducting_completion) {
    return {
        {"\nError: ", tide_correction_completion(), false, false},
        {"Column Details:", conducting_completion, false, false},
        {"Statistics Table:", tide_planning_completion(), false, false},
        {"\nAnswer: ", "{68}", false, false},
    };
}

std::unique_ptr<StubExecutor> tide_executor() {
    auto stub = std::make_unique<StubExecutor>();
    StubExecutor::Entry fail;
    fail.reasoning_contains = "def solution";
    fail.normalizer = StubExecutor::NormalizerFilter::absent;
    fail.outcomes = {ExecutionOutcome::failure("TypeError", "unsupported operand type(s) for +: 'int' and 'str'",
                                               "Traceback (most recent call last):\n  File \"<solution>\", line 2\n")};
    StubExecutor::Entry ok;
    ok.reasoning_contains = "def solution";
    ok.normalizer = StubExecutor::NormalizerFilter::present;
    ok.outcomes = {ExecutionOutcome::success("68")};
    stub->add(fail).add(ok);
    return stub;
}

// --- released layouts ---------------------------------------------------------------

void write_wtq_release(const fs::path& root, std::size_t items) {
    std::string index = "id\tutterance\tcontext\ttargetValue\n";
    const std::size_t per_table = 10;
    for (std::size_t t = 0; t * per_table < items; ++t) {
        std::string csv = "Year,Team,\"Points, total\"\n";
        for (int r = 0; r < 3; ++r)
            csv += std::to_string(1990 + r + static_cast<int>(t)) + ",Team " + std::to_string(r) + "," +
                   std::to_string(10 * r + static_cast<int>(t % 7)) + "\n";
        write_text(root / "csv" / "204-csv" / (std::to_string(t) + ".csv"), csv);
    }
    for (std::size_t i = 0; i < items; ++i) {
        const std::size_t t = i / per_table;
        index += "nu-" + std::to_string(i) + "\twhich team scored the most\\ppoints?\tcsv/204-csv/" +
                 std::to_string(t) + ".csv\tTeam 2|Team 1\n";
    }
    write_text(root / "data" / "pristine-unseen-tables.tsv", index);
}

void write_tabfact_release(const fs::path& root, std::size_t full_simple, std::size_t full_complex,
                           std::size_t small_simple, std::size_t small_complex) {
    nlohmann::ordered_json examples = nlohmann::ordered_json::object();
    std::vector<std::string> all, small, simple, complex;
    std::size_t table_no = 0;
    auto emit = [&](std::size_t statements, bool is_simple, bool is_small) {
        const std::size_t per_table = 5;
        while (statements > 0) {
            const std::size_t n = std::min(per_table, statements);
            statements -= n;
            const std::string id = "2-" + std::to_string(100000 + table_no++) + "-1.html.csv";
            nlohmann::ordered_json stmts = nlohmann::ordered_json::array();
            nlohmann::ordered_json labels = nlohmann::ordered_json::array();
            for (std::size_t k = 0; k < n; ++k) {
                stmts.push_back("the team scored " + std::to_string(k) + " points in week 1");
                labels.push_back(static_cast<int>(k % 2));
            }
            examples[id] = {stmts, labels, "season " + std::to_string(table_no)};
            write_text(root / "data" / "all_csv" / id, "week#opponent#points\n1#lions#" + std::to_string(n) +
                                                           "\n2#tigers#" + std::to_string(table_no % 9) + "\n");
            all.push_back(id);
            (is_simple ? simple : complex).push_back(id);
            if (is_small) small.push_back(id);
        }
    };
    emit(small_simple, true, true);
    emit(full_simple - small_simple, true, false);
    emit(small_complex, false, true);
    emit(full_complex - small_complex, false, false);
    write_text(root / "tokenized_data" / "test_examples.json", examples.dump());
    write_text(root / "data" / "test_id.json", nlohmann::json(all).dump());
    write_text(root / "data" / "small_test_id.json", nlohmann::json(small).dump());
    write_text(root / "data" / "simple_test_id.json", nlohmann::json(simple).dump());
    write_text(root / "data" / "complex_test_id.json", nlohmann::json(complex).dump());
}

}  // namespace tabpot::testing
