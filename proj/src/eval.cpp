#include "tabpot/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "tabpot/errors.hpp"

namespace fs = std::filesystem;

namespace tabpot {

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFiles("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json read_json(const fs::path& path) {
    try {
        return nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw UnsupportedFormat("invalid JSON in " + path.string() + ": " + e.what());
    }
}

std::optional<fs::path> first_existing(const std::vector<fs::path>& candidates) {
    for (const auto& p : candidates)
        if (fs::exists(p)) return p;
    return std::nullopt;
}

std::string unescape_wtq(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            const char n = s[++i];
            out += n == 'n' ? '\n' : n == 'p' ? '|' : n;
        } else {
            out += s[i];
        }
    }
    return out;
}

std::vector<std::string> split_on(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) out += sep;
        out += items[i];
    }
    return out;
}

void check_counts(DatasetSplit& split, const LoadOptions& options) {
    const auto expected = expected_split_size(split.name);
    std::vector<std::string> problems;
    if (expected && split.items.size() != *expected)
        problems.push_back(split.name + ": expected " + std::to_string(*expected) + " items, found " +
                           std::to_string(split.items.size()));
    if (auto cats = expected_category_sizes(split.name)) {
        std::size_t simple = 0, complex = 0;
        for (const auto& it : split.items) {
            if (it.category == "simple") ++simple;
            if (it.category == "complex") ++complex;
        }
        if (simple != cats->first || complex != cats->second)
            problems.push_back(split.name + ": expected " + std::to_string(cats->first) + " simple + " +
                               std::to_string(cats->second) + " complex, found " + std::to_string(simple) + " + " +
                               std::to_string(complex));
    }
    for (auto& p : problems) {
        if (!options.allow_count_mismatch) throw CountMismatch(p);
        split.warnings.push_back(p);
    }
}

// Tables shared by many questions are loaded once.
class TableCache {
public:
    std::shared_ptr<const SemiStructuredTable> get(const fs::path& path, const std::string& title, TableFormat format) {
        const std::string key = path.string();
        if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        if (!fs::exists(path)) throw MissingFiles("table file not found: " + key);
        auto table = std::make_shared<const SemiStructuredTable>(parse_table(read_file(path), format, title));
        cache_.emplace(key, table);
        return table;
    }

private:
    std::unordered_map<std::string, std::shared_ptr<const SemiStructuredTable>> cache_;
};

TableFormat format_for(const fs::path& path) {
    const std::string name = path.filename().string();
    if (name.size() > 4 && name.compare(name.size() - 4, 4, ".tsv") == 0) return TableFormat::wtq_tsv;
    return TableFormat::csv;
}

std::set<std::string> read_id_list(const fs::path& path) {
    const auto doc = read_json(path);
    if (!doc.is_array()) throw UnsupportedFormat(path.string() + " must hold a JSON list of table ids");
    std::set<std::string> out;
    for (const auto& v : doc) out.insert(v.get<std::string>());
    return out;
}

std::string json_number_string(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

}  // namespace

// --- loaders -------------------------------------------------------------------

std::optional<std::size_t> expected_split_size(std::string_view name) {
    if (name == "wikitableqa_test") return 4344;
    if (name == "tabfact_full") return 12828;
    if (name == "tabfact_small") return 2024;
    return std::nullopt;
}

std::optional<std::pair<std::size_t, std::size_t>> expected_category_sizes(std::string_view name) {
    if (name == "tabfact_full") return std::pair<std::size_t, std::size_t>{4219, 8609};
    if (name == "tabfact_small") return std::pair<std::size_t, std::size_t>{1005, 1019};
    return std::nullopt;
}

DatasetSplit load_split(std::string_view name, const std::string& root, const LoadOptions& options) {
    if (name.rfind("fixture:", 0) == 0) return load_fixture(std::string(name.substr(8)), options);
    if (name == "wikitableqa_test") return load_wikitableqa(root, options);
    if (name == "tabfact_full" || name == "tabfact_small") return load_tabfact(name, root, options);
    throw PreconditionError("unknown dataset '" + std::string(name) + "'");
}

// Layout: <root>/data/pristine-unseen-tables.tsv (columns id, utterance,
// context, targetValue) with tables at <root>/<context>.
DatasetSplit load_wikitableqa(const std::string& root, const LoadOptions& options) {
    const fs::path base(root);
    const auto index = first_existing({base / "data" / "pristine-unseen-tables.tsv", base / "pristine-unseen-tables.tsv"});
    if (!index) throw MissingFiles("pristine-unseen-tables.tsv not found under " + root);

    DatasetSplit split;
    split.name = "wikitableqa_test";
    TableCache cache;
    std::istringstream in(read_file(*index));
    std::string line;
    std::vector<std::string> header;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_on(line, '\t');
        if (header.empty()) {
            header = fields;
            continue;
        }
        auto col = [&](const char* key) -> std::string {
            auto it = std::find(header.begin(), header.end(), key);
            if (it == header.end()) throw UnsupportedFormat(index->string() + ": missing column " + key);
            const auto i = static_cast<std::size_t>(it - header.begin());
            if (i >= fields.size())
                throw UnsupportedFormat(index->string() + ":" + std::to_string(line_no) + ": too few fields");
            return fields[i];
        };
        DatasetItem item;
        item.id = col("id");
        item.question = unescape_wtq(col("utterance"));
        const std::string context = col("context");
        const fs::path table_path = base / context;
        item.table = cache.get(table_path, "", format_for(table_path));
        for (const auto& g : split_on(col("targetValue"), '|')) item.gold.push_back(unescape_wtq(g));
        split.items.push_back(std::move(item));
    }
    check_counts(split, options);
    return split;
}

// Layout: test_examples.json ({table_id: [statements, labels, caption]}),
// all_csv/<table_id> ('#' separated), and the table-id lists test_id.json,
// small_test_id.json, simple_test_id.json, complex_test_id.json.
DatasetSplit load_tabfact(std::string_view name, const std::string& root, const LoadOptions& options) {
    const fs::path base(root);
    const auto examples = first_existing({base / "test_examples.json", base / "tokenized_data" / "test_examples.json",
                                          base / "collected_data" / "test_examples.json"});
    if (!examples) throw MissingFiles("test_examples.json not found under " + root);
    const auto csv_dir = first_existing({base / "all_csv", base / "data" / "all_csv"});
    if (!csv_dir) throw MissingFiles("all_csv/ not found under " + root);
    auto id_list = [&](const char* file) -> std::optional<std::set<std::string>> {
        if (auto p = first_existing({base / file, base / "data" / file})) return read_id_list(*p);
        return std::nullopt;
    };
    const bool small = name == "tabfact_small";
    const auto scope = id_list(small ? "small_test_id.json" : "test_id.json");
    if (small && !scope) throw MissingFiles("small_test_id.json not found under " + root);
    const auto simple = id_list("simple_test_id.json");
    const auto complex = id_list("complex_test_id.json");
    if (!simple || !complex) throw MissingFiles("simple_test_id.json / complex_test_id.json not found under " + root);

    DatasetSplit split;
    split.name = std::string(name);
    TableCache cache;
    const auto doc = read_json(*examples);
    if (!doc.is_object()) throw UnsupportedFormat(examples->string() + " must map table ids to examples");
    for (const auto& [table_id, entry] : doc.items()) {
        if (scope && !scope->count(table_id)) continue;
        if (!entry.is_array() || entry.size() < 2 || !entry[0].is_array() || !entry[1].is_array() ||
            entry[0].size() != entry[1].size())
            throw UnsupportedFormat(examples->string() + ": malformed entry for " + table_id);
        const std::string caption = entry.size() > 2 && entry[2].is_string() ? entry[2].get<std::string>() : "";
        auto table = cache.get(*csv_dir / table_id, caption, TableFormat::tabfact_csv);
        std::optional<std::string> category;
        if (simple->count(table_id)) category = "simple";
        else if (complex->count(table_id)) category = "complex";
        for (std::size_t k = 0; k < entry[0].size(); ++k) {
            DatasetItem item;
            item.id = table_id + "#" + std::to_string(k);
            item.question = entry[0][k].get<std::string>();
            item.table = table;
            const std::string label = json_number_string(entry[1][k]);
            item.gold = {label == "1" || label == "true" || label == "True" ? "True" : "False"};
            item.category = category;
            split.items.push_back(std::move(item));
        }
    }
    check_counts(split, options);
    return split;
}

// {"name"?, "expected_count"?, "items": [{"id", "question" | "statement",
//   "table" | "table_file", "answer": str | [str], "category"?}]}
DatasetSplit load_fixture(const std::string& path, const LoadOptions& options) {
    const fs::path file(path);
    if (!fs::exists(file)) throw MissingFiles("fixture not found: " + path);
    const auto doc = read_json(file);
    if (!doc.is_object() || !doc.contains("items") || !doc.at("items").is_array())
        throw UnsupportedFormat(path + ": fixture needs an \"items\" list");
    DatasetSplit split;
    split.name = doc.value("name", "fixture");
    for (const auto& it : doc.at("items")) {
        DatasetItem item;
        item.id = json_number_string(it.at("id"));
        item.question = it.contains("question") ? it.at("question").get<std::string>()
                                                : it.at("statement").get<std::string>();
        if (it.contains("table")) {
            item.table = std::make_shared<const SemiStructuredTable>(parse_table(it.at("table")));
        } else {
            item.table = std::make_shared<const SemiStructuredTable>(
                load_table_file((file.parent_path() / it.at("table_file").get<std::string>()).string()));
        }
        const auto& ans = it.at("answer");
        if (ans.is_array()) {
            for (const auto& a : ans) item.gold.push_back(json_number_string(a));
        } else {
            item.gold.push_back(json_number_string(ans));
        }
        if (it.contains("category")) item.category = it.at("category").get<std::string>();
        split.items.push_back(std::move(item));
    }
    if (doc.contains("expected_count")) {
        const auto want = doc.at("expected_count").get<std::size_t>();
        if (want != split.items.size()) {
            const std::string msg = split.name + ": expected " + std::to_string(want) + " items, found " +
                                    std::to_string(split.items.size());
            if (!options.allow_count_mismatch) throw CountMismatch(msg);
            split.warnings.push_back(msg);
        }
    }
    return split;
}

// --- records -------------------------------------------------------------------

nlohmann::ordered_json to_json(const ItemRecord& r, bool include_timing) {
    nlohmann::ordered_json out;
    out["id"] = r.id;
    out["question"] = r.question;
    out["prediction"] = r.prediction;
    out["gold"] = r.gold;
    out["match"] = r.match;
    out["provenance"] = r.provenance;
    out["category"] = r.category ? nlohmann::ordered_json(*r.category) : nlohmann::ordered_json(nullptr);
    out["table_tokens"] = r.table_tokens;
    out["prompt_tokens"] = r.prompt_tokens;
    out["completion_tokens"] = r.completion_tokens;
    out["stages"] = nlohmann::ordered_json::array();
    for (const auto& s : r.stages)
        out["stages"].push_back(
            {{"stage", s.stage}, {"prompt_tokens", s.prompt_tokens}, {"completion_tokens", s.completion_tokens}});
    if (include_timing) {
        out["wall_time_s"] = r.wall_time_s;
        out["llm_time_s"] = r.llm_time_s;
    }
    out["error"] = r.error ? nlohmann::ordered_json(*r.error) : nlohmann::ordered_json(nullptr);
    return out;
}

ItemRecord item_record_from_json(const nlohmann::json& doc) {
    ItemRecord r;
    try {
        r.id = doc.at("id").get<std::string>();
        r.question = doc.at("question").get<std::string>();
        r.prediction = doc.at("prediction").get<std::string>();
        r.gold = doc.at("gold").get<std::string>();
        r.match = doc.at("match").get<bool>();
        r.provenance = doc.at("provenance").get<std::string>();
        if (!doc.at("category").is_null()) r.category = doc.at("category").get<std::string>();
        r.table_tokens = doc.at("table_tokens").get<std::size_t>();
        r.prompt_tokens = doc.at("prompt_tokens").get<std::size_t>();
        r.completion_tokens = doc.at("completion_tokens").get<std::size_t>();
        for (const auto& s : doc.at("stages"))
            r.stages.push_back({s.at("stage").get<std::string>(), s.at("prompt_tokens").get<std::size_t>(),
                                s.at("completion_tokens").get<std::size_t>()});
        r.wall_time_s = doc.value("wall_time_s", 0.0);
        r.llm_time_s = doc.value("llm_time_s", 0.0);
        if (doc.contains("error") && !doc.at("error").is_null()) r.error = doc.at("error").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw UnsupportedFormat(std::string("malformed item record: ") + e.what());
    }
    return r;
}

namespace {

CategoryScore score(std::size_t items, std::size_t matches) {
    CategoryScore s;
    s.items = items;
    s.matches = matches;
    s.accuracy = items == 0 ? 0.0 : static_cast<double>(matches) / static_cast<double>(items);
    return s;
}

void compute_scores(EvalReport& report) {
    std::size_t matches = 0;
    std::map<std::string, std::pair<std::size_t, std::size_t>> cats;
    for (const auto& r : report.records) {
        matches += r.match ? 1 : 0;
        if (r.category) {
            auto& c = cats[*r.category];
            ++c.first;
            c.second += r.match ? 1 : 0;
        }
    }
    report.overall = score(report.records.size(), matches);
    report.categories.clear();
    for (const auto& [name, c] : cats) report.categories[name] = score(c.first, c.second);

    report.usage = UsageSummary{};
    auto& u = report.usage;
    u.questions = report.records.size();
    for (const auto& r : report.records) {
        u.calls += r.stages.size();
        u.total_prompt_tokens += r.prompt_tokens;
        u.total_completion_tokens += r.completion_tokens;
        u.total_latency_s += r.llm_time_s;
    }
    if (u.questions > 0) {
        u.avg_prompt_tokens = static_cast<double>(u.total_prompt_tokens) / static_cast<double>(u.questions);
        u.avg_completion_tokens = static_cast<double>(u.total_completion_tokens) / static_cast<double>(u.questions);
    }
    if (u.total_latency_s > 0.0) {
        u.prompt_throughput = static_cast<double>(u.total_prompt_tokens) / u.total_latency_s;
        u.completion_throughput = static_cast<double>(u.total_completion_tokens) / u.total_latency_s;
    }
}

nlohmann::ordered_json score_json(const CategoryScore& s) {
    return {{"items", s.items}, {"matches", s.matches}, {"accuracy", s.accuracy}};
}

// Published accuracies of the method with live models; context only.
nlohmann::ordered_json reference_footer(const std::string& split) {
    nlohmann::ordered_json ref;
    ref["note"] = "published EM accuracy of tabpot with live 7B-67B models; not reproducible with mocks";
    if (split == "wikitableqa_test") ref["tabpot_em"] = {{"model", "8x7B"}, {"all", 63.33}};
    if (split == "tabfact_full") ref["tabpot_em"] = {{"model", "67B"}, {"simple", 90.09}, {"complex", 78.91}, {"all", 82.58}};
    if (split == "tabfact_small")
        ref["tabpot_em"] = {{"model", "67B"}, {"simple", 91.34}, {"complex", 80.27}, {"all", 85.77}};
    return ref;
}

}  // namespace

nlohmann::ordered_json to_json(const EvalReport& report, bool include_timing) {
    nlohmann::ordered_json out;
    out["schema_version"] = EvalReport::kSchemaVersion;
    out["split"] = report.split;
    out["method"] = report.method;
    out["ablations"] = report.ablations;
    out["db_digest"] = report.db_digest;
    out["accuracy"] = score_json(report.overall);
    nlohmann::ordered_json cats = nlohmann::ordered_json::object();
    for (const auto& [name, s] : report.categories) cats[name] = score_json(s);
    out["categories"] = std::move(cats);
    out["usage"] = to_json(report.usage, include_timing);
    out["warnings"] = report.warnings;
    out["records"] = nlohmann::ordered_json::array();
    for (const auto& r : report.records) out["records"].push_back(to_json(r, include_timing));
    out["reference"] = reference_footer(report.split);
    return out;
}

bool scores_consistent(const EvalReport& report) {
    EvalReport copy = report;
    compute_scores(copy);
    if (copy.overall.items != report.overall.items || copy.overall.matches != report.overall.matches) return false;
    if (report.overall.items > 0 &&
        std::abs(report.overall.accuracy * static_cast<double>(report.overall.items) -
                 static_cast<double>(report.overall.matches)) > 1e-9)
        return false;
    if (copy.categories.size() != report.categories.size()) return false;
    for (const auto& [name, s] : copy.categories) {
        auto it = report.categories.find(name);
        if (it == report.categories.end() || it->second.items != s.items || it->second.matches != s.matches)
            return false;
    }
    return true;
}

// --- running -------------------------------------------------------------------

std::vector<const DatasetItem*> select_items(const DatasetSplit& split, const EvalOptions& options) {
    std::vector<const DatasetItem*> out;
    out.reserve(split.items.size());
    for (const auto& it : split.items) out.push_back(&it);
    if (options.seed) {
        std::mt19937_64 rng(*options.seed);
        // Fisher-Yates with an explicit draw so the order does not depend on
        // the standard library's shuffle implementation.
        for (std::size_t i = out.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng() % i);
            std::swap(out[i - 1], out[j]);
        }
    }
    if (options.limit && *options.limit < out.size()) out.resize(*options.limit);
    return out;
}

ItemRecord evaluate_item(const DatasetItem& item, const MethodConfig& method, const Backends& backends) {
    const auto start = std::chrono::steady_clock::now();
    ItemRecord r;
    r.id = item.id;
    r.question = item.question;
    r.gold = join(item.gold, "|");
    r.category = item.category;
    r.table_tokens = estimate_tokens(render_markdown(*item.table));
    FinalResult result = run_method(*item.table, item.question, method, backends);
    r.prediction = result.answer.value;
    r.provenance = std::string(to_string(result.answer.provenance));
    r.match = result.answer.provenance != Provenance::error && em_match(result.answer, r.gold);
    for (const auto& e : result.state.transcript) {
        r.stages.push_back({e.stage, e.prompt_tokens, e.completion_tokens});
        r.prompt_tokens += e.prompt_tokens;
        r.completion_tokens += e.completion_tokens;
    }
    r.error = result.state.error;
    r.llm_time_s = result.llm_s;
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

EvalReport run_eval(const DatasetSplit& split, const MethodConfig& method, const Backends& backends,
                    const EvalOptions& options) {
    EvalReport report;
    report.split = split.name;
    report.method = method_name(method);
    if (method.kind == MethodKind::tabpot) {
        if (!method.use_plan) report.ablations.push_back("plan");
        if (!method.use_correction) report.ablations.push_back("correction");
        if (!method.use_default) report.ablations.push_back("default");
    }
    report.db_digest = backends.db.digest();
    report.warnings = split.warnings;

    const auto items = select_items(split, options);
    std::set<std::string> wanted;
    for (const auto* it : items) wanted.insert(it->id);

    std::map<std::string, ItemRecord> done;
    if (options.resume && !options.checkpoint_path.empty() && fs::exists(options.checkpoint_path)) {
        std::ifstream in(options.checkpoint_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                ItemRecord r = item_record_from_json(nlohmann::json::parse(line));
                if (wanted.count(r.id)) done[r.id] = std::move(r);
            } catch (const std::exception&) {
                // A torn final line from an interrupted run is dropped and redone.
                report.warnings.push_back("ignored unreadable checkpoint line");
            }
        }
    }

    std::vector<const DatasetItem*> todo;
    for (const auto* it : items)
        if (!done.count(it->id)) todo.push_back(it);

    std::ofstream checkpoint;
    if (!options.checkpoint_path.empty()) {
        checkpoint.open(options.checkpoint_path, options.resume ? std::ios::app : std::ios::trunc);
        if (!checkpoint) throw MissingFiles("cannot open checkpoint " + options.checkpoint_path);
        if (options.resume) {
            // Terminate a torn last line so the next record starts fresh.
            std::ifstream tail(options.checkpoint_path, std::ios::binary | std::ios::ate);
            if (tail && tail.tellg() > 0) {
                tail.seekg(-1, std::ios::end);
                if (tail.get() != '\n') checkpoint << '\n';
            }
        }
    }

    std::mutex mu;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= todo.size()) return;
            ItemRecord r;
            try {
                r = evaluate_item(*todo[i], method, backends);
            } catch (const std::exception& e) {
                r.id = todo[i]->id;
                r.question = todo[i]->question;
                r.gold = join(todo[i]->gold, "|");
                r.category = todo[i]->category;
                r.prediction = std::string(kErrorAnswer);
                r.provenance = std::string(to_string(Provenance::error));
                r.error = e.what();
            }
            std::lock_guard lock(mu);
            if (checkpoint.is_open()) {
                checkpoint << to_json(r, true).dump() << '\n';
                checkpoint.flush();
            }
            done[r.id] = std::move(r);
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(options.workers, todo.size()));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    for (auto& [id, r] : done) report.records.push_back(std::move(r));
    compute_scores(report);
    return report;
}

// --- crossover -----------------------------------------------------------------

CrossoverReport crossover_report(const std::vector<ItemRecord>& a, const std::vector<ItemRecord>& b,
                                 std::string method_a, std::string method_b, std::size_t bins) {
    CrossoverReport out;
    out.method_a = std::move(method_a);
    out.method_b = std::move(method_b);
    std::unordered_map<std::string, const ItemRecord*> by_id;
    for (const auto& r : b) by_id[r.id] = &r;

    struct Point {
        double x;
        double ya;
        double yb;
    };
    std::vector<Point> points;
    std::size_t unpaired = 0;
    for (const auto& r : a) {
        auto it = by_id.find(r.id);
        if (it == by_id.end()) {
            ++unpaired;
            continue;
        }
        points.push_back({static_cast<double>(r.table_tokens), static_cast<double>(r.prompt_tokens),
                          static_cast<double>(it->second->prompt_tokens)});
    }
    unpaired += b.size() - points.size();
    if (unpaired > 0) out.warnings.push_back(std::to_string(unpaired) + " records have no counterpart and were skipped");
    if (points.empty()) throw InsufficientData("no items evaluated by both methods");
    if (bins == 0) throw PreconditionError("bin count must be positive");

    std::set<double> distinct;
    for (const auto& p : points) distinct.insert(p.x);
    if (distinct.size() < bins) {
        out.warnings.push_back("only " + std::to_string(distinct.size()) + " distinct table sizes; using " +
                               std::to_string(distinct.size()) + " bins instead of " + std::to_string(bins));
        bins = distinct.size();
    }
    const double lo = *distinct.begin();
    const double hi = *distinct.rbegin();
    const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;

    std::vector<double> sum_a(bins, 0.0), sum_b(bins, 0.0);
    std::vector<std::size_t> count(bins, 0);
    for (const auto& p : points) {
        std::size_t k = hi > lo ? static_cast<std::size_t>((p.x - lo) / width) : 0;
        if (k >= bins) k = bins - 1;
        sum_a[k] += p.ya;
        sum_b[k] += p.yb;
        ++count[k];
    }
    for (std::size_t k = 0; k < bins; ++k) {
        CrossoverBin bin;
        bin.lo = lo + width * static_cast<double>(k);
        bin.hi = k + 1 == bins ? std::max(hi, bin.lo + width) : lo + width * static_cast<double>(k + 1);
        bin.items = count[k];
        if (count[k] > 0) {
            bin.mean_a = sum_a[k] / static_cast<double>(count[k]);
            bin.mean_b = sum_b[k] / static_cast<double>(count[k]);
        }
        out.bins.push_back(bin);
    }
    return out;
}

std::string to_csv(const CrossoverReport& report) {
    auto fmt = [](double v) {
        std::ostringstream ss;
        ss.precision(6);
        ss << std::fixed << v;
        std::string s = ss.str();
        while (!s.empty() && s.back() == '0') s.pop_back();
        if (!s.empty() && s.back() == '.') s.pop_back();
        return s;
    };
    std::string out = "bin,table_tokens_lo,table_tokens_hi,items," + report.method_a + "_prompt_tokens," +
                      report.method_b + "_prompt_tokens\n";
    for (std::size_t k = 0; k < report.bins.size(); ++k) {
        const auto& b = report.bins[k];
        out += std::to_string(k) + "," + fmt(b.lo) + "," + fmt(b.hi) + "," + std::to_string(b.items) + ",";
        out += (b.mean_a ? fmt(*b.mean_a) : std::string{}) + ",";
        out += (b.mean_b ? fmt(*b.mean_b) : std::string{}) + "\n";
    }
    return out;
}

}  // namespace tabpot
