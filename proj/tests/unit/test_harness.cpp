#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "flowkv/error.hpp"
#include "flowkv/harness.hpp"

#ifndef FLOWKV_SOURCE_DIR
#error "FLOWKV_SOURCE_DIR must be defined"
#endif

using namespace flowkv;

namespace {

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::string strip_timing(const std::string& csv) {
    std::istringstream in(csv);
    std::string out, line;
    while (std::getline(in, line)) {
        for (int i = 0; i < 3 && line[0] != '#'; ++i) line.erase(line.rfind(','));
        out += line + '\n';
    }
    return out;
}

}  // namespace

TEST_CASE("synthetic scenarios") {
    SyntheticSpec spec = fixtures::small_corpus(20, 4, 77);
    const auto a = generate_scenarios(spec);
    const auto b = generate_scenarios(spec);
    REQUIRE(a.size() == 20);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(to_json(a[i]) == to_json(b[i]));
        CHECK(a[i].system_prompt.size() >= 64);
        CHECK(a[i].system_prompt.size() <= 128);
        CHECK(a[i].turns.size() == 4);
        for (const auto& q : a[i].turns) {
            CHECK(q.size() >= 16);
            CHECK(q.size() <= 48);
            for (auto t : q) CHECK((t >= 1 && t < 256));
        }
        CHECK_NOTHROW(a[i].validate(256));
    }
    CHECK(a[3].id == "syn-03");
}

TEST_CASE("scenario jsonl round trip and validation") {
    const auto sc = generate_scenarios(fixtures::small_corpus(3, 2, 1));
    std::stringstream ss;
    write_scenarios(ss, sc);
    const auto back = read_scenarios(ss);
    REQUIRE(back.size() == 3);
    CHECK(to_json(back[2]) == to_json(sc[2]));
    Scenario bad{"x", {1, 2}, {}};
    CHECK_THROWS_AS(bad.validate(256), Error);
    bad.turns = {{300}};
    CHECK_THROWS_AS(bad.validate(256), Error);
    std::istringstream broken("{\"id\": 1}\n");
    CHECK_THROWS_AS(read_scenarios(broken), Error);
}

TEST_CASE("checked-in example config parses") {
    const auto cfg = load_sweep_config(std::filesystem::path(FLOWKV_SOURCE_DIR) / "configs" / "example.json");
    CHECK(cfg.ratios.size() == 5);
    CHECK(cfg.strategies.size() == 3);
    CHECK(cfg.policy.kind == PolicyKind::SnapKV);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
    REQUIRE(cfg.synthetic.has_value());
    CHECK(sweep_config_from_json(to_json(cfg)).ratios == cfg.ratios);
    CHECK_NOTHROW(load_scenarios(cfg));
}

TEST_CASE("config errors") {
    auto err = [](const char* text) {
        try {
            sweep_config_from_json(nlohmann::json::parse(text));
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::IoError;
    };
    CHECK(err(R"({"strategies": []})") == ErrorKind::ConfigError);
    CHECK(err(R"({"ratios": []})") == ErrorKind::ConfigError);
    CHECK(err(R"({"ratios": [1.0]})") == ErrorKind::ConfigError);
    CHECK(err(R"({"strategies": ["nested"]})") == ErrorKind::ConfigError);
    CHECK(err(R"({"policy": {"kind": "snapkv", "pool_kernel": 4}})") == ErrorKind::ConfigError);
    CHECK(err(R"({"model": {"heads": 3}})") == ErrorKind::IoError);  // d_model follows heads * head_dim
    CHECK(err(R"({"model": {"heads": 3, "d_model": 16}})") == ErrorKind::ConfigError);
    CHECK(err(R"({"ratio": [0.5]})") == ErrorKind::ConfigError);
    CHECK(err(R"({"ratios": "half"})") == ErrorKind::ConfigError);
    CHECK(err(R"({"ratios": [1.0], "invert_ratio": true})") == ErrorKind::IoError);
}

TEST_CASE("full strategy keeps everything") {
    auto cfg = fixtures::small_config();
    const auto sc = generate_scenarios(fixtures::small_corpus(1, 3, 5)).front();
    const auto r = run_scenario(sc, Cell{Strategy::Full, 0.7, 1}, cfg);
    CHECK(r.cache_fraction == 1.0);
    for (const auto& [k, c] : r.ledger) CHECK(c == 0);
    CHECK_FALSE(check_ledger_laws(r).has_value());
    for (const auto& turn : r.survival)
        for (const auto& s : turn) CHECK(s.fraction == 1.0);
}

TEST_CASE("survival report at retention one") {
    auto cfg = fixtures::small_config();
    const auto sc = generate_scenarios(fixtures::small_corpus(1, 3, 6)).front();
    const auto r = run_scenario(sc, Cell{Strategy::Baseline, 0.0, 1}, cfg);
    for (const auto& s : survival_report(r.pool)) CHECK(s.fraction == 1.0);
    const auto half = run_scenario(sc, Cell{Strategy::FlowKV, 0.5, 1}, cfg);
    const auto sv = survival_report(half.pool);
    CHECK(sv.front().kind == SegmentKind::system());
    CHECK(sv.front().fraction == doctest::Approx(0.5).epsilon(0.02));
    CHECK(sv.back().fraction == 1.0);
}

TEST_CASE("flowkv and baseline post sizes agree per turn") {
    auto cfg = fixtures::small_config();
    for (const auto& sc : generate_scenarios(fixtures::small_corpus(5, 4, 8)))
        for (double ratio : {0.1, 0.5, 0.9}) {
            const auto b = run_scenario(sc, Cell{Strategy::Baseline, ratio, 1}, cfg);
            const auto f = run_scenario(sc, Cell{Strategy::FlowKV, ratio, 1}, cfg);
            for (std::size_t t = 0; t < b.turns.size(); ++t) {
                CHECK(b.turns[t].s_full == f.turns[t].s_full);
                const auto x = b.turns[t].post_compress_len, y = f.turns[t].post_compress_len;
                CHECK((x > y ? x - y : y - x) <= 1);
            }
            CHECK_FALSE(check_budget(b).has_value());
            CHECK_FALSE(check_budget(f).has_value());
        }
}

TEST_CASE("sweep row count, order and determinism") {
    auto cfg = fixtures::small_config();
    cfg.strategies = {Strategy::FlowKV, Strategy::Baseline};
    cfg.ratios = {0.1, 0.5, 0.9};
    const auto sc = generate_scenarios(fixtures::small_corpus(1, 3, 2));
    const auto a = run_sweep(sc, cfg, 1);
    CHECK(a.rows.size() == 18);
    CHECK(a.exit_code() == 0);
    CHECK(a.rows.front().strategy == Strategy::Baseline);
    const auto b = run_sweep(sc, cfg, 4);
    const auto csv_a = sweep_csv(a), csv_b = sweep_csv(b);
    CHECK(csv_a.rfind(kSweepHeader, 0) == 0);
    CHECK(count_lines(csv_a) == 20);
    CHECK(strip_timing(csv_a) == strip_timing(csv_b));
    CHECK(summary_csv(a) == summary_csv(b));
}

TEST_CASE("sweep marks failed cells and continues") {
    auto cfg = fixtures::small_config();
    cfg.model.max_seq = 150;  // full history overflows, compressed runs fit
    cfg.strategies = {Strategy::Full, Strategy::FlowKV};
    cfg.ratios = {0.9};
    const auto sc = generate_scenarios(fixtures::small_corpus(2, 4, 3));
    const auto rep = run_sweep(sc, cfg, 2);
    CHECK(rep.failed_cells == 2);
    CHECK(rep.exit_code() == 4);
    std::size_t errors = 0;
    for (const auto& r : rep.rows) errors += r.status == "error:SeqOverflow";
    CHECK(errors == 2);
    CHECK(sweep_csv(rep).find("error:SeqOverflow") != std::string::npos);
}

TEST_CASE("sweep rejects empty inputs") {
    auto cfg = fixtures::small_config();
    cfg.strategies.clear();
    CHECK_THROWS_AS(run_sweep(generate_scenarios(fixtures::small_corpus(1, 1, 1)), cfg), Error);
    CHECK_THROWS_AS(run_sweep({}, fixtures::small_config()), Error);
}

TEST_CASE("outputs are written") {
    auto cfg = fixtures::small_config();
    cfg.ratios = {0.5};
    const auto rep = run_sweep(generate_scenarios(fixtures::small_corpus(1, 2, 2)), cfg);
    const auto dir = std::filesystem::temp_directory_path() / "flowkv_harness_test";
    std::filesystem::remove_all(dir);
    write_sweep_outputs(rep, dir);
    CHECK(std::filesystem::exists(dir / "sweep.csv"));
    CHECK(std::filesystem::exists(dir / "summary.csv"));
    CHECK_FALSE(std::filesystem::exists(dir / "violations.txt"));
    std::ifstream in(dir / "summary.csv");
    std::string first;
    std::getline(in, first);
    CHECK(first == kSummaryHeader);
    std::filesystem::remove_all(dir);
}
