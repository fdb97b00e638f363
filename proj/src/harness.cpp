#include "flowkv/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "flowkv/error.hpp"
#include "flowkv/rng.hpp"

namespace flowkv {

// ---- scenarios ----

void Scenario::validate(int vocab) const {
    auto check_ids = [&](const std::vector<std::int32_t>& ids, const std::string& what) {
        if (ids.empty()) throw Error(ErrorKind::ConfigError, "scenario '" + id + "': " + what + " is empty");
        for (auto t : ids)
            if (t < 0 || t >= vocab)
                throw Error(ErrorKind::ConfigError, "scenario '" + id + "': " + what + " has token id " +
                                                        std::to_string(t) + " outside [0, " + std::to_string(vocab) + ")");
    };
    check_ids(system_prompt, "system prompt");
    if (turns.empty()) throw Error(ErrorKind::ConfigError, "scenario '" + id + "' has no turns");
    for (std::size_t i = 0; i < turns.size(); ++i) check_ids(turns[i], "query " + std::to_string(i + 1));
}

nlohmann::json to_json(const Scenario& s) {
    return {{"id", s.id}, {"system_prompt", s.system_prompt}, {"turns", s.turns}};
}

Scenario scenario_from_json(const nlohmann::json& j) {
    try {
        Scenario s;
        s.id = j.at("id").get<std::string>();
        s.system_prompt = j.at("system_prompt").get<std::vector<std::int32_t>>();
        s.turns = j.at("turns").get<std::vector<std::vector<std::int32_t>>>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ConfigError, std::string("scenario: ") + e.what());
    }
}

std::vector<Scenario> read_scenarios(std::istream& in) {
    std::vector<Scenario> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::ConfigError, "scenario line " + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(scenario_from_json(j));
    }
    return out;
}

std::vector<Scenario> read_scenarios(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    return read_scenarios(in);
}

void write_scenarios(std::ostream& out, const std::vector<Scenario>& scenarios) {
    for (const auto& s : scenarios) out << to_json(s).dump() << '\n';
}

void SyntheticSpec::validate() const {
    if (turns < 1) throw Error(ErrorKind::ConfigError, "synthetic turns must be at least 1");
    if (sys_min < 1 || sys_min > sys_max) throw Error(ErrorKind::ConfigError, "bad system prompt length range");
    if (query_min < 1 || query_min > query_max) throw Error(ErrorKind::ConfigError, "bad query length range");
    if (vocab < 2) throw Error(ErrorKind::ConfigError, "synthetic vocab must be at least 2");
}

std::vector<Scenario> generate_scenarios(const SyntheticSpec& spec) {
    spec.validate();
    std::vector<Scenario> out;
    out.reserve(spec.count);
    const auto width = std::to_string(spec.count > 0 ? spec.count - 1 : 0).size();
    for (std::size_t i = 0; i < spec.count; ++i) {
        SplitMix64 rng(derive_seed(spec.seed, i));
        auto draw_len = [&](std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(rng.below(hi - lo + 1)); };
        auto draw_ids = [&](std::size_t n) {
            std::vector<std::int32_t> ids(n);
            for (auto& t : ids) t = 1 + static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(spec.vocab - 1)));
            return ids;
        };
        Scenario s;
        std::string idx = std::to_string(i);
        s.id = "syn-" + std::string(width - idx.size(), '0') + idx;
        s.system_prompt = draw_ids(draw_len(spec.sys_min, spec.sys_max));
        for (int t = 0; t < spec.turns; ++t) s.turns.push_back(draw_ids(draw_len(spec.query_min, spec.query_max)));
        out.push_back(std::move(s));
    }
    return out;
}

// ---- config ----

void SweepConfig::validate() const {
    if (ratios.empty()) throw Error(ErrorKind::ConfigError, "ratios must be non-empty");
    if (strategies.empty()) throw Error(ErrorKind::ConfigError, "strategies must be non-empty");
    if (seeds.empty()) throw Error(ErrorKind::ConfigError, "seeds must be non-empty");
    for (double r : ratios) {
        if (!invert_ratio && !(r >= 0.0 && r < 1.0))
            throw Error(ErrorKind::ConfigError, "compression ratio " + std::to_string(r) + " outside [0, 1)");
        GlobalBudget::from_ratio(r, invert_ratio);
    }
    if (max_response_tokens < 1) throw Error(ErrorKind::ConfigError, "max_response_tokens must be at least 1");
    if (eos_id >= model.vocab) throw Error(ErrorKind::ConfigError, "eos_id outside the vocabulary");
    policy.validate();
    model.validate();
    if (synthetic) synthetic->validate();
}

namespace {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
    for (const auto& [k, _] : j.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
            throw Error(ErrorKind::ConfigError, "unknown key '" + k + "' in " + where);
    }
}

PolicyConfig policy_from_json(const nlohmann::json& j) {
    reject_unknown(j, {"kind", "sink_count", "obs_window", "pool_kernel", "chunk_size", "seed"}, "policy");
    PolicyConfig p;
    if (j.contains("kind")) p.kind = parse_policy_kind(j.at("kind").get<std::string>());
    read_opt(j, "sink_count", p.sink_count);
    read_opt(j, "obs_window", p.obs_window);
    read_opt(j, "pool_kernel", p.pool_kernel);
    read_opt(j, "chunk_size", p.chunk_size);
    read_opt(j, "seed", p.seed);
    return p;
}

ModelConfig model_from_json(const nlohmann::json& j) {
    reject_unknown(j, {"vocab", "layers", "heads", "head_dim", "d_model", "ffn_mult", "max_seq", "seed"}, "model");
    ModelConfig m;
    read_opt(j, "vocab", m.vocab);
    read_opt(j, "layers", m.layers);
    read_opt(j, "heads", m.heads);
    read_opt(j, "head_dim", m.head_dim);
    m.d_model = m.heads * m.head_dim;
    read_opt(j, "d_model", m.d_model);
    read_opt(j, "ffn_mult", m.ffn_mult);
    read_opt(j, "max_seq", m.max_seq);
    read_opt(j, "seed", m.seed);
    return m;
}

SyntheticSpec synthetic_from_json(const nlohmann::json& j) {
    reject_unknown(j, {"count", "turns", "sys_min", "sys_max", "query_min", "query_max", "seed"}, "synthetic");
    SyntheticSpec s;
    read_opt(j, "count", s.count);
    read_opt(j, "turns", s.turns);
    read_opt(j, "sys_min", s.sys_min);
    read_opt(j, "sys_max", s.sys_max);
    read_opt(j, "query_min", s.query_min);
    read_opt(j, "query_max", s.query_max);
    read_opt(j, "seed", s.seed);
    return s;
}

}  // namespace

SweepConfig sweep_config_from_json(const nlohmann::json& j) {
    SweepConfig c;
    try {
        if (!j.is_object()) throw Error(ErrorKind::ConfigError, "config must be a JSON object");
        reject_unknown(j,
                       {"ratios", "strategies", "policy", "model", "max_response_tokens", "eos_id", "invert_ratio",
                        "strict_budget", "seeds", "output_dir", "scenarios"},
                       "config");
        read_opt(j, "ratios", c.ratios);
        if (j.contains("strategies")) {
            c.strategies.clear();
            for (const auto& s : j.at("strategies")) c.strategies.push_back(parse_strategy(s.get<std::string>()));
        }
        if (j.contains("policy")) c.policy = policy_from_json(j.at("policy"));
        if (j.contains("model")) c.model = model_from_json(j.at("model"));
        read_opt(j, "max_response_tokens", c.max_response_tokens);
        read_opt(j, "eos_id", c.eos_id);
        read_opt(j, "invert_ratio", c.invert_ratio);
        read_opt(j, "strict_budget", c.strict_budget);
        read_opt(j, "seeds", c.seeds);
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("scenarios")) {
            const auto& s = j.at("scenarios");
            reject_unknown(s, {"path", "synthetic"}, "scenarios");
            if (s.contains("path")) c.scenario_path = s.at("path").get<std::string>();
            if (s.contains("synthetic")) {
                c.synthetic = synthetic_from_json(s.at("synthetic"));
                c.synthetic->vocab = c.model.vocab;
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ConfigError, e.what());
    }
    c.validate();
    return c;
}

SweepConfig load_sweep_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ConfigError, path.string() + ": " + e.what());
    }
    auto cfg = sweep_config_from_json(j);
    if (cfg.scenario_path && cfg.scenario_path->is_relative())
        cfg.scenario_path = path.parent_path() / *cfg.scenario_path;
    return cfg;
}

nlohmann::json to_json(const SweepConfig& c) {
    nlohmann::json strategies = nlohmann::json::array();
    for (auto s : c.strategies) strategies.push_back(std::string(to_string(s)));
    nlohmann::json j = {
        {"ratios", c.ratios},
        {"strategies", strategies},
        {"policy",
         {{"kind", std::string(to_string(c.policy.kind))},
          {"sink_count", c.policy.sink_count},
          {"obs_window", c.policy.obs_window},
          {"pool_kernel", c.policy.pool_kernel},
          {"chunk_size", c.policy.chunk_size},
          {"seed", c.policy.seed}}},
        {"model",
         {{"vocab", c.model.vocab},
          {"layers", c.model.layers},
          {"heads", c.model.heads},
          {"head_dim", c.model.head_dim},
          {"d_model", c.model.d_model},
          {"ffn_mult", c.model.ffn_mult},
          {"max_seq", c.model.max_seq},
          {"seed", c.model.seed}}},
        {"max_response_tokens", c.max_response_tokens},
        {"eos_id", c.eos_id},
        {"invert_ratio", c.invert_ratio},
        {"strict_budget", c.strict_budget},
        {"seeds", c.seeds},
        {"output_dir", c.output_dir.string()},
    };
    if (c.scenario_path || c.synthetic) {
        nlohmann::json s = nlohmann::json::object();
        if (c.scenario_path) s["path"] = c.scenario_path->string();
        if (c.synthetic)
            s["synthetic"] = {{"count", c.synthetic->count},         {"turns", c.synthetic->turns},
                              {"sys_min", c.synthetic->sys_min},     {"sys_max", c.synthetic->sys_max},
                              {"query_min", c.synthetic->query_min}, {"query_max", c.synthetic->query_max},
                              {"seed", c.synthetic->seed}};
        j["scenarios"] = s;
    }
    return j;
}

std::vector<Scenario> load_scenarios(const SweepConfig& cfg) {
    std::vector<Scenario> out;
    if (cfg.scenario_path) out = read_scenarios(*cfg.scenario_path);
    if (cfg.synthetic) {
        auto syn = generate_scenarios(*cfg.synthetic);
        out.insert(out.end(), syn.begin(), syn.end());
    }
    if (out.empty()) throw Error(ErrorKind::ConfigError, "config names no scenarios");
    for (const auto& s : out) s.validate(cfg.model.vocab);
    return out;
}

ModelConfig model_for_seed(const SweepConfig& cfg, std::uint64_t seed) {
    ModelConfig m = cfg.model;
    m.seed = derive_seed(cfg.model.seed, seed);
    return m;
}

PolicyConfig policy_for_seed(const SweepConfig& cfg, std::uint64_t seed) {
    PolicyConfig p = cfg.policy;
    p.seed = derive_seed(cfg.policy.seed, seed);
    return p;
}

// ---- sessions ----

std::vector<SegmentSurvival> survival_report(const CachePool& pool) {
    std::vector<SegmentSurvival> out;
    out.reserve(pool.segment_count());
    for (const auto& seg : pool.segments()) out.push_back({seg.kind, seg.size(), seg.original_len, seg.survival()});
    return out;
}

SessionReport run_scenario(const Scenario& s, const Cell& cell, const SweepConfig& cfg, const Model& model) {
    s.validate(model.config().vocab);
    TurnConfig tc;
    tc.policy = policy_for_seed(cfg, cell.seed);
    tc.budget = GlobalBudget::from_ratio(cell.ratio, cfg.invert_ratio);
    tc.max_response_tokens = cfg.max_response_tokens;
    tc.eos_id = cfg.eos_id;
    tc.strict_budget = cfg.strict_budget;

    SessionReport r;
    r.scenario_id = s.id;
    r.cell = cell;

    TimingProbe probe;
    TurnObserver observer;
    observer.on_prefill_done = [&] { probe.mark_prefill(); };
    observer.on_token = [&](std::size_t) { probe.mark_token(); };

    const std::size_t last = s.turns.size() - 1;
    if (last == 0) probe.start();
    CachePool pool = start_session(model, s.system_prompt);
    for (std::size_t t = 0; t < s.turns.size(); ++t) {
        if (t == last && last != 0) probe.start();
        auto out = run_turn(cell.strategy, pool, model, s.turns[t], tc, &observer);
        r.responses.push_back(std::move(out.response));
        r.turns.push_back(std::move(out.record));
        r.survival.push_back(survival_report(pool));
    }
    probe.finish();

    const auto& fin = r.turns.back();
    r.cache_fraction = cache_fraction(fin.post_compress_len, fin.s_full);
    r.timing = probe.stats(r.cache_fraction);
    r.ledger = pool.compression_ledger();
    r.pool = std::move(pool);
    return r;
}

SessionReport run_scenario(const Scenario& s, const Cell& cell, const SweepConfig& cfg) {
    const Model model(model_for_seed(cfg, cell.seed));
    return run_scenario(s, cell, cfg, model);
}

std::optional<std::string> check_ledger_laws(const SessionReport& r) {
    const int T = static_cast<int>(r.turns.size());
    for (const auto& [kind, count] : r.ledger) {
        int expected = 0;
        switch (r.cell.strategy) {
            case Strategy::Full: expected = 0; break;
            case Strategy::Baseline: expected = T - kind.turn; break;
            case Strategy::FlowKV: expected = kind.turn < T ? 1 : 0; break;
        }
        if (count != expected)
            return r.scenario_id + " " + std::string(to_string(r.cell.strategy)) + ": ledger " + kind.label() + "=" +
                   std::to_string(count) + ", expected " + std::to_string(expected);
    }
    return std::nullopt;
}

std::optional<std::string> check_budget(const SessionReport& r) {
    for (const auto& t : r.turns) {
        if (t.post_compress_len > t.pre_compress_len)
            return r.scenario_id + ": turn " + std::to_string(t.turn) + " grew during compression";
        if (!t.compressed || t.clamped) continue;
        if (t.post_compress_len != t.target)
            return r.scenario_id + " " + std::string(to_string(r.cell.strategy)) + ": turn " + std::to_string(t.turn) +
                   " post-compress " + std::to_string(t.post_compress_len) + " != target " + std::to_string(t.target);
    }
    return std::nullopt;
}

// ---- sweep ----

int SweepReport::exit_code() const {
    if (!invariant_violations.empty()) return 3;
    if (failed_cells > 0) return 4;
    return 0;
}

namespace {

struct Job {
    std::size_t scenario = 0;
    Cell cell;
};

struct JobResult {
    std::vector<SweepRow> rows;
    std::vector<std::string> violations;
    bool failed = false;
};

JobResult run_job(const Scenario& s, const Job& job, const SweepConfig& cfg, const Model& model) {
    JobResult res;
    SweepRow base;
    base.scenario_id = s.id;
    base.strategy = job.cell.strategy;
    base.policy = std::string(to_string(cfg.policy.kind));
    base.ratio = job.cell.ratio;
    base.seed = job.cell.seed;
    try {
        const auto rep = run_scenario(s, job.cell, cfg, model);
        if (auto v = check_ledger_laws(rep)) res.violations.push_back(*v);
        if (auto v = check_budget(rep)) res.violations.push_back(*v);
        for (std::size_t i = 0; i < rep.turns.size(); ++i) {
            SweepRow row = base;
            row.turn = rep.turns[i].turn;
            row.record = rep.turns[i];
            row.cache_fraction = cache_fraction(row.record.post_compress_len, row.record.s_full);
            double sum = 0.0, mn = 1.0;
            for (const auto& sv : rep.survival[i]) {
                if (sv.kind.type == SegmentType::SystemPrompt) row.sys_survival = sv.fraction;
                sum += sv.fraction;
                mn = std::min(mn, sv.fraction);
            }
            row.mean_survival = sum / static_cast<double>(rep.survival[i].size());
            row.min_survival = mn;
            if (i + 1 == rep.turns.size()) row.timing = rep.timing;
            res.rows.push_back(std::move(row));
        }
    } catch (const Error& e) {
        base.status = "error:" + std::string(to_string(e.kind()));
        res.rows.push_back(std::move(base));
        res.failed = true;
    } catch (const std::exception& e) {
        base.status = "error:internal";
        res.rows.push_back(std::move(base));
        res.failed = true;
    }
    return res;
}

auto row_key(const SweepRow& r) {
    return std::make_tuple(std::cref(r.scenario_id), static_cast<int>(r.strategy), r.ratio, r.seed, r.turn);
}

}  // namespace

SweepReport run_sweep(const std::vector<Scenario>& scenarios, const SweepConfig& cfg, std::size_t jobs) {
    cfg.validate();
    if (scenarios.empty()) throw Error(ErrorKind::ConfigError, "sweep needs at least one scenario");
    for (const auto& s : scenarios) s.validate(cfg.model.vocab);
    {
        std::set<std::string> ids;
        for (const auto& s : scenarios)
            if (!ids.insert(s.id).second) throw Error(ErrorKind::ConfigError, "duplicate scenario id '" + s.id + "'");
    }

    std::map<std::uint64_t, Model> models;
    for (auto seed : cfg.seeds) models.try_emplace(seed, model_for_seed(cfg, seed));

    std::vector<Job> work;
    for (std::size_t si = 0; si < scenarios.size(); ++si)
        for (auto strategy : cfg.strategies)
            for (double ratio : cfg.ratios)
                for (auto seed : cfg.seeds) work.push_back({si, Cell{strategy, ratio, seed}});

    std::vector<JobResult> results(work.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < work.size(); i = next++)
            results[i] = run_job(scenarios[work[i].scenario], work[i], cfg, models.at(work[i].cell.seed));
    };
    jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(1, work.size()));
    {
        std::vector<std::jthread> pool;
        for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
        worker();
    }

    SweepReport report;
    for (auto& r : results) {
        report.failed_cells += r.failed;
        for (auto& v : r.violations) report.invariant_violations.push_back(std::move(v));
        for (auto& row : r.rows) report.rows.push_back(std::move(row));
    }
    std::sort(report.rows.begin(), report.rows.end(),
              [](const SweepRow& a, const SweepRow& b) { return row_key(a) < row_key(b); });
    std::sort(report.invariant_violations.begin(), report.invariant_violations.end());

    // Cross-strategy fairness wherever both strategies saw the same history size.
    std::map<std::tuple<std::string, double, std::uint64_t, int>, std::pair<const SweepRow*, const SweepRow*>> pairs;
    for (const auto& row : report.rows) {
        if (row.status != "ok") continue;
        auto& slot = pairs[{row.scenario_id, row.ratio, row.seed, row.turn}];
        if (row.strategy == Strategy::Baseline) slot.first = &row;
        if (row.strategy == Strategy::FlowKV) slot.second = &row;
    }
    for (const auto& [key, p] : pairs) {
        if (!p.first || !p.second || p.first->record.s_full != p.second->record.s_full) continue;
        const auto a = p.first->record.post_compress_len, b = p.second->record.post_compress_len;
        if ((a > b ? a - b : b - a) > 1)
            report.invariant_violations.push_back(std::get<0>(key) + ": turn " + std::to_string(std::get<3>(key)) +
                                                  " baseline " + std::to_string(a) + " vs flowkv " + std::to_string(b));
    }
    return report;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string fmt_ms(double seconds) { return fmt(seconds * 1000.0); }

}  // namespace

std::string sweep_csv(const SweepReport& report) {
    std::ostringstream os;
    os << kSweepHeader << '\n'
       << "scenario_id,strategy,policy,ratio,seed,turn,status,s_full,target,pre_len,post_len,local_keep,"
          "local_retention,clamped,ledger,cache_fraction,sys_survival,mean_survival,min_survival,response_len,"
          "prefill_ms,ttft_ms,tpot_ms\n";
    for (const auto& r : report.rows) {
        os << r.scenario_id << ',' << to_string(r.strategy) << ',' << r.policy << ',' << fmt(r.ratio) << ',' << r.seed
           << ',' << r.turn << ',' << r.status << ',';
        if (r.status == "ok") {
            const auto& t = r.record;
            os << t.s_full << ',' << t.target << ',' << t.pre_compress_len << ',' << t.post_compress_len << ','
               << t.local_keep_count << ',' << fmt(t.local_retention) << ',' << (t.clamped ? 1 : 0) << ','
               << ledger_string(t.ledger) << ',' << fmt(r.cache_fraction) << ',' << fmt(r.sys_survival) << ','
               << fmt(r.mean_survival) << ',' << fmt(r.min_survival) << ',' << t.response_len << ',';
        } else {
            os << ",,,,,,,,,,,,,";
        }
        if (r.timing) os << fmt_ms(r.timing->prefill_s) << ',' << fmt_ms(r.timing->ttft_s) << ',' << fmt(r.timing->tpot_ms);
        else os << ",,";
        os << '\n';
    }
    return os.str();
}

std::string summary_csv(const SweepReport& report) {
    struct Acc {
        std::vector<double> post, frac, sys;
    };
    std::map<std::tuple<std::string, int, double, int>, Acc> groups;
    std::map<std::tuple<std::string, int, double, int>, std::string> policy_of;
    for (const auto& r : report.rows) {
        if (r.status != "ok") continue;
        const auto key = std::make_tuple(r.scenario_id, static_cast<int>(r.strategy), r.ratio, r.turn);
        auto& a = groups[key];
        a.post.push_back(static_cast<double>(r.record.post_compress_len));
        a.frac.push_back(r.cache_fraction);
        a.sys.push_back(r.sys_survival);
        policy_of[key] = r.policy;
    }
    auto mean_std = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
        return fmt(m) + ',' + fmt(sd);
    };
    std::ostringstream os;
    os << kSummaryHeader << '\n'
       << "scenario_id,strategy,policy,ratio,turn,runs,post_len_mean,post_len_std,cache_fraction_mean,"
          "cache_fraction_std,sys_survival_mean,sys_survival_std\n";
    for (const auto& [key, a] : groups) {
        const auto& [id, strategy, ratio, turn] = key;
        os << id << ',' << to_string(static_cast<Strategy>(strategy)) << ',' << policy_of[key] << ',' << fmt(ratio)
           << ',' << turn << ',' << a.post.size() << ',' << mean_std(a.post) << ',' << mean_std(a.frac) << ','
           << mean_std(a.sys) << '\n';
    }
    return os.str();
}

void write_sweep_outputs(const SweepReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
    auto write = [&](const std::filesystem::path& p, const std::string& body) {
        std::ofstream out(p, std::ios::binary);
        if (!out) throw Error(ErrorKind::IoError, "cannot write " + p.string());
        out << body;
    };
    write(dir / "sweep.csv", sweep_csv(report));
    write(dir / "summary.csv", summary_csv(report));
    if (!report.invariant_violations.empty()) {
        std::string body;
        for (const auto& v : report.invariant_violations) body += v + '\n';
        write(dir / "violations.txt", body);
    }
}

}  // namespace flowkv
