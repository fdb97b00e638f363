// Python module flowkv._flowkv. Structured values cross the boundary as JSON
// documents (dicts and lists on the Python side).

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "flowkv/error.hpp"
#include "flowkv/harness.hpp"
#include "flowkv/loss.hpp"
#include "flowkv/metrics.hpp"
#include "flowkv/policies.hpp"
#include "flowkv/strategies.hpp"

namespace py = pybind11;
using namespace flowkv;

namespace {

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
    return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

AttentionObservation observation(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw Error(ErrorKind::ShapeMismatch, "observation must be non-empty");
    std::vector<double> flat;
    for (const auto& r : rows) {
        if (r.size() != rows.front().size()) throw Error(ErrorKind::ShapeMismatch, "ragged observation rows");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return AttentionObservation(rows.size(), rows.front().size(), std::move(flat));
}

PolicyConfig policy_from(const py::dict& kw) {
    nlohmann::json j = from_py(kw);
    SweepConfig probe = sweep_config_from_json({{"policy", j}});
    return probe.policy;
}

nlohmann::json trace_json(const DecayTrace& t) {
    return {{"turn", t.turn}, {"signal_coeff", t.signal_coeff}, {"error_coeffs", t.error_coeffs},
            {"strategy", to_string(t.strategy)}};
}

DecayStrategy decay_strategy(const std::string& name) {
    if (name == "nested") return DecayStrategy::Nested;
    if (name == "isolated") return DecayStrategy::Isolated;
    throw Error(ErrorKind::ConfigError, "unknown decay strategy '" + name + "'");
}

nlohmann::json session_json(const SessionReport& r) {
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& t : r.turns) turns.push_back(to_json(t));
    nlohmann::json survival = nlohmann::json::array();
    for (const auto& per_turn : r.survival) {
        nlohmann::json row = nlohmann::json::object();
        for (const auto& s : per_turn)
            row[s.kind.label()] = {{"kept", s.kept}, {"original", s.original}, {"fraction", s.fraction}};
        survival.push_back(row);
    }
    return {{"scenario_id", r.scenario_id},
            {"strategy", to_string(r.cell.strategy)},
            {"ratio", r.cell.ratio},
            {"seed", r.cell.seed},
            {"turns", turns},
            {"responses", r.responses},
            {"survival", survival},
            {"ledger", ledger_string(r.ledger)},
            {"cache_fraction", r.cache_fraction},
            {"timing", to_json(r.timing)},
            {"snapshot", snapshot_json(r.pool)}};
}

std::vector<Scenario> scenarios_from(const py::list& items) {
    std::vector<Scenario> out;
    for (const auto& item : items) out.push_back(scenario_from_json(from_py(py::reinterpret_borrow<py::object>(item))));
    return out;
}

}  // namespace

PYBIND11_MODULE(_flowkv, m) {
    m.doc() = "FlowKV cache engine and multi-turn simulator";

    static PyObject* error_type = PyErr_NewException("flowkv.FlowKVError", PyExc_RuntimeError, nullptr);
    m.add_object("FlowKVError", py::handle(error_type));
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = py::reinterpret_borrow<py::object>(error_type)(e.what());
            exc.attr("kind") = std::string(to_string(e.kind()));
            PyErr_SetObject(error_type, exc.ptr());
        }
    });

    m.def("retention", [](double ratio, bool invert) { return GlobalBudget::from_ratio(ratio, invert).retention; },
          py::arg("ratio"), py::arg("invert_ratio") = false);
    m.def("target_budget",
          [](std::size_t s_full, double ratio, bool invert) { return target_budget(s_full, GlobalBudget::from_ratio(ratio, invert)); },
          py::arg("s_full"), py::arg("ratio"), py::arg("invert_ratio") = false);
    m.def(
        "new_data_budget",
        [](std::size_t s_full, std::size_t s_preserved, double ratio, std::size_t min_keep, bool strict, bool invert) {
            const auto d = new_data_budget({s_full, s_preserved, 0}, GlobalBudget::from_ratio(ratio, invert), min_keep, strict);
            return py::dict(py::arg("keep") = d.keep, py::arg("target") = d.target, py::arg("clamped") = d.clamped);
        },
        py::arg("s_full"), py::arg("s_preserved"), py::arg("ratio"), py::arg("min_keep") = 1, py::arg("strict") = false,
        py::arg("invert_ratio") = false);

    m.def("select_streaming",
          [](std::size_t n, std::size_t k, std::size_t sinks) {
              PolicyConfig c;
              c.sink_count = sinks;
              return select_streaming(n, {k}, c);
          },
          py::arg("candidates"), py::arg("keep"), py::arg("sink_count") = 4);
    m.def("select_snapkv",
          [](const std::vector<std::vector<double>>& attn, std::size_t k, std::size_t kernel, std::size_t tail) {
              PolicyConfig c;
              c.pool_kernel = kernel;
              return select_snapkv(observation(attn), {k}, c, tail);
          },
          py::arg("attention"), py::arg("keep"), py::arg("pool_kernel") = 5, py::arg("forced_tail") = 0);
    m.def("select_chunkkv",
          [](const std::vector<std::vector<double>>& attn, std::size_t k, std::size_t chunk) {
              PolicyConfig c;
              c.chunk_size = chunk;
              return select_chunkkv(observation(attn), {k}, c);
          },
          py::arg("attention"), py::arg("keep"), py::arg("chunk_size") = 4);
    m.def("select_h2o", [](const std::vector<double>& cum, std::size_t k) { return select_h2o(cum, {k}); },
          py::arg("cumulative"), py::arg("keep"));
    m.def("select_random",
          [](std::size_t n, std::size_t k, std::uint64_t seed) {
              PolicyConfig c;
              c.seed = seed;
              return select_random(n, {k}, c);
          },
          py::arg("candidates"), py::arg("keep"), py::arg("seed") = 0);
    m.def("select_expected_attention",
          [](const std::vector<std::vector<double>>& keys, const std::vector<double>& mean,
             const std::vector<std::vector<double>>& cov, std::size_t k) {
              const std::size_t d = mean.size();
              KeyMatrix km{keys.size(), d, {}};
              for (const auto& r : keys) {
                  if (r.size() != d) throw Error(ErrorKind::ShapeMismatch, "key rows must have length d");
                  km.data.insert(km.data.end(), r.begin(), r.end());
              }
              QueryStats st{mean, {}};
              for (const auto& r : cov) st.covariance.insert(st.covariance.end(), r.begin(), r.end());
              return select_expected_attention(km, st, {k});
          },
          py::arg("keys"), py::arg("mean"), py::arg("covariance"), py::arg("keep"));

    m.def("ifr",
          [](const std::vector<std::vector<std::pair<bool, bool>>>& prompts) {
              std::vector<PromptResult> in;
              for (const auto& p : prompts) {
                  PromptResult r{std::to_string(in.size()), {}};
                  for (auto [strict, loose] : p) r.instructions.push_back({strict, loose});
                  in.push_back(std::move(r));
              }
              return to_py(to_json(ifr(in)));
          },
          py::arg("prompts"), "prompts: list of [(strict, loose), ...] per prompt");
    m.def("ifr_jsonl", [](const std::string& path) { return to_py(to_json(ifr(read_prompt_results(path)))); },
          py::arg("path"));

    m.def("nested_trace", [](double a, int t) { return to_py(trace_json(nested_trace(a, t))); }, py::arg("alpha"),
          py::arg("turns"));
    m.def("isolated_trace", [](double a, int t) { return to_py(trace_json(isolated_trace(a, t))); }, py::arg("alpha"),
          py::arg("turns"));
    m.def(
        "simulate_decay",
        [](double alpha, int turns, const std::string& strategy, std::size_t dim, double noise, std::uint64_t seed) {
            const auto s = simulate_decay({alpha, dim, noise, seed}, turns, decay_strategy(strategy));
            return py::dict(py::arg("signal_coeff") = s.signal_coeff, py::arg("error_norm") = s.error_norm,
                            py::arg("final_state") = s.final_state, py::arg("initial_state") = s.initial_state);
        },
        py::arg("alpha"), py::arg("turns"), py::arg("strategy") = "nested", py::arg("dim") = 64, py::arg("noise_scale") = 0.0,
        py::arg("seed") = 0);
    m.def("loss_csv",
          [](double alpha, int turns, std::size_t dim, double noise, std::uint64_t seed) {
              return loss_csv(loss_table({alpha, dim, noise, seed}, turns));
          },
          py::arg("alpha"), py::arg("turns"), py::arg("dim") = 64, py::arg("noise_scale") = 0.0, py::arg("seed") = 0);

    m.def(
        "generate_scenarios",
        [](std::size_t count, int turns, int vocab, std::uint64_t seed, std::size_t sys_min, std::size_t sys_max,
           std::size_t query_min, std::size_t query_max) {
            SyntheticSpec spec{count, turns, sys_min, sys_max, query_min, query_max, vocab, seed};
            nlohmann::json out = nlohmann::json::array();
            for (const auto& s : generate_scenarios(spec)) out.push_back(to_json(s));
            return to_py(out);
        },
        py::arg("count") = 10, py::arg("turns") = 3, py::arg("vocab") = 256, py::arg("seed") = 0, py::arg("sys_min") = 64,
        py::arg("sys_max") = 128, py::arg("query_min") = 16, py::arg("query_max") = 48);

    m.def("policy_config", [](const py::dict& kw) { return to_py(to_json(SweepConfig{.policy = policy_from(kw)})["policy"]); },
          "Normalized policy section for the given overrides");
    m.def("default_config", []() { return to_py(to_json(SweepConfig{})); });

    m.def(
        "run_scenario",
        [](const py::object& scenario, const std::string& strategy, double ratio, std::uint64_t seed, const py::object& config) {
            const SweepConfig cfg = config.is_none() ? SweepConfig{} : sweep_config_from_json(from_py(config));
            const Scenario s = scenario_from_json(from_py(scenario));
            SessionReport r;
            {
                py::gil_scoped_release release;
                r = run_scenario(s, {parse_strategy(strategy), ratio, seed}, cfg);
            }
            return to_py(session_json(r));
        },
        py::arg("scenario"), py::arg("strategy"), py::arg("ratio"), py::arg("seed") = 1, py::arg("config") = py::none());

    m.def(
        "run_sweep",
        [](const py::object& scenarios, const py::object& config, std::size_t jobs) {
            const SweepConfig cfg = config.is_none() ? SweepConfig{} : sweep_config_from_json(from_py(config));
            // Without an explicit list, the config's own scenario source is used.
            const auto sc = scenarios.is_none() ? load_scenarios(cfg) : scenarios_from(scenarios.cast<py::list>());
            SweepReport rep;
            {
                py::gil_scoped_release release;
                rep = run_sweep(sc, cfg, jobs);
            }
            return py::dict(py::arg("sweep_csv") = sweep_csv(rep), py::arg("summary_csv") = summary_csv(rep),
                            py::arg("violations") = rep.invariant_violations, py::arg("failed_cells") = rep.failed_cells,
                            py::arg("exit_code") = rep.exit_code());
        },
        py::arg("scenarios") = py::none(), py::arg("config") = py::none(), py::arg("jobs") = 1);
}
