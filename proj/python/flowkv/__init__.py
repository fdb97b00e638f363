"""FlowKV KV-cache engine and multi-turn simulator."""

from ._flowkv import (
    FlowKVError,
    default_config,
    generate_scenarios,
    ifr,
    ifr_jsonl,
    isolated_trace,
    loss_csv,
    nested_trace,
    new_data_budget,
    policy_config,
    retention,
    run_scenario,
    run_sweep,
    select_chunkkv,
    select_expected_attention,
    select_h2o,
    select_random,
    select_snapkv,
    select_streaming,
    simulate_decay,
    target_budget,
)

__all__ = [
    "FlowKVError",
    "default_config",
    "generate_scenarios",
    "ifr",
    "ifr_jsonl",
    "isolated_trace",
    "loss_csv",
    "nested_trace",
    "new_data_budget",
    "policy_config",
    "retention",
    "run_scenario",
    "run_sweep",
    "select_chunkkv",
    "select_expected_attention",
    "select_h2o",
    "select_random",
    "select_snapkv",
    "select_streaming",
    "simulate_decay",
    "target_budget",
]
