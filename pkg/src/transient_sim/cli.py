"""Command-line experiment runner.

Exit codes: 0 for success (attack leaked, channel ran clean, matrix diff
empty), 1 for an experiment that ran but failed, 2 for usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from .attacks import (
    DEFAULT_SECRET,
    MATRIX_PROFILES,
    Scenario,
    SecretLocation,
    WindowTrigger,
    run_matrix,
    run_meltdown_v3,
    run_meltdown_v3a,
    run_spectre_rsb,
    run_spectre_v1,
    run_spectre_v4,
)
from .config import (
    ConfigError,
    ExperimentConfig,
    OUTPUT_FORMATS,
    SCENARIOS,
    SECRET_LOCS,
    VARIANTS,
    load_config,
)
from .covert import ChannelConfig, latency_trace_to_csv, run_channel, sweep_bits
from .mitigations import MitigationSet, demo_refill_bypass, pmu_noise_effect
from .profiles import PROFILES
from .reporting import SuiteReport, emit_report

_SCENARIO_TRIGGERS = {
    "specload": WindowTrigger.SPECULATIVE_LOAD,
    "cachemiss": WindowTrigger.CACHE_MISS,
    "pagefault": WindowTrigger.PAGE_FAULT,
}
_SECRET_LOCATIONS = {
    "l1": SecretLocation.L1,
    "dram": SecretLocation.MAIN_MEMORY,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transient-sim",
        description="Run speculative-execution attack and covert-channel experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_profiles = sub.add_parser("profiles", help="list the bundled CPU profiles")
    p_profiles.add_argument("action", nargs="?", default="list", choices=["list"])

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config file")
    common.add_argument("--profile", choices=sorted(PROFILES))
    common.add_argument("--seed", type=int)
    common.add_argument("--format", dest="output", choices=OUTPUT_FORMATS)

    p_attack = sub.add_parser("attack", parents=[common], help="run one attack variant")
    p_attack.add_argument("--variant", choices=VARIANTS)
    p_attack.add_argument("--scenario", choices=SCENARIOS)
    p_attack.add_argument("--secret-loc", dest="secret_loc", choices=SECRET_LOCS)
    p_attack.add_argument("--secret", dest="secret_hex", help="secret bytes as hex")

    p_covert = sub.add_parser("covert", parents=[common], help="run the covert channel once")
    p_covert.add_argument("--bits", type=int)
    p_covert.add_argument("--message", dest="message_hex", help="payload as hex")
    p_covert.add_argument("--noise", type=float)
    p_covert.add_argument("--cs-cost", dest="context_switch_cost", type=int)
    p_covert.add_argument("--probe-cost", dest="probe_cost_per_line", type=int)
    p_covert.add_argument("--fill-depth", dest="rsb_fill_depth", type=int)
    p_covert.add_argument(
        "--emit-latency-trace",
        metavar="PATH",
        help="write the per-probe latency grid as CSV",
    )

    p_sweep = sub.add_parser(
        "sweep-bits", parents=[common], help="run the channel at every symbol width"
    )
    p_sweep.add_argument("--message", dest="message_hex")
    p_sweep.add_argument("--noise", type=float)

    p_matrix = sub.add_parser(
        "matrix", parents=[common], help="reproduce the full susceptibility matrix"
    )
    p_matrix.add_argument("--secret", dest="secret_hex")

    p_mit = sub.add_parser(
        "mitigate", parents=[common], help="show what a set of countermeasures changes"
    )
    p_mit.add_argument(
        "--flags",
        required=True,
        help="comma-separated mitigation flags; pmu noise as pmu_noise_amplitude=N",
    )

    return parser


def _merge_config(args, experiment: str) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        cfg = cfg.with_updates(experiment=experiment)
    else:
        cfg = ExperimentConfig(experiment=experiment)
    updates = {}
    for key in (
        "profile",
        "seed",
        "output",
        "variant",
        "scenario",
        "secret_loc",
        "secret_hex",
        "bits",
        "message_hex",
        "noise",
        "context_switch_cost",
        "probe_cost_per_line",
        "rsb_fill_depth",
    ):
        value = getattr(args, key, None)
        if value is not None:
            updates[key] = value
    return cfg.with_updates(**updates)


def _parse_flags(spec: str) -> MitigationSet:
    values: dict = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            key, _, raw = part.partition("=")
            try:
                values[key.strip()] = int(raw)
            except ValueError:
                raise ConfigError(f"flag {key!r} needs an integer value, got {raw!r}") from None
        else:
            values[part] = True
    unknown = set(values) - {f.name for f in MitigationSet.__dataclass_fields__.values()}
    if unknown:
        raise ConfigError(f"unknown mitigation flags: {sorted(unknown)}")
    try:
        return MitigationSet(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _cmd_profiles(_args) -> int:
    width = max(len(n) for n in PROFILES)
    for name, prof in PROFILES.items():
        print(
            f"{name.ljust(width)}  {prof.pipeline.value:<12}  rsb={prof.rsb_size:<2} "
            f"underflow={prof.rsb_underflow.value:<15} squash={prof.squash_policy.value}"
        )
    return 0


def _cmd_attack(args) -> int:
    cfg = _merge_config(args, "attack")
    profile = cfg.resolved_profile()
    secret = cfg.secret_bytes() or DEFAULT_SECRET
    scenario = Scenario(_SCENARIO_TRIGGERS[cfg.scenario], _SECRET_LOCATIONS[cfg.secret_loc])
    if cfg.variant == "v1":
        outcome = run_spectre_v1(profile, scenario, secret, cfg.seed)
    elif cfg.variant == "rsb":
        outcome = run_spectre_rsb(profile, scenario, secret, cfg.seed)
    elif cfg.variant == "v3":
        outcome = run_meltdown_v3(profile, secret, cfg.seed)
    elif cfg.variant == "v3a":
        outcome = run_meltdown_v3a(profile, cfg.seed)
    else:
        outcome = run_spectre_v4(profile, secret, cfg.seed)
    sys.stdout.write(emit_report(outcome, cfg.output))
    return 0 if outcome.success else 1


def _channel_config(cfg: ExperimentConfig) -> ChannelConfig:
    defaults = ChannelConfig()
    return ChannelConfig(
        bits_per_cs=cfg.bits,
        context_switch_cost=(
            cfg.context_switch_cost
            if cfg.context_switch_cost is not None
            else defaults.context_switch_cost
        ),
        probe_cost_per_line=(
            cfg.probe_cost_per_line
            if cfg.probe_cost_per_line is not None
            else defaults.probe_cost_per_line
        ),
        noise_probability=cfg.noise,
        rsb_fill_depth=cfg.rsb_fill_depth,
    )


def _cmd_covert(args) -> int:
    cfg = _merge_config(args, "covert")
    profile = cfg.resolved_profile()
    channel_cfg = _channel_config(cfg)
    report = run_channel(
        profile,
        channel_cfg,
        cfg.message_bytes(),
        seed=cfg.seed,
        record_latencies=bool(args.emit_latency_trace),
    )
    if args.emit_latency_trace:
        with open(args.emit_latency_trace, "w", encoding="utf-8") as fh:
            fh.write(latency_trace_to_csv(report))
    sys.stdout.write(emit_report(report, cfg.output))
    return 1 if report.aborted else 0


def _cmd_sweep(args) -> int:
    cfg = _merge_config(args, "sweep")
    # bare `sweep-bits` prints the classic CSV; an explicit choice wins
    fmt = cfg.output if (args.output is not None or args.config) else "csv"
    profile = cfg.resolved_profile()
    reports = sweep_bits(
        profile, cfg.message_bytes(), seed=cfg.seed, noise_probability=cfg.noise
    )
    sys.stdout.write(emit_report(reports, fmt))
    return 0


def _cmd_matrix(args) -> int:
    cfg = _merge_config(args, "matrix")
    fmt = cfg.output if (args.output is not None or args.config) else "table"
    profile_set = MATRIX_PROFILES
    secret = cfg.secret_bytes() or DEFAULT_SECRET
    results = run_matrix(profiles=profile_set, secret=secret, seed=cfg.seed)
    report = SuiteReport(results=results, seed=cfg.seed)
    sys.stdout.write(emit_report(report, fmt))
    return 0 if report.passed else 1


def _cmd_mitigate(args) -> int:
    cfg = _merge_config(args, "mitigation-demo")
    flags = _parse_flags(args.flags)
    base_profile = cfg.resolved_profile()
    profile = base_profile.with_overrides(mitigations=flags)

    baseline = SuiteReport(run_matrix(profiles=[base_profile], seed=cfg.seed), cfg.seed)
    mitigated = SuiteReport(run_matrix(profiles=[profile], seed=cfg.seed), cfg.seed)
    flipped = []
    base_sus = baseline.susceptibility
    mit_sus = mitigated.susceptibility
    for cell in base_sus:
        before = base_sus[cell][base_profile.name]
        after = mit_sus[cell][profile.name]
        if before != after:
            flipped.append({"cell": cell, "before": before, "after": after})

    channel = run_channel(profile, ChannelConfig(bits_per_cs=3), seed=cfg.seed)
    summary = {
        "profile": profile.name,
        "flags": {k: v for k, v in vars(flags).items() if v},
        "cells_before": {c: base_sus[c][base_profile.name] for c in base_sus},
        "cells_after": {c: mit_sus[c][profile.name] for c in mit_sus},
        "flipped_cells": flipped,
        "channel_bandwidth_bits_per_kcycle": channel.bandwidth_bits_per_kcycle,
        "channel_erasures": channel.erasures,
        "channel_symbols": channel.symbols_sent,
        "channel_aborted": channel.aborted,
    }
    if flags.rsb_refill_on_cs or flags.rsb_flush_on_cs or flags.btb_fallback_disabled:
        summary["refill_bypass_success"] = demo_refill_bypass(profile, cfg.seed).success
    if flags.pmu_noise_amplitude:
        summary["classifier_accuracy"] = pmu_noise_effect(
            base_profile, flags.pmu_noise_amplitude, trials=1000, seed=cfg.seed
        )

    if cfg.output == "table":
        width = max(len(k) for k in summary)
        for key, value in summary.items():
            print(f"{key.ljust(width)}  {value}")
    else:
        sys.stdout.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "profiles": _cmd_profiles,
        "attack": _cmd_attack,
        "covert": _cmd_covert,
        "sweep-bits": _cmd_sweep,
        "matrix": _cmd_matrix,
        "mitigate": _cmd_mitigate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
