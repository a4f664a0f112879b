"""Result types and serialization for the experiment runner.

Every emitter is deterministic: the same report object serializes to the
same bytes, so suite runs can be diffed and CI-gated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .attacks import (
    EXPECTED_SUSCEPTIBILITY,
    AttackOutcome,
    matrix_mismatches,
    matrix_susceptibility,
)
from .covert import ChannelReport, sweep_to_csv


@dataclass
class SuiteReport:
    """A full susceptibility-matrix run plus its diff against the golden data."""

    results: dict  # cell -> profile name -> AttackOutcome
    seed: int
    golden: dict = field(default_factory=lambda: EXPECTED_SUSCEPTIBILITY)

    @property
    def susceptibility(self) -> dict:
        return matrix_susceptibility(self.results)

    @property
    def mismatches(self) -> list:
        return matrix_mismatches(self.results)

    @property
    def passed(self) -> bool:
        return not self.mismatches

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "passed": self.passed,
            "susceptibility": self.susceptibility,
            "mismatches": [
                {"cell": c, "profile": p, "expected": e, "actual": a}
                for c, p, e, a in self.mismatches
            ],
        }


def _yn(value: bool) -> str:
    return "Y" if value else "N"


def _matrix_csv(report: SuiteReport) -> str:
    lines = ["cell,profile,expected,actual"]
    sus = report.susceptibility
    for cell in sus:
        for prof, actual in sus[cell].items():
            expected = report.golden.get(cell, {}).get(prof)
            lines.append(f"{cell},{prof},{_yn(bool(expected))},{_yn(actual)}")
    return "\n".join(lines) + "\n"


def _matrix_table(report: SuiteReport) -> str:
    sus = report.susceptibility
    cells = list(sus)
    profiles = list(next(iter(sus.values()))) if sus else []
    name_w = max([len("profile")] + [len(p) for p in profiles])
    col_ws = [max(len(c), 1) for c in cells]
    header = "profile".ljust(name_w) + "  " + "  ".join(
        c.ljust(w) for c, w in zip(cells, col_ws)
    )
    rows = [header, "-" * len(header)]
    for prof in profiles:
        marks = [
            _yn(sus[cell][prof]).ljust(w) for cell, w in zip(cells, col_ws)
        ]
        rows.append(prof.ljust(name_w) + "  " + "  ".join(marks))
    rows.append("")
    if report.passed:
        rows.append("diff against golden tables: empty")
    else:
        rows.append(f"diff against golden tables: {len(report.mismatches)} cell(s)")
        for cell, prof, expected, actual in report.mismatches:
            rows.append(f"  {cell} / {prof}: expected {_yn(expected)}, got {_yn(actual)}")
    return "\n".join(rows) + "\n"


def _kv_table(pairs: list) -> str:
    width = max(len(k) for k, _ in pairs)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in pairs) + "\n"


def _attack_table(outcome: AttackOutcome) -> str:
    d = outcome.to_dict()
    pairs = [(k, str(d[k])) for k in ("variant", "profile", "scenario", "success",
                                      "recovered_hex", "expected_hex")]
    return _kv_table(pairs)


def _attack_csv(outcome: AttackOutcome) -> str:
    d = outcome.to_dict()
    keys = ["variant", "profile", "scenario", "success", "recovered_hex", "expected_hex"]
    return (
        ",".join(keys) + "\n" + ",".join(str(d[k]) for k in keys) + "\n"
    )


_CHANNEL_KEYS = [
    "profile",
    "bits_per_cs",
    "symbols_sent",
    "bits_sent",
    "bit_errors",
    "symbol_errors",
    "erasures",
    "total_cycles",
    "bandwidth_bits_per_kcycle",
    "required_memory_bytes",
    "aborted",
    "decoded_hex",
]


def _channel_table(report: ChannelReport) -> str:
    d = report.to_dict()
    return _kv_table([(k, str(d[k])) for k in _CHANNEL_KEYS])


def _channel_csv(report: ChannelReport) -> str:
    d = report.to_dict()
    return (
        ",".join(_CHANNEL_KEYS) + "\n"
        + ",".join(str(d[k]) for k in _CHANNEL_KEYS) + "\n"
    )


def _sweep_table(reports: list) -> str:
    header = f"{'b':>2}  {'bandwidth(b/kcyc)':>18}  {'errors':>6}  {'memory(B)':>9}"
    rows = [header, "-" * len(header)]
    for r in reports:
        rows.append(
            f"{r.bits_per_cs:>2}  {r.bandwidth_bits_per_kcycle:>18.6f}  "
            f"{r.bit_errors:>6}  {r.required_memory_bytes:>9}"
        )
    return "\n".join(rows) + "\n"


def _to_jsonable(obj):
    if isinstance(obj, SuiteReport):
        return obj.to_dict()
    if isinstance(obj, (AttackOutcome, ChannelReport)):
        return obj.to_dict()
    if isinstance(obj, list):
        return [_to_jsonable(x) for x in obj]
    return obj


def emit_report(report, fmt: str = "json") -> str:
    """Serialize any runner result: a SuiteReport, an AttackOutcome, a
    ChannelReport, or a list of ChannelReports (a sweep)."""
    if fmt == "json":
        return json.dumps(_to_jsonable(report), sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        if isinstance(report, SuiteReport):
            return _matrix_csv(report)
        if isinstance(report, AttackOutcome):
            return _attack_csv(report)
        if isinstance(report, ChannelReport):
            return _channel_csv(report)
        if isinstance(report, list):
            return sweep_to_csv(report)
    if fmt == "table":
        if isinstance(report, SuiteReport):
            return _matrix_table(report)
        if isinstance(report, AttackOutcome):
            return _attack_table(report)
        if isinstance(report, ChannelReport):
            return _channel_table(report)
        if isinstance(report, list):
            return _sweep_table(report)
    raise ValueError(f"cannot emit {type(report).__name__} as {fmt!r}")
