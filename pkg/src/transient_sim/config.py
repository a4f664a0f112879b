"""Experiment configuration: JSON files, environment, and merge rules.

Precedence, highest first: explicit CLI flags, then the config file, then
profile defaults.  The seed falls back to the TRANSIENT_SIM_SEED environment
variable and finally to the fixed default, so unconfigured runs are still
reproducible.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from enum import Enum

from .core import DEFAULT_SEED
from .memory import Latencies
from .mitigations import MitigationSet
from .profiles import CpuProfile, ExceptionPolicy, PipelineKind, RsbUnderflow, SquashPolicy, get_profile

SEED_ENV_VAR = "TRANSIENT_SIM_SEED"

EXPERIMENT_KINDS = ("attack", "covert", "sweep", "matrix", "mitigation-demo")
VARIANTS = ("v1", "v3", "v3a", "v4", "rsb")
SCENARIOS = ("specload", "cachemiss", "pagefault")
SECRET_LOCS = ("l1", "dram")
OUTPUT_FORMATS = ("json", "csv", "table")


class ConfigError(ValueError):
    """A configuration file or override set that cannot be used."""


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from None


@dataclass
class ExperimentConfig:
    experiment: str = "attack"
    profile: str = "intel_i7"
    profile_overrides: dict = field(default_factory=dict)
    mitigations: dict = field(default_factory=dict)
    variant: str = "v1"
    scenario: str = "cachemiss"
    secret_loc: str = "l1"
    secret_hex: str | None = None
    bits: int = 3
    message_hex: str = "4849"
    noise: float = 0.0
    context_switch_cost: int | None = None
    probe_cost_per_line: int | None = None
    rsb_fill_depth: int | None = None
    seed: int = field(default_factory=default_seed)
    output: str = "json"

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENT_KINDS:
            raise ConfigError(
                f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENT_KINDS}"
            )
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.secret_loc not in SECRET_LOCS:
            raise ConfigError(
                f"unknown secret_loc {self.secret_loc!r}; expected one of {SECRET_LOCS}"
            )
        if self.output not in OUTPUT_FORMATS:
            raise ConfigError(f"unknown output {self.output!r}; expected one of {OUTPUT_FORMATS}")
        get_profile(self.profile)  # unknown profile fails here, early
        # Building the resolved profile applies every module-level invariant
        # (rsb_size range, latency ordering, mitigation exclusivity).
        self.resolved_profile()

    def with_updates(self, **updates) -> "ExperimentConfig":
        """Non-None updates win over current values (CLI-over-file merge)."""
        changes = {k: v for k, v in updates.items() if v is not None}
        merged = dataclasses.replace(self, **changes)
        return merged

    def message_bytes(self) -> bytes:
        try:
            return bytes.fromhex(self.message_hex)
        except ValueError:
            raise ConfigError(f"message is not valid hex: {self.message_hex!r}") from None

    def secret_bytes(self) -> bytes | None:
        if self.secret_hex is None:
            return None
        try:
            return bytes.fromhex(self.secret_hex)
        except ValueError:
            raise ConfigError(f"secret is not valid hex: {self.secret_hex!r}") from None

    def resolved_profile(self) -> CpuProfile:
        prof = get_profile(self.profile)
        if self.profile_overrides:
            prof = _apply_profile_overrides(prof, self.profile_overrides)
        if self.mitigations:
            prof = prof.with_overrides(mitigations=_build_mitigations(self.mitigations))
        return prof

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_LATENCY_FIELDS = {f.name for f in dataclasses.fields(Latencies)}
_MITIGATION_FIELDS = {f.name for f in dataclasses.fields(MitigationSet)}
_ENUM_FIELDS = {
    "pipeline": PipelineKind,
    "rsb_underflow": RsbUnderflow,
    "squash_policy": SquashPolicy,
    "exception_policy": ExceptionPolicy,
}
_SCALAR_FIELDS = {
    "rsb_size",
    "branch_resolve_extra",
    "return_resolve_extra",
    "stl_speculation",
    "sysreg_transient_forward",
}


def _coerce_enum(kind, value):
    if isinstance(value, kind):
        return value
    for member in kind:
        if member.value == value or member.name == value:
            return member
    options = ", ".join(m.value for m in kind)
    raise ConfigError(f"invalid {kind.__name__} value {value!r}; expected one of {options}")


def _apply_profile_overrides(prof: CpuProfile, overrides: dict) -> CpuProfile:
    """Flat override keys: any latency field, mitigation flag, or profile
    scalar; enum-valued fields accept their string names."""
    lat_changes = {}
    mit_changes = {}
    prof_changes = {}
    for key, value in overrides.items():
        if key in _LATENCY_FIELDS:
            lat_changes[key] = value
        elif key in _MITIGATION_FIELDS:
            mit_changes[key] = value
        elif key in _ENUM_FIELDS:
            prof_changes[key] = _coerce_enum(_ENUM_FIELDS[key], value)
        elif key in _SCALAR_FIELDS:
            prof_changes[key] = value
        else:
            raise ConfigError(f"unknown profile override {key!r}")
    if lat_changes:
        prof_changes["latencies"] = dataclasses.replace(prof.latencies, **lat_changes)
    if mit_changes:
        prof_changes["mitigations"] = dataclasses.replace(prof.mitigations, **mit_changes)
    try:
        return prof.with_overrides(**prof_changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _build_mitigations(flags: dict) -> MitigationSet:
    unknown = set(flags) - _MITIGATION_FIELDS
    if unknown:
        raise ConfigError(f"unknown mitigation flags: {sorted(unknown)}")
    try:
        return MitigationSet(**flags)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


_CONFIG_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def config_from_dict(data: dict, source: str = "<dict>") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"{source}: unknown keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path: str) -> ExperimentConfig:
    """Parse a JSON experiment file; errors carry the file and position."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return config_from_dict(data, source=path)
