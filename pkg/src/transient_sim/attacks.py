"""Attack experiments built on the pipeline model.

Each attack is a deterministic experiment: plant a secret, run a victim
program whose transient behavior may copy the secret into the cache state of
a 256-line oracle array, then recover it with a flush+reload probe.  Success
means the recovered bytes equal the planted ones; everything else, including
recovering forwarded zeros instead of data, counts as failure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .core import DEFAULT_SEED, MachineState, Trace, make_machine, run
from .isa import Program, assemble
from .memory import LINE_SIZE, MemorySystem, Privilege, PrivilegedFlushError
from .profiles import CpuProfile, get_profile

ORACLE_LINES = 256
ORACLE_BASE = 0x20_0000
TRAIN_ORACLE_BASE = 0x30_0000  # separate region so training never marks the real oracle
BOUND_ADDR = 0x1_0000
ARRAY_BASE = 0x1_1000
SECRET_BASE = 0x1_2000
KERNEL_BASE = 0x7_0000
STACK_TOP = 0x8000
DELAY_CELL = 0x1_4000
POINTER_SLOT = 0x1_4200
PUBLIC_CELL = 0x1_4400

SPEC_LOAD_LINE = 17  # which oracle line the bare speculative load touches
SYSREG_ID = 1
SYSREG_TEST_VALUE = 0xA5

DEFAULT_SECRET = bytes((41, 7, 255))


class WindowTrigger(Enum):
    SPECULATIVE_LOAD = "speculative-load"
    CACHE_MISS = "cache-miss"
    PAGE_FAULT = "page-fault"


class SecretLocation(Enum):
    L1 = "L1"
    MAIN_MEMORY = "main-memory"


@dataclass(frozen=True)
class Scenario:
    """How the speculation window is opened and where the secret starts out.

    A speculative-load trigger caches one fixed probe line and nothing else,
    so secret_location is ignored for it.
    """

    window_trigger: WindowTrigger = WindowTrigger.CACHE_MISS
    secret_location: SecretLocation = SecretLocation.L1

    def describe(self) -> str:
        if self.window_trigger is WindowTrigger.SPECULATIVE_LOAD:
            return self.window_trigger.value
        return f"{self.window_trigger.value}/{self.secret_location.value}"


@dataclass
class ProbeResult:
    latencies: tuple
    hits: tuple
    threshold: int

    def single_hit(self) -> int | None:
        return self.hits[0] if len(self.hits) == 1 else None


@dataclass
class AttackOutcome:
    variant: str
    profile: str
    scenario: Scenario | None
    success: bool
    recovered: tuple
    expected: tuple
    probe_latencies: tuple

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "profile": self.profile,
            "scenario": self.scenario.describe() if self.scenario else None,
            "success": self.success,
            "recovered_hex": "".join(
                f"{b:02x}" if b is not None else "??" for b in self.recovered
            ),
            "expected_hex": "".join(f"{b:02x}" for b in self.expected),
            "probe_latencies": list(self.probe_latencies),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def flush_reload(
    mem: MemorySystem,
    oracle_base: int = ORACLE_BASE,
    line_count: int = ORACLE_LINES,
    victim=None,
    threshold: int | None = None,
    privilege: Privilege = Privilege.USER,
    flush_is_privileged: bool = False,
    evictor=None,
) -> ProbeResult:
    """Three-phase probe: flush every oracle line, run the victim step, then
    time a reload of each line.  Hit means the measured latency is below the
    threshold (defaults to the midpoint of the L1-hit and DRAM latencies).

    When flushes are privileged and the caller is user-mode, per-line control
    falls to `evictor(addr)` if provided; otherwise the error propagates.
    """
    if threshold is None:
        threshold = (mem.lat.l1_hit + mem.lat.dram) // 2
    for i in range(line_count):
        addr = oracle_base + i * LINE_SIZE
        if evictor is not None and flush_is_privileged and privilege is Privilege.USER:
            evictor(addr)
        else:
            mem.flush_line(addr, privilege=privilege, flush_is_privileged=flush_is_privileged)
    if victim is not None:
        victim()
    latencies = []
    hits = []
    for i in range(line_count):
        addr = oracle_base + i * LINE_SIZE
        before = mem.read_cycles()
        mem.access(addr, privilege)
        elapsed = mem.read_cycles() - before
        latencies.append(elapsed)
        if elapsed < threshold:
            hits.append(i)
    return ProbeResult(tuple(latencies), tuple(hits), threshold)


# -- victim programs -----------------------------------------------------------

# Bounds-checked read: architecturally the out-of-range index takes the branch
# and skips the gadget; the gadget only ever runs under a misprediction.
_V1_SRC = """
    LD r3, [r1+0]        ; bound (slow when evicted or unmapped)
    CMP r2, r3
    BGE skip             ; index >= bound: reject
    LD r5, [r4+0]        ; gadget: read array element
    SHL r6, r5, 6
    ADD r7, r6, r8
    LD r9, [r7+0]        ; gadget: touch oracle line for the value
skip:
    HALT
"""

# Same branch, but the shadow holds a single load of one fixed line.
_SPEC_LOAD_SRC = """
    LD r3, [r1+0]
    CMP r2, r3
    BGE skip
    LD r9, [r7+0]
skip:
    HALT
"""

# A callee that redirects its own return: the return stack still predicts the
# instruction after the call site, so the gadget there runs transiently while
# the real return target is fetched from the evicted stack line.
_RSB_SRC = """
    CALL victim
    LD r5, [r4+0]        ; gadget (never architecturally reached)
    SHL r6, r5, 6
    ADD r7, r6, r8
    LD r9, [r7+0]
done:
    HALT
victim:
    MOVI r10, 5          ; index of done
    ST [r15+0], r10      ; overwrite the saved return target
    FLUSH [r15+0]        ; force the return resolution to go to memory
    FENCE
    YIELD                ; hand-off point between contexts
    RET
"""
_RSB_DONE_PC = 5

# Same harness with a system-register read as the gadget payload.
_RSB_SYSREG_SRC = """
    CALL victim
    MRS r5, s1           ; gadget: privileged register read
    SHL r6, r5, 6
    ADD r7, r6, r8
    LD r9, [r7+0]
done:
    HALT
victim:
    MOVI r10, 5
    ST [r15+0], r10
    FLUSH [r15+0]
    FENCE
    YIELD
    RET
"""

# Direct read of a kernel cell from user mode; the fault is deferred to
# retirement, which then lands on the recovery HALT.
_V3_SRC = """
    LD r3, [r1+0]
    SHL r4, r3, 6
    ADD r5, r4, r8
    LD r9, [r5+0]
    HALT
"""
_V3_RECOVERY_PC = 4

# Store-to-load: the store's target address arrives late, the younger load
# may run ahead with the stale pointer and dereference it.
_V4_SRC = """
    LD r5, [r1+0]        ; produces the store's target address, slowly
    ST [r5+0], r6        ; retarget the pointer slot to a public cell
    LD r7, [r2+0]        ; read the slot, possibly ahead of the store
    LD r8, [r7+0]        ; dereference
    SHL r9, r8, 6
    ADD r10, r9, r11
    LD r12, [r10+0]
    HALT
"""

# Underflow probe.  After the context-switch point, a return-heavy chain
# deliberately drains whatever the return stack holds (a refill mitigation
# restocks it with benign entries; the drain pops them all), then a final
# return at a separately primed site arrives with the stack empty and its
# own slot evicted.  What the predictor does on that underflow decides
# whether the primed gadget runs.
_UNDERFLOW_SRC = """
    YIELD                ; context-switch point, mitigation hooks fire here
drain:
    RET                  ; chained through planted slots, one pop per pass
attack:
    RET                  ; the seeded site, reached with the stack drained
    LD r5, [r4+0]        ; primed target
    SHL r6, r5, 6
    ADD r7, r6, r8
    LD r9, [r7+0]
done:
    HALT
"""
_UNDERFLOW_DRAIN_PC = 1
_UNDERFLOW_RET_PC = 2
_UNDERFLOW_GADGET_PC = 3
_UNDERFLOW_DONE_PC = 7
_UNDERFLOW_PRIME_SLOT = STACK_TOP + 0x200


def _outcome(
    variant: str,
    profile: CpuProfile,
    scenario: Scenario | None,
    expected: tuple,
    recovered: list,
    last_probe: ProbeResult | None,
) -> AttackOutcome:
    recovered_t = tuple(recovered)
    return AttackOutcome(
        variant=variant,
        profile=profile.name,
        scenario=scenario,
        success=recovered_t == expected,
        recovered=recovered_t,
        expected=expected,
        probe_latencies=last_probe.latencies if last_probe else (),
    )


def _resolve_profile(profile) -> CpuProfile:
    return get_profile(profile) if isinstance(profile, str) else profile


def _attack_probe(state: MachineState, profile: CpuProfile, victim) -> ProbeResult:
    """The attacker's probe always runs user-mode, whatever privilege the
    victim step holds.  With flushes restricted to privileged code the probe
    cannot set up, so the attack comes back empty-handed."""
    try:
        return flush_reload(
            state.mem,
            ORACLE_BASE,
            ORACLE_LINES,
            victim=victim,
            privilege=Privilege.USER,
            flush_is_privileged=profile.mitigations.privileged_flush,
        )
    except PrivilegedFlushError:
        threshold = (state.mem.lat.l1_hit + state.mem.lat.dram) // 2
        return ProbeResult((), (), threshold)


def run_spectre_v1(
    profile,
    scenario: Scenario = Scenario(),
    secret: bytes = DEFAULT_SECRET,
    seed: int = DEFAULT_SEED,
) -> AttackOutcome:
    """Bounds-check bypass.  Five in-bounds runs train the branch before each
    out-of-bounds run; the window trigger decides how long the bound takes to
    arrive and therefore how much of the gadget executes transiently."""
    profile = _resolve_profile(profile)
    if scenario.window_trigger is WindowTrigger.SPECULATIVE_LOAD:
        return _run_spec_load(profile, scenario, seed)
    st = make_machine(profile, seed)
    prog = assemble(_V1_SRC)
    st.mem.cells[BOUND_ADDR] = 16
    for i in range(16):
        st.mem.cells[ARRAY_BASE + i * LINE_SIZE] = i
    for k, byte in enumerate(secret):
        st.mem.cells[SECRET_BASE + k * LINE_SIZE] = byte

    recovered = []
    probe = None
    for k, byte in enumerate(secret):
        st.mem.fill(BOUND_ADDR)
        for j in range(5):  # train the branch toward in-bounds
            st.pc = 0
            st.regs[1] = BOUND_ADDR
            st.regs[2] = j % 16
            st.regs[4] = ARRAY_BASE + (j % 16) * LINE_SIZE
            st.regs[8] = TRAIN_ORACLE_BASE
            run(prog, st, profile)
        if scenario.window_trigger is WindowTrigger.CACHE_MISS:
            st.mem.invalidate_line(BOUND_ADDR)
        else:
            st.mem.pages.set_mapped(BOUND_ADDR, False)
        secret_addr = SECRET_BASE + k * LINE_SIZE
        if scenario.secret_location is SecretLocation.L1:
            st.mem.fill(secret_addr)
        else:
            st.mem.invalidate_line(secret_addr)

        def victim():
            st.pc = 0
            st.regs[1] = BOUND_ADDR
            st.regs[2] = 64  # way past the bound
            st.regs[4] = secret_addr
            st.regs[8] = ORACLE_BASE
            run(prog, st, profile)

        probe = _attack_probe(st, profile, victim)
        recovered.append(probe.single_hit())
        if scenario.window_trigger is WindowTrigger.PAGE_FAULT:
            st.mem.pages.set_mapped(BOUND_ADDR, True)
    return _outcome("V1", profile, scenario, tuple(secret), recovered, probe)


def _run_spec_load(profile: CpuProfile, scenario: Scenario, seed: int) -> AttackOutcome:
    st = make_machine(profile, seed)
    prog = assemble(_SPEC_LOAD_SRC)
    st.mem.cells[BOUND_ADDR] = 16

    def victim():
        st.pc = 0
        st.regs[1] = BOUND_ADDR
        st.regs[2] = 64
        st.regs[7] = ORACLE_BASE + SPEC_LOAD_LINE * LINE_SIZE
        run(prog, st, profile)

    st.mem.invalidate_line(BOUND_ADDR)
    probe = _attack_probe(st, profile, victim)
    hit = probe.single_hit()
    return _outcome("V1", profile, scenario, (SPEC_LOAD_LINE,), [hit], probe)


def speculative_load_test(profile, seed: int = DEFAULT_SEED) -> bool:
    """Does a single load in a mispredicted branch shadow leave its line cached?"""
    profile = _resolve_profile(profile)
    return _run_spec_load(profile, Scenario(WindowTrigger.SPECULATIVE_LOAD), seed).success


def run_spectre_rsb(
    profile,
    scenario: Scenario = Scenario(),
    secret: bytes = DEFAULT_SECRET,
    seed: int = DEFAULT_SEED,
    source: str = _RSB_SRC,
) -> AttackOutcome:
    """Return-stack mismatch.  The callee overwrites its saved return target,
    so the predicted return (gadget after the call site) diverges from the
    architectural one; the window lasts until the evicted stack line arrives."""
    profile = _resolve_profile(profile)
    if scenario.window_trigger is WindowTrigger.PAGE_FAULT:
        raise ValueError(
            "the return-stack attack evicts the stack line; unmapping it would "
            "fault the return itself, so a page-fault window is undefined"
        )
    st = make_machine(profile, seed)
    prog = assemble(source)
    st.benign_return_pc = _RSB_DONE_PC
    for k, byte in enumerate(secret):
        st.mem.cells[SECRET_BASE + k * LINE_SIZE] = byte

    recovered = []
    probe = None
    for k, byte in enumerate(secret):
        secret_addr = SECRET_BASE + k * LINE_SIZE
        if scenario.secret_location is SecretLocation.L1:
            st.mem.fill(secret_addr)
        else:
            st.mem.invalidate_line(secret_addr)

        def victim():
            st.pc = 0
            st.regs[4] = secret_addr
            st.regs[8] = ORACLE_BASE
            st.regs[15] = STACK_TOP
            run(prog, st, profile)

        probe = _attack_probe(st, profile, victim)
        recovered.append(probe.single_hit())
    return _outcome("RSB", profile, scenario, tuple(secret), recovered, probe)


def run_meltdown_v3(
    profile,
    secret: bytes = DEFAULT_SECRET,
    seed: int = DEFAULT_SEED,
) -> AttackOutcome:
    """User-mode read of a kernel cell.  The fault defers to retirement and the
    dependent chain sees whatever the pipeline forwards: the real value leaks
    it, a forwarded zero lights oracle line 0 instead and the run fails."""
    profile = _resolve_profile(profile)
    st = make_machine(profile, seed)
    prog = assemble(_V3_SRC)
    st.privilege = Privilege.USER
    st.recovery_pc = _V3_RECOVERY_PC
    st.mem.pages.set_privileged(KERNEL_BASE, True)
    for k, byte in enumerate(secret):
        st.mem.cells[KERNEL_BASE + k * LINE_SIZE] = byte

    recovered = []
    probe = None
    for k, byte in enumerate(secret):
        secret_addr = KERNEL_BASE + k * LINE_SIZE
        st.mem.fill(secret_addr)  # classic setup: the kernel touched it recently

        def victim():
            st.pc = 0
            st.regs[1] = secret_addr
            st.regs[8] = ORACLE_BASE
            run(prog, st, profile)

        probe = _attack_probe(st, profile, victim)
        recovered.append(probe.single_hit())
    return _outcome("V3", profile, None, tuple(secret), recovered, probe)


def run_meltdown_v3a(profile, seed: int = DEFAULT_SEED) -> AttackOutcome:
    """System-register read from user mode, carried by the return-stack
    harness: the register read and its oracle touch only ever run transiently,
    so success hinges on whether the core forwards the register's value."""
    profile = _resolve_profile(profile)
    st = make_machine(profile, seed)
    prog = assemble(_RSB_SYSREG_SRC)
    st.benign_return_pc = _RSB_DONE_PC
    st.privilege = Privilege.USER
    st.sysregs[SYSREG_ID] = SYSREG_TEST_VALUE

    def victim():
        st.pc = 0
        st.regs[8] = ORACLE_BASE
        st.regs[15] = STACK_TOP
        run(prog, st, profile)

    probe = _attack_probe(st, profile, victim)
    hit = probe.single_hit()
    return _outcome("V3a", profile, None, (SYSREG_TEST_VALUE,), [hit], probe)


def run_spectre_v4(
    profile,
    secret: bytes = DEFAULT_SECRET,
    seed: int = DEFAULT_SEED,
) -> AttackOutcome:
    """Store-to-load bypass.  A pointer slot holds the secret's address; the
    victim overwrites it with a public address and immediately reads through
    it.  If the load runs ahead of the slow store, the stale pointer gets
    dereferenced transiently before the ordering violation forces a replay."""
    profile = _resolve_profile(profile)
    st = make_machine(profile, seed)
    prog = assemble(_V4_SRC)
    st.mem.cells[DELAY_CELL] = POINTER_SLOT
    st.mem.cells[PUBLIC_CELL] = 256  # dereferences to a line outside the oracle
    for k, byte in enumerate(secret):
        st.mem.cells[SECRET_BASE + k * LINE_SIZE] = byte

    recovered = []
    probe = None
    for k, byte in enumerate(secret):
        secret_addr = SECRET_BASE + k * LINE_SIZE
        st.mem.cells[POINTER_SLOT] = secret_addr  # stale pointer, victim-visible
        st.mem.fill(POINTER_SLOT)
        st.mem.fill(secret_addr)
        st.mem.fill(PUBLIC_CELL)
        st.mem.invalidate_line(DELAY_CELL)

        def victim():
            st.pc = 0
            st.regs[1] = DELAY_CELL
            st.regs[2] = POINTER_SLOT
            st.regs[6] = PUBLIC_CELL
            st.regs[11] = ORACLE_BASE
            run(prog, st, profile)

        probe = _attack_probe(st, profile, victim)
        recovered.append(probe.single_hit())
    return _outcome("V4", profile, None, tuple(secret), recovered, probe)


def run_refill_bypass(profile, seed: int = DEFAULT_SEED) -> AttackOutcome:
    """Underflow fallback check.  An attacker first retires a return whose
    target is the gadget, seeding the target buffer for that return site.
    The victim then runs a return chain that drains the return stack, so the
    seeded site executes on an empty stack with its own slot evicted.  Cores
    that fall back to the target buffer on underflow predict straight into
    the gadget; refilling the stack at the context switch only feeds the
    drain, and only disabling the fallback closes the hole."""
    profile = _resolve_profile(profile)
    st = make_machine(profile, seed)
    prog = assemble(_UNDERFLOW_SRC)
    st.benign_return_pc = _UNDERFLOW_DONE_PC
    secret = SYSREG_TEST_VALUE
    st.mem.cells[SECRET_BASE] = secret

    # phase 1: architecturally return into the gadget to seed the target buffer
    st.mem.cells[_UNDERFLOW_PRIME_SLOT] = _UNDERFLOW_GADGET_PC
    st.mem.fill(_UNDERFLOW_PRIME_SLOT)
    st.pc = _UNDERFLOW_RET_PC
    st.regs[4] = SECRET_BASE
    st.regs[8] = TRAIN_ORACLE_BASE
    st.regs[15] = _UNDERFLOW_PRIME_SLOT
    run(prog, st, profile)

    # phase 2: plant the drain chain: one self-slot per stack entry a refill
    # could install, then the seeded site, then the benign final target
    depth = profile.rsb_size
    for k in range(depth - 1):
        st.mem.cells[STACK_TOP + 8 * k] = _UNDERFLOW_DRAIN_PC
    st.mem.cells[STACK_TOP + 8 * (depth - 1)] = _UNDERFLOW_RET_PC
    attack_slot = STACK_TOP + 8 * depth
    st.mem.cells[attack_slot] = _UNDERFLOW_DONE_PC
    for off in range(0, 8 * depth + 1, LINE_SIZE):
        st.mem.fill(STACK_TOP + off)  # drains resolve fast
    st.mem.fill(SECRET_BASE)
    st.rsb.flush()

    def victim():
        st.mem.invalidate_line(attack_slot)  # the seeded site resolves slowly
        st.pc = 0  # enter through the context-switch point
        st.regs[4] = SECRET_BASE
        st.regs[8] = ORACLE_BASE
        st.regs[15] = STACK_TOP
        run(prog, st, profile)

    probe = _attack_probe(st, profile, victim)
    hit = probe.single_hit()
    return _outcome("RSB", profile, None, (secret,), [hit], probe)


# -- the susceptibility matrix ---------------------------------------------------

MATRIX_PROFILES = ("cortex_a53", "cortex_a8", "cortex_a9", "cortex_a72", "intel_i7")

_CM = WindowTrigger.CACHE_MISS
_PF = WindowTrigger.PAGE_FAULT
_L1 = SecretLocation.L1
_MM = SecretLocation.MAIN_MEMORY

MATRIX_CELLS = (
    "spec-load",
    "v1-cache-miss-l1",
    "v1-cache-miss-mem",
    "v1-page-fault-l1",
    "v1-page-fault-mem",
    "rsb-l1",
    "rsb-mem",
    "v3",
    "v3a",
    "v4",
)

# Golden susceptibility per cell and profile.
EXPECTED_SUSCEPTIBILITY = {
    "spec-load":         {"cortex_a53": False, "cortex_a8": False, "cortex_a9": True,  "cortex_a72": True,  "intel_i7": True},
    "v1-cache-miss-l1":  {"cortex_a53": False, "cortex_a8": False, "cortex_a9": False, "cortex_a72": True,  "intel_i7": True},
    "v1-cache-miss-mem": {"cortex_a53": False, "cortex_a8": False, "cortex_a9": False, "cortex_a72": True,  "intel_i7": True},
    "v1-page-fault-l1":  {"cortex_a53": False, "cortex_a8": False, "cortex_a9": True,  "cortex_a72": True,  "intel_i7": True},
    "v1-page-fault-mem": {"cortex_a53": False, "cortex_a8": False, "cortex_a9": True,  "cortex_a72": True,  "intel_i7": True},
    "rsb-l1":            {"cortex_a53": False, "cortex_a8": False, "cortex_a9": False, "cortex_a72": True,  "intel_i7": True},
    "rsb-mem":           {"cortex_a53": False, "cortex_a8": False, "cortex_a9": False, "cortex_a72": False, "intel_i7": True},
    "v3":                {"cortex_a53": False, "cortex_a8": False, "cortex_a9": False, "cortex_a72": False, "intel_i7": True},
    "v3a":               {"cortex_a53": False, "cortex_a8": False, "cortex_a9": False, "cortex_a72": True,  "intel_i7": True},
    "v4":                {"cortex_a53": False, "cortex_a8": False, "cortex_a9": False, "cortex_a72": True,  "intel_i7": True},
}


def _run_cell(cell: str, profile, secret: bytes, seed: int) -> AttackOutcome:
    if cell == "spec-load":
        return _run_spec_load(
            _resolve_profile(profile), Scenario(WindowTrigger.SPECULATIVE_LOAD), seed
        )
    if cell.startswith("v1-"):
        trigger = _CM if "cache-miss" in cell else _PF
        location = _L1 if cell.endswith("-l1") else _MM
        return run_spectre_v1(profile, Scenario(trigger, location), secret, seed)
    if cell.startswith("rsb-"):
        location = _L1 if cell.endswith("-l1") else _MM
        return run_spectre_rsb(profile, Scenario(_CM, location), secret, seed)
    if cell == "v3":
        return run_meltdown_v3(profile, secret, seed)
    if cell == "v3a":
        return run_meltdown_v3a(profile, seed)
    if cell == "v4":
        return run_spectre_v4(profile, secret, seed)
    raise ValueError(f"unknown matrix cell {cell!r}")


def run_matrix(
    profiles=MATRIX_PROFILES,
    cells=MATRIX_CELLS,
    secret: bytes = DEFAULT_SECRET,
    seed: int = DEFAULT_SEED,
) -> dict:
    """All requested attack cells against all requested profiles.  Profiles
    may be names or CpuProfile objects (e.g. with mitigations applied);
    results are keyed by cell, then profile name."""
    results: dict = {}
    for cell in cells:
        results[cell] = {}
        for prof in profiles:
            prof = _resolve_profile(prof)
            results[cell][prof.name] = _run_cell(cell, prof, secret, seed)
    return results


def matrix_susceptibility(results: dict) -> dict:
    return {
        cell: {name: outcome.success for name, outcome in row.items()}
        for cell, row in results.items()
    }


def matrix_mismatches(results: dict) -> list:
    """Cells whose outcome disagrees with the golden matrix."""
    out = []
    for cell, row in results.items():
        for name, outcome in row.items():
            expected = EXPECTED_SUSCEPTIBILITY.get(cell, {}).get(name)
            if expected is not None and outcome.success != expected:
                out.append((cell, name, expected, outcome.success))
    return out
