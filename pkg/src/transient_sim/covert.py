"""Return-stack covert channel between two co-scheduled contexts.

The sender encodes a b-bit symbol by stuffing the return stack buffer with
the address of one of 2**b disclosure gadgets.  After a context switch the
receiver executes a return whose on-stack address resolves slowly; the
predictor supplies the sender's gadget address, the gadget touches one
probe line per symbol value, and a Flush+Reload pass over the 2**b lines
recovers the symbol.  A symbol decodes iff exactly one probe line hits;
anything else is an erasure.

The channel is modelled at the predictor/cache-structure level rather than
through the full pipeline so that million-symbol runs stay cheap.  The one
microarchitectural gate kept from the pipeline model is window admission:
the speculative probe fill (issued a couple of cycles into the window,
DRAM-latency deep) survives only on cores that keep in-flight fills on
squash, or whose return resolution is delayed enough for the fill to
complete first.  Cores that cancel in-flight fills and resolve returns
immediately never land the signal and read as all-erasure.

Per-symbol cycle accounting is fixed by construction:

    cost(b) = 2 * context_switch_cost
            + 2 * rsb_fill_depth          (sender pushes)
            + probe_cost_per_line * 2**b  (receiver flush+reload)

so channel bandwidth is b / cost(b) bits per cycle.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .core import MachineState, make_machine
from .memory import Privilege, PrivilegedFlushError
from .profiles import CpuProfile, SquashPolicy

LINE_BYTES = 64
MIN_BITS = 1
MAX_BITS = 6

# Address plan.  Probe lines live on their own pages; gadget and return
# addresses are code-space constants only ever compared for equality.
PROBE_BASE = 0x40_0000
GADGET_BASE = 0x50_0000
RECEIVER_RET_PC = 0x60_0000
RECEIVER_CONT_PC = 0x60_0040
BENIGN_RETURN_PC = 0x60_0080
INTERLOPER_PC = 0x60_00C0
# One line past the widest (b=6) probe window, so an interloper touch can
# never masquerade as a decoded symbol.
INTERLOPER_LINE = PROBE_BASE + (1 << MAX_BITS) * LINE_BYTES

DEFAULT_MESSAGE = b"HI"


def gadget_address(symbol: int) -> int:
    return GADGET_BASE + symbol


def probe_line(symbol: int) -> int:
    return PROBE_BASE + symbol * LINE_BYTES


@dataclass(frozen=True)
class ChannelConfig:
    """Tunable constants for one channel run."""

    bits_per_cs: int = 3
    context_switch_cost: int = 1000
    probe_cost_per_line: int = 150
    noise_probability: float = 0.0
    rsb_fill_depth: int | None = None  # None: use the profile's rsb_size

    def __post_init__(self) -> None:
        if not MIN_BITS <= self.bits_per_cs <= MAX_BITS:
            raise ValueError(
                f"bits_per_cs must be in [{MIN_BITS}, {MAX_BITS}], "
                f"got {self.bits_per_cs}"
            )
        if self.context_switch_cost < 0 or self.probe_cost_per_line < 0:
            raise ValueError("cycle costs must be non-negative")
        if not 0.0 <= self.noise_probability <= 1.0:
            raise ValueError("noise_probability must be in [0, 1]")
        if self.rsb_fill_depth is not None and self.rsb_fill_depth < 1:
            raise ValueError("rsb_fill_depth must be at least 1")

    def fill_depth(self, profile: CpuProfile) -> int:
        if self.rsb_fill_depth is not None:
            return self.rsb_fill_depth
        return profile.rsb_size

    def symbol_cost(self, profile: CpuProfile) -> int:
        return (
            2 * self.context_switch_cost
            + 2 * self.fill_depth(profile)
            + self.probe_cost_per_line * (1 << self.bits_per_cs)
        )


def required_memory_bytes(bits_per_cs: int) -> int:
    """Receiver probe footprint: one line per symbol value."""
    return (1 << bits_per_cs) * LINE_BYTES


@dataclass
class ChannelReport:
    """Outcome of one run_channel invocation."""

    profile: str
    bits_per_cs: int
    symbols_sent: int
    bits_sent: int
    symbol_errors: int
    bit_errors: int
    erasures: int
    total_cycles: int
    required_memory_bytes: int
    aborted: bool = False
    decoded: bytes = b""
    confusion: dict[tuple[int, int | None], int] = field(default_factory=dict)
    latencies: list[list[int]] | None = None

    @property
    def bandwidth_bits_per_cycle(self) -> float:
        if self.aborted or self.total_cycles == 0:
            return 0.0
        return self.bits_sent / self.total_cycles

    @property
    def bandwidth_bits_per_kcycle(self) -> float:
        return 1000.0 * self.bandwidth_bits_per_cycle

    @property
    def bandwidth_kb_per_mcycle(self) -> float:
        """Kilobytes moved per million cycles, for eyeballing curve shape."""
        return self.bandwidth_bits_per_cycle * 1e6 / 8192.0

    @property
    def symbol_error_rate(self) -> float:
        if self.symbols_sent == 0:
            return 0.0
        return self.symbol_errors / self.symbols_sent

    def to_dict(self) -> dict:
        confusion = {
            f"{sent}>{'erased' if got is None else got}": n
            for (sent, got), n in sorted(
                self.confusion.items(),
                key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1]),
            )
        }
        out = {
            "profile": self.profile,
            "bits_per_cs": self.bits_per_cs,
            "symbols_sent": self.symbols_sent,
            "bits_sent": self.bits_sent,
            "symbol_errors": self.symbol_errors,
            "bit_errors": self.bit_errors,
            "erasures": self.erasures,
            "total_cycles": self.total_cycles,
            "bandwidth_bits_per_cycle": self.bandwidth_bits_per_cycle,
            "bandwidth_bits_per_kcycle": self.bandwidth_bits_per_kcycle,
            "bandwidth_kb_per_mcycle": self.bandwidth_kb_per_mcycle,
            "required_memory_bytes": self.required_memory_bytes,
            "aborted": self.aborted,
            "decoded_hex": self.decoded.hex(),
            "confusion": confusion,
        }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def pack_symbols(message: bytes, bits_per_cs: int) -> list[int]:
    """Split a byte string into b-bit symbols, MSB first, zero-padded."""
    bits: list[int] = []
    for byte in message:
        for shift in range(7, -1, -1):
            bits.append((byte >> shift) & 1)
    while len(bits) % bits_per_cs:
        bits.append(0)
    symbols = []
    for i in range(0, len(bits), bits_per_cs):
        value = 0
        for bit in bits[i : i + bits_per_cs]:
            value = (value << 1) | bit
        symbols.append(value)
    return symbols


def unpack_symbols(symbols: list[int], bits_per_cs: int, byte_count: int) -> bytes:
    """Inverse of pack_symbols, truncated to the original byte count."""
    bits: list[int] = []
    for value in symbols:
        for shift in range(bits_per_cs - 1, -1, -1):
            bits.append((value >> shift) & 1)
    out = bytearray()
    for i in range(0, byte_count * 8, 8):
        byte = 0
        for bit in bits[i : i + 8]:
            byte = (byte << 1) | bit
        out.append(byte)
    return bytes(out)


def sender_inject(state: MachineState, symbol: int, depth: int) -> None:
    """Sender timeslice: stuff the top `depth` RSB entries with the gadget
    address encoding `symbol`, then yield."""
    target = gadget_address(symbol)
    for _ in range(depth):
        state.rsb.push(target)


def _window_admits(profile: CpuProfile) -> bool:
    # The probe fill issues ~2 cycles into the window and needs dram_latency
    # to complete; the mispredicted return resolves once its own stack load
    # (also DRAM-deep here, the sender keeps the stack line evicted) finishes
    # plus the core's extra return-resolution delay.  Keep-in-flight cores
    # admit the fill regardless.
    if profile.squash_policy is SquashPolicy.KEEP_INFLIGHT_FILLS:
        return True
    return profile.return_resolve_extra >= 2


def receiver_decode(
    state: MachineState,
    profile: CpuProfile,
    config: ChannelConfig,
    gadget_base: int = GADGET_BASE,
    record: list[int] | None = None,
) -> int | None:
    """Receiver timeslice: return through the predictor, then Flush+Reload
    the probe lines.

    `gadget_base` is where the receiver's copy of the gadget code lives.
    The channel only works when it matches the sender's layout; shifting it
    by a line models a context whose gadgets landed at different virtual
    addresses, in which case the predicted target executes no gadget and
    every symbol erases.

    Returns the decoded symbol, or None for an erasure (not exactly one
    hit).  Raises PrivilegedFlushError when the flush instruction is
    privileged on this profile, since the receiver runs in user mode.
    """
    mem = state.mem
    lines = 1 << config.bits_per_cs
    threshold = (mem.lat.l1_hit + mem.lat.dram) // 2

    predicted = state.rsb.pop(
        profile.rsb_underflow,
        btb=state.btb,
        ret_site=RECEIVER_RET_PC,
        btb_fallback_disabled=profile.mitigations.btb_fallback_disabled,
    )
    if (
        predicted is not None
        and gadget_base <= predicted < gadget_base + lines
        and _window_admits(profile)
    ):
        mem.fill(probe_line(predicted - gadget_base))
    # The return retires architecturally to the receiver's continuation,
    # which keeps the shared BTB trained on the benign target.
    state.btb.update(RECEIVER_RET_PC, RECEIVER_CONT_PC)

    hits = []
    for i in range(lines):
        addr = PROBE_BASE + i * LINE_BYTES
        before = mem.read_cycles()
        mem.access(addr, Privilege.USER)
        after = mem.read_cycles()
        latency = after - before
        if record is not None:
            record.append(latency)
        if latency < threshold:
            hits.append(i)
    for i in range(lines):
        mem.flush_line(
            PROBE_BASE + i * LINE_BYTES,
            Privilege.USER,
            flush_is_privileged=profile.mitigations.privileged_flush,
        )

    if len(hits) == 1:
        return hits[0]
    return None


def _context_switch(state: MachineState, profile: CpuProfile) -> None:
    mit = profile.mitigations
    if mit.rsb_flush_on_cs:
        state.rsb.flush()
    elif mit.rsb_refill_on_cs:
        state.rsb.refill(BENIGN_RETURN_PC)


def run_channel(
    profile: CpuProfile,
    config: ChannelConfig,
    message: bytes = DEFAULT_MESSAGE,
    seed: int = 7,
    gadget_base: int = GADGET_BASE,
    record_latencies: bool = False,
) -> ChannelReport:
    """Drive the full sender/receiver round-robin over `message`.

    Each symbol costs exactly config.symbol_cost(profile) cycles: two
    context switches, two cycles per sender push, and the per-line probe
    cost over the 2**b receiver lines.  With noise_probability p, an
    interloper preempts the sender-to-receiver switch with probability p,
    pushing its own return address and touching a line outside the probe
    window; the receiver then sees no hit and the symbol erases.  Only
    that switch is noise-susceptible: junk pushed on the way back to the
    sender is buried by the next injection before anything pops it.
    """
    state = make_machine(profile, seed=seed)
    state.btb.update(RECEIVER_RET_PC, RECEIVER_CONT_PC)
    noise_rng = random.Random(seed ^ 0x5EED)

    symbols = pack_symbols(message, config.bits_per_cs)
    bits = config.bits_per_cs
    cost = config.symbol_cost(profile)
    depth = config.fill_depth(profile)

    decoded: list[int] = []
    confusion: dict[tuple[int, int | None], int] = {}
    grid: list[list[int]] | None = [] if record_latencies else None
    symbol_errors = 0
    bit_errors = 0
    erasures = 0
    aborted = False
    cycles = 0

    for sent in symbols:
        base = state.mem.counter.current
        sender_inject(state, sent, depth)
        if config.noise_probability and noise_rng.random() < config.noise_probability:
            state.rsb.push(INTERLOPER_PC)
            state.mem.fill(INTERLOPER_LINE)
        _context_switch(state, profile)
        record: list[int] | None = [] if record_latencies else None
        try:
            got = receiver_decode(state, profile, config, gadget_base, record)
        except PrivilegedFlushError:
            aborted = True
            break
        _context_switch(state, profile)
        state.mem.counter.current = base + cost
        cycles += cost

        if grid is not None and record is not None:
            grid.append(record)
        decoded.append(0 if got is None else got)
        confusion[(sent, got)] = confusion.get((sent, got), 0) + 1
        if got is None:
            erasures += 1
            symbol_errors += 1
            bit_errors += bits
        elif got != sent:
            symbol_errors += 1
            bit_errors += bin(got ^ sent).count("1")

    sent_count = len(decoded)
    return ChannelReport(
        profile=profile.name,
        bits_per_cs=bits,
        symbols_sent=sent_count,
        bits_sent=sent_count * bits,
        symbol_errors=symbol_errors,
        bit_errors=bit_errors,
        erasures=erasures,
        total_cycles=cycles,
        required_memory_bytes=required_memory_bytes(bits),
        aborted=aborted,
        decoded=unpack_symbols(decoded, bits, len(message)) if not aborted else b"",
        confusion=confusion,
        latencies=grid,
    )


def sweep_bits(
    profile: CpuProfile,
    message: bytes = DEFAULT_MESSAGE,
    seed: int = 7,
    noise_probability: float = 0.0,
    config: ChannelConfig | None = None,
    b_range: range | None = None,
) -> list[ChannelReport]:
    """Run the channel once per symbol width (default every b in [1, 6])."""
    base = config or ChannelConfig()
    reports = []
    for bits in b_range if b_range is not None else range(MIN_BITS, MAX_BITS + 1):
        cfg = ChannelConfig(
            bits_per_cs=bits,
            context_switch_cost=base.context_switch_cost,
            probe_cost_per_line=base.probe_cost_per_line,
            noise_probability=noise_probability or base.noise_probability,
            rsb_fill_depth=base.rsb_fill_depth,
        )
        reports.append(run_channel(profile, cfg, message, seed=seed))
    return reports


def sweep_to_csv(reports: list[ChannelReport]) -> str:
    lines = ["b,bandwidth,errors,memory"]
    for r in reports:
        lines.append(
            f"{r.bits_per_cs},{r.bandwidth_bits_per_kcycle:.6f},"
            f"{r.bit_errors},{r.required_memory_bytes}"
        )
    return "\n".join(lines) + "\n"


def latency_trace_to_csv(report: ChannelReport) -> str:
    """Per-probe latency grid (symbol index, probe line, cycles)."""
    if report.latencies is None:
        raise ValueError("run_channel was not asked to record latencies")
    lines = ["symbol,line,latency"]
    for sym_idx, row in enumerate(report.latencies):
        for line_idx, lat in enumerate(row):
            lines.append(f"{sym_idx},{line_idx},{lat}")
    return "\n".join(lines) + "\n"
