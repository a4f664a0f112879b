"""Two-level data cache with strict LRU, a flat page table, and a noisy cycle counter.

Data memory is a mapping from address to integer value (one cell per address);
the caches track 64-byte lines over those addresses.  Physical and virtual
addresses coincide.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

LINE_SIZE = 64
PAGE_SIZE = 4096

# Region used by sweep_evict, far away from anything experiments allocate.
SWEEP_BASE = 0x100_0000


class Privilege(Enum):
    USER = "user"
    KERNEL = "kernel"


class MemoryFault(Exception):
    """Base class for access faults; carries the faulting address."""

    def __init__(self, addr: int, message: str):
        self.addr = addr
        super().__init__(message)


class PageFault(MemoryFault):
    def __init__(self, addr: int):
        super().__init__(addr, f"page fault at {addr:#x} (unmapped page)")


class PrivilegeFault(MemoryFault):
    def __init__(self, addr: int):
        super().__init__(addr, f"privilege fault at {addr:#x} (privileged page, user access)")


class PrivilegedFlushError(PermissionError):
    """Raised when a user-mode flush is attempted while flushes are privileged."""


def line_of(addr: int) -> int:
    return addr // LINE_SIZE


def page_of(addr: int) -> int:
    return addr // PAGE_SIZE


@dataclass(frozen=True)
class CacheGeometry:
    sets: int
    ways: int

    def __post_init__(self):
        for name, v in (("sets", self.sets), ("ways", self.ways)):
            if v < 1 or v & (v - 1):
                raise ValueError(f"cache {name} must be a power of two, got {v}")

    @property
    def capacity_bytes(self) -> int:
        return self.sets * self.ways * LINE_SIZE

    @property
    def span_bytes(self) -> int:
        """Distance between addresses that share a set."""
        return self.sets * LINE_SIZE


class CacheLevel:
    """One set-associative level, strict LRU within each set."""

    def __init__(self, geometry: CacheGeometry):
        self.geometry = geometry
        # per set: list of line numbers, most recently used first
        self._sets: list = [[] for _ in range(geometry.sets)]

    def _set_for(self, line: int) -> list:
        return self._sets[line % self.geometry.sets]

    def contains(self, line: int) -> bool:
        return line in self._set_for(line)

    def touch(self, line: int) -> bool:
        """Look up a line; on hit, refresh its LRU position. Returns hit."""
        entries = self._set_for(line)
        if line in entries:
            entries.remove(line)
            entries.insert(0, line)
            return True
        return False

    def install(self, line: int) -> int | None:
        """Insert a line as most recent; returns the evicted line, if any."""
        entries = self._set_for(line)
        if line in entries:
            entries.remove(line)
            entries.insert(0, line)
            return None
        evicted = None
        if len(entries) >= self.geometry.ways:
            evicted = entries.pop()
        entries.insert(0, line)
        return evicted

    def invalidate(self, line: int) -> None:
        entries = self._set_for(line)
        if line in entries:
            entries.remove(line)


@dataclass
class PageEntry:
    mapped: bool = True
    privileged: bool = False


class PageTable:
    """Page -> attributes.  Pages without an explicit entry are mapped, unprivileged."""

    def __init__(self):
        self._entries: dict = {}

    def entry(self, addr: int) -> PageEntry:
        return self._entries.get(page_of(addr), PageEntry())

    def set_mapped(self, addr: int, mapped: bool) -> None:
        page = page_of(addr)
        e = self._entries.setdefault(page, PageEntry())
        e.mapped = mapped

    def set_privileged(self, addr: int, privileged: bool) -> None:
        page = page_of(addr)
        e = self._entries.setdefault(page, PageEntry())
        e.privileged = privileged


@dataclass
class Latencies:
    l1_hit: int = 4
    l2_hit: int = 12
    dram: int = 200
    page_fault: int = 1000

    def __post_init__(self):
        if not (self.l1_hit < self.l2_hit < self.dram < self.page_fault):
            raise ValueError(
                "latencies must satisfy l1 < l2 < dram < page_fault, got "
                f"{self.l1_hit}/{self.l2_hit}/{self.dram}/{self.page_fault}"
            )


@dataclass
class CycleCounter:
    """Monotone cycle counter with optional quantization and uniform read noise."""

    current: int = 0
    resolution: int = 1
    noise_amplitude: int = 0

    def advance(self, cycles: int) -> None:
        self.current += cycles

    def read(self, rng: random.Random | None = None) -> int:
        value = (self.current // self.resolution) * self.resolution
        if self.noise_amplitude and rng is not None:
            value += rng.randint(-self.noise_amplitude, self.noise_amplitude)
        return value


class Level(Enum):
    L1 = "L1"
    L2 = "L2"
    DRAM = "DRAM"


@dataclass
class AccessResult:
    value: int
    latency: int
    level: Level


class MemorySystem:
    """Data cells plus the cache hierarchy, page table, and cycle counter."""

    def __init__(
        self,
        l1: CacheGeometry,
        l2: CacheGeometry,
        latencies: Latencies | None = None,
        counter: CycleCounter | None = None,
        rng: random.Random | None = None,
    ):
        self.cells: dict = {}
        self.l1 = CacheLevel(l1)
        self.l2 = CacheLevel(l2)
        self.pages = PageTable()
        self.lat = latencies or Latencies()
        self.counter = counter or CycleCounter()
        self.rng = rng or random.Random(0)

    # -- checks -------------------------------------------------------------

    def check_access(self, addr: int, privilege: Privilege) -> None:
        entry = self.pages.entry(addr)
        if not entry.mapped:
            raise PageFault(addr)
        if entry.privileged and privilege is Privilege.USER:
            raise PrivilegeFault(addr)

    # -- cache mechanics ----------------------------------------------------

    def probe_level(self, addr: int) -> Level:
        """Which level would serve this address right now (no state change)."""
        line = line_of(addr)
        if self.l1.contains(line):
            return Level.L1
        if self.l2.contains(line):
            return Level.L2
        return Level.DRAM

    def latency_for(self, level: Level) -> int:
        return {
            Level.L1: self.lat.l1_hit,
            Level.L2: self.lat.l2_hit,
            Level.DRAM: self.lat.dram,
        }[level]

    def fill(self, addr: int) -> Level:
        """Look up a line and fill every level up to L1 on a miss. Returns the
        level that served the request (before filling)."""
        line = line_of(addr)
        if self.l1.touch(line):
            return Level.L1
        if self.l2.touch(line):
            self.l1.install(line)
            return Level.L2
        self.l2.install(line)
        self.l1.install(line)
        return Level.DRAM

    def invalidate_line(self, addr: int) -> None:
        """Drop a line from both levels, no privilege check (experiment plumbing)."""
        line = line_of(addr)
        self.l1.invalidate(line)
        self.l2.invalidate(line)

    # -- architectural operations --------------------------------------------

    def access(
        self,
        addr: int,
        privilege: Privilege = Privilege.KERNEL,
        advance_counter: bool = True,
    ) -> AccessResult:
        """Read one cell through the hierarchy, updating LRU and the counter."""
        self.check_access(addr, privilege)
        level = self.fill(addr)
        latency = self.latency_for(level)
        if advance_counter:
            self.counter.advance(latency)
        return AccessResult(self.cells.get(addr, 0), latency, level)

    def write(
        self,
        addr: int,
        value: int,
        privilege: Privilege = Privilege.KERNEL,
        advance_counter: bool = True,
    ) -> AccessResult:
        self.check_access(addr, privilege)
        level = self.fill(addr)
        latency = self.latency_for(level)
        if advance_counter:
            self.counter.advance(latency)
        self.cells[addr] = value
        return AccessResult(value, latency, level)

    def flush_line(
        self,
        addr: int,
        privilege: Privilege = Privilege.KERNEL,
        flush_is_privileged: bool = False,
    ) -> None:
        """Invalidate a line from both levels.  Idempotent.  When flushes are
        privileged, user-mode callers get PrivilegedFlushError."""
        if flush_is_privileged and privilege is Privilege.USER:
            raise PrivilegedFlushError(
                f"flush of {addr:#x} requires kernel privilege under this configuration"
            )
        self.invalidate_line(addr)
        self.counter.advance(1)

    def read_cycles(self) -> int:
        return self.counter.read(self.rng)


# -- eviction primitives ------------------------------------------------------


@dataclass(frozen=True)
class EvictionParams:
    """Shape of the pattern-based eviction loop.

    loops iterations; each iteration starts `shift` lines further into the
    candidate buffer and touches `accesses` consecutive congruent lines.
    """

    loops: int
    shift: int
    accesses: int


@dataclass
class EvictionAccess:
    iteration: int
    access_index: int
    address: int
    level: str


class EvictionRegionError(ValueError):
    """The candidate buffer is too small for the requested pattern."""


def _congruent_base(mem: MemorySystem, base: int, target: int) -> tuple:
    """First address >= base congruent with target in both cache levels."""
    span = max(mem.l1.geometry.span_bytes, mem.l2.geometry.span_bytes)
    offset = (target % span - base % span) % span
    return base + offset, span


def evict_with_pattern(
    mem: MemorySystem,
    base: int,
    region_size: int,
    params: EvictionParams,
    target: int,
    privilege: Privilege = Privilege.KERNEL,
) -> list:
    """Run the sliding-window eviction loop against `target`'s cache set.

    Accesses candidate lines congruent with the target; returns the access
    trace.  Whether the pattern actually evicts depends on the parameters and
    the geometry; callers verify with probe_level or fall back to sweep_evict.
    """
    start, span = _congruent_base(mem, base, target)
    max_index = 0
    if params.loops > 0 and params.accesses > 0:
        max_index = (params.loops - 1) * params.shift + params.accesses - 1
    needed = (start - base) + max_index * span + LINE_SIZE
    if needed > region_size:
        raise EvictionRegionError(
            f"pattern needs {needed} bytes of candidate region, only {region_size} available"
        )
    trace = []
    seq = 0
    for i in range(params.loops):
        for j in range(params.accesses):
            addr = start + (i * params.shift + j) * span
            result = mem.access(addr, privilege)
            trace.append(EvictionAccess(i, seq, addr, result.level.value))
            seq += 1
    return trace


def sweep_evict(
    mem: MemorySystem,
    buffer_size: int,
    base: int = SWEEP_BASE,
    privilege: Privilege = Privilege.KERNEL,
) -> int:
    """Touch every line of a large buffer, displacing all prior cache contents.

    Requires a buffer of at least 3x the L2 capacity; returns the number of
    lines touched.
    """
    minimum = 3 * mem.l2.geometry.capacity_bytes
    if buffer_size < minimum:
        raise ValueError(
            f"sweep buffer must be >= 3x L2 capacity ({minimum} bytes), got {buffer_size}"
        )
    lines = buffer_size // LINE_SIZE
    for k in range(lines):
        mem.access(base + k * LINE_SIZE, privilege)
    return lines


def eviction_trace_to_csv(trace: list) -> str:
    rows = ["iteration,access_index,address,level"]
    for acc in trace:
        rows.append(f"{acc.iteration},{acc.access_index},{acc.address:#x},{acc.level}")
    return "\n".join(rows) + "\n"
