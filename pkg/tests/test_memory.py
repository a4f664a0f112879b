"""Cache hierarchy against a brute-force LRU model, plus faults and eviction."""

import random

import pytest

from transient_sim.memory import (
    LINE_SIZE,
    CacheGeometry,
    CacheLevel,
    CycleCounter,
    EvictionParams,
    EvictionRegionError,
    Latencies,
    Level,
    MemorySystem,
    PageFault,
    Privilege,
    PrivilegeFault,
    PrivilegedFlushError,
    evict_with_pattern,
    eviction_trace_to_csv,
    sweep_evict,
)
from transient_sim.profiles import PROFILES, get_profile


class LruModel:
    """Brute-force reference for one set-associative level.

    Deliberately naive: plain lists, most recent first, trimmed after insert.
    """

    def __init__(self, sets: int, ways: int):
        self.sets = sets
        self.ways = ways
        self.entries = [[] for _ in range(sets)]

    def touch(self, line: int) -> bool:
        bucket = self.entries[line % self.sets]
        if line in bucket:
            bucket.remove(line)
            bucket.insert(0, line)
            return True
        return False

    def install(self, line: int) -> None:
        bucket = self.entries[line % self.sets]
        if line in bucket:
            bucket.remove(line)
        bucket.insert(0, line)
        del bucket[self.ways :]


class HierarchyModel:
    """Two LruModel levels wired the same way MemorySystem.fill is."""

    def __init__(self, l1: CacheGeometry, l2: CacheGeometry):
        self.l1 = LruModel(l1.sets, l1.ways)
        self.l2 = LruModel(l2.sets, l2.ways)

    def access(self, addr: int) -> str:
        line = addr // LINE_SIZE
        if self.l1.touch(line):
            return "L1"
        if self.l2.touch(line):
            self.l1.install(line)
            return "L2"
        self.l2.install(line)
        self.l1.install(line)
        return "DRAM"


def test_small_l1_matches_brute_force_model_over_10k_accesses():
    mem = MemorySystem(l1=CacheGeometry(4, 2), l2=CacheGeometry(16, 4))
    model = HierarchyModel(CacheGeometry(4, 2), CacheGeometry(16, 4))
    rng = random.Random(20260816)
    hits = 0
    for _ in range(10_000):
        addr = rng.randrange(0, 512 * LINE_SIZE)
        got = mem.access(addr).level.value
        want = model.access(addr)
        assert got == want, f"addr {addr:#x}: cache said {got}, model said {want}"
        hits += got == "L1"
    # the workload should actually exercise all three levels
    assert 0 < hits < 10_000


def test_profile_geometries_match_model_too():
    prof = get_profile("intel_i7")
    mem = MemorySystem(l1=prof.l1, l2=prof.l2)
    model = HierarchyModel(prof.l1, prof.l2)
    rng = random.Random(99)
    for _ in range(3_000):
        addr = rng.randrange(0, 4 * prof.l2.capacity_bytes)
        assert mem.access(addr).level.value == model.access(addr)


def test_same_line_different_offsets_hit():
    mem = MemorySystem(l1=CacheGeometry(4, 2), l2=CacheGeometry(16, 4))
    mem.access(0x1000)
    assert mem.access(0x1000 + LINE_SIZE - 1).level is Level.L1


def test_fill_populates_both_levels_and_l1_eviction_leaves_l2():
    geo = CacheGeometry(1, 2)  # single set, easy to overflow
    mem = MemorySystem(l1=geo, l2=CacheGeometry(1, 8))
    mem.access(0)
    assert mem.probe_level(0) is Level.L1
    mem.access(1 * LINE_SIZE)
    mem.access(2 * LINE_SIZE)  # kicks line 0 out of the 2-way L1
    assert mem.probe_level(0) is Level.L2


def test_probe_level_does_not_perturb_lru():
    mem = MemorySystem(l1=CacheGeometry(1, 2), l2=CacheGeometry(1, 8))
    mem.access(0)
    mem.access(LINE_SIZE)
    for _ in range(5):
        mem.probe_level(0)  # must not refresh line 0
    mem.access(2 * LINE_SIZE)
    assert mem.probe_level(0) is Level.L2  # 0 was LRU despite the probes


def test_cache_level_install_reports_eviction():
    level = CacheLevel(CacheGeometry(1, 2))
    assert level.install(0) is None
    assert level.install(1) is None
    assert level.install(2) == 0
    assert level.install(1) is None  # already present, refreshed


def test_geometry_must_be_power_of_two():
    with pytest.raises(ValueError, match="power of two"):
        CacheGeometry(3, 2)
    with pytest.raises(ValueError, match="power of two"):
        CacheGeometry(4, 0)


def test_latency_ordering_enforced():
    with pytest.raises(ValueError, match="l1 < l2 < dram"):
        Latencies(l1_hit=10, l2_hit=5, dram=200, page_fault=1000)


def test_access_latencies_follow_serving_level():
    mem = MemorySystem(l1=CacheGeometry(4, 2), l2=CacheGeometry(16, 4))
    first = mem.access(0x40)
    again = mem.access(0x40)
    assert (first.level, first.latency) == (Level.DRAM, mem.lat.dram)
    assert (again.level, again.latency) == (Level.L1, mem.lat.l1_hit)
    assert mem.counter.current == mem.lat.dram + mem.lat.l1_hit


def test_write_stores_value_and_read_returns_it():
    mem = MemorySystem(l1=CacheGeometry(4, 2), l2=CacheGeometry(16, 4))
    mem.write(0x80, 42)
    assert mem.access(0x80).value == 42
    assert mem.access(0x88).value == 0  # neighbouring cell unset


class TestFaults:
    def test_unmapped_page_faults(self):
        mem = MemorySystem(l1=CacheGeometry(4, 2), l2=CacheGeometry(16, 4))
        mem.pages.set_mapped(0x5000, False)
        with pytest.raises(PageFault) as exc:
            mem.access(0x5008)
        assert exc.value.addr == 0x5008
        mem.access(0x6000)  # next page unaffected

    def test_privileged_page_blocks_user(self):
        mem = MemorySystem(l1=CacheGeometry(4, 2), l2=CacheGeometry(16, 4))
        mem.pages.set_privileged(0x7000, True)
        with pytest.raises(PrivilegeFault):
            mem.access(0x7000, Privilege.USER)
        mem.access(0x7000, Privilege.KERNEL)

    def test_flush_privilege_gate(self):
        mem = MemorySystem(l1=CacheGeometry(4, 2), l2=CacheGeometry(16, 4))
        mem.access(0x40)
        with pytest.raises(PrivilegedFlushError):
            mem.flush_line(0x40, Privilege.USER, flush_is_privileged=True)
        assert mem.probe_level(0x40) is Level.L1  # rejected flush left it alone
        mem.flush_line(0x40, Privilege.USER, flush_is_privileged=False)
        assert mem.probe_level(0x40) is Level.DRAM

    def test_flush_is_idempotent(self):
        mem = MemorySystem(l1=CacheGeometry(4, 2), l2=CacheGeometry(16, 4))
        mem.flush_line(0x40)
        mem.flush_line(0x40)
        assert mem.probe_level(0x40) is Level.DRAM


class TestCycleCounter:
    def test_quantization_floors_to_resolution(self):
        counter = CycleCounter(current=103, resolution=10)
        assert counter.read() == 100

    def test_noise_bounded_and_seeded(self):
        counter = CycleCounter(current=500, noise_amplitude=7)
        values = [counter.read(random.Random(k)) for k in range(50)]
        assert all(493 <= v <= 507 for v in values)
        assert len(set(values)) > 1
        assert values == [counter.read(random.Random(k)) for k in range(50)]

    def test_noiseless_read_is_exact(self):
        counter = CycleCounter()
        counter.advance(37)
        assert counter.read(random.Random(0)) == 37


class TestEviction:
    @pytest.mark.parametrize("name", ["cortex_a53", "cortex_a9", "cortex_a72"])
    def test_pattern_evicts_exactly_like_sweep(self, name):
        prof = get_profile(name)
        assert prof.eviction_params is not None
        target = 0x5000

        patterned = MemorySystem(l1=prof.l1, l2=prof.l2)
        patterned.access(target)
        assert patterned.probe_level(target) is Level.L1
        evict_with_pattern(
            patterned, 0x10_0000, 8 << 20, prof.eviction_params, target
        )

        swept = MemorySystem(l1=prof.l1, l2=prof.l2)
        swept.access(target)
        sweep_evict(swept, 3 * prof.l2.capacity_bytes)

        assert swept.probe_level(target) is Level.DRAM
        assert patterned.probe_level(target) is swept.probe_level(target)

    def test_sweep_only_profiles_have_no_pattern(self):
        assert get_profile("cortex_a8").eviction_params is None
        assert get_profile("intel_i7").eviction_params is None

    def test_too_few_congruent_accesses_do_not_evict(self):
        prof = get_profile("cortex_a72")
        mem = MemorySystem(l1=prof.l1, l2=prof.l2)
        target = 0x5000
        mem.access(target)
        weak = EvictionParams(loops=1, shift=1, accesses=prof.l2.ways - 1)
        evict_with_pattern(mem, 0x10_0000, 8 << 20, weak, target)
        assert mem.probe_level(target) is not Level.DRAM

    def test_pattern_touches_only_congruent_lines(self):
        prof = get_profile("cortex_a9")
        mem = MemorySystem(l1=prof.l1, l2=prof.l2)
        target = 0x5000
        span = max(mem.l1.geometry.span_bytes, mem.l2.geometry.span_bytes)
        trace = evict_with_pattern(
            mem, 0x10_0000, 8 << 20, prof.eviction_params, target
        )
        assert trace, "pattern produced no accesses"
        assert all(acc.address % span == target % span for acc in trace)

    def test_region_too_small_raises(self):
        prof = get_profile("cortex_a72")
        mem = MemorySystem(l1=prof.l1, l2=prof.l2)
        with pytest.raises(EvictionRegionError):
            evict_with_pattern(mem, 0x10_0000, 4096, prof.eviction_params, 0x5000)

    def test_sweep_requires_three_l2_capacities(self):
        mem = MemorySystem(l1=CacheGeometry(4, 2), l2=CacheGeometry(16, 4))
        with pytest.raises(ValueError, match="3x L2 capacity"):
            sweep_evict(mem, 2 * mem.l2.geometry.capacity_bytes)

    def test_trace_csv_headed_and_row_per_access(self):
        prof = get_profile("cortex_a9")
        mem = MemorySystem(l1=prof.l1, l2=prof.l2)
        trace = evict_with_pattern(
            mem, 0x10_0000, 8 << 20, EvictionParams(2, 1, 3), 0x5000
        )
        lines = eviction_trace_to_csv(trace).splitlines()
        assert lines[0] == "iteration,access_index,address,level"
        assert len(lines) == 1 + 2 * 3


def test_every_profile_geometry_is_valid():
    for prof in PROFILES.values():
        assert prof.l1.capacity_bytes >= 4 * LINE_SIZE
        assert prof.l2.capacity_bytes > prof.l1.capacity_bytes
