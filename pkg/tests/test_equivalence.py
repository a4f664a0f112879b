"""Out-of-order engine vs the in-order reference interpreter.

Speculation, replay, and caching may reorder work however they like, but the
final architectural state has to come out as if the program ran one
instruction at a time.
"""

import random

import pytest

from _reference import (
    RefState,
    final_state_matches,
    generate_program,
    run_engine,
    run_reference,
)
from transient_sim.mitigations import MitigationSet
from transient_sim.profiles import get_profile


def test_thousand_random_programs_match_reference():
    prof = get_profile("intel_i7")
    for seed in range(1000):
        gen = generate_program(random.Random(seed))
        ok, detail = final_state_matches(gen, prof)
        assert ok, f"seed {seed}: {detail}\n{gen.text}"


@pytest.mark.parametrize(
    "name", ["cortex_a53", "cortex_a8", "cortex_a9", "cortex_a72"]
)
def test_other_profiles_match_reference(name):
    prof = get_profile(name)
    for seed in range(200):
        gen = generate_program(random.Random(10_000 + seed))
        ok, detail = final_state_matches(gen, prof)
        assert ok, f"seed {10_000 + seed} on {name}: {detail}\n{gen.text}"


def test_mitigations_do_not_change_benign_results():
    # countermeasures may cost cycles but must preserve program meaning
    armored = get_profile("intel_i7").with_overrides(
        mitigations=MitigationSet(
            privileged_flush=True,
            pmu_noise_amplitude=50,
            rsb_flush_on_cs=True,
            btb_fallback_disabled=True,
        )
    )
    for seed in range(200):
        gen = generate_program(random.Random(20_000 + seed))
        ok, detail = final_state_matches(gen, armored)
        assert ok, f"seed {20_000 + seed}: {detail}\n{gen.text}"


def test_engine_runs_are_repeatable():
    gen = generate_program(random.Random(31))
    prof = get_profile("cortex_a72")
    st1, trace1 = run_engine(gen, prof)
    st2, trace2 = run_engine(gen, prof)
    assert st1.regs == st2.regs
    assert st1.mem.cells == st2.mem.cells
    assert trace1.log_lines() == trace2.log_lines()


def test_reference_interpreter_rejects_runaway_programs():
    from transient_sim.isa import assemble

    # a return to address 0 loops forever; the step guard must trip
    prog = assemble("loop:\n    CALL loop\n    HALT\n")
    with pytest.raises(RuntimeError, match="exceeded"):
        run_reference(prog, RefState(regs=[0] * 15 + [0x8000]), max_steps=500)


def test_generated_programs_assemble_and_validate():
    from transient_sim.isa import validate

    for seed in (1, 2, 3):
        gen = generate_program(random.Random(seed))
        report = validate(gen.program)
        assert report.max_call_depth is not None  # generator never recurses
