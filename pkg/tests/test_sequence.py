import math

import pytest

from nvdd import (
    GatePlan,
    PulseElement,
    PulseSequence,
    correlation_sequence,
    from_text,
    quantize_timing,
    quantum_interpolate,
    ramsey_wrap,
    to_text,
    transfer_circuit,
    xy8_block,
    z_half_duration,
)
from nvdd.sequence import DELAY, MX, MY, PULSE, XY8_PHASES, X, Y, delay, pulse

T_PI = 35e-9


def _plan(theta=math.pi / 2, n_p=200, tau=10.5e-9 * 8):
    return GatePlan(n_p, tau, theta, n_p * (2 * tau + T_PI), 0.0, T_PI, 0.28, 5e-3, 6e4, "-")


def test_xy8_duration():
    s = xy8_block(8, 100e-9, T_PI)
    assert s.duration == pytest.approx(1.88e-6, rel=1e-12)


def test_xy8_phases():
    s = xy8_block(8, 100e-9, T_PI)
    assert [p.phase for p in s.pulses] == [0, math.pi / 2, 0, math.pi / 2, math.pi / 2, 0, math.pi / 2, 0]


def test_xy8_phase_windows():
    s = xy8_block(40, 80e-9, T_PI)
    ph = [p.phase for p in s.pulses]
    for k in range(0, 40, 8):
        assert tuple(ph[k:k + 8]) == XY8_PHASES


def test_xy8_structure_centred():
    s = xy8_block(16, 80e-9, T_PI)
    d = [e.duration for e in s.elements if e.kind == DELAY]
    assert d[0] == pytest.approx(80e-9) and d[-1] == pytest.approx(80e-9)
    assert all(x == pytest.approx(160e-9) for x in d[1:-1])
    assert all(p.area == pytest.approx(0.5) for p in s.pulses)


def test_xy8_empty():
    s = xy8_block(0, 80e-9, T_PI)
    assert len(s) == 0 and s.duration == 0


@pytest.mark.parametrize("n", [4, 12, -8])
def test_xy8_rejects_bad_count(n):
    with pytest.raises(ValueError):
        xy8_block(n, 80e-9, T_PI)


def test_xy8_per_unit_tau():
    s = xy8_block(16, [80e-9, 80.5e-9], T_PI)
    assert s.duration == pytest.approx(8 * (160e-9 + T_PI) + 8 * (161e-9 + T_PI), rel=1e-12)
    with pytest.raises(ValueError):
        xy8_block(16, [80e-9], T_PI)


def test_xy8_uncentred_same_duration():
    a = xy8_block(16, 80e-9, T_PI)
    b = xy8_block(16, 80e-9, T_PI, initial_half=False)
    assert a.duration == pytest.approx(b.duration, rel=1e-12)


def test_duration_additivity():
    s = ramsey_wrap(xy8_block(24, 77.3e-9, T_PI))
    assert s.duration == math.fsum(e.duration for e in s.elements)


def test_ramsey_wrap_empty_is_pi():
    s = ramsey_wrap(PulseSequence(metadata={"t_pi": T_PI}), X, X)
    assert len(s) == 2 and sum(p.area for p in s.pulses) == pytest.approx(0.5)


def test_ramsey_wrap_pairs():
    core = xy8_block(8, 80e-9, T_PI)
    s0, s1 = ramsey_wrap(core, X, X), ramsey_wrap(core, X, MX)
    assert s0.elements[1:-1] == core.elements == s1.elements[1:-1]
    assert s0.elements[-1].phase == 0 and s1.elements[-1].phase == math.pi
    ent = ramsey_wrap(core, X, Y)
    assert ent.elements[-1].phase == pytest.approx(math.pi / 2)


def test_ramsey_wrap_rejects_phase():
    with pytest.raises(ValueError):
        ramsey_wrap(xy8_block(8, 80e-9, T_PI), 0.3)


def test_correlation_sequence():
    block = xy8_block(40, 80e-9, T_PI).duration
    s = correlation_sequence(40, 80e-9, 0.0)
    assert s.duration == pytest.approx(2 * block + 4 * T_PI / 2, rel=1e-12)
    assert len(s.pulses) == 84
    s = correlation_sequence(40, 80e-9, 1e-6)
    assert s.duration == pytest.approx(2 * block + 2 * T_PI + 1e-6, rel=1e-12)
    with pytest.raises(ValueError):
        correlation_sequence(40, 80e-9, -1e-9)


def test_correlation_sweep_count():
    n = round(4e-6 / 20e-9) + 1
    seqs = [correlation_sequence(40, 80e-9, k * 20e-9) for k in range(n)]
    assert len(seqs) == 201


def test_quantize():
    s = PulseSequence((delay(100.26e-9),))
    q = quantize_timing(s)
    assert q.elements[0].duration == pytest.approx(100.5e-9, abs=1e-18)
    assert q.metadata["max_rounding_error"] == pytest.approx(0.24e-9, rel=1e-6)
    assert quantize_timing(q).elements == q.elements


def test_quantize_on_grid_unchanged():
    s = xy8_block(8, 80e-9, 35e-9)
    assert quantize_timing(s).elements == s.elements


def test_quantize_angle_shift_bound():
    g, n_p, grid = 6e4, 80, 0.5e-9
    tau = 82.137e-9
    exact = 2 * math.pi * g * 2 * tau * n_p
    # first delay is tau itself
    q = quantize_timing(xy8_block(n_p, tau, T_PI), grid)
    tq = q.elements[0].duration
    shifted = 2 * math.pi * g * 2 * tq * n_p
    assert abs(shifted - exact) <= 2 * math.pi * g * n_p * grid


def test_interpolate_on_grid():
    assert quantum_interpolate(80e-9, 0.5e-9, 5) == [80e-9] * 5


def test_interpolate_half():
    t = quantum_interpolate(0.5e-9 * 160.5, 0.5e-9, 2)
    assert sorted(t) == pytest.approx([80e-9, 80.5e-9])


def test_interpolate_bresenham():
    t = quantum_interpolate(0.5e-9 * 160.3, 0.5e-9, 10)
    hi = [x > 80.2e-9 for x in t]
    assert sum(hi) == 3
    idx = [k for k, h in enumerate(hi) if h]
    assert min(b - a for a, b in zip(idx, idx[1:])) >= 3  # maximally interleaved


def test_interpolate_rejects():
    with pytest.raises(ValueError):
        quantum_interpolate(80e-9, 0.0, 4)
    with pytest.raises(ValueError):
        quantum_interpolate(80e-9, 0.5e-9, 0)


def test_transfer_structure():
    plan = _plan()
    s = transfer_circuit(plan, 100e-9)
    half = [p for p in s.pulses if p.area == pytest.approx(0.25)]
    assert len(half) == 3
    assert [p.phase for p in half] == [Y, X, MY]
    # two CR blocks plus two echo pulses in the Z segment
    assert len([p for p in s.pulses if p.area == pytest.approx(0.5)]) == 2 * plan.n_p + 2
    assert s.metadata["t_cr"] == pytest.approx(plan.n_p * (2 * plan.tau + T_PI) - T_PI / 2)


def test_transfer_duration():
    plan = _plan()
    s = transfer_circuit(plan, 100e-9)
    expected = 2 * (plan.n_p * (2 * plan.tau + T_PI) - T_PI / 2) + 100e-9 + 3 * T_PI / 2
    assert s.duration == pytest.approx(expected, rel=1e-12)


def test_transfer_variants():
    plan = _plan()
    a = transfer_circuit(plan, 100e-9)
    b = transfer_circuit(plan, 100e-9, variant="four_pulse")
    assert b.duration - a.duration == pytest.approx(T_PI / 2)
    d = transfer_circuit(plan, 0.0, z_mode="delay")
    assert all(e.duration > 0 for e in d.elements)
    with pytest.raises(ValueError):
        transfer_circuit(plan, 50e-9)  # echo needs two pi pulses
    with pytest.raises(ValueError):
        transfer_circuit(plan, 100e-9, variant="five")


def test_transfer_rejects_theta():
    with pytest.raises(ValueError):
        transfer_circuit(_plan(theta=0.0), 100e-9)


def test_z_half_duration_rule():
    plan = _plan()
    nu = 2.98e6
    z = z_half_duration(plan, nu)
    t_cr = plan.n_p * (2 * plan.tau + T_PI) - T_PI / 2
    turns = nu * (t_cr + T_PI / 2 + z)
    frac = turns % 1
    assert z >= 2 * T_PI - 0.02 / nu
    assert abs(frac - 0.25) < 0.021 or z == 2 * T_PI


def test_z_half_duration_errors():
    with pytest.raises(ValueError):
        z_half_duration(_plan(), 0.0)


def test_text_round_trip():
    s = ramsey_wrap(xy8_block(16, 82.5e-9, T_PI), X, MY)
    back = from_text(to_text(s))
    assert len(back) == len(s)
    for a, b in zip(s.elements, back.elements):
        assert a.kind == b.kind
        assert a.duration == pytest.approx(b.duration, abs=1e-15)
        assert a.phase == pytest.approx(b.phase, abs=1e-9)
        assert a.rabi_rate == pytest.approx(b.rabi_rate, abs=1e-6)


def test_text_rejects_bad_line():
    with pytest.raises(ValueError):
        from_text("pulse 1 2\n")


def test_element_validation():
    with pytest.raises(ValueError):
        PulseElement("wait", 1e-9)
    with pytest.raises(ValueError):
        PulseElement(DELAY, -1e-9)
    with pytest.raises(ValueError):
        PulseElement(PULSE, 1e-9, 0.0, 0.0)
    assert pulse(1e-9, -math.pi / 2, 1e6).phase == pytest.approx(MY)
